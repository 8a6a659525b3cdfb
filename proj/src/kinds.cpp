#include "coopir/kinds.hpp"

#include <bit>

namespace coopir {

namespace {

constexpr std::array<std::string_view, kNumKinds> kNames = {
    "noise", "rain", "haze", "defocus_blur", "motion_blur", "low_resolution", "jpeg", "low_light",
};

}  // namespace

std::string_view kind_name(DegradationKind kind) { return kNames[static_cast<std::size_t>(kind)]; }

std::optional<DegradationKind> kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<DegradationKind>(i);
  }
  return std::nullopt;
}

int KindSet::size() const { return std::popcount(bits_); }

std::vector<DegradationKind> KindSet::kinds() const {
  std::vector<DegradationKind> out;
  for (auto k : kAllKinds) {
    if (contains(k)) out.push_back(k);
  }
  return out;
}

std::string KindSet::label() const {
  std::string out;
  for (auto k : kinds()) {
    if (!out.empty()) out += '+';
    out += kind_name(k);
  }
  return out;
}

double f1_score(KindSet predicted, KindSet truth) {
  if (predicted.empty() && truth.empty()) return 1.0;
  if (predicted.empty() || truth.empty()) return 0.0;
  const int tp = KindSet::from_bits(predicted.bits() & truth.bits()).size();
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / predicted.size();
  const double recall = static_cast<double>(tp) / truth.size();
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace coopir
