#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace coopir {

enum class DegradationKind : std::uint8_t {
  noise = 0,
  rain,
  haze,
  defocus_blur,
  motion_blur,
  low_resolution,
  jpeg,
  low_light,
};

inline constexpr int kNumKinds = 8;

inline constexpr std::array<DegradationKind, kNumKinds> kAllKinds = {
    DegradationKind::noise,          DegradationKind::rain, DegradationKind::haze,
    DegradationKind::defocus_blur,   DegradationKind::motion_blur,
    DegradationKind::low_resolution, DegradationKind::jpeg, DegradationKind::low_light,
};

std::string_view kind_name(DegradationKind kind);
std::optional<DegradationKind> kind_from_name(std::string_view name);

// Set of degradation kinds as a bitmask over the eight kinds.
class KindSet {
 public:
  constexpr KindSet() = default;
  constexpr KindSet(std::initializer_list<DegradationKind> kinds) {
    for (auto k : kinds) insert(k);
  }
  static constexpr KindSet from_bits(std::uint8_t bits) {
    KindSet s;
    s.bits_ = bits;
    return s;
  }

  constexpr void insert(DegradationKind k) { bits_ |= bit(k); }
  constexpr bool contains(DegradationKind k) const { return (bits_ & bit(k)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  int size() const;
  constexpr std::uint8_t bits() const { return bits_; }
  std::vector<DegradationKind> kinds() const;
  // "rain+haze" style label, kinds in enum order.
  std::string label() const;

  friend constexpr bool operator==(KindSet a, KindSet b) { return a.bits_ == b.bits_; }
  friend constexpr bool operator<(KindSet a, KindSet b) { return a.bits_ < b.bits_; }

 private:
  static constexpr std::uint8_t bit(DegradationKind k) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(k));
  }
  std::uint8_t bits_ = 0;
};

// Standard F1 between a predicted and a true set: 1 when both are empty,
// 0 when exactly one is empty.
double f1_score(KindSet predicted, KindSet truth);

}  // namespace coopir
