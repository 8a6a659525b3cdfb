#include "coopir/tools.hpp"

#include <cmath>
#include <set>

#include "coopir/error.hpp"
#include "coopir/io.hpp"

namespace coopir::tools {

namespace {

using grad::NodeId;
using grad::Param;
using grad::Shape;
using grad::Tape;

constexpr std::string_view kParamMagic = "OPPAR1";
constexpr double kBlendInit = 2.0;

std::vector<double> gaussian_kernel(int rows, int cols, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(rows) * cols);
  double total = 0.0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double dy = i - rows / 2, dx = j - cols / 2;
      k[i * cols + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += k[i * cols + j];
    }
  for (double& v : k) v /= total;
  return k;
}

Param scalar_param(const std::string& tool, const char* name, double v) {
  return Param(tool + "." + name, Shape{}, {v});
}

Param kernel_param(const std::string& tool, int rows, int cols, std::vector<double> w) {
  return Param(tool + ".kernel", Shape{rows, cols, 1}, std::move(w));
}

// Kernel divided by its sum. Tools whose target degradation preserves mean
// brightness use it so co-training cannot shift gain into them.
NodeId unit_gain(Tape& t, NodeId kernel) {
  const double n = static_cast<double>(t.value(kernel).size());
  return grad::div(t, kernel, grad::scale(t, grad::mean(t, kernel), n));
}

// filter -> blend with input -> clamp. params: kernel, alpha.
NodeId build_filter_blend(Tape& t, NodeId x, std::span<const NodeId> p) {
  const NodeId filtered = grad::conv2d_same(t, x, unit_gain(t, p[0]));
  return grad::clamp01(t, grad::blend(t, x, filtered, p[1]));
}

// As build_filter_blend with the raw kernel: rain adds light, so the derain
// filter may learn a gain below one.
NodeId build_raw_filter_blend(Tape& t, NodeId x, std::span<const NodeId> p) {
  const NodeId filtered = grad::conv2d_same(t, x, p[0]);
  return grad::clamp01(t, grad::blend(t, x, filtered, p[1]));
}

// Inverse scattering J = (I - A(1 - t)) / t with t = sigmoid(logit). params: airlight, t_logit.
NodeId build_dehaze(Tape& t, NodeId x, std::span<const NodeId> p) {
  const NodeId trans = grad::sigmoid(t, p[1]);
  const NodeId one = t.constant(1.0);
  const NodeId gain = grad::div(t, one, trans);
  const NodeId residual = grad::mul(t, p[0], grad::sub(t, one, trans));
  const NodeId offset = grad::scale(t, grad::div(t, residual, trans), -1.0);
  return grad::clamp01(t, grad::affine(t, x, gain, offset));
}

// Unsharp mask x + a (x - k*x), blended and clamped. params: kernel, amount, alpha.
NodeId build_unsharp(Tape& t, NodeId x, std::span<const NodeId> p) {
  const NodeId detail = grad::sub(t, x, grad::conv2d_same(t, x, unit_gain(t, p[0])));
  const NodeId sharpened = grad::add(t, x, grad::mul(t, p[1], detail));
  return grad::clamp01(t, grad::blend(t, x, sharpened, p[2]));
}

// gain * (x + eps)^gamma with gamma = 1 / (1 + softplus(u)) in (0, 1). params: gamma_raw, gain, alpha.
NodeId build_lowlight(Tape& t, NodeId x, std::span<const NodeId> p) {
  const NodeId one = t.constant(1.0);
  const NodeId gamma = grad::div(t, one, grad::add(t, one, grad::softplus(t, p[0])));
  const NodeId lifted = grad::mul(t, p[1], grad::power_eps(t, x, gamma));
  return grad::clamp01(t, grad::blend(t, x, lifted, p[2]));
}

ToolSpec denoiser(const std::string& name, double sigma) {
  return ToolSpec{name,
                  DegradationKind::noise,
                  {kernel_param(name, 5, 5, gaussian_kernel(5, 5, sigma)), scalar_param(name, "alpha", kBlendInit)},
                  build_filter_blend};
}

ToolSpec derain() {
  const std::string name = "derain";
  // Horizontal 1x9 low-pass: suppresses near-vertical streaks.
  return ToolSpec{name,
                  DegradationKind::rain,
                  {kernel_param(name, 1, 9, gaussian_kernel(1, 9, 2.0)), scalar_param(name, "alpha", kBlendInit)},
                  build_raw_filter_blend};
}

ToolSpec dehaze() {
  const std::string name = "dehaze";
  const double t0 = 0.7;
  return ToolSpec{name,
                  DegradationKind::haze,
                  {scalar_param(name, "airlight", 0.9), scalar_param(name, "t_logit", std::log(t0 / (1.0 - t0)))},
                  build_dehaze};
}

ToolSpec deblur(const std::string& name, DegradationKind target, int size, double sigma, double amount) {
  return ToolSpec{name,
                  target,
                  {kernel_param(name, size, size, gaussian_kernel(size, size, sigma)),
                   scalar_param(name, "amount", amount), scalar_param(name, "alpha", kBlendInit)},
                  build_unsharp};
}

ToolSpec dejpeg() {
  const std::string name = "dejpeg";
  return ToolSpec{name,
                  DegradationKind::jpeg,
                  {kernel_param(name, 3, 3, gaussian_kernel(3, 3, 0.8)), scalar_param(name, "alpha", kBlendInit)},
                  build_filter_blend};
}

ToolSpec sr_sharpen() {
  const std::string name = "sr_sharpen";
  const double l = 0.2;
  return ToolSpec{name,
                  DegradationKind::low_resolution,
                  {kernel_param(name, 3, 3, {0, -l, 0, -l, 1 + 4 * l, -l, 0, -l, 0}),
                   scalar_param(name, "alpha", kBlendInit)},
                  build_filter_blend};
}

ToolSpec lowlight_correct() {
  const std::string name = "lowlight_correct";
  // softplus(u) = 1 gives gamma = 0.5.
  return ToolSpec{name,
                  DegradationKind::low_light,
                  {scalar_param(name, "gamma_raw", std::log(std::exp(1.0) - 1.0)), scalar_param(name, "gain", 1.2),
                   scalar_param(name, "alpha", kBlendInit)},
                  build_lowlight};
}

}  // namespace

std::size_t ToolSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

ToolRegistry::ToolRegistry(std::vector<ToolSpec> tools) : tools_(std::move(tools)) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < tools_.size(); ++i) {
    const auto& t = tools_[i];
    if (!names.insert(t.name).second) throw ConfigError("duplicate tool name: " + t.name);
    if (t.param_count() > kMaxToolParams) throw ConfigError("tool " + t.name + " exceeds the parameter budget");
    if (t.build == nullptr) throw ConfigError("tool " + t.name + " has no builder");
    by_target_[t.target].push_back(ToolId{i});
  }
}

const ToolSpec& ToolRegistry::at(ToolId id) const {
  if (!valid(id)) throw ParamError("unknown tool id " + std::to_string(id.index));
  return tools_[id.index];
}

ToolSpec& ToolRegistry::at(ToolId id) {
  if (!valid(id)) throw ParamError("unknown tool id " + std::to_string(id.index));
  return tools_[id.index];
}

std::optional<ToolId> ToolRegistry::find(std::string_view name) const {
  for (std::size_t i = 0; i < tools_.size(); ++i) {
    if (tools_[i].name == name) return ToolId{i};
  }
  return std::nullopt;
}

ToolId ToolRegistry::id_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw ParamError("unknown tool name: " + std::string(name));
}

const std::vector<ToolId>& ToolRegistry::by_target(DegradationKind kind) const {
  static const std::vector<ToolId> kEmpty;
  auto it = by_target_.find(kind);
  return it == by_target_.end() ? kEmpty : it->second;
}

std::vector<grad::Param*> ToolRegistry::all_params() {
  std::vector<grad::Param*> out;
  for (auto& t : tools_)
    for (auto& p : t.params) out.push_back(&p);
  return out;
}

ToolRegistry default_registry() {
  return ToolRegistry({
      denoiser("denoise_weak", 0.8),
      denoiser("denoise_mid", 1.2),
      denoiser("denoise_strong", 2.0),
      derain(),
      dehaze(),
      deblur("defocus_deblur", DegradationKind::defocus_blur, 5, 1.5, 0.8),
      deblur("motion_deblur", DegradationKind::motion_blur, 7, 2.0, 0.6),
      dejpeg(),
      sr_sharpen(),
      lowlight_correct(),
  });
}

ToolRegistry study_registry() {
  return ToolRegistry({
      denoiser("denoise_strong", 2.0),
      derain(),
      dehaze(),
      deblur("defocus_deblur", DegradationKind::defocus_blur, 5, 1.5, 0.8),
  });
}

ToolRegistry registry_by_name(std::string_view name) {
  if (name == "default") return default_registry();
  if (name == "study") return study_registry();
  throw ConfigError("unknown registry '" + std::string(name) + "' (valid: default, study)");
}

NodeId apply_tool_bound(Tape& tape, const ToolSpec& tool, NodeId x, std::span<const NodeId> params) {
  if (params.size() != tool.params.size()) throw ShapeError("tool " + tool.name + ": wrong number of bound params");
  return tool.build(tape, x, params);
}

NodeId apply_tool_taped(Tape& tape, ToolSpec& tool, NodeId x) {
  std::vector<NodeId> bound;
  for (auto& p : tool.params) bound.push_back(tape.param(p));
  return apply_tool_bound(tape, tool, x, bound);
}

Image apply_tool(const ToolRegistry& registry, ToolId id, const Image& img) {
  const ToolSpec& tool = registry.at(id);
  Tape tape;
  std::vector<NodeId> bound;
  for (const auto& p : tool.params) bound.push_back(tape.constant(grad::Tensor(p.shape(), p.value)));
  const NodeId out = apply_tool_bound(tape, tool, tape.constant(grad::Tensor::from_image(img)), bound);
  return tape.value(out).to_image();
}

std::string encode_params(const ToolRegistry& registry) {
  NamedArrays arrays;
  for (const auto& t : registry.tools())
    for (const auto& p : t.params) arrays.emplace_back(p.id(), p.value);
  return encode_named_arrays(kParamMagic, arrays);
}

void decode_params(ToolRegistry& registry, std::string_view bytes) {
  const NamedArrays arrays = decode_named_arrays(kParamMagic, bytes);
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, values] : arrays) by_name[name] = &values;

  std::string missing, unknown;
  std::set<std::string> known;
  for (auto& t : registry.tools())
    for (auto& p : t.params) {
      known.insert(p.id());
      if (!by_name.count(p.id())) missing += (missing.empty() ? "" : ", ") + p.id();
    }
  for (const auto& [name, values] : arrays) {
    if (!known.count(name)) unknown += (unknown.empty() ? "" : ", ") + name;
  }
  if (!missing.empty()) throw FormatError("OPPAR1: missing parameters for: " + missing);
  if (!unknown.empty()) throw FormatError("OPPAR1: unknown parameter names: " + unknown);
  for (auto& t : registry.tools())
    for (auto& p : t.params) {
      const auto& values = *by_name.at(p.id());
      if (values.size() != p.size()) {
        throw FormatError("OPPAR1: length mismatch for " + p.id() + ": expected " + std::to_string(p.size()) +
                          ", got " + std::to_string(values.size()));
      }
    }
  for (auto& t : registry.tools())
    for (auto& p : t.params) p.value = *by_name.at(p.id());
}

void save_params(const ToolRegistry& registry, const std::filesystem::path& path) {
  write_file_atomic(path, encode_params(registry));
}

void load_params(ToolRegistry& registry, const std::filesystem::path& path) { decode_params(registry, read_file(path)); }

}  // namespace coopir::tools
