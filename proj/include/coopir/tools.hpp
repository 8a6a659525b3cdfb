#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coopir/grad.hpp"
#include "coopir/image.hpp"
#include "coopir/kinds.hpp"

namespace coopir::tools {

struct ToolId {
  std::size_t index = 0;
  friend bool operator==(ToolId, ToolId) = default;
  friend auto operator<=>(ToolId, ToolId) = default;
};

inline constexpr std::size_t kMaxToolParams = 64;

// Builds the tool's forward graph on `tape` from input node `x` and the bound
// parameter nodes (in ToolSpec::params order).
using ToolBuilder = grad::NodeId (*)(grad::Tape& tape, grad::NodeId x, std::span<const grad::NodeId> params);

struct ToolSpec {
  std::string name;
  DegradationKind target;
  std::vector<grad::Param> params;
  ToolBuilder build = nullptr;

  std::size_t param_count() const;
};

class ToolRegistry {
 public:
  ToolRegistry() = default;
  explicit ToolRegistry(std::vector<ToolSpec> tools);

  std::size_t size() const { return tools_.size(); }
  const ToolSpec& at(ToolId id) const;
  ToolSpec& at(ToolId id);
  const std::vector<ToolSpec>& tools() const { return tools_; }
  std::vector<ToolSpec>& tools() { return tools_; }

  std::optional<ToolId> find(std::string_view name) const;
  ToolId id_of(std::string_view name) const;  // throws ParamError
  const std::vector<ToolId>& by_target(DegradationKind kind) const;
  bool valid(ToolId id) const { return id.index < tools_.size(); }

  // Every learnable block across all tools, in registry order.
  std::vector<grad::Param*> all_params();

 private:
  std::vector<ToolSpec> tools_;
  std::map<DegradationKind, std::vector<ToolId>> by_target_;
};

// The ten-tool desk library.
ToolRegistry default_registry();
// Four tools: denoise_strong, derain, dehaze, defocus_deblur.
ToolRegistry study_registry();
ToolRegistry registry_by_name(std::string_view name);

// Binds the tool's params on `tape` and returns the output node.
grad::NodeId apply_tool_taped(grad::Tape& tape, ToolSpec& tool, grad::NodeId x);
// Same as above with already-bound parameter nodes.
grad::NodeId apply_tool_bound(grad::Tape& tape, const ToolSpec& tool, grad::NodeId x,
                              std::span<const grad::NodeId> params);

// Forward-only evaluation; values are identical to the taped path.
Image apply_tool(const ToolRegistry& registry, ToolId id, const Image& img);

// OPPAR1 checkpoint: name-keyed arrays "<tool>.<param>".
std::string encode_params(const ToolRegistry& registry);
void decode_params(ToolRegistry& registry, std::string_view bytes);
void save_params(const ToolRegistry& registry, const std::filesystem::path& path);
void load_params(ToolRegistry& registry, const std::filesystem::path& path);

}  // namespace coopir::tools
