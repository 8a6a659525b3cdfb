#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coopir/cotrain.hpp"
#include "coopir/plansearch.hpp"
#include "coopir/planner.hpp"
#include "coopir/serialize.hpp"

namespace coopir::harness {

// Every config key with its default value. The document is also the schema:
// user configs may only contain keys that appear here.
Json default_config();

// Overlays `user` onto the defaults. Unknown keys and type mismatches throw
// ConfigError naming the key and listing the valid keys at that level.
Json merge_config(const Json& user);

// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(Json& config, const std::string& assignment);

Json load_config_file(const std::filesystem::path& path);

// Resolves a config and its overrides into the effective config.
Json effective_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

// Typed views of the effective config.
search::StudyConfig study_config(const Json& cfg);
planner::PlannerConfig planner_config(const Json& cfg);
cotrain::CotrainConfig cotrain_config(const Json& cfg);
degrade::DegradationRanges ranges_config(const Json& cfg);

// "rain+noise" -> {noise, rain}; ConfigError on unknown kinds.
KindSet parse_combo(const std::string& label);

struct RunDir {
  std::filesystem::path root;

  std::filesystem::path file(const std::string& name) const { return root / name; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path images() const { return root / "images"; }
};

// Creates the directory, writes config.json and a meta.json with the start time.
RunDir open_run(const std::filesystem::path& root, const Json& cfg, const std::string& command);
// Records completion time and status in meta.json.
void close_run(const RunDir& run, const std::string& command, const std::string& status);

void run_synth(const RunDir& run, const Json& cfg);
void run_study(const RunDir& run, const Json& cfg);
void run_train_planner(const RunDir& run, const Json& cfg);
void run_cotrain(const RunDir& run, const Json& cfg);
void run_eval(const RunDir& run, const Json& cfg);
void run_report(const RunDir& run, const Json& cfg);

struct BehaviorInput {
  Image lq;
  KindSet gt_set;
};

struct BehaviorStats {
  std::optional<double> denoise_first;         // noise inputs whose plan starts with a denoiser
  std::optional<double> derain_before_dehaze;  // rain+haze inputs with a derain tool before any dehaze tool
  std::vector<std::pair<std::string, std::optional<double>>> repetition;  // per tool, among plans using it
  std::array<std::optional<double>, 3> mean_length{};                     // by degradation count 1..3
};

using PlanFn = std::function<search::Plan(const Image&)>;

BehaviorStats behavior_stats(const PlanFn& plan_for, const tools::ToolRegistry& registry,
                             const std::vector<BehaviorInput>& data);
Json behavior_to_json(const BehaviorStats& stats);

}  // namespace coopir::harness
