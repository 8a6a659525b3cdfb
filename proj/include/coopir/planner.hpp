#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "coopir/degrade.hpp"
#include "coopir/grad.hpp"
#include "coopir/kinds.hpp"
#include "coopir/metrics.hpp"
#include "coopir/prng.hpp"
#include "coopir/tools.hpp"

namespace coopir::planner {

inline constexpr std::size_t kNumFeatures = 20;
using FeatureVector = std::array<double, kNumFeatures>;

// Feature layout (index: statistic):
//   0-2 channel means, 3-5 channel stds (grey images repeat channel 0),
//   6-7 Sobel magnitude mean/std of Y, 8 Laplacian MAD,
//   9-12 radial spectrum energy fractions, 13 dark-channel mean,
//   14 2x downsample residual, 15 8-grid blockiness, 16 mean Y,
//   17-18 Y 5th/95th percentiles, 19 horizontal-gradient energy ratio.
FeatureVector featurize(const Image& img);
const std::array<const char*, kNumFeatures>& feature_names();

inline constexpr int kEmbedDim = 16;
inline constexpr int kHiddenDim = 32;

// Param ids: deg_w (8x20), deg_b (8), tool_embed ((V+1)x16), w1 (32x36),
// b1 (32), w2 ((V+1)x32), b2 (V+1). Token V is STOP.
class PolicyParams {
 public:
  PolicyParams() = default;
  // All-zero parameters: uniform plan head, every deg prob 0.5.
  static PolicyParams zeros(std::size_t n_tools);
  static PolicyParams random_init(std::size_t n_tools, std::uint64_t seed);

  std::size_t n_tools() const { return n_tools_; }
  std::size_t stop_token() const { return n_tools_; }
  std::vector<grad::Param>& blocks() { return blocks_; }
  const std::vector<grad::Param>& blocks() const { return blocks_; }
  std::vector<grad::Param*> pointers();
  bool all_finite() const;

 private:
  std::size_t n_tools_ = 0;
  std::vector<grad::Param> blocks_;
};

std::string encode_policy(const PolicyParams& p);
PolicyParams decode_policy(std::string_view bytes);
void save_policy(const PolicyParams& p, const std::filesystem::path& path);
PolicyParams load_policy(const std::filesystem::path& path);

struct PolicyNodes {
  grad::NodeId deg_w, deg_b, embed, w1, b1, w2, b2;
};
PolicyNodes bind_trainable(grad::Tape& tape, PolicyParams& p);
PolicyNodes bind_constant(grad::Tape& tape, const PolicyParams& p);

grad::NodeId deg_logits(grad::Tape& tape, const PolicyNodes& pn, grad::NodeId features);
// Log-probabilities of the next token given the tool prefix.
grad::NodeId next_token_logp(grad::Tape& tape, const PolicyNodes& pn, grad::NodeId features,
                             const std::vector<int>& prefix);
// Two-class log-probabilities [log(1-p), log p] of degradation j.
grad::NodeId deg_decision_logp(grad::Tape& tape, grad::NodeId logits, std::size_t j);

struct Forward {
  std::vector<double> next_probs;  // V+1 entries
  std::array<double, kNumKinds> deg_probs{};
};
// Untaped evaluation of one state; throws ParamError when prefix is too long.
Forward policy_forward(const PolicyParams& p, const FeatureVector& f, const std::vector<int>& prefix, int l_max);

struct PlanSample {
  std::vector<int> tokens;  // tool ids, then STOP unless L_max was reached
  // Eight degradation decisions first, then one entry per scored plan token.
  std::vector<double> step_logprobs;
  std::array<double, kNumKinds> deg_probs{};
  KindSet deg_pred;
  double total_logprob = 0.0;

  std::vector<int> plan_tokens(std::size_t stop_token) const;
};

PlanSample sample_plan(const PolicyParams& p, const FeatureVector& f, int l_max, Prng& rng);
// Argmax decode; deg_pred thresholds deg_probs at 0.5.
PlanSample greedy_plan(const PolicyParams& p, const FeatureVector& f, int l_max);

struct RewardWeights {
  double psnr = 0.30, ssim = 0.25, gsim = 0.15, nr_sharp = 0.15, nr_balance = 0.15;
  double psnr_cap = 50.0;
};

struct RewardBreakdown {
  double rq = 0.0;
  double rd = 0.0;
  double rf = 0.0;
  double rc = 1.0;
  double total = 0.0;
  MetricVector metrics;
};

double quality_reward(const MetricVector& m, const RewardWeights& w = {});
RewardBreakdown compute_reward(const tools::ToolRegistry& registry, const Image& lq, const Image& gt, KindSet gt_set,
                               const PlanSample& sample, int l_max, const RewardWeights& w = {});

inline constexpr double kStdFloor = 1e-8;
std::vector<double> grpo_advantages(const std::vector<double>& rewards, double std_floor = kStdFloor);

struct GrpoConfig {
  int group_size = 8;
  int batch = 32;
  double clip_eps = 0.2;
  double kl_beta = 0.01;
  double lr = 1e-3;
  int iterations = 200;
  int l_max = 6;
  double std_floor = kStdFloor;
  int ref_refresh = 1;  // iterations between reference-policy snapshots
};
void validate(const GrpoConfig& c);

struct Rollout {
  FeatureVector features{};
  PlanSample sample;
  RewardBreakdown reward;
};
using Group = std::vector<Rollout>;

struct UpdateDiagnostics {
  double mean_reward = 0.0;
  double mean_rq = 0.0;
  double mean_rd = 0.0;
  double rf_rate = 0.0;
  double mean_abs_advantage = 0.0;
  double kl = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
};

// One ascent step on mean clipped surrogate minus kl_beta times the mean
// per-state KL to `ref`. Throws NumericError on a non-finite gradient.
UpdateDiagnostics grpo_update(PolicyParams& params, PolicyParams& ref, const std::vector<Group>& groups,
                              const GrpoConfig& config, grad::Adam& optimizer);

struct PlannerTask {
  std::string registry = "study";
  std::vector<KindSet> combos;  // empty: use preset
  std::string preset = "empirical8";
  std::vector<degrade::CleanKind> clean_kinds = {degrade::CleanKind::value_noise_texture,
                                                  degrade::CleanKind::shapes, degrade::CleanKind::gradient};
  int image_size = 64;
  degrade::DegradationRanges ranges;
};

struct Prompt {
  Image clean;
  Image lq;
  KindSet gt_set;
};
Prompt make_prompt(const PlannerTask& task, const std::vector<KindSet>& combos, std::uint64_t seed);
std::vector<KindSet> task_combos(const PlannerTask& task);

struct PlannerConfig {
  GrpoConfig grpo;
  PlannerTask task;
  std::uint64_t seed = 7;
  int workers = 1;
  int baseline_rollouts = 1000;
  RewardWeights weights;
};

struct PlannerLogRow {
  int iter = 0;
  UpdateDiagnostics diag;
};

struct BaselineStats {
  double mean_reward = 0.0;
  double mean_rq = 0.0;
  double mean_rd = 0.0;
  double rf_rate = 0.0;
  int rollouts = 0;
};

// Mean reward of sampled rollouts of `policy` on fresh prompts.
BaselineStats evaluate_sampled(const PolicyParams& policy, const PlannerConfig& config, int rollouts,
                               std::uint64_t seed);

struct PlannerResult {
  PolicyParams policy;
  std::vector<PlannerLogRow> log;
  BaselineStats random_baseline;
};

using IterationCallback = std::function<void(const PlannerLogRow&)>;
PlannerResult train_planner(const PlannerConfig& config, const IterationCallback& on_iter = {});

std::string planner_log_csv(const std::vector<PlannerLogRow>& rows);

}  // namespace coopir::planner
