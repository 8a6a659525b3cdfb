#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "coopir/grad.hpp"
#include "coopir/plansearch.hpp"
#include "coopir/planner.hpp"
#include "coopir/tools.hpp"

namespace coopir::cotrain {

struct LossWeights {
  double l1 = 0.0;
  double perceptual = 0.0;
  double lpips = 0.0;
  double sharp = 0.0;
  double balance = 0.0;

  static constexpr int kCount = 5;
  std::array<double, kCount> as_array() const { return {l1, perceptual, lpips, sharp, balance}; }
};

inline constexpr LossWeights kTargetWeights{0.4, 0.1, 0.15, 0.1, 0.1};

struct Schedule {
  int total_epochs = 23;
  double transition_fraction = 0.3;
  LossWeights targets = kTargetWeights;

  // floor(transition_fraction * E), at least 1.
  int transition() const;
};

// Epochs are 1-based. Throws ParamError outside [1, E].
double annealing_factor(const Schedule& s, int epoch);
LossWeights schedule_weights(const Schedule& s, int epoch);

// Unweighted term values: L1, perceptual, lpips, 1 - sharp, 1 - balance.
using LossTerms = std::array<double, LossWeights::kCount>;

struct CompositeLoss {
  grad::NodeId loss;
  std::array<grad::NodeId, LossWeights::kCount> terms;
};

// Differentiable gradient similarity between the Y channels of pred and gt.
grad::NodeId gsim_node(grad::Tape& t, grad::NodeId pred_y, grad::NodeId gt_y);
// Taped counterparts of the no-reference metrics on a Y channel.
grad::NodeId nr_sharp_node(grad::Tape& t, grad::NodeId y);
grad::NodeId nr_balance_node(grad::Tape& t, grad::NodeId y);

CompositeLoss composite_loss(grad::Tape& t, grad::NodeId pred, const Image& gt, const LossWeights& w);

struct ChainTrace {
  search::Plan plan;
  std::vector<grad::NodeId> intermediates;  // x0 = input, x_k = tool_k(x_{k-1})
  grad::NodeId output;
};

ChainTrace build_chain(grad::Tape& t, tools::ToolRegistry& registry, const search::Plan& plan, const Image& lq);

struct TrainSample {
  Image lq;
  Image gt;
  search::Plan plan;
};

// Greedy plans of a frozen policy for each input.
std::vector<search::Plan> plans_from_policy(const planner::PolicyParams& policy, const std::vector<Image>& inputs,
                                            int l_max);

struct CotrainConfig {
  Schedule schedule;
  int batch = 2;
  double lr = 1e-6;
  double clip_norm = 0.5;
  double max_skip_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  LossWeights weights;
  double mean_loss = 0.0;         // under that epoch's weights
  double mean_target_loss = 0.0;  // same samples under the target weights
  LossTerms mean_terms{};
  int skipped = 0;
  double mean_grad_norm = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&, const tools::ToolRegistry&)>;

// Trains the registry in place. Samples whose loss is non-finite are skipped;
// NumericError when more than max_skip_fraction of an epoch is skipped.
std::vector<EpochLog> train_tools(tools::ToolRegistry& registry, const std::vector<TrainSample>& data,
                                  const CotrainConfig& config, const EpochCallback& on_epoch = {});

// Evaluates (terms, loss) for one sample without updating anything.
std::pair<double, LossTerms> evaluate_sample(const tools::ToolRegistry& registry, const TrainSample& s,
                                             const LossWeights& w);

std::string cotrain_log_csv(const std::vector<EpochLog>& rows);

struct MisuseRow {
  std::string tool;
  double psnr_before = 0.0;
  double ssim_before = 0.0;
  double psnr_after = 0.0;
  double ssim_after = 0.0;
};

// Per tool, mean psnr/ssim of tool(clean) against clean for two snapshots.
std::vector<MisuseRow> misuse_eval(const tools::ToolRegistry& before, const tools::ToolRegistry& after,
                                   const std::vector<Image>& clean);
std::string misuse_csv(const std::vector<MisuseRow>& rows);

}  // namespace coopir::cotrain
