#include "coopir/cotrain.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "coopir/error.hpp"
#include "coopir/metrics.hpp"

namespace coopir::cotrain {

namespace {

using grad::NodeId;
using grad::Tape;
using grad::Tensor;

NodeId kernel3(Tape& t, std::array<double, 9> k) {
  return t.constant(Tensor(grad::Shape{3, 3, 1}, std::vector<double>(k.begin(), k.end())));
}

// sqrt(gx^2 + gy^2 + 1e-8); the offset keeps the root differentiable on flat areas.
NodeId sobel_node(Tape& t, NodeId y) {
  const NodeId kx = kernel3(t, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const NodeId ky = kernel3(t, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
  const NodeId gx = grad::conv2d_same(t, y, kx);
  const NodeId gy = grad::conv2d_same(t, y, ky);
  return grad::sqrt(t, grad::shift(t, grad::add(t, grad::mul(t, gx, gx), grad::mul(t, gy, gy)), 1e-8));
}

}  // namespace

int Schedule::transition() const {
  return std::max(1, static_cast<int>(std::floor(transition_fraction * total_epochs)));
}

double annealing_factor(const Schedule& s, int epoch) {
  if (s.total_epochs < 1) throw ParamError("schedule needs at least one epoch");
  if (epoch < 1 || epoch > s.total_epochs)
    throw ParamError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(s.total_epochs) + "]");
  const int T = s.transition();
  if (epoch >= T) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * epoch / T));
}

LossWeights schedule_weights(const Schedule& s, int epoch) {
  const double g = annealing_factor(s, epoch);
  if (epoch >= s.transition()) return s.targets;
  const LossWeights& tw = s.targets;
  return {1.0 - (1.0 - tw.l1) * g, tw.perceptual * g, tw.lpips * g, tw.sharp * g, tw.balance * g};
}

NodeId gsim_node(Tape& t, NodeId pred_y, NodeId gt_y) {
  const NodeId a = sobel_node(t, pred_y);
  const NodeId b = sobel_node(t, gt_y);
  const NodeId num = grad::shift(t, grad::scale(t, grad::mul(t, a, b), 2.0), kGsimC);
  const NodeId den = grad::shift(t, grad::add(t, grad::mul(t, a, a), grad::mul(t, b, b)), kGsimC);
  return grad::mean(t, grad::div(t, num, den));
}

NodeId nr_sharp_node(Tape& t, NodeId y) {
  const NodeId s = grad::mean(t, sobel_node(t, y));
  return grad::div(t, s, grad::shift(t, s, kSharpHalf));
}

NodeId nr_balance_node(Tape& t, NodeId y) {
  const NodeId nu = grad::abs_mean(t, grad::sub(t, y, grad::median3(t, y)));
  const NodeId centered = grad::sub(t, y, grad::mean(t, y));
  const NodeId sigma = grad::sqrt(t, grad::shift(t, grad::square_mean(t, centered), 1e-12));
  const NodeId noise_gate = grad::div(t, t.constant(1.0), grad::shift(t, grad::scale(t, nu, kBalanceNoiseGain), 1.0));
  return grad::mul(t, noise_gate, grad::div(t, sigma, grad::shift(t, sigma, kBalanceContrastHalf)));
}

CompositeLoss composite_loss(Tape& t, NodeId pred, const Image& gt, const LossWeights& w) {
  const auto& pv = t.value(pred);
  if (pv.shape != grad::Shape{gt.height, gt.width, gt.channels})
    throw ShapeError("composite_loss: prediction and ground truth differ in shape");
  const NodeId g = t.constant(Tensor::from_image(gt));
  const NodeId py = grad::luma(t, pred);
  const NodeId gy = grad::luma(t, g);

  CompositeLoss out;
  out.terms[0] = grad::abs_mean(t, grad::sub(t, pred, g));
  const NodeId g1 = gsim_node(t, py, gy);
  const NodeId g2 = gsim_node(t, grad::avgpool2(t, py), grad::avgpool2(t, gy));
  out.terms[1] = grad::shift(t, grad::scale(t, grad::add(t, g1, g2), -0.5), 1.0);
  out.terms[2] = grad::shift(t, grad::scale(t, g1, -1.0), 1.0);
  out.terms[3] = grad::shift(t, grad::scale(t, nr_sharp_node(t, py), -1.0), 1.0);
  out.terms[4] = grad::shift(t, grad::scale(t, nr_balance_node(t, py), -1.0), 1.0);

  const auto wa = w.as_array();
  std::array<NodeId, LossWeights::kCount> weighted{};
  for (int i = 0; i < LossWeights::kCount; ++i) weighted[i] = grad::scale(t, out.terms[i], wa[i]);
  out.loss = grad::sum(t, weighted);
  return out;
}

ChainTrace build_chain(Tape& t, tools::ToolRegistry& registry, const search::Plan& plan, const Image& lq) {
  ChainTrace tr;
  tr.plan = plan;
  tr.intermediates.push_back(t.constant(Tensor::from_image(lq)));
  for (auto id : plan) {
    if (!registry.valid(id)) throw ParamError("unknown tool id " + std::to_string(id.index));
    tr.intermediates.push_back(tools::apply_tool_taped(t, registry.at(id), tr.intermediates.back()));
  }
  tr.output = tr.intermediates.back();
  return tr;
}

std::vector<search::Plan> plans_from_policy(const planner::PolicyParams& policy, const std::vector<Image>& inputs,
                                            int l_max) {
  std::vector<search::Plan> out;
  for (const auto& img : inputs) {
    const auto s = planner::greedy_plan(policy, planner::featurize(img), l_max);
    search::Plan p;
    for (int tok : s.plan_tokens(policy.stop_token())) p.push_back(tools::ToolId{static_cast<std::size_t>(tok)});
    out.push_back(std::move(p));
  }
  return out;
}

std::pair<double, LossTerms> evaluate_sample(const tools::ToolRegistry& registry, const TrainSample& s,
                                             const LossWeights& w) {
  tools::ToolRegistry copy = registry;
  Tape t;
  const auto tr = build_chain(t, copy, s.plan, s.lq);
  const auto cl = composite_loss(t, tr.output, s.gt, w);
  LossTerms terms{};
  for (int i = 0; i < LossWeights::kCount; ++i) terms[i] = t.value(cl.terms[i]).item();
  return {t.value(cl.loss).item(), terms};
}

std::vector<EpochLog> train_tools(tools::ToolRegistry& registry, const std::vector<TrainSample>& data,
                                  const CotrainConfig& config, const EpochCallback& on_epoch) {
  if (config.batch < 1) throw ConfigError("cotrain.batch must be >= 1");
  if (!(config.lr >= 0.0)) throw ConfigError("cotrain.lr must be >= 0");
  if (!(config.clip_norm > 0.0)) throw ConfigError("cotrain.clip_norm must be > 0");
  if (data.empty()) throw ConfigError("co-training needs at least one sample");
  for (const auto& s : data)
    for (auto id : s.plan)
      if (!registry.valid(id)) throw ParamError("training plan references unknown tool id");

  grad::Adam opt(grad::AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  const auto all = registry.all_params();
  std::vector<EpochLog> logs;
  const auto targets = config.schedule.targets.as_array();

  for (int epoch = 1; epoch <= config.schedule.total_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.weights = schedule_weights(config.schedule, epoch);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Prng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    int used = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      for (auto* p : all) p->zero_grad();
      std::set<std::size_t> active_tools;
      int in_batch = 0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainSample& s = data[order[k]];
        Tape t;
        const auto tr = build_chain(t, registry, s.plan, s.lq);
        const auto cl = composite_loss(t, tr.output, s.gt, log.weights);
        const double loss = t.value(cl.loss).item();
        if (!std::isfinite(loss)) {
          ++log.skipped;
          continue;
        }
        LossTerms terms{};
        double target_loss = 0.0;
        for (int i = 0; i < LossWeights::kCount; ++i) {
          terms[i] = t.value(cl.terms[i]).item();
          log.mean_terms[i] += terms[i];
          target_loss += targets[i] * terms[i];
        }
        log.mean_loss += loss;
        log.mean_target_loss += target_loss;
        t.backward(cl.loss);
        for (auto id : s.plan) active_tools.insert(id.index);
        ++in_batch;
        ++used;
      }
      if (in_batch == 0) continue;
      std::vector<grad::Param*> active;
      for (auto ti : active_tools)
        for (auto& p : registry.at(tools::ToolId{ti}).params) active.push_back(&p);
      for (auto* p : active)
        for (double& g : p->grad) g /= in_batch;
      log.mean_grad_norm += grad::clip_grad_norm(active, config.clip_norm);
      ++steps;
      if (config.lr > 0.0) opt.step(active);
    }
    if (static_cast<double>(log.skipped) > config.max_skip_fraction * static_cast<double>(data.size()))
      throw NumericError("co-training epoch " + std::to_string(epoch) + " skipped " + std::to_string(log.skipped) +
                         " of " + std::to_string(data.size()) + " samples with non-finite loss");
    if (used > 0) {
      log.mean_loss /= used;
      log.mean_target_loss /= used;
      for (double& v : log.mean_terms) v /= used;
    }
    if (steps > 0) log.mean_grad_norm /= steps;
    logs.push_back(log);
    if (on_epoch) on_epoch(log, registry);
  }
  return logs;
}

std::string cotrain_log_csv(const std::vector<EpochLog>& rows) {
  std::ostringstream ss;
  ss << "epoch,mean_loss,mean_target_loss,l1,perceptual,lpips,nr_sharp,nr_balance,"
        "w_l1,w_perceptual,w_lpips,w_nr_sharp,w_nr_balance,skip_count,grad_norm\n";
  char buf[512];
  for (const auto& r : rows) {
    const auto w = r.weights.as_array();
    std::snprintf(buf, sizeof buf,
                  "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,%.10g\n", r.epoch,
                  r.mean_loss, r.mean_target_loss, r.mean_terms[0], r.mean_terms[1], r.mean_terms[2], r.mean_terms[3],
                  r.mean_terms[4], w[0], w[1], w[2], w[3], w[4], r.skipped, r.mean_grad_norm);
    ss << buf;
  }
  return ss.str();
}

std::vector<MisuseRow> misuse_eval(const tools::ToolRegistry& before, const tools::ToolRegistry& after,
                                   const std::vector<Image>& clean) {
  if (before.size() != after.size()) throw ParamError("misuse_eval: registries differ in size");
  std::vector<MisuseRow> rows;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const tools::ToolId id{i};
    if (before.at(id).name != after.at(id).name) throw ParamError("misuse_eval: registries differ in tool order");
    MisuseRow r;
    r.tool = before.at(id).name;
    for (const auto& img : clean) {
      const Image a = tools::apply_tool(before, id, img);
      const Image b = tools::apply_tool(after, id, img);
      r.psnr_before += psnr(a, img);
      r.ssim_before += ssim(a, img);
      r.psnr_after += psnr(b, img);
      r.ssim_after += ssim(b, img);
    }
    if (!clean.empty()) {
      const double n = static_cast<double>(clean.size());
      r.psnr_before /= n;
      r.ssim_before /= n;
      r.psnr_after /= n;
      r.ssim_after /= n;
    }
    rows.push_back(r);
  }
  return rows;
}

std::string misuse_csv(const std::vector<MisuseRow>& rows) {
  std::ostringstream ss;
  ss << "tool,psnr_before,ssim_before,psnr_after,ssim_after,psnr_delta\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.tool.c_str(), r.psnr_before, r.ssim_before,
                  r.psnr_after, r.ssim_after, r.psnr_after - r.psnr_before);
    ss << buf;
  }
  return ss.str();
}

}  // namespace coopir::cotrain
