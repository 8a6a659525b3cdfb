#include <cmath>
#include <numeric>

#include "coopir/error.hpp"
#include "coopir/io.hpp"
#include "coopir/planner.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coopir;
using namespace coopir::planner;
using K = DegradationKind;

namespace {

PlanSample sample_with(std::vector<int> tokens, KindSet pred) {
  PlanSample s;
  s.tokens = std::move(tokens);
  s.deg_pred = pred;
  return s;
}

Rollout rollout(const FeatureVector& f, const PlanSample& s, double total) {
  Rollout r;
  r.features = f;
  r.sample = s;
  r.reward.total = total;
  r.reward.rq = total;
  r.reward.rd = 1.0;
  r.reward.rf = 1.0;
  return r;
}

}  // namespace

TEST_CASE("features of a constant image") {
  const auto f = featurize(testing::constant(32, 32, 0.5));
  for (int c = 0; c < 3; ++c) {
    CHECK(f[c] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(f[3 + c] == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(f[6] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[7] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[16] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f[17] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f[18] == doctest::Approx(0.5).epsilon(1e-12));
  for (double v : f) CHECK(std::isfinite(v));
  CHECK(std::string(feature_names()[8]).size() > 0);
}

TEST_CASE("features respond to noise and haze") {
  const Image clean = testing::texture(64, 5);
  Prng rng(3);
  const Image noisy = degrade::apply_degradation(clean, degrade::NoiseParams{25.0 / 255.0}, rng);
  CHECK(featurize(noisy)[8] > featurize(clean)[8]);
  const Image hazy = degrade::apply_degradation(clean, degrade::HazeParams{0.5, 1.0}, rng);
  CHECK(featurize(hazy)[13] > featurize(clean)[13]);
}

TEST_CASE("zero parameters give uniform decisions") {
  const auto p = PolicyParams::zeros(4);
  const auto fw = policy_forward(p, featurize(testing::texture(32, 2)), {}, 6);
  REQUIRE(fw.next_probs.size() == 5);
  for (double q : fw.next_probs) CHECK(q == doctest::Approx(0.2).epsilon(1e-12));
  for (double q : fw.deg_probs) CHECK(q == 0.5);
}

TEST_CASE("distributions sum to one") {
  const auto p = PolicyParams::random_init(10, 3);
  const auto f = featurize(testing::texture(32, 9));
  for (const std::vector<int>& prefix : {std::vector<int>{}, {1}, {4, 4, 2}}) {
    const auto fw = policy_forward(p, f, prefix, 6);
    CHECK(std::accumulate(fw.next_probs.begin(), fw.next_probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double q : fw.deg_probs) {
      CHECK(q > 0.0);
      CHECK(q < 1.0);
    }
  }
  CHECK_THROWS_AS(policy_forward(p, f, {1, 2, 3, 4, 5, 6}, 6), ParamError);
}

TEST_CASE("sampled log-probabilities are consistent") {
  const auto p = PolicyParams::random_init(4, 11);
  const auto f = featurize(testing::texture(32, 10));
  Prng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto s = sample_plan(p, f, 3, rng);
    CHECK(s.total_logprob == doctest::Approx(std::accumulate(s.step_logprobs.begin(), s.step_logprobs.end(), 0.0))
                                 .epsilon(1e-12));
    // recompute from untaped forward passes
    double expect = 0.0;
    for (std::size_t j = 0; j < kNumKinds; ++j)
      expect += std::log(s.deg_pred.contains(kAllKinds[j]) ? s.deg_probs[j] : 1.0 - s.deg_probs[j]);
    std::vector<int> prefix;
    for (int tok : s.tokens) {
      expect += std::log(policy_forward(p, f, prefix, 3).next_probs[tok]);
      prefix.push_back(tok);
    }
    CHECK(s.total_logprob == doctest::Approx(expect).epsilon(1e-9));
    CHECK(s.plan_tokens(p.stop_token()).size() <= 3);
    CHECK(s.step_logprobs.size() == kNumKinds + s.tokens.size());
  }
  const auto g1 = greedy_plan(p, f, 6), g2 = greedy_plan(p, f, 6);
  CHECK(g1.tokens == g2.tokens);
  for (std::size_t j = 0; j < kNumKinds; ++j) CHECK(g1.deg_pred.contains(kAllKinds[j]) == (g1.deg_probs[j] > 0.5));
}

TEST_CASE("reward gating and F1") {
  const auto reg = tools::study_registry();
  const Image gt = testing::texture(32, 12);
  Prng rng(1);
  const Image lq = degrade::apply_degradation(gt, degrade::NoiseParams{25.0 / 255.0}, rng);
  const KindSet noise{K::noise};

  const auto empty = compute_reward(reg, lq, gt, noise, sample_with({4}, noise), 6);
  CHECK(empty.rf == 0.0);
  CHECK(empty.rq > 0.0);
  CHECK(empty.total == 0.0);

  const auto exact = compute_reward(reg, lq, gt, noise, sample_with({0, 4}, noise), 6);
  CHECK(exact.rd == 1.0);
  CHECK(exact.rf == 1.0);
  CHECK(exact.total == exact.rq * exact.rd * exact.rf * exact.rc);

  const auto partial = compute_reward(reg, lq, gt, noise, sample_with({0, 4}, KindSet{K::noise, K::rain}), 6);
  CHECK(partial.rd == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const auto too_long = compute_reward(reg, lq, gt, noise, sample_with({0, 0, 0}, noise), 2);
  CHECK(too_long.rf == 0.0);
  CHECK(too_long.total == 0.0);
}

TEST_CASE("quality reward range") {
  MetricVector m;
  m.psnr = 100;
  m.ssim = m.gsim = m.nr_sharp = m.nr_balance = 1.0;
  CHECK(quality_reward(m) == doctest::Approx(1.0).epsilon(1e-12));
  m = MetricVector{};
  m.ssim = -0.5;
  CHECK(quality_reward(m) >= 0.0);
}

TEST_CASE("group advantages") {
  for (double a : grpo_advantages({0.3, 0.3, 0.3})) CHECK(a == 0.0);
  const auto two = grpo_advantages({0.0, 1.0});
  CHECK(two[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-6));
  const auto four = grpo_advantages({1, 2, 3, 4});
  const std::array<double, 4> expect = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(four[i] - expect[i]) < 1e-3);
  CHECK_THROWS_AS(grpo_advantages({1.0}), ParamError);
}

TEST_CASE("ratio one reduces the surrogate gradient to advantage times score") {
  grad::Param theta("theta", {3, 1, 1}, {0.2, -0.4, 0.7});
  const double adv = 0.8;
  grad::Tape probe;
  const double old_logp = probe.value(grad::pick(probe, grad::log_softmax(probe, probe.constant(grad::Tensor(theta.shape(), theta.value))), 1)).item();

  grad::Tape t;
  const auto logp = grad::pick(t, grad::log_softmax(t, t.param(theta)), 1);
  const auto ratio = grad::exp(t, grad::shift(t, logp, -old_logp));
  CHECK(t.value(ratio).item() == 1.0);
  t.backward(grad::clipped_surrogate(t, ratio, adv, 0.2));
  const auto surrogate_grad = theta.grad;

  theta.zero_grad();
  grad::Tape u;
  u.backward(grad::scale(u, grad::pick(u, grad::log_softmax(u, u.param(theta)), 1), adv));
  for (int i = 0; i < 3; ++i) CHECK(surrogate_grad[i] == doctest::Approx(theta.grad[i]).epsilon(1e-12));
}

TEST_CASE("equal rewards at the reference policy leave parameters unchanged") {
  auto params = PolicyParams::random_init(4, 21);
  auto ref = params;
  const auto before = encode_policy(params);
  const auto f = featurize(testing::texture(32, 14));
  Prng rng(2);
  std::vector<Group> groups(2);
  for (auto& g : groups)
    for (int i = 0; i < 4; ++i) g.push_back(rollout(f, sample_plan(params, f, 6, rng), 0.42));
  GrpoConfig cfg;
  cfg.group_size = 4;
  cfg.batch = 2;
  grad::Adam opt({cfg.lr});
  const auto d = grpo_update(params, ref, groups, cfg, opt);
  CHECK(d.kl == 0.0);
  CHECK(d.grad_norm == 0.0);
  CHECK(encode_policy(params) == before);
}

TEST_CASE("an update moves probability toward the better rollout") {
  auto params = PolicyParams::random_init(4, 22);
  auto ref = params;
  const auto f = featurize(testing::texture(32, 15));
  Prng rng(3);
  Group g;
  const auto a = sample_with({2, 4}, KindSet{}), b = sample_with({1, 4}, KindSet{});
  auto score = [&](PlanSample s) {
    s.step_logprobs.clear();
    const auto fw0 = policy_forward(params, f, {}, 6);
    s.total_logprob = 0;
    for (std::size_t j = 0; j < kNumKinds; ++j) s.step_logprobs.push_back(std::log(1.0 - fw0.deg_probs[j]));
    std::vector<int> prefix;
    for (int tok : s.tokens) {
      s.step_logprobs.push_back(std::log(policy_forward(params, f, prefix, 6).next_probs[tok]));
      prefix.push_back(tok);
    }
    for (double x : s.step_logprobs) s.total_logprob += x;
    return s;
  };
  g.push_back(rollout(f, score(a), 1.0));
  g.push_back(rollout(f, score(b), 0.0));
  GrpoConfig cfg;
  cfg.group_size = 2;
  cfg.batch = 1;
  cfg.lr = 0.01;
  grad::Adam opt({cfg.lr});
  const double before = policy_forward(params, f, {}, 6).next_probs[2];
  grpo_update(params, ref, {g}, cfg, opt);
  CHECK(policy_forward(params, f, {}, 6).next_probs[2] > before);
}

TEST_CASE("OPPOL1 round trip") {
  const auto p = PolicyParams::random_init(10, 4);
  const auto dir = testing::scratch_dir("planner_policy");
  save_policy(p, dir / "policy.bin");
  const auto q = load_policy(dir / "policy.bin");
  CHECK(q.n_tools() == 10);
  CHECK(encode_policy(q) == encode_policy(p));
  NamedArrays arrays = decode_named_arrays("OPPOL1", encode_policy(p));
  arrays.back().second.pop_back();
  CHECK_THROWS_AS(decode_policy(encode_named_arrays("OPPOL1", arrays)), FormatError);
  CHECK_THROWS_AS(decode_policy("OPPAR1"), FormatError);
}

TEST_CASE("config validation") {
  GrpoConfig c;
  CHECK_NOTHROW(validate(c));
  c.group_size = 1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = GrpoConfig{};
  c.clip_eps = 0.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("smoke training run") {
  PlannerConfig cfg;
  cfg.grpo.iterations = 2;
  cfg.grpo.batch = 4;
  cfg.grpo.group_size = 4;
  cfg.task.image_size = 32;
  cfg.task.combos = {KindSet{K::rain, K::noise}};
  cfg.baseline_rollouts = 8;
  int calls = 0;
  const auto result = train_planner(cfg, [&](const PlannerLogRow&) { ++calls; });
  CHECK(calls == 2);
  REQUIRE(result.log.size() == 2);
  CHECK(result.policy.all_finite());
  CHECK(result.random_baseline.rollouts == 8);
  const auto csv = planner_log_csv(result.log);
  CHECK(csv.rfind("iter,mean_reward,mean_rq,mean_rd,rf_rate,kl,clip_frac", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  cfg.workers = 2;
  const auto again = train_planner(cfg);
  CHECK(encode_policy(again.policy) == encode_policy(result.policy));
  CHECK(planner_log_csv(again.log) == csv);
}
