#include "coopir/planner.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "coopir/error.hpp"
#include "coopir/io.hpp"
#include "coopir/parallel.hpp"
#include "coopir/plansearch.hpp"

namespace coopir::planner {

namespace {

constexpr std::string_view kPolicyMagic = "OPPOL1";
constexpr std::size_t kPolicyIn = kNumFeatures + kEmbedDim;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mu) {
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

// Linear-interpolated quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median_inplace(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lower = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lower);
  }
  return m;
}

// Energy fractions of the mean-removed spectrum in radial bands of width
// 0.125 cycles/pixel; the last band takes everything above 0.375.
std::array<double, 4> spectrum_bands(const Plane& y) {
  const int h = y.height, w = y.width;
  double mu = 0.0;
  for (double v : y.v) mu += v;
  mu /= static_cast<double>(y.v.size());
  using C = std::complex<double>;
  std::vector<C> rows(y.v.size());
  auto twiddles = [](int n) {
    std::vector<C> tw(n);
    for (int k = 0; k < n; ++k) tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / n);
    return tw;
  };
  const auto tw_w = twiddles(w), tw_h = twiddles(h);
  for (int r = 0; r < h; ++r)
    for (int k = 0; k < w; ++k) {
      C acc = 0.0;
      for (int x = 0; x < w; ++x) acc += (y.v[r * w + x] - mu) * tw_w[(k * x) % w];
      rows[r * w + k] = acc;
    }
  std::array<double, 4> bands{};
  double total = 0.0;
  for (int k = 0; k < w; ++k)
    for (int l = 0; l < h; ++l) {
      C acc = 0.0;
      for (int r = 0; r < h; ++r) acc += rows[r * w + k] * tw_h[(l * r) % h];
      if (k == 0 && l == 0) continue;
      const double fx = (k <= w / 2 ? k : k - w) / static_cast<double>(w);
      const double fy = (l <= h / 2 ? l : l - h) / static_cast<double>(h);
      const double rad = std::sqrt(fx * fx + fy * fy);
      const double e = std::norm(acc);
      bands[std::min(3, static_cast<int>(rad / 0.125))] += e;
      total += e;
    }
  if (total > 1e-20)
    for (double& b : bands) b /= total;
  else
    bands.fill(0.0);
  return bands;
}

std::vector<double> tensor_values(const grad::Tape& t, grad::NodeId id) { return t.value(id).v; }

grad::NodeId feature_node(grad::Tape& t, const FeatureVector& f) {
  return t.constant(grad::Tensor::vector(std::vector<double>(f.begin(), f.end())));
}

int sample_categorical(const std::vector<double>& logp, Prng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    acc += std::exp(logp[i]);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(logp.size()) - 1;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Shared by sampling and greedy decoding; rng == nullptr selects argmax.
PlanSample decode(const PolicyParams& p, const FeatureVector& f, int l_max, Prng* rng) {
  if (l_max < 1) throw ParamError("l_max must be >= 1");
  grad::Tape t;
  const PolicyNodes pn = bind_constant(t, p);
  const grad::NodeId fx = feature_node(t, f);
  const grad::NodeId z = deg_logits(t, pn, fx);
  PlanSample s;
  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumKinds); ++j) {
    const double zj = t.value(z).v[j];
    s.deg_probs[j] = sigmoid(zj);
    const auto lp = tensor_values(t, deg_decision_logp(t, z, j));
    const bool on = rng ? rng->uniform() < s.deg_probs[j] : s.deg_probs[j] > 0.5;
    if (on) s.deg_pred.insert(kAllKinds[j]);
    s.step_logprobs.push_back(lp[on ? 1 : 0]);
  }
  const int stop = static_cast<int>(p.stop_token());
  std::vector<int> prefix;
  while (static_cast<int>(prefix.size()) < l_max) {
    const auto lp = tensor_values(t, next_token_logp(t, pn, fx, prefix));
    const int tok = rng ? sample_categorical(lp, *rng) : argmax(lp);
    s.step_logprobs.push_back(lp[tok]);
    s.tokens.push_back(tok);
    if (tok == stop) break;
    prefix.push_back(tok);
  }
  for (double lp : s.step_logprobs) s.total_logprob += lp;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// features

const std::array<const char*, kNumFeatures>& feature_names() {
  static const std::array<const char*, kNumFeatures> names = {
      "mean_r",      "mean_g",      "mean_b",       "std_r",        "std_g",         "std_b",   "grad_mean",
      "grad_std",    "lap_mad",     "band0",        "band1",        "band2",         "band3",   "dark_channel",
      "down_resid",  "blockiness",  "mean_y",       "y_p05",        "y_p95",         "streak_ratio"};
  return names;
}

FeatureVector featurize(const Image& img) {
  validate(img);
  FeatureVector f{};
  const int h = img.height, w = img.width, n = h * w;
  for (int ch = 0; ch < 3; ++ch) {
    const int c = img.channels == 3 ? ch : 0;
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = img.data[static_cast<std::size_t>(i) * img.channels + c];
    f[ch] = mean_of(v);
    f[3 + ch] = std_of(v, f[ch]);
  }
  const Plane y = luma(img);

  // Sobel magnitude peaks near 5.7 on a unit step; scaled by 1/4.
  const Plane g = sobel_magnitude(y);
  f[6] = 0.25 * mean_of(g.v);
  f[7] = 0.25 * std_of(g.v, mean_of(g.v));

  // 4-neighbour Laplacian, median absolute deviation, x4.
  std::vector<double> lap(n);
  for (int r = 0; r < h; ++r)
    for (int x = 0; x < w; ++x)
      lap[r * w + x] = y.clamped_at(r - 1, x) + y.clamped_at(r + 1, x) + y.clamped_at(r, x - 1) +
                       y.clamped_at(r, x + 1) - 4.0 * y.at(r, x);
  {
    std::vector<double> tmp = lap;
    const double med = median_inplace(tmp);
    for (int i = 0; i < n; ++i) tmp[i] = std::abs(lap[i] - med);
    f[8] = 4.0 * median_inplace(tmp);
  }

  const auto bands = spectrum_bands(y);
  for (int b = 0; b < 4; ++b) f[9 + b] = bands[b];

  // Dark channel: channel minimum, then 7x7 minimum filter with clamped borders.
  {
    std::vector<double> mn(n);
    for (int i = 0; i < n; ++i) {
      double m = 1.0;
      for (int c = 0; c < img.channels; ++c) m = std::min(m, img.data[static_cast<std::size_t>(i) * img.channels + c]);
      mn[i] = m;
    }
    double acc = 0.0;
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        double m = 1.0;
        for (int dr = -3; dr <= 3; ++dr)
          for (int dx = -3; dx <= 3; ++dx)
            m = std::min(m, mn[std::clamp(r + dr, 0, h - 1) * w + std::clamp(x + dx, 0, w - 1)]);
        acc += m;
      }
    f[13] = acc / n;
  }

  // RMS of Y minus its 2x2-box, nearest-upsampled version, x10.
  {
    double acc = 0.0;
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        const int r0 = (r / 2) * 2, x0 = (x / 2) * 2;
        const int r1 = std::min(r0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double box = 0.25 * (y.at(r0, x0) + y.at(r0, x1) + y.at(r1, x0) + y.at(r1, x1));
        const double d = y.at(r, x) - box;
        acc += d * d;
      }
    f[14] = 10.0 * std::sqrt(acc / n);
  }

  // Mean jump across 8-pixel block edges relative to jumps elsewhere.
  {
    double edge = 0.0, inner = 0.0;
    long ne = 0, ni = 0;
    for (int r = 0; r < h; ++r)
      for (int x = 1; x < w; ++x) {
        const double d = std::abs(y.at(r, x) - y.at(r, x - 1));
        if (x % 8 == 0) edge += d, ++ne;
        else inner += d, ++ni;
      }
    for (int r = 1; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        const double d = std::abs(y.at(r, x) - y.at(r - 1, x));
        if (r % 8 == 0) edge += d, ++ne;
        else inner += d, ++ni;
      }
    const double me = ne ? edge / ne : 0.0, mi = ni ? inner / ni : 0.0;
    f[15] = me / (me + mi + 1e-6);
  }

  f[16] = mean_of(y.v);
  {
    std::vector<double> sorted = y.v;
    std::sort(sorted.begin(), sorted.end());
    f[17] = quantile_sorted(sorted, 0.05);
    f[18] = quantile_sorted(sorted, 0.95);
  }

  // Vertical streaks (90 degrees) put their energy in horizontal differences.
  {
    double ex = 0.0, ey = 0.0;
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) {
        const double gx = y.clamped_at(r, x + 1) - y.clamped_at(r, x - 1);
        const double gy = y.clamped_at(r + 1, x) - y.clamped_at(r - 1, x);
        ex += gx * gx;
        ey += gy * gy;
      }
    f[19] = (ex + ey) > 1e-20 ? ex / (ex + ey) : 0.5;
  }
  return f;
}

// ---------------------------------------------------------------------------
// policy parameters

PolicyParams PolicyParams::zeros(std::size_t n_tools) {
  if (n_tools < 1) throw ParamError("policy needs at least one tool");
  PolicyParams p;
  p.n_tools_ = n_tools;
  const int v1 = static_cast<int>(n_tools) + 1;
  auto block = [&](const char* id, int rows, int cols) {
    const grad::Shape s{rows, cols, 1};
    p.blocks_.emplace_back(id, s, std::vector<double>(s.size(), 0.0));
  };
  block("deg_w", kNumKinds, kNumFeatures);
  block("deg_b", kNumKinds, 1);
  block("tool_embed", v1, kEmbedDim);
  block("w1", kHiddenDim, kPolicyIn);
  block("b1", kHiddenDim, 1);
  block("w2", v1, kHiddenDim);
  block("b2", v1, 1);
  return p;
}

PolicyParams PolicyParams::random_init(std::size_t n_tools, std::uint64_t seed) {
  PolicyParams p = zeros(n_tools);
  Prng rng(seed);
  // deg head and biases stay zero; the plan head needs a non-zero hidden
  // layer or w1 and w2 receive no gradient.
  auto fill = [&](std::size_t block, double scale) {
    for (double& v : p.blocks_[block].value) v = scale * rng.normal();
  };
  fill(2, 0.1);
  fill(3, 1.0 / std::sqrt(static_cast<double>(kPolicyIn)));
  fill(5, 0.01);
  return p;
}

std::vector<grad::Param*> PolicyParams::pointers() {
  std::vector<grad::Param*> out;
  for (auto& b : blocks_) out.push_back(&b);
  return out;
}

bool PolicyParams::all_finite() const {
  for (const auto& b : blocks_)
    for (double v : b.value)
      if (!std::isfinite(v)) return false;
  return true;
}

std::string encode_policy(const PolicyParams& p) {
  NamedArrays arrays;
  arrays.emplace_back("n_tools", std::vector<double>{static_cast<double>(p.n_tools())});
  for (const auto& b : p.blocks()) arrays.emplace_back(b.id(), b.value);
  return encode_named_arrays(kPolicyMagic, arrays);
}

PolicyParams decode_policy(std::string_view bytes) {
  const NamedArrays arrays = decode_named_arrays(kPolicyMagic, bytes);
  if (arrays.empty() || arrays[0].first != "n_tools" || arrays[0].second.size() != 1)
    throw FormatError("policy file: missing n_tools header");
  const double nt = arrays[0].second[0];
  if (!(nt >= 1 && nt <= 1024) || nt != std::floor(nt)) throw FormatError("policy file: bad n_tools");
  PolicyParams p = PolicyParams::zeros(static_cast<std::size_t>(nt));
  if (arrays.size() != p.blocks().size() + 1) throw FormatError("policy file: wrong number of arrays");
  for (std::size_t i = 0; i < p.blocks().size(); ++i) {
    auto& b = p.blocks()[i];
    const auto& [name, values] = arrays[i + 1];
    if (name != b.id()) throw FormatError("policy file: expected array '" + b.id() + "', found '" + name + "'");
    if (values.size() != b.size()) throw FormatError("policy file: wrong length for '" + name + "'");
    b.value = values;
  }
  if (!p.all_finite()) throw FormatError("policy file: non-finite values");
  return p;
}

void save_policy(const PolicyParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, encode_policy(p));
}

PolicyParams load_policy(const std::filesystem::path& path) { return decode_policy(read_file(path)); }

// ---------------------------------------------------------------------------
// policy graph

PolicyNodes bind_trainable(grad::Tape& t, PolicyParams& p) {
  auto& b = p.blocks();
  return {t.param(b[0]), t.param(b[1]), t.param(b[2]), t.param(b[3]), t.param(b[4]), t.param(b[5]), t.param(b[6])};
}

PolicyNodes bind_constant(grad::Tape& t, const PolicyParams& p) {
  const auto& b = p.blocks();
  auto c = [&](std::size_t i) { return t.constant(grad::Tensor(b[i].shape(), b[i].value)); };
  return {c(0), c(1), c(2), c(3), c(4), c(5), c(6)};
}

grad::NodeId deg_logits(grad::Tape& t, const PolicyNodes& pn, grad::NodeId features) {
  return grad::add(t, grad::matvec(t, pn.deg_w, features), pn.deg_b);
}

grad::NodeId next_token_logp(grad::Tape& t, const PolicyNodes& pn, grad::NodeId features,
                             const std::vector<int>& prefix) {
  const grad::NodeId ctx = grad::row_mean(t, pn.embed, prefix);
  const std::array<grad::NodeId, 2> parts = {features, ctx};
  const grad::NodeId in = grad::concat(t, parts);
  const grad::NodeId hidden = grad::tanh(t, grad::add(t, grad::matvec(t, pn.w1, in), pn.b1));
  return grad::log_softmax(t, grad::add(t, grad::matvec(t, pn.w2, hidden), pn.b2));
}

grad::NodeId deg_decision_logp(grad::Tape& t, grad::NodeId logits, std::size_t j) {
  const std::array<grad::NodeId, 2> parts = {t.constant(0.0), grad::pick(t, logits, j)};
  return grad::log_softmax(t, grad::concat(t, parts));
}

Forward policy_forward(const PolicyParams& p, const FeatureVector& f, const std::vector<int>& prefix, int l_max) {
  if (static_cast<int>(prefix.size()) >= l_max) throw ParamError("prefix length must be below l_max");
  for (int tok : prefix)
    if (tok < 0 || tok >= static_cast<int>(p.n_tools())) throw ParamError("prefix holds a non-tool token");
  grad::Tape t;
  const PolicyNodes pn = bind_constant(t, p);
  const grad::NodeId fx = feature_node(t, f);
  Forward out;
  for (double lp : t.value(next_token_logp(t, pn, fx, prefix)).v) out.next_probs.push_back(std::exp(lp));
  const auto& z = t.value(deg_logits(t, pn, fx)).v;
  for (std::size_t j = 0; j < out.deg_probs.size(); ++j) out.deg_probs[j] = sigmoid(z[j]);
  return out;
}

std::vector<int> PlanSample::plan_tokens(std::size_t stop_token) const {
  std::vector<int> out;
  for (int t : tokens)
    if (t != static_cast<int>(stop_token)) out.push_back(t);
  return out;
}

PlanSample sample_plan(const PolicyParams& p, const FeatureVector& f, int l_max, Prng& rng) {
  return decode(p, f, l_max, &rng);
}

PlanSample greedy_plan(const PolicyParams& p, const FeatureVector& f, int l_max) {
  return decode(p, f, l_max, nullptr);
}

// ---------------------------------------------------------------------------
// reward

// SSIM is floored at 0 so Rq stays non-negative.
double quality_reward(const MetricVector& m, const RewardWeights& w) {
  return w.psnr * std::min(m.psnr, w.psnr_cap) / w.psnr_cap + w.ssim * std::max(m.ssim, 0.0) + w.gsim * m.gsim +
         w.nr_sharp * m.nr_sharp + w.nr_balance * m.nr_balance;
}

RewardBreakdown compute_reward(const tools::ToolRegistry& registry, const Image& lq, const Image& gt, KindSet gt_set,
                               const PlanSample& sample, int l_max, const RewardWeights& w) {
  RewardBreakdown r;
  search::Plan plan;
  bool valid_ids = true;
  std::size_t plan_len = 0;
  for (int t : sample.tokens) {
    if (t == static_cast<int>(registry.size())) break;
    ++plan_len;
    if (t < 0 || t > static_cast<int>(registry.size())) {  // unreachable for sampled plans
      valid_ids = false;
      continue;
    }
    plan.push_back(tools::ToolId{static_cast<std::size_t>(t)});
  }
  r.rf = (valid_ids && plan_len >= 1 && plan_len <= static_cast<std::size_t>(l_max)) ? 1.0 : 0.0;
  r.metrics = evaluate_metrics(search::execute_plan(registry, plan, lq), gt);
  r.rq = quality_reward(r.metrics, w);
  r.rd = f1_score(sample.deg_pred, gt_set);
  r.rc = 1.0;
  r.total = r.rq * r.rd * r.rf * r.rc;
  return r;
}

std::vector<double> grpo_advantages(const std::vector<double>& rewards, double std_floor) {
  if (rewards.size() < 2) throw ParamError("group needs at least two rewards");
  const double mu = mean_of(rewards);
  const double sd = std_of(rewards, mu);
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mu) / (sd + std_floor);
  return a;
}

void validate(const GrpoConfig& c) {
  if (c.group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (c.batch < 1) throw ConfigError("grpo.batch must be >= 1");
  if (!(c.clip_eps > 0.0 && c.clip_eps < 1.0)) throw ConfigError("grpo.clip_eps must lie in (0, 1)");
  if (!(c.kl_beta >= 0.0)) throw ConfigError("grpo.kl_beta must be >= 0");
  if (!(c.lr > 0.0)) throw ConfigError("grpo.lr must be > 0");
  if (c.iterations < 0) throw ConfigError("grpo.iterations must be >= 0");
  if (c.l_max < 1) throw ConfigError("grpo.l_max must be >= 1");
  if (c.ref_refresh < 1) throw ConfigError("grpo.ref_refresh must be >= 1");
  if (!(c.std_floor > 0.0)) throw ConfigError("grpo.std_floor must be > 0");
}

// ---------------------------------------------------------------------------
// update

UpdateDiagnostics grpo_update(PolicyParams& params, PolicyParams& ref, const std::vector<Group>& groups,
                              const GrpoConfig& config, grad::Adam& optimizer) {
  validate(config);
  UpdateDiagnostics d;
  std::size_t n_samples = 0;
  for (const auto& g : groups) n_samples += g.size();
  if (n_samples == 0) throw ParamError("grpo_update needs at least one rollout");

  auto ptrs = params.pointers();
  for (auto* p : ptrs) p->zero_grad();

  grad::Tape t;
  const PolicyNodes pn = bind_trainable(t, params);
  std::vector<grad::NodeId> surrogates, kls;
  std::size_t clipped = 0;
  double adv_abs = 0.0, kl_sum = 0.0;
  const int stop = static_cast<int>(params.stop_token());

  for (const auto& group : groups) {
    std::vector<double> rewards;
    for (const auto& r : group) rewards.push_back(r.reward.total);
    const auto adv = grpo_advantages(rewards, config.std_floor);
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Rollout& ro = group[i];
      d.mean_reward += ro.reward.total;
      d.mean_rq += ro.reward.rq;
      d.mean_rd += ro.reward.rd;
      d.rf_rate += ro.reward.rf;
      adv_abs += std::abs(adv[i]);

      // reference log-probabilities at the same states
      grad::Tape rt;
      const PolicyNodes rn = bind_constant(rt, ref);
      const grad::NodeId rf = feature_node(rt, ro.features);
      const grad::NodeId rz = deg_logits(rt, rn, rf);

      const grad::NodeId fx = feature_node(t, ro.features);
      const grad::NodeId z = deg_logits(t, pn, fx);
      std::vector<grad::NodeId> picks;
      auto add_state = [&](grad::NodeId lp, const std::vector<double>& ref_lp, std::size_t chosen) {
        const grad::NodeId kl = grad::kl_categorical(t, lp, ref_lp);
        kl_sum += t.value(kl).item();
        kls.push_back(kl);
        picks.push_back(grad::pick(t, lp, chosen));
      };
      for (std::size_t j = 0; j < static_cast<std::size_t>(kNumKinds); ++j)
        add_state(deg_decision_logp(t, z, j), rt.value(deg_decision_logp(rt, rz, j)).v,
                  ro.sample.deg_pred.contains(kAllKinds[j]) ? 1 : 0);
      std::vector<int> prefix;
      for (int tok : ro.sample.tokens) {
        add_state(next_token_logp(t, pn, fx, prefix), rt.value(next_token_logp(rt, rn, rf, prefix)).v,
                  static_cast<std::size_t>(tok));
        if (tok == stop) break;
        prefix.push_back(tok);
      }
      const grad::NodeId logp_new = grad::sum(t, picks);
      const grad::NodeId ratio = grad::exp(t, grad::shift(t, logp_new, -ro.sample.total_logprob));
      const double r = t.value(ratio).item();
      if (r < 1.0 - config.clip_eps || r > 1.0 + config.clip_eps) ++clipped;
      surrogates.push_back(grad::clipped_surrogate(t, ratio, adv[i], config.clip_eps));
    }
  }

  // loss = -(mean surrogate) + beta * (mean per-state KL)
  const grad::NodeId sur = grad::scale(t, grad::sum(t, surrogates), -1.0 / static_cast<double>(n_samples));
  const grad::NodeId kl = grad::scale(t, grad::sum(t, kls), config.kl_beta / static_cast<double>(kls.size()));
  const std::array<grad::NodeId, 2> terms = {sur, kl};
  t.backward(grad::sum(t, terms));

  for (auto* p : ptrs)
    for (std::size_t i = 0; i < p->grad.size(); ++i)
      if (!std::isfinite(p->grad[i])) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "non-finite policy gradient in %s[%zu] (mean reward %.6g, kl %.6g)",
                      p->id().c_str(), i, d.mean_reward / n_samples, kl_sum / kls.size());
        throw NumericError(buf);
      }
  d.grad_norm = grad::grad_norm(ptrs);
  optimizer.step(ptrs);

  const double n = static_cast<double>(n_samples);
  d.mean_reward /= n;
  d.mean_rq /= n;
  d.mean_rd /= n;
  d.rf_rate /= n;
  d.mean_abs_advantage = adv_abs / n;
  d.kl = kl_sum / static_cast<double>(kls.size());
  d.clip_frac = static_cast<double>(clipped) / n;
  return d;
}

// ---------------------------------------------------------------------------
// training

std::vector<KindSet> task_combos(const PlannerTask& task) {
  if (!task.combos.empty()) return task.combos;
  auto combos = degrade::preset(task.preset).all();
  if (combos.empty()) throw ConfigError("preset '" + task.preset + "' has no combinations");
  return combos;
}

Prompt make_prompt(const PlannerTask& task, const std::vector<KindSet>& combos, std::uint64_t seed) {
  if (task.clean_kinds.empty()) throw ConfigError("planner task needs at least one clean image kind");
  if (combos.empty()) throw ConfigError("planner task needs at least one combination");
  Prng rng(seed);
  const auto kind = task.clean_kinds[rng.uniform_int(0, static_cast<int>(task.clean_kinds.size()) - 1)];
  Prompt p;
  p.clean = degrade::gen_clean(kind, task.image_size, rng);
  const KindSet combo = combos[rng.uniform_int(0, static_cast<int>(combos.size()) - 1)];
  const auto syn = degrade::synthesize(p.clean, degrade::make_spec(combo, rng.next_u64(), task.ranges), task.ranges);
  p.lq = syn.lq;
  p.gt_set = syn.gt_set;
  return p;
}

BaselineStats evaluate_sampled(const PolicyParams& policy, const PlannerConfig& config, int rollouts,
                               std::uint64_t seed) {
  const auto registry = tools::registry_by_name(config.task.registry);
  if (registry.size() != policy.n_tools()) throw ConfigError("policy and registry disagree on the tool count");
  const auto combos = task_combos(config.task);
  std::vector<RewardBreakdown> rewards(static_cast<std::size_t>(std::max(rollouts, 0)));
  parallel_for(rewards.size(), config.workers, [&](std::size_t i) {
    const Prompt pr = make_prompt(config.task, combos, derive_seed(seed, 2 * i));
    Prng rng(derive_seed(seed, 2 * i + 1));
    const auto s = sample_plan(policy, featurize(pr.lq), config.grpo.l_max, rng);
    rewards[i] = compute_reward(registry, pr.lq, pr.clean, pr.gt_set, s, config.grpo.l_max, config.weights);
  });
  BaselineStats b;
  b.rollouts = static_cast<int>(rewards.size());
  for (const auto& r : rewards) {
    b.mean_reward += r.total;
    b.mean_rq += r.rq;
    b.mean_rd += r.rd;
    b.rf_rate += r.rf;
  }
  if (!rewards.empty()) {
    const double n = static_cast<double>(rewards.size());
    b.mean_reward /= n;
    b.mean_rq /= n;
    b.mean_rd /= n;
    b.rf_rate /= n;
  }
  return b;
}

namespace {
constexpr std::uint64_t kInitSalt = 0x1d1f'0000'0000'0001ULL;
constexpr std::uint64_t kBaselineSalt = 0xba5e'0000'0000'0002ULL;
}  // namespace

PlannerResult train_planner(const PlannerConfig& config, const IterationCallback& on_iter) {
  validate(config.grpo);
  const auto registry = tools::registry_by_name(config.task.registry);
  const auto combos = task_combos(config.task);
  const GrpoConfig& gc = config.grpo;

  PlannerResult result;
  result.random_baseline = evaluate_sampled(PolicyParams::zeros(registry.size()), config, config.baseline_rollouts,
                                            config.seed ^ kBaselineSalt);
  result.policy = PolicyParams::random_init(registry.size(), config.seed ^ kInitSalt);
  PolicyParams ref = result.policy;
  grad::Adam opt(grad::AdamConfig{gc.lr, 0.9, 0.999, 1e-8});

  for (int it = 0; it < gc.iterations; ++it) {
    if (it % gc.ref_refresh == 0) ref = result.policy;
    const std::uint64_t it_seed = derive_seed(config.seed, static_cast<std::uint64_t>(it));
    std::vector<Prompt> prompts(gc.batch);
    std::vector<FeatureVector> features(gc.batch);
    std::vector<Group> groups(gc.batch, Group(gc.group_size));
    const std::size_t total = static_cast<std::size_t>(gc.batch) * gc.group_size;
    parallel_for(static_cast<std::size_t>(gc.batch), config.workers, [&](std::size_t b) {
      prompts[b] = make_prompt(config.task, combos, derive_seed(it_seed, b));
      features[b] = featurize(prompts[b].lq);
    });
    parallel_for(total, config.workers, [&](std::size_t k) {
      const std::size_t b = k / gc.group_size, g = k % gc.group_size;
      Rollout& ro = groups[b][g];
      ro.features = features[b];
      Prng rng(derive_seed(it_seed ^ 0x9e37'79b9'7f4a'7c15ULL, k));
      ro.sample = sample_plan(result.policy, ro.features, gc.l_max, rng);
      ro.reward =
          compute_reward(registry, prompts[b].lq, prompts[b].clean, prompts[b].gt_set, ro.sample, gc.l_max, config.weights);
    });
    PlannerLogRow row;
    row.iter = it;
    row.diag = grpo_update(result.policy, ref, groups, gc, opt);
    result.log.push_back(row);
    if (on_iter) on_iter(row);
  }
  return result;
}

std::string planner_log_csv(const std::vector<PlannerLogRow>& rows) {
  std::ostringstream ss;
  ss << "iter,mean_reward,mean_rq,mean_rd,rf_rate,kl,clip_frac\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.iter, r.diag.mean_reward,
                  r.diag.mean_rq, r.diag.mean_rd, r.diag.rf_rate, r.diag.kl, r.diag.clip_frac);
    ss << buf;
  }
  return ss.str();
}

}  // namespace coopir::planner
