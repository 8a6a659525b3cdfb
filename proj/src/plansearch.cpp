#include "coopir/plansearch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "coopir/error.hpp"
#include "coopir/parallel.hpp"
#include "coopir/prng.hpp"
#include "coopir/serialize.hpp"

namespace coopir::search {

namespace {

constexpr std::uint64_t kInputSalt = 0x5157'0a1c'e3d2'9b47ULL;

constexpr std::array<degrade::CleanKind, 3> kStudyCleanKinds = {
    degrade::CleanKind::value_noise_texture, degrade::CleanKind::shapes, degrade::CleanKind::gradient};

// offsets[k] = index of the first plan of length k.
std::vector<std::size_t> length_offsets(std::size_t n, std::size_t max_len) {
  std::vector<std::size_t> off(max_len + 2, 0);
  std::size_t pow = 1;
  for (std::size_t k = 1; k <= max_len + 1; ++k) {
    off[k] = (k == 1) ? 0 : off[k - 1] + pow;
    pow *= n;
  }
  return off;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

constexpr bool is_fr(std::size_t m) { return m < 3; }

}  // namespace

std::string plan_label(const tools::ToolRegistry& registry, const Plan& plan) {
  if (plan.empty()) return "identity";
  std::string s;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) s += '>';
    s += registry.at(plan[i]).name;
  }
  return s;
}

std::size_t plan_count(std::size_t n_tools, std::size_t max_len) {
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  std::size_t total = 0, pow = 1;
  for (std::size_t k = 1; k <= max_len; ++k) {
    if (n_tools != 0 && pow > kMax / n_tools) return kMax;
    pow *= n_tools;
    if (total > kMax - pow) return kMax;
    total += pow;
  }
  return total;
}

std::vector<Plan> enumerate_plans(std::size_t n_tools, std::size_t max_len, std::size_t cap) {
  if (n_tools < 1 || max_len < 1) throw ParamError("enumerate_plans needs n_tools >= 1 and max_len >= 1");
  const std::size_t count = plan_count(n_tools, max_len);
  if (count > cap)
    throw BudgetError("plan enumeration would produce " + std::to_string(count) + " plans, cap is " +
                      std::to_string(cap));
  std::vector<Plan> plans;
  plans.reserve(count);
  for (std::size_t len = 1; len <= max_len; ++len) {
    Plan p(len, tools::ToolId{0});
    bool more = true;
    while (more) {
      plans.push_back(p);
      // odometer increment, last position fastest
      more = false;
      for (std::size_t pos = len; pos-- > 0;) {
        if (++p[pos].index < n_tools) {
          more = true;
          break;
        }
        p[pos].index = 0;
      }
    }
  }
  return plans;
}

std::size_t plan_index(const Plan& plan, std::size_t n_tools) {
  if (plan.empty()) throw ParamError("the empty plan is not part of the enumeration");
  const auto off = length_offsets(n_tools, plan.size());
  std::size_t code = 0;
  for (auto id : plan) {
    if (id.index >= n_tools) throw ParamError("plan references tool id out of range");
    code = code * n_tools + id.index;
  }
  return off[plan.size()] + code;
}

Image execute_plan(const tools::ToolRegistry& registry, const Plan& plan, const Image& img) {
  for (auto id : plan)
    if (!registry.valid(id)) throw ParamError("unknown tool id " + std::to_string(id.index));
  Image x = img;
  for (auto id : plan) x = tools::apply_tool(registry, id, x);
  return x;
}

std::vector<MetricVector> evaluate_all_plans(const tools::ToolRegistry& registry, std::size_t max_len,
                                             const Image& lq, const Image& gt) {
  const std::size_t n = registry.size();
  const std::size_t count = plan_count(n, max_len);
  if (count > kDefaultPlanCap) throw BudgetError("plan evaluation exceeds the plan cap");
  const auto off = length_offsets(n, max_len);
  std::vector<MetricVector> out(count);
  // depth-first over the prefix tree; each node's image is computed once
  auto visit = [&](auto&& self, const Image& prefix, std::size_t depth, std::size_t code) -> void {
    for (std::size_t t = 0; t < n; ++t) {
      Image next = tools::apply_tool(registry, tools::ToolId{t}, prefix);
      const std::size_t child = code * n + t;
      out[off[depth + 1] + child] = evaluate_metrics(next, gt);
      if (depth + 1 < max_len) self(self, next, depth + 1, child);
    }
  };
  visit(visit, lq, 0, 0);
  return out;
}

std::vector<Ranks> rank_plans(const std::vector<MetricVector>& evals) {
  if (evals.empty()) throw ParamError("rank_plans needs at least one evaluation");
  const std::size_t n = evals.size();
  std::vector<Ranks> ranks(n);
  std::vector<std::size_t> order(n);
  for (std::size_t m = 0; m < MetricVector::kCount; ++m) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return evals[a][m] > evals[b][m]; });
    for (std::size_t r = 0; r < n; ++r) ranks[order[r]][m] = static_cast<int>(r + 1);
  }
  return ranks;
}

double agg_rank(const Ranks& ranks) {
  double s = 0.0;
  for (int r : ranks) s += r;
  return s / static_cast<double>(ranks.size());
}

std::vector<PlanEvaluation> build_evaluations(const std::vector<Plan>& plans, const std::vector<MetricVector>& metrics) {
  if (plans.size() != metrics.size()) throw ShapeError("plans and metrics differ in length");
  const auto ranks = rank_plans(metrics);
  std::vector<PlanEvaluation> out(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) out[i] = {plans[i], metrics[i], ranks[i], agg_rank(ranks[i])};
  return out;
}

int good_cutoff(std::size_t n_plans, double fraction) {
  // guard against 0.1 * N landing a hair above an integer
  const double raw = fraction * static_cast<double>(n_plans);
  const double c = std::ceil(raw - 1e-9);
  return std::max(1, static_cast<int>(c));
}

bool passes_selection(const Ranks& ranks, int cutoff) {
  int good = 0;
  bool fr = false, nr = false;
  for (std::size_t m = 0; m < ranks.size(); ++m) {
    if (ranks[m] > cutoff) continue;
    ++good;
    (is_fr(m) ? fr : nr) = true;
  }
  return good >= kMinGoodMetrics && fr && nr;
}

std::vector<std::size_t> select_high_performing(const std::vector<Ranks>& ranks, double fraction) {
  const int cutoff = good_cutoff(ranks.size(), fraction);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (passes_selection(ranks[i], cutoff)) out.push_back(i);
  return out;
}

bool uses_out_of_scope(const tools::ToolRegistry& registry, const Plan& plan, KindSet gt_set) {
  return std::any_of(plan.begin(), plan.end(),
                     [&](tools::ToolId id) { return !gt_set.contains(registry.at(id).target); });
}

OutOfScopeReport analyze_out_of_scope(const tools::ToolRegistry& registry, const std::vector<PlanEvaluation>& evals,
                                      const std::vector<std::size_t>& selected, KindSet gt_set) {
  OutOfScopeReport rep;
  for (auto i : selected)
    if (uses_out_of_scope(registry, evals.at(i).plan, gt_set)) ++rep.selected_with_oos;
  rep.oos_fraction = selected.empty() ? 0.0 : static_cast<double>(rep.selected_with_oos) / selected.size();
  for (const auto& e : evals) {
    auto& slot = uses_out_of_scope(registry, e.plan, gt_set) ? rep.oos_best_rank : rep.matched_best_rank;
    if (!slot || e.agg_rank < *slot) slot = e.agg_rank;
  }
  return rep;
}

bool has_duplicates(const Plan& plan) { return dedup_keep_first(plan).size() != plan.size(); }

Plan dedup_keep_first(const Plan& plan) {
  Plan out;
  for (auto id : plan)
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
  return out;
}

DuplicateReport analyze_duplicates(const std::vector<PlanEvaluation>& evals, const std::vector<std::size_t>& selected,
                                   std::size_t n_tools) {
  DuplicateReport rep;
  for (auto i : selected) {
    const auto& e = evals.at(i);
    if (!has_duplicates(e.plan)) continue;
    const std::size_t j = plan_index(dedup_keep_first(e.plan), n_tools);
    rep.pairs.push_back({i, j, e.agg_rank, evals.at(j).agg_rank});
  }
  if (!selected.empty()) rep.dup_fraction = static_cast<double>(rep.pairs.size()) / selected.size();
  if (!rep.pairs.empty()) {
    for (const auto& p : rep.pairs) {
      rep.mean_original_rank += p.original_rank;
      rep.mean_dedup_rank += p.dedup_rank;
    }
    rep.mean_original_rank /= rep.pairs.size();
    rep.mean_dedup_rank /= rep.pairs.size();
  }
  return rep;
}

SelectionReport analyze_input(const tools::ToolRegistry& registry, const std::vector<PlanEvaluation>& evals,
                              KindSet gt_set, double fraction) {
  SelectionReport rep;
  std::vector<Ranks> ranks(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i) ranks[i] = evals[i].ranks;
  rep.cutoff = good_cutoff(evals.size(), fraction);
  rep.selected = select_high_performing(ranks, fraction);
  rep.per_image_count = rep.selected.size();
  rep.out_of_scope = analyze_out_of_scope(registry, evals, rep.selected, gt_set);
  rep.duplicates = analyze_duplicates(evals, rep.selected, registry.size());
  return rep;
}

StudySummary summarize(const std::vector<StudyRecord>& records, std::size_t plans_per_input) {
  StudySummary s;
  s.inputs = records.size();
  s.plans_per_input = plans_per_input;
  s.plan_executions = records.size() * plans_per_input;
  std::size_t selected = 0, with_oos = 0, dup = 0, both = 0, wins = 0;
  double oos_best = 0.0, matched_best = 0.0, dup_orig = 0.0, dup_new = 0.0;
  for (const auto& r : records) {
    const auto& sel = r.selection;
    selected += sel.selected.size();
    with_oos += sel.out_of_scope.selected_with_oos;
    dup += sel.duplicates.pairs.size();
    for (const auto& p : sel.duplicates.pairs) {
      dup_orig += p.original_rank;
      dup_new += p.dedup_rank;
    }
    if (sel.out_of_scope.oos_best_rank && sel.out_of_scope.matched_best_rank) {
      ++both;
      oos_best += *sel.out_of_scope.oos_best_rank;
      matched_best += *sel.out_of_scope.matched_best_rank;
      if (*sel.out_of_scope.oos_best_rank < *sel.out_of_scope.matched_best_rank) ++wins;
    }
  }
  if (!records.empty()) s.mean_selected_per_image = static_cast<double>(selected) / records.size();
  if (selected) {
    s.oos_fraction = static_cast<double>(with_oos) / selected;
    s.dup_fraction = static_cast<double>(dup) / selected;
  }
  if (both) {
    s.oos_win_rate = static_cast<double>(wins) / both;
    s.mean_oos_best_rank = oos_best / both;
    s.mean_matched_best_rank = matched_best / both;
  }
  if (dup) {
    s.mean_dup_original_rank = dup_orig / dup;
    s.mean_dup_dedup_rank = dup_new / dup;
  }
  return s;
}

StudyResult run_study(const StudyConfig& config) {
  if (config.images < 1) throw ConfigError("study.images must be >= 1");
  const auto registry = tools::registry_by_name(config.registry);
  const auto combos = degrade::preset(config.preset).all();
  if (combos.empty()) throw ConfigError("preset '" + config.preset + "' has no combinations");

  StudyResult result;
  result.config = config;
  result.plans = enumerate_plans(registry.size(), config.max_len, config.plan_cap);

  std::vector<Image> clean(config.images);
  for (int i = 0; i < config.images; ++i) {
    Prng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    clean[i] = degrade::gen_clean(kStudyCleanKinds[i % kStudyCleanKinds.size()], config.image_size, rng);
  }

  const std::size_t n_inputs = clean.size() * combos.size();
  result.records.resize(n_inputs);
  parallel_for(n_inputs, config.workers, [&](std::size_t idx) {
    const int img = static_cast<int>(idx / combos.size());
    StudyRecord& rec = result.records[idx];
    rec.input_index = idx;
    rec.image_index = img;
    rec.clean_kind = kStudyCleanKinds[img % kStudyCleanKinds.size()];
    rec.combo = combos[idx % combos.size()];
    rec.spec = degrade::make_spec(rec.combo, derive_seed(config.seed ^ kInputSalt, idx), config.ranges);
    const auto syn = degrade::synthesize(clean[img], rec.spec, config.ranges);
    const auto metrics = evaluate_all_plans(registry, config.max_len, syn.lq, clean[img]);
    rec.evals = build_evaluations(result.plans, metrics);
    rec.selection = analyze_input(registry, rec.evals, syn.gt_set, config.top_fraction);
  });
  result.summary = summarize(result.records, result.plans.size());
  return result;
}

std::string study_report_jsonl(const StudyResult& result, const tools::ToolRegistry& registry) {
  std::string out;
  for (const auto& r : result.records) {
    const auto& sel = r.selection;
    Json pairs = Json::array();
    for (const auto& p : sel.duplicates.pairs)
      pairs.push_back(Json{{"plan_index", p.plan_index},
                           {"dedup_index", p.dedup_index},
                           {"original_agg_rank", p.original_rank},
                           {"dedup_agg_rank", p.dedup_rank}});
    Json selected_labels = Json::array();
    for (auto i : sel.selected) selected_labels.push_back(plan_label(registry, r.evals[i].plan));
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    Json rec{{"input_index", r.input_index},
             {"image_index", r.image_index},
             {"clean_kind", std::string(degrade::clean_kind_name(r.clean_kind))},
             {"gt_set", kindset_to_json(r.combo)},
             {"degradation", spec_to_json(r.spec)},
             {"n_plans", r.evals.size()},
             {"cutoff", sel.cutoff},
             {"selected", sel.selected},
             {"selected_plans", selected_labels},
             {"per_image_count", sel.per_image_count},
             {"oos_fraction", sel.out_of_scope.oos_fraction},
             {"oos_best_agg_rank", opt(sel.out_of_scope.oos_best_rank)},
             {"matched_best_agg_rank", opt(sel.out_of_scope.matched_best_rank)},
             {"dup_fraction", sel.duplicates.dup_fraction},
             {"dedup_rank_pairs", pairs}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::string plans_csv(const StudyResult& result, const tools::ToolRegistry& registry) {
  std::ostringstream ss;
  ss << "input_index,plan_index,plan,psnr,ssim,gsim,nr_sharp,nr_balance,"
        "rank_psnr,rank_ssim,rank_gsim,rank_nr_sharp,rank_nr_balance,agg_rank,selected\n";
  for (const auto& r : result.records) {
    std::vector<char> sel(r.evals.size(), 0);
    for (auto i : r.selection.selected) sel[i] = 1;
    for (std::size_t i = 0; i < r.evals.size(); ++i) {
      const auto& e = r.evals[i];
      ss << r.input_index << ',' << i << ',' << plan_label(registry, e.plan);
      for (std::size_t m = 0; m < MetricVector::kCount; ++m) ss << ',' << fmt(e.metrics[m]);
      for (int rk : e.ranks) ss << ',' << rk;
      ss << ',' << fmt(e.agg_rank) << ',' << int(sel[i]) << '\n';
    }
  }
  return ss.str();
}

std::string study_summary_json(const StudyResult& result) {
  const auto& s = result.summary;
  Json j{{"inputs", s.inputs},
         {"plans_per_input", s.plans_per_input},
         {"plan_executions", s.plan_executions},
         {"mean_selected_per_image", s.mean_selected_per_image},
         {"oos_fraction", s.oos_fraction},
         {"oos_win_rate", s.oos_win_rate},
         {"mean_oos_best_agg_rank", s.mean_oos_best_rank},
         {"mean_matched_best_agg_rank", s.mean_matched_best_rank},
         {"dup_fraction", s.dup_fraction},
         {"mean_dup_original_agg_rank", s.mean_dup_original_rank},
         {"mean_dup_dedup_agg_rank", s.mean_dup_dedup_rank}};
  return j.dump(2) + "\n";
}

}  // namespace coopir::search
