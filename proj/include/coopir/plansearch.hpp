#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coopir/degrade.hpp"
#include "coopir/metrics.hpp"
#include "coopir/tools.hpp"

namespace coopir::search {

using Plan = std::vector<tools::ToolId>;

std::string plan_label(const tools::ToolRegistry& registry, const Plan& plan);

inline constexpr std::size_t kDefaultPlanCap = 1'000'000;

// Number of plans of length 1..max_len over n tools, saturating at SIZE_MAX.
std::size_t plan_count(std::size_t n_tools, std::size_t max_len);

// All plans of length 1..max_len in shortlex order (by length, then
// lexicographically by tool index). Throws BudgetError above `cap`.
std::vector<Plan> enumerate_plans(std::size_t n_tools, std::size_t max_len, std::size_t cap = kDefaultPlanCap);

// Position of `plan` in the enumerate_plans order.
std::size_t plan_index(const Plan& plan, std::size_t n_tools);

// Left-to-right composition; an empty plan returns the input.
Image execute_plan(const tools::ToolRegistry& registry, const Plan& plan, const Image& img);

// Metrics of every enumerated plan's output against gt, indexed like
// enumerate_plans. Shared prefixes are executed once.
std::vector<MetricVector> evaluate_all_plans(const tools::ToolRegistry& registry, std::size_t max_len,
                                             const Image& lq, const Image& gt);

using Ranks = std::array<int, MetricVector::kCount>;

// Per metric, higher is better; ties go to the lower enumeration index, so each
// metric's ranks are a permutation of 1..N.
std::vector<Ranks> rank_plans(const std::vector<MetricVector>& evals);
double agg_rank(const Ranks& ranks);

struct PlanEvaluation {
  Plan plan;
  MetricVector metrics;
  Ranks ranks{};
  double agg_rank = 0.0;
};

std::vector<PlanEvaluation> build_evaluations(const std::vector<Plan>& plans, const std::vector<MetricVector>& metrics);

inline constexpr double kTopFraction = 0.10;
inline constexpr int kMinGoodMetrics = 3;

// ceil(fraction * N), never below 1.
int good_cutoff(std::size_t n_plans, double fraction = kTopFraction);

// Good on >= 3 metrics, with at least one full-reference (psnr/ssim/gsim) and
// one no-reference (nr_sharp/nr_balance) metric among them.
bool passes_selection(const Ranks& ranks, int cutoff);
std::vector<std::size_t> select_high_performing(const std::vector<Ranks>& ranks, double fraction = kTopFraction);

bool uses_out_of_scope(const tools::ToolRegistry& registry, const Plan& plan, KindSet gt_set);

struct OutOfScopeReport {
  double oos_fraction = 0.0;  // among selected plans
  std::size_t selected_with_oos = 0;
  std::optional<double> oos_best_rank;      // over all evaluated plans
  std::optional<double> matched_best_rank;  // plans using only in-scope tools
};

OutOfScopeReport analyze_out_of_scope(const tools::ToolRegistry& registry, const std::vector<PlanEvaluation>& evals,
                                      const std::vector<std::size_t>& selected, KindSet gt_set);

bool has_duplicates(const Plan& plan);
// Keeps the first occurrence of each tool, preserving order.
Plan dedup_keep_first(const Plan& plan);

struct DedupPair {
  std::size_t plan_index = 0;
  std::size_t dedup_index = 0;
  double original_rank = 0.0;
  double dedup_rank = 0.0;
};

struct DuplicateReport {
  double dup_fraction = 0.0;  // among selected plans
  std::vector<DedupPair> pairs;
  double mean_original_rank = 0.0;
  double mean_dedup_rank = 0.0;
};

DuplicateReport analyze_duplicates(const std::vector<PlanEvaluation>& evals, const std::vector<std::size_t>& selected,
                                   std::size_t n_tools);

struct SelectionReport {
  std::vector<std::size_t> selected;
  std::size_t per_image_count = 0;
  int cutoff = 0;
  OutOfScopeReport out_of_scope;
  DuplicateReport duplicates;
};

SelectionReport analyze_input(const tools::ToolRegistry& registry, const std::vector<PlanEvaluation>& evals,
                              KindSet gt_set, double fraction = kTopFraction);

struct StudyConfig {
  std::uint64_t seed = 2024;
  int images = 15;
  int image_size = 64;
  std::string preset = "empirical8";
  std::string registry = "study";
  std::size_t max_len = 4;
  std::size_t plan_cap = kDefaultPlanCap;
  double top_fraction = kTopFraction;
  int workers = 1;
  degrade::DegradationRanges ranges;
};

struct StudyRecord {
  std::size_t input_index = 0;
  int image_index = 0;
  degrade::CleanKind clean_kind = degrade::CleanKind::value_noise_texture;
  KindSet combo;
  degrade::DegradationSpec spec;
  std::vector<PlanEvaluation> evals;
  SelectionReport selection;
};

struct StudySummary {
  std::size_t inputs = 0;
  std::size_t plans_per_input = 0;
  std::size_t plan_executions = 0;
  double mean_selected_per_image = 0.0;
  double oos_fraction = 0.0;         // pooled over selected plans
  double oos_win_rate = 0.0;         // images where OOS best rank beats matched best rank
  double mean_oos_best_rank = 0.0;
  double mean_matched_best_rank = 0.0;
  double dup_fraction = 0.0;         // pooled over selected plans
  double mean_dup_original_rank = 0.0;
  double mean_dup_dedup_rank = 0.0;
};

struct StudyResult {
  StudyConfig config;
  std::vector<Plan> plans;
  std::vector<StudyRecord> records;
  StudySummary summary;
};

// Clean image i uses kind (value_noise_texture, shapes, gradient)[i % 3] and
// seed derive_seed(seed, i); input i*C + c uses derive_seed(seed ^ kInputSalt, index).
StudyResult run_study(const StudyConfig& config);

StudySummary summarize(const std::vector<StudyRecord>& records, std::size_t plans_per_input);

// Artifact writers. Field names are documented in docs/formats.md.
std::string study_report_jsonl(const StudyResult& result, const tools::ToolRegistry& registry);
std::string plans_csv(const StudyResult& result, const tools::ToolRegistry& registry);
std::string study_summary_json(const StudyResult& result);

}  // namespace coopir::search
