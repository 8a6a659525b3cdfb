#include "coopir/harness.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "coopir/error.hpp"
#include "coopir/io.hpp"

namespace coopir::harness {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSynthSalt = 0x5e17'0000'0000'0001ULL;
constexpr std::uint64_t kCotrainSalt = 0xc07a'0000'0000'0002ULL;
constexpr std::uint64_t kHoldoutSalt = 0xc07a'0000'0000'0003ULL;
constexpr std::uint64_t kMisuseSalt = 0x3150'0000'0000'0004ULL;
constexpr std::uint64_t kEvalSalt = 0xe7a1'0000'0000'0005ULL;

const std::array<degrade::CleanKind, 3> kCleanCycle = {
    degrade::CleanKind::value_noise_texture, degrade::CleanKind::shapes, degrade::CleanKind::gradient};

std::string join_keys(const Json& obj) {
  std::string s;
  for (const auto& [k, v] : obj.items()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

const char* type_label(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const Json& def, const Json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return false;
}

Json merge_into(const Json& def, const Json& user, const std::string& path) {
  if (def.is_object()) {
    if (!user.is_object()) throw ConfigError("config key '" + path + "' must be an object");
    Json out = def;
    for (const auto& [k, v] : user.items()) {
      const std::string child = path.empty() ? k : path + "." + k;
      if (!def.contains(k))
        throw ConfigError("unknown config key '" + child + "'; valid keys" +
                          (path.empty() ? std::string() : " under '" + path + "'") + ": " + join_keys(def));
      out[k] = merge_into(def[k], v, child);
    }
    return out;
  }
  if (!compatible(def, user))
    throw ConfigError("config key '" + path + "' expects " + type_label(def) + ", got " + type_label(user));
  return user;
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<KindSet> combos_from(const Json& section) {
  std::vector<KindSet> out;
  for (const auto& c : section.at("combos")) out.push_back(parse_combo(c.get<std::string>()));
  if (!out.empty()) return out;
  try {
    out = degrade::preset(section.at("preset").get<std::string>()).all();
  } catch (const ConfigError&) {
    throw;
  }
  if (out.empty()) throw ConfigError("preset '" + section.at("preset").get<std::string>() + "' has no combinations");
  return out;
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is not set");
  if (!fs::exists(p)) throw ConfigError("missing input artifact (" + what + "): " + p.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_json(const fs::path& p, const Json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

tools::ToolRegistry registry_with_params(const std::string& name, const std::string& params_path) {
  auto reg = tools::registry_by_name(name);
  if (!params_path.empty()) {
    require_file(params_path, "tool parameters");
    tools::load_params(reg, params_path);
  }
  return reg;
}

search::Plan plan_from_tokens(const planner::PlanSample& s, std::size_t stop) {
  search::Plan p;
  for (int t : s.plan_tokens(stop)) p.push_back(tools::ToolId{static_cast<std::size_t>(t)});
  return p;
}

// Minimal CSV reader for the files this program writes (no quoting).
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw FormatError("CSV column '" + name + "' not found");
  }
  double num(std::size_t row, const std::string& name) const { return std::stod(rows.at(row).at(col(name))); }
};

Csv read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  Csv csv;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
  };
  if (std::getline(in, line)) csv.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) csv.rows.push_back(split(line));
  return csv;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

Json default_config() {
  return Json{
      {"seed", 2024u},
      {"workers", 1},
      {"degradation", ranges_to_json({})},
      {"synth", {{"count", 32}, {"preset", "all"}, {"combos", Json::array()}, {"image_size", 64}}},
      {"study",
       {{"images", 15},
        {"image_size", 64},
        {"preset", "empirical8"},
        {"registry", "study"},
        {"max_len", 4},
        {"plan_cap", 1000000},
        {"top_fraction", 0.1}}},
      {"planner",
       {{"registry", "study"},
        {"preset", "empirical8"},
        {"combos", Json::array()},
        {"image_size", 64},
        {"group_size", 8},
        {"batch", 32},
        {"clip_eps", 0.2},
        {"kl_beta", 0.01},
        {"lr", 1e-3},
        {"iterations", 200},
        {"l_max", 6},
        {"std_floor", 1e-8},
        {"ref_refresh", 1},
        {"baseline_rollouts", 1000}}},
      {"cotrain",
       {{"registry", "default"},
        {"preset", "all"},
        {"combos", Json::array({"rain+noise"})},
        {"samples", 50},
        {"holdout", 10},
        {"image_size", 64},
        {"epochs", 23},
        {"lr", 1e-6},
        {"batch", 2},
        {"clip_norm", 0.5},
        {"transition_fraction", 0.3},
        {"max_skip_fraction", 0.05},
        {"plan", Json::array({"denoise_mid", "derain"})},
        {"policy", ""},
        {"params_in", ""},
        {"l_max", 6},
        {"misuse_images", 20}}},
      {"eval",
       {{"registry", "study"},
        {"preset", "groupC"},
        {"images_per_combo", 5},
        {"image_size", 64},
        {"policy", ""},
        {"params", ""},
        {"l_max", 6}}},
      {"report", {{"inputs", Json::array()}}},
  };
}

Json merge_config(const Json& user) { return merge_into(default_config(), user, ""); }

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  const Json defaults = default_config();
  const Json* def = &defaults;
  Json* node = &config;
  std::string prefix;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!def->is_object() || !def->contains(key))
      throw ConfigError("unknown config key '" + path + "'; valid keys" +
                        (prefix.empty() ? std::string() : " under '" + prefix + "'") + ": " +
                        (def->is_object() ? join_keys(*def) : std::string("(none)")));
    def = &(*def)[key];
    prefix = prefix.empty() ? key : prefix + "." + key;
    if (dot == std::string::npos) {
      // a bare word for a numeric key is a user error, not a string
      (*node)[key] = merge_into(*def, value, prefix);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

Json load_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  return j;
}

Json effective_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  Json cfg = merge_config(file ? load_config_file(*file) : Json::object());
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

KindSet parse_combo(const std::string& label) {
  KindSet set;
  std::size_t start = 0;
  while (start <= label.size()) {
    const auto plus = label.find('+', start);
    const std::string name = label.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    const auto k = kind_from_name(name);
    if (!k) throw ConfigError("unknown degradation kind '" + name + "' in combo '" + label + "'");
    set.insert(*k);
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return set;
}

degrade::DegradationRanges ranges_config(const Json& cfg) { return ranges_from_json(cfg.at("degradation")); }

search::StudyConfig study_config(const Json& cfg) {
  const Json& s = cfg.at("study");
  search::StudyConfig c;
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.workers = cfg.at("workers").get<int>();
  c.images = s.at("images").get<int>();
  c.image_size = s.at("image_size").get<int>();
  c.preset = s.at("preset").get<std::string>();
  c.registry = s.at("registry").get<std::string>();
  c.max_len = s.at("max_len").get<std::size_t>();
  c.plan_cap = s.at("plan_cap").get<std::size_t>();
  c.top_fraction = s.at("top_fraction").get<double>();
  c.ranges = ranges_config(cfg);
  if (c.max_len < 1) throw ConfigError("study.max_len must be >= 1");
  if (!(c.top_fraction > 0.0 && c.top_fraction <= 1.0)) throw ConfigError("study.top_fraction must lie in (0, 1]");
  return c;
}

planner::PlannerConfig planner_config(const Json& cfg) {
  const Json& p = cfg.at("planner");
  planner::PlannerConfig c;
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.workers = cfg.at("workers").get<int>();
  c.grpo.group_size = p.at("group_size").get<int>();
  c.grpo.batch = p.at("batch").get<int>();
  c.grpo.clip_eps = p.at("clip_eps").get<double>();
  c.grpo.kl_beta = p.at("kl_beta").get<double>();
  c.grpo.lr = p.at("lr").get<double>();
  c.grpo.iterations = p.at("iterations").get<int>();
  c.grpo.l_max = p.at("l_max").get<int>();
  c.grpo.std_floor = p.at("std_floor").get<double>();
  c.grpo.ref_refresh = p.at("ref_refresh").get<int>();
  c.baseline_rollouts = p.at("baseline_rollouts").get<int>();
  c.task.registry = p.at("registry").get<std::string>();
  c.task.preset = p.at("preset").get<std::string>();
  c.task.combos = combos_from(p);
  c.task.image_size = p.at("image_size").get<int>();
  c.task.ranges = ranges_config(cfg);
  planner::validate(c.grpo);
  return c;
}

cotrain::CotrainConfig cotrain_config(const Json& cfg) {
  const Json& t = cfg.at("cotrain");
  cotrain::CotrainConfig c;
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.schedule.total_epochs = t.at("epochs").get<int>();
  c.schedule.transition_fraction = t.at("transition_fraction").get<double>();
  c.batch = t.at("batch").get<int>();
  c.lr = t.at("lr").get<double>();
  c.clip_norm = t.at("clip_norm").get<double>();
  c.max_skip_fraction = t.at("max_skip_fraction").get<double>();
  if (c.schedule.total_epochs < 1) throw ConfigError("cotrain.epochs must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// run directory

RunDir open_run(const fs::path& root, const Json& cfg, const std::string& command) {
  RunDir run{root};
  fs::create_directories(root);
  write_json(run.file("config.json"), cfg);
  write_json(run.file("meta.json"), Json{{"command", command}, {"started_at", now_utc()}, {"status", "running"}});
  return run;
}

void close_run(const RunDir& run, const std::string& command, const std::string& status) {
  Json meta = Json::object();
  if (fs::exists(run.file("meta.json"))) {
    meta = Json::parse(read_file(run.file("meta.json")), nullptr, false);
    if (meta.is_discarded()) meta = Json::object();
  }
  meta["command"] = command;
  meta["finished_at"] = now_utc();
  meta["status"] = status;
  write_json(run.file("meta.json"), meta);
}

// ---------------------------------------------------------------------------
// commands

void run_synth(const RunDir& run, const Json& cfg) {
  const Json& s = cfg.at("synth");
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const int count = s.at("count").get<int>();
  const int size = s.at("image_size").get<int>();
  const auto ranges = ranges_config(cfg);
  if (count < 1) throw ConfigError("synth.count must be >= 1");
  degrade::ComboTable table;
  if (!s.at("combos").empty()) {
    table.singles = combos_from(s);
    table.weights = {1.0, 0.0, 0.0};
  } else {
    table = degrade::preset(s.at("preset").get<std::string>());
  }
  fs::create_directories(run.images());
  std::string index;
  for (int i = 0; i < count; ++i) {
    Prng rng(derive_seed(seed ^ kSynthSalt, static_cast<std::uint64_t>(i)));
    const auto kind = kCleanCycle[i % kCleanCycle.size()];
    const Image clean = degrade::gen_clean(kind, size, rng);
    const KindSet combo = degrade::sample_combo(table, rng);
    const auto spec = degrade::make_spec(combo, rng.next_u64(), ranges);
    const auto syn = degrade::synthesize(clean, spec, ranges);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04d", i);
    save_image(clean, run.images() / (std::string(stem) + "_gt.opimg"));
    save_image(syn.lq, run.images() / (std::string(stem) + "_lq.opimg"));
    save_ppm(syn.lq, run.images() / (std::string(stem) + "_lq.ppm"));
    Json rec{{"index", i},
             {"gt", "images/" + std::string(stem) + "_gt.opimg"},
             {"lq", "images/" + std::string(stem) + "_lq.opimg"},
             {"clean_kind", std::string(degrade::clean_kind_name(kind))},
             {"gt_set", kindset_to_json(syn.gt_set)},
             {"degradation", spec_to_json(spec)}};
    index += rec.dump() + "\n";
  }
  write_file_atomic(run.file("dataset.jsonl"), index);
}

void run_study(const RunDir& run, const Json& cfg) {
  const auto sc = study_config(cfg);
  const auto result = search::run_study(sc);
  const auto registry = tools::registry_by_name(sc.registry);
  write_file_atomic(run.file("study_report.jsonl"), search::study_report_jsonl(result, registry));
  write_file_atomic(run.file("plans.csv"), search::plans_csv(result, registry));
  write_file_atomic(run.file("study_summary.json"), search::study_summary_json(result));
}

void run_train_planner(const RunDir& run, const Json& cfg) {
  const auto pc = planner_config(cfg);
  const auto result = planner::train_planner(pc);
  write_file_atomic(run.file("planner_log.csv"), planner::planner_log_csv(result.log));
  planner::save_policy(result.policy, run.file("policy.bin"));

  const std::size_t n = result.log.size(), k = std::min<std::size_t>(50, n);
  double first = 0.0, last = 0.0, rd_first = 0.0, rd_last = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    first += result.log[i].diag.mean_reward;
    rd_first += result.log[i].diag.mean_rd;
    last += result.log[n - 1 - i].diag.mean_reward;
    rd_last += result.log[n - 1 - i].diag.mean_rd;
  }
  const auto& b = result.random_baseline;
  Json summary{{"iterations", n},
               {"window", k},
               {"first_window_mean_reward", k ? first / k : 0.0},
               {"last_window_mean_reward", k ? last / k : 0.0},
               {"first_window_mean_rd", k ? rd_first / k : 0.0},
               {"last_window_mean_rd", k ? rd_last / k : 0.0},
               {"random_baseline",
                {{"rollouts", b.rollouts},
                 {"mean_reward", b.mean_reward},
                 {"mean_rq", b.mean_rq},
                 {"mean_rd", b.mean_rd},
                 {"rf_rate", b.rf_rate}}}};
  write_json(run.file("planner_summary.json"), summary);
}

namespace {

std::vector<cotrain::TrainSample> cotrain_samples(const Json& cfg, const tools::ToolRegistry& registry, int count,
                                                  std::uint64_t salt) {
  const Json& t = cfg.at("cotrain");
  planner::PlannerTask task;
  task.registry = t.at("registry").get<std::string>();
  task.image_size = t.at("image_size").get<int>();
  task.ranges = ranges_config(cfg);
  const auto combos = combos_from(t);
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  std::vector<cotrain::TrainSample> out;
  std::vector<Image> inputs;
  for (int i = 0; i < count; ++i) {
    const auto pr = planner::make_prompt(task, combos, derive_seed(seed ^ salt, static_cast<std::uint64_t>(i)));
    out.push_back({pr.lq, pr.clean, {}});
    inputs.push_back(pr.lq);
  }

  if (!t.at("plan").empty()) {
    search::Plan plan;
    for (const auto& name : t.at("plan")) {
      const auto id = registry.find(name.get<std::string>());
      if (!id) throw ConfigError("cotrain.plan names unknown tool '" + name.get<std::string>() + "'");
      plan.push_back(*id);
    }
    for (auto& s : out) s.plan = plan;
  } else {
    const fs::path policy_path = t.at("policy").get<std::string>();
    require_file(policy_path, "cotrain.policy");
    const auto policy = planner::load_policy(policy_path);
    if (policy.n_tools() != registry.size())
      throw ConfigError("policy has " + std::to_string(policy.n_tools()) + " tools but registry '" +
                        t.at("registry").get<std::string>() + "' has " + std::to_string(registry.size()));
    const auto plans = cotrain::plans_from_policy(policy, inputs, t.at("l_max").get<int>());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].plan = plans[i];
  }
  return out;
}

double mean_psnr(const tools::ToolRegistry& reg, const std::vector<cotrain::TrainSample>& data) {
  if (data.empty()) return 0.0;
  double s = 0.0;
  for (const auto& d : data) s += psnr(search::execute_plan(reg, d.plan, d.lq), d.gt);
  return s / static_cast<double>(data.size());
}

}  // namespace

void run_cotrain(const RunDir& run, const Json& cfg) {
  const Json& t = cfg.at("cotrain");
  const auto cc = cotrain_config(cfg);
  auto registry = registry_with_params(t.at("registry").get<std::string>(), t.at("params_in").get<std::string>());
  const auto before = registry;
  const auto data = cotrain_samples(cfg, registry, t.at("samples").get<int>(), kCotrainSalt);
  const auto holdout = cotrain_samples(cfg, registry, t.at("holdout").get<int>(), kHoldoutSalt);

  fs::create_directories(run.checkpoints());
  const auto logs = cotrain::train_tools(registry, data, cc, [&](const cotrain::EpochLog& log, const tools::ToolRegistry& r) {
    char name[48];
    std::snprintf(name, sizeof name, "params_epoch_%03d.bin", log.epoch);
    tools::save_params(r, run.checkpoints() / name);
  });
  tools::save_params(registry, run.file("params.bin"));
  write_file_atomic(run.file("cotrain_log.csv"), cotrain::cotrain_log_csv(logs));

  std::vector<Image> clean;
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  for (int i = 0; i < t.at("misuse_images").get<int>(); ++i) {
    Prng rng(derive_seed(seed ^ kMisuseSalt, static_cast<std::uint64_t>(i)));
    clean.push_back(degrade::gen_clean(kCleanCycle[i % kCleanCycle.size()], t.at("image_size").get<int>(), rng));
  }
  write_file_atomic(run.file("misuse.csv"), cotrain::misuse_csv(cotrain::misuse_eval(before, registry, clean)));

  Json summary{{"epochs", logs.size()},
               {"first_epoch_target_loss", logs.front().mean_target_loss},
               {"last_epoch_target_loss", logs.back().mean_target_loss},
               {"first_epoch_loss", logs.front().mean_loss},
               {"last_epoch_loss", logs.back().mean_loss},
               {"holdout_samples", holdout.size()},
               {"holdout_psnr_before", mean_psnr(before, holdout)},
               {"holdout_psnr_after", mean_psnr(registry, holdout)}};
  write_json(run.file("cotrain_summary.json"), summary);
}

void run_eval(const RunDir& run, const Json& cfg) {
  const Json& e = cfg.at("eval");
  const auto registry = registry_with_params(e.at("registry").get<std::string>(), e.at("params").get<std::string>());
  const fs::path policy_path = e.at("policy").get<std::string>();
  require_file(policy_path, "eval.policy");
  const auto policy = planner::load_policy(policy_path);
  if (policy.n_tools() != registry.size())
    throw ConfigError("policy has " + std::to_string(policy.n_tools()) + " tools but registry '" +
                      e.at("registry").get<std::string>() + "' has " + std::to_string(registry.size()));
  const int l_max = e.at("l_max").get<int>();
  const int per = e.at("images_per_combo").get<int>();
  if (per < 1) throw ConfigError("eval.images_per_combo must be >= 1");
  const auto combos = degrade::preset(e.at("preset").get<std::string>()).all();
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  planner::PlannerTask task;
  task.image_size = e.at("image_size").get<int>();
  task.ranges = ranges_config(cfg);

  auto plan_for = [&](const Image& lq) {
    return plan_from_tokens(planner::greedy_plan(policy, planner::featurize(lq), l_max), policy.stop_token());
  };

  std::ostringstream csv;
  csv << "combo,images,psnr,ssim,gsim,nr_sharp,nr_balance,mean_plan_length\n";
  std::vector<BehaviorInput> behavior_data;
  MetricVector overall{};
  double overall_len = 0.0;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    std::array<double, MetricVector::kCount> acc{};
    double len = 0.0;
    for (int j = 0; j < per; ++j) {
      const auto pr = planner::make_prompt(task, {combos[c]}, derive_seed(seed ^ kEvalSalt, c * per + j));
      const auto plan = plan_for(pr.lq);
      const auto m = evaluate_metrics(search::execute_plan(registry, plan, pr.lq), pr.clean);
      for (int k = 0; k < MetricVector::kCount; ++k) acc[k] += m[k];
      len += static_cast<double>(plan.size());
      behavior_data.push_back({pr.lq, pr.gt_set});
    }
    csv << combos[c].label() << ',' << per;
    for (int k = 0; k < MetricVector::kCount; ++k) csv << ',' << fmt(acc[k] / per);
    csv << ',' << fmt(len / per) << '\n';
    overall.psnr += acc[0];
    overall.ssim += acc[1];
    overall.gsim += acc[2];
    overall.nr_sharp += acc[3];
    overall.nr_balance += acc[4];
    overall_len += len;
  }
  write_file_atomic(run.file("eval.csv"), csv.str());
  const double n = static_cast<double>(combos.size() * per);
  write_json(run.file("eval_summary.json"), Json{{"preset", e.at("preset")},
                                                 {"images", combos.size() * per},
                                                 {"psnr", overall.psnr / n},
                                                 {"ssim", overall.ssim / n},
                                                 {"gsim", overall.gsim / n},
                                                 {"nr_sharp", overall.nr_sharp / n},
                                                 {"nr_balance", overall.nr_balance / n},
                                                 {"mean_plan_length", overall_len / n}});
  write_json(run.file("behavior.json"), behavior_to_json(behavior_stats(plan_for, registry, behavior_data)));
}

void run_report(const RunDir& run, const Json& cfg) {
  std::vector<fs::path> inputs;
  for (const auto& p : cfg.at("report").at("inputs")) inputs.emplace_back(p.get<std::string>());
  if (inputs.empty()) inputs.push_back(run.root);

  std::ostringstream md;
  Json out = Json::object();
  md << "# Run report\n";
  int sections = 0;
  for (const auto& dir : inputs) {
    if (!fs::is_directory(dir)) throw ConfigError("missing input artifact (report input directory): " + dir.string());
    md << "\n## " << dir.string() << "\n";
    Json entry = Json::object();

    if (fs::exists(dir / "study_summary.json")) {
      const Json s = Json::parse(read_file(dir / "study_summary.json"));
      entry["study"] = s;
      md << "\n### Plan study\n\n"
         << "Inputs: " << s.at("inputs") << ", plans per input: " << s.at("plans_per_input")
         << ", mean selected per image: " << fixed(s.at("mean_selected_per_image").get<double>(), 2) << "\n\n"
         << "| Finding 1: out-of-scope tools | value |\n|---|---|\n"
         << "| selected plans with an out-of-scope tool | " << fixed(100 * s.at("oos_fraction").get<double>(), 1)
         << "% |\n"
         << "| images where an out-of-scope plan ranks best | " << fixed(100 * s.at("oos_win_rate").get<double>(), 1)
         << "% |\n"
         << "| mean best agg. rank, out-of-scope plans | " << fixed(s.at("mean_oos_best_agg_rank").get<double>(), 1)
         << " |\n"
         << "| mean best agg. rank, matched plans | " << fixed(s.at("mean_matched_best_agg_rank").get<double>(), 1)
         << " |\n\n"
         << "| Finding 2: repeated tools | value |\n|---|---|\n"
         << "| selected plans with a repeated tool | " << fixed(100 * s.at("dup_fraction").get<double>(), 1) << "% |\n"
         << "| mean agg. rank, original | " << fixed(s.at("mean_dup_original_agg_rank").get<double>(), 1) << " |\n"
         << "| mean agg. rank, de-duplicated | " << fixed(s.at("mean_dup_dedup_agg_rank").get<double>(), 1)
         << " |\n";
      ++sections;
    }
    if (fs::exists(dir / "planner_log.csv")) {
      const Csv log = read_csv(dir / "planner_log.csv");
      const std::size_t n = log.rows.size(), k = std::min<std::size_t>(50, n);
      double first = 0, last = 0, rd0 = 0, rd1 = 0;
      for (std::size_t i = 0; i < k; ++i) {
        first += log.num(i, "mean_reward");
        rd0 += log.num(i, "mean_rd");
        last += log.num(n - 1 - i, "mean_reward");
        rd1 += log.num(n - 1 - i, "mean_rd");
      }
      Json p{{"iterations", n}, {"window", k}};
      if (k) {
        p["first_window_mean_reward"] = first / k;
        p["last_window_mean_reward"] = last / k;
        p["first_window_mean_rd"] = rd0 / k;
        p["last_window_mean_rd"] = rd1 / k;
      }
      entry["planner"] = p;
      md << "\n### Planner training\n\n| window | mean reward | mean Rd |\n|---|---|---|\n";
      if (k) {
        md << "| first " << k << " | " << fixed(first / k, 4) << " | " << fixed(rd0 / k, 4) << " |\n";
        md << "| last " << k << " | " << fixed(last / k, 4) << " | " << fixed(rd1 / k, 4) << " |\n";
      }
      ++sections;
    }
    if (fs::exists(dir / "cotrain_log.csv")) {
      const Csv log = read_csv(dir / "cotrain_log.csv");
      md << "\n### Tool co-training\n\n| epoch | loss | loss at target weights | skipped |\n|---|---|---|---|\n";
      Json rows = Json::array();
      for (std::size_t i = 0; i < log.rows.size(); ++i) {
        md << "| " << log.rows[i][log.col("epoch")] << " | " << fixed(log.num(i, "mean_loss"), 5) << " | "
           << fixed(log.num(i, "mean_target_loss"), 5) << " | " << log.rows[i][log.col("skip_count")] << " |\n";
        rows.push_back({{"epoch", std::stoi(log.rows[i][log.col("epoch")])},
                        {"mean_loss", log.num(i, "mean_loss")},
                        {"mean_target_loss", log.num(i, "mean_target_loss")}});
      }
      entry["cotrain"] = rows;
      ++sections;
    }
    if (fs::exists(dir / "eval.csv")) {
      const Csv ev = read_csv(dir / "eval.csv");
      md << "\n### Evaluation\n\n| combo | PSNR | SSIM | GSIM | NR-sharp | NR-balance | plan length |\n"
         << "|---|---|---|---|---|---|---|\n";
      Json rows = Json::array();
      for (std::size_t i = 0; i < ev.rows.size(); ++i) {
        md << "| " << ev.rows[i][0] << " | " << fixed(ev.num(i, "psnr"), 2) << " | " << fixed(ev.num(i, "ssim"), 4)
           << " | " << fixed(ev.num(i, "gsim"), 4) << " | " << fixed(ev.num(i, "nr_sharp"), 4) << " | "
           << fixed(ev.num(i, "nr_balance"), 4) << " | " << fixed(ev.num(i, "mean_plan_length"), 2) << " |\n";
        rows.push_back({{"combo", ev.rows[i][0]}, {"psnr", ev.num(i, "psnr")}, {"ssim", ev.num(i, "ssim")}});
      }
      entry["eval"] = rows;
      ++sections;
    }
    out[dir.string()] = entry;
  }
  if (sections == 0)
    throw ConfigError(
        "report found no artifacts (study_summary.json, planner_log.csv, cotrain_log.csv, eval.csv) in the input "
        "directories");
  write_file_atomic(run.file("report.md"), md.str());
  write_json(run.file("report.json"), out);
}

// ---------------------------------------------------------------------------
// behavior

BehaviorStats behavior_stats(const PlanFn& plan_for, const tools::ToolRegistry& registry,
                             const std::vector<BehaviorInput>& data) {
  BehaviorStats st;
  int noise_n = 0, noise_hit = 0, rh_n = 0, rh_hit = 0;
  std::vector<int> used(registry.size(), 0), repeated(registry.size(), 0);
  std::array<double, 3> len_sum{};
  std::array<int, 3> len_n{};
  for (const auto& d : data) {
    const auto plan = plan_for(d.lq);
    auto target = [&](tools::ToolId id) { return registry.at(id).target; };
    if (d.gt_set.contains(DegradationKind::noise)) {
      ++noise_n;
      if (!plan.empty() && target(plan.front()) == DegradationKind::noise) ++noise_hit;
    }
    if (d.gt_set.contains(DegradationKind::rain) && d.gt_set.contains(DegradationKind::haze)) {
      ++rh_n;
      int first_rain = -1, first_haze = -1;
      for (std::size_t i = 0; i < plan.size(); ++i) {
        if (target(plan[i]) == DegradationKind::rain && first_rain < 0) first_rain = static_cast<int>(i);
        if (target(plan[i]) == DegradationKind::haze && first_haze < 0) first_haze = static_cast<int>(i);
      }
      if (first_rain >= 0 && first_haze >= 0 && first_rain < first_haze) ++rh_hit;
    }
    std::vector<int> counts(registry.size(), 0);
    for (auto id : plan) ++counts[id.index];
    for (std::size_t t = 0; t < counts.size(); ++t) {
      if (counts[t] > 0) ++used[t];
      if (counts[t] > 1) ++repeated[t];
    }
    const int n = d.gt_set.size();
    if (n >= 1 && n <= 3) {
      len_sum[n - 1] += static_cast<double>(plan.size());
      ++len_n[n - 1];
    }
  }
  if (noise_n) st.denoise_first = static_cast<double>(noise_hit) / noise_n;
  if (rh_n) st.derain_before_dehaze = static_cast<double>(rh_hit) / rh_n;
  for (std::size_t t = 0; t < registry.size(); ++t) {
    std::optional<double> r;
    if (used[t]) r = static_cast<double>(repeated[t]) / used[t];
    st.repetition.emplace_back(registry.at(tools::ToolId{t}).name, r);
  }
  for (int i = 0; i < 3; ++i)
    if (len_n[i]) st.mean_length[i] = len_sum[i] / len_n[i];
  return st;
}

Json behavior_to_json(const BehaviorStats& st) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json rep = Json::object();
  for (const auto& [name, v] : st.repetition) rep[name] = opt(v);
  return Json{{"denoise_first", opt(st.denoise_first)},
              {"derain_before_dehaze", opt(st.derain_before_dehaze)},
              {"repetition_rate", rep},
              {"mean_plan_length", {{"1", opt(st.mean_length[0])},
                                    {"2", opt(st.mean_length[1])},
                                    {"3", opt(st.mean_length[2])}}}};
}

}  // namespace coopir::harness
