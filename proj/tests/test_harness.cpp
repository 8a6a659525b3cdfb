#include <cstdlib>
#include <fstream>
#include <string>

#include "coopir/error.hpp"
#include "coopir/harness.hpp"
#include "coopir/io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coopir;
using namespace coopir::harness;
namespace fs = std::filesystem;
using K = DegradationKind;

namespace {

std::string slurp(const fs::path& p) { return read_file(p); }

// Every regular file under `dir` except meta.json, keyed by relative path.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "meta.json")
      out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

Json small_config() {
  Json cfg = default_config();
  cfg["study"]["images"] = 1;
  cfg["study"]["image_size"] = 32;
  cfg["study"]["max_len"] = 2;
  cfg["planner"]["iterations"] = 2;
  cfg["planner"]["batch"] = 2;
  cfg["planner"]["group_size"] = 2;
  cfg["planner"]["image_size"] = 32;
  cfg["planner"]["baseline_rollouts"] = 4;
  cfg["cotrain"]["samples"] = 3;
  cfg["cotrain"]["holdout"] = 1;
  cfg["cotrain"]["epochs"] = 2;
  cfg["cotrain"]["image_size"] = 32;
  cfg["cotrain"]["misuse_images"] = 2;
  cfg["eval"]["images_per_combo"] = 1;
  cfg["eval"]["image_size"] = 32;
  cfg["synth"]["count"] = 3;
  cfg["synth"]["image_size"] = 32;
  return merge_config(cfg);
}

void run(const std::string& command, const fs::path& dir, const Json& cfg) {
  const RunDir rd = open_run(dir, cfg, command);
  if (command == "synth") run_synth(rd, cfg);
  if (command == "study") run_study(rd, cfg);
  if (command == "train-planner") run_train_planner(rd, cfg);
  if (command == "cotrain") run_cotrain(rd, cfg);
  if (command == "eval") run_eval(rd, cfg);
  if (command == "report") run_report(rd, cfg);
  close_run(rd, command, "ok");
}

search::Plan only(const tools::ToolRegistry& reg, const char* name) { return {reg.id_of(name)}; }

}  // namespace

TEST_CASE("config merging and overrides") {
  const Json d = default_config();
  CHECK(merge_config(Json::object()) == d);
  CHECK(d["study"]["images"] == 15);
  CHECK(d["planner"]["group_size"] == 8);

  try {
    merge_config(Json{{"study", {{"imagez", 3}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("study.imagez") != std::string::npos);
    CHECK(msg.find("images") != std::string::npos);
    CHECK(msg.find("max_len") != std::string::npos);
  }
  CHECK_THROWS_AS(merge_config(Json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(merge_config(Json{{"study", {{"images", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(merge_config(Json{{"planner", {{"lr", true}}}}), ConfigError);
  CHECK_NOTHROW(merge_config(Json{{"planner", {{"lr", 1}}}}));

  Json cfg = d;
  apply_override(cfg, "study.images=3");
  apply_override(cfg, "planner.combos=[\"rain+noise\"]");
  apply_override(cfg, "study.preset=groupB");
  CHECK(cfg["study"]["images"] == 3);
  CHECK(cfg["study"]["preset"] == "groupB");
  CHECK(cfg["planner"]["combos"][0] == "rain+noise");
  CHECK_THROWS_AS(apply_override(cfg, "study.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "study.images=lots"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "noequals"), ConfigError);

  const auto dir = testing::scratch_dir("harness_cfg");
  std::ofstream(dir / "c.json") << R"({"seed": 5, "study": {"max_len": 3}})";
  const Json eff = effective_config(dir / "c.json", {"study.max_len=2"});
  CHECK(eff["seed"] == 5);
  CHECK(eff["study"]["max_len"] == 2);
  CHECK_THROWS_AS(effective_config(dir / "missing.json", {}), ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(effective_config(dir / "bad.json", {}), ConfigError);
}

TEST_CASE("typed views") {
  Json cfg = default_config();
  const auto sc = study_config(cfg);
  CHECK(sc.images == 15);
  CHECK(sc.max_len == 4);
  CHECK(sc.seed == 2024);
  const auto pc = planner_config(cfg);
  CHECK(pc.grpo.batch == 32);
  CHECK(pc.task.combos == degrade::preset("empirical8").all());
  cfg["planner"]["combos"] = Json::array({"rain+noise", "haze+noise"});
  CHECK(planner_config(cfg).task.combos.size() == 2);
  cfg["planner"]["group_size"] = 1;
  CHECK_THROWS_AS(planner_config(cfg), ConfigError);
  CHECK(cotrain_config(default_config()).schedule.total_epochs == 23);
  CHECK(parse_combo("rain+noise") == KindSet{K::rain, K::noise});
  CHECK_THROWS_AS(parse_combo("rain+fog"), ConfigError);
}

TEST_CASE("run directory and commands") {
  const Json cfg = small_config();
  const auto root = testing::scratch_dir("harness_runs");

  run("synth", root / "synth", cfg);
  CHECK(fs::exists(root / "synth" / "images" / "0002_lq.ppm"));
  const auto ds = slurp(root / "synth" / "dataset.jsonl");
  CHECK(std::count(ds.begin(), ds.end(), '\n') == 3);
  CHECK(Json::parse(slurp(root / "synth" / "config.json")) == cfg);
  const Json meta = Json::parse(slurp(root / "synth" / "meta.json"));
  CHECK(meta["status"] == "ok");
  CHECK(meta.contains("started_at"));

  run("study", root / "study", cfg);
  const auto report = slurp(root / "study" / "study_report.jsonl");
  CHECK(std::count(report.begin(), report.end(), '\n') == 8);
  CHECK(fs::exists(root / "study" / "plans.csv"));

  run("train-planner", root / "planner", cfg);
  CHECK(fs::exists(root / "planner" / "policy.bin"));
  const auto log = slurp(root / "planner" / "planner_log.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);

  run("cotrain", root / "cotrain", cfg);
  CHECK(fs::exists(root / "cotrain" / "checkpoints" / "params_epoch_001.bin"));
  CHECK(fs::exists(root / "cotrain" / "checkpoints" / "params_epoch_002.bin"));
  CHECK(fs::exists(root / "cotrain" / "params.bin"));
  const auto misuse = slurp(root / "cotrain" / "misuse.csv");
  CHECK(std::count(misuse.begin(), misuse.end(), '\n') == 11);

  Json ecfg = cfg;
  ecfg["eval"]["policy"] = (root / "planner" / "policy.bin").string();
  run("eval", root / "eval", ecfg);
  const auto eval_csv = slurp(root / "eval" / "eval.csv");
  CHECK(std::count(eval_csv.begin(), eval_csv.end(), '\n') == 5);  // header + 4 groupC combos
  const Json behavior = Json::parse(slurp(root / "eval" / "behavior.json"));
  CHECK(behavior["mean_plan_length"].size() == 3);

  Json rcfg = cfg;
  rcfg["report"]["inputs"] = Json::array({(root / "study").string(), (root / "planner").string(),
                                          (root / "cotrain").string(), (root / "eval").string()});
  run("report", root / "report", rcfg);
  const auto md = slurp(root / "report" / "report.md");
  CHECK(md.find("Finding 1") != std::string::npos);
  CHECK(md.find("Finding 2") != std::string::npos);
  CHECK(md.find("Evaluation") != std::string::npos);

  // cotrain from the trained policy instead of a fixed plan
  Json pcfg = cfg;
  pcfg["cotrain"]["registry"] = "study";
  pcfg["cotrain"]["plan"] = Json::array();
  pcfg["cotrain"]["policy"] = (root / "planner" / "policy.bin").string();
  pcfg["cotrain"]["epochs"] = 1;
  run("cotrain", root / "cotrain_policy", pcfg);
  CHECK(fs::exists(root / "cotrain_policy" / "params.bin"));
}

TEST_CASE("missing artifacts name their path") {
  Json cfg = small_config();
  const auto root = testing::scratch_dir("harness_missing");
  cfg["eval"]["policy"] = (root / "nowhere" / "policy.bin").string();
  const RunDir rd = open_run(root / "eval", cfg, "eval");
  CHECK_THROWS_WITH_AS(run_eval(rd, cfg), doctest::Contains("nowhere/policy.bin"), ConfigError);
  cfg["eval"]["policy"] = "";
  CHECK_THROWS_AS(run_eval(rd, cfg), ConfigError);
  CHECK_THROWS_AS(run_report(open_run(root / "empty", cfg, "report"), cfg), ConfigError);
  Json rcfg = cfg;
  rcfg["report"]["inputs"] = Json::array({(root / "absent").string()});
  CHECK_THROWS_WITH_AS(run_report(open_run(root / "r", rcfg, "report"), rcfg), doctest::Contains("absent"), ConfigError);
}

TEST_CASE("commands are byte-reproducible") {
  const Json cfg = small_config();
  const auto root = testing::scratch_dir("harness_repro");
  for (const char* cmd : {"study", "train-planner", "cotrain", "synth"}) {
    CAPTURE(cmd);
    run(cmd, root / (std::string(cmd) + "_a"), cfg);
    run(cmd, root / (std::string(cmd) + "_b"), cfg);
    const auto a = artifacts(root / (std::string(cmd) + "_a"));
    CHECK(a.size() >= 2);
    CHECK(a == artifacts(root / (std::string(cmd) + "_b")));
  }
}

TEST_CASE("behavior statistics") {
  const auto reg = tools::default_registry();
  std::vector<BehaviorInput> data;
  const auto combos = degrade::full_table().all();
  for (std::size_t i = 0; i < combos.size(); i += 7) data.push_back({testing::texture(32, i), combos[i]});

  const auto fixed = behavior_stats([&](const Image&) { return only(reg, "denoise_mid"); }, reg, data);
  REQUIRE(fixed.denoise_first);
  CHECK(*fixed.denoise_first == 1.0);
  for (const auto& m : fixed.mean_length) {
    REQUIRE(m);
    CHECK(*m == 1.0);
  }
  const Json j = behavior_to_json(fixed);
  CHECK(j["mean_plan_length"].size() == 3);
  CHECK(j["mean_plan_length"].contains("1"));
  CHECK(j["mean_plan_length"].contains("3"));
  CHECK(j["repetition_rate"]["denoise_mid"] == 0.0);
  CHECK(j["repetition_rate"]["dehaze"].is_null());

  Prng rng(4);
  const auto random = behavior_stats(
      [&](const Image&) {
        search::Plan p;
        const int len = rng.uniform_int(1, 6);
        for (int k = 0; k < len; ++k) p.push_back(tools::ToolId{static_cast<std::size_t>(rng.uniform_int(0, 9))});
        return p;
      },
      reg, data);
  for (auto v : {random.denoise_first, random.derain_before_dehaze})
    if (v) {
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  for (const auto& [name, r] : random.repetition)
    if (r) {
      CHECK(*r >= 0.0);
      CHECK(*r <= 1.0);
    }
  for (const auto& m : random.mean_length)
    if (m) {
      CHECK(*m >= 1.0);
      CHECK(*m <= 6.0);
    }

  // rain+haze ordering
  const std::vector<BehaviorInput> rh = {{testing::texture(32, 1), KindSet{K::rain, K::haze}}};
  const auto ordered = behavior_stats(
      [&](const Image&) { return search::Plan{reg.id_of("derain"), reg.id_of("dehaze")}; }, reg, rh);
  CHECK(*ordered.derain_before_dehaze == 1.0);
  CHECK_FALSE(ordered.denoise_first.has_value());
  const auto reversed = behavior_stats(
      [&](const Image&) { return search::Plan{reg.id_of("dehaze"), reg.id_of("derain"), reg.id_of("derain")}; }, reg,
      rh);
  CHECK(*reversed.derain_before_dehaze == 0.0);
  for (const auto& [name, r] : reversed.repetition)
    if (name == "derain") CHECK(*r == 1.0);
}

TEST_CASE("command-line exit codes") {
  const auto root = testing::scratch_dir("harness_cli");
  const std::string cli = COOPIR_CLI;
  auto rc = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  const std::string out = " --out " + (root / "x").string();
  CHECK(rc("synth --set synth.count=1 --set synth.image_size=32" + out) == 0);
  CHECK(rc("study --set study.bogus=1" + out) == 2);
  CHECK(rc("eval" + out) == 2);
  CHECK(rc("study --set study.max_len=5 --set study.plan_cap=10" + out) == 3);
  CHECK(rc("study" ) == 2);
  CHECK(rc("frobnicate" + out) == 2);
  const Json meta = Json::parse(read_file(root / "x" / "meta.json"));
  CHECK(meta["status"].get<std::string>().rfind("failed", 0) == 0);
}
