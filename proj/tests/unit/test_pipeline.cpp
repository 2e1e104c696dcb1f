#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "../support/fixtures.hpp"
#include "capaint/error.hpp"
#include "capaint/pipeline/commands.hpp"

using namespace capaint;
using namespace capaint::pipeline;
using nlohmann::json;

namespace {

json tiny_config(const std::filesystem::path& out) {
  auto j = json::parse(R"({
    "seeds": [0, 1],
    "dataset": {"num_sequences": 20,
                "generator": {"height": 8, "width": 8, "frames": 6, "steps_per_frame": 5, "warmup_steps": 10}},
    "decipher": {"preview_sequences": 1, "reconstructor": {"epochs": 1}},
    "diffusion": {"num_steps": 4, "train": {"steps": 4, "log_every": 2, "probe_size": 4, "batch_size": 4}},
    "task": {"context_len": 3, "forecast_len": 3},
    "backbone": {"epochs": 1, "hidden_spatial": 4, "hidden_temporal": 8, "batch_size": 4},
    "scarcity": {"fractions": [0.5, 1.0]},
    "equal_volume": {"fraction": 0.25}
  })");
  j["output_root"] = out.string();
  return j;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value)
      ::setenv("CAPAINT_OUT", value, 1);
    else
      ::unsetenv("CAPAINT_OUT");
  }
  ~EnvGuard() { ::unsetenv("CAPAINT_OUT"); }
};

json read(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2);
}

}  // namespace

TEST_CASE("config parsing is strict and resolves sub-seeds") {
  EnvGuard env(nullptr);
  auto j = tiny_config("/tmp/x");
  const auto c = ExperimentConfig::from_json(j);
  CHECK(c.task.context_len == 3);
  CHECK(c.decipher.causal_fraction == 0.75);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK_NOTHROW(c.validate());

  // The resolved form reproduces itself, including derived seeds.
  const auto again = ExperimentConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  j["seed"] = 7;
  CHECK(ExperimentConfig::from_json(j).decipher.reconstructor.seed != c.decipher.reconstructor.seed);

  auto bad = tiny_config("/tmp/x");
  bad["typo"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = tiny_config("/tmp/x");
  bad["backbone"]["epoch"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
  bad = tiny_config("/tmp/x");
  bad["decipher"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
}

TEST_CASE("config validation rejects inconsistent settings") {
  auto base = tiny_config("/tmp/x");
  auto expect_bad = [&](const char* section, const char* key, json value) {
    auto j = base;
    j[section][key] = value;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
  };
  expect_bad("decipher", "causal_fraction", 0.0);
  expect_bad("decipher", "causal_fraction", 1.0);
  expect_bad("task", "forecast_len", 4);  // 3 + 4 > 6 frames
  expect_bad("augment", "sample_prob", 1.5);
  expect_bad("augment", "num_copies", -1);
  expect_bad("diffusion", "num_steps", 0);
  auto j = base;
  j["dataset"]["path"] = "/nonexistent/dataset";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = base;
  j["scarcity"]["fractions"] = json::array({0.0});
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
}

TEST_CASE("CAPAINT_OUT overrides the output root") {
  const auto c = ExperimentConfig::from_json(tiny_config("/tmp/configured"));
  {
    EnvGuard env(nullptr);
    CHECK(c.out_dir() == std::filesystem::path("/tmp/configured"));
  }
  EnvGuard env("/tmp/overridden");
  CHECK(c.out_dir() == std::filesystem::path("/tmp/overridden"));
}

TEST_CASE("json_hash is stable under key order") {
  CHECK(json_hash(json::parse(R"({"a":1,"b":2})")) == json_hash(json::parse(R"({"b":2,"a":1})")));
  CHECK(json_hash(json::parse(R"({"a":1})")) != json_hash(json::parse(R"({"a":2})")));
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("end-to-end pipeline on a tiny problem") {
  EnvGuard env(nullptr);
  test::TempDir dir("pipe");
  const auto config = ExperimentConfig::from_json(tiny_config(dir / "out"));
  config.validate();
  std::ostringstream log;
  Pipeline p(config, log);

  SUBCASE("report needs runs") { CHECK_THROWS_AS(p.report(), UsageError); }

  SUBCASE("stages run once and are cached afterwards") {
    const auto ws = p.full_workspace();
    CHECK(ws.train_ids.size() == 15);
    const auto g1 = p.generate();
    const auto d1 = p.decipher(ws);
    const auto a1 = p.augment(ws);
    CHECK_FALSE(a1.cached);
    CHECK(std::filesystem::exists(d1.dir / "stage.json"));
    CHECK(std::filesystem::exists(d1.dir / "config.json"));
    CHECK(std::filesystem::exists(d1.dir / "seeds.json"));
    const auto stage = read(a1.dir / "stage.json");
    CHECK(stage.at("inpaint_calls").get<std::uint64_t>() == 15u * 6u);

    Pipeline q(config, log);
    CHECK(q.generate().cached);
    CHECK(q.decipher(ws).cached);
    const auto a2 = q.augment(ws);
    CHECK(a2.cached);
    CHECK(a2.hash == a1.hash);
    CHECK(g1.hash == q.generate().hash);

    const auto r1 = p.train_predict(ws, "baseline", 0);
    const auto r2 = q.train_predict(ws, "baseline", 0);
    CHECK_FALSE(r1.cached);
    CHECK(r2.cached);
    CHECK(r1.metrics.mae == r2.metrics.mae);
    for (const char* f : {"config.json", "seeds.json", "log.jsonl", "model.ckpt", "metrics.json", "stage.json"})
      CHECK(std::filesystem::exists(r1.dir / f));

    p.train_predict(ws, "capaint", 0);
    p.train_predict(ws, "flip", 0);
    const auto report = p.report();
    CHECK(report.at("comparisons").size() == 2);
    CHECK(std::filesystem::exists(config.out_dir() / "report" / "table_capaint.csv"));
    CHECK(std::filesystem::exists(config.out_dir() / "report" / "arms.csv"));
  }

  SUBCASE("subsets are nested prefixes in split order") {
    const auto full = p.full_workspace();
    const auto half = p.subset_workspace(0.5);
    const auto quarter = p.subset_of_size(3);
    CHECK(half.train_ids.size() == 8);
    const std::set<std::string> full_set(full.train_ids.begin(), full.train_ids.end());
    const std::set<std::string> half_set(half.train_ids.begin(), half.train_ids.end());
    for (const auto& id : quarter.train_ids) CHECK(half_set.count(id) == 1);
    for (const auto& id : half.train_ids) CHECK(full_set.count(id) == 1);
    // Split order is preserved inside the subset.
    std::vector<std::string> ordered;
    for (const auto& id : full.train_ids)
      if (half_set.count(id)) ordered.push_back(id);
    CHECK(ordered == half.train_ids);
    CHECK(p.subset_workspace(1.0).root == full.root);
  }

  SUBCASE("scarcity and equal volume write their tables") {
    const auto s = p.scarcity();
    CHECK(s.at("rows").size() == 2u * 2u * 2u);
    CHECK(s.at("improvement").size() == 4u);
    CHECK(std::filesystem::exists(config.out_dir() / "scarcity" / "scarcity.csv"));

    const auto ev = p.equal_volume();
    CHECK(ev.at("original_sequences").get<std::size_t>() == 2 * ev.at("augmented_originals").get<std::size_t>());
    std::size_t aug_items = 0, ori_items = 0;
    for (const auto& run : ev.at("runs")) {
      if (run.at("arm") == "augmented") aug_items = run.at("train_items").get<std::size_t>();
      if (run.at("arm") == "original") ori_items = run.at("train_items").get<std::size_t>();
    }
    CHECK(aug_items == ori_items);
    CHECK(ev.at("runs").size() == 4u);
  }
}

TEST_CASE("run_command maps --seed and rejects bad input") {
  EnvGuard env(nullptr);
  test::TempDir dir("cmd");
  std::ostringstream log;
  write(dir / "config.json", tiny_config(dir / "out"));
  CommandOptions opts;
  opts.config_path = dir / "config.json";

  opts.seed = 5;
  run_command("train-predict", opts, log);
  CHECK(std::filesystem::exists(dir / "out" / "predict" / "baseline" / "seed_5" / "metrics.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "out" / "predict" / "baseline" / "seed_0"));

  opts.mode = "warp";
  CHECK_THROWS_AS(run_command("train-predict", opts, log), UsageError);
  opts.mode = "baseline";
  CHECK_THROWS_AS(run_command("nope", opts, log), UsageError);

  opts.config_path = dir / "missing.json";
  CHECK_THROWS_AS(run_command("generate", opts, log), ConfigError);
  {
    std::ofstream broken(dir / "broken.json");
    broken << "{ not json";
  }
  opts.config_path = dir / "broken.json";
  CHECK_THROWS_AS(run_command("generate", opts, log), ConfigError);
}
