#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "trufll/errors.hpp"
#include "trufll/harness.hpp"

using namespace trufll;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("trufll_test_harness_" + name);
  fs::remove_all(d);
  return d;
}

// A cheap but complete experiment document.
Json small_doc(const std::string& mode, long episodes) {
  return Json{{"mode", mode},
              {"seed", 5},
              {"language_models", {{"corpus_size", 2000}}},
              {"pretrain", {{"examples", 300}, {"epochs", 1}}},
              {"trainer", {{"episodes", episodes}}},
              {"eval", {{"episodes", 40}, {"diversity_samples", 3}, {"ranking_samples", 3}}}};
}

}  // namespace

TEST_CASE("config round-trips through JSON for every mode") {
  for (Mode m : all_modes()) {
    const auto c = ExperimentConfig::for_mode(m);
    const Json j = c.to_json();
    const auto back = ExperimentConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.trainer.mode == m);
  }
}

TEST_CASE("partial documents keep mode defaults") {
  const auto c = ExperimentConfig::from_json(Json{{"mode", "trufll_task"}, {"truncation", {{"block_eos_at_start", false}}}});
  const auto d = ExperimentConfig::for_mode(Mode::TrufllTask);
  CHECK(c.trainer.trunc.kind == d.trainer.trunc.kind);
  CHECK(c.trainer.trunc.param_text() == d.trainer.trunc.param_text());
  CHECK_FALSE(c.trainer.trunc.block_eos_at_start);
  CHECK(c.trainer.lr == d.trainer.lr);
}

TEST_CASE("bad documents are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"mdoe", "scratch"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"trainer", {{"learning_rate", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"trainer", {{"lr", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"mode", "nope"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"truncation", {{"kind", "top_k"}, {"param", "0"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"eval", {{"episodes", 0}}}}), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"trainer", {{"episodes", -1}}}}), ConfigError);
}

TEST_CASE("command-line overrides") {
  Json doc = Json::object();
  Overrides o;
  o.seed = 9;
  o.mode = "trufll_ext";
  o.trunc = "top_k";
  o.trunc_param = "20";
  o.episodes = 640;
  o.decode = "greedy";
  o.out = "somewhere";
  apply_overrides(doc, o);
  const auto c = ExperimentConfig::from_json(doc);
  CHECK(c.seed == 9);
  CHECK(c.trainer.mode == Mode::TrufllExt);
  CHECK(c.trainer.trunc.kind == TruncKind::TopK);
  CHECK(c.trainer.trunc.param_text() == "20");
  CHECK(c.trainer.episodes == 640);
  REQUIRE(c.eval.methods.size() == 1);
  CHECK(c.eval.methods[0] == DecodeMethod::Greedy);
  CHECK(c.out == "somewhere");

  Json none = Json::object();
  Overrides n;
  n.trunc = "none";
  apply_overrides(none, n);
  CHECK(ExperimentConfig::from_json(none).trainer.trunc.kind == TruncKind::None);

  for (const auto& [kind, param] : std::vector<std::pair<std::string, std::string>>{
           {"top_k", "10"}, {"proba_thresh", "0.05"}, {"top_p", "0.9"}, {"sample", "20"}}) {
    Json d = Json::object();
    Overrides k;
    k.mode = "trufll_task";
    k.trunc = kind;
    apply_overrides(d, k);
    CHECK(ExperimentConfig::from_json(d).trainer.trunc.param_text() == param);
  }

  Json all = Json::object();
  Overrides a;
  a.decode = "all";
  apply_overrides(all, a);
  CHECK(ExperimentConfig::from_json(all).eval.methods.size() == 3);

  Json bad = Json::object();
  Overrides b;
  b.decode = "beam";
  CHECK_THROWS(apply_overrides(bad, b));
}

TEST_CASE("sweep grids") {
  const auto preset = preset_grid();
  CHECK(preset.size() == 9);
  for (std::size_t i = 0; i < preset.size(); ++i) {
    const Json doc = cell_config(Json{{"mode", "trufll_task"}, {"seed", 100}}, preset[i], i, "root");
    const auto c = ExperimentConfig::from_json(doc);
    CHECK(c.seed == 100 + i);
    CHECK(c.trainer.trunc.kind != TruncKind::None);
    CHECK(fs::path(c.out).parent_path() == fs::path("root"));
  }

  const auto axes = grid_from_json(Json{{"axes", {{"trainer.lr", {1e-3, 1e-2}}, {"truncation.param", {"10", "20"}}}}});
  REQUIRE(axes.size() == 4);
  CHECK(axes[0].name == "lr=0.001_param=10");
  CHECK(axes[1].name == "lr=0.001_param=20");
  CHECK(axes[3].name == "lr=0.01_param=20");
  const auto c3 = ExperimentConfig::from_json(
      cell_config(Json{{"mode", "trufll_task"}, {"truncation", {{"kind", "top_k"}}}}, axes[3], 3, "r"));
  CHECK(c3.trainer.lr == doctest::Approx(1e-2));
  CHECK(c3.trainer.trunc.param_text() == "20");
  CHECK(c3.seed == 3);

  const auto cells = grid_from_json(Json{{"cells", {{{"name", "a"}, {"set", {{"trainer.lr", 0.5}}}}}}});
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].name == "a");
  CHECK_THROWS_AS(grid_from_json(Json{{"rows", 1}}), ConfigError);
  CHECK_THROWS_AS(grid_from_json(Json{{"axes", {{"trainer.lr", Json::array()}}}}), ConfigError);
}

TEST_CASE("zero-budget run writes a complete, valid run directory") {
  const fs::path dir = scratch_dir("zero");
  const auto config = ExperimentConfig::from_json(small_doc("trufll_task", 0));
  const auto rec = run_experiment(config, dir);
  CHECK(rec.train.updates.empty());
  for (const char* f : {"config.json", "metrics.jsonl", "params.bin", "eval.json", "samples.tsv", "run_record.json"})
    CHECK(fs::exists(dir / f));
  CHECK(slurp(dir / "metrics.jsonl").empty());
  const Json ev = read_json(dir / "eval.json");
  CHECK(ev["episodes"] == 40);
  CHECK(ev["methods"].size() == 3);
  for (const char* k : {"success", "recall5", "bleu", "cider", "ppl_task", "ppl_ext", "sumva", "self_bleu", "peakiness"}) {
    REQUIRE(ev.contains(k));
    CHECK(std::isfinite(ev[k].get<double>()));
  }
  CHECK(ev["success"].get<double>() >= 0.0);
  CHECK(ev["success"].get<double>() <= 1.0);
  CHECK(ev["sumva"].get<double>() == doctest::Approx(1.0));
  CHECK(ExperimentConfig::from_json(read_json(dir / "config.json")).to_json() == config.to_json());

  // One row per context and method.
  std::istringstream tsv(slurp(dir / "samples.tsv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(tsv, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
  }
  CHECK(rows == 40 * 3);

  // Re-evaluation reproduces the stored report.
  const auto re = evaluate_run(dir, std::nullopt, dir / "re");
  CHECK(slurp(dir / "re" / "eval.json") == slurp(dir / "eval.json"));
  CHECK(re.mean.success == rec.eval.mean.success);
  fs::remove_all(dir);
}

TEST_CASE("pretrain-only mode skips reinforcement learning") {
  const auto config = ExperimentConfig::from_json(small_doc("pretrain", 1000));
  const auto rec = run_experiment(config, std::nullopt);
  CHECK(rec.train.updates.empty());
  REQUIRE(rec.pretrain_losses.size() == 2);
  CHECK(rec.pretrain_losses[1] < rec.pretrain_losses[0]);
}

TEST_CASE("runs are deterministic per seed") {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  const auto config = ExperimentConfig::from_json(small_doc("trufll_task", 256));
  run_experiment(config, a);
  run_experiment(config, b);
  const std::string ma = slurp(a / "metrics.jsonl");
  CHECK(std::count(ma.begin(), ma.end(), '\n') == 2);
  CHECK(ma == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "eval.json") == slurp(b / "eval.json"));
  CHECK(slurp(a / "params.bin") == slurp(b / "params.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("comparison marks missing evaluations incomplete") {
  const fs::path root = scratch_dir("cmp");
  const auto config = ExperimentConfig::from_json(small_doc("scratch", 0));
  run_experiment(config, root / "done");
  fs::create_directories(root / "pending");
  const auto rows = compare_runs({root / "done", root / "pending"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].complete);
  CHECK(rows[0].mode == "scratch");
  CHECK(rows[0].values.size() == comparison_columns().size());
  CHECK_FALSE(rows[1].complete);
  const std::string csv = comparison_csv(rows);
  CHECK(csv.find("incomplete") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(comparison_text(rows).find("pending") != std::string::npos);
  fs::remove_all(root);
}
