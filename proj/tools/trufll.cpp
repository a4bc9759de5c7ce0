#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "trufll/errors.hpp"
#include "trufll/harness.hpp"

namespace fs = std::filesystem;
using namespace trufll;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> trunc;
  std::optional<std::string> trunc_param;
  std::optional<long> episodes;
  std::optional<std::string> decode;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Base seed");
  cmd->add_option("--mode", f.mode, "Training mode");
  cmd->add_option("--trunc", f.trunc, "Truncation function (none, top_k, proba_thresh, top_p, sample)");
  cmd->add_option("--trunc-param", f.trunc_param, "Truncation parameter (k, threshold, p, 1/V)");
  cmd->add_option("--episodes", f.episodes, "Training episode budget");
  cmd->add_option("--decode", f.decode, "Decoding method evaluated (greedy, sampling, lm_ranking, all)");
  cmd->add_option("--out", f.out, "Output directory");
}

Json base_document(const CommonFlags& f) {
  Json doc = f.config.empty() ? Json::object() : read_json(f.config);
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  Overrides o;
  o.seed = f.seed;
  o.mode = f.mode;
  o.trunc = f.trunc;
  o.trunc_param = f.trunc_param;
  o.episodes = f.episodes;
  o.decode = f.decode;
  o.out = f.out;
  apply_overrides(doc, o);
  return doc;
}

void print_eval(const EvalReport& r) {
  std::cout << "score " << r.mean.success << "  R@5 " << r.mean.recall5 << "  BLEU " << r.mean.bleu << "  CIDEr "
            << r.mean.cider << "  ppl-t " << r.mean.ppl_task << "  ppl-e " << r.mean.ppl_ext << "  sumVA "
            << r.mean.sumva << "  self-BLEU " << r.self_bleu << "  peakiness " << r.peakiness << "\n";
}

int cmd_run(const CommonFlags& f) {
  const auto config = ExperimentConfig::from_json(base_document(f));
  std::cout << "run " << config.out << " mode " << to_string(config.trainer.mode) << " seed " << config.seed
            << " episodes " << config.trainer.episodes << std::endl;
  const auto rec = run_experiment(config, fs::path(config.out));
  print_eval(rec.eval);
  std::cout << "wrote " << config.out << " (" << rec.wall_seconds << " s)\n";
  return kOk;
}

int cmd_sweep(const CommonFlags& f, const std::string& grid, std::size_t jobs) {
  const Json base = base_document(f);
  const auto cells = grid == "preset" ? preset_grid() : grid_from_json(read_json(grid));
  const fs::path root = f.out ? fs::path(*f.out) : fs::path("runs/sweep");

  std::vector<ExperimentConfig> configs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto c = ExperimentConfig::from_json(cell_config(base, cells[i], i, root));
    c.validate();
    configs.push_back(std::move(c));
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> numeric{false};
  std::atomic<bool> failed{false};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      const auto& c = configs[i];
      try {
        const auto rec = run_experiment(c, fs::path(c.out));
        std::lock_guard lock(io);
        std::cout << cells[i].name << ": ";
        print_eval(rec.eval);
      } catch (const NumericError& e) {
        numeric = true;
        std::lock_guard lock(io);
        std::cerr << cells[i].name << ": numeric abort: " << e.what() << "\n";
      } catch (const std::exception& e) {
        failed = true;
        std::lock_guard lock(io);
        std::cerr << cells[i].name << ": " << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::max<std::size_t>(1, std::min(jobs, configs.size())); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<fs::path> dirs;
  for (const auto& c : configs) dirs.emplace_back(c.out);
  std::cout << comparison_text(compare_runs(dirs));
  if (numeric) return kNumeric;
  return failed ? kUsage : kOk;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& csv) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto rows = compare_runs(paths);
  std::cout << comparison_text(rows);
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write " + csv);
    out << comparison_csv(rows);
  }
  return kOk;
}

int cmd_eval(const std::string& run_dir, const std::optional<std::string>& decode,
             const std::optional<std::size_t>& episodes, const std::optional<std::string>& out) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) throw UsageError("not a run directory: " + run_dir);
  std::optional<EvalConfig> eval;
  if (decode || episodes) {
    auto config = ExperimentConfig::from_json(read_json(dir / "config.json"));
    eval = config.eval;
    if (decode) {
      eval->methods.clear();
      if (*decode == "all") {
        for (DecodeMethod m : all_decode_methods()) eval->methods.push_back(m);
      } else {
        eval->methods.push_back(decode_method_from_string(*decode));
      }
    }
    if (episodes) eval->episodes = *episodes;
    eval->validate();
  }
  const auto report = evaluate_run(dir, eval, out ? fs::path(*out) : dir);
  print_eval(report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Truncated-action-space RL for language generation"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "Train and evaluate one configuration");
  add_common(run, run_flags);

  CommonFlags sweep_flags;
  std::string grid = "preset";
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run every cell of a grid and compare them");
  add_common(sweep, sweep_flags);
  sweep->add_option("--grid", grid, "\"preset\" or a grid JSON file");
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  std::vector<std::string> compare_dirs;
  std::string csv;
  auto* compare = app.add_subcommand("compare", "Tabulate finished runs");
  compare->add_option("runs", compare_dirs, "Run directories")->required();
  compare->add_option("--csv", csv, "Also write the table as CSV");

  std::string eval_dir;
  std::optional<std::string> eval_decode;
  std::optional<std::size_t> eval_episodes;
  std::optional<std::string> eval_out;
  auto* evalc = app.add_subcommand("eval", "Re-evaluate a finished run");
  evalc->add_option("run", eval_dir, "Run directory")->required();
  evalc->add_option("--decode", eval_decode, "greedy, sampling, lm_ranking or all");
  evalc->add_option("--eval-episodes", eval_episodes, "Evaluation episodes");
  evalc->add_option("--out", eval_out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*sweep) return cmd_sweep(sweep_flags, grid, jobs);
    if (*compare) return cmd_compare(compare_dirs, csv);
    return cmd_eval(eval_dir, eval_decode, eval_episodes, eval_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
