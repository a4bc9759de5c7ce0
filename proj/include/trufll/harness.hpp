#pragma once

// Experiment orchestration: configuration, the build-train-evaluate pipeline,
// run artifacts, run comparison and parameter sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trufll/env.hpp"
#include "trufll/eval.hpp"
#include "trufll/lang.hpp"
#include "trufll/policy.hpp"
#include "trufll/rl.hpp"

namespace trufll {

using Json = nlohmann::json;

extern const char* const kCodeVersion;

struct LmConfig {
  std::size_t corpus_size = 20000;
  int order = 3;
  double smoothing = 0.1;
};

struct PretrainConfig {
  std::size_t examples = 10000;
  int epochs = 5;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double grad_clip = 1.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  TrainerConfig trainer;
  EnvConfig env;
  PolicyDims policy;
  LmConfig lms;
  PretrainConfig pretrain;
  EvalConfig eval;
  std::string out = "runs/run";

  // Mode defaults for every trainer field; the rest keeps struct defaults.
  static ExperimentConfig for_mode(Mode mode);
  // Starts from for_mode(json["mode"]) and applies the keys present. Unknown
  // keys and ill-typed values raise ConfigError.
  static ExperimentConfig from_json(const Json& j);
  // Complete, normalized form: from_json(to_json()) reproduces the config.
  Json to_json() const;
  void validate() const;
};

// Reads a JSON file into a document; ConfigError on parse failure.
Json read_json(const std::filesystem::path& path);

// Command-line overrides applied to a config document before parsing.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> trunc;
  std::optional<std::string> trunc_param;
  std::optional<long> episodes;
  // A decoding method name or "all".
  std::optional<std::string> decode;
  std::optional<std::string> out;
};
void apply_overrides(Json& doc, const Overrides& o);

// Grammars, vocabulary, environment and both language models for a config.
struct Workspace {
  Grammar task_grammar;
  Grammar external_grammar;
  Vocabulary vocab;
  SynthQA env;
  NGramModel task_lm;
  NGramModel external_lm;

  explicit Workspace(const ExperimentConfig& config);
  LanguageModels lms() const { return {&task_lm, &external_lm}; }
  PolicyDims dims(const PolicyDims& sizes) const;
};

Json to_json(const UpdateLog& u);
Json to_json(const EvalReport& r);
// samples.tsv body: context-id, question, target, predicted rank.
std::string samples_tsv(const EvalReport& r);

// Evaluation setup matching how a mode is deployed at test time.
EvalSetup eval_setup(const ExperimentConfig& config, const Workspace& ws);
EvalReport evaluate_params(const PolicyParameters& params, const ExperimentConfig& config, const Workspace& ws);

struct RunRecord {
  ExperimentConfig config;
  TrainRecord train;
  EvalReport eval;
  std::vector<double> pretrain_losses;
  double wall_seconds = 0.0;
  std::filesystem::path dir;
};

// Builds, optionally pretrains, trains and evaluates. With an output
// directory, writes config.json, metrics.jsonl (one line per update),
// params.bin, eval.json, samples.tsv and run_record.json there. A numeric
// abort keeps the logs written so far and rethrows.
RunRecord run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir);

// Re-evaluates a finished run directory, optionally with a different eval
// config, writing eval.json and samples.tsv to `out`.
EvalReport evaluate_run(const std::filesystem::path& run_dir, const std::optional<EvalConfig>& eval,
                        const std::filesystem::path& out);

struct ComparisonRow {
  std::string name;
  std::string mode;
  std::string trunc;
  bool complete = false;
  // Score, R@5, BLEU, CIDEr, ppl-t, ppl-e, sBLEU, peak.
  std::vector<double> values;
};
const std::vector<std::string>& comparison_columns();
std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& dirs);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_text(const std::vector<ComparisonRow>& rows);

// One sweep cell: dotted-path overrides applied to the base document.
struct SweepCell {
  std::string name;
  Json overrides;
};
// Truncation functions and parameters of the shipped ablation grid.
std::vector<SweepCell> preset_grid();
// {"cells": [{"name": ..., "set": {...}}]} or {"axes": {"a.b": [v1, v2], ...}}
// (cartesian product over axes in key order, the first varying slowest).
std::vector<SweepCell> grid_from_json(const Json& grid);
// Base document with the cell applied, seed offset by the cell index and the
// output directory set under `root`.
Json cell_config(const Json& base, const SweepCell& cell, std::size_t index, const std::filesystem::path& root);

}  // namespace trufll
