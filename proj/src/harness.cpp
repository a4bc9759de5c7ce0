#include "trufll/harness.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "trufll/errors.hpp"

namespace trufll {

#ifndef TRUFLL_VERSION
#define TRUFLL_VERSION "dev"
#endif
const char* const kCodeVersion = TRUFLL_VERSION;

namespace {

void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const Json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<TokenSequence> questions_of(const std::vector<Example>& data) {
  std::vector<TokenSequence> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(e.question);
  return out;
}

Json metrics_json(const MetricSet& m) {
  return Json{{"success", m.success},   {"recall5", m.recall5}, {"bleu", m.bleu},
              {"cider", m.cider},       {"ppl_task", m.ppl_task}, {"ppl_ext", m.ppl_ext},
              {"sumva", m.sumva},       {"mask_size", m.mask_size}};
}

// Seed streams of a run.
enum Stream : std::uint64_t { kLmStream = 1, kInitStream, kPretrainStream, kTrainStream, kEvalStream };

Json set_path(Json doc, const std::string& dotted, const Json& value) {
  Json* node = &doc;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override path");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = Json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
  return doc;
}

std::string value_label(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Parameter used when a truncation kind is given without one.
std::string default_trunc_param(const std::string& kind) {
  if (kind == "top_k") return "10";
  if (kind == "proba_thresh") return "0.05";
  if (kind == "top_p") return "0.9";
  if (kind == "sample") return "20";
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::for_mode(Mode mode) {
  ExperimentConfig c;
  c.trainer = TrainerConfig::for_mode(mode);
  c.out = "runs/" + to_string(mode);
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  check_keys(j, "", {"seed", "mode", "out", "env", "policy", "language_models", "pretrain", "trainer", "truncation",
                     "eval"});
  std::string mode_name = "scratch";
  read(j, "mode", mode_name, "");
  ExperimentConfig c = for_mode(mode_from_string(mode_name));
  read(j, "seed", c.seed, "");
  read(j, "out", c.out, "");

  if (j.contains("env")) {
    const Json& e = j["env"];
    check_keys(e, "env", {"min_objects", "max_objects", "max_len", "oracle_noise"});
    read(e, "min_objects", c.env.min_objects, "env");
    read(e, "max_objects", c.env.max_objects, "env");
    read(e, "max_len", c.env.max_len, "env");
    read(e, "oracle_noise", c.env.oracle_noise, "env");
  }
  if (j.contains("policy")) {
    const Json& p = j["policy"];
    check_keys(p, "policy", {"embed", "answer_embed", "context", "hidden"});
    read(p, "embed", c.policy.embed, "policy");
    read(p, "answer_embed", c.policy.answer_embed, "policy");
    read(p, "context", c.policy.context, "policy");
    read(p, "hidden", c.policy.hidden, "policy");
  }
  if (j.contains("language_models")) {
    const Json& l = j["language_models"];
    check_keys(l, "language_models", {"corpus_size", "order", "smoothing"});
    read(l, "corpus_size", c.lms.corpus_size, "language_models");
    read(l, "order", c.lms.order, "language_models");
    read(l, "smoothing", c.lms.smoothing, "language_models");
  }
  if (j.contains("pretrain")) {
    const Json& p = j["pretrain"];
    check_keys(p, "pretrain", {"examples", "epochs", "lr", "batch_size", "grad_clip"});
    read(p, "examples", c.pretrain.examples, "pretrain");
    read(p, "epochs", c.pretrain.epochs, "pretrain");
    read(p, "lr", c.pretrain.lr, "pretrain");
    read(p, "batch_size", c.pretrain.batch_size, "pretrain");
    read(p, "grad_clip", c.pretrain.grad_clip, "pretrain");
  }
  if (j.contains("trainer")) {
    const Json& t = j["trainer"];
    check_keys(t, "trainer", {"episodes", "lr", "batch_size", "clip_eps", "vf_coef", "ent_coef", "kl_coef", "grad_clip",
                              "ppo_epochs", "minibatches", "trunc_lm", "kl_lm", "reward", "normalize_advantages",
                              "rolling_window"});
    auto& tr = c.trainer;
    read(t, "episodes", tr.episodes, "trainer");
    read(t, "lr", tr.lr, "trainer");
    read(t, "batch_size", tr.batch_size, "trainer");
    read(t, "clip_eps", tr.clip_eps, "trainer");
    read(t, "vf_coef", tr.vf_coef, "trainer");
    read(t, "ent_coef", tr.ent_coef, "trainer");
    read(t, "kl_coef", tr.kl_coef, "trainer");
    read(t, "grad_clip", tr.grad_clip, "trainer");
    read(t, "ppo_epochs", tr.ppo_epochs, "trainer");
    read(t, "minibatches", tr.minibatches, "trainer");
    read(t, "normalize_advantages", tr.normalize_advantages, "trainer");
    read(t, "rolling_window", tr.rolling_window, "trainer");
    std::string s;
    if (t.contains("trunc_lm")) {
      read(t, "trunc_lm", s, "trainer");
      tr.trunc_lm = lm_choice_from_string(s);
    }
    if (t.contains("kl_lm")) {
      read(t, "kl_lm", s, "trainer");
      tr.kl_lm = lm_choice_from_string(s);
    }
    if (t.contains("reward")) {
      read(t, "reward", s, "trainer");
      tr.reward = reward_kind_from_string(s);
    }
  }
  if (j.contains("truncation")) {
    const Json& t = j["truncation"];
    check_keys(t, "truncation", {"kind", "param", "block_eos_at_start", "schedule"});
    std::string kind = to_string(c.trainer.trunc.kind), param;
    if (!t.contains("kind")) param = c.trainer.trunc.param_text();
    read(t, "kind", kind, "truncation");
    read(t, "param", param, "truncation");
    if (kind == "none" && !param.empty()) throw ConfigError("truncation kind none takes no parameter");
    if (param.empty()) param = default_trunc_param(kind);
    TruncationSpec spec = TruncationSpec::from_text(kind, param);
    read(t, "block_eos_at_start", spec.block_eos_at_start, "truncation");
    if (t.contains("schedule") && !t["schedule"].is_null()) {
      const Json& s = t["schedule"];
      check_keys(s, "truncation.schedule", {"tau_max", "tau_min", "factor", "period"});
      TemperatureSchedule sch;
      read(s, "tau_max", sch.tau_max, "truncation.schedule");
      read(s, "tau_min", sch.tau_min, "truncation.schedule");
      read(s, "factor", sch.factor, "truncation.schedule");
      read(s, "period", sch.period, "truncation.schedule");
      spec.schedule = sch;
    }
    c.trainer.trunc = spec;
  }
  if (j.contains("eval")) {
    const Json& e = j["eval"];
    check_keys(e, "eval", {"episodes", "ranking_samples", "diversity_samples", "methods"});
    read(e, "episodes", c.eval.episodes, "eval");
    read(e, "ranking_samples", c.eval.ranking_samples, "eval");
    read(e, "diversity_samples", c.eval.diversity_samples, "eval");
    if (e.contains("methods")) {
      std::vector<std::string> names;
      read(e, "methods", names, "eval");
      c.eval.methods.clear();
      for (const auto& n : names) c.eval.methods.push_back(decode_method_from_string(n));
    }
  }
  c.validate();
  return c;
}

Json ExperimentConfig::to_json() const {
  const auto& t = trainer;
  Json schedule = nullptr;
  if (t.trunc.schedule) {
    const auto& s = *t.trunc.schedule;
    schedule = Json{{"tau_max", s.tau_max}, {"tau_min", s.tau_min}, {"factor", s.factor}, {"period", s.period}};
  }
  Json methods = Json::array();
  for (DecodeMethod m : eval.methods) methods.push_back(to_string(m));
  return Json{
      {"seed", seed},
      {"mode", to_string(t.mode)},
      {"out", out},
      {"env",
       {{"min_objects", env.min_objects},
        {"max_objects", env.max_objects},
        {"max_len", env.max_len},
        {"oracle_noise", env.oracle_noise}}},
      {"policy",
       {{"embed", policy.embed},
        {"answer_embed", policy.answer_embed},
        {"context", policy.context},
        {"hidden", policy.hidden}}},
      {"language_models", {{"corpus_size", lms.corpus_size}, {"order", lms.order}, {"smoothing", lms.smoothing}}},
      {"pretrain",
       {{"examples", pretrain.examples},
        {"epochs", pretrain.epochs},
        {"lr", pretrain.lr},
        {"batch_size", pretrain.batch_size},
        {"grad_clip", pretrain.grad_clip}}},
      {"trainer",
       {{"episodes", t.episodes},
        {"lr", t.lr},
        {"batch_size", t.batch_size},
        {"clip_eps", t.clip_eps},
        {"vf_coef", t.vf_coef},
        {"ent_coef", t.ent_coef},
        {"kl_coef", t.kl_coef},
        {"grad_clip", t.grad_clip},
        {"ppo_epochs", t.ppo_epochs},
        {"minibatches", t.minibatches},
        {"trunc_lm", to_string(t.trunc_lm)},
        {"kl_lm", to_string(t.kl_lm)},
        {"reward", to_string(t.reward)},
        {"normalize_advantages", t.normalize_advantages},
        {"rolling_window", t.rolling_window}}},
      {"truncation",
       {{"kind", to_string(t.trunc.kind)},
        {"param", t.trunc.param_text()},
        {"block_eos_at_start", t.trunc.block_eos_at_start},
        {"schedule", schedule}}},
      {"eval",
       {{"episodes", eval.episodes},
        {"ranking_samples", eval.ranking_samples},
        {"diversity_samples", eval.diversity_samples},
        {"methods", methods}}},
  };
}

void ExperimentConfig::validate() const {
  env.validate();
  trainer.validate();
  trainer.trunc.validate();
  eval.validate();
  PolicyDims probe = policy;
  probe.vocab = probe.answers = probe.features = 1;
  probe.validate();
  if (lms.corpus_size == 0) throw ConfigError("language_models.corpus_size must be positive");
  if (lms.order < 1) throw ConfigError("language_models.order must be at least 1");
  if (!(lms.smoothing > 0.0)) throw ConfigError("language_models.smoothing must be positive");
  if (trainer.pretrains() && (pretrain.examples == 0 || pretrain.epochs < 0 || pretrain.batch_size == 0))
    throw ConfigError("pretrain needs examples >= 1, epochs >= 0 and batch_size >= 1");
  if (trainer.episodes < 0) throw ConfigError("trainer.episodes must be non-negative");
  if (out.empty()) throw ConfigError("out must name a directory");
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void apply_overrides(Json& doc, const Overrides& o) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (o.seed) doc["seed"] = *o.seed;
  if (o.mode) doc["mode"] = *o.mode;
  if (o.episodes) doc["trainer"]["episodes"] = *o.episodes;
  if (o.trunc) {
    doc["truncation"]["kind"] = *o.trunc;
    if (!o.trunc_param) doc["truncation"]["param"] = "";
  }
  if (o.trunc_param) doc["truncation"]["param"] = *o.trunc_param;
  if (o.decode) {
    Json methods = Json::array();
    if (*o.decode == "all") {
      for (DecodeMethod m : all_decode_methods()) methods.push_back(to_string(m));
    } else {
      methods.push_back(to_string(decode_method_from_string(*o.decode)));
    }
    doc["eval"]["methods"] = methods;
  }
  if (o.out) doc["out"] = *o.out;
}

// ---------------------------------------------------------------------------

Workspace::Workspace(const ExperimentConfig& config)
    : task_grammar(Grammar::parse(default_task_grammar_text())),
      external_grammar(Grammar::parse(default_external_grammar_text())),
      vocab([&] {
        const Grammar* gs[] = {&task_grammar, &external_grammar};
        return grammar_vocabulary(gs);
      }()),
      env(task_grammar, vocab, config.env) {
  Rng rng(derive_seed(config.seed, kLmStream));
  const auto task_corpus = questions_of(env.make_dataset(config.lms.corpus_size, rng));
  task_lm = train_ngram(task_corpus, vocab.size(), config.lms.order, config.lms.smoothing);
  const auto ext_corpus = free_corpus(external_grammar, vocab, config.lms.corpus_size, rng);
  external_lm = train_ngram(ext_corpus, vocab.size(), config.lms.order, config.lms.smoothing);
}

PolicyDims Workspace::dims(const PolicyDims& sizes) const {
  PolicyDims d = sizes;
  d.vocab = vocab.size();
  d.answers = env.answers().size();
  d.features = env.feature_size();
  return d;
}

Json to_json(const UpdateLog& u) {
  const auto& l = u.losses;
  return Json{{"update", u.update},
              {"episode", u.episodes},
              {"mean_reward", u.mean_reward},
              {"rolling_reward", u.rolling_reward},
              {"rolling_success", u.rolling_success},
              {"loss",
               {{"total", l.total}, {"ppo", l.ppo}, {"value", l.value}, {"entropy", l.entropy}, {"kl", l.kl}}},
              {"mean_ratio", l.mean_ratio},
              {"clip_fraction", l.clip_fraction},
              {"grad_norm", l.grad_norm},
              {"mask_size", u.mean_mask_size},
              {"sumva", u.sumva},
              {"length", u.mean_length}};
}

Json to_json(const EvalReport& r) {
  Json methods = Json::object();
  for (const auto& m : r.methods) methods[to_string(m.method)] = metrics_json(m.metrics);
  Json j = metrics_json(r.mean);
  j["episodes"] = r.episodes;
  j["self_bleu"] = r.self_bleu;
  j["peakiness"] = r.peakiness;
  j["methods"] = methods;
  return j;
}

std::string samples_tsv(const EvalReport& r) {
  std::string out;
  for (const auto& s : r.samples)
    out += std::to_string(s.context) + "/" + to_string(s.method) + "\t" + s.question + "\t" + s.target + "\t" +
           std::to_string(s.rank) + "\n";
  return out;
}

EvalSetup eval_setup(const ExperimentConfig& config, const Workspace& ws) {
  EvalSetup s;
  s.env = &ws.env;
  s.task_lm = &ws.task_lm;
  s.ext_lm = &ws.external_lm;
  if (config.trainer.truncates()) {
    s.trunc = config.trainer.trunc;
    // The schedule only shapes exploration during training.
    s.trunc.schedule.reset();
    s.trunc_lm = ws.lms().get(config.trainer.trunc_lm);
    s.truncate = config.trainer.truncates_at_test();
  }
  return s;
}

EvalReport evaluate_params(const PolicyParameters& params, const ExperimentConfig& config, const Workspace& ws) {
  Rng rng(derive_seed(config.seed, kEvalStream));
  return evaluate(params, eval_setup(config, ws), config.eval, rng);
}

RunRecord run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = config;
  std::ofstream metrics;
  if (out_dir) {
    rec.dir = *out_dir;
    std::filesystem::create_directories(*out_dir);
    write_file(*out_dir / "config.json", config.to_json().dump(2) + "\n");
    metrics.open(*out_dir / "metrics.jsonl", std::ios::binary);
    if (!metrics) throw IoError("cannot write " + (*out_dir / "metrics.jsonl").string());
  }

  const Workspace ws(config);
  PolicyParameters params = init_params(derive_seed(config.seed, kInitStream), ws.dims(config.policy));
  if (config.trainer.pretrains()) {
    Rng rng(derive_seed(config.seed, kPretrainStream));
    const auto data = ws.env.make_dataset(config.pretrain.examples, rng);
    MleConfig mle;
    mle.epochs = config.pretrain.epochs;
    mle.lr = config.pretrain.lr;
    mle.batch_size = config.pretrain.batch_size;
    mle.grad_clip = config.pretrain.grad_clip;
    mle.seed = derive_seed(config.seed, kPretrainStream + 100);
    rec.pretrain_losses = mle_pretrain(params, data, mle);
    if (!params.all_finite()) throw NumericError("pretraining produced non-finite parameters");
  }

  Rng rng(derive_seed(config.seed, kTrainStream));
  rec.train = train(params, config.trainer, ws.env, ws.lms(), rng, [&](const UpdateLog& u) {
    if (metrics.is_open()) metrics << to_json(u).dump() << "\n" << std::flush;
  });
  rec.eval = evaluate_params(params, config, ws);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (out_dir) {
    save_params(params, *out_dir / "params.bin");
    write_file(*out_dir / "eval.json", to_json(rec.eval).dump(2) + "\n");
    write_file(*out_dir / "samples.tsv", samples_tsv(rec.eval));
    const Json record{{"config", "config.json"},
                      {"metrics", "metrics.jsonl"},
                      {"eval", "eval.json"},
                      {"samples", "samples.tsv"},
                      {"params", "params.bin"},
                      {"updates", rec.train.updates.size()},
                      {"episodes", rec.train.episodes.size()},
                      {"pretrain_losses", rec.pretrain_losses},
                      {"wall_seconds", rec.wall_seconds},
                      {"code_version", kCodeVersion}};
    write_file(*out_dir / "run_record.json", record.dump(2) + "\n");
  }
  return rec;
}

EvalReport evaluate_run(const std::filesystem::path& run_dir, const std::optional<EvalConfig>& eval,
                        const std::filesystem::path& out) {
  ExperimentConfig config = ExperimentConfig::from_json(read_json(run_dir / "config.json"));
  if (eval) {
    config.eval = *eval;
    config.validate();
  }
  const Workspace ws(config);
  const PolicyParameters params = load_params(run_dir / "params.bin");
  if (!(params.dims == ws.dims(config.policy))) throw ConfigError("checkpoint does not match the run configuration");
  const EvalReport report = evaluate_params(params, config, ws);
  std::filesystem::create_directories(out);
  if (!std::filesystem::equivalent(out, run_dir)) write_file(out / "config.json", config.to_json().dump(2) + "\n");
  write_file(out / "eval.json", to_json(report).dump(2) + "\n");
  write_file(out / "samples.tsv", samples_tsv(report));
  return report;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& comparison_columns() {
  static const std::vector<std::string> cols{"Score", "R@5", "BLEU", "CIDEr", "ppl-t", "ppl-e", "sBLEU", "peak."};
  return cols;
}

std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& dirs) {
  std::vector<ComparisonRow> rows;
  for (const auto& dir : dirs) {
    ComparisonRow row;
    row.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    try {
      const auto cfg = ExperimentConfig::from_json(read_json(dir / "config.json"));
      row.mode = to_string(cfg.trainer.mode);
      row.trunc = cfg.trainer.truncates() ? cfg.trainer.trunc.label() : "none";
    } catch (const std::exception&) {
      row.mode = "?";
      row.trunc = "?";
    }
    try {
      const Json e = read_json(dir / "eval.json");
      row.values = {e.at("success").get<double>(), e.at("recall5").get<double>(), e.at("bleu").get<double>(),
                    e.at("cider").get<double>(),   e.at("ppl_task").get<double>(), e.at("ppl_ext").get<double>(),
                    e.at("self_bleu").get<double>(), e.at("peakiness").get<double>()};
      row.complete = true;
    } catch (const std::exception&) {
      row.complete = false;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(std::abs(v) >= 1000.0 ? 0 : 3) << v;
  return s.str();
}

}  // namespace

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "run,mode,trunc";
  for (const auto& c : comparison_columns()) out += "," + c;
  out += "\n";
  for (const auto& r : rows) {
    out += r.name + "," + r.mode + "," + r.trunc;
    if (!r.complete) {
      for (std::size_t i = 0; i < comparison_columns().size(); ++i) out += ",incomplete";
    } else {
      for (double v : r.values) {
        std::ostringstream s;
        s << std::setprecision(17) << v;
        out += "," + s.str();
      }
    }
    out += "\n";
  }
  return out;
}

std::string comparison_text(const std::vector<ComparisonRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"run", "mode", "trunc"};
  header.insert(header.end(), comparison_columns().begin(), comparison_columns().end());
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.name, r.mode, r.trunc};
    if (!r.complete) {
      line.push_back("incomplete");
      line.resize(header.size(), "");
    } else {
      for (double v : r.values) line.push_back(fmt(v));
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  for (const auto& line : cells) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const std::size_t pad = width[i] - line[i].size();
      text += i < 3 ? line[i] + std::string(pad, ' ') : std::string(pad, ' ') + line[i];
      if (i + 1 < line.size()) text += "  ";
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SweepCell> preset_grid() {
  std::vector<SweepCell> cells;
  auto add = [&](const std::string& kind, const std::string& param) {
    cells.push_back({kind + "_" + (param == "1/V" ? std::string("inv_v") : param),
                     Json{{"truncation.kind", kind}, {"truncation.param", param}}});
  };
  for (const char* k : {"10", "20"}) add("top_k", k);
  for (const char* a : {"0.05", "0.1", "1/V"}) add("proba_thresh", a);
  for (const char* p : {"0.85", "0.9"}) add("top_p", p);
  for (const char* s : {"20", "30"}) add("sample", s);
  return cells;
}

std::vector<SweepCell> grid_from_json(const Json& grid) {
  check_keys(grid, "grid", {"cells", "axes"});
  std::vector<SweepCell> cells;
  if (grid.contains("cells")) {
    for (const auto& c : grid["cells"]) {
      check_keys(c, "grid.cells[]", {"name", "set"});
      if (!c.contains("set") || !c["set"].is_object()) throw ConfigError("grid cell needs a 'set' object");
      SweepCell cell;
      cell.name = c.value("name", "cell" + std::to_string(cells.size()));
      cell.overrides = c["set"];
      cells.push_back(std::move(cell));
    }
  }
  if (grid.contains("axes")) {
    if (!cells.empty()) throw ConfigError("grid takes either cells or axes, not both");
    const Json& axes = grid["axes"];
    if (!axes.is_object() || axes.empty()) throw ConfigError("grid axes must be a non-empty object");
    std::vector<std::pair<std::string, Json>> list;
    for (const auto& [k, v] : axes.items()) list.emplace_back(k, v);
    cells.push_back({"", Json::object()});
    for (const auto& [key, values] : list) {
      if (!values.is_array() || values.empty()) throw ConfigError("grid axis '" + key + "' needs a non-empty list");
      std::vector<SweepCell> next;
      for (const auto& c : cells)
        for (const auto& v : values) {
          SweepCell n = c;
          n.overrides[key] = v;
          n.name += (n.name.empty() ? "" : "_") + key.substr(key.rfind('.') + 1) + "=" + value_label(v);
          next.push_back(std::move(n));
        }
      cells = std::move(next);
    }
  }
  if (cells.empty()) throw ConfigError("grid has no cells");
  return cells;
}

Json cell_config(const Json& base, const SweepCell& cell, std::size_t index, const std::filesystem::path& root) {
  Json doc = base;
  const std::uint64_t seed = base.contains("seed") ? base["seed"].get<std::uint64_t>() : 0;
  doc["seed"] = seed + index;
  for (const auto& [k, v] : cell.overrides.items()) doc = set_path(doc, k, v);
  std::string name = cell.name;
  for (char& ch : name)
    if (ch == '/' || ch == ' ') ch = '_';
  std::ostringstream dir;
  dir << std::setw(2) << std::setfill('0') << index << "_" << name;
  doc["out"] = (root / dir.str()).string();
  return doc;
}

}  // namespace trufll
