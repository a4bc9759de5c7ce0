#include "trufll/rl.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>

#include "trufll/errors.hpp"

namespace trufll {

using ad::Tensor;
using ad::Var;

namespace {

struct ModeTraits {
  Mode mode;
  const char* name;
  bool truncates, off_policy, kl, pretrains, rl;
};

constexpr std::array<ModeTraits, 10> kModes{{
    {Mode::Scratch, "scratch", false, false, false, false, true},
    {Mode::ScratchKlTask, "scratch_kl_task", false, false, true, false, true},
    {Mode::ScratchKlExt, "scratch_kl_ext", false, false, true, false, true},
    {Mode::TrufllTask, "trufll_task", true, false, false, false, true},
    {Mode::TrufllExt, "trufll_ext", true, false, false, false, true},
    {Mode::TrufllOff, "trufll_off", true, true, false, false, true},
    {Mode::TrufllOffKl, "trufll_off_kl", true, true, true, false, true},
    {Mode::Pretrain, "pretrain", false, false, false, true, false},
    {Mode::PretrainRl, "pretrain_rl", false, false, false, true, true},
    {Mode::TrufllPretrain, "trufll_pretrain", true, false, false, true, true},
}};

const ModeTraits& traits(Mode m) {
  for (const auto& t : kModes)
    if (t.mode == m) return t;
  throw UsageError("unknown mode");
}

Var constant_column(ad::Tape& tape, std::vector<double> values) {
  const std::size_t n = values.size();
  return tape.constant(Tensor({n, 1}, std::move(values)));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Clipped surrogate over the rows of a ratio column. Rows whose clipped branch
// wins contribute a constant; the others keep the ratio's gradient.
PpoLoss clipped_objective(Var ratio, const StepTable& table, double eps) {
  ad::Tape& tape = *ratio.tape;
  const Tensor r = ratio.value();
  const std::size_t n = table.rows();
  std::vector<double> coef(n, 0.0);
  double fixed = 0.0, ratio_sum = 0.0, clipped = 0.0, valid = 0.0;
  PpoLoss out;
  out.ratios.assign(r.data().begin(), r.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    const double w = table.weights[i];
    if (w == 0.0) continue;
    const ClippedTerm term = clipped_term(r[i], table.advantages[i], eps);
    if (term.clipped) {
      fixed += w * term.value;
      clipped += 1.0;
    } else {
      coef[i] = w * table.advantages[i];
    }
    ratio_sum += r[i];
    valid += 1.0;
  }
  const Var objective = ad::sum(ad::mul(ratio, constant_column(tape, std::move(coef))));
  out.loss = ad::add(ad::mul(objective, tape.constant(Tensor::scalar(-1.0))), tape.constant(Tensor::scalar(-fixed)));
  out.mean_ratio = valid > 0 ? ratio_sum / valid : 1.0;
  out.clip_fraction = valid > 0 ? clipped / valid : 0.0;
  return out;
}

Var weighted_mean(Var column, const StepTable& table) {
  return ad::sum(ad::mul(column, constant_column(*column.tape, table.weights)));
}

Var log_policy(Var logits, const StepTable& table, bool truncated) {
  return truncated ? ad::log_softmax(ad::additive_mask(logits, table.keep)) : ad::log_softmax(logits);
}

}  // namespace

std::string to_string(Mode m) { return traits(m).name; }

Mode mode_from_string(const std::string& s) {
  for (const auto& t : kModes)
    if (s == t.name) return t.mode;
  throw ConfigError("unknown mode '" + s + "'");
}

std::span<const Mode> all_modes() {
  static const std::array<Mode, 10> modes = [] {
    std::array<Mode, 10> m{};
    for (std::size_t i = 0; i < kModes.size(); ++i) m[i] = kModes[i].mode;
    return m;
  }();
  return modes;
}

std::string to_string(LmChoice c) { return c == LmChoice::Task ? "task" : "external"; }

LmChoice lm_choice_from_string(const std::string& s) {
  if (s == "task") return LmChoice::Task;
  if (s == "external" || s == "ext") return LmChoice::External;
  throw ConfigError("unknown language model '" + s + "'");
}

bool TrainerConfig::truncates() const { return traits(mode).truncates; }
bool TrainerConfig::off_policy() const { return traits(mode).off_policy; }
bool TrainerConfig::uses_kl() const { return traits(mode).kl; }
bool TrainerConfig::pretrains() const { return traits(mode).pretrains; }
bool TrainerConfig::runs_rl() const { return traits(mode).rl; }

TrainerConfig TrainerConfig::for_mode(Mode mode) {
  TrainerConfig c;
  c.mode = mode;
  if (c.uses_kl()) {
    c.lr = 5e-4;
    c.batch_size = 64;
  }
  if (c.pretrains()) c.lr = 1e-5;
  if (mode == Mode::ScratchKlExt || mode == Mode::TrufllExt) {
    c.kl_lm = LmChoice::External;
    c.trunc_lm = LmChoice::External;
  }
  if (c.truncates()) c.trunc = TruncationSpec::from_text("proba_thresh", "0.05");
  return c;
}

void TrainerConfig::validate() const {
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be positive");
  if (vf_coef < 0.0 || ent_coef < 0.0 || kl_coef < 0.0) throw ConfigError("loss weights must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative (0 disables clipping)");
  if (episodes < 0) throw ConfigError("episodes must be non-negative");
  if (rolling_window == 0) throw ConfigError("rolling_window must be positive");
  if (ppo_epochs < 1 || minibatches < 1) throw ConfigError("ppo_epochs and minibatches must be at least 1");
  if (!truncates() && trunc.kind != TruncKind::None)
    throw ConfigError("mode " + to_string(mode) + " does not truncate; truncation must be 'none'");
  trunc.validate();
}

// ---------------------------------------------------------------------------

TokenSequence Trajectory::tokens() const {
  TokenSequence s{Vocabulary::kSos};
  for (const auto& st : steps) s.push_back(st.action);
  return s;
}

std::size_t Batch::step_count() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  return n;
}

Batch collect_rollouts(const PolicyParameters& params, const RolloutSpec& spec, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("collect_rollouts needs n >= 1");
  if (spec.env == nullptr) throw UsageError("collect_rollouts needs an environment");
  const bool truncating = spec.trunc.kind != TruncKind::None;
  if (truncating && spec.trunc_lm == nullptr) throw UsageError("truncation requires a language model");
  const SynthQA& env = *spec.env;
  const std::size_t V = params.dims.vocab;
  const int T = env.config().max_len;

  Batch batch;
  batch.episodes.resize(n);
  std::vector<const Context*> ctx(n);
  for (std::size_t b = 0; b < n; ++b) {
    batch.episodes[b].episode = env.sample_episode(rng);
    ctx[b] = &batch.episodes[b].episode.context;
  }

  ad::Tape tape;
  PolicyGraph graph(tape, params, ctx);
  Var h = graph.initial_state();
  std::vector<Token> prev(n, Vocabulary::kSos);
  std::vector<TokenSequence> history(n, TokenSequence{Vocabulary::kSos});
  std::vector<unsigned char> active(n, 1);
  std::size_t remaining = n;
  std::vector<double> probs(V);

  for (int t = 0; t < T && remaining > 0; ++t) {
    const auto step = graph.step(h, prev);
    std::vector<unsigned char> keep(n * V, 1);
    std::vector<TruncationMask> masks(n);
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b]) continue;
      masks[b] = truncating ? build_mask(spec.trunc, *spec.trunc_lm, history[b], spec.step_counter, rng)
                            : TruncationMask::all(V);
      std::copy(masks[b].keep().begin(), masks[b].keep().end(), keep.begin() + static_cast<std::ptrdiff_t>(b * V));
    }
    const Tensor lsm_masked = ad::log_softmax(ad::additive_mask(step.logits, keep)).value();
    const Tensor lsm_full = ad::log_softmax(step.logits).value();
    const Tensor values = step.value.value();
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b]) {
        prev[b] = Vocabulary::kPad;
        continue;
      }
      for (std::size_t w = 0; w < V; ++w) probs[w] = std::exp(lsm_masked.at(b, w));
      const auto a = static_cast<Token>(sample_categorical(probs, rng));
      StepRecord rec;
      rec.action = a;
      rec.keep.assign(masks[b].keep().begin(), masks[b].keep().end());
      rec.mask_size = masks[b].size();
      rec.logp_trunc_old = lsm_masked.at(b, static_cast<std::size_t>(a));
      rec.logp_full_old = lsm_full.at(b, static_cast<std::size_t>(a));
      rec.value_old = values[b];
      double outside = 0.0;
      for (std::size_t w = 0; w < V; ++w)
        if (!rec.keep[w]) outside += std::exp(lsm_full.at(b, w));
      rec.sumva = 1.0 - outside;
      if (spec.kl_lm != nullptr) {
        const auto d = spec.kl_lm->next_dist(history[b]);
        rec.kl_logp.resize(V);
        for (std::size_t w = 0; w < V; ++w) rec.kl_logp[w] = std::log(d[w]);
      }
      batch.episodes[b].steps.push_back(std::move(rec));
      history[b].push_back(a);
      prev[b] = a;
      if (a == Vocabulary::kEos || t == T - 1) {
        active[b] = 0;
        --remaining;
      }
    }
    h = step.state;
  }

  for (auto& tr : batch.episodes) {
    const OracleResult result = env.answer(tr.episode.scene, tr.tokens(), rng);
    const int target = tr.episode.context.answer;
    const int len = static_cast<int>(tr.steps.size());
    tr.target_rank = result.rank_of(target);
    tr.episode_return = 0.0;
    for (int t = 0; t < len; ++t) {
      tr.steps[static_cast<std::size_t>(t)].reward = reward(spec.reward, result, target, t, len);
      tr.episode_return += tr.steps[static_cast<std::size_t>(t)].reward;
    }
  }
  return batch;
}

void compute_returns(Batch& batch, bool normalize_advantages) {
  batch.returns.assign(batch.episodes.size(), {});
  batch.advantages.assign(batch.episodes.size(), {});
  for (std::size_t e = 0; e < batch.episodes.size(); ++e) {
    const auto& steps = batch.episodes[e].steps;
    auto& R = batch.returns[e];
    auto& A = batch.advantages[e];
    R.assign(steps.size(), 0.0);
    A.assign(steps.size(), 0.0);
    double acc = 0.0;
    for (std::size_t t = steps.size(); t-- > 0;) {
      acc += steps[t].reward;
      R[t] = acc;
      A[t] = acc - steps[t].value_old;
    }
  }
  if (!normalize_advantages) return;
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const auto& A : batch.advantages)
    for (double a : A) {
      sum += a;
      sq += a * a;
      count += 1.0;
    }
  if (count < 2.0) return;
  const double mean = sum / count;
  const double sd = std::sqrt(std::max(0.0, sq / count - mean * mean));
  for (auto& A : batch.advantages)
    for (double& a : A) a = (a - mean) / (sd + 1e-8);
}

StepTable build_step_table(const Batch& batch, std::size_t vocab) {
  if (batch.returns.size() != batch.episodes.size()) throw UsageError("compute_returns must run before training");
  StepTable tab;
  tab.episodes = batch.episodes.size();
  tab.vocab = vocab;
  bool with_kl = !batch.episodes.empty();
  for (const auto& e : batch.episodes) {
    tab.steps = std::max(tab.steps, e.steps.size());
    for (const auto& s : e.steps) with_kl = with_kl && !s.kl_logp.empty();
  }
  if (tab.steps == 0) throw UsageError("batch has no steps");
  const std::size_t B = tab.episodes, rows = tab.rows();
  tab.inputs.assign(tab.steps, std::vector<Token>(B, Vocabulary::kPad));
  tab.actions.assign(rows, 0);
  tab.keep.assign(rows * vocab, 1);
  tab.logp_trunc_old.assign(rows, 0.0);
  tab.logp_full_old.assign(rows, 0.0);
  tab.returns.assign(rows, 0.0);
  tab.advantages.assign(rows, 0.0);
  tab.weights.assign(rows, 0.0);
  if (with_kl) tab.kl_logp = Tensor({rows, vocab}, -std::log(static_cast<double>(vocab)));
  const double w = 1.0 / static_cast<double>(batch.step_count());
  for (std::size_t b = 0; b < B; ++b) {
    const auto& steps = batch.episodes[b].steps;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const std::size_t r = t * B + b;
      const StepRecord& s = steps[t];
      tab.inputs[t][b] = t == 0 ? Vocabulary::kSos : steps[t - 1].action;
      tab.actions[r] = s.action;
      std::copy(s.keep.begin(), s.keep.end(), tab.keep.begin() + static_cast<std::ptrdiff_t>(r * vocab));
      tab.logp_trunc_old[r] = s.logp_trunc_old;
      tab.logp_full_old[r] = s.logp_full_old;
      tab.returns[r] = batch.returns[b][t];
      tab.advantages[r] = batch.advantages[b][t];
      tab.weights[r] = w;
      if (with_kl) std::copy(s.kl_logp.begin(), s.kl_logp.end(), tab.kl_logp.row_span(r).begin());
    }
  }
  return tab;
}

// ---------------------------------------------------------------------------

ClippedTerm clipped_term(double ratio, double advantage, double eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

PpoLoss ppo_loss_onpolicy(Var logits, const StepTable& table, double eps) {
  ad::Tape& tape = *logits.tape;
  const Var logp = ad::pick(log_policy(logits, table, true), table.actions);
  std::vector<double> neg_old(table.rows());
  for (std::size_t i = 0; i < neg_old.size(); ++i) neg_old[i] = -table.logp_trunc_old[i];
  const Var ratio = ad::exp(ad::add(logp, constant_column(tape, std::move(neg_old))));
  return clipped_objective(ratio, table, eps);
}

PpoLoss ppo_loss_offpolicy(Var logits, const StepTable& table, double eps) {
  ad::Tape& tape = *logits.tape;
  const Var logp = ad::pick(log_policy(logits, table, false), table.actions);
  const std::size_t n = table.rows();
  std::vector<double> neg_old(n), behavior(n);
  for (std::size_t i = 0; i < n; ++i) {
    neg_old[i] = -table.logp_full_old[i];
    // pi_old / pi-_old
    behavior[i] = std::exp(table.logp_full_old[i] - table.logp_trunc_old[i]);
  }
  const Var on = ad::exp(ad::add(logp, constant_column(tape, std::move(neg_old))));
  const Var ratio = ad::mul(on, constant_column(tape, std::move(behavior)));
  return clipped_objective(ratio, table, eps);
}

Var value_loss(Var values, const StepTable& table) {
  std::vector<double> neg_r(table.rows());
  for (std::size_t i = 0; i < neg_r.size(); ++i) neg_r[i] = -table.returns[i];
  const Var d = ad::add(values, constant_column(*values.tape, std::move(neg_r)));
  return weighted_mean(ad::mul(d, d), table);
}

Var entropy_loss(Var logits, const StepTable& table, bool truncated) {
  const Var lp = log_policy(logits, table, truncated);
  const Var neg_h = ad::sum(ad::mul(ad::exp(lp), lp), ad::Axis::Cols);
  return ad::mul(weighted_mean(neg_h, table), logits.tape->constant(Tensor::scalar(-1.0)));
}

Var kl_loss(Var logits, const StepTable& table) {
  if (table.kl_logp.size() != table.rows() * table.vocab) throw UsageError("batch carries no LM targets for the KL term");
  ad::Tape& tape = *logits.tape;
  const Var lp = ad::log_softmax(logits);
  Tensor neg_lm = table.kl_logp;
  for (double& v : neg_lm.data()) v = -v;
  const Var rows = ad::sum(ad::mul(ad::exp(lp), ad::add(lp, tape.constant(std::move(neg_lm)))), ad::Axis::Cols);
  return weighted_mean(rows, table);
}

Var total_loss(Var logits, Var values, const StepTable& table, const TrainerConfig& config, LossBreakdown* breakdown) {
  ad::Tape& tape = *logits.tape;
  const PpoLoss ppo = config.off_policy() ? ppo_loss_offpolicy(logits, table, config.clip_eps)
                                          : ppo_loss_onpolicy(logits, table, config.clip_eps);
  const Var vf = value_loss(values, table);
  const Var ent = entropy_loss(logits, table, config.truncates() && !config.off_policy());
  auto scaled = [&](Var v, double c) { return ad::mul(v, tape.constant(Tensor::scalar(c))); };
  Var total = ad::add(ad::add(ppo.loss, scaled(vf, config.vf_coef)), scaled(ent, -config.ent_coef));
  double kl = 0.0;
  if (config.uses_kl()) {
    const Var k = kl_loss(logits, table);
    kl = k.value().item();
    total = ad::add(total, scaled(k, config.kl_coef));
  }
  if (breakdown != nullptr) {
    breakdown->total = total.value().item();
    breakdown->ppo = ppo.loss.value().item();
    breakdown->value = vf.value().item();
    breakdown->entropy = ent.value().item();
    breakdown->kl = kl;
    breakdown->mean_ratio = ppo.mean_ratio;
    breakdown->clip_fraction = ppo.clip_fraction;
  }
  return total;
}

LossBreakdown train_step(PolicyParameters& params, ad::Adam& adam, const Batch& batch, const TrainerConfig& config) {
  const StepTable table = build_step_table(batch, params.dims.vocab);
  std::vector<const Context*> ctx;
  for (const auto& e : batch.episodes) ctx.push_back(&e.episode.context);
  ad::Tape tape;
  PolicyGraph graph(tape, params, ctx);
  const auto u = graph.unroll(table.inputs);
  LossBreakdown out;
  const Var loss = total_loss(u.logits, u.values, table, config, &out);
  auto grads = tape.backward(loss);
  out.grad_norm = config.grad_clip > 0.0 ? ad::clip_global_norm(grads, config.grad_clip) : grads.global_norm();
  adam.step(params.tensors(), grads);
  if (!params.all_finite()) throw NumericError("parameters became non-finite after an update");
  return out;
}

// ---------------------------------------------------------------------------

TrainRecord train(PolicyParameters& params, const TrainerConfig& config, const SynthQA& env, const LanguageModels& lms,
                  Rng& rng, const std::function<void(const UpdateLog&)>& on_update) {
  config.validate();
  TrainRecord record;
  if (!config.runs_rl()) return record;
  RolloutSpec spec;
  spec.env = &env;
  spec.reward = config.reward;
  if (config.truncates()) {
    spec.trunc = config.trunc;
    spec.trunc_lm = lms.get(config.trunc_lm);
    if (spec.trunc.kind != TruncKind::None && spec.trunc_lm == nullptr)
      throw UsageError("mode " + to_string(config.mode) + " needs the " + to_string(config.trunc_lm) + " LM");
  }
  if (config.uses_kl()) {
    spec.kl_lm = lms.get(config.kl_lm);
    if (spec.kl_lm == nullptr) throw UsageError("KL mode needs the " + to_string(config.kl_lm) + " LM");
  }

  ad::Adam adam(config.lr);
  std::deque<std::pair<double, double>> window;
  double window_reward = 0.0, window_success = 0.0;
  long done = 0, update = 0;
  while (done < config.episodes) {
    const auto n = static_cast<std::size_t>(std::min<long>(static_cast<long>(config.batch_size), config.episodes - done));
    spec.step_counter = update;
    Batch batch = collect_rollouts(params, spec, n, rng);
    compute_returns(batch, config.normalize_advantages);
    UpdateLog u;
    if (config.ppo_epochs == 1 && config.minibatches == 1) {
      u.losses = train_step(params, adam, batch, config);
    } else {
      const std::size_t parts = std::min(config.minibatches, batch.episodes.size());
      std::vector<std::size_t> order(batch.episodes.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        for (std::size_t part = 0; part < parts; ++part) {
          Batch mb;
          for (std::size_t k = part; k < order.size(); k += parts) {
            mb.episodes.push_back(batch.episodes[order[k]]);
            mb.returns.push_back(batch.returns[order[k]]);
            mb.advantages.push_back(batch.advantages[order[k]]);
          }
          const LossBreakdown l = train_step(params, adam, mb, config);
          if (epoch == 0 && part == 0) u.losses = l;
        }
      }
    }
    u.update = ++update;

    std::vector<double> rewards, masks, sumvas, lengths;
    for (const auto& tr : batch.episodes) {
      EpisodeLog e;
      e.episode = ++done;
      e.reward = tr.episode_return;
      e.success = tr.success();
      e.length = static_cast<int>(tr.steps.size());
      double m = 0.0, s = 0.0;
      for (const auto& st : tr.steps) {
        m += static_cast<double>(st.mask_size);
        s += st.sumva;
      }
      e.mean_mask_size = m / e.length;
      e.sumva = s / e.length;
      window.emplace_back(e.reward, e.success ? 1.0 : 0.0);
      window_reward += e.reward;
      window_success += window.back().second;
      if (window.size() > config.rolling_window) {
        window_reward -= window.front().first;
        window_success -= window.front().second;
        window.pop_front();
      }
      e.rolling_reward = window_reward / static_cast<double>(window.size());
      e.rolling_success = window_success / static_cast<double>(window.size());
      rewards.push_back(e.reward);
      masks.push_back(e.mean_mask_size);
      sumvas.push_back(e.sumva);
      lengths.push_back(e.length);
      record.episodes.push_back(e);
    }
    u.episodes = done;
    u.mean_reward = mean_of(rewards);
    u.rolling_reward = record.episodes.back().rolling_reward;
    u.rolling_success = record.episodes.back().rolling_success;
    u.mean_mask_size = mean_of(masks);
    u.sumva = mean_of(sumvas);
    u.mean_length = mean_of(lengths);
    record.updates.push_back(u);
    if (on_update) on_update(u);
  }
  return record;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> bandit_keep(const BanditConfig& c) {
  if (c.rewards.size() < 2) throw ConfigError("bandit needs at least two arms");
  if (c.keep.empty()) return std::vector<unsigned char>(c.rewards.size(), 1);
  if (c.keep.size() != c.rewards.size()) throw ConfigError("bandit mask size differs from the arm count");
  return c.keep;
}

// One-step episodes drawn from the behavior policy at the given logits.
StepTable bandit_table(std::span<const double> logits, const BanditConfig& c, std::size_t n, Rng& rng) {
  const std::size_t arms = c.rewards.size();
  const auto keep = bandit_keep(c);
  ad::Tape tape;
  const Var x = tape.constant(Tensor({1, arms}, std::vector<double>(logits.begin(), logits.end())));
  const Tensor lsm_masked = ad::log_softmax(ad::additive_mask(x, keep)).value();
  const Tensor lsm_full = ad::log_softmax(x).value();
  std::vector<double> probs(arms);
  for (std::size_t a = 0; a < arms; ++a) probs[a] = std::exp(lsm_masked[a]);

  StepTable tab;
  tab.episodes = n;
  tab.steps = 1;
  tab.vocab = arms;
  tab.inputs.assign(1, std::vector<Token>(n, Vocabulary::kSos));
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = sample_categorical(probs, rng);
    tab.actions.push_back(static_cast<int>(a));
    tab.keep.insert(tab.keep.end(), keep.begin(), keep.end());
    tab.logp_trunc_old.push_back(lsm_masked[a]);
    tab.logp_full_old.push_back(lsm_full[a]);
    tab.returns.push_back(c.rewards[a]);
    tab.advantages.push_back(c.rewards[a]);
    tab.weights.push_back(1.0 / static_cast<double>(n));
  }
  return tab;
}

Var bandit_logits(ad::Tape& tape, const Tensor& param, std::size_t n) {
  const std::vector<int> zeros(n, 0);
  return ad::gather_rows(tape.param(param), zeros);
}

}  // namespace

BanditResult train_bandit(const BanditConfig& config) {
  const std::size_t arms = config.rewards.size();
  const auto keep = bandit_keep(config);
  if (config.batch_size == 0 || config.episodes < 0) throw ConfigError("bandit needs batch_size >= 1 and episodes >= 0");
  Rng rng(config.seed);
  Tensor logits({1, arms});
  ad::Adam adam(config.lr);
  std::vector<Tensor*> params{&logits};
  BanditResult result;
  for (long done = 0; done < config.episodes;) {
    const auto n = static_cast<std::size_t>(std::min<long>(static_cast<long>(config.batch_size), config.episodes - done));
    const StepTable tab = bandit_table(logits.data(), config, n, rng);
    ad::Tape tape;
    const Var x = bandit_logits(tape, logits, n);
    const PpoLoss ppo = config.off_policy ? ppo_loss_offpolicy(x, tab, config.clip_eps)
                                          : ppo_loss_onpolicy(x, tab, config.clip_eps);
    const Var ent = entropy_loss(x, tab, !config.off_policy);
    const Var loss = ad::add(ppo.loss, ad::mul(ent, tape.constant(Tensor::scalar(-config.ent_coef))));
    adam.step(params, tape.backward(loss));
    double hits = 0.0;
    const auto best = static_cast<int>(std::max_element(config.rewards.begin(), config.rewards.end()) - config.rewards.begin());
    for (int a : tab.actions) hits += a == best ? 1.0 : 0.0;
    result.final_batch_success = hits / static_cast<double>(n);
    done += static_cast<long>(n);
  }
  ad::Tape tape;
  const Tensor probs = ad::softmax(ad::additive_mask(tape.constant(logits), keep)).value();
  const auto best = static_cast<std::size_t>(std::max_element(config.rewards.begin(), config.rewards.end()) - config.rewards.begin());
  result.success = probs[best];
  result.logits.assign(logits.data().begin(), logits.data().end());
  return result;
}

std::vector<double> bandit_gradient_sample(std::span<const double> logits, const BanditConfig& config, Rng& rng) {
  const StepTable tab = bandit_table(logits, config, 1, rng);
  Tensor param({1, logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  ad::Tape tape;
  const Var x = bandit_logits(tape, param, 1);
  const PpoLoss ppo = config.off_policy ? ppo_loss_offpolicy(x, tab, config.clip_eps)
                                        : ppo_loss_onpolicy(x, tab, config.clip_eps);
  const Tensor g = tape.backward(ppo.loss).of(param);
  std::vector<double> out(g.data().begin(), g.data().end());
  for (double& v : out) v = -v;
  return out;
}

}  // namespace trufll
