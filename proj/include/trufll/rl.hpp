#pragma once

// Rollout collection and PPO training, on-policy over the truncated action
// space or off-policy with the full policy as target.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trufll/autodiff.hpp"
#include "trufll/env.hpp"
#include "trufll/lang.hpp"
#include "trufll/policy.hpp"
#include "trufll/truncation.hpp"

namespace trufll {

enum class Mode {
  Scratch,
  ScratchKlTask,
  ScratchKlExt,
  TrufllTask,
  TrufllExt,
  TrufllOff,
  TrufllOffKl,
  Pretrain,
  PretrainRl,
  TrufllPretrain,
};
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
std::span<const Mode> all_modes();

enum class LmChoice { Task, External };
std::string to_string(LmChoice c);
LmChoice lm_choice_from_string(const std::string& s);

struct TrainerConfig {
  Mode mode = Mode::Scratch;
  double clip_eps = 0.02;
  double vf_coef = 0.5;
  double ent_coef = 0.01;
  double kl_coef = 0.1;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  double grad_clip = 1.0;
  // Passes over each collected batch, each split into `minibatches` slices of
  // episodes. Ratios are always taken against the collection-time snapshot.
  int ppo_epochs = 1;
  std::size_t minibatches = 1;
  long episodes = 30000;
  // Applied in truncating modes; ignored otherwise.
  TruncationSpec trunc;
  // LM used for truncation and for the KL penalty.
  LmChoice trunc_lm = LmChoice::Task;
  LmChoice kl_lm = LmChoice::Task;
  RewardKind reward = RewardKind::Exact;
  bool normalize_advantages = false;
  // Episodes in the rolling reward window.
  std::size_t rolling_window = 5000;

  // Mode defaults: lr, batch size, truncation and KL language models.
  static TrainerConfig for_mode(Mode mode);
  void validate() const;

  bool truncates() const;
  bool off_policy() const;
  bool uses_kl() const;
  bool pretrains() const;
  bool runs_rl() const;
  // Truncation active at evaluation time (dropped for off-policy modes).
  bool truncates_at_test() const { return truncates() && !off_policy(); }
};

struct StepRecord {
  Token action = 0;
  std::vector<unsigned char> keep;
  std::size_t mask_size = 0;
  // log pi-_old(a|s) and log pi_old(a|s) at collection time.
  double logp_trunc_old = 0.0;
  double logp_full_old = 0.0;
  double value_old = 0.0;
  double reward = 0.0;
  // Probability mass of the full policy inside the mask.
  double sumva = 1.0;
  // log f_LM(.|history) of the KL language model; empty unless needed.
  std::vector<double> kl_logp;
};

struct Trajectory {
  Episode episode;
  std::vector<StepRecord> steps;
  double episode_return = 0.0;
  // 1-based oracle rank of the target for the produced question.
  int target_rank = 0;
  bool success() const { return target_rank == 1; }
  // <sos> followed by the chosen actions.
  TokenSequence tokens() const;
};

struct Batch {
  std::vector<Trajectory> episodes;
  // Per episode, per step.
  std::vector<std::vector<double>> returns;
  std::vector<std::vector<double>> advantages;
  std::size_t step_count() const;
};

struct RolloutSpec {
  const SynthQA* env = nullptr;
  TruncationSpec trunc;
  const NGramModel* trunc_lm = nullptr;
  // When set, every step records this LM's log-distribution.
  const NGramModel* kl_lm = nullptr;
  RewardKind reward = RewardKind::Exact;
  // Drives the temperature schedule.
  long step_counter = 0;
};

// Runs n episodes in lockstep under the frozen parameters.
Batch collect_rollouts(const PolicyParameters& params, const RolloutSpec& spec, std::size_t n, Rng& rng);

// R_t = sum_{i >= t} r_i, A_t = R_t - V_old(s_t); optionally standardized.
void compute_returns(Batch& batch, bool normalize_advantages = false);

// Flattened, time-major view of a batch: row t*B + b is step t of episode b.
// Rows past an episode's end carry zero weight.
struct StepTable {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  std::size_t vocab = 0;
  std::vector<std::vector<Token>> inputs;  // [steps][episodes]
  std::vector<int> actions;
  std::vector<unsigned char> keep;  // rows * vocab
  std::vector<double> logp_trunc_old, logp_full_old, returns, advantages;
  // 1 / (number of valid steps) on valid rows, else 0.
  std::vector<double> weights;
  ad::Tensor kl_logp;  // [rows, vocab] when the batch carries KL targets
  std::size_t rows() const { return episodes * steps; }
};
StepTable build_step_table(const Batch& batch, std::size_t vocab);

// min(rho A, clamp(rho, 1-eps, 1+eps) A) and whether the clipped branch is
// strictly smaller.
struct ClippedTerm {
  double value;
  bool clipped;
};
ClippedTerm clipped_term(double ratio, double advantage, double eps);

struct PpoLoss {
  ad::Var loss;
  std::vector<double> ratios;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};
// rho = pi-_theta(a|s) / pi-_old(a|s) under the stored masks.
PpoLoss ppo_loss_onpolicy(ad::Var logits, const StepTable& table, double eps);
// rho = pi_theta(a|s)/pi_old(a|s) * pi_old(a|s)/pi-_old(a|s), full policy.
PpoLoss ppo_loss_offpolicy(ad::Var logits, const StepTable& table, double eps);
ad::Var value_loss(ad::Var values, const StepTable& table);
// Mean entropy of the truncated (masked) or full policy.
ad::Var entropy_loss(ad::Var logits, const StepTable& table, bool truncated);
// Mean KL(pi_theta || f_LM) over the full vocabulary.
ad::Var kl_loss(ad::Var logits, const StepTable& table);

struct LossBreakdown {
  double total = 0.0;
  double ppo = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

// L_PPO + vf_coef L_VF - ent_coef L_E (+ kl_coef L_KL) for the config's mode.
ad::Var total_loss(ad::Var logits, ad::Var values, const StepTable& table, const TrainerConfig& config,
                   LossBreakdown* breakdown = nullptr);

// One optimizer step on the batch.
LossBreakdown train_step(PolicyParameters& params, ad::Adam& adam, const Batch& batch, const TrainerConfig& config);

struct EpisodeLog {
  long episode = 0;
  double reward = 0.0;
  double rolling_reward = 0.0;
  bool success = false;
  double rolling_success = 0.0;
  double mean_mask_size = 0.0;
  double sumva = 1.0;
  int length = 0;
};

struct UpdateLog {
  long update = 0;
  // Episodes consumed so far.
  long episodes = 0;
  LossBreakdown losses;
  double mean_reward = 0.0;
  double rolling_reward = 0.0;
  double rolling_success = 0.0;
  double mean_mask_size = 0.0;
  double sumva = 1.0;
  double mean_length = 0.0;
};

struct TrainRecord {
  std::vector<EpisodeLog> episodes;
  std::vector<UpdateLog> updates;
};

struct LanguageModels {
  const NGramModel* task = nullptr;
  const NGramModel* external = nullptr;
  const NGramModel* get(LmChoice c) const { return c == LmChoice::Task ? task : external; }
};

// Collect -> returns -> train_step until the episode budget is spent. The
// callback (if any) sees each update as soon as it is done.
TrainRecord train(PolicyParameters& params, const TrainerConfig& config, const SynthQA& env, const LanguageModels& lms,
                  Rng& rng, const std::function<void(const UpdateLog&)>& on_update = {});

// Single-step bandit used by the estimator checks and control experiments.
// The policy is a table of logits [1, arms]; values are fixed at zero.
struct BanditConfig {
  std::vector<double> rewards{0.0, 0.0, 1.0, 0.0, 0.0};
  // Kept arms of the behavior policy; empty means no truncation.
  std::vector<unsigned char> keep;
  bool off_policy = false;
  long episodes = 2000;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double clip_eps = 0.02;
  double ent_coef = 0.01;
  std::uint64_t seed = 0;
};

struct BanditResult {
  std::vector<double> logits;
  // Probability of the best arm under the behavior policy after training.
  double success = 0.0;
  // Empirical success over the final batch.
  double final_batch_success = 0.0;
};

BanditResult train_bandit(const BanditConfig& config);

// Per-episode PPO gradient of the objective (minus the loss) w.r.t. the bandit
// logits, for an action drawn from the behavior policy at theta = theta_old.
std::vector<double> bandit_gradient_sample(std::span<const double> logits, const BanditConfig& config, Rng& rng);

}  // namespace trufll
