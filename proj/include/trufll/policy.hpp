#pragma once

// Recurrent conditional policy pi(w_t | w_<t, c) with a value head.
//
// Each step feeds concat(word embedding of the previous token, answer
// embedding, linear projection of the scene features) to a single-layer GRU;
// the logits and value heads read the new hidden state. The GRU input weights
// are stored split by input block (word part, context part) so the context
// contribution is computed once per episode.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "trufll/autodiff.hpp"
#include "trufll/env.hpp"
#include "trufll/lang.hpp"

namespace trufll {

struct PolicyDims {
  std::size_t vocab = 0;
  std::size_t answers = 0;
  std::size_t features = 0;
  std::size_t embed = 32;
  std::size_t answer_embed = 32;
  std::size_t context = 32;
  std::size_t hidden = 64;

  void validate() const;
  std::size_t context_input() const { return answer_embed + context; }
  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

struct PolicyParameters {
  PolicyDims dims;
  ad::Tensor word_embed;    // [V, E]
  ad::Tensor answer_embed;  // [A, Ea]
  ad::Tensor ctx_proj;      // [F, C]
  ad::Tensor ctx_bias;      // [1, C]
  // Gate blocks are laid out [r | z | n] along the columns.
  ad::Tensor gru_word;   // [E, 3H]
  ad::Tensor gru_ctx;    // [Ea + C, 3H]
  ad::Tensor gru_hid;    // [H, 3H]
  ad::Tensor gru_bias_x; // [1, 3H]
  ad::Tensor gru_bias_h; // [1, 3H]
  ad::Tensor head_w;     // [H, V]
  ad::Tensor head_b;     // [1, V]
  ad::Tensor value_w;    // [H, 1]
  ad::Tensor value_b;    // [1, 1]

  std::vector<ad::Tensor*> tensors();
  std::vector<const ad::Tensor*> tensors() const;
  std::size_t count() const;
  bool all_finite() const;
  friend bool operator==(const PolicyParameters&, const PolicyParameters&) = default;
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor; embedding tables
// are lookups of one-hot inputs and use fan_in = 1.
PolicyParameters init_params(std::uint64_t seed, const PolicyDims& dims);

// Binary checkpoint: "TRUFLLPP" magic, u32 version, dims, then every tensor
// as u64 element count followed by little-endian IEEE doubles.
void save_params(const PolicyParameters& params, const std::filesystem::path& path);
PolicyParameters load_params(const std::filesystem::path& path);

// The policy network unrolled on a tape for a batch of B contexts. Parameters
// are registered once; every step works on [B, .] rows.
class PolicyGraph {
 public:
  PolicyGraph(ad::Tape& tape, const PolicyParameters& params, std::span<const Context* const> contexts);

  std::size_t batch() const { return batch_; }
  ad::Tape& tape() const { return *tape_; }
  // Zero hidden state [B, H].
  ad::Var initial_state() const;

  struct Step {
    ad::Var logits;  // [B, V]
    ad::Var value;   // [B, 1]
    ad::Var state;   // [B, H]
  };
  Step step(ad::Var state, std::span<const Token> prev_tokens) const;

  // Teacher-forced unroll over time-major inputs: inputs[t][b] is the token
  // fed at step t. Row t*B + b of the results belongs to step t of episode b.
  struct Unrolled {
    ad::Var logits;  // [L*B, V]
    ad::Var values;  // [L*B, 1]
  };
  Unrolled unroll(std::span<const std::vector<Token>> inputs) const;

 private:
  ad::Tape* tape_;
  const PolicyParameters* params_;
  std::size_t batch_;
  ad::Var word_gates_;  // [V, 3H] = word_embed * gru_word
  ad::Var ctx_gates_;   // [B, 3H], includes the input bias
  ad::Var gru_hid_, gru_bias_h_, head_w_, head_b_, value_w_, value_b_;
  ad::Var minus_one_;
};

struct PolicyState {
  std::vector<double> hidden;
};

struct StepOutput {
  std::vector<double> logits;
  double value = 0.0;
  PolicyState next;
};

// Single-context step without gradient bookkeeping. An empty state means the
// zero initial state.
StepOutput policy_step(const PolicyParameters& params, const PolicyState& state, Token prev_token,
                       const Context& context);

struct MleConfig {
  int epochs = 10;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
};

// Teacher-forced token-mean negative log-likelihood over questions (each
// question includes its <eos>), minimized with Adam over shuffled minibatches.
// Returns the training-set loss before training followed by the loss after
// each epoch.
std::vector<double> mle_pretrain(PolicyParameters& params, std::span<const Example> dataset, const MleConfig& config);
// Token-mean NLL of the dataset under params.
double mle_loss(const PolicyParameters& params, std::span<const Example> dataset);

}  // namespace trufll
