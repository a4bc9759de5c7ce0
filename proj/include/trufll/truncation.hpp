#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trufll/lang.hpp"
#include "trufll/rng.hpp"

namespace trufll {

enum class TruncKind { None, TopK, ProbaThresh, TopP, Sample };

std::string to_string(TruncKind kind);
TruncKind trunc_kind_from_string(const std::string& name);

struct TruncationSpec {
  TruncKind kind = TruncKind::None;
  // top_k and sample.
  int k = 0;
  // proba_thresh; ignored when alpha_inverse_vocab is set.
  double alpha = 0.0;
  // proba_thresh with alpha = 1/|V| resolved at call time.
  bool alpha_inverse_vocab = false;
  // top_p.
  double p = 0.0;
  std::optional<TemperatureSchedule> schedule;
  // Removes <eos> from the first step's action set so episodes cannot be empty.
  bool block_eos_at_start = true;

  void validate() const;
  // Short label such as "p_th(0.05)", "top_k(10)", "p_th(1/V)".
  std::string label() const;
  // Parses the parameter text for a kind: "10", "0.05", "1/V".
  static TruncationSpec from_text(const std::string& kind, const std::string& param);
  std::string param_text() const;
};

class TruncationMask {
 public:
  TruncationMask() = default;
  explicit TruncationMask(std::vector<unsigned char> keep);
  static TruncationMask all(std::size_t n);

  std::size_t vocab_size() const { return keep_.size(); }
  // Number of kept words.
  std::size_t size() const { return count_; }
  bool contains(std::size_t w) const { return keep_[w] != 0; }
  std::span<const unsigned char> keep() const { return keep_; }
  std::vector<std::size_t> members() const;

  friend bool operator==(const TruncationMask&, const TruncationMask&) = default;

 private:
  std::vector<unsigned char> keep_;
  std::size_t count_ = 0;
};

struct TruncatedDistribution {
  std::vector<double> probs;
  const TruncationMask* mask = nullptr;
};

// The k highest-probability words; ties broken by lower index.
TruncationMask trunc_topk(std::span<const double> dist, int k);
// Words with probability > alpha; the argmax alone when none qualifies.
TruncationMask trunc_pth(std::span<const double> dist, double alpha);
// Smallest probability-sorted prefix whose mass strictly exceeds p.
TruncationMask trunc_topp(std::span<const double> dist, double p);
// Union of k draws with replacement.
TruncationMask trunc_sample(std::span<const double> dist, int k, Rng& rng);

// softmax(logit + (-1e30 on masked entries)).
TruncatedDistribution masked_softmax(std::span<const double> logits, const TruncationMask& mask);

// Applies the schedule temperature for `step_counter` to the LM's next-token
// distribution after `history`, then dispatches on the spec kind.
TruncationMask build_mask(const TruncationSpec& spec, const NGramModel& lm, std::span<const Token> history,
                          long step_counter, Rng& rng);
// Same, from an already computed (untempered) LM distribution.
TruncationMask build_mask_from_dist(const TruncationSpec& spec, std::span<const double> lm_dist,
                                    bool at_start, long step_counter, Rng& rng);

}  // namespace trufll
