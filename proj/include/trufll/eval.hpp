#pragma once

// Decoding strategies and the automatic metric suite: task success, recall@5,
// BLEU, CIDEr-D, perplexities under both language models, self-BLEU,
// peakiness and sumVA.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "trufll/env.hpp"
#include "trufll/lang.hpp"
#include "trufll/policy.hpp"
#include "trufll/truncation.hpp"

namespace trufll {

enum class DecodeMethod { Greedy, Sampling, LmRanking };
std::string to_string(DecodeMethod m);
DecodeMethod decode_method_from_string(const std::string& s);
std::span<const DecodeMethod> all_decode_methods();

struct DecodeConfig {
  DecodeMethod method = DecodeMethod::Greedy;
  // Candidates drawn by lm_ranking.
  int ranking_samples = 10;
  // Restrict the policy to the truncated action space while decoding. When
  // off, the truncation mask (if any) is still computed to measure sumVA.
  bool truncate = false;
  void validate() const;
};

struct DecodeSpec {
  TruncationSpec trunc;
  const NGramModel* trunc_lm = nullptr;
  // Scores lm_ranking candidates (the external LM).
  const NGramModel* ranking_lm = nullptr;
  int max_len = 12;
  long step_counter = 0;
};

struct DecodeResult {
  // <sos> followed by the generated words, ending with <eos> unless the
  // length limit was hit.
  TokenSequence tokens;
  // Per step: mass of the decoding distribution inside the truncation mask
  // and the mask size (both over the chosen sequence).
  std::vector<double> sumva;
  std::vector<std::size_t> mask_sizes;
  // lm_ranking only: every candidate, in draw order.
  std::vector<TokenSequence> candidates;
};

DecodeResult decode(const PolicyParameters& params, const Context& context, const DecodeSpec& spec,
                    const DecodeConfig& config, Rng& rng);

// Sentence BLEU over word sequences (markers stripped by the caller):
// geometric mean of clipped n-gram precisions for n = 1..max_n, add-one
// smoothed for n >= 2, times the brevity penalty against the closest
// reference length.
double bleu(std::span<const Token> candidate, std::span<const TokenSequence> references, int max_n = 4);

// Mean over samples of BLEU(sample, all other samples).
double self_bleu(std::span<const TokenSequence> samples);

// Sum of the ten largest unigram probabilities over every token of the corpus.
double peakiness(std::span<const TokenSequence> corpus);

// 1 when the target is among the top k answers.
int recall_at_k(const OracleResult& result, int target, int k);

// CIDEr-D: mean over n = 1..4 of 10 x mean over references of the clipped
// TF-IDF cosine with a gaussian length penalty (sigma = 6). Document
// frequencies come from the reference sets given at construction.
class CiderScorer {
 public:
  explicit CiderScorer(std::span<const std::vector<TokenSequence>> reference_sets, bool unit_idf = false);
  double score(std::span<const Token> candidate, std::span<const TokenSequence> references) const;

 private:
  double idf(const std::vector<Token>& gram) const;

  std::map<std::vector<Token>, double> df_;
  double docs_ = 0.0;
  bool unit_idf_ = false;
};

// Drops <sos>, <pad> and everything from <eos> on.
TokenSequence words_of(std::span<const Token> seq);

struct MetricSet {
  double success = 0.0;
  double recall5 = 0.0;
  double bleu = 0.0;
  double cider = 0.0;
  double ppl_task = 0.0;
  double ppl_ext = 0.0;
  double sumva = 1.0;
  double mask_size = 0.0;
};

struct MethodReport {
  DecodeMethod method = DecodeMethod::Greedy;
  MetricSet metrics;
};

struct SampleRow {
  std::size_t context = 0;
  DecodeMethod method = DecodeMethod::Greedy;
  std::string question;
  std::string target;
  int rank = 0;
};

struct EvalReport {
  std::size_t episodes = 0;
  // Average over the decoding methods.
  MetricSet mean;
  std::vector<MethodReport> methods;
  // From `diversity_samples` sampling-decoded questions per context.
  double self_bleu = 0.0;
  double peakiness = 0.0;
  std::vector<SampleRow> samples;
};

struct EvalConfig {
  std::size_t episodes = 500;
  int ranking_samples = 10;
  int diversity_samples = 10;
  std::vector<DecodeMethod> methods{DecodeMethod::Greedy, DecodeMethod::Sampling, DecodeMethod::LmRanking};
  void validate() const;
};

struct EvalSetup {
  const SynthQA* env = nullptr;
  const NGramModel* task_lm = nullptr;
  const NGramModel* ext_lm = nullptr;
  // Truncation used for sumVA and, when `truncate` is set, for decoding.
  TruncationSpec trunc;
  const NGramModel* trunc_lm = nullptr;
  bool truncate = false;
};

// Scores generated questions against the episodes they were produced for.
// questions[i] belongs to episodes[i]; perplexities are token-means including
// <eos>, averaged over questions.
MetricSet score_questions(const SynthQA& env, const NGramModel& task_lm, const NGramModel& ext_lm,
                          std::span<const Episode> episodes, std::span<const TokenSequence> questions,
                          const CiderScorer& cider, Rng& rng);

EvalReport evaluate(const PolicyParameters& params, const EvalSetup& setup, const EvalConfig& config, Rng& rng);

}  // namespace trufll
