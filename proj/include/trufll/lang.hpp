#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trufll {

using Token = int;
using TokenSequence = std::vector<Token>;

// Word list with the reserved tokens at fixed indices 0..3.
class Vocabulary {
 public:
  static constexpr Token kSos = 0;
  static constexpr Token kEos = 1;
  static constexpr Token kPad = 2;
  static constexpr Token kUnk = 3;

  Vocabulary();
  // Reserved tokens followed by `words` in the given order.
  explicit Vocabulary(std::span<const std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(Token t) const;
  // kUnk for unknown words.
  Token index(std::string_view w) const;
  bool contains(std::string_view w) const;
  const std::vector<std::string>& words() const { return words_; }

  // Whitespace tokenization. With markers, wraps the sentence in <sos> ... <eos>.
  TokenSequence encode(std::string_view sentence, bool markers = true) const;
  // Joins words, skipping <sos>, <pad> and stopping at <eos>.
  std::string decode(std::span<const Token> seq) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
};

std::vector<std::string> split_words(std::string_view sentence);

// Reserved tokens, then every distinct corpus word in lexicographic order.
Vocabulary build_vocab(std::span<const std::string> corpus);

// Additive-smoothed n-gram model with backoff to shorter histories whose
// count is zero:
//   P(w | h) = (count(h, w) + k) / (count(h) + k |V|)
// Histories before the start of a sequence are padded with <sos>; a leading
// <sos> in a training or scored sequence is context only.
class NGramModel {
 public:
  NGramModel() = default;
  NGramModel(std::size_t vocab_size, int order, double k);

  int order() const { return order_; }
  double smoothing() const { return k_; }
  std::size_t vocab_size() const { return vocab_size_; }

  void add_sequence(std::span<const Token> seq);

  // Next-token distribution after `history` (the full prefix; only the last
  // order-1 tokens are used).
  std::vector<double> next_dist(std::span<const Token> history) const;
  double prob(std::span<const Token> history, Token next) const;

  // Versioned plain-text count table.
  void save(const std::filesystem::path& path) const;
  static NGramModel load(const std::filesystem::path& path);

  friend bool operator==(const NGramModel&, const NGramModel&) = default;

 private:
  struct Row {
    double total = 0.0;
    std::vector<double> counts;
    friend bool operator==(const Row&, const Row&) = default;
  };
  std::uint64_t key(std::span<const Token> history, int length) const;
  const Row* find_row(std::span<const Token> padded_history, int length) const;

  std::size_t vocab_size_ = 0;
  int order_ = 0;
  double k_ = 0.0;
  // tables_[j] holds histories of length j.
  std::vector<std::unordered_map<std::uint64_t, Row>> tables_;
};

NGramModel train_ngram(std::span<const TokenSequence> corpus, std::size_t vocab_size, int order = 3,
                       double k = 0.1);

// softmax(log p / temperature) of the model's next-token distribution.
std::vector<double> lm_next_dist(const NGramModel& model, std::span<const Token> history,
                                 double temperature = 1.0);

// Applies temperature to an existing distribution.
std::vector<double> temper(std::span<const double> dist, double temperature);

// exp(-(1/L) sum_t log P(w_t | w_<t)) over every token of `seq` after an
// optional leading <sos>.
double lm_perplexity(const NGramModel& model, std::span<const Token> seq);

// tau = max(tau_min, tau_max * factor^floor(step / period)).
struct TemperatureSchedule {
  double tau_max = 1.0;
  double tau_min = 1.0;
  double factor = 1.0;
  long period = 1;
  long step = 0;

  void validate() const;
  double tau_at(long s) const;
  double tau() const { return tau_at(step); }
  void advance(long n = 1) { step += n; }
};

}  // namespace trufll
