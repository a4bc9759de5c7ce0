#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "trufll/errors.hpp"
#include "trufll/lang.hpp"

using namespace trufll;

namespace {

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("build_vocab orders reserved tokens then words lexicographically") {
  std::vector<std::string> corpus{"a b", "b c"};
  Vocabulary v = build_vocab(corpus);
  CHECK(v.words() == std::vector<std::string>{"<sos>", "<eos>", "<pad>", "<unk>", "a", "b", "c"});
  CHECK(v.index("c") == 6);
  CHECK(v.index("zzz") == Vocabulary::kUnk);

  std::vector<std::string> dup{"b b a", "a"};
  CHECK(build_vocab(dup).size() == 6);

  std::vector<std::string> empty;
  CHECK_THROWS_AS(build_vocab(empty), UsageError);
}

TEST_CASE("encode and decode") {
  std::vector<std::string> corpus{"what color is it"};
  Vocabulary v = build_vocab(corpus);
  TokenSequence s = v.encode("what color is it");
  CHECK(s.front() == Vocabulary::kSos);
  CHECK(s.back() == Vocabulary::kEos);
  CHECK(v.decode(s) == "what color is it");
}

TEST_CASE("train_ngram smoothing and backoff") {
  // Vocabulary [<sos>,<eos>,<pad>,<unk>,a,b,c]
  constexpr Token a = 4, b = 5;
  SUBCASE("unigram with k=0 on 'a a a'") {
    std::vector<TokenSequence> corpus{{a, a, a}};
    NGramModel m = train_ngram(corpus, 7, 1, 0.0);
    TokenSequence h{};
    CHECK(m.prob(h, a) == 1.0);
  }
  SUBCASE("P(b|a) hand-evaluated") {
    std::vector<TokenSequence> corpus{{Vocabulary::kSos, a, b, Vocabulary::kEos}};
    NGramModel m = train_ngram(corpus, 7, 3, 0.1);
    TokenSequence h{Vocabulary::kSos, a};
    CHECK(m.prob(h, b) == doctest::Approx((1 + 0.1) / (1 + 0.7)).epsilon(1e-14));
  }
  SUBCASE("unseen history backs off to the unigram") {
    std::vector<TokenSequence> corpus{{Vocabulary::kSos, a, b, Vocabulary::kEos}};
    NGramModel m = train_ngram(corpus, 7, 3, 0.1);
    // c never occurs, so both the trigram and bigram histories are unseen.
    TokenSequence unseen{Vocabulary::kSos, b, 6};
    TokenSequence empty{};
    NGramModel uni = train_ngram(corpus, 7, 1, 0.1);
    CHECK(m.next_dist(unseen) == uni.next_dist(empty));
  }
  std::vector<TokenSequence> corpus{{a}};
  CHECK_THROWS_AS(train_ngram(corpus, 7, 0, 0.1), UsageError);
}

TEST_CASE("lm_next_dist temperature") {
  std::vector<double> d{0.8, 0.2};
  auto t1 = temper(d, 1.0);
  CHECK(t1 == d);
  auto half = temper(d, 0.5);
  CHECK(half[0] == doctest::Approx(0.64 / 0.68).epsilon(1e-12));
  CHECK(half[0] == doctest::Approx(0.941).epsilon(1e-3));
  auto hot = temper(std::vector<double>{0.9, 0.1}, 1e6);
  CHECK(hot[0] == doctest::Approx(0.5).epsilon(1e-5));
  CHECK_THROWS_AS(temper(d, 0.0), UsageError);

  std::vector<TokenSequence> corpus{{0, 4, 5, 1}};
  NGramModel m = train_ngram(corpus, 7, 3, 0.1);
  TokenSequence h{0};
  CHECK_THROWS_AS(lm_next_dist(m, h, -1.0), UsageError);
}

TEST_CASE("next-token distributions are positive, normalized, argmax-stable under temperature") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> tok(4, 11);
  std::vector<TokenSequence> corpus;
  for (int i = 0; i < 200; ++i) {
    TokenSequence s{Vocabulary::kSos};
    for (int j = 0; j < 6; ++j) s.push_back(tok(rng));
    s.push_back(Vocabulary::kEos);
    corpus.push_back(s);
  }
  NGramModel m = train_ngram(corpus, 12, 3, 0.1);
  std::uniform_real_distribution<double> temp(0.1, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    TokenSequence h{Vocabulary::kSos};
    for (int j = 0; j < trial % 5; ++j) h.push_back(tok(rng));
    const double tau = temp(rng);
    auto p = lm_next_dist(m, h, tau);
    CHECK(std::abs(total(p) - 1.0) <= 1e-9);
    CHECK(*std::min_element(p.begin(), p.end()) > 0.0);
    CHECK(argmax(p) == argmax(lm_next_dist(m, h, 1.0)));
  }
}

TEST_CASE("perplexity examples") {
  NGramModel uniform(4, 3, 0.1);
  TokenSequence s{0, 2, 3, 1};
  CHECK(lm_perplexity(uniform, s) == doctest::Approx(4.0).epsilon(1e-12));

  std::vector<TokenSequence> corpus{{0, 4, 5, 1}};
  NGramModel exact = train_ngram(corpus, 7, 3, 0.0);
  CHECK(lm_perplexity(exact, corpus[0]) == doctest::Approx(1.0).epsilon(1e-12));

  // Unigram with P(x)=0.5, P(y)=0.125.
  constexpr Token x = 4, y = 5, z = 6;
  std::vector<TokenSequence> counts{{x, x, x, x, y, z, z, z}};
  NGramModel uni = train_ngram(counts, 7, 1, 0.0);
  TokenSequence two{x, y};
  CHECK(lm_perplexity(uni, two) == doctest::Approx(4.0).epsilon(1e-12));

  TokenSequence empty{0};
  CHECK_THROWS_AS(lm_perplexity(uni, empty), UsageError);
}

TEST_CASE("argmax-decoded sequences have lower perplexity than random ones") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tok(4, 13);
  // Skewed corpus: a fixed phrase plus noise.
  std::vector<TokenSequence> corpus;
  for (int i = 0; i < 300; ++i) {
    TokenSequence s{0};
    for (int j = 0; j < 5; ++j) s.push_back(i % 3 == 0 ? tok(rng) : 4 + j);
    s.push_back(1);
    corpus.push_back(s);
  }
  NGramModel m = train_ngram(corpus, 14, 3, 0.1);
  int wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TokenSequence greedy{0}, random{0};
    for (int j = 0; j < 6; ++j) {
      auto p = m.next_dist(greedy);
      greedy.push_back(static_cast<Token>(argmax(p)));
      random.push_back(tok(rng));
    }
    if (lm_perplexity(m, greedy) <= lm_perplexity(m, random)) ++wins;
  }
  CHECK(wins == 100);
}

TEST_CASE("temperature schedule decays geometrically and clamps") {
  TemperatureSchedule s{.tau_max = 2.0, .tau_min = 0.5, .factor = 0.9, .period = 10, .step = 0};
  s.validate();
  for (long n = 0; n < 40; ++n) {
    CHECK(s.tau_at(n * 10) == std::max(0.5, 2.0 * std::pow(0.9, static_cast<double>(n))));
    CHECK(s.tau_at(n * 10 + 9) == s.tau_at(n * 10));
    CHECK(s.tau_at(n * 10 + 10) <= s.tau_at(n * 10));
  }
  CHECK(s.tau_at(100000) == 0.5);
  s.advance(25);
  CHECK(s.tau() == s.tau_at(25));
  TemperatureSchedule bad{.tau_max = 1.0, .tau_min = 2.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("n-gram model dump round-trips") {
  std::vector<TokenSequence> corpus{{0, 4, 5, 1}, {0, 5, 6, 4, 1}};
  NGramModel m = train_ngram(corpus, 7, 3, 0.1);
  auto path = std::filesystem::temp_directory_path() / "trufll_ngram_test.txt";
  m.save(path);
  NGramModel back = NGramModel::load(path);
  CHECK(back == m);
  {
    std::ofstream os(path);
    os << "TRUFLL-NGRAM 7\n";
  }
  CHECK_THROWS_AS(NGramModel::load(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(NGramModel::load(path), IoError);
}
