#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "trufll/errors.hpp"
#include "trufll/truncation.hpp"

using namespace trufll;

namespace {

using Set = std::vector<std::size_t>;

// Random distribution over 2..12 words, with forced ties a quarter of the time.
std::vector<double> random_dist(Rng& rng, std::size_t max_n = 12) {
  const std::size_t n = 2 + uniform_index(rng, max_n - 1);
  std::vector<double> d(n);
  for (double& v : d) v = -std::log(1.0 - uniform01(rng));
  if (uniform01(rng) < 0.25) d[uniform_index(rng, n)] = d[uniform_index(rng, n)];
  const double z = std::accumulate(d.begin(), d.end(), 0.0);
  for (double& v : d) v /= z;
  return d;
}

// Words that beat w in the (probability desc, index asc) order.
std::size_t better_count(const std::vector<double>& d, std::size_t w) {
  std::size_t c = 0;
  for (std::size_t v = 0; v < d.size(); ++v)
    if (d[v] > d[w] || (d[v] == d[w] && v < w)) ++c;
  return c;
}

Set oracle_topk(const std::vector<double>& d, std::size_t k) {
  Set s;
  for (std::size_t w = 0; w < d.size(); ++w)
    if (better_count(d, w) < k) s.push_back(w);
  return s;
}

Set oracle_pth(const std::vector<double>& d, double alpha) {
  Set s;
  for (std::size_t w = 0; w < d.size(); ++w)
    if (d[w] > alpha) s.push_back(w);
  if (s.empty()) return oracle_topk(d, 1);
  return s;
}

// Minimal cardinality over all 2^n subsets with mass > p, realized by the
// tie-broken prefix of that size.
Set oracle_topp(const std::vector<double>& d, double p) {
  const std::size_t n = d.size();
  std::size_t best = n;
  for (std::uint32_t bits = 1; bits < (1u << n); ++bits) {
    double mass = 0.0;
    std::size_t card = 0;
    for (std::size_t w = 0; w < n; ++w)
      if (bits & (1u << w)) {
        mass += d[w];
        ++card;
      }
    if (mass > p) best = std::min(best, card);
  }
  return oracle_topk(d, best);
}

}  // namespace

TEST_CASE("top_k examples") {
  std::vector<double> d{0.5, 0.3, 0.15, 0.05};
  CHECK(trunc_topk(d, 2).members() == Set{0, 1});
  CHECK(trunc_topk(d, 4).size() == 4);
  std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  CHECK(trunc_topk(u, 2).members() == Set{0, 1});
  CHECK(oracle_topk(u, 2) == Set{0, 1});
  CHECK_THROWS_AS(trunc_topk(d, 0), UsageError);
  CHECK_THROWS_AS(trunc_topk(d, 5), UsageError);
}

TEST_CASE("probability threshold examples") {
  std::vector<double> d{0.5, 0.3, 0.15, 0.05};
  CHECK(trunc_pth(d, 0.25).members() == Set{0, 1});
  CHECK(oracle_pth(d, 0.25) == Set{0, 1});
  CHECK(trunc_pth(d, 0.9).members() == Set{0});
}

TEST_CASE("top_p examples") {
  std::vector<double> d{0.5, 0.3, 0.15, 0.05};
  CHECK(trunc_topp(d, 0.85).members() == Set{0, 1, 2});
  CHECK(oracle_topp(d, 0.85) == Set{0, 1, 2});
  CHECK(trunc_topp(d, 0.4).members() == Set{0});
  std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  CHECK(trunc_topp(u, 0.5).members() == Set{0, 1, 2});
  CHECK(oracle_topp(u, 0.5) == Set{0, 1, 2});
}

TEST_CASE("sample truncation") {
  Rng rng(1);
  std::vector<double> onehot{0, 0, 1, 0};
  for (int k : {1, 5, 50}) CHECK(trunc_sample(onehot, k, rng).members() == Set{2});

  std::vector<double> d{0.4, 0.3, 0.2, 0.1};
  Rng a(42), b(42);
  CHECK(trunc_sample(d, 3, a) == trunc_sample(d, 3, b));

  constexpr std::size_t n = 10;
  std::vector<double> uni(n, 1.0 / n);
  Rng mc(7);
  double total = 0.0;
  constexpr int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto m = trunc_sample(uni, static_cast<int>(n), mc);
    CHECK(m.size() <= n);
    total += static_cast<double>(m.size());
  }
  const double expected = n * (1.0 - std::pow(1.0 - 1.0 / n, static_cast<double>(n)));
  CHECK(std::abs(total / trials - expected) <= 0.02 * expected);
}

TEST_CASE("masks equal the brute-force set definitions on random distributions") {
  Rng rng(2718);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto d = random_dist(rng);
    const std::size_t k = 1 + uniform_index(rng, d.size());
    const double alpha = 0.01 + 0.5 * uniform01(rng);
    const double p = 0.05 + 0.9 * uniform01(rng);
    REQUIRE(trunc_topk(d, static_cast<int>(k)).members() == oracle_topk(d, k));
    REQUIRE(trunc_pth(d, alpha).members() == oracle_pth(d, alpha));
    const auto topp = trunc_topp(d, p);
    REQUIRE(topp.members() == oracle_topp(d, p));
    // Minimality: dropping the least likely member leaves mass <= p.
    const auto mem = topp.members();
    double mass = 0.0, least = 1.0;
    for (auto w : mem) {
      mass += d[w];
      least = std::min(least, d[w]);
    }
    REQUIRE(mass > p);
    REQUIRE(mass - least <= p + 1e-15);
  }
}

TEST_CASE("masked_softmax contract") {
  std::vector<double> logits{2, 1, 0, -1};
  TruncationMask m({1, 0, 1, 0});
  auto td = masked_softmax(logits, m);
  CHECK(td.probs[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(td.probs[2] == doctest::Approx(1.0 / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(td.probs[1] == 0.0);

  auto full = masked_softmax(logits, TruncationMask::all(4));
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  for (std::size_t i = 0; i < 4; ++i) CHECK(full.probs[i] == doctest::Approx(std::exp(logits[i]) / z).epsilon(1e-12));

  auto single = masked_softmax(logits, TruncationMask({0, 0, 0, 1}));
  CHECK(single.probs == std::vector<double>{0, 0, 0, 1});

  CHECK_THROWS_AS(TruncationMask({0, 0, 0, 0}), UsageError);
}

TEST_CASE("masked softmax equals the renormalized restriction on random inputs") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 30);
    std::vector<double> logits(n);
    for (double& l : logits) l = 10.0 * (uniform01(rng) - 0.5);
    std::vector<unsigned char> keep(n);
    for (auto& k : keep) k = uniform01(rng) < 0.5;
    keep[uniform_index(rng, n)] = 1;
    TruncationMask mask(keep);
    auto td = masked_softmax(logits, mask);
    double mx = -1e300;
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> full(n);
    double z = 0.0, zmask = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += full[i] = std::exp(logits[i] - mx);
    for (std::size_t i = 0; i < n; ++i)
      if (keep[i]) zmask += full[i] / z;
    for (std::size_t i = 0; i < n; ++i) {
      if (keep[i])
        REQUIRE(std::abs(td.probs[i] - (full[i] / z) / zmask) <= 1e-12);
      else
        REQUIRE(td.probs[i] <= 1e-300);
    }
  }
}

TEST_CASE("flattening the LM distribution never shrinks top_p or threshold masks") {
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto d = random_dist(rng);
    std::sort(d.begin(), d.end());
    if (std::adjacent_find(d.begin(), d.end()) != d.end()) continue;
    const double p = 0.1 + 0.8 * uniform01(rng);
    const double alpha = 1.0 / static_cast<double>(d.size());
    const auto cold = temper(d, 0.7);
    const auto hot = temper(d, 1.5);
    CHECK(trunc_topp(hot, p).size() >= trunc_topp(cold, p).size());
    CHECK(trunc_topp(hot, p).size() >= trunc_topp(d, p).size());
    // Threshold masks grow with temperature when alpha sits at 1/|V|.
    CHECK(trunc_pth(hot, alpha).size() >= trunc_pth(cold, alpha).size());
    ++checked;
  }
  CHECK(checked > 1000);
}

TEST_CASE("build_mask dispatch") {
  // An LM over 16 words with a skewed unigram.
  std::vector<TokenSequence> corpus;
  for (Token w = 4; w < 16; ++w)
    for (int r = 0; r < (w - 3) * 3; ++r) corpus.push_back({Vocabulary::kSos, w, Vocabulary::kEos});
  NGramModel lm = train_ngram(corpus, 16, 3, 0.1);
  Rng rng(3);
  TokenSequence start{Vocabulary::kSos};
  TokenSequence later{Vocabulary::kSos, 5};

  TruncationSpec none;
  CHECK(build_mask(none, lm, start, 0, rng).size() == 16);

  auto topk = TruncationSpec::from_text("top_k", "10");
  CHECK(build_mask(topk, lm, later, 0, rng).size() == 10);

  auto inv = TruncationSpec::from_text("proba_thresh", "1/V");
  CHECK(inv.label() == "p_th(1/V)");
  const auto dist = lm.next_dist(start);
  std::vector<double> d(dist.begin(), dist.end());
  auto expect = trunc_pth(d, 1.0 / 16.0);
  auto got = build_mask(inv, lm, start, 0, rng);
  for (std::size_t w = 0; w < 16; ++w)
    if (w != Vocabulary::kEos) CHECK(got.contains(w) == expect.contains(w));
  CHECK_FALSE(got.contains(Vocabulary::kEos));

  // After <sos> a, <eos> is the only continuation; the start rule does not apply.
  auto pth = TruncationSpec::from_text("p_th", "0.5");
  CHECK(build_mask(pth, lm, later, 0, rng).members() == std::vector<std::size_t>{Vocabulary::kEos});

  CHECK_THROWS_AS(TruncationSpec::from_text("top_p", "1.5"), ConfigError);
  CHECK_THROWS_AS(TruncationSpec::from_text("top_k", "2.5"), ConfigError);
  CHECK_THROWS_AS(TruncationSpec::from_text("nucleus", "0.5"), ConfigError);
}

TEST_CASE("temperature schedule widens the truncation early in training") {
  std::vector<double> d{0.6, 0.2, 0.1, 0.05, 0.03, 0.02};
  TruncationSpec spec = TruncationSpec::from_text("p_th", "0.08");
  spec.block_eos_at_start = false;
  spec.schedule = TemperatureSchedule{.tau_max = 3.0, .tau_min = 1.0, .factor = 0.5, .period = 100};
  Rng rng(0);
  const auto early = build_mask_from_dist(spec, d, false, 0, rng);
  const auto late = build_mask_from_dist(spec, d, false, 1000, rng);
  CHECK(early.size() > late.size());
  CHECK(late.members() == Set{0, 1, 2});
}
