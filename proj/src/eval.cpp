#include "trufll/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "trufll/errors.hpp"

namespace trufll {

namespace {

constexpr std::array<DecodeMethod, 3> kMethods{DecodeMethod::Greedy, DecodeMethod::Sampling, DecodeMethod::LmRanking};

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

DecodeResult run_policy(const PolicyParameters& params, const Context& context, const DecodeSpec& spec, bool truncate,
                        bool greedy, Rng& rng) {
  const std::size_t V = params.dims.vocab;
  const bool masking = spec.trunc.kind != TruncKind::None && spec.trunc_lm != nullptr;
  const TruncationMask everything = TruncationMask::all(V);
  DecodeResult out;
  out.tokens.push_back(Vocabulary::kSos);
  PolicyState state;
  for (int t = 0; t < spec.max_len; ++t) {
    const StepOutput step = policy_step(params, state, out.tokens.back(), context);
    state = step.next;
    const TruncationMask mask =
        masking ? build_mask(spec.trunc, *spec.trunc_lm, out.tokens, spec.step_counter, rng) : everything;
    const auto dist = masked_softmax(step.logits, truncate ? mask : everything);
    double outside = 0.0;
    for (std::size_t w = 0; w < V; ++w)
      if (!mask.contains(w)) outside += dist.probs[w];
    out.sumva.push_back(1.0 - outside);
    out.mask_sizes.push_back(mask.size());
    const auto a = static_cast<Token>(greedy ? argmax(dist.probs) : sample_categorical(dist.probs, rng));
    out.tokens.push_back(a);
    if (a == Vocabulary::kEos) break;
  }
  return out;
}

std::map<std::vector<Token>, double> ngram_counts(std::span<const Token> words, int n) {
  std::map<std::vector<Token>, double> counts;
  const auto len = static_cast<int>(words.size());
  for (int i = 0; i + n <= len; ++i) counts[std::vector<Token>(words.begin() + i, words.begin() + i + n)] += 1.0;
  return counts;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::Greedy: return "greedy";
    case DecodeMethod::Sampling: return "sampling";
    case DecodeMethod::LmRanking: return "lm_ranking";
  }
  return "greedy";
}

DecodeMethod decode_method_from_string(const std::string& s) {
  for (DecodeMethod m : kMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown decoding method '" + s + "'");
}

std::span<const DecodeMethod> all_decode_methods() { return kMethods; }

void DecodeConfig::validate() const {
  if (method == DecodeMethod::LmRanking && ranking_samples < 2) throw ConfigError("lm_ranking needs at least 2 samples");
}

DecodeResult decode(const PolicyParameters& params, const Context& context, const DecodeSpec& spec,
                    const DecodeConfig& config, Rng& rng) {
  config.validate();
  if (spec.max_len < 1) throw ConfigError("max_len must be at least 1");
  switch (config.method) {
    case DecodeMethod::Greedy: return run_policy(params, context, spec, config.truncate, true, rng);
    case DecodeMethod::Sampling: return run_policy(params, context, spec, config.truncate, false, rng);
    case DecodeMethod::LmRanking: break;
  }
  if (spec.ranking_lm == nullptr) throw UsageError("lm_ranking needs a scoring language model");
  DecodeResult best;
  double best_ppl = 0.0;
  std::vector<TokenSequence> candidates;
  for (int i = 0; i < config.ranking_samples; ++i) {
    DecodeResult r = run_policy(params, context, spec, config.truncate, false, rng);
    const double ppl = lm_perplexity(*spec.ranking_lm, r.tokens);
    candidates.push_back(r.tokens);
    if (i == 0 || ppl < best_ppl) {
      best_ppl = ppl;
      best = std::move(r);
    }
  }
  best.candidates = std::move(candidates);
  return best;
}

TokenSequence words_of(std::span<const Token> seq) {
  TokenSequence out;
  for (Token t : seq) {
    if (t == Vocabulary::kEos) break;
    if (t == Vocabulary::kSos || t == Vocabulary::kPad) continue;
    out.push_back(t);
  }
  return out;
}

double bleu(std::span<const Token> candidate, std::span<const TokenSequence> references, int max_n) {
  if (max_n < 1) throw UsageError("BLEU order must be at least 1");
  if (references.empty()) throw UsageError("BLEU needs at least one reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    std::map<std::vector<Token>, double> max_ref;
    for (const auto& ref : references)
      for (const auto& [g, c] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], c);
    double matched = 0.0, total = 0.0;
    for (const auto& [g, c] : cand) {
      total += c;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    if (n == 1) {
      if (matched == 0.0) return 0.0;
      log_sum += std::log(matched / total);
    } else {
      log_sum += std::log((matched + 1.0) / (total + 1.0));
    }
  }
  const auto c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references[0].size());
  for (const auto& ref : references) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double self_bleu(std::span<const TokenSequence> samples) {
  if (samples.size() < 2) throw UsageError("self-BLEU needs at least two samples");
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<TokenSequence> others;
    for (std::size_t j = 0; j < samples.size(); ++j)
      if (j != i) others.push_back(samples[j]);
    total += bleu(samples[i], others);
  }
  return total / static_cast<double>(samples.size());
}

double peakiness(std::span<const TokenSequence> corpus) {
  std::map<Token, double> counts;
  double total = 0.0;
  for (const auto& s : corpus)
    for (Token t : s) {
      counts[t] += 1.0;
      total += 1.0;
    }
  if (total == 0.0) throw UsageError("peakiness of an empty corpus");
  std::vector<double> c;
  for (const auto& [t, n] : counts) c.push_back(n);
  std::sort(c.begin(), c.end(), std::greater<>());
  double top = 0.0;
  for (std::size_t i = 0; i < std::min<std::size_t>(10, c.size()); ++i) top += c[i];
  return c.size() <= 10 ? 1.0 : top / total;
}

int recall_at_k(const OracleResult& result, int target, int k) { return result.rank_of(target) <= k ? 1 : 0; }

CiderScorer::CiderScorer(std::span<const std::vector<TokenSequence>> reference_sets, bool unit_idf)
    : docs_(static_cast<double>(reference_sets.size())), unit_idf_(unit_idf) {
  for (const auto& refs : reference_sets) {
    std::map<std::vector<Token>, bool> seen;
    for (const auto& r : refs)
      for (int n = 1; n <= 4; ++n)
        for (const auto& [g, c] : ngram_counts(r, n)) seen[g] = true;
    for (const auto& [g, b] : seen) df_[g] += 1.0;
  }
}

double CiderScorer::idf(const std::vector<Token>& gram) const {
  if (unit_idf_) return 1.0;
  const auto it = df_.find(gram);
  const double df = it == df_.end() ? 0.0 : it->second;
  return std::log(std::max(1.0, docs_)) - std::log(std::max(1.0, df));
}

double CiderScorer::score(std::span<const Token> candidate, std::span<const TokenSequence> references) const {
  if (references.empty()) throw UsageError("CIDEr needs at least one reference");
  constexpr double kSigma = 6.0;
  double total = 0.0;
  for (const auto& ref : references) {
    const double delta = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
    const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
    double per_ref = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const auto hc = ngram_counts(candidate, n);
      const auto rc = ngram_counts(ref, n);
      double hn = 0.0, rn = 0.0, dot = 0.0;
      for (const auto& [g, c] : hc) hn += std::pow(c * idf(g), 2);
      for (const auto& [g, c] : rc) {
        const double rv = c * idf(g);
        rn += rv * rv;
        const auto it = hc.find(g);
        if (it != hc.end()) dot += std::min(it->second * idf(g), rv) * rv;
      }
      if (hn > 0.0 && rn > 0.0) per_ref += dot / (std::sqrt(hn) * std::sqrt(rn)) * penalty;
    }
    total += per_ref / 4.0;
  }
  return 10.0 * total / static_cast<double>(references.size());
}

void EvalConfig::validate() const {
  if (episodes == 0) throw UsageError("evaluation needs at least one episode");
  if (ranking_samples < 2) throw ConfigError("ranking_samples must be at least 2");
  if (diversity_samples < 2) throw ConfigError("diversity_samples must be at least 2");
  if (methods.empty()) throw ConfigError("evaluation needs at least one decoding method");
}

MetricSet score_questions(const SynthQA& env, const NGramModel& task_lm, const NGramModel& ext_lm,
                          std::span<const Episode> episodes, std::span<const TokenSequence> questions,
                          const CiderScorer& cider, Rng& rng) {
  if (episodes.empty() || episodes.size() != questions.size())
    throw UsageError("score_questions needs one question per episode");
  std::vector<double> success, recall, bl, ci, pt, pe;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Episode& ep = episodes[i];
    const OracleResult result = env.answer(ep.scene, questions[i], rng);
    const int target = ep.context.answer;
    success.push_back(recall_at_k(result, target, 1));
    recall.push_back(recall_at_k(result, target, 5));
    const TokenSequence cand = words_of(questions[i]);
    const std::vector<TokenSequence> refs{words_of(ep.gold)};
    bl.push_back(bleu(cand, refs));
    ci.push_back(cider.score(cand, refs));
    pt.push_back(lm_perplexity(task_lm, questions[i]));
    pe.push_back(lm_perplexity(ext_lm, questions[i]));
  }
  MetricSet m;
  m.success = mean_of(success);
  m.recall5 = mean_of(recall);
  m.bleu = mean_of(bl);
  m.cider = mean_of(ci);
  m.ppl_task = mean_of(pt);
  m.ppl_ext = mean_of(pe);
  return m;
}

EvalReport evaluate(const PolicyParameters& params, const EvalSetup& setup, const EvalConfig& config, Rng& rng) {
  config.validate();
  if (setup.env == nullptr || setup.task_lm == nullptr || setup.ext_lm == nullptr)
    throw UsageError("evaluation needs the environment and both language models");
  const SynthQA& env = *setup.env;
  EvalReport report;
  report.episodes = config.episodes;

  std::vector<Episode> episodes;
  std::vector<std::vector<TokenSequence>> reference_sets;
  for (std::size_t i = 0; i < config.episodes; ++i) {
    episodes.push_back(env.sample_episode(rng));
    reference_sets.push_back({words_of(episodes.back().gold)});
  }
  const CiderScorer cider(reference_sets);

  DecodeSpec spec;
  spec.trunc = setup.trunc;
  spec.trunc_lm = setup.trunc_lm;
  spec.ranking_lm = setup.ext_lm;
  spec.max_len = env.config().max_len;

  for (DecodeMethod method : config.methods) {
    DecodeConfig dc;
    dc.method = method;
    dc.ranking_samples = config.ranking_samples;
    dc.truncate = setup.truncate;
    std::vector<TokenSequence> questions;
    double sumva = 0.0, masks = 0.0, steps = 0.0;
    for (const auto& ep : episodes) {
      const DecodeResult r = decode(params, ep.context, spec, dc, rng);
      for (std::size_t t = 0; t < r.sumva.size(); ++t) {
        sumva += r.sumva[t];
        masks += static_cast<double>(r.mask_sizes[t]);
        steps += 1.0;
      }
      questions.push_back(r.tokens);
    }
    MethodReport mr;
    mr.method = method;
    mr.metrics = score_questions(env, *setup.task_lm, *setup.ext_lm, episodes, questions, cider, rng);
    mr.metrics.sumva = sumva / steps;
    mr.metrics.mask_size = masks / steps;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      SampleRow row;
      row.context = i;
      row.method = method;
      row.question = env.vocab().decode(questions[i]);
      row.target = env.answers().name(episodes[i].context.answer);
      row.rank = env.oracle_answer(episodes[i].scene, questions[i]).rank_of(episodes[i].context.answer);
      report.samples.push_back(std::move(row));
    }
    report.methods.push_back(mr);
  }

  const auto k = static_cast<double>(report.methods.size());
  report.mean.sumva = 0.0;
  for (const auto& m : report.methods) {
    report.mean.success += m.metrics.success / k;
    report.mean.recall5 += m.metrics.recall5 / k;
    report.mean.bleu += m.metrics.bleu / k;
    report.mean.cider += m.metrics.cider / k;
    report.mean.ppl_task += m.metrics.ppl_task / k;
    report.mean.ppl_ext += m.metrics.ppl_ext / k;
    report.mean.sumva += m.metrics.sumva / k;
    report.mean.mask_size += m.metrics.mask_size / k;
  }

  DecodeConfig sampling;
  sampling.method = DecodeMethod::Sampling;
  sampling.truncate = setup.truncate;
  std::vector<TokenSequence> corpus;
  double sb = 0.0;
  for (const auto& ep : episodes) {
    std::vector<TokenSequence> group;
    for (int s = 0; s < config.diversity_samples; ++s)
      group.push_back(words_of(decode(params, ep.context, spec, sampling, rng).tokens));
    sb += self_bleu(group);
    corpus.insert(corpus.end(), group.begin(), group.end());
  }
  report.self_bleu = sb / static_cast<double>(episodes.size());
  const bool any_words = std::any_of(corpus.begin(), corpus.end(), [](const auto& s) { return !s.empty(); });
  report.peakiness = any_words ? peakiness(corpus) : 0.0;
  return report;
}

}  // namespace trufll
