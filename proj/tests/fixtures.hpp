#pragma once

#include "trufll/env.hpp"
#include "trufll/lang.hpp"
#include "trufll/policy.hpp"

namespace trufll::testing {

struct World {
  Grammar task = Grammar::parse(default_task_grammar_text());
  Grammar ext = Grammar::parse(default_external_grammar_text());
  Vocabulary vocab;
  World() {
    const Grammar* gs[] = {&task, &ext};
    vocab = grammar_vocabulary(gs);
  }
  SynthQA env(EnvConfig c = {}) const { return SynthQA(task, vocab, c); }
};

inline const World& world() {
  static const World w;
  return w;
}

// Task LM from grammar questions and external LM from the free corpus.
struct LmPair {
  NGramModel task, external;
};

inline const LmPair& lm_pair() {
  static const LmPair lms = [] {
    const auto& w = world();
    const SynthQA env = w.env();
    Rng rng(123);
    std::vector<TokenSequence> corpus;
    for (const auto& e : env.make_dataset(5000, rng)) corpus.push_back(e.question);
    LmPair out;
    out.task = train_ngram(corpus, w.vocab.size());
    const auto ext = free_corpus(w.ext, w.vocab, 5000, rng);
    out.external = train_ngram(ext, w.vocab.size());
    return out;
  }();
  return lms;
}

// Small network for finite-difference checks.
inline PolicyDims tiny_dims() {
  PolicyDims d;
  d.vocab = 7;
  d.answers = 5;
  d.features = 6;
  d.embed = 3;
  d.answer_embed = 2;
  d.context = 3;
  d.hidden = 4;
  return d;
}

inline Context tiny_context(int answer, double salt = 0.0) {
  Context c;
  c.answer = answer;
  c.features = {1, 0, 1, 0, salt, 1};
  return c;
}

inline PolicyDims env_dims(const SynthQA& env) {
  PolicyDims d;
  d.vocab = env.vocab().size();
  d.answers = env.answers().size();
  d.features = env.feature_size();
  return d;
}

}  // namespace trufll::testing
