#pragma once

// SynthQA: a toy grounded question-generation task. A scene holds a handful
// of attributed objects; an agent must produce a question whose answer, as
// computed by a deterministic grammar-based oracle, is a given target.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trufll/lang.hpp"
#include "trufll/rng.hpp"

namespace trufll {

inline constexpr std::size_t kNumAttributes = 4;
enum class Attribute { Color = 0, Shape = 1, Size = 2, Material = 3 };
const char* attribute_name(Attribute a);

struct SceneObject {
  // Index into the grammar lexicon of each attribute.
  std::array<int, kNumAttributes> attr{};
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class Semantics { QueryColor, QueryShape, QuerySize, QueryMaterial, Count, Declarative };
const char* semantics_tag(Semantics s);

struct TemplatePart {
  std::string word;  // empty for a slot
  int slot = -1;     // attribute index for a placeholder
};

struct Template {
  Semantics semantics = Semantics::Declarative;
  std::string text;
  std::vector<TemplatePart> parts;
  std::vector<int> slots() const;
};

// Question templates plus the four attribute lexicons.
//
// File format (UTF-8, tab separated, '#' comments):
//   LEX <tab> color <tab> red,blue,green,yellow
//   TEMPLATE <tab> query_color <tab> what color is the {shape}
class Grammar {
 public:
  static Grammar parse(const std::string& text);
  static Grammar load(const std::filesystem::path& path);
  std::string to_text() const;

  const std::vector<std::string>& lexicon(Attribute a) const { return lexicons_[static_cast<int>(a)]; }
  const std::vector<std::string>& lexicon(int a) const { return lexicons_[a]; }
  const std::vector<Template>& templates() const { return templates_; }
  // Every word a template expansion can produce.
  std::vector<std::string> words() const;

 private:
  std::array<std::vector<std::string>, kNumAttributes> lexicons_;
  std::vector<Template> templates_;
};

const std::string& default_task_grammar_text();
const std::string& default_external_grammar_text();

// Fixed global answer order: attribute values (color, shape, size, material),
// counts 0..max_objects, then "invalid".
class AnswerSet {
 public:
  AnswerSet() = default;
  AnswerSet(const Grammar& g, int max_objects);

  std::size_t size() const { return names_.size(); }
  const std::string& name(int a) const { return names_.at(static_cast<std::size_t>(a)); }
  int attribute_answer(int attr, int value) const { return offsets_[attr] + value; }
  int count_answer(int n) const { return count_offset_ + n; }
  int invalid() const { return static_cast<int>(names_.size()) - 1; }
  // -1 when unknown.
  int index(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::array<int, kNumAttributes> offsets_{};
  int count_offset_ = 0;
};

struct OracleResult {
  // Permutation of the answer set, best first.
  std::vector<int> ranking;
  // 1-based rank of `answer`.
  int rank_of(int answer) const;
  int top() const { return ranking.front(); }
};

struct Context {
  // Per-object slot of summed attribute one-hots, zero-padded to max_objects.
  std::vector<double> features;
  int answer = 0;
};

struct EnvConfig {
  int min_objects = 2;
  int max_objects = 5;
  // Maximum generated tokens per episode, <eos> included.
  int max_len = 12;
  // Probability of swapping the oracle's top answer with a random other one.
  double oracle_noise = 0.0;
  void validate() const;
};

// A template filled with lexicon values and the answer it has in a scene.
struct Instantiation {
  int template_index = 0;
  std::vector<int> fills;
  std::vector<std::string> words;
  // Definite (unambiguous) answer, or -1.
  int answer = -1;
};

struct Episode {
  Scene scene;
  Context context;
  // Reference question with <sos>/<eos> markers.
  TokenSequence gold;
};

struct Example {
  Context context;
  TokenSequence question;
};

enum class RewardKind { Exact, Rank };
std::string to_string(RewardKind k);
RewardKind reward_kind_from_string(const std::string& s);

// 1 when `t` is the terminal step (t == T-1) and the target ranks first.
double reward_exact(const OracleResult& result, int target, int t, int T);
// exp(-rk/2) for rk <= 10 at the terminal step, else 0.
double reward_rank(const OracleResult& result, int target, int t, int T);
double reward(RewardKind kind, const OracleResult& result, int target, int t, int T);

class SynthQA {
 public:
  SynthQA(Grammar grammar, Vocabulary vocab, EnvConfig config = {});

  const Grammar& grammar() const { return grammar_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnswerSet& answers() const { return answers_; }
  const EnvConfig& config() const { return config_; }
  std::size_t feature_size() const { return static_cast<std::size_t>(config_.max_objects) * feature_stride_; }

  Scene sample_scene(Rng& rng) const;
  Context make_context(const Scene& scene, int answer) const;

  // All template instantiations with their definite answers in `scene`.
  std::vector<Instantiation> instantiations(const Scene& scene) const;
  // A grammar question and the answer the oracle ranks first for it.
  std::pair<TokenSequence, int> grammar_sample(const Scene& scene, Rng& rng) const;
  // Fresh scene, target drawn uniformly over the scene's realizable answers,
  // and a gold question for it.
  Episode sample_episode(Rng& rng) const;
  std::vector<Example> make_dataset(std::size_t n, Rng& rng) const;

  // Total and deterministic over arbitrary token sequences. Leading <sos> is
  // skipped; the question ends at the first <eos>.
  OracleResult oracle_answer(const Scene& scene, std::span<const Token> question) const;
  // oracle_answer with the configured rank noise applied.
  OracleResult answer(const Scene& scene, std::span<const Token> question, Rng& rng) const;

 private:
  struct Parse {
    int template_index;
    std::vector<int> fills;
  };
  std::optional<Parse> parse(std::span<const Token> question) const;
  // Answers ranked ahead of the global order for a filled template.
  std::vector<int> leading_answers(const Scene& scene, const Template& tpl, std::span<const int> fills) const;
  OracleResult ranking_with_first(std::span<const int> first) const;

  Grammar grammar_;
  Vocabulary vocab_;
  EnvConfig config_;
  AnswerSet answers_;
  std::size_t feature_stride_ = 0;
  // vocab token -> (attribute, value) when the word is a lexicon entry.
  std::vector<std::pair<int, int>> lexicon_of_token_;
};

// Vocabulary covering every word of the given grammars.
Vocabulary grammar_vocabulary(std::span<const Grammar* const> grammars);

// Sentences drawn from arbitrary templates with uniform lexicon fills; used
// for the external LM corpus.
std::vector<TokenSequence> free_corpus(const Grammar& g, const Vocabulary& vocab, std::size_t n, Rng& rng);

}  // namespace trufll
