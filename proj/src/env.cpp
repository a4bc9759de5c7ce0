#include "trufll/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "trufll/errors.hpp"

namespace trufll {

namespace {

const std::array<const char*, kNumAttributes> kAttributeNames{"color", "shape", "size", "material"};

const std::array<std::pair<Semantics, const char*>, 6> kSemanticsTags{{
    {Semantics::QueryColor, "query_color"},
    {Semantics::QueryShape, "query_shape"},
    {Semantics::QuerySize, "query_size"},
    {Semantics::QueryMaterial, "query_material"},
    {Semantics::Count, "count"},
    {Semantics::Declarative, "declarative"},
}};

int attribute_index(const std::string& name) {
  for (std::size_t i = 0; i < kNumAttributes; ++i)
    if (name == kAttributeNames[i]) return static_cast<int>(i);
  return -1;
}

// Attribute asked about, or -1 for count/declarative.
int queried_attribute(Semantics s) {
  switch (s) {
    case Semantics::QueryColor: return 0;
    case Semantics::QueryShape: return 1;
    case Semantics::QuerySize: return 2;
    case Semantics::QueryMaterial: return 3;
    default: return -1;
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::string kTaskGrammar = R"GRAMMAR(# SynthQA task grammar.
LEX	color	red,blue,green,yellow
LEX	shape	cube,ball,pyramid
LEX	size	small,large
LEX	material	metal,rubber
TEMPLATE	query_color	what is the color of the {size} {shape}
TEMPLATE	query_color	what color is the {material} {shape}
TEMPLATE	query_color	what color is the {shape}
TEMPLATE	query_color	what is the color of the {shape}
TEMPLATE	query_shape	what is the shape of the {color} thing
TEMPLATE	query_shape	what shape is the {size} {color} object
TEMPLATE	query_shape	which shape does the {color} {material} thing have
TEMPLATE	query_size	what size is the {color} {shape}
TEMPLATE	query_size	what is the size of the {material} {color} thing
TEMPLATE	query_material	what material is the {color} {shape}
TEMPLATE	query_material	what kind of material is the {size} {shape}
TEMPLATE	query_material	what is the {size} {color} object made of
TEMPLATE	count	how many {color} objects are there
TEMPLATE	count	how many {size} {material} things are there
TEMPLATE	count	what number of {shape} things are there
)GRAMMAR";

const std::string kExternalGrammar = R"GRAMMAR(# External LM grammar: the task templates plus declarative sentences.
LEX	color	red,blue,green,yellow
LEX	shape	cube,ball,pyramid
LEX	size	small,large
LEX	material	metal,rubber
TEMPLATE	query_color	what is the color of the {size} {shape}
TEMPLATE	query_color	what color is the {material} {shape}
TEMPLATE	query_color	what color is the {shape}
TEMPLATE	query_color	what is the color of the {shape}
TEMPLATE	query_shape	what is the shape of the {color} thing
TEMPLATE	query_shape	what shape is the {size} {color} object
TEMPLATE	query_shape	which shape does the {color} {material} thing have
TEMPLATE	query_size	what size is the {color} {shape}
TEMPLATE	query_size	what is the size of the {material} {color} thing
TEMPLATE	query_material	what material is the {color} {shape}
TEMPLATE	query_material	what kind of material is the {size} {shape}
TEMPLATE	query_material	what is the {size} {color} object made of
TEMPLATE	count	how many {color} objects are there
TEMPLATE	count	how many {size} {material} things are there
TEMPLATE	count	what number of {shape} things are there
TEMPLATE	declarative	there is a {size} {color} {shape} on the left of the table
TEMPLATE	declarative	the {material} {shape} is behind the {color} sphere
TEMPLATE	declarative	i can see a {color} block near the {size} thing
TEMPLATE	declarative	the {color} {shape} is shiny and the {material} cylinder is matte
TEMPLATE	declarative	a tiny {color} object sits in front of the {shape}
TEMPLATE	declarative	the {size} {material} {shape} is right of the {color} thing
)GRAMMAR";

}  // namespace

const char* attribute_name(Attribute a) { return kAttributeNames[static_cast<std::size_t>(a)]; }

const char* semantics_tag(Semantics s) {
  for (const auto& [sem, tag] : kSemanticsTags)
    if (sem == s) return tag;
  return "declarative";
}

const std::string& default_task_grammar_text() { return kTaskGrammar; }
const std::string& default_external_grammar_text() { return kExternalGrammar; }

std::vector<int> Template::slots() const {
  std::vector<int> out;
  for (const auto& p : parts)
    if (p.slot >= 0) out.push_back(p.slot);
  return out;
}

// ---------------------------------------------------------------------------

Grammar Grammar::parse(const std::string& text) {
  Grammar g;
  std::array<bool, kNumAttributes> seen{};
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError("grammar line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, '\t');
    if (fields.size() != 3) fail("expected three tab-separated fields");
    if (fields[0] == "LEX") {
      const int a = attribute_index(trim(fields[1]));
      if (a < 0) fail("unknown lexicon '" + fields[1] + "'");
      if (seen[a]) fail("duplicate lexicon '" + fields[1] + "'");
      seen[a] = true;
      for (const auto& v : split(fields[2], ',')) {
        const std::string w = trim(v);
        if (w.empty() || w.find(' ') != std::string::npos) fail("bad lexicon value '" + v + "'");
        g.lexicons_[a].push_back(w);
      }
      if (g.lexicons_[a].empty()) fail("empty lexicon");
    } else if (fields[0] == "TEMPLATE") {
      Template tpl;
      const std::string tag = trim(fields[1]);
      const auto it = std::find_if(kSemanticsTags.begin(), kSemanticsTags.end(),
                                   [&](const auto& e) { return tag == e.second; });
      if (it == kSemanticsTags.end()) fail("unknown semantics tag '" + tag + "'");
      tpl.semantics = it->first;
      tpl.text = trim(fields[2]);
      for (const auto& w : split_words(tpl.text)) {
        if (w.size() > 2 && w.front() == '{' && w.back() == '}') {
          const int a = attribute_index(w.substr(1, w.size() - 2));
          if (a < 0) fail("unknown placeholder " + w);
          tpl.parts.push_back({"", a});
        } else {
          if (w.find_first_of("{}") != std::string::npos) fail("malformed placeholder " + w);
          tpl.parts.push_back({w, -1});
        }
      }
      if (tpl.parts.empty()) fail("empty template");
      const int q = queried_attribute(tpl.semantics);
      const auto slots = tpl.slots();
      if (q >= 0 && std::find(slots.begin(), slots.end(), q) != slots.end())
        fail("template constrains the attribute it asks about");
      if (std::set<int>(slots.begin(), slots.end()).size() != slots.size()) fail("repeated placeholder");
      g.templates_.push_back(std::move(tpl));
    } else {
      fail("unknown directive '" + fields[0] + "'");
    }
  }
  for (std::size_t a = 0; a < kNumAttributes; ++a)
    if (!seen[a]) throw ConfigError(std::string("grammar lacks lexicon '") + kAttributeNames[a] + "'");
  if (g.templates_.empty()) throw ConfigError("grammar has no templates");
  std::set<std::string> lex_words;
  for (const auto& lex : g.lexicons_)
    for (const auto& w : lex)
      if (!lex_words.insert(w).second) throw ConfigError("lexicon word '" + w + "' listed twice");
  for (const auto& tpl : g.templates_)
    for (const auto& p : tpl.parts)
      if (p.slot < 0 && lex_words.contains(p.word))
        throw ConfigError("template word '" + p.word + "' is also a lexicon value");
  return g;
}

Grammar Grammar::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open grammar " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string Grammar::to_text() const {
  std::ostringstream os;
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    os << "LEX\t" << kAttributeNames[a] << '\t';
    for (std::size_t i = 0; i < lexicons_[a].size(); ++i) os << (i ? "," : "") << lexicons_[a][i];
    os << '\n';
  }
  for (const auto& tpl : templates_) os << "TEMPLATE\t" << semantics_tag(tpl.semantics) << '\t' << tpl.text << '\n';
  return os.str();
}

std::vector<std::string> Grammar::words() const {
  std::set<std::string> ws;
  for (const auto& lex : lexicons_) ws.insert(lex.begin(), lex.end());
  for (const auto& tpl : templates_)
    for (const auto& p : tpl.parts)
      if (p.slot < 0) ws.insert(p.word);
  return {ws.begin(), ws.end()};
}

// ---------------------------------------------------------------------------

AnswerSet::AnswerSet(const Grammar& g, int max_objects) {
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    offsets_[a] = static_cast<int>(names_.size());
    for (const auto& w : g.lexicon(static_cast<int>(a))) names_.push_back(w);
  }
  count_offset_ = static_cast<int>(names_.size());
  for (int n = 0; n <= max_objects; ++n) names_.push_back(std::to_string(n));
  names_.push_back("invalid");
}

int AnswerSet::index(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

int OracleResult::rank_of(int answer) const {
  const auto it = std::find(ranking.begin(), ranking.end(), answer);
  if (it == ranking.end()) throw UsageError("answer " + std::to_string(answer) + " not in ranking");
  return static_cast<int>(it - ranking.begin()) + 1;
}

void EnvConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("object counts must satisfy 1 <= min <= max");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (!(oracle_noise >= 0.0 && oracle_noise <= 1.0)) throw ConfigError("oracle_noise must lie in [0, 1]");
}

std::string to_string(RewardKind k) { return k == RewardKind::Exact ? "exact" : "rank"; }

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "exact") return RewardKind::Exact;
  if (s == "rank") return RewardKind::Rank;
  throw ConfigError("unknown reward kind '" + s + "'");
}

double reward_exact(const OracleResult& result, int target, int t, int T) {
  if (t != T - 1) return 0.0;
  return result.top() == target ? 1.0 : 0.0;
}

double reward_rank(const OracleResult& result, int target, int t, int T) {
  if (t != T - 1) return 0.0;
  const int rk = result.rank_of(target);
  return rk <= 10 ? std::exp(-static_cast<double>(rk) / 2.0) : 0.0;
}

double reward(RewardKind kind, const OracleResult& result, int target, int t, int T) {
  return kind == RewardKind::Exact ? reward_exact(result, target, t, T) : reward_rank(result, target, t, T);
}

// ---------------------------------------------------------------------------

SynthQA::SynthQA(Grammar grammar, Vocabulary vocab, EnvConfig config)
    : grammar_(std::move(grammar)), vocab_(std::move(vocab)), config_(config) {
  config_.validate();
  answers_ = AnswerSet(grammar_, config_.max_objects);
  for (std::size_t a = 0; a < kNumAttributes; ++a) feature_stride_ += grammar_.lexicon(static_cast<int>(a)).size();
  for (const auto& w : grammar_.words())
    if (!vocab_.contains(w)) throw ConfigError("grammar word '" + w + "' missing from the vocabulary");
  lexicon_of_token_.assign(vocab_.size(), {-1, -1});
  for (std::size_t a = 0; a < kNumAttributes; ++a) {
    const auto& lex = grammar_.lexicon(static_cast<int>(a));
    for (std::size_t v = 0; v < lex.size(); ++v)
      lexicon_of_token_[static_cast<std::size_t>(vocab_.index(lex[v]))] = {static_cast<int>(a), static_cast<int>(v)};
  }
  int longest = 0;
  for (const auto& tpl : grammar_.templates()) longest = std::max(longest, static_cast<int>(tpl.parts.size()));
  if (longest + 1 > config_.max_len)
    throw ConfigError("max_len " + std::to_string(config_.max_len) + " cannot hold the longest template");
}

Scene SynthQA::sample_scene(Rng& rng) const {
  const auto span = static_cast<std::size_t>(config_.max_objects - config_.min_objects + 1);
  const int n = config_.min_objects + static_cast<int>(uniform_index(rng, span));
  Scene s;
  s.objects.resize(static_cast<std::size_t>(n));
  for (auto& o : s.objects)
    for (std::size_t a = 0; a < kNumAttributes; ++a)
      o.attr[a] = static_cast<int>(uniform_index(rng, grammar_.lexicon(static_cast<int>(a)).size()));
  return s;
}

Context SynthQA::make_context(const Scene& scene, int answer) const {
  if (answer < 0 || static_cast<std::size_t>(answer) >= answers_.size()) throw UsageError("answer index out of range");
  if (scene.objects.size() > static_cast<std::size_t>(config_.max_objects)) throw UsageError("scene has too many objects");
  Context c;
  c.answer = answer;
  c.features.assign(feature_size(), 0.0);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    std::size_t offset = i * feature_stride_;
    for (std::size_t a = 0; a < kNumAttributes; ++a) {
      c.features[offset + static_cast<std::size_t>(scene.objects[i].attr[a])] += 1.0;
      offset += grammar_.lexicon(static_cast<int>(a)).size();
    }
  }
  return c;
}

OracleResult SynthQA::ranking_with_first(std::span<const int> first) const {
  OracleResult r;
  r.ranking.reserve(answers_.size());
  std::vector<unsigned char> used(answers_.size(), 0);
  for (int a : first) {
    r.ranking.push_back(a);
    used[static_cast<std::size_t>(a)] = 1;
  }
  for (std::size_t a = 0; a < answers_.size(); ++a)
    if (!used[a]) r.ranking.push_back(static_cast<int>(a));
  return r;
}

std::vector<int> SynthQA::leading_answers(const Scene& scene, const Template& tpl, std::span<const int> fills) const {
  const int invalid = answers_.invalid();
  if (tpl.semantics == Semantics::Declarative) return {invalid};
  const auto slots = tpl.slots();
  std::vector<const SceneObject*> refs;
  for (const auto& o : scene.objects) {
    bool match = true;
    for (std::size_t i = 0; i < slots.size(); ++i) match = match && o.attr[slots[i]] == fills[i];
    if (match) refs.push_back(&o);
  }
  if (tpl.semantics == Semantics::Count) return {answers_.count_answer(static_cast<int>(refs.size()))};
  if (refs.empty()) return {invalid};
  const int q = queried_attribute(tpl.semantics);
  std::set<int> values;
  for (const auto* o : refs) values.insert(answers_.attribute_answer(q, o->attr[q]));
  return {values.begin(), values.end()};
}

std::optional<SynthQA::Parse> SynthQA::parse(std::span<const Token> question) const {
  std::size_t begin = 0, end = question.size();
  if (!question.empty() && question[0] == Vocabulary::kSos) begin = 1;
  for (std::size_t i = begin; i < question.size(); ++i)
    if (question[i] == Vocabulary::kEos) {
      end = i;
      break;
    }
  const auto words = question.subspan(begin, end - begin);
  for (Token t : words)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size()) return std::nullopt;
  const auto& tpls = grammar_.templates();
  for (std::size_t ti = 0; ti < tpls.size(); ++ti) {
    const auto& parts = tpls[ti].parts;
    if (parts.size() != words.size()) continue;
    Parse p{static_cast<int>(ti), {}};
    bool ok = true;
    for (std::size_t i = 0; ok && i < parts.size(); ++i) {
      const Token t = words[i];
      if (parts[i].slot < 0) {
        ok = vocab_.word(t) == parts[i].word;
      } else {
        const auto [attr, value] = lexicon_of_token_[static_cast<std::size_t>(t)];
        ok = attr == parts[i].slot;
        p.fills.push_back(value);
      }
    }
    if (ok) return p;
  }
  return std::nullopt;
}

OracleResult SynthQA::oracle_answer(const Scene& scene, std::span<const Token> question) const {
  const auto p = parse(question);
  if (!p) {
    const int invalid = answers_.invalid();
    return ranking_with_first(std::span<const int>(&invalid, 1));
  }
  return ranking_with_first(
      leading_answers(scene, grammar_.templates()[static_cast<std::size_t>(p->template_index)], p->fills));
}

OracleResult SynthQA::answer(const Scene& scene, std::span<const Token> question, Rng& rng) const {
  OracleResult r = oracle_answer(scene, question);
  if (config_.oracle_noise > 0.0 && uniform01(rng) < config_.oracle_noise) {
    const std::size_t j = 1 + uniform_index(rng, r.ranking.size() - 1);
    std::swap(r.ranking[0], r.ranking[j]);
  }
  return r;
}

std::vector<Instantiation> SynthQA::instantiations(const Scene& scene) const {
  std::vector<Instantiation> out;
  const auto& tpls = grammar_.templates();
  for (std::size_t ti = 0; ti < tpls.size(); ++ti) {
    const auto& tpl = tpls[ti];
    const auto slots = tpl.slots();
    std::vector<int> fills(slots.size(), 0);
    while (true) {
      Instantiation inst;
      inst.template_index = static_cast<int>(ti);
      inst.fills = fills;
      std::size_t s = 0;
      for (const auto& p : tpl.parts)
        inst.words.push_back(p.slot < 0 ? p.word : grammar_.lexicon(p.slot)[static_cast<std::size_t>(fills[s++])]);
      const auto lead = leading_answers(scene, tpl, fills);
      inst.answer = lead.size() == 1 && lead[0] != answers_.invalid() ? lead[0] : -1;
      out.push_back(std::move(inst));
      // Odometer over lexicon values.
      std::size_t k = 0;
      for (; k < fills.size(); ++k) {
        if (++fills[k] < static_cast<int>(grammar_.lexicon(slots[k]).size())) break;
        fills[k] = 0;
      }
      if (k == fills.size()) break;
    }
  }
  return out;
}

std::pair<TokenSequence, int> SynthQA::grammar_sample(const Scene& scene, Rng& rng) const {
  const auto all = instantiations(scene);
  std::vector<std::vector<const Instantiation*>> by_template(grammar_.templates().size());
  for (const auto& inst : all)
    if (inst.answer >= 0) by_template[static_cast<std::size_t>(inst.template_index)].push_back(&inst);
  std::vector<std::size_t> usable;
  for (std::size_t t = 0; t < by_template.size(); ++t)
    if (!by_template[t].empty()) usable.push_back(t);
  if (usable.empty()) throw UsageError("scene admits no definite question");
  const auto& pool = by_template[usable[uniform_index(rng, usable.size())]];
  const Instantiation& pick = *pool[uniform_index(rng, pool.size())];
  TokenSequence q{Vocabulary::kSos};
  for (const auto& w : pick.words) q.push_back(vocab_.index(w));
  q.push_back(Vocabulary::kEos);
  return {std::move(q), pick.answer};
}

Episode SynthQA::sample_episode(Rng& rng) const {
  Episode ep;
  std::vector<Instantiation> all;
  std::vector<int> realizable;
  // Count templates always give a definite answer, so a scene with any
  // count template never loops; the guard covers exotic grammars.
  for (int attempt = 0; realizable.empty(); ++attempt) {
    if (attempt == 1000) throw UsageError("grammar yields no definite question for sampled scenes");
    ep.scene = sample_scene(rng);
    all = instantiations(ep.scene);
    std::set<int> answers;
    for (const auto& inst : all)
      if (inst.answer >= 0) answers.insert(inst.answer);
    realizable.assign(answers.begin(), answers.end());
  }
  const int target = realizable[uniform_index(rng, realizable.size())];
  std::vector<const Instantiation*> pool;
  for (const auto& inst : all)
    if (inst.answer == target) pool.push_back(&inst);
  const Instantiation& pick = *pool[uniform_index(rng, pool.size())];
  ep.gold.push_back(Vocabulary::kSos);
  for (const auto& w : pick.words) ep.gold.push_back(vocab_.index(w));
  ep.gold.push_back(Vocabulary::kEos);
  ep.context = make_context(ep.scene, target);
  return ep;
}

std::vector<Example> SynthQA::make_dataset(std::size_t n, Rng& rng) const {
  if (n == 0) throw UsageError("make_dataset needs n >= 1");
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Episode ep = sample_episode(rng);
    out.push_back({std::move(ep.context), std::move(ep.gold)});
  }
  return out;
}

Vocabulary grammar_vocabulary(std::span<const Grammar* const> grammars) {
  std::vector<std::string> words;
  for (const Grammar* g : grammars) {
    const auto ws = g->words();
    words.insert(words.end(), ws.begin(), ws.end());
  }
  return build_vocab(words);
}

std::vector<TokenSequence> free_corpus(const Grammar& g, const Vocabulary& vocab, std::size_t n, Rng& rng) {
  std::vector<TokenSequence> out;
  out.reserve(n);
  const auto& tpls = g.templates();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tpl = tpls[uniform_index(rng, tpls.size())];
    TokenSequence s{Vocabulary::kSos};
    for (const auto& p : tpl.parts) {
      const std::string& w = p.slot < 0 ? p.word : g.lexicon(p.slot)[uniform_index(rng, g.lexicon(p.slot).size())];
      s.push_back(vocab.index(w));
    }
    s.push_back(Vocabulary::kEos);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace trufll
