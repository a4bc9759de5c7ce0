#include "trufll/lang.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "trufll/errors.hpp"

namespace trufll {

namespace {

const std::vector<std::string> kReserved = {"<sos>", "<eos>", "<pad>", "<unk>"};

constexpr const char* kNgramMagic = "TRUFLL-NGRAM";
constexpr int kNgramVersion = 1;

}  // namespace

std::vector<std::string> split_words(std::string_view sentence) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < sentence.size()) {
    while (i < sentence.size() && std::isspace(static_cast<unsigned char>(sentence[i]))) ++i;
    std::size_t j = i;
    while (j < sentence.size() && !std::isspace(static_cast<unsigned char>(sentence[j]))) ++j;
    if (j > i) out.emplace_back(sentence.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::span<const std::string>{}) {}

Vocabulary::Vocabulary(std::span<const std::string> words) : words_(kReserved) {
  words_.insert(words_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<Token>(i)).second)
      throw UsageError("duplicate vocabulary word '" + words_[i] + "'");
  }
}

const std::string& Vocabulary::word(Token t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= words_.size())
    throw UsageError("token " + std::to_string(t) + " outside vocabulary of size " + std::to_string(size()));
  return words_[t];
}

Token Vocabulary::index(std::string_view w) const {
  auto it = index_.find(std::string(w));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }

TokenSequence Vocabulary::encode(std::string_view sentence, bool markers) const {
  TokenSequence out;
  if (markers) out.push_back(kSos);
  for (const auto& w : split_words(sentence)) out.push_back(index(w));
  if (markers) out.push_back(kEos);
  return out;
}

std::string Vocabulary::decode(std::span<const Token> seq) const {
  std::string out;
  for (Token t : seq) {
    if (t == kEos) break;
    if (t == kSos || t == kPad) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::string> corpus) {
  if (corpus.empty()) throw UsageError("build_vocab: empty corpus");
  std::set<std::string> words;
  for (const auto& line : corpus)
    for (auto& w : split_words(line))
      if (std::find(kReserved.begin(), kReserved.end(), w) == kReserved.end()) words.insert(std::move(w));
  std::vector<std::string> sorted(words.begin(), words.end());
  return Vocabulary(sorted);
}

// ---------------------------------------------------------------------------

NGramModel::NGramModel(std::size_t vocab_size, int order, double k)
    : vocab_size_(vocab_size), order_(order), k_(k), tables_(static_cast<std::size_t>(std::max(order, 0))) {
  if (order < 1) throw UsageError("n-gram order must be >= 1");
  if (k < 0.0) throw UsageError("smoothing constant must be non-negative");
  if (vocab_size == 0) throw UsageError("n-gram model needs a non-empty vocabulary");
}

std::uint64_t NGramModel::key(std::span<const Token> history, int length) const {
  std::uint64_t h = 0;
  for (int i = 0; i < length; ++i) h = h * vocab_size_ + static_cast<std::uint64_t>(history[history.size() - length + i]);
  return h;
}

void NGramModel::add_sequence(std::span<const Token> seq) {
  std::size_t start = (!seq.empty() && seq[0] == Vocabulary::kSos) ? 1 : 0;
  const int hist = order_ - 1;
  // <sos>-padded copy so every position has a full-length history.
  std::vector<Token> padded(static_cast<std::size_t>(hist), Vocabulary::kSos);
  padded.insert(padded.end(), seq.begin() + start, seq.end());
  for (std::size_t pos = hist; pos < padded.size(); ++pos) {
    const Token w = padded[pos];
    if (w < 0 || static_cast<std::size_t>(w) >= vocab_size_)
      throw UsageError("token " + std::to_string(w) + " outside n-gram vocabulary");
    std::span<const Token> history(padded.data() + pos - hist, hist);
    for (int len = 0; len <= hist; ++len) {
      Row& row = tables_[len][key(history, len)];
      if (row.counts.empty()) row.counts.assign(vocab_size_, 0.0);
      row.counts[w] += 1.0;
      row.total += 1.0;
    }
  }
}

const NGramModel::Row* NGramModel::find_row(std::span<const Token> padded_history, int length) const {
  auto it = tables_[length].find(key(padded_history, length));
  return it == tables_[length].end() ? nullptr : &it->second;
}

std::vector<double> NGramModel::next_dist(std::span<const Token> history) const {
  const int hist = order_ - 1;
  std::size_t start = (!history.empty() && history[0] == Vocabulary::kSos) ? 1 : 0;
  std::vector<Token> padded(static_cast<std::size_t>(hist), Vocabulary::kSos);
  padded.insert(padded.end(), history.begin() + start, history.end());
  std::vector<double> out(vocab_size_);
  for (int len = hist; len >= 0; --len) {
    const Row* row = find_row(padded, len);
    if (row == nullptr || row->total == 0.0) continue;
    const double denom = row->total + k_ * static_cast<double>(vocab_size_);
    for (std::size_t w = 0; w < vocab_size_; ++w) out[w] = (row->counts[w] + k_) / denom;
    return out;
  }
  // Untrained model: uniform.
  std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(vocab_size_));
  return out;
}

double NGramModel::prob(std::span<const Token> history, Token next) const {
  return next_dist(history).at(static_cast<std::size_t>(next));
}

void NGramModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write n-gram model to " + path.string());
  os.precision(17);
  os << kNgramMagic << ' ' << kNgramVersion << '\n';
  os << "vocab " << vocab_size_ << '\n' << "order " << order_ << '\n' << "k " << k_ << '\n';
  for (int len = 0; len < order_; ++len) {
    // Sorted by key so the file is stable across runs.
    std::map<std::uint64_t, const Row*> sorted;
    for (const auto& [k, row] : tables_[len]) sorted.emplace(k, &row);
    os << "table " << len << ' ' << sorted.size() << '\n';
    for (const auto& [k, row] : sorted) {
      os << k << ' ' << row->total;
      for (std::size_t w = 0; w < vocab_size_; ++w)
        if (row->counts[w] != 0.0) os << ' ' << w << ':' << row->counts[w];
      os << '\n';
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open n-gram model " + path.string());
  auto fail = [&](const std::string& why) { return IoError("corrupt n-gram file " + path.string() + ": " + why); };
  std::string magic, tag;
  int version = 0;
  std::size_t vocab = 0;
  int order = 0;
  double k = 0.0;
  if (!(is >> magic >> version) || magic != kNgramMagic) throw fail("bad header");
  if (version != kNgramVersion) throw fail("unsupported version " + std::to_string(version));
  if (!(is >> tag >> vocab) || tag != "vocab") throw fail("missing vocab");
  if (!(is >> tag >> order) || tag != "order") throw fail("missing order");
  if (!(is >> tag >> k) || tag != "k") throw fail("missing k");
  NGramModel model;
  try {
    model = NGramModel(vocab, order, k);
  } catch (const UsageError& e) {
    throw fail(e.what());
  }
  std::string line;
  std::getline(is, line);
  for (int len = 0; len < order; ++len) {
    int got_len = -1;
    std::size_t n = 0;
    if (!(is >> tag >> got_len >> n) || tag != "table" || got_len != len) throw fail("bad table header");
    std::getline(is, line);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) throw fail("truncated table");
      std::istringstream ls(line);
      std::uint64_t key = 0;
      Row row;
      row.counts.assign(vocab, 0.0);
      if (!(ls >> key >> row.total)) throw fail("bad row");
      std::string entry;
      while (ls >> entry) {
        auto colon = entry.find(':');
        if (colon == std::string::npos) throw fail("bad count entry");
        const std::size_t w = std::stoul(entry.substr(0, colon));
        if (w >= vocab) throw fail("token out of range");
        row.counts[w] = std::stod(entry.substr(colon + 1));
      }
      model.tables_[len].emplace(key, std::move(row));
    }
  }
  return model;
}

NGramModel train_ngram(std::span<const TokenSequence> corpus, std::size_t vocab_size, int order, double k) {
  NGramModel model(vocab_size, order, k);
  for (const auto& seq : corpus) model.add_sequence(seq);
  return model;
}

std::vector<double> temper(std::span<const double> dist, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  std::vector<double> out(dist.begin(), dist.end());
  if (temperature == 1.0) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (double& v : out) {
    v = std::log(v) / temperature;
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double& v : out) z += (v = std::exp(v - mx));
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> lm_next_dist(const NGramModel& model, std::span<const Token> history, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  return temper(model.next_dist(history), temperature);
}

double lm_perplexity(const NGramModel& model, std::span<const Token> seq) {
  const std::size_t start = (!seq.empty() && seq[0] == Vocabulary::kSos) ? 1 : 0;
  if (seq.size() <= start) throw UsageError("perplexity of an empty sequence");
  double nll = 0.0;
  for (std::size_t t = start; t < seq.size(); ++t) nll -= std::log(model.prob(seq.subspan(0, t), seq[t]));
  return std::exp(nll / static_cast<double>(seq.size() - start));
}

// ---------------------------------------------------------------------------

void TemperatureSchedule::validate() const {
  if (!(tau_min > 0.0) || !(tau_max >= tau_min)) throw ConfigError("temperature schedule needs 0 < tau_min <= tau_max");
  if (!(factor > 0.0 && factor <= 1.0)) throw ConfigError("temperature decay factor must lie in (0, 1]");
  if (period < 1) throw ConfigError("temperature update period must be >= 1");
}

double TemperatureSchedule::tau_at(long s) const {
  const long n = std::max(0L, s) / period;
  return std::max(tau_min, tau_max * std::pow(factor, static_cast<double>(n)));
}

}  // namespace trufll
