#include "trufll/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trufll/autodiff.hpp"
#include "trufll/errors.hpp"

namespace trufll {

namespace {

// Indices sorted by descending probability, ties by ascending index.
std::vector<std::size_t> ranked(std::span<const double> dist) {
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  return idx;
}

std::size_t argmax_index(std::span<const double> dist) {
  return static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(TruncKind kind) {
  switch (kind) {
    case TruncKind::None: return "none";
    case TruncKind::TopK: return "top_k";
    case TruncKind::ProbaThresh: return "proba_thresh";
    case TruncKind::TopP: return "top_p";
    case TruncKind::Sample: return "sample";
  }
  return "none";
}

TruncKind trunc_kind_from_string(const std::string& name) {
  if (name == "none") return TruncKind::None;
  if (name == "top_k") return TruncKind::TopK;
  if (name == "proba_thresh" || name == "p_th") return TruncKind::ProbaThresh;
  if (name == "top_p") return TruncKind::TopP;
  if (name == "sample") return TruncKind::Sample;
  throw ConfigError("unknown truncation kind '" + name + "'");
}

void TruncationSpec::validate() const {
  switch (kind) {
    case TruncKind::None: break;
    case TruncKind::TopK:
    case TruncKind::Sample:
      if (k < 1) throw ConfigError(to_string(kind) + " needs a positive integer k");
      break;
    case TruncKind::ProbaThresh:
      if (!alpha_inverse_vocab && !(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("proba_thresh alpha must lie in (0, 1) or be 1/V");
      break;
    case TruncKind::TopP:
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("top_p p must lie in (0, 1)");
      break;
  }
  if (schedule) schedule->validate();
}

std::string TruncationSpec::param_text() const {
  switch (kind) {
    case TruncKind::None: return "";
    case TruncKind::TopK:
    case TruncKind::Sample: return std::to_string(k);
    case TruncKind::ProbaThresh: return alpha_inverse_vocab ? "1/V" : format_number(alpha);
    case TruncKind::TopP: return format_number(p);
  }
  return "";
}

std::string TruncationSpec::label() const {
  switch (kind) {
    case TruncKind::None: return "none";
    case TruncKind::TopK: return "top_k(" + param_text() + ")";
    case TruncKind::ProbaThresh: return "p_th(" + param_text() + ")";
    case TruncKind::TopP: return "top_p(" + param_text() + ")";
    case TruncKind::Sample: return "sample(" + param_text() + ")";
  }
  return "none";
}

TruncationSpec TruncationSpec::from_text(const std::string& kind, const std::string& param) {
  TruncationSpec spec;
  spec.kind = trunc_kind_from_string(kind);
  auto number = [&]() {
    try {
      std::size_t used = 0;
      double v = std::stod(param, &used);
      if (used != param.size()) throw std::invalid_argument(param);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad truncation parameter '" + param + "' for " + kind);
    }
  };
  switch (spec.kind) {
    case TruncKind::None: break;
    case TruncKind::TopK:
    case TruncKind::Sample: {
      const double v = number();
      if (v != std::floor(v)) throw ConfigError(kind + " needs an integer parameter, got " + param);
      spec.k = static_cast<int>(v);
      break;
    }
    case TruncKind::ProbaThresh:
      if (param == "1/V" || param == "1/|V|")
        spec.alpha_inverse_vocab = true;
      else
        spec.alpha = number();
      break;
    case TruncKind::TopP: spec.p = number(); break;
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------

TruncationMask::TruncationMask(std::vector<unsigned char> keep) : keep_(std::move(keep)) {
  for (auto& k : keep_) k = k ? 1 : 0;
  count_ = static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), 1));
  if (count_ == 0) throw UsageError("truncation mask keeps no word");
}

TruncationMask TruncationMask::all(std::size_t n) { return TruncationMask(std::vector<unsigned char>(n, 1)); }

std::vector<std::size_t> TruncationMask::members() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keep_.size(); ++i)
    if (keep_[i]) out.push_back(i);
  return out;
}

TruncationMask trunc_topk(std::span<const double> dist, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > dist.size())
    throw UsageError("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(dist.size()) + "]");
  std::vector<unsigned char> keep(dist.size(), 0);
  const auto order = ranked(dist);
  for (int i = 0; i < k; ++i) keep[order[i]] = 1;
  return TruncationMask(std::move(keep));
}

TruncationMask trunc_pth(std::span<const double> dist, double alpha) {
  std::vector<unsigned char> keep(dist.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (dist[i] > alpha) {
      keep[i] = 1;
      any = true;
    }
  if (!any) keep[argmax_index(dist)] = 1;
  return TruncationMask(std::move(keep));
}

TruncationMask trunc_topp(std::span<const double> dist, double p) {
  std::vector<unsigned char> keep(dist.size(), 0);
  double mass = 0.0;
  for (std::size_t w : ranked(dist)) {
    keep[w] = 1;
    mass += dist[w];
    if (mass > p) break;
  }
  return TruncationMask(std::move(keep));
}

TruncationMask trunc_sample(std::span<const double> dist, int k, Rng& rng) {
  if (k < 1) throw UsageError("sample truncation needs k >= 1");
  std::vector<unsigned char> keep(dist.size(), 0);
  for (int i = 0; i < k; ++i) keep[sample_categorical(dist, rng)] = 1;
  return TruncationMask(std::move(keep));
}

TruncatedDistribution masked_softmax(std::span<const double> logits, const TruncationMask& mask) {
  if (logits.size() != mask.vocab_size()) throw UsageError("masked_softmax: logits and mask sizes differ");
  if (mask.size() == 0) throw UsageError("masked_softmax: mask keeps no word");
  // Same arithmetic as the training graph, so sampled and trained
  // probabilities agree bit for bit.
  ad::Tape tape;
  const ad::Var x = tape.constant(ad::Tensor::row({logits.begin(), logits.end()}));
  const ad::Var p = ad::softmax(ad::additive_mask(x, mask.keep()));
  const auto& v = p.value().data();
  return TruncatedDistribution{{v.begin(), v.end()}, &mask};
}

TruncationMask build_mask_from_dist(const TruncationSpec& spec, std::span<const double> lm_dist, bool at_start,
                                    long step_counter, Rng& rng) {
  const std::size_t n = lm_dist.size();
  if (spec.kind == TruncKind::None) return TruncationMask::all(n);
  std::vector<double> dist(lm_dist.begin(), lm_dist.end());
  if (spec.schedule) dist = temper(dist, spec.schedule->tau_at(step_counter));

  TruncationMask mask;
  switch (spec.kind) {
    case TruncKind::TopK: mask = trunc_topk(dist, spec.k); break;
    case TruncKind::ProbaThresh:
      mask = trunc_pth(dist, spec.alpha_inverse_vocab ? 1.0 / static_cast<double>(n) : spec.alpha);
      break;
    case TruncKind::TopP: mask = trunc_topp(dist, spec.p); break;
    case TruncKind::Sample: mask = trunc_sample(dist, spec.k, rng); break;
    case TruncKind::None: break;
  }
  if (at_start && spec.block_eos_at_start && mask.contains(Vocabulary::kEos)) {
    std::vector<unsigned char> keep(mask.keep().begin(), mask.keep().end());
    keep[Vocabulary::kEos] = 0;
    if (mask.size() == 1) {
      dist[Vocabulary::kEos] = -1.0;
      keep[argmax_index(dist)] = 1;
    }
    mask = TruncationMask(std::move(keep));
  }
  return mask;
}

TruncationMask build_mask(const TruncationSpec& spec, const NGramModel& lm, std::span<const Token> history,
                          long step_counter, Rng& rng) {
  const bool at_start = history.size() <= 1;
  if (spec.kind == TruncKind::None) return TruncationMask::all(lm.vocab_size());
  return build_mask_from_dist(spec, lm.next_dist(history), at_start, step_counter, rng);
}

}  // namespace trufll
