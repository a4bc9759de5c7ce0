#include "trufll/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "trufll/errors.hpp"
#include "trufll/rng.hpp"

namespace trufll {

using ad::Tensor;
using ad::Var;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'R', 'U', 'F', 'L', 'L', 'P', 'P'};
constexpr std::uint32_t kVersion = 1;

Tensor uniform(Rng& rng, std::size_t rows, std::size_t cols, double fan_in) {
  const double bound = 1.0 / std::sqrt(fan_in);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = bound * (2.0 * uniform01(rng) - 1.0);
  return t;
}

std::vector<std::size_t> dims_vector(const PolicyDims& d) {
  return {d.vocab, d.answers, d.features, d.embed, d.answer_embed, d.context, d.hidden};
}

// Expected shapes in serialization order.
std::vector<std::pair<std::size_t, std::size_t>> expected_shapes(const PolicyDims& d) {
  const std::size_t g = 3 * d.hidden;
  return {{d.vocab, d.embed},   {d.answers, d.answer_embed}, {d.features, d.context}, {1, d.context},
          {d.embed, g},         {d.context_input(), g},      {d.hidden, g},           {1, g},
          {1, g},               {d.hidden, d.vocab},         {1, d.vocab},            {d.hidden, 1},
          {1, 1}};
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void PolicyDims::validate() const {
  for (std::size_t v : dims_vector(*this))
    if (v == 0) throw ConfigError("policy dimensions must be positive");
}

std::vector<Tensor*> PolicyParameters::tensors() {
  return {&word_embed, &answer_embed, &ctx_proj,   &ctx_bias, &gru_word, &gru_ctx, &gru_hid,
          &gru_bias_x, &gru_bias_h,   &head_w,     &head_b,   &value_w,  &value_b};
}

std::vector<const Tensor*> PolicyParameters::tensors() const {
  auto* self = const_cast<PolicyParameters*>(this);
  const auto ts = self->tensors();
  return {ts.begin(), ts.end()};
}

std::size_t PolicyParameters::count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

bool PolicyParameters::all_finite() const {
  const auto ts = tensors();
  return std::all_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->all_finite(); });
}

PolicyParameters init_params(std::uint64_t seed, const PolicyDims& dims) {
  dims.validate();
  Rng rng(seed);
  PolicyParameters p;
  p.dims = dims;
  const double in = static_cast<double>(dims.embed + dims.context_input());
  const double h = static_cast<double>(dims.hidden);
  const double f = static_cast<double>(dims.features);
  const std::size_t g = 3 * dims.hidden;
  p.word_embed = uniform(rng, dims.vocab, dims.embed, 1.0);
  p.answer_embed = uniform(rng, dims.answers, dims.answer_embed, 1.0);
  p.ctx_proj = uniform(rng, dims.features, dims.context, f);
  p.ctx_bias = uniform(rng, 1, dims.context, f);
  p.gru_word = uniform(rng, dims.embed, g, in);
  p.gru_ctx = uniform(rng, dims.context_input(), g, in);
  p.gru_hid = uniform(rng, dims.hidden, g, h);
  p.gru_bias_x = uniform(rng, 1, g, h);
  p.gru_bias_h = uniform(rng, 1, g, h);
  p.head_w = uniform(rng, dims.hidden, dims.vocab, h);
  p.head_b = uniform(rng, 1, dims.vocab, h);
  p.value_w = uniform(rng, dims.hidden, 1, h);
  p.value_b = uniform(rng, 1, 1, h);
  return p;
}

void save_params(const PolicyParameters& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  for (std::size_t v : dims_vector(params.dims)) put<std::uint64_t>(os, v);
  for (const Tensor* t : params.tensors()) {
    put<std::uint64_t>(os, t->rows());
    put<std::uint64_t>(os, t->cols());
    os.write(reinterpret_cast<const char*>(t->data().data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

PolicyParameters load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a policy checkpoint: " + path.string());
  if (get<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
  PolicyParameters p;
  std::size_t* fields[] = {&p.dims.vocab, &p.dims.answers, &p.dims.features, &p.dims.embed,
                           &p.dims.answer_embed, &p.dims.context, &p.dims.hidden};
  for (std::size_t* f : fields) {
    const auto v = get<std::uint64_t>(is);
    if (v == 0 || v > (1u << 24)) throw IoError("corrupt checkpoint dimensions");
    *f = static_cast<std::size_t>(v);
  }
  const auto shapes = expected_shapes(p.dims);
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows != shapes[i].first || cols != shapes[i].second) throw IoError("checkpoint tensor shape mismatch");
    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint");
    *ts[i] = Tensor({shapes[i].first, shapes[i].second}, std::move(data));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint");
  if (!p.all_finite()) throw IoError("checkpoint holds non-finite values");
  return p;
}

// ---------------------------------------------------------------------------

PolicyGraph::PolicyGraph(ad::Tape& tape, const PolicyParameters& params, std::span<const Context* const> contexts)
    : tape_(&tape), params_(&params), batch_(contexts.size()) {
  if (contexts.empty()) throw UsageError("policy graph needs at least one context");
  const PolicyDims& d = params.dims;
  std::vector<int> answers;
  Tensor feats({batch_, d.features});
  for (std::size_t b = 0; b < batch_; ++b) {
    const Context& c = *contexts[b];
    if (c.features.size() != d.features) throw ConfigError("context feature size does not match the policy");
    if (c.answer < 0 || static_cast<std::size_t>(c.answer) >= d.answers) throw UsageError("answer index out of range");
    answers.push_back(c.answer);
    std::copy(c.features.begin(), c.features.end(), feats.row_span(b).begin());
  }
  word_gates_ = ad::matmul(tape.param(params.word_embed), tape.param(params.gru_word));
  const Var ans = ad::gather_rows(tape.param(params.answer_embed), answers);
  const Var proj = ad::add(ad::matmul(tape.constant(std::move(feats)), tape.param(params.ctx_proj)),
                           tape.param(params.ctx_bias));
  ctx_gates_ = ad::add(ad::matmul(ad::concat({ans, proj}), tape.param(params.gru_ctx)), tape.param(params.gru_bias_x));
  gru_hid_ = tape.param(params.gru_hid);
  gru_bias_h_ = tape.param(params.gru_bias_h);
  head_w_ = tape.param(params.head_w);
  head_b_ = tape.param(params.head_b);
  value_w_ = tape.param(params.value_w);
  value_b_ = tape.param(params.value_b);
  minus_one_ = tape.constant(Tensor::scalar(-1.0));
}

Var PolicyGraph::initial_state() const { return tape_->constant(Tensor({batch_, params_->dims.hidden})); }

PolicyGraph::Step PolicyGraph::step(Var state, std::span<const Token> prev_tokens) const {
  if (prev_tokens.size() != batch_) throw UsageError("one previous token per batch row expected");
  const std::size_t H = params_->dims.hidden;
  std::vector<int> prev(prev_tokens.begin(), prev_tokens.end());
  for (int t : prev)
    if (t < 0 || static_cast<std::size_t>(t) >= params_->dims.vocab) throw UsageError("token outside the vocabulary");
  const Var gx = ad::add(ad::gather_rows(word_gates_, prev), ctx_gates_);
  const Var gh = ad::add(ad::matmul(state, gru_hid_), gru_bias_h_);
  const Var r = ad::sigmoid(ad::add(ad::slice(gx, 0, H), ad::slice(gh, 0, H)));
  const Var z = ad::sigmoid(ad::add(ad::slice(gx, H, 2 * H), ad::slice(gh, H, 2 * H)));
  const Var n = ad::tanh(ad::add(ad::slice(gx, 2 * H, 3 * H), ad::mul(r, ad::slice(gh, 2 * H, 3 * H))));
  // h' = (1 - z) n + z h
  const Var h = ad::add(n, ad::mul(z, ad::add(state, ad::mul(n, minus_one_))));
  return {ad::add(ad::matmul(h, head_w_), head_b_), ad::add(ad::matmul(h, value_w_), value_b_), h};
}

PolicyGraph::Unrolled PolicyGraph::unroll(std::span<const std::vector<Token>> inputs) const {
  if (inputs.empty()) throw UsageError("unroll needs at least one step");
  std::vector<Var> logits, values;
  Var h = initial_state();
  for (const auto& tokens : inputs) {
    const Step s = step(h, tokens);
    logits.push_back(s.logits);
    values.push_back(s.value);
    h = s.state;
  }
  if (logits.size() == 1) return {logits[0], values[0]};
  return {ad::concat(logits, ad::Axis::Rows), ad::concat(values, ad::Axis::Rows)};
}

StepOutput policy_step(const PolicyParameters& params, const PolicyState& state, Token prev_token,
                       const Context& context) {
  ad::Tape tape;
  const Context* ctx[] = {&context};
  PolicyGraph g(tape, params, ctx);
  Var h = g.initial_state();
  if (!state.hidden.empty()) {
    if (state.hidden.size() != params.dims.hidden) throw UsageError("state size does not match the policy");
    h = tape.constant(Tensor({1, params.dims.hidden}, state.hidden));
  }
  const Token prev[] = {prev_token};
  const auto s = g.step(h, prev);
  const auto& lv = s.logits.value().data();
  const auto& hv = s.state.value().data();
  return {{lv.begin(), lv.end()}, s.value.value().item(), {{hv.begin(), hv.end()}}};
}

// ---------------------------------------------------------------------------

namespace {

// Teacher-forced NLL sum and token count for a minibatch.
std::pair<Var, double> batch_nll(ad::Tape& tape, const PolicyParameters& params, std::span<const Example* const> batch) {
  std::vector<const Context*> ctx;
  std::size_t steps = 0;
  for (const Example* e : batch) {
    if (e->question.size() < 2) throw UsageError("training question needs at least one token after <sos>");
    ctx.push_back(&e->context);
    steps = std::max(steps, e->question.size() - 1);
  }
  const std::size_t B = batch.size();
  std::vector<std::vector<Token>> inputs(steps, std::vector<Token>(B, Vocabulary::kPad));
  std::vector<int> targets(steps * B, 0);
  Tensor weights({steps * B, 1});
  double tokens = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& q = batch[b]->question;
    for (std::size_t t = 0; t + 1 < q.size(); ++t) {
      inputs[t][b] = q[t];
      targets[t * B + b] = q[t + 1];
      weights[t * B + b] = 1.0;
      tokens += 1.0;
    }
  }
  PolicyGraph g(tape, params, ctx);
  const auto u = g.unroll(inputs);
  const Var ll = ad::pick(ad::log_softmax(u.logits), targets);
  return {ad::sum(ad::mul(ll, tape.constant(std::move(weights)))), tokens};
}

}  // namespace

double mle_loss(const PolicyParameters& params, std::span<const Example> dataset) {
  if (dataset.empty()) throw UsageError("mle_loss needs a non-empty dataset");
  constexpr std::size_t chunk = 256;
  double nll = 0.0, tokens = 0.0;
  for (std::size_t i = 0; i < dataset.size(); i += chunk) {
    std::vector<const Example*> batch;
    for (std::size_t j = i; j < std::min(dataset.size(), i + chunk); ++j) batch.push_back(&dataset[j]);
    ad::Tape tape;
    const auto [sum, n] = batch_nll(tape, params, batch);
    nll -= sum.value().item();
    tokens += n;
  }
  return nll / tokens;
}

std::vector<double> mle_pretrain(PolicyParameters& params, std::span<const Example> dataset, const MleConfig& config) {
  if (dataset.empty()) throw UsageError("mle_pretrain needs a non-empty dataset");
  if (config.epochs < 0 || config.batch_size == 0 || !(config.lr > 0.0))
    throw ConfigError("mle_pretrain needs epochs >= 0, batch_size >= 1 and lr > 0");
  Rng rng(config.seed);
  ad::Adam adam(config.lr);
  const auto ts = params.tensors();
  std::vector<double> losses{mle_loss(params, dataset)};
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + config.batch_size); ++j) batch.push_back(&dataset[order[j]]);
      ad::Tape tape;
      const auto [sum, n] = batch_nll(tape, params, batch);
      const Var loss = ad::mul(sum, tape.constant(Tensor::scalar(-1.0 / n)));
      auto grads = tape.backward(loss);
      if (config.grad_clip > 0.0) ad::clip_global_norm(grads, config.grad_clip);
      adam.step(ts, grads);
    }
    losses.push_back(mle_loss(params, dataset));
  }
  return losses;
}

}  // namespace trufll
