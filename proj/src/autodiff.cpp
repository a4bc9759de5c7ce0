#include "trufll/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trufll/errors.hpp"

namespace trufll::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void check_finite(const char* name, const Tensor& t) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite output from primitive '") + name + "'");
}

// True when b broadcasts over a: same shape, a [1,n] row of matching width,
// or a single element.
bool broadcastable(const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return true;
  if (b.size() == 1) return true;
  return b.rows() == 1 && b.cols() == a.cols();
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw UsageError("variable is not bound to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("variables belong to different tapes");
  return tape_of(a);
}

// Reduces a gradient of a's shape onto the (possibly broadcast) shape of b.
Tensor reduce_to(const Tensor& g, const Tensor& b) {
  if (g.same_shape(b)) return g;
  Tensor out(b.shape());
  if (b.size() == 1) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    out[0] = s;
    return out;
  }
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out[c] += g.at(r, c);
  return out;
}

inline double bval(const Tensor& b, std::size_t r, std::size_t c) {
  if (b.size() == 1) return b[0];
  if (b.rows() == 1) return b[c];
  return b.at(r, c);
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape_));
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape_));
  if (data_.size() != product(shape_))
    throw ConfigError("data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.back();
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Gradients

Tensor Gradients::of(const Tensor& param) const {
  auto it = grads_.find(&param);
  if (it == grads_.end()) return Tensor(param.shape());
  return it->second;
}

Tensor* Gradients::find(const Tensor& param) {
  auto it = grads_.find(&param);
  return it == grads_.end() ? nullptr : &it->second;
}

void Gradients::accumulate(const Tensor& param, const Tensor& grad) {
  auto [it, inserted] = grads_.try_emplace(&param, grad);
  if (!inserted)
    for (std::size_t i = 0; i < grad.size(); ++i) it->second[i] += grad[i];
}

double Gradients::global_norm() const {
  // Sum in a fixed order so the result does not depend on hash iteration.
  std::vector<std::pair<const Tensor*, const Tensor*>> items;
  for (const auto& [k, v] : grads_) items.emplace_back(k, &v);
  std::sort(items.begin(), items.end());
  double ss = 0.0;
  for (const auto& [k, v] : items)
    for (double g : v->data()) ss += g * g;
  return std::sqrt(ss);
}

void Gradients::scale(double factor) {
  for (auto& [k, v] : grads_)
    for (double& g : v.data()) g *= factor;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Tape::param(const Tensor& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Var v = record("param", p, {}, nullptr);
  nodes_[v.id].param = &p;
  nodes_[v.id].requires_grad = true;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::record(const char* name, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  check_finite(name, value);
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Tensor& g = grads_[id];
  if (g.size() == 0) g = Tensor(nodes_[id].value.shape());
  return g;
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("loss node belongs to another tape");
  if (nodes_[loss.id].value.size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_str(nodes_[loss.id].value.shape()));
  grads_.assign(nodes_.size(), Tensor());
  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (grads_[i].size() == 0 || !nodes_[i].requires_grad) continue;
    Node& n = nodes_[i];
    if (n.backward) {
      // Copy: the callback may grow grads_ entries of inputs, never this one.
      const Tensor g = grads_[i];
      n.backward(*this, g);
    }
  }
  Gradients out;
  for (const auto& [p, id] : param_nodes_) {
    if (id <= loss.id && grads_[id].size() != 0) out.accumulate(*p, grads_[id]);
  }
  grads_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      if (av == 0.0) continue;
      const double* br = &B.at(p, 0);
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.record("matmul", std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(Var{&tp, ia});
    const Tensor& B = tp.value(Var{&tp, ib});
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = &g.at(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const double* br = &B.at(p, 0);
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += gr[j] * br[j];
          ga.at(i, p) += s;
        }
      }
    }
    if (!tp.requires_grad(ib)) return;
    Tensor& gb = tp.grad(ib);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gr = &g.at(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A.at(i, p);
        if (av == 0.0) continue;
        double* gbr = &gb.at(p, 0);
        for (std::size_t j = 0; j < m; ++j) gbr[j] += av * gr[j];
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(broadcastable(A, B), "add shape mismatch " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) += bval(B, r, c);
  const std::size_t ia = a.id, ib = b.id;
  return t.record("add", std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    const Tensor red = reduce_to(g, tp.value(Var{&tp, ib}));
    Tensor& gb = tp.grad(ib);
    for (std::size_t i = 0; i < red.size(); ++i) gb[i] += red[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(broadcastable(A, B), "mul shape mismatch " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) *= bval(B, r, c);
  const std::size_t ia = a.id, ib = b.id;
  return t.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(Var{&tp, ia});
    const Tensor& B = tp.value(Var{&tp, ib});
    Tensor ga_local(A.shape());
    Tensor gb_full(A.shape());
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) {
        ga_local.at(r, c) = g.at(r, c) * bval(B, r, c);
        gb_full.at(r, c) = g.at(r, c) * A.at(r, c);
      }
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ga_local[i];
    const Tensor red = reduce_to(gb_full, B);
    Tensor& gb = tp.grad(ib);
    for (std::size_t i = 0; i < red.size(); ++i) gb[i] += red[i];
  });
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    ids.push_back(p.id);
  }
  if (axis == Axis::Cols) {
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> offsets;
    std::size_t width = 0;
    for (const Var& p : parts) {
      require(p.value().rows() == rows, "concat row mismatch " + shape_str(parts[0].value().shape()) +
                                            " vs " + shape_str(p.value().shape()));
      offsets.push_back(width);
      width += p.value().cols();
    }
    Tensor out({rows, width});
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor& v = parts[k].value();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(&v.at(r, 0), v.cols(), &out.at(r, offsets[k]));
    }
    return t.record("concat", std::move(out), ids, [ids, offsets, rows](Tape& tp, const Tensor& g) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        Tensor& gk = tp.grad(ids[k]);
        const std::size_t w = gk.cols();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gk.at(r, c) += g.at(r, offsets[k] + c);
      }
    });
  }
  if (axis != Axis::Rows) throw UsageError("concat axis must be Rows or Cols");
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> offsets;
  std::size_t height = 0;
  for (const Var& p : parts) {
    require(p.value().cols() == cols, "concat column mismatch " + shape_str(parts[0].value().shape()) +
                                          " vs " + shape_str(p.value().shape()));
    offsets.push_back(height);
    height += p.value().rows();
  }
  Tensor out({height, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + offsets[k] * cols);
  }
  return t.record("concat", std::move(out), ids, [ids, offsets, cols](Tape& tp, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gk = tp.grad(ids[k]);
      const double* src = g.data().data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += src[i];
    }
  });
}

Var concat(std::initializer_list<Var> parts, Axis axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(begin < end && end <= A.cols(), "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                              ") out of range for " + shape_str(A.shape()));
  const std::size_t rows = A.rows(), w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(&A.at(r, begin), w, &out.at(r, 0));
  const std::size_t ia = a.id;
  return t.record("slice", std::move(out), {ia}, [ia, begin, rows, w](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga.at(r, begin + c) += g.at(r, c);
  });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Tape& t = tape_of(table);
  const Tensor& W = table.value();
  require(!indices.empty(), "gather_rows with no indices");
  const std::size_t w = W.cols();
  Tensor out({indices.size(), w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    require(idx >= 0 && static_cast<std::size_t>(idx) < W.rows(),
            "gather_rows index " + std::to_string(idx) + " out of range for " + shape_str(W.shape()));
    std::copy_n(&W.at(idx, 0), w, &out.at(i, 0));
  }
  const std::size_t it = table.id;
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record("gather_rows", std::move(out), {it}, [it, idx = std::move(idx), w](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < w; ++c) gt.at(idx[i], c) += g.at(i, c);
  });
}

namespace {

// Elementwise op; dfdx receives (x, y) with y = f(x).
template <typename F, typename D>
Var unary(const char* name, Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  const std::size_t ia = a.id;
  const std::size_t io = t.size();
  return t.record(name, std::move(out), {ia}, [ia, io, dfdx](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(Var{&tp, ia});
    const Tensor& y = tp.value(Var{&tp, io});
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var additive_mask(Var a, std::span<const unsigned char> keep) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  require(keep.size() == A.size(), "additive_mask: mask has " + std::to_string(keep.size()) +
                                       " entries, tensor " + shape_str(A.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < A.size(); ++i)
    if (!keep[i]) out[i] += kMaskedLogit;
  const std::size_t ia = a.id;
  return t.record("additive_mask", std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = A.row_span(r);
    auto y = out.row_span(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  const std::size_t ia = a.id;
  const std::size_t io = t.size();
  return t.record("softmax", std::move(out), {ia}, [ia, io, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(Var{&tp, io});
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = A.row_span(r);
    auto y = out.row_span(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lz;
  }
  const std::size_t ia = a.id;
  const std::size_t io = t.size();
  return t.record("log_softmax", std::move(out), {ia}, [ia, io, rows, cols](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(Var{&tp, io});
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gs += g.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gs;
    }
  });
}

Var pick(Var a, std::span<const int> cols) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t rows = A.rows(), n = A.cols();
  require(cols.size() == rows, "pick needs one column per row");
  std::vector<int> idx(cols.begin(), cols.end());
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    require(idx[r] >= 0 && static_cast<std::size_t>(idx[r]) < n, "pick column out of range");
    out[r] = A.at(r, static_cast<std::size_t>(idx[r]));
  }
  const std::size_t ia = a.id;
  return t.record("pick", std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.at(r, static_cast<std::size_t>(idx[r])) += g[r];
  });
}

Var sum(Var a, Axis axis) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t ia = a.id;
  if (axis == Axis::Rows) throw UsageError("sum over Axis::Rows is not supported");
  if (axis == Axis::All) {
    double s = 0.0;
    for (double v : A.data()) s += v;
    return t.record("sum", Tensor::scalar(s), {ia}, [ia](Tape& tp, const Tensor& g) {
      Tensor& ga = tp.grad(ia);
      for (double& v : ga.data()) v += g[0];
    });
  }
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double v : A.row_span(r)) s += v;
    out[r] = s;
  }
  return t.record("sum", std::move(out), {ia}, [ia, rows, cols](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g[r];
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.data()) s += v;
  const double n = static_cast<double>(A.size());
  const std::size_t ia = a.id;
  return t.record("mean", Tensor::scalar(s / n), {ia}, [ia, n](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (double& v : ga.data()) v += g[0] / n;
  });
}

// ---------------------------------------------------------------------------

double check_gradients(const std::function<Var(Tape&)>& loss, std::span<Tensor* const> params, double eps) {
  if (!(eps > 1e-8 && eps < 1e-3)) throw UsageError("check_gradients: eps must lie in (1e-8, 1e-3)");
  Gradients analytic;
  {
    Tape tape;
    Var l = loss(tape);
    analytic = tape.backward(l);
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).value().item();
  };
  double worst = 0.0;
  for (Tensor* p : params) {
    const Tensor g = analytic.of(*p);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = (*p)[i];
      (*p)[i] = orig + eps;
      const double up = eval();
      (*p)[i] = orig - eps;
      const double down = eval();
      (*p)[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Optimization

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw ConfigError("Adam learning rate must be non-negative");
}

void Adam::step(std::span<Tensor* const> params, const Gradients& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Tensor* p : params) {
    auto [it, inserted] = moments_.try_emplace(p, Tensor(p->shape()), Tensor(p->shape()));
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    const Tensor g = grads.of(*p);
    for (std::size_t i = 0; i < p->size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      (*p)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace trufll::ad
