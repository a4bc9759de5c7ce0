#pragma once

// Minimal reverse-mode automatic differentiation over dense 64-bit arrays.
//
// A Tape records primitive applications in execution order. Parameters are
// registered by address (Tape::param), so the gradients returned by
// Tape::backward are keyed by the Tensor objects the caller owns. Tapes are
// rebuilt for every forward pass and must not be shared across threads.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trufll::ad {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  // Row vector [1, n].
  static Tensor row(std::vector<double> values);
  static Tensor scalar(double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  // Rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  // Scalar value of a [1,1] (or single-element) tensor.
  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// Gradients keyed by the parameter tensors registered with Tape::param.
class Gradients {
 public:
  // Zero tensor of the parameter's shape when the loss does not depend on it.
  Tensor of(const Tensor& param) const;
  bool contains(const Tensor& param) const { return grads_.count(&param) != 0; }
  Tensor* find(const Tensor& param);

  void accumulate(const Tensor& param, const Tensor& grad);
  double global_norm() const;
  void scale(double factor);

 private:
  std::unordered_map<const Tensor*, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that carries no gradient.
  Var constant(Tensor value);
  // Leaf bound to a caller-owned parameter. Registering the same tensor twice
  // returns the same node.
  Var param(const Tensor& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss node.
  Gradients backward(Var loss);

  // Used by primitives. `backward` receives the output gradient and
  // accumulates into the inputs through Tape::grad.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(const char* name, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  Tensor& grad(std::size_t id);
  // False for constants and nodes computed only from constants.
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Tensor* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
};

enum class Axis { All, Rows, Cols };

// Primitive set. `b` in add/mul may be a [1,n] row or a [1,1] scalar, which
// is broadcast over the rows of `a`.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
// Axis::Cols places parts side by side; Axis::Rows stacks them vertically.
Var concat(std::span<const Var> parts, Axis axis = Axis::Cols);
Var concat(std::initializer_list<Var> parts, Axis axis = Axis::Cols);
// Columns [begin, end).
Var slice(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var table, std::span<const int> indices);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
// a + (-1e30 where keep is false). keep has a.size() entries, row-major.
Var additive_mask(Var a, std::span<const unsigned char> keep);
// Row-wise softmax.
Var softmax(Var a);
// Row-wise log(softmax(a)), stable for masked (-1e30) entries.
Var log_softmax(Var a);
// out[r] = a[r, cols[r]] -> [rows,1].
Var pick(Var a, std::span<const int> cols);
// Axis::All -> [1,1]; Axis::Cols reduces each row -> [rows,1].
Var sum(Var a, Axis axis = Axis::All);
Var mean(Var a);

inline constexpr double kMaskedLogit = -1e30;

// Max over coordinates of |analytic - central difference| / max(1, |central|).
// `loss` must build a scalar on the given tape, registering `params` with
// Tape::param.
double check_gradients(const std::function<Var(Tape&)>& loss, std::span<Tensor* const> params,
                       double eps);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<Tensor* const> params, const Gradients& grads);
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<const Tensor*, std::pair<Tensor, Tensor>> moments_;
};

// Rescales grads in place when their global L2 norm exceeds max_norm.
// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace trufll::ad
