#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sinlg {

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of doubles. Rank 0 and rank 1 tensors are viewed
// as 1x1 and 1xn matrices by the tape.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Gradient side buffer; written through const references by Tape::backward.
  mutable std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor row(std::vector<double> data);
  static Tensor scalar(double value);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void zero_grad() const;
  // Throws NumericsError when any entry is NaN or infinite.
  void check_finite(const std::string& what) const;
};

std::size_t shape_product(const Shape& shape);

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const double> value() const;
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Nodes are appended in execution order, so the
// record is topologically sorted by construction and backward is a single
// reverse sweep.
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Binds a trainable tensor. Repeated binds of the same tensor return the
  // same node; backward accumulates into tensor.grad.
  Var param(const Tensor& tensor);
  Var constant(const Tensor& tensor);
  Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);

  // Populates grad of every bound requires_grad tensor. Accumulation is
  // additive; callers zero grads between steps.
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  std::size_t rows(std::size_t id) const { return nodes_[id].rows; }
  std::size_t cols(std::size_t id) const { return nodes_[id].cols; }
  std::span<const double> value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Mutable adjoint buffer; allocated on first access.
  std::span<double> grad(std::size_t id);
  // Read-only adjoint; empty when never touched.
  std::span<const double> grad_if_any(std::size_t id) const;

  // Records an operation result. `adjoint` runs during backward when any
  // input needs a gradient.
  Var record(std::size_t rows, std::size_t cols, std::vector<double> value,
             std::initializer_list<Var> inputs, Adjoint adjoint);

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    const Tensor* bound = nullptr;
    const Tensor* param = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    Adjoint adjoint;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_ids_;
};

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kTanh };

// Broadcasting rule: identical shapes, a 1x1 scalar against anything, or a
// 1xn row against an mxn matrix. Anything else throws.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var elementwise(Elementwise kind, Var x, std::optional<Var> y = std::nullopt);

Var matmul(Var a, Var b);
Var transpose(Var a);

// Row-wise softmax. When `key_mask` is given (one entry per column), masked
// columns receive exactly zero probability.
Var softmax_rows(Var x, std::span<const int> key_mask = {});
// Row-wise normalization to zero mean and unit variance (no affine part).
Var layernorm(Var x, double epsilon = 1e-10);

Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> indices);
// out[targets[i]] += x[i]; output has `out_rows` rows.
Var scatter_add_rows(Var x, std::span<const std::size_t> targets, std::size_t out_rows);
// Multiplies row i of x by weights[i] (weights is an n x 1 column).
Var scale_rows(Var x, Var weights);
// Softmax over entries of an n x 1 column grouped by segment id.
Var segment_softmax(Var logits, std::span<const std::size_t> segments, std::size_t segment_count);

Var sum(Var x);
Var mean(Var x);
// Column means over rows: m x n -> 1 x n.
Var mean_rows(Var x);
Var dot(Var u, Var v);
// u.v / max(|u| |v|, epsilon) for two vectors of equal length.
Var cosine(Var u, Var v, double epsilon = 1e-8);
// Binary cross-entropy on a probability clamped to [clamp, 1 - clamp].
Var bce(Var probability, double label, double clamp = 1e-7);

}  // namespace sinlg
