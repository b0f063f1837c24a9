#include "sinlg/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace sinlg {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string shape_string(std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw NumericsError(std::string(op) + ": operands are not on the same tape");
  }
  return *a.tape();
}

Tape& tape_of(Var a, const char* op) {
  if (a.tape() == nullptr) throw NumericsError(std::string(op) + ": detached variable");
  return *a.tape();
}

enum class Broadcast { kSame, kScalarA, kScalarB, kRowA, kRowB };

struct BinaryShape {
  std::size_t rows;
  std::size_t cols;
  Broadcast mode;
};

BinaryShape broadcast_shape(Var a, Var b, const char* op) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  if (ar == br && ac == bc) return {ar, ac, Broadcast::kSame};
  if (ar == 1 && ac == 1) return {br, bc, Broadcast::kScalarA};
  if (br == 1 && bc == 1) return {ar, ac, Broadcast::kScalarB};
  if (ar == 1 && ac == bc) return {br, bc, Broadcast::kRowA};
  if (br == 1 && bc == ac) return {ar, ac, Broadcast::kRowB};
  throw NumericsError(std::string(op) + ": shapes " + shape_string(ar, ac) + " and " +
                      shape_string(br, bc) + " do not broadcast");
}

// Index into operand a / b for output position (r, c).
std::size_t index_a(Broadcast m, std::size_t r, std::size_t c, std::size_t cols) {
  switch (m) {
    case Broadcast::kScalarA: return 0;
    case Broadcast::kRowA: return c;
    default: return r * cols + c;
  }
}

std::size_t index_b(Broadcast m, std::size_t r, std::size_t c, std::size_t cols) {
  switch (m) {
    case Broadcast::kScalarB: return 0;
    case Broadcast::kRowB: return c;
    default: return r * cols + c;
  }
}

template <typename Forward, typename GradA, typename GradB>
Var binary(Var a, Var b, const char* op, Forward forward, GradA grad_a, GradB grad_b) {
  Tape& tape = same_tape(a, b, op);
  const BinaryShape s = broadcast_shape(a, b, op);
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(s.rows * s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[r * s.cols + c] = forward(av[index_a(s.mode, r, c, s.cols)], bv[index_b(s.mode, r, c, s.cols)]);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(s.rows, s.cols, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto x = t.value(ia);
    auto y = t.value(ib);
    const bool need_a = t.needs_grad(ia), need_b = t.needs_grad(ib);
    std::span<double> ga = need_a ? t.grad(ia) : std::span<double>{};
    std::span<double> gb = need_b ? t.grad(ib) : std::span<double>{};
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        const double go = g[r * s.cols + c];
        const std::size_t pa = index_a(s.mode, r, c, s.cols);
        const std::size_t pb = index_b(s.mode, r, c, s.cols);
        if (need_a) ga[pa] += grad_a(go, x[pa], y[pb]);
        if (need_b) gb[pb] += grad_b(go, x[pa], y[pb]);
      }
    }
  });
}

template <typename Forward, typename Derivative>
Var unary(Var x, const char* op, Forward forward, Derivative derivative) {
  Tape& tape = tape_of(x, op);
  auto xv = x.value();
  std::vector<double> out(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), forward);
  const std::size_t ix = x.id();
  return tape.record(x.rows(), x.cols(), std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto in = t.value(ix);
    auto out_v = t.value(self);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(in[i], out_v[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- Tensor

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape_in, std::vector<double> data_in, bool requires_grad_in)
    : shape(std::move(shape_in)), data(std::move(data_in)), requires_grad(requires_grad_in) {
  if (shape_product(shape) != data.size()) {
    throw NumericsError("Tensor: shape product does not match data length");
  }
  check_finite("Tensor");
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw NumericsError("Tensor: rank > 2 has no matrix view");
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw NumericsError("Tensor: rank > 2 has no matrix view");
}

void Tensor::zero_grad() const {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tensor::check_finite(const std::string& what) const {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericsError(what + ": non-finite value");
  }
}

// ---------------------------------------------------------------- Var

std::size_t Var::rows() const { return tape_->rows(id_); }
std::size_t Var::cols() const { return tape_->cols(id_); }
std::span<const double> Var::value() const { return tape_->value(id_); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw NumericsError("Var::item: not a scalar");
  return v[0];
}

// ---------------------------------------------------------------- Tape

Var Tape::param(const Tensor& tensor) {
  if (auto it = bound_ids_.find(&tensor); it != bound_ids_.end()) return Var(this, it->second);
  Node node;
  node.rows = tensor.rows();
  node.cols = tensor.cols();
  node.bound = &tensor;
  node.needs_grad = grad_enabled_ && tensor.requires_grad;
  if (node.needs_grad) node.param = &tensor;
  nodes_.push_back(std::move(node));
  bound_ids_.emplace(&tensor, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(const Tensor& tensor) {
  return constant(tensor.rows(), tensor.cols(), tensor.data);
}

Var Tape::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (rows * cols != values.size()) throw NumericsError("Tape::constant: shape mismatch");
  Node node;
  node.rows = rows;
  node.cols = cols;
  node.value = std::move(values);
  for (double v : node.value) {
    if (!std::isfinite(v)) throw NumericsError("Tape::constant: non-finite value");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<const double> Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.bound != nullptr) return n.bound->data;
  return n.value;
}

std::span<double> Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.rows * n.cols, 0.0);
  return n.grad;
}

std::span<const double> Tape::grad_if_any(std::size_t id) const { return nodes_[id].grad; }

Var Tape::record(std::size_t rows, std::size_t cols, std::vector<double> value,
                 std::initializer_list<Var> inputs, Adjoint adjoint) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericsError("tape operation produced a non-finite value");
  }
  Node node;
  node.rows = rows;
  node.cols = cols;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw NumericsError("Tape::record: input from another tape");
      if (nodes_[in.id()].needs_grad) node.needs_grad = true;
    }
  }
  if (node.needs_grad) node.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw NumericsError("backward: loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw NumericsError("backward: loss is not a scalar");
  if (!nodes_[loss.id()].needs_grad) throw NumericsError("backward: loss is detached from all parameters");
  for (Node& n : nodes_) n.grad.clear();
  grad(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.adjoint) n.adjoint(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    const Tensor& p = *n.param;
    if (!p.grad) p.grad.emplace(p.data.size(), 0.0);
    for (std::size_t k = 0; k < n.grad.size(); ++k) (*p.grad)[k] += n.grad[k];
  }
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

Var scale(Var a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Var relu(Var x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double out) { return out * (1.0 - out); });
}

Var tanh(Var x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Var elementwise(Elementwise kind, Var x, std::optional<Var> y) {
  auto need_y = [&]() -> Var {
    if (!y) throw NumericsError("elementwise: binary operation needs a second operand");
    return *y;
  };
  switch (kind) {
    case Elementwise::kAdd: return add(x, need_y());
    case Elementwise::kSub: return sub(x, need_y());
    case Elementwise::kMul: return mul(x, need_y());
    case Elementwise::kRelu: return relu(x);
    case Elementwise::kSigmoid: return sigmoid(x);
    case Elementwise::kTanh: return tanh(x);
  }
  throw NumericsError("elementwise: unknown kind");
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw NumericsError("matmul: inner dimensions differ (" + shape_string(m, k) + " x " +
                        shape_string(b.rows(), n) + ")");
  }
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(m, n, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = as_matrix(t.grad_if_any(self), m, n);
    if (t.needs_grad(ia)) {
      as_matrix(t.grad(ia), m, k).noalias() += g * as_matrix(t.value(ib), k, n).transpose();
    }
    if (t.needs_grad(ib)) {
      as_matrix(t.grad(ib), k, n).noalias() += as_matrix(t.value(ia), m, k).transpose() * g;
    }
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_matrix(std::span<double>(out), n, m) = as_matrix(a.value(), m, n).transpose();
  const std::size_t ia = a.id();
  return tape.record(n, m, std::move(out), {a}, [=](Tape& t, std::size_t self) {
    as_matrix(t.grad(ia), m, n) += as_matrix(t.grad_if_any(self), n, m).transpose();
  });
}

// ---------------------------------------------------------------- normalization

Var softmax_rows(Var x, std::span<const int> key_mask) {
  Tape& tape = tape_of(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (!key_mask.empty() && key_mask.size() != n) {
    throw NumericsError("softmax_rows: mask length differs from column count");
  }
  std::vector<int> mask(key_mask.begin(), key_mask.end());
  auto allowed = [&mask](std::size_t c) { return mask.empty() || mask[c] != 0; };
  auto xv = x.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (allowed(c)) top = std::max(top, xv[r * n + c]);
    }
    if (!std::isfinite(top)) continue;
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!allowed(c)) continue;
      out[r * n + c] = std::exp(xv[r * n + c] - top);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  const std::size_t ix = x.id();
  return tape.record(m, n, std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto y = t.value(self);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < m; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < n; ++c) inner += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - inner);
    }
  });
}

Var layernorm(Var x, double epsilon) {
  Tape& tape = tape_of(x, "layernorm");
  const std::size_t m = x.rows(), n = x.cols();
  auto xv = x.value();
  std::vector<double> out(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = (xv[r * n + c] - mu) * inv_std[r];
  }
  const std::size_t ix = x.id();
  return tape.record(m, n, std::move(out), {x}, [=, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto y = t.value(self);
    auto gx = t.grad(ix);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < m; ++r) {
      double g_mean = 0.0, gy_mean = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        g_mean += g[r * n + c];
        gy_mean += g[r * n + c] * y[r * n + c];
      }
      g_mean *= inv_n;
      gy_mean *= inv_n;
      for (std::size_t c = 0; c < n; ++c) {
        gx[r * n + c] += inv_std[r] * (g[r * n + c] - g_mean - y[r * n + c] * gy_mean);
      }
    }
  });
}

// ---------------------------------------------------------------- structural

Var concat_cols(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_cols");
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  if (b.rows() != m) throw NumericsError("concat_cols: row counts differ");
  auto av = a.value();
  auto bv = b.value();
  const std::size_t n = na + nb;
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(av.begin() + r * na, na, out.begin() + r * n);
    std::copy_n(bv.begin() + r * nb, nb, out.begin() + r * n + na);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(m, n, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < na; ++c) ga[r * na + c] += g[r * n + c];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < nb; ++c) gb[r * nb + c] += g[r * n + na + c];
    }
  });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_rows");
  const std::size_t n = a.cols(), ma = a.rows(), mb = b.rows();
  if (b.cols() != n) throw NumericsError("concat_rows: column counts differ");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out;
  out.reserve((ma + mb) * n);
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(ma + mb, n, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t k = 0; k < ma * n; ++k) ga[k] += g[k];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t k = 0; k < mb * n; ++k) gb[k] += g[ma * n + k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& tape = tape_of(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) throw NumericsError("slice_cols: range out of bounds");
  auto av = a.value();
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(av.begin() + r * n + begin, count, out.begin() + r * count);
  const std::size_t ia = a.id();
  return tape.record(m, count, std::move(out), {a}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto ga = t.grad(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) ga[r * n + begin + c] += g[r * count + c];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& tape = tape_of(a, "slice_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > m) throw NumericsError("slice_rows: range out of bounds");
  auto av = a.value();
  std::vector<double> out(av.begin() + begin * n, av.begin() + (begin + count) * n);
  const std::size_t ia = a.id();
  return tape.record(count, n, std::move(out), {a}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto ga = t.grad(ia);
    for (std::size_t k = 0; k < count * n; ++k) ga[begin * n + k] += g[k];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& tape = tape_of(table, "gather_rows");
  const std::size_t m = table.rows(), n = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  auto tv = table.value();
  std::vector<double> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw NumericsError("gather_rows: index out of range");
    std::copy_n(tv.begin() + idx[i] * n, n, out.begin() + i * n);
  }
  const std::size_t it = table.id();
  const std::size_t count = idx.size();
  return tape.record(count, n, std::move(out), {table}, [=, idx = std::move(idx)](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto gt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gt[idx[i] * n + c] += g[i * n + c];
  });
}

Var scatter_add_rows(Var x, std::span<const std::size_t> targets, std::size_t out_rows) {
  Tape& tape = tape_of(x, "scatter_add_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (targets.size() != m) throw NumericsError("scatter_add_rows: one target per row required");
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  auto xv = x.value();
  std::vector<double> out(out_rows * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] >= out_rows) throw NumericsError("scatter_add_rows: target out of range");
    for (std::size_t c = 0; c < n; ++c) out[tgt[i] * n + c] += xv[i * n + c];
  }
  const std::size_t ix = x.id();
  return tape.record(out_rows, n, std::move(out), {x}, [=, tgt = std::move(tgt)](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < n; ++c) gx[i * n + c] += g[tgt[i] * n + c];
  });
}

Var scale_rows(Var x, Var weights) {
  Tape& tape = same_tape(x, weights, "scale_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (weights.rows() != m || weights.cols() != 1) throw NumericsError("scale_rows: weights must be an m x 1 column");
  auto xv = x.value();
  auto wv = weights.value();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] * wv[r];
  const std::size_t ix = x.id(), iw = weights.id();
  return tape.record(m, n, std::move(out), {x, weights}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto xs = t.value(ix);
    auto ws = t.value(iw);
    if (t.needs_grad(ix)) {
      auto gx = t.grad(ix);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * ws[r];
    }
    if (t.needs_grad(iw)) {
      auto gw = t.grad(iw);
      for (std::size_t r = 0; r < m; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += g[r * n + c] * xs[r * n + c];
        gw[r] += acc;
      }
    }
  });
}

Var segment_softmax(Var logits, std::span<const std::size_t> segments, std::size_t segment_count) {
  Tape& tape = tape_of(logits, "segment_softmax");
  const std::size_t m = logits.rows();
  if (logits.cols() != 1) throw NumericsError("segment_softmax: logits must be an m x 1 column");
  if (segments.size() != m) throw NumericsError("segment_softmax: one segment id per logit required");
  std::vector<std::size_t> seg(segments.begin(), segments.end());
  auto lv = logits.value();
  std::vector<double> top(segment_count, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    if (seg[i] >= segment_count) throw NumericsError("segment_softmax: segment id out of range");
    top[seg[i]] = std::max(top[seg[i]], lv[i]);
  }
  std::vector<double> out(m);
  std::vector<double> total(segment_count, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = std::exp(lv[i] - top[seg[i]]);
    total[seg[i]] += out[i];
  }
  for (std::size_t i = 0; i < m; ++i) out[i] /= total[seg[i]];
  const std::size_t il = logits.id();
  return tape.record(m, 1, std::move(out), {logits}, [=, seg = std::move(seg)](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto y = t.value(self);
    auto gl = t.grad(il);
    std::vector<double> inner(segment_count, 0.0);
    for (std::size_t i = 0; i < m; ++i) inner[seg[i]] += g[i] * y[i];
    for (std::size_t i = 0; i < m; ++i) gl[i] += y[i] * (g[i] - inner[seg[i]]);
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Var x) {
  Tape& tape = tape_of(x, "sum");
  auto xv = x.value();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  const std::size_t ix = x.id();
  return tape.record(1, 1, {total}, {x}, [=](Tape& t, std::size_t self) {
    const double g = t.grad_if_any(self)[0];
    for (double& v : t.grad(ix)) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.rows() * x.cols();
  if (n == 0) throw NumericsError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var x) {
  Tape& tape = tape_of(x, "mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw NumericsError("mean_rows: no rows");
  auto xv = x.value();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += xv[r * n + c];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out) v *= inv;
  const std::size_t ix = x.id();
  return tape.record(1, n, std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_if_any(self);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c] * inv;
  });
}

Var dot(Var u, Var v) {
  Tape& tape = same_tape(u, v, "dot");
  auto uv = u.value();
  auto vv = v.value();
  if (uv.size() != vv.size()) throw NumericsError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < uv.size(); ++i) acc += uv[i] * vv[i];
  const std::size_t iu = u.id(), iv = v.id();
  return tape.record(1, 1, {acc}, {u, v}, [=](Tape& t, std::size_t self) {
    const double g = t.grad_if_any(self)[0];
    auto a = t.value(iu);
    auto b = t.value(iv);
    if (t.needs_grad(iu)) {
      auto ga = t.grad(iu);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g * b[i];
    }
    if (t.needs_grad(iv)) {
      auto gb = t.grad(iv);
      for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g * a[i];
    }
  });
}

Var cosine(Var u, Var v, double epsilon) {
  Tape& tape = same_tape(u, v, "cosine");
  if (!(epsilon > 0)) throw NumericsError("cosine: epsilon must be positive");
  auto a = u.value();
  auto b = v.value();
  if (a.size() != b.size()) throw NumericsError("cosine: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double denom = std::max(na * nb, epsilon);
  const bool guarded = na * nb <= epsilon;
  const double value = ab / denom;
  const std::size_t iu = u.id(), iv = v.id();
  return tape.record(1, 1, {value}, {u, v}, [=](Tape& t, std::size_t self) {
    const double g = t.grad_if_any(self)[0];
    auto x = t.value(iu);
    auto y = t.value(iv);
    if (t.needs_grad(iu)) {
      auto gx = t.grad(iu);
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx[i] += guarded ? g * y[i] / denom : g * (y[i] / denom - value * x[i] / aa);
      }
    }
    if (t.needs_grad(iv)) {
      auto gy = t.grad(iv);
      for (std::size_t i = 0; i < y.size(); ++i) {
        gy[i] += guarded ? g * x[i] / denom : g * (x[i] / denom - value * y[i] / bb);
      }
    }
  });
}

Var bce(Var probability, double label, double clamp) {
  Tape& tape = tape_of(probability, "bce");
  if (probability.rows() != 1 || probability.cols() != 1) throw NumericsError("bce: probability must be a scalar");
  const double raw = probability.item();
  const double p = std::clamp(raw, clamp, 1.0 - clamp);
  const bool clamped = p != raw;
  const double value = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const std::size_t ip = probability.id();
  return tape.record(1, 1, {value}, {probability}, [=](Tape& t, std::size_t self) {
    if (clamped) return;
    const double g = t.grad_if_any(self)[0];
    t.grad(ip)[0] += g * (-label / p + (1.0 - label) / (1.0 - p));
  });
}

}  // namespace sinlg
