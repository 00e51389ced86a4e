#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// A Tensor is an immutable value plus an optional handle into a Tape. Any
// primitive applied to at least one tracked input appends a node to that
// input's tape. Every vector-Jacobian product is itself written in terms of
// the same primitives, so backward(..., create_graph = true) records the
// gradient computation on the tape and the result can be differentiated a
// second time.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "a2m/errors.hpp"

namespace a2m {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape(std::initializer_list<std::size_t> dims) : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}
  explicit Shape(const std::vector<std::size_t>& dims) : Shape(std::span<const std::size_t>(dims)) {}

  explicit Shape(std::span<const std::size_t> dims) : rank_(dims.size()) {
    if (dims.empty()) throw DimensionError("shape must have at least one dimension");
    if (dims.size() > kMaxRank) throw DimensionError("shape rank " + std::to_string(dims.size()) + " exceeds 4");
    std::copy(dims.begin(), dims.end(), dims_.begin());
    for (auto d : dims) {
      if (d == 0) throw DimensionError("shape " + to_string() + " has a zero extent");
    }
  }

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t i) const {
    if (i >= rank_) throw DimensionError("axis " + std::to_string(i) + " out of range for shape " + to_string());
    return dims_[i];
  }
  std::vector<std::size_t> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }

  std::size_t numel() const noexcept {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  std::string to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

using NodeId = std::int64_t;
using Storage = std::vector<double>;

class Tape;

class Tensor {
 public:
  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::make_shared<const Storage>(std::move(values))) {
    if (data_->size() != shape_.numel()) {
      throw DimensionError("tensor of shape " + shape_.to_string() + " needs " +
                           std::to_string(shape_.numel()) + " values, got " +
                           std::to_string(data_->size()));
    }
  }

  static Tensor full(const Shape& shape, double v) { return Tensor(shape, Storage(shape.numel(), v)); }
  static Tensor zeros(const Shape& shape) { return full(shape, 0.0); }
  static Tensor ones(const Shape& shape) { return full(shape, 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::span<const double> values() const noexcept { return *data_; }
  std::size_t size() const noexcept { return data_->size(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }
  double item() const {
    if (data_->size() != 1) throw UsageError("item() on tensor of shape " + shape_.to_string());
    return (*data_)[0];
  }

  bool tracked() const noexcept { return tape_ != nullptr; }
  NodeId node() const noexcept { return node_; }
  const std::shared_ptr<Tape>& tape() const noexcept { return tape_; }
  const std::shared_ptr<const Storage>& storage() const noexcept { return data_; }

 private:
  friend class Tape;
  friend Tensor detach(const Tensor&);

  Tensor(Shape shape, std::shared_ptr<const Storage> data, std::shared_ptr<Tape> tape, NodeId node)
      : shape_(std::move(shape)), data_(std::move(data)), tape_(std::move(tape)), node_(node) {}

  Shape shape_;
  std::shared_ptr<const Storage> data_;
  std::shared_ptr<Tape> tape_;
  NodeId node_ = -1;
};

enum class OpKind {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  add_bias,
  sum_rows,
  sum_cols,
  broadcast_rows,
  broadcast_cols,
  sum_all,
  fill,
  mul_scalar,
  relu,
  softmax_rows,
  cross_entropy,
  sq_dist,
};

/// An operand as seen by the node that consumed it. `id` is -1 for constants.
struct SavedInput {
  Shape shape;
  std::shared_ptr<const Storage> data;
  NodeId id = -1;
};

struct Node {
  OpKind kind = OpKind::leaf;
  std::vector<SavedInput> inputs;
  Shape out_shape{1};
  double scalar = 0.0;               // scale factor
  std::size_t extent = 0;            // broadcast extent
  std::vector<std::size_t> labels;   // cross-entropy targets
};

/// Append-only record of primitive applications. Nodes reference inputs by
/// index only, so node i's inputs always have index < i.
class Tape : public std::enable_shared_from_this<Tape> {
 public:
  static std::shared_ptr<Tape> create() { return std::shared_ptr<Tape>(new Tape()); }

  /// Registers `value` as a leaf (a differentiable parameter) on this tape.
  Tensor track(const Tensor& value) {
    Node n;
    n.out_shape = value.shape();
    const auto id = append(std::move(n));
    return Tensor(value.shape(), value.storage(), shared_from_this(), id);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  NodeId append(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Tensor result(Shape shape, Storage values, NodeId id) {
    return Tensor(std::move(shape), std::make_shared<const Storage>(std::move(values)),
                  shared_from_this(), id);
  }

  /// Rebuilds an operand; tracked when `keep_graph` and the operand was tracked.
  Tensor operand(const SavedInput& in, bool keep_graph) {
    if (keep_graph && in.id >= 0) return Tensor(in.shape, in.data, shared_from_this(), in.id);
    return Tensor(in.shape, in.data, nullptr, -1);
  }

 private:
  Tape() = default;
  std::vector<Node> nodes_;
};

/// Same values, no tape handle. Shares storage with `x`.
inline Tensor detach(const Tensor& x) { return Tensor(x.shape(), x.data_, nullptr, -1); }

namespace detail {

inline std::shared_ptr<Tape> common_tape(std::initializer_list<const Tensor*> inputs) {
  std::shared_ptr<Tape> tape;
  for (const auto* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw UsageError("operands are tracked on different tapes");
    tape = t->tape();
  }
  return tape;
}

inline SavedInput save(const Tensor& t) { return {t.shape(), t.storage(), t.node()}; }

/// Wraps computed values; records `node` when any input is tracked.
inline Tensor emit(Shape shape, Storage values, Node node, std::initializer_list<const Tensor*> inputs) {
  auto tape = common_tape(inputs);
  if (!tape) return Tensor(std::move(shape), std::move(values));
  node.out_shape = shape;
  for (const auto* t : inputs) node.inputs.push_back(save(*t));
  const auto id = tape->append(std::move(node));
  return tape->result(std::move(shape), std::move(values), id);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* operand) {
  if (t.shape().rank() != rank) {
    throw DimensionError(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                         ", got shape " + t.shape().to_string());
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes differ, " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
  }
}

inline void require_scalar(const Tensor& s, const char* op) {
  if (s.shape() != Shape{1}) throw DimensionError(std::string(op) + ": expected scalar, got " + s.shape().to_string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul", "left operand");
  detail::require_rank(b, 2, "matmul", "right operand");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: left operand " + a.shape().to_string() + " does not conform with right operand " +
                         b.shape().to_string());
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(n), inner = static_cast<Eigen::Index>(k), cols = static_cast<Eigen::Index>(m);
  Storage out(n * m);
  Eigen::Map<RowMajor> o(out.data(), rows, cols);
  const Eigen::Map<const RowMajor> ma(a.values().data(), rows, inner), mb(b.values().data(), inner, cols);
  o.noalias() = ma * mb;
  return detail::emit(Shape{n, m}, std::move(out), Node{.kind = OpKind::matmul}, {&a, &b});
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose", "operand");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Storage out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
  return detail::emit(Shape{m, n}, std::move(out), Node{.kind = OpKind::transpose}, {&a});
}

namespace detail {
template <class F>
Tensor elementwise(const Tensor& a, const Tensor& b, OpKind kind, const char* name, F f) {
  require_same_shape(a, b, name);
  Storage out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return emit(a.shape(), std::move(out), Node{.kind = kind}, {&a, &b});
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, OpKind::add, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, OpKind::sub, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, OpKind::mul, "mul", [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double c) {
  Storage out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  return detail::emit(a.shape(), std::move(out), Node{.kind = OpKind::scale, .scalar = c}, {&a});
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

/// x[n×m] + b[m], broadcasting the bias over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  detail::require_rank(x, 2, "add_bias", "x");
  detail::require_rank(b, 1, "add_bias", "bias");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (b.shape()[0] != m) {
    throw DimensionError("add_bias: bias has length " + std::to_string(b.shape()[0]) + " but x has " +
                         std::to_string(m) + " columns");
  }
  Storage out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] + b[j];
  return detail::emit(x.shape(), std::move(out), Node{.kind = OpKind::add_bias}, {&x, &b});
}

/// Column sums: [n×m] -> [m].
inline Tensor sum_rows(const Tensor& x) {
  detail::require_rank(x, 2, "sum_rows", "operand");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Storage out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  return detail::emit(Shape{m}, std::move(out), Node{.kind = OpKind::sum_rows}, {&x});
}

/// Row sums: [n×m] -> [n].
inline Tensor sum_cols(const Tensor& x) {
  detail::require_rank(x, 2, "sum_cols", "operand");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Storage out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += x[i * m + j];
  return detail::emit(Shape{n}, std::move(out), Node{.kind = OpKind::sum_cols}, {&x});
}

/// v[m] -> [rows×m], every row a copy of v.
inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  detail::require_rank(v, 1, "broadcast_rows", "operand");
  const std::size_t m = v.shape()[0];
  Storage out(rows * m);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(v.values().data(), m, out.data() + i * m);
  return detail::emit(Shape{rows, m}, std::move(out), Node{.kind = OpKind::broadcast_rows, .extent = rows}, {&v});
}

/// v[n] -> [n×cols], row i filled with v[i].
inline Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
  detail::require_rank(v, 1, "broadcast_cols", "operand");
  const std::size_t n = v.shape()[0];
  Storage out(n * cols);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.data() + i * cols, cols, v[i]);
  return detail::emit(Shape{n, cols}, std::move(out), Node{.kind = OpKind::broadcast_cols, .extent = cols}, {&v});
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::emit(Shape{1}, {s}, Node{.kind = OpKind::sum_all}, {&x});
}

/// Scalar s[1] -> tensor of `shape` filled with s.
inline Tensor fill(const Tensor& s, const Shape& shape) {
  detail::require_scalar(s, "fill");
  Node n{.kind = OpKind::fill};
  return detail::emit(shape, Storage(shape.numel(), s[0]), std::move(n), {&s});
}

/// x * s for a scalar tensor s[1].
inline Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  detail::require_scalar(s, "mul_scalar");
  Storage out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s[0];
  return detail::emit(x.shape(), std::move(out), Node{.kind = OpKind::mul_scalar}, {&x, &s});
}

inline Tensor relu(const Tensor& x) {
  Storage out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::emit(x.shape(), std::move(out), Node{.kind = OpKind::relu}, {&x});
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows", "operand");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Storage out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.values().data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return detail::emit(x.shape(), std::move(out), Node{.kind = OpKind::softmax_rows}, {&x});
}

/// Mean over rows of -log softmax(logits)[label]; max-subtracted per row.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " is outside [0, " + std::to_string(k) + ")");
    }
    const double* row = logits.values().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) - (row[labels[i]] - mx);
  }
  Node node{.kind = OpKind::cross_entropy};
  node.labels.assign(labels.begin(), labels.end());
  return detail::emit(Shape{1}, {total / static_cast<double>(n)}, std::move(node), {&logits});
}

/// Entry (i,k) = ||q_i - c_k||^2, by direct subtraction.
inline Tensor sq_dist(const Tensor& q, const Tensor& c) {
  detail::require_rank(q, 2, "sq_dist", "queries");
  detail::require_rank(c, 2, "sq_dist", "centers");
  const std::size_t n = q.shape()[0], d = q.shape()[1], k = c.shape()[0];
  if (c.shape()[1] != d) {
    throw DimensionError("sq_dist: queries have width " + std::to_string(d) + " but centers have width " +
                         std::to_string(c.shape()[1]));
  }
  Storage out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = q[i * d + t] - c[j * d + t];
        s += diff * diff;
      }
      out[i * k + j] = s;
    }
  }
  return detail::emit(Shape{n, k}, std::move(out), Node{.kind = OpKind::sq_dist}, {&q, &c});
}

/// x·W + b.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank(x, 2, "linear", "x");
  detail::require_rank(w, 2, "linear", "W");
  detail::require_rank(b, 1, "linear", "b");
  if (x.shape()[1] != w.shape()[0]) {
    throw DimensionError("linear: x has width " + std::to_string(x.shape()[1]) + " but W has " +
                         std::to_string(w.shape()[0]) + " rows");
  }
  if (b.shape()[0] != w.shape()[1]) {
    throw DimensionError("linear: b has length " + std::to_string(b.shape()[0]) + " but W has " +
                         std::to_string(w.shape()[1]) + " columns");
  }
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor one_hot_constant(std::span<const std::size_t> labels, std::size_t k) {
  Storage v(labels.size() * k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i * k + labels[i]] = 1.0;
  return Tensor(Shape{labels.size(), k}, std::move(v));
}

/// Gradients of one node's inputs given the upstream gradient `g`.
/// Entries for inputs with want[i] == false stay empty.
inline std::vector<std::optional<Tensor>> vjp(const Node& node, const std::vector<Tensor>& in, const Tensor& g,
                                              const std::vector<char>& want) {
  std::vector<std::optional<Tensor>> out(in.size());
  auto set = [&](std::size_t i, auto&& make) {
    if (want[i]) out[i] = make();
  };
  switch (node.kind) {
    case OpKind::leaf:
      break;
    case OpKind::matmul:
      set(0, [&] { return matmul(g, transpose(in[1])); });
      set(1, [&] { return matmul(transpose(in[0]), g); });
      break;
    case OpKind::transpose:
      set(0, [&] { return transpose(g); });
      break;
    case OpKind::add:
      set(0, [&] { return g; });
      set(1, [&] { return g; });
      break;
    case OpKind::sub:
      set(0, [&] { return g; });
      set(1, [&] { return neg(g); });
      break;
    case OpKind::mul:
      set(0, [&] { return mul(g, in[1]); });
      set(1, [&] { return mul(g, in[0]); });
      break;
    case OpKind::scale:
      set(0, [&] { return scale(g, node.scalar); });
      break;
    case OpKind::add_bias:
      set(0, [&] { return g; });
      set(1, [&] { return sum_rows(g); });
      break;
    case OpKind::sum_rows:
      set(0, [&] { return broadcast_rows(g, in[0].shape()[0]); });
      break;
    case OpKind::sum_cols:
      set(0, [&] { return broadcast_cols(g, in[0].shape()[1]); });
      break;
    case OpKind::broadcast_rows:
      set(0, [&] { return sum_rows(g); });
      break;
    case OpKind::broadcast_cols:
      set(0, [&] { return sum_cols(g); });
      break;
    case OpKind::sum_all:
      set(0, [&] { return fill(g, in[0].shape()); });
      break;
    case OpKind::fill:
      set(0, [&] { return sum_all(g); });
      break;
    case OpKind::mul_scalar:
      set(0, [&] { return mul_scalar(g, in[1]); });
      set(1, [&] { return sum_all(mul(g, in[0])); });
      break;
    case OpKind::relu:
      set(0, [&] {
        Storage mask(in[0].size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = in[0][i] > 0.0 ? 1.0 : 0.0;
        return mul(g, Tensor(in[0].shape(), std::move(mask)));
      });
      break;
    case OpKind::softmax_rows:
      set(0, [&] {
        const Tensor y = softmax_rows(in[0]);
        const std::size_t m = in[0].shape()[1];
        return mul(y, sub(g, broadcast_cols(sum_cols(mul(g, y)), m)));
      });
      break;
    case OpKind::cross_entropy:
      set(0, [&] {
        const std::size_t n = in[0].shape()[0], k = in[0].shape()[1];
        const Tensor diff = sub(softmax_rows(in[0]), one_hot_constant(node.labels, k));
        return mul_scalar(scale(diff, 1.0 / static_cast<double>(n)), g);
      });
      break;
    case OpKind::sq_dist: {
      const std::size_t d = in[0].shape()[1];
      set(0, [&] { return scale(sub(mul(in[0], broadcast_cols(sum_cols(g), d)), matmul(g, in[1])), 2.0); });
      set(1, [&] {
        return scale(sub(mul(in[1], broadcast_cols(sum_rows(g), d)), matmul(transpose(g), in[0])), 2.0);
      });
      break;
    }
  }
  return out;
}

struct ParamKey {
  const void* owner = nullptr;
  NodeId id = -1;
  friend auto operator<=>(const ParamKey&, const ParamKey&) = default;
};

inline ParamKey key_of(const Tensor& t) {
  if (t.tracked()) return {t.tape().get(), t.node()};
  return {t.storage().get(), -1};
}

}  // namespace detail

/// Gradients keyed by parameter identity (tape + node for tracked tensors,
/// storage for constants).
class GradMap {
 public:
  void insert(const Tensor& param, Tensor grad) {
    if (grad.shape() != param.shape()) {
      throw DimensionError("gradient shape " + grad.shape().to_string() + " does not match parameter shape " +
                           param.shape().to_string());
    }
    entries_.insert_or_assign(detail::key_of(param), std::move(grad));
  }

  bool contains(const Tensor& param) const { return entries_.contains(detail::key_of(param)); }

  const Tensor& at(const Tensor& param) const {
    auto it = entries_.find(detail::key_of(param));
    if (it == entries_.end()) throw UsageError("no gradient recorded for parameter of shape " + param.shape().to_string());
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<detail::ParamKey, Tensor> entries_;
};

/// Reverse-mode gradients of the scalar `loss` with respect to `params`.
/// Parameters the loss does not depend on get zero gradients. With
/// `create_graph` the returned gradients are tracked on the loss's tape.
inline GradMap backward(const Tensor& loss, std::span<const Tensor> params, bool create_graph = false) {
  if (!loss.tracked()) throw UsageError("backward: loss is not tracked on any tape");
  if (loss.size() != 1) throw UsageError("backward: loss must be scalar, got shape " + loss.shape().to_string());

  const auto tape = loss.tape();
  const auto last = static_cast<std::size_t>(loss.node());
  std::vector<char> is_param(last + 1, 0);
  for (const auto& p : params) {
    if (p.tracked() && p.tape() == tape && p.node() >= 0 && static_cast<std::size_t>(p.node()) <= last) {
      is_param[static_cast<std::size_t>(p.node())] = 1;
    }
  }

  // reaches[i]: node i depends on at least one requested parameter.
  std::vector<char> reaches(is_param);
  for (std::size_t i = 0; i <= last; ++i) {
    if (reaches[i]) continue;
    for (const auto& in : tape->node(static_cast<NodeId>(i)).inputs) {
      if (in.id >= 0 && reaches[static_cast<std::size_t>(in.id)]) {
        reaches[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor>> adjoint(last + 1);
  adjoint[last] = Tensor::ones(loss.shape());
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!adjoint[i] || !reaches[i]) continue;
    const Node node = tape->node(static_cast<NodeId>(i));  // copy: the tape may grow below
    if (node.kind == OpKind::leaf) continue;

    std::vector<char> want(node.inputs.size(), 0);
    std::vector<Tensor> operands;
    operands.reserve(node.inputs.size());
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const auto id = node.inputs[j].id;
      want[j] = id >= 0 && reaches[static_cast<std::size_t>(id)];
      operands.push_back(tape->operand(node.inputs[j], create_graph));
    }
    const Tensor upstream = create_graph ? *adjoint[i] : detach(*adjoint[i]);
    auto grads = detail::vjp(node, operands, upstream, want);
    for (std::size_t j = 0; j < grads.size(); ++j) {
      if (!grads[j]) continue;
      auto& slot = adjoint[static_cast<std::size_t>(node.inputs[j].id)];
      slot = slot ? add(*slot, *grads[j]) : std::move(*grads[j]);
    }
    if (!is_param[i]) adjoint[i].reset();
  }

  GradMap out;
  for (const auto& p : params) {
    const bool reachable = p.tracked() && p.tape() == tape && p.node() >= 0 &&
                           static_cast<std::size_t>(p.node()) <= last &&
                           adjoint[static_cast<std::size_t>(p.node())].has_value();
    if (reachable) {
      const auto& g = *adjoint[static_cast<std::size_t>(p.node())];
      out.insert(p, create_graph ? g : detach(g));
    } else {
      out.insert(p, Tensor::zeros(p.shape()));
    }
  }
  return out;
}

/// p <- p - lr * g for every parameter. Results are untracked constants.
inline std::vector<Tensor> sgd_step(std::span<const Tensor> params, const GradMap& grads, double lr) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    if (!grads.contains(p)) throw UsageError("sgd_step: missing gradient for parameter of shape " + p.shape().to_string());
    const auto pv = p.values();
    const auto gv = grads.at(p).values();
    Storage v(pv.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = pv[i] - lr * gv[i];
    out.emplace_back(p.shape(), std::move(v));
  }
  return out;
}

}  // namespace a2m
