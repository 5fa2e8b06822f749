#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "difd/error.hpp"
#include "difd/ndgrad/param_store.hpp"
#include "difd/ndgrad/tensor.hpp"

namespace difd::ndgrad {

enum class Op : unsigned char {
  parameter,
  constant,
  matmul,
  matmul_nt,
  add,
  sub,
  mul,
  blend,
  concat_last_dim,
  concat_rows,
  row_gather,
  slice_last_dim,
  transpose,
  tanh,
  sigmoid,
  relu,
  log,
  masked_softmax_lastdim,
  log_softmax_lastdim,
  sum,
  sum_lastdim,
  mean,
  scalar_mul,
};

inline std::string_view to_string(Op op) {
  switch (op) {
    case Op::parameter: return "parameter";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::matmul_nt: return "matmul_nt";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::blend: return "blend";
    case Op::concat_last_dim: return "concat_last_dim";
    case Op::concat_rows: return "concat_rows";
    case Op::row_gather: return "row_gather";
    case Op::slice_last_dim: return "slice_last_dim";
    case Op::transpose: return "transpose";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::log: return "log";
    case Op::masked_softmax_lastdim: return "masked_softmax_lastdim";
    case Op::log_softmax_lastdim: return "log_softmax_lastdim";
    case Op::sum: return "sum";
    case Op::sum_lastdim: return "sum_lastdim";
    case Op::mean: return "mean";
    case Op::scalar_mul: return "scalar_mul";
  }
  return "unknown";
}

inline std::optional<Op> op_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Op::scalar_mul); ++i) {
    auto op = static_cast<Op>(i);
    if (to_string(op) == s) return op;
  }
  return std::nullopt;
}

/// Non-tensor operands some ops need: a 0/1 mask (softmax support, blend
/// selector), row indices (gather) or a column range (slice), a scalar.
struct OpArgs {
  std::optional<Tensor> mask;
  std::vector<std::size_t> indices;
  double scalar = 0.0;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives
/// and has not been cleared.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& tensor() const;
  const Shape& shape() const { return tensor().shape; }
  std::span<const double> data() const { return tensor().data; }
  std::span<const double> grad() const;
  std::size_t rows() const { return tensor().rows(); }
  std::size_t cols() const { return tensor().cols(); }
  std::size_t size() const { return tensor().size(); }
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Append-only record of a forward computation. Node k only reads nodes with
/// index < k, so insertion order is a topological order and the reverse sweep
/// is a plain backwards loop. A tape supports exactly one backward pass.
class Tape {
 public:
  struct Node {
    Op op = Op::constant;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    std::vector<double> grad;
    OpArgs args;
    std::int64_t param = -1;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Tensor t) {
    t.validate();
    Node n;
    n.op = Op::constant;
    n.value = std::move(t);
    return push(std::move(n));
  }

  /// Leaf bound to a stored parameter. Repeated reads of the same name in one
  /// forward pass share a single node, so gradients accumulate in one place.
  Value param(ParamStore& store, std::string_view name) {
    if (store_ != nullptr && store_ != &store) {
      fail(ErrorKind::usage, "a tape can only read parameters from one store");
    }
    store_ = &store;
    const std::size_t idx = store.index_of(name);
    if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) {
      return Value(this, it->second);
    }
    Node n;
    n.op = Op::parameter;
    n.value = store.at(idx).value;
    n.param = static_cast<std::int64_t>(idx);
    Value v = push(std::move(n));
    param_nodes_.emplace(idx, v.id());
    return v;
  }

  /// Names of the stored parameters read so far, in first-read order.
  std::vector<std::string> params_read() const {
    std::vector<std::pair<std::uint32_t, std::size_t>> order;
    for (auto [idx, node] : param_nodes_) order.emplace_back(node, idx);
    std::sort(order.begin(), order.end());
    std::vector<std::string> names;
    for (auto [node, idx] : order) names.push_back(store_->at(idx).name);
    return names;
  }

  Value apply(Op op, std::span<const Value> inputs, OpArgs args = {});

  /// Reverse sweep from a scalar loss. Gradients of parameters whose
  /// partition is in `freeze` are dropped; all others are accumulated into
  /// the store. Returns the names of the parameters that received a gradient.
  std::vector<std::string> backward(Value loss, ParamStore& store, PartitionSet freeze = PartitionSet::none());

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
    store_ = nullptr;
    consumed_ = false;
  }

  const Node& node(std::uint32_t id) const { return nodes_.at(id); }

  /// Diagnostics hook for gradient-check negative controls: the backward rule
  /// of `op` is deliberately perturbed on this tape.
  void corrupt_backward(std::optional<Op> op) { corrupt_ = op; }

 private:
  Value push(Node n) {
    if (consumed_) fail(ErrorKind::usage, "cannot record on a consumed tape");
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
      fail(ErrorKind::numeric, "tape is full");
    }
    nodes_.push_back(std::move(n));
    return Value(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Tensor& in(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].value; }

  Tensor forward(Op op, const std::vector<std::uint32_t>& inputs, const OpArgs& args) const;
  void backward_node(std::uint32_t id, const std::vector<char>& live);

  std::vector<double>& grad_of(std::uint32_t id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
  }

  std::vector<Node> nodes_;
  std::map<std::size_t, std::uint32_t> param_nodes_;
  ParamStore* store_ = nullptr;
  bool consumed_ = false;
  std::optional<Op> corrupt_;

  friend class Value;
};

inline const Tensor& Value::tensor() const { return tape_->nodes_.at(id_).value; }

inline std::span<const double> Value::grad() const { return tape_->nodes_.at(id_).grad; }

inline double Value::item() const {
  const auto& t = tensor();
  if (t.size() != 1) fail(ErrorKind::shape, "item() on non-scalar value of shape " + to_string(t.shape));
  return t.data[0];
}

namespace detail {

enum class Broadcast { none, scalar, row, column };

inline std::string shape_error(Op op, const Shape& expected, const Shape& actual) {
  return std::string(to_string(op)) + ": expected shape " + to_string(expected) + ", got " + to_string(actual);
}

/// Only a full scalar, a [C] / [1,C] row, or an [R,1] column may broadcast
/// against an [R,C] left operand.
inline Broadcast classify(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape) return Broadcast::none;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.shape.size() == 2 && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::column;
  fail(ErrorKind::shape, shape_error(op, a.shape, b.shape));
}

inline std::size_t bidx(Broadcast kind, std::size_t r, std::size_t c, std::size_t cols) {
  switch (kind) {
    case Broadcast::none: return r * cols + c;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return c;
    case Broadcast::column: return r;
  }
  return 0;
}

inline double sigmoid(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace detail

inline Tensor Tape::forward(Op op, const std::vector<std::uint32_t>& inputs, const OpArgs& args) const {
  auto arg = [&](std::size_t k) -> const Tensor& { return nodes_.at(inputs.at(k)).value; };
  auto expect_arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      fail(ErrorKind::shape, std::string(to_string(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                                 std::to_string(inputs.size()));
    }
  };

  switch (op) {
    case Op::parameter:
    case Op::constant:
      fail(ErrorKind::usage, "leaves are created with Tape::param / Tape::constant");

    case Op::matmul: {
      expect_arity(2);
      const auto& a = arg(0);
      const auto& b = arg(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (b.rows() != k) fail(ErrorKind::shape, detail::shape_error(op, Shape{k, n}, b.shape));
      Tensor out(Shape{m, n});
      for (std::size_t i = 0; i < m; ++i) {
        double* o = &out.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a.data[i * k + p];
          const double* brow = &b.data[p * n];
          for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
        }
      }
      return out;
    }

    case Op::matmul_nt: {
      expect_arity(2);
      const auto& a = arg(0);
      const auto& b = arg(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
      if (b.cols() != k) fail(ErrorKind::shape, detail::shape_error(op, Shape{n, k}, b.shape));
      Tensor out(Shape{m, n});
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        for (std::size_t j = 0; j < n; ++j) {
          const double* brow = &b.data[j * k];
          double s = 0.0;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
          out.data[i * n + j] = s;
        }
      }
      return out;
    }

    case Op::add:
    case Op::sub:
    case Op::mul: {
      expect_arity(2);
      const auto& a = arg(0);
      const auto& b = arg(1);
      const auto kind = detail::classify(op, a, b);
      Tensor out(a.shape);
      const std::size_t rows = a.rows(), cols = a.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double x = a.data[r * cols + c];
          const double y = b.data[detail::bidx(kind, r, c, cols)];
          out.data[r * cols + c] = op == Op::add ? x + y : op == Op::sub ? x - y : x * y;
        }
      }
      return out;
    }

    case Op::blend: {
      expect_arity(2);
      const auto& fresh = arg(0);
      const auto& old = arg(1);
      if (fresh.shape != old.shape) fail(ErrorKind::shape, detail::shape_error(op, fresh.shape, old.shape));
      if (!args.mask || args.mask->size() != fresh.rows()) {
        fail(ErrorKind::shape, "blend: mask must hold one entry per row");
      }
      Tensor out(fresh.shape);
      const std::size_t cols = fresh.cols();
      for (std::size_t r = 0; r < fresh.rows(); ++r) {
        const bool take = args.mask->data[r] != 0.0;
        const auto& src = take ? fresh : old;
        std::copy_n(&src.data[r * cols], cols, &out.data[r * cols]);
      }
      return out;
    }

    case Op::concat_last_dim: {
      if (inputs.empty()) fail(ErrorKind::shape, "concat_last_dim: no inputs");
      const std::size_t rows = arg(0).rows();
      std::size_t cols = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (arg(k).rows() != rows) fail(ErrorKind::shape, detail::shape_error(op, Shape{rows, arg(k).cols()}, arg(k).shape));
        cols += arg(k).cols();
      }
      Tensor out(Shape{rows, cols});
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const auto& t = arg(k);
          std::copy_n(&t.data[r * t.cols()], t.cols(), &out.data[r * cols + off]);
          off += t.cols();
        }
      }
      return out;
    }

    case Op::concat_rows: {
      if (inputs.empty()) fail(ErrorKind::shape, "concat_rows: no inputs");
      const std::size_t cols = arg(0).cols();
      std::size_t rows = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (arg(k).cols() != cols) fail(ErrorKind::shape, detail::shape_error(op, Shape{arg(k).rows(), cols}, arg(k).shape));
        rows += arg(k).rows();
      }
      Tensor out(Shape{rows, cols});
      std::size_t off = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::copy(arg(k).data.begin(), arg(k).data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += arg(k).size();
      }
      return out;
    }

    case Op::row_gather: {
      expect_arity(1);
      const auto& src = arg(0);
      if (args.indices.empty()) fail(ErrorKind::shape, "row_gather: empty index list");
      const std::size_t cols = src.cols();
      Tensor out(Shape{args.indices.size(), cols});
      for (std::size_t r = 0; r < args.indices.size(); ++r) {
        const std::size_t from = args.indices[r];
        if (from >= src.rows()) {
          fail(ErrorKind::shape, "row_gather: row " + std::to_string(from) + " out of range for shape " + to_string(src.shape));
        }
        std::copy_n(&src.data[from * cols], cols, &out.data[r * cols]);
      }
      return out;
    }

    case Op::slice_last_dim: {
      expect_arity(1);
      const auto& src = arg(0);
      if (args.indices.size() != 2 || args.indices[0] >= args.indices[1] || args.indices[1] > src.cols()) {
        fail(ErrorKind::shape, "slice_last_dim: invalid column range for shape " + to_string(src.shape));
      }
      const std::size_t begin = args.indices[0], width = args.indices[1] - args.indices[0];
      Tensor out(Shape{src.rows(), width});
      for (std::size_t r = 0; r < src.rows(); ++r) {
        std::copy_n(&src.data[r * src.cols() + begin], width, &out.data[r * width]);
      }
      return out;
    }

    case Op::transpose: {
      expect_arity(1);
      const auto& src = arg(0);
      Tensor out(Shape{src.cols(), src.rows()});
      for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) out.data[c * src.rows() + r] = src.data[r * src.cols() + c];
      }
      return out;
    }

    case Op::tanh:
    case Op::sigmoid:
    case Op::relu:
    case Op::log: {
      expect_arity(1);
      Tensor out = arg(0);
      for (auto& x : out.data) {
        switch (op) {
          case Op::tanh: x = std::tanh(x); break;
          case Op::sigmoid: x = detail::sigmoid(x); break;
          case Op::relu: x = x > 0.0 ? x : 0.0; break;
          default: x = std::log(x); break;
        }
      }
      return out;
    }

    case Op::masked_softmax_lastdim: {
      expect_arity(1);
      const auto& x = arg(0);
      if (!args.mask || args.mask->shape != x.shape) {
        fail(ErrorKind::shape, detail::shape_error(op, x.shape, args.mask ? args.mask->shape : Shape{}));
      }
      const auto& mask = *args.mask;
      Tensor out(x.shape);
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t c = 0; c < cols; ++c) {
          if (mask.data[r * cols + c] != 0.0) {
            mx = std::max(mx, x.data[r * cols + c]);
            any = true;
          }
        }
        if (!any) fail(ErrorKind::numeric, "empty softmax support");
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (mask.data[r * cols + c] != 0.0) {
            const double e = std::exp(x.data[r * cols + c] - mx);
            out.data[r * cols + c] = e;
            z += e;
          }
        }
        for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] /= z;
      }
      return out;
    }

    case Op::log_softmax_lastdim: {
      expect_arity(1);
      const auto& x = arg(0);
      Tensor out(x.shape);
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* row = &x.data[r * cols];
        const double mx = *std::max_element(row, row + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = row[c] - lz;
      }
      return out;
    }

    case Op::sum:
    case Op::mean: {
      expect_arity(1);
      double s = 0.0;
      for (double x : arg(0).data) s += x;
      if (op == Op::mean) s /= static_cast<double>(arg(0).size());
      return Tensor::scalar(s);
    }

    case Op::sum_lastdim: {
      expect_arity(1);
      const auto& x = arg(0);
      Tensor out(Shape{x.rows(), 1});
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += x.data[r * x.cols() + c];
        out.data[r] = s;
      }
      return out;
    }

    case Op::scalar_mul: {
      expect_arity(1);
      Tensor out = arg(0);
      for (auto& x : out.data) x *= args.scalar;
      return out;
    }
  }
  fail(ErrorKind::usage, "unhandled op");
}

inline Value Tape::apply(Op op, std::span<const Value> inputs, OpArgs args) {
  std::vector<std::uint32_t> ids;
  ids.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.tape() != this) fail(ErrorKind::usage, std::string(to_string(op)) + ": input recorded on another tape");
    ids.push_back(v.id());
  }
  if (consumed_) fail(ErrorKind::usage, "cannot record on a consumed tape");
  Node n;
  n.op = op;
  n.value = forward(op, ids, args);
  n.inputs = std::move(ids);
  n.args = std::move(args);
  return push(std::move(n));
}

inline void Tape::backward_node(std::uint32_t id, const std::vector<char>& live) {
  const Node& n = nodes_[id];
  std::span<const double> g = n.grad;
  std::vector<double> perturbed;
  if (corrupt_ && *corrupt_ == n.op) {
    perturbed = n.grad;
    for (auto& x : perturbed) x *= 1.05;
    g = perturbed;
  }
  auto needs = [&](std::size_t k) { return live[n.inputs[k]] != 0; };
  const Tensor& out = n.value;

  switch (n.op) {
    case Op::parameter:
    case Op::constant:
      return;

    case Op::matmul: {
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
      if (needs(0)) {
        auto& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b.data[p * cols + j];
            ga[i * k + p] += s;
          }
        }
      }
      if (needs(1)) {
        auto& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a.data[i * k + p];
            for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += av * g[i * cols + j];
          }
        }
      }
      return;
    }

    case Op::matmul_nt: {
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      const std::size_t m = a.rows(), k = a.cols(), cols = b.rows();
      if (needs(0)) {
        auto& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double gv = g[i * cols + j];
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * b.data[j * k + p];
          }
        }
      }
      if (needs(1)) {
        auto& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double gv = g[i * cols + j];
            for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * a.data[i * k + p];
          }
        }
      }
      return;
    }

    case Op::add:
    case Op::sub:
    case Op::mul: {
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      const auto kind = detail::classify(n.op, a, b);
      const std::size_t rows = a.rows(), cols = a.cols();
      if (needs(0)) {
        auto& ga = grad_of(n.inputs[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            ga[i] += n.op == Op::mul ? g[i] * b.data[detail::bidx(kind, r, c, cols)] : g[i];
          }
        }
      }
      if (needs(1)) {
        auto& gb = grad_of(n.inputs[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double d = n.op == Op::add ? g[i] : n.op == Op::sub ? -g[i] : g[i] * a.data[i];
            gb[detail::bidx(kind, r, c, cols)] += d;
          }
        }
      }
      return;
    }

    case Op::blend: {
      const std::size_t cols = out.cols();
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        auto& gi = grad_of(n.inputs[k]);
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const bool take = n.args.mask->data[r] != 0.0;
          if (take != (k == 0)) continue;
          for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += g[r * cols + c];
        }
      }
      return;
    }

    case Op::concat_last_dim: {
      const std::size_t rows = out.rows(), cols = out.cols();
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = in(n, k).cols();
        if (needs(k)) {
          auto& gi = grad_of(n.inputs[k]);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += g[r * cols + off + c];
          }
        }
        off += w;
      }
      return;
    }

    case Op::concat_rows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in(n, k).size();
        if (needs(k)) {
          auto& gi = grad_of(n.inputs[k]);
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
        }
        off += len;
      }
      return;
    }

    case Op::row_gather: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const std::size_t cols = out.cols();
      for (std::size_t r = 0; r < n.args.indices.size(); ++r) {
        const std::size_t to = n.args.indices[r];
        for (std::size_t c = 0; c < cols; ++c) gi[to * cols + c] += g[r * cols + c];
      }
      return;
    }

    case Op::slice_last_dim: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const auto& src = in(n, 0);
      const std::size_t begin = n.args.indices[0], width = out.cols();
      for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < width; ++c) gi[r * src.cols() + begin + c] += g[r * width + c];
      }
      return;
    }

    case Op::transpose: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const auto& src = in(n, 0);
      for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) gi[r * src.cols() + c] += g[c * src.rows() + r];
      }
      return;
    }

    case Op::tanh:
    case Op::sigmoid:
    case Op::relu:
    case Op::log: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const auto& x = in(n, 0);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double y = out.data[i];
        double d = 0.0;
        switch (n.op) {
          case Op::tanh: d = 1.0 - y * y; break;
          case Op::sigmoid: d = y * (1.0 - y); break;
          case Op::relu: d = x.data[i] > 0.0 ? 1.0 : 0.0; break;
          default: d = 1.0 / x.data[i]; break;
        }
        gi[i] += g[i] * d;
      }
      return;
    }

    case Op::masked_softmax_lastdim: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const std::size_t cols = out.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += out.data[r * cols + c] * g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          gi[i] += out.data[i] * (g[i] - dot);
        }
      }
      return;
    }

    case Op::log_softmax_lastdim: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const std::size_t cols = out.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          gi[i] += g[i] - std::exp(out.data[i]) * gs;
        }
      }
      return;
    }

    case Op::sum:
    case Op::mean: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const double d = n.op == Op::mean ? g[0] / static_cast<double>(gi.size()) : g[0];
      for (auto& x : gi) x += d;
      return;
    }

    case Op::sum_lastdim: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      const std::size_t cols = in(n, 0).cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += g[r];
      }
      return;
    }

    case Op::scalar_mul: {
      if (!needs(0)) return;
      auto& gi = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i] * n.args.scalar;
      return;
    }
  }
}

inline std::vector<std::string> Tape::backward(Value loss, ParamStore& store, PartitionSet freeze) {
  if (consumed_) fail(ErrorKind::usage, "backward on a consumed tape");
  if (&loss.tape() != this) fail(ErrorKind::usage, "backward: loss was recorded on another tape");
  if (loss.size() != 1) fail(ErrorKind::shape, "backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (store_ != nullptr && store_ != &store) fail(ErrorKind::usage, "backward: store differs from the one the tape read");
  if (!std::isfinite(loss.item())) fail(ErrorKind::numeric, "backward: non-finite loss");

  // A node is live when some trainable, non-frozen parameter lies beneath it.
  const std::uint32_t top = loss.id();
  std::vector<char> live(top + 1, 0);
  for (std::uint32_t i = 0; i <= top; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::parameter) {
      live[i] = !freeze.contains(store.at(static_cast<std::size_t>(n.param)).partition);
    } else {
      for (auto j : n.inputs) {
        if (live[j]) {
          live[i] = 1;
          break;
        }
      }
    }
  }

  std::vector<std::string> touched;
  consumed_ = true;
  if (!live[top]) return touched;

  nodes_[top].grad.assign(1, 1.0);
  for (std::int64_t i = top; i >= 0; --i) {
    const auto id = static_cast<std::uint32_t>(i);
    Node& n = nodes_[id];
    if (!live[id] || n.grad.empty()) continue;
    if (n.op == Op::parameter) {
      Param& p = store.at(static_cast<std::size_t>(n.param));
      if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
      const std::size_t cols = p.value.cols();
      for (auto r : p.frozen_rows) std::fill_n(p.grad.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, 0.0);
      touched.push_back(p.name);
      continue;
    }
    backward_node(id, live);
  }
  std::sort(touched.begin(), touched.end());
  return touched;
}

// Free-function façade. Each records one node on the inputs' tape.

inline Value matmul(Value a, Value b) { const Value in[] = {a, b}; return a.tape().apply(Op::matmul, in); }
/// a * b^T; lets weights stay in [out, in] layout.
inline Value matmul_nt(Value a, Value b) { const Value in[] = {a, b}; return a.tape().apply(Op::matmul_nt, in); }
inline Value add(Value a, Value b) { const Value in[] = {a, b}; return a.tape().apply(Op::add, in); }
inline Value sub(Value a, Value b) { const Value in[] = {a, b}; return a.tape().apply(Op::sub, in); }
inline Value mul(Value a, Value b) { const Value in[] = {a, b}; return a.tape().apply(Op::mul, in); }

/// Row-wise select: rows where mask != 0 come from `fresh`, others from `old`.
inline Value blend(Value fresh, Value old, Tensor row_mask) {
  const Value in[] = {fresh, old};
  OpArgs args;
  args.mask = std::move(row_mask);
  return fresh.tape().apply(Op::blend, in, std::move(args));
}

inline Value concat_last_dim(std::span<const Value> parts) { return parts.front().tape().apply(Op::concat_last_dim, parts); }
inline Value concat_rows(std::span<const Value> parts) { return parts.front().tape().apply(Op::concat_rows, parts); }

inline Value row_gather(Value src, std::vector<std::size_t> rows) {
  const Value in[] = {src};
  OpArgs args;
  args.indices = std::move(rows);
  return src.tape().apply(Op::row_gather, in, std::move(args));
}

inline Value slice_last_dim(Value src, std::size_t begin, std::size_t end) {
  const Value in[] = {src};
  OpArgs args;
  args.indices = {begin, end};
  return src.tape().apply(Op::slice_last_dim, in, std::move(args));
}

inline Value transpose(Value a) { const Value in[] = {a}; return a.tape().apply(Op::transpose, in); }
inline Value tanh(Value a) { const Value in[] = {a}; return a.tape().apply(Op::tanh, in); }
inline Value sigmoid(Value a) { const Value in[] = {a}; return a.tape().apply(Op::sigmoid, in); }
inline Value relu(Value a) { const Value in[] = {a}; return a.tape().apply(Op::relu, in); }
inline Value log(Value a) { const Value in[] = {a}; return a.tape().apply(Op::log, in); }

inline Value masked_softmax(Value a, Tensor mask) {
  const Value in[] = {a};
  OpArgs args;
  args.mask = std::move(mask);
  return a.tape().apply(Op::masked_softmax_lastdim, in, std::move(args));
}

inline Value softmax(Value a) { return masked_softmax(a, Tensor(a.shape(), 1.0)); }

inline Value log_softmax(Value a) { const Value in[] = {a}; return a.tape().apply(Op::log_softmax_lastdim, in); }
inline Value sum(Value a) { const Value in[] = {a}; return a.tape().apply(Op::sum, in); }
inline Value sum_lastdim(Value a) { const Value in[] = {a}; return a.tape().apply(Op::sum_lastdim, in); }
inline Value mean(Value a) { const Value in[] = {a}; return a.tape().apply(Op::mean, in); }

inline Value scalar_mul(Value a, double s) {
  const Value in[] = {a};
  OpArgs args;
  args.scalar = s;
  return a.tape().apply(Op::scalar_mul, in, std::move(args));
}

/// Convenience: backward on the loss's own tape.
inline std::vector<std::string> backward(Value loss, ParamStore& store, PartitionSet freeze = PartitionSet::none()) {
  return loss.tape().backward(loss, store, freeze);
}

}  // namespace difd::ndgrad
