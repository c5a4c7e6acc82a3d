#include "nascore/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace nascore {

namespace detail {

struct Node {
  NodeId id = 0;
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  OpKind kind = OpKind::kLeaf;
  OpAttrs attrs;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

std::atomic<NodeId> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<Scalar> value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

[[noreturn]] void shape_error(OpKind kind, const std::string& expected, const Shape& actual) {
  std::ostringstream msg;
  msg << op_name(kind) << ": expected " << expected << ", got " << shape_to_string(actual);
  throw Error(ErrorCode::kShapeMismatch, msg.str());
}

void require_defined(OpKind kind, const Tensor& t) {
  if (!t.defined()) throw Error(ErrorCode::kInvalidArgument, std::string(op_name(kind)) + ": undefined input");
}

void check_finite_values(OpKind kind, std::span<const Scalar> values, const char* what) {
  for (Scalar v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFiniteInput, std::string(op_name(kind)) + ": non-finite " + what);
    }
  }
}

// Leaves are the only place non-finite data can enter; op outputs are checked
// as they are produced.
void check_inputs(OpKind kind, std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t == nullptr || !t->defined()) continue;
    if (t->is_leaf()) check_finite_values(kind, t->data(), "input");
  }
}

Tensor record(OpKind kind, OpAttrs attrs, Shape shape, std::vector<Scalar> value,
              std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward) {
  check_finite_values(kind, value, "output (overflow)");
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t != nullptr && t->defined() && t->requires_grad()) needs_grad = true;
    }
  }
  auto node = new_node(std::move(shape), std::move(value), needs_grad);
  node->kind = kind;
  if (needs_grad) {
    node->attrs = std::move(attrs);
    for (const Tensor* t : inputs) node->inputs.push_back(t != nullptr ? t->node() : nullptr);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor record(OpKind kind, OpAttrs attrs, Shape shape, std::vector<Scalar> value,
              const std::vector<const Tensor*>& inputs, std::function<void(Node&)> backward) {
  check_finite_values(kind, value, "output (overflow)");
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) needs_grad = true;
    }
  }
  auto node = new_node(std::move(shape), std::move(value), needs_grad);
  node->kind = kind;
  if (needs_grad) {
    node->attrs = std::move(attrs);
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const NodePtr& n) { return n != nullptr && n->requires_grad; }

std::size_t normalize_axis(OpKind kind, std::ptrdiff_t axis, std::size_t rank) {
  std::ptrdiff_t r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw Error(ErrorCode::kInvalidArgument, std::string(op_name(kind)) + ": axis out of range");
  }
  return static_cast<std::size_t>(axis);
}

// b must equal a trailing sub-shape of a; returns numel(b).
std::size_t suffix_broadcast(OpKind kind, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    shape_error(kind, "trailing sub-shape of " + shape_to_string(a), b);
  }
  return shape_numel(b);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Fwd, typename Bwd>
Tensor unary(OpKind kind, const Tensor& a, Fwd fwd, Bwd bwd) {
  require_defined(kind, a);
  check_inputs(kind, {&a});
  auto x = a.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return record(kind, {}, a.shape(), std::move(out), {&a}, [bwd](Node& self) {
    auto& in = self.inputs[0];
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * bwd(in->value[i], self.value[i]);
    }
  });
}

Tensor binary_broadcast(OpKind kind, const Tensor& a, const Tensor& b) {
  require_defined(kind, a);
  require_defined(kind, b);
  check_inputs(kind, {&a, &b});
  const std::size_t nb = suffix_broadcast(kind, a.shape(), b.shape());
  auto x = a.data();
  auto y = b.data();
  std::vector<Scalar> out(x.size());
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kEmbeddingAdd:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % nb];
      break;
    case OpKind::kSubtract:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % nb];
      break;
    case OpKind::kMultiply:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % nb];
      break;
    default:
      throw Error(ErrorCode::kUnknownKind, "not a binary op");
  }
  return record(kind, {}, a.shape(), std::move(out), {&a, &b}, [kind, nb](Node& self) {
    const auto& dy = self.grad;
    auto& na = self.inputs[0];
    auto& nbp = self.inputs[1];
    if (wants_grad(na)) {
      auto& g = na->grad_buffer();
      if (kind == OpKind::kMultiply) {
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * nbp->value[i % nb];
      } else {
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
    }
    if (wants_grad(nbp)) {
      auto& g = nbp->grad_buffer();
      const Scalar sign = kind == OpKind::kSubtract ? -1.0 : 1.0;
      if (kind == OpKind::kMultiply) {
        for (std::size_t i = 0; i < dy.size(); ++i) g[i % nb] += dy[i] * na->value[i];
      } else {
        for (std::size_t i = 0; i < dy.size(); ++i) g[i % nb] += sign * dy[i];
      }
    }
  });
}

// Visits every multi-index of `out_shape` in row-major order, passing the
// matching flat offset into a source laid out with `src_strides`.
template <typename F>
void strided_walk(const Shape& out_shape, const std::vector<std::size_t>& src_strides, F&& f) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = shape_numel(out_shape);
  if (total == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t j = 0; j < total; ++j) {
    f(j, src);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
  return strides;
}

Tensor reduce(OpKind kind, const Tensor& a, std::ptrdiff_t axis, bool all) {
  require_defined(kind, a);
  check_inputs(kind, {&a});
  const bool is_mean = kind == OpKind::kMean;
  OpAttrs attrs;
  attrs.reduce_all = all;
  attrs.axis = axis;
  auto x = a.data();
  if (all) {
    Scalar total = 0.0;
    for (Scalar v : x) total += v;
    const Scalar factor = is_mean ? 1.0 / static_cast<Scalar>(x.size()) : 1.0;
    return record(kind, attrs, {}, {total * factor}, {&a}, [factor](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      const Scalar dy = self.grad[0] * factor;
      for (auto& v : g) v += dy;
    });
  }
  const std::size_t ax = normalize_axis(kind, axis, a.rank());
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const Scalar factor = is_mean ? 1.0 / static_cast<Scalar>(s.extent) : 1.0;
  std::vector<Scalar> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const Scalar* row = x.data() + (o * s.extent + k) * s.inner;
      Scalar* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  for (auto& v : out) v *= factor;
  return record(kind, attrs, out_shape, std::move(out), {&a}, [s, factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        Scalar* dst = g.data() + (o * s.extent + k) * s.inner;
        const Scalar* dy = self.grad.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += dy[i] * factor;
      }
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Op names

namespace {
struct KindName {
  OpKind kind;
  std::string_view name;
};
constexpr KindName kKindNames[] = {
    {OpKind::kLeaf, "leaf"},
    {OpKind::kAdd, "add"},
    {OpKind::kSubtract, "subtract"},
    {OpKind::kMultiply, "multiply"},
    {OpKind::kScale, "scale"},
    {OpKind::kMatmul, "matmul"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kPermute, "permute"},
    {OpKind::kConcat, "concat"},
    {OpKind::kSlice, "slice"},
    {OpKind::kRelu, "relu"},
    {OpKind::kSigmoid, "sigmoid"},
    {OpKind::kTanh, "tanh"},
    {OpKind::kSoftmax, "softmax"},
    {OpKind::kLayerNorm, "layer_norm"},
    {OpKind::kConv2d, "conv2d"},
    {OpKind::kConv1dTemporal, "conv1d_temporal"},
    {OpKind::kAvgPool, "avg_pool"},
    {OpKind::kGlobalAvgPool, "global_avg_pool"},
    {OpKind::kSum, "sum"},
    {OpKind::kMean, "mean"},
    {OpKind::kSquaredErrorSum, "squared_error_sum"},
    {OpKind::kCrossEntropy, "cross_entropy"},
    {OpKind::kEmbeddingAdd, "embedding_add"},
};
}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

OpKind op_kind_from_string(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name && kn.kind != OpKind::kLeaf) return kn.kind;
  }
  throw Error(ErrorCode::kUnknownKind, std::string(name));
}

std::span<const OpKind> all_op_kinds() {
  static const std::vector<OpKind> kinds = [] {
    std::vector<OpKind> out;
    for (const auto& kn : kKindNames) {
      if (kn.kind != OpKind::kLeaf) out.push_back(kn.kind);
    }
    return out;
  }();
  return kinds;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  std::vector<Scalar> data(shape_numel(shape), value);
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorCode::kShapeMismatch, "from_data: shape " + shape_to_string(shape) + " holds " +
                                              std::to_string(shape_numel(shape)) + " values, got " +
                                              std::to_string(data.size()));
  }
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const Scalar> Tensor::data() const { return node_->value; }

std::span<Scalar> Tensor::mutable_data() {
  if (!is_leaf()) throw Error(ErrorCode::kInvalidArgument, "mutable_data on a non-leaf tensor");
  return node_->value;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::kShapeMismatch, "item() on " + shape_to_string(shape()));
  return node_->value[0];
}

MatrixView Tensor::matrix() const {
  const auto& s = shape();
  if (s.size() == 1) return MatrixView(node_->value.data(), 1, static_cast<Eigen::Index>(s[0]));
  if (s.size() != 2) throw Error(ErrorCode::kShapeMismatch, "matrix() on " + shape_to_string(s));
  return MatrixView(node_->value.data(), static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1]));
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->kind == OpKind::kLeaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Scalar> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
NodeId Tensor::id() const { return node_->id; }
OpKind Tensor::kind() const { return node_->kind; }
const OpAttrs& Tensor::attrs() const { return node_->attrs; }

std::vector<NodeId> Tensor::input_ids() const {
  std::vector<NodeId> ids;
  for (const auto& in : node_->inputs) ids.push_back(in ? in->id : 0);
  return ids;
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(new_node(node_->shape, node_->value, requires_grad));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(OpKind::kAdd, a, b); }
Tensor subtract(const Tensor& a, const Tensor& b) { return binary_broadcast(OpKind::kSubtract, a, b); }
Tensor multiply(const Tensor& a, const Tensor& b) { return binary_broadcast(OpKind::kMultiply, a, b); }

Tensor embedding_add(const Tensor& grid, const Tensor& table) {
  require_defined(OpKind::kEmbeddingAdd, grid);
  require_defined(OpKind::kEmbeddingAdd, table);
  if (grid.rank() < 1 || Shape(grid.shape().begin() + 1, grid.shape().end()) != table.shape()) {
    shape_error(OpKind::kEmbeddingAdd, "table shaped like grid without its batch axis", table.shape());
  }
  return binary_broadcast(OpKind::kEmbeddingAdd, grid, table);
}

Tensor scale(const Tensor& a, Scalar factor) {
  require_defined(OpKind::kScale, a);
  check_inputs(OpKind::kScale, {&a});
  auto x = a.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  OpAttrs attrs;
  attrs.scalar = factor;
  return record(OpKind::kScale, attrs, a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      OpKind::kRelu, a, [](Scalar x) { return x > 0.0 ? x : 0.0; },
      [](Scalar x, Scalar) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      OpKind::kSigmoid, a,
      [](Scalar x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      OpKind::kTanh, a, [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr OpKind kind = OpKind::kMatmul;
  require_defined(kind, a);
  require_defined(kind, b);
  check_inputs(kind, {&a, &b});
  if (a.rank() < 2) shape_error(kind, "lhs of rank >= 2", a.shape());
  if (b.rank() < 2) shape_error(kind, "rhs of rank >= 2", b.shape());
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (b.shape()[b.rank() - 2] != k) {
    shape_error(kind, "rhs with " + std::to_string(k) + " rows", b.shape());
  }
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs) {
    Shape expected(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    if (expected != batch_b) shape_error(kind, "rhs batch dims " + shape_to_string(expected), b.shape());
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<Scalar> out(batch * m * n);
  const auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  if (shared_rhs) {
    RowMap(out.data(), E(batch * m), E(n)).noalias() =
        ConstRowMap(a.data().data(), E(batch * m), E(k)) * ConstRowMap(b.data().data(), E(k), E(n));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      RowMap(out.data() + i * m * n, E(m), E(n)).noalias() =
          ConstRowMap(a.data().data() + i * m * k, E(m), E(k)) *
          ConstRowMap(b.data().data() + i * k * n, E(k), E(n));
    }
  }
  return record(kind, {}, out_shape, std::move(out), {&a, &b}, [=](Node& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    const Scalar* dy = self.grad.data();
    if (shared_rhs) {
      ConstRowMap dC(dy, E(batch * m), E(n));
      if (wants_grad(na)) {
        RowMap(na->grad_buffer().data(), E(batch * m), E(k)).noalias() +=
            dC * ConstRowMap(nb->value.data(), E(k), E(n)).transpose();
      }
      if (wants_grad(nb)) {
        RowMap(nb->grad_buffer().data(), E(k), E(n)).noalias() +=
            ConstRowMap(na->value.data(), E(batch * m), E(k)).transpose() * dC;
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      ConstRowMap dC(dy + i * m * n, E(m), E(n));
      if (wants_grad(na)) {
        RowMap(na->grad_buffer().data() + i * m * k, E(m), E(k)).noalias() +=
            dC * ConstRowMap(nb->value.data() + i * k * n, E(k), E(n)).transpose();
      }
      if (wants_grad(nb)) {
        RowMap(nb->grad_buffer().data() + i * k * n, E(k), E(n)).noalias() +=
            ConstRowMap(na->value.data() + i * m * k, E(m), E(k)).transpose() * dC;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(OpKind::kReshape, a);
  check_inputs(OpKind::kReshape, {&a});
  if (shape_numel(shape) != a.numel()) {
    shape_error(OpKind::kReshape, std::to_string(a.numel()) + " elements", shape);
  }
  OpAttrs attrs;
  attrs.shape = shape;
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  return record(OpKind::kReshape, std::move(attrs), std::move(shape), std::move(out), {&a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, std::vector<std::size_t> perm) {
  constexpr OpKind kind = OpKind::kPermute;
  require_defined(kind, a);
  check_inputs(kind, {&a});
  const std::size_t rank = a.rank();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> identity(rank);
  std::iota(identity.begin(), identity.end(), 0);
  if (sorted != identity) {
    throw Error(ErrorCode::kShapeMismatch, "permute: order is not a permutation of rank " + std::to_string(rank));
  }
  const auto in_strides = row_major_strides(a.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = a.shape()[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  std::vector<Scalar> out(a.numel());
  const Scalar* x = a.data().data();
  strided_walk(out_shape, src_strides, [&](std::size_t j, std::size_t src) { out[j] = x[src]; });
  OpAttrs attrs;
  attrs.perm = perm;
  return record(kind, attrs, out_shape, std::move(out), {&a}, [out_shape, src_strides](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const Scalar* dy = self.grad.data();
    strided_walk(out_shape, src_strides, [&](std::size_t j, std::size_t src) { g[src] += dy[j]; });
  });
}

Tensor concat(std::span<const Tensor> inputs, std::ptrdiff_t axis) {
  constexpr OpKind kind = OpKind::kConcat;
  if (inputs.empty()) throw Error(ErrorCode::kInvalidArgument, "concat: no inputs");
  for (const auto& t : inputs) {
    require_defined(kind, t);
    if (t.is_leaf()) check_finite_values(kind, t.data(), "input");
  }
  const Shape& first = inputs[0].shape();
  const std::size_t ax = normalize_axis(kind, axis, first.size());
  std::vector<std::size_t> extents;
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& t : inputs) {
    Shape expect = first;
    expect[ax] = t.shape().size() == first.size() ? t.shape()[ax] : 0;
    if (t.shape() != expect) shape_error(kind, "shape matching " + shape_to_string(first) + " off-axis", t.shape());
    extents.push_back(t.shape()[ax]);
    out_shape[ax] += t.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<Scalar> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t block = extents[i] * s.inner;
    const Scalar* src = inputs[i].data().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src + o * block, block, out.data() + o * s.extent * s.inner + offset);
    }
    offset += block;
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  OpAttrs attrs;
  attrs.axis = static_cast<std::ptrdiff_t>(ax);
  return record(kind, attrs, out_shape, std::move(out), ptrs, [s, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t block = extents[i] * s.inner;
      if (wants_grad(self.inputs[i])) {
        auto& g = self.inputs[i]->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const Scalar* dy = self.grad.data() + o * s.extent * s.inner + offset;
          for (std::size_t j = 0; j < block; ++j) g[o * block + j] += dy[j];
        }
      }
      offset += block;
    }
  });
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t start, std::size_t stop) {
  constexpr OpKind kind = OpKind::kSlice;
  require_defined(kind, a);
  check_inputs(kind, {&a});
  const std::size_t ax = normalize_axis(kind, axis, a.rank());
  if (start >= stop || stop > a.shape()[ax]) {
    throw Error(ErrorCode::kShapeMismatch, "slice: range [" + std::to_string(start) + ", " +
                                               std::to_string(stop) + ") outside axis of extent " +
                                               std::to_string(a.shape()[ax]));
  }
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = stop - start;
  const std::size_t block = (stop - start) * s.inner;
  std::vector<Scalar> out(s.outer * block);
  const Scalar* x = a.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x + (o * s.extent + start) * s.inner, block, out.data() + o * block);
  }
  OpAttrs attrs;
  attrs.axis = static_cast<std::ptrdiff_t>(ax);
  attrs.start = start;
  attrs.stop = stop;
  return record(kind, attrs, out_shape, std::move(out), {&a}, [s, start, block](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      Scalar* dst = g.data() + (o * s.extent + start) * s.inner;
      const Scalar* dy = self.grad.data() + o * block;
      for (std::size_t j = 0; j < block; ++j) dst[j] += dy[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& a, std::ptrdiff_t axis) {
  constexpr OpKind kind = OpKind::kSoftmax;
  require_defined(kind, a);
  check_inputs(kind, {&a});
  const std::size_t ax = normalize_axis(kind, axis, a.rank());
  const AxisSplit s = split_at(a.shape(), ax);
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(a.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      Scalar peak = x[base];
      for (std::size_t k = 1; k < s.extent; ++k) peak = std::max(peak, x[base + k * s.inner]);
      Scalar total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const Scalar e = std::exp(x[base + k * s.inner] - peak);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  OpAttrs attrs;
  attrs.axis = static_cast<std::ptrdiff_t>(ax);
  return record(kind, attrs, a.shape(), std::move(out), {&a}, [s](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        Scalar dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += dy[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += y[j] * (dy[j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar epsilon) {
  constexpr OpKind kind = OpKind::kLayerNorm;
  require_defined(kind, x);
  check_inputs(kind, {&x, &gamma, &beta});
  if (x.rank() < 1) shape_error(kind, "input of rank >= 1", x.shape());
  if (gamma.defined() != beta.defined()) {
    throw Error(ErrorCode::kInvalidArgument, "layer_norm: gamma and beta must be given together");
  }
  const std::size_t c = x.shape().back();
  const bool affine = gamma.defined();
  if (affine) {
    if (gamma.shape() != Shape{c}) shape_error(kind, "gamma of shape [" + std::to_string(c) + "]", gamma.shape());
    if (beta.shape() != Shape{c}) shape_error(kind, "beta of shape [" + std::to_string(c) + "]", beta.shape());
  }
  const std::size_t rows = x.numel() / c;
  const Scalar* in = x.data().data();
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in + r * c;
    Scalar mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<Scalar>(c);
    Scalar var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(c);
    rstd[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < c; ++j) xhat[r * c + j] = (row[j] - mu) * rstd[r];
  }
  std::vector<Scalar> out(xhat);
  if (affine) {
    const Scalar* gm = gamma.data().data();
    const Scalar* bt = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xhat[r * c + j] * gm[j] + bt[j];
    }
  }
  OpAttrs attrs;
  attrs.epsilon = epsilon;
  auto backward = [rows, c, affine, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
    const auto& dy = self.grad;
    auto& nx = self.inputs[0];
    const Scalar* gm = affine ? self.inputs[1]->value.data() : nullptr;
    if (affine) {
      if (wants_grad(self.inputs[1])) {
        auto& gg = self.inputs[1]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gg[j] += dy[r * c + j] * xhat[r * c + j];
        }
      }
      if (wants_grad(self.inputs[2])) {
        auto& gb = self.inputs[2]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += dy[r * c + j];
        }
      }
    }
    if (!wants_grad(nx)) return;
    auto& gx = nx->grad_buffer();
    std::vector<Scalar> dxhat(c);
    const Scalar inv_c = 1.0 / static_cast<Scalar>(c);
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar mean_d = 0.0;
      Scalar mean_dx = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        dxhat[j] = dy[r * c + j] * (affine ? gm[j] : 1.0);
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xhat[r * c + j];
      }
      mean_d *= inv_c;
      mean_dx *= inv_c;
      for (std::size_t j = 0; j < c; ++j) {
        gx[r * c + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * c + j] * mean_dx);
      }
    }
  };
  if (affine) return record(kind, attrs, x.shape(), std::move(out), {&x, &gamma, &beta}, std::move(backward));
  return record(kind, attrs, x.shape(), std::move(out), {&x}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
  constexpr OpKind kind = OpKind::kConv2d;
  require_defined(kind, x);
  require_defined(kind, w);
  check_inputs(kind, {&x, &w, &bias});
  if (x.rank() != 4) shape_error(kind, "input (N, Cin, H, W)", x.shape());
  if (w.rank() != 4 || w.dim(1) != x.dim(1)) {
    shape_error(kind, "weight (Cout, " + std::to_string(x.dim(1)) + ", kh, kw)", w.shape());
  }
  if (stride == 0) throw Error(ErrorCode::kInvalidArgument, "conv2d: zero stride");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && bias.shape() != Shape{cout}) {
    shape_error(kind, "bias of shape [" + std::to_string(cout) + "]", bias.shape());
  }
  if (h + 2 * padding < kh || wd + 2 * padding < kw) shape_error(kind, "input at least as large as the kernel", x.shape());
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw;
  const std::size_t cols = ho * wo;
  const auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  // im2col for every image; kept for the weight gradient.
  auto col = std::make_shared<std::vector<Scalar>>(n * patch * cols, 0.0);
  const Scalar* in = x.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    Scalar* cb = col->data() + b * patch * cols;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          Scalar* row = cb + ((ci * kh + i) * kw + j) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              row[oy * wo + ox] = in[((b * cin + ci) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
  std::vector<Scalar> out(n * cout * cols);
  ConstRowMap wm(w.data().data(), E(cout), E(patch));
  for (std::size_t b = 0; b < n; ++b) {
    RowMap ob(out.data() + b * cout * cols, E(cout), E(cols));
    ob.noalias() = wm * ConstRowMap(col->data() + b * patch * cols, E(patch), E(cols));
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) ob.row(E(co)).array() += bias.data()[co];
    }
  }
  OpAttrs attrs;
  attrs.stride = {1, stride, stride};
  attrs.padding = {0, padding, padding};
  auto backward = [=](Node& self) {
    auto& nx = self.inputs[0];
    auto& nw = self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    ConstRowMap wmat(nw->value.data(), E(cout), E(patch));
    std::vector<Scalar> dcol(patch * cols);
    for (std::size_t b = 0; b < n; ++b) {
      ConstRowMap dy(self.grad.data() + b * cout * cols, E(cout), E(cols));
      if (wants_grad(nw)) {
        RowMap(nw->grad_buffer().data(), E(cout), E(patch)).noalias() +=
            dy * ConstRowMap(col->data() + b * patch * cols, E(patch), E(cols)).transpose();
      }
      if (has_bias && wants_grad(self.inputs[2])) {
        auto& gb = self.inputs[2]->grad_buffer();
        for (std::size_t co = 0; co < cout; ++co) gb[co] += dy.row(E(co)).sum();
      }
      if (!wants_grad(nx)) continue;
      RowMap(dcol.data(), E(patch), E(cols)).noalias() = wmat.transpose() * dy;
      auto& gx = nx->grad_buffer();
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const Scalar* row = dcol.data() + ((ci * kh + i) * kw + j) * cols;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                gx[((b * cin + ci) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
              }
            }
          }
        }
      }
    }
  };
  Shape out_shape{n, cout, ho, wo};
  if (bias.defined()) return record(kind, attrs, out_shape, std::move(out), {&x, &w, &bias}, std::move(backward));
  return record(kind, attrs, out_shape, std::move(out), {&x, &w}, std::move(backward));
}

Tensor conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                       std::size_t padding) {
  constexpr OpKind kind = OpKind::kConv1dTemporal;
  require_defined(kind, x);
  require_defined(kind, w);
  check_inputs(kind, {&x, &w, &bias});
  if (x.rank() != 4) shape_error(kind, "input (N, T, Cin, S)", x.shape());
  if (w.rank() != 3 || w.dim(1) != x.dim(2)) {
    shape_error(kind, "weight (Cout, " + std::to_string(x.dim(2)) + ", kt)", w.shape());
  }
  if (stride == 0) throw Error(ErrorCode::kInvalidArgument, "conv1d_temporal: zero stride");
  const std::size_t n = x.dim(0), t = x.dim(1), cin = x.dim(2), sp = x.dim(3);
  const std::size_t cout = w.dim(0), kt = w.dim(2);
  if (bias.defined() && bias.shape() != Shape{cout}) {
    shape_error(kind, "bias of shape [" + std::to_string(cout) + "]", bias.shape());
  }
  if (t + 2 * padding < kt) shape_error(kind, "at least kt frames", x.shape());
  const std::size_t to = (t + 2 * padding - kt) / stride + 1;
  const auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  // Per-tap weight slices W_k (Cout x Cin).
  auto taps = [cout, cin, kt](const Scalar* wdata) {
    std::vector<RowMatrix> out(kt, RowMatrix(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin)));
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t k = 0; k < kt; ++k)
          out[k](static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci)) = wdata[(co * cin + ci) * kt + k];
    return out;
  };
  const auto wk = taps(w.data().data());
  auto source_frame = [=](std::size_t o, std::size_t k) -> std::ptrdiff_t {
    const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
    return (ti < 0 || ti >= static_cast<std::ptrdiff_t>(t)) ? -1 : ti;
  };
  std::vector<Scalar> out(n * to * cout * sp, 0.0);
  const Scalar* in = x.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < to; ++o) {
      RowMap ob(out.data() + (b * to + o) * cout * sp, E(cout), E(sp));
      for (std::size_t k = 0; k < kt; ++k) {
        const std::ptrdiff_t ti = source_frame(o, k);
        if (ti < 0) continue;
        ob.noalias() += wk[k] * ConstRowMap(in + (b * t + static_cast<std::size_t>(ti)) * cin * sp, E(cin), E(sp));
      }
      if (bias.defined()) {
        for (std::size_t co = 0; co < cout; ++co) ob.row(E(co)).array() += bias.data()[co];
      }
    }
  }
  OpAttrs attrs;
  attrs.stride = {stride, 1, 1};
  attrs.padding = {padding, 0, 0};
  auto backward = [=](Node& self) {
    auto& nx = self.inputs[0];
    auto& nw = self.inputs[1];
    const bool has_bias = self.inputs.size() > 2;
    const auto wk_b = taps(nw->value.data());
    std::vector<RowMatrix> dwk(kt, RowMatrix::Zero(E(cout), E(cin)));
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < to; ++o) {
        ConstRowMap dy(self.grad.data() + (b * to + o) * cout * sp, E(cout), E(sp));
        if (has_bias && wants_grad(self.inputs[2])) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t co = 0; co < cout; ++co) gb[co] += dy.row(E(co)).sum();
        }
        for (std::size_t k = 0; k < kt; ++k) {
          const std::ptrdiff_t ti = source_frame(o, k);
          if (ti < 0) continue;
          const std::size_t off = (b * t + static_cast<std::size_t>(ti)) * cin * sp;
          if (wants_grad(nw)) dwk[k].noalias() += dy * ConstRowMap(nx->value.data() + off, E(cin), E(sp)).transpose();
          if (wants_grad(nx)) RowMap(nx->grad_buffer().data() + off, E(cin), E(sp)).noalias() += wk_b[k].transpose() * dy;
        }
      }
    }
    if (wants_grad(nw)) {
      auto& gw = nw->grad_buffer();
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t k = 0; k < kt; ++k)
            gw[(co * cin + ci) * kt + k] += dwk[k](E(co), E(ci));
    }
  };
  Shape out_shape{n, to, cout, sp};
  if (bias.defined()) return record(kind, attrs, out_shape, std::move(out), {&x, &w, &bias}, std::move(backward));
  return record(kind, attrs, out_shape, std::move(out), {&x, &w}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Pooling and reductions

Tensor avg_pool(const Tensor& x, std::array<std::size_t, 3> stride) {
  constexpr OpKind kind = OpKind::kAvgPool;
  require_defined(kind, x);
  check_inputs(kind, {&x});
  if (x.rank() != 5) shape_error(kind, "token grid (N, T, H, W, C)", x.shape());
  for (auto s : stride) {
    if (s == 0) throw Error(ErrorCode::kInvalidArgument, "avg_pool: zero stride");
  }
  const std::size_t n = x.dim(0), c = x.dim(4);
  const std::array<std::size_t, 3> in_ext{x.dim(1), x.dim(2), x.dim(3)};
  std::array<std::size_t, 3> out_ext{};
  for (int d = 0; d < 3; ++d) out_ext[d] = (in_ext[d] + stride[d] - 1) / stride[d];
  // Map each input cell to its window and record window coverage counts.
  const std::size_t in_cells = in_ext[0] * in_ext[1] * in_ext[2];
  const std::size_t out_cells = out_ext[0] * out_ext[1] * out_ext[2];
  std::vector<std::size_t> target(in_cells);
  std::vector<Scalar> coverage(out_cells, 0.0);
  for (std::size_t a = 0; a < in_ext[0]; ++a)
    for (std::size_t b = 0; b < in_ext[1]; ++b)
      for (std::size_t d = 0; d < in_ext[2]; ++d) {
        const std::size_t cell = (a * in_ext[1] + b) * in_ext[2] + d;
        const std::size_t tgt = ((a / stride[0]) * out_ext[1] + b / stride[1]) * out_ext[2] + d / stride[2];
        target[cell] = tgt;
        coverage[tgt] += 1.0;
      }
  std::vector<Scalar> out(n * out_cells * c, 0.0);
  const Scalar* in = x.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t cell = 0; cell < in_cells; ++cell) {
      const Scalar* src = in + (b * in_cells + cell) * c;
      Scalar* dst = out.data() + (b * out_cells + target[cell]) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    for (std::size_t cell = 0; cell < out_cells; ++cell) {
      Scalar* dst = out.data() + (b * out_cells + cell) * c;
      const Scalar inv = 1.0 / coverage[cell];
      for (std::size_t j = 0; j < c; ++j) dst[j] *= inv;
    }
  }
  OpAttrs attrs;
  attrs.stride = stride;
  Shape out_shape{n, out_ext[0], out_ext[1], out_ext[2], c};
  return record(kind, attrs, out_shape, std::move(out), {&x},
                [n, c, in_cells, out_cells, target = std::move(target), coverage = std::move(coverage)](Node& self) {
                  auto& g = self.inputs[0]->grad_buffer();
                  for (std::size_t b = 0; b < n; ++b) {
                    for (std::size_t cell = 0; cell < in_cells; ++cell) {
                      const std::size_t tgt = target[cell];
                      const Scalar inv = 1.0 / coverage[tgt];
                      const Scalar* dy = self.grad.data() + (b * out_cells + tgt) * c;
                      Scalar* dst = g.data() + (b * in_cells + cell) * c;
                      for (std::size_t j = 0; j < c; ++j) dst[j] += dy[j] * inv;
                    }
                  }
                });
}

Tensor global_avg_pool(const Tensor& x) {
  constexpr OpKind kind = OpKind::kGlobalAvgPool;
  require_defined(kind, x);
  check_inputs(kind, {&x});
  if (x.rank() < 3) shape_error(kind, "input (N, ..., C) of rank >= 3", x.shape());
  const std::size_t n = x.dim(0), c = x.shape().back();
  const std::size_t l = x.numel() / (n * c);
  const Scalar inv = 1.0 / static_cast<Scalar>(l);
  std::vector<Scalar> out(n * c, 0.0);
  const Scalar* in = x.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] += in[(b * l + i) * c + j];
  for (auto& v : out) v *= inv;
  return record(kind, {}, {n, c}, std::move(out), {&x}, [n, c, l, inv](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < c; ++j) g[(b * l + i) * c + j] += self.grad[b * c + j] * inv;
  });
}

Tensor sum(const Tensor& a) { return reduce(OpKind::kSum, a, -1, true); }
Tensor sum(const Tensor& a, std::ptrdiff_t axis) { return reduce(OpKind::kSum, a, axis, false); }
Tensor mean(const Tensor& a) { return reduce(OpKind::kMean, a, -1, true); }
Tensor mean(const Tensor& a, std::ptrdiff_t axis) { return reduce(OpKind::kMean, a, axis, false); }

// ---------------------------------------------------------------------------
// Losses

Tensor squared_error_sum(const Tensor& pred, const Tensor& target) {
  constexpr OpKind kind = OpKind::kSquaredErrorSum;
  require_defined(kind, pred);
  require_defined(kind, target);
  check_inputs(kind, {&pred, &target});
  if (pred.shape() != target.shape()) shape_error(kind, "target shaped " + shape_to_string(pred.shape()), target.shape());
  Scalar total = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const Scalar d = pred[i] - target[i];
    total += d * d;
  }
  return record(kind, {}, {}, {total}, {&pred, &target}, [](Node& self) {
    auto& np = self.inputs[0];
    auto& nt = self.inputs[1];
    const Scalar dy = self.grad[0];
    for (std::size_t i = 0; i < np->value.size(); ++i) {
      const Scalar d = 2.0 * (np->value[i] - nt->value[i]) * dy;
      if (wants_grad(np)) np->grad_buffer()[i] += d;
      if (wants_grad(nt)) nt->grad_buffer()[i] -= d;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> classes) {
  constexpr OpKind kind = OpKind::kCrossEntropy;
  require_defined(kind, logits);
  check_inputs(kind, {&logits});
  if (logits.rank() != 2) shape_error(kind, "logits (B, K)", logits.shape());
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (classes.size() != b) {
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy: expected " + std::to_string(b) + " targets, got " +
                                               std::to_string(classes.size()));
  }
  for (auto cls : classes) {
    if (cls >= k) throw Error(ErrorCode::kClassOutOfRange, "class " + std::to_string(cls) + " with " + std::to_string(k) + " logits");
  }
  const Scalar* x = logits.data().data();
  std::vector<Scalar> probs(b * k);
  Scalar total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const Scalar* row = x + r * k;
    const Scalar peak = *std::max_element(row, row + k);
    Scalar acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(row[j] - peak);
    const Scalar lse = peak + std::log(acc);
    total += lse - row[classes[r]];
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
  }
  OpAttrs attrs;
  attrs.classes.assign(classes.begin(), classes.end());
  std::vector<std::size_t> targets(classes.begin(), classes.end());
  return record(kind, attrs, {}, {total}, {&logits},
                [b, k, probs = std::move(probs), targets = std::move(targets)](Node& self) {
                  auto& g = self.inputs[0]->grad_buffer();
                  const Scalar dy = self.grad[0];
                  for (std::size_t r = 0; r < b; ++r) {
                    for (std::size_t j = 0; j < k; ++j) {
                      g[r * k + j] += dy * (probs[r * k + j] - (j == targets[r] ? 1.0 : 0.0));
                    }
                  }
                });
}

// ---------------------------------------------------------------------------

Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      throw Error(ErrorCode::kInvalidArgument, std::string(op_name(kind)) + ": takes " + std::to_string(lo) +
                                                   (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                                                   std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kAdd: need(2, 2); return add(inputs[0], inputs[1]);
    case OpKind::kSubtract: need(2, 2); return subtract(inputs[0], inputs[1]);
    case OpKind::kMultiply: need(2, 2); return multiply(inputs[0], inputs[1]);
    case OpKind::kScale: need(1, 1); return scale(inputs[0], attrs.scalar);
    case OpKind::kMatmul: need(2, 2); return matmul(inputs[0], inputs[1]);
    case OpKind::kReshape: need(1, 1); return reshape(inputs[0], attrs.shape);
    case OpKind::kPermute: need(1, 1); return permute(inputs[0], attrs.perm);
    case OpKind::kConcat: need(1, inputs.size()); return concat(inputs, attrs.axis);
    case OpKind::kSlice: need(1, 1); return slice(inputs[0], attrs.axis, attrs.start, attrs.stop);
    case OpKind::kRelu: need(1, 1); return relu(inputs[0]);
    case OpKind::kSigmoid: need(1, 1); return sigmoid(inputs[0]);
    case OpKind::kTanh: need(1, 1); return tanh(inputs[0]);
    case OpKind::kSoftmax: need(1, 1); return softmax(inputs[0], attrs.axis);
    case OpKind::kLayerNorm:
      if (inputs.size() == 1) return layer_norm(inputs[0], {}, {}, attrs.epsilon);
      need(3, 3);
      return layer_norm(inputs[0], inputs[1], inputs[2], attrs.epsilon);
    case OpKind::kConv2d:
      need(2, 3);
      if (attrs.stride[1] != attrs.stride[2] || attrs.padding[1] != attrs.padding[2]) {
        throw Error(ErrorCode::kInvalidArgument, "conv2d: anisotropic stride/padding unsupported");
      }
      return conv2d(inputs[0], inputs[1], inputs.size() > 2 ? inputs[2] : Tensor{}, attrs.stride[1], attrs.padding[1]);
    case OpKind::kConv1dTemporal:
      need(2, 3);
      return conv1d_temporal(inputs[0], inputs[1], inputs.size() > 2 ? inputs[2] : Tensor{}, attrs.stride[0],
                             attrs.padding[0]);
    case OpKind::kAvgPool: need(1, 1); return avg_pool(inputs[0], attrs.stride);
    case OpKind::kGlobalAvgPool: need(1, 1); return global_avg_pool(inputs[0]);
    case OpKind::kSum:
      need(1, 1);
      return attrs.reduce_all ? sum(inputs[0]) : sum(inputs[0], attrs.axis);
    case OpKind::kMean:
      need(1, 1);
      return attrs.reduce_all ? mean(inputs[0]) : mean(inputs[0], attrs.axis);
    case OpKind::kSquaredErrorSum: need(2, 2); return squared_error_sum(inputs[0], inputs[1]);
    case OpKind::kCrossEntropy: need(1, 1); return cross_entropy(inputs[0], attrs.classes);
    case OpKind::kEmbeddingAdd: need(2, 2); return embedding_add(inputs[0], inputs[1]);
    case OpKind::kLeaf: break;
  }
  throw Error(ErrorCode::kUnknownKind, "op kind " + std::to_string(static_cast<int>(kind)));
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined()) throw Error(ErrorCode::kEmptyGraph, "undefined loss");
  if (loss.numel() != 1) throw Error(ErrorCode::kNonScalarLoss, "loss of shape " + shape_to_string(loss.shape()));
  const NodePtr& root = loss.node();
  if (root->kind == OpKind::kLeaf || !root->requires_grad || !root->backward) {
    throw Error(ErrorCode::kEmptyGraph, "loss has no recorded operations");
  }
  // Collect the reachable sub-graph; ids increase in creation order, which is a
  // topological order, so a descending sweep visits consumers before producers.
  std::vector<NodePtr> order;
  std::vector<NodePtr> stack{root};
  std::vector<NodePtr> leaves;
  std::unordered_map<const Node*, bool> seen;
  seen[root.get()] = true;
  while (!stack.empty()) {
    NodePtr cur = std::move(stack.back());
    stack.pop_back();
    if (cur->kind == OpKind::kLeaf) {
      leaves.push_back(std::move(cur));
      continue;
    }
    for (const auto& in : cur->inputs) {
      if (in && in->requires_grad && !seen[in.get()]) {
        seen[in.get()] = true;
        stack.push_back(in);
      }
    }
    order.push_back(std::move(cur));
  }
  std::sort(order.begin(), order.end(), [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });
  root->grad_buffer()[0] += 1.0;
  for (const NodePtr& node : order) {
    if (node->grad.empty() || !node->backward) continue;
    node->backward(*node);
  }
  for (const NodePtr& node : order) {
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  GradientMap grads;
  for (const NodePtr& leaf : leaves) {
    grads[leaf->id] = std::span<const Scalar>(leaf->grad_buffer());
  }
  return grads;
}

}  // namespace nascore
