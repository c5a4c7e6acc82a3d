#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "nascore/core.hpp"

namespace nascore {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<const RowMatrix>;

using NodeId = std::uint64_t;

enum class OpKind {
  kLeaf,
  kAdd,
  kSubtract,
  kMultiply,
  kScale,
  kMatmul,
  kReshape,
  kPermute,
  kConcat,
  kSlice,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmax,
  kLayerNorm,
  kConv2d,
  kConv1dTemporal,
  kAvgPool,
  kGlobalAvgPool,
  kSum,
  kMean,
  kSquaredErrorSum,
  kCrossEntropy,
  kEmbeddingAdd,
};

std::string_view op_name(OpKind kind);
/// Throws ErrorCode::kUnknownKind for names outside the op set.
OpKind op_kind_from_string(std::string_view name);
/// All differentiable kinds (everything except kLeaf).
std::span<const OpKind> all_op_kinds();

inline constexpr Scalar kLayerNormEpsilon = 1e-5;

/// Op-specific attributes. Each kind reads only the fields it needs.
struct OpAttrs {
  Shape shape;                          // reshape target
  std::vector<std::size_t> perm;        // permute order
  std::ptrdiff_t axis = -1;             // softmax / concat / slice / reduce axis
  bool reduce_all = true;               // sum / mean: false reduces only `axis`
  std::size_t start = 0;                // slice [start, stop)
  std::size_t stop = 0;
  Scalar scalar = 1.0;                  // scale factor
  Scalar epsilon = kLayerNormEpsilon;   // layer-norm
  std::array<std::size_t, 3> stride{1, 1, 1};   // (t, h, w); conv2d uses h/w, conv1d uses t
  std::array<std::size_t, 3> padding{0, 0, 0};
  std::vector<std::size_t> classes;     // cross-entropy targets, one per row
};

namespace detail {
struct Node;
}

/// Dense row-major n-d array of doubles. A Tensor is a cheap handle onto a graph
/// node; copies share the node. Values are immutable once produced by an op,
/// leaves may be updated in place (optimizer steps).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;

  std::span<const Scalar> data() const;
  /// Leaf tensors only.
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar operator[](std::size_t i) const { return data()[i]; }
  /// Rank-2 view (rank-1 tensors are viewed as a row).
  MatrixView matrix() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();

  NodeId id() const;
  OpKind kind() const;
  const OpAttrs& attrs() const;
  std::vector<NodeId> input_ids() const;

  /// Value copy with no graph history.
  Tensor detach(bool requires_grad = false) const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Op set. Shapes are row-major; "suffix broadcast" means b's shape equals a
// trailing sub-shape of a's.

Tensor add(const Tensor& a, const Tensor& b);        // suffix broadcast on b
Tensor subtract(const Tensor& a, const Tensor& b);   // suffix broadcast on b
Tensor multiply(const Tensor& a, const Tensor& b);   // suffix broadcast on b
Tensor scale(const Tensor& a, Scalar factor);
/// (..., M, K) x (..., K, N) with equal batch dims, or (..., M, K) x (K, N).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::vector<std::size_t> perm);
Tensor concat(std::span<const Tensor> inputs, std::ptrdiff_t axis);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t start, std::size_t stop);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softmax(const Tensor& a, std::ptrdiff_t axis);
/// Normalizes over the last axis; gamma/beta (shape [C]) are optional.
Tensor layer_norm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {},
                  Scalar epsilon = kLayerNormEpsilon);
/// x (N, Cin, H, W), w (Cout, Cin, kh, kw), bias (Cout) optional.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// x (N, T, Cin, S), w (Cout, Cin, kt), bias (Cout) optional. Convolves along T.
Tensor conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                       std::size_t padding);
/// x (N, T, H, W, C). Non-overlapping windows of size `stride`, ceil mode:
/// boundary windows are averaged over the cells they actually cover.
Tensor avg_pool(const Tensor& x, std::array<std::size_t, 3> stride);
/// x (N, ..., C) -> (N, C), mean over all middle axes.
Tensor global_avg_pool(const Tensor& x);
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::ptrdiff_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::ptrdiff_t axis);
/// Sum over all elements of (pred - target)^2.
Tensor squared_error_sum(const Tensor& pred, const Tensor& target);
/// logits (B, K); returns sum over rows of -log softmax(row)[classes[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> classes);
/// grid (N, ...), table shaped like grid without its leading axis.
Tensor embedding_add(const Tensor& grid, const Tensor& table);

/// Generic dispatcher over the op set.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

using GradientMap = std::map<NodeId, std::span<const Scalar>>;

/// Reverse sweep from a scalar loss. Accumulates d(loss)/d(leaf) into every
/// reachable leaf that requires grad, then releases the intermediate graph.
GradientMap backward(const Tensor& loss);

}  // namespace nascore
