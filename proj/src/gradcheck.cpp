#include "nascore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace nascore {

Scalar relative_error(Scalar a, Scalar b) {
  const Scalar denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

CheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> leaves,
                                    std::span<const Coordinate> coords, Scalar step) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss_fn());

  std::vector<Coordinate> all;
  if (coords.empty()) {
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      for (std::size_t i = 0; i < leaves[l].numel(); ++i) all.push_back({l, i});
    }
    coords = all;
  }
  CheckReport report;
  NoGradGuard no_grad;
  for (const auto& c : coords) {
    Tensor& leaf = leaves[c.leaf];
    const Scalar analytic = leaf.has_grad() ? leaf.grad()[c.index] : 0.0;
    Scalar& slot = leaf.mutable_data()[c.index];
    const Scalar original = slot;
    slot = original + step;
    const Scalar up = loss_fn().item();
    slot = original - step;
    const Scalar down = loss_fn().item();
    slot = original;
    const Scalar numeric = (up - down) / (2.0 * step);
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric));
    ++report.checked;
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return report;
}

std::vector<Shape> default_check_shapes(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply: return {{3, 4}, {4}};
    case OpKind::kScale:
    case OpKind::kReshape:
    case OpKind::kPermute: return {{2, 3, 4}};
    case OpKind::kMatmul: return {{2, 3, 4}, {2, 4, 5}};
    case OpKind::kConcat: return {{2, 3}, {1, 3}, {3, 3}};
    case OpKind::kSlice: return {{4, 3}};
    case OpKind::kRelu:
    case OpKind::kSigmoid:
    case OpKind::kTanh: return {{8}};
    case OpKind::kSoftmax: return {{3, 5}};
    case OpKind::kLayerNorm: return {{3, 4}, {4}, {4}};
    case OpKind::kConv2d: return {{2, 2, 5, 4}, {3, 2, 3, 3}, {3}};
    case OpKind::kConv1dTemporal: return {{2, 5, 2, 3}, {3, 2, 3}, {3}};
    case OpKind::kAvgPool: return {{2, 3, 5, 3, 2}};
    case OpKind::kGlobalAvgPool: return {{2, 3, 2, 4}};
    case OpKind::kSum:
    case OpKind::kMean: return {{3, 4}};
    case OpKind::kSquaredErrorSum: return {{3, 2}, {3, 2}};
    case OpKind::kCrossEntropy: return {{4, 8}};
    case OpKind::kEmbeddingAdd: return {{2, 3, 4}, {3, 4}};
    case OpKind::kLeaf: break;
  }
  throw Error(ErrorCode::kUnknownKind, std::string(op_name(kind)));
}

OpAttrs default_check_attrs(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed) {
  OpAttrs attrs;
  switch (kind) {
    case OpKind::kScale: attrs.scalar = 1.7; break;
    case OpKind::kReshape: attrs.shape = {shape_numel(shapes.at(0))}; break;
    case OpKind::kPermute:
      attrs.perm.resize(shapes.at(0).size());
      for (std::size_t i = 0; i < attrs.perm.size(); ++i) attrs.perm[i] = attrs.perm.size() - 1 - i;
      break;
    case OpKind::kConcat: attrs.axis = 0; break;
    case OpKind::kSlice:
      attrs.axis = 0;
      attrs.start = shapes.at(0).at(0) > 1 ? 1 : 0;
      attrs.stop = shapes.at(0).at(0);
      break;
    case OpKind::kSoftmax: attrs.axis = -1; break;
    case OpKind::kConv2d:
      attrs.stride = {1, 2, 2};
      attrs.padding = {0, 1, 1};
      break;
    case OpKind::kConv1dTemporal:
      attrs.stride = {2, 1, 1};
      attrs.padding = {1, 0, 0};
      break;
    case OpKind::kAvgPool: attrs.stride = {2, 2, 2}; break;
    case OpKind::kSum:
    case OpKind::kMean:
      attrs.reduce_all = (seed % 2) == 0;
      attrs.axis = 1;
      break;
    case OpKind::kCrossEntropy: {
      Rng rng(derive_seed(seed, "classes"));
      const auto& s = shapes.at(0);
      for (std::size_t r = 0; r < s.at(0); ++r) attrs.classes.push_back(static_cast<std::size_t>(rng.below(s.at(1))));
      break;
    }
    default: break;
  }
  return attrs;
}

CheckReport grad_check(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed) {
  return grad_check(kind, shapes, seed, default_check_attrs(kind, shapes, seed));
}

CheckReport grad_check(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed, const OpAttrs& attrs) {
  Rng rng(derive_seed(seed, op_name(kind)));
  std::vector<Tensor> leaves;
  for (const auto& shape : shapes) {
    std::vector<Scalar> values(shape_numel(shape));
    for (auto& v : values) {
      v = rng.uniform(-1.0, 1.0);
      if (kind == OpKind::kRelu) v = (v < 0 ? -1.0 : 1.0) * (0.01 + 0.99 * std::abs(v));
    }
    leaves.push_back(Tensor::from_data(shape, std::move(values), true));
  }
  Tensor projection;
  auto loss_fn = [&]() {
    Tensor out = apply(kind, leaves, attrs);
    if (!projection.defined()) {
      std::vector<Scalar> w(out.numel());
      for (auto& v : w) v = rng.uniform(-1.0, 1.0);
      projection = Tensor::from_data(out.shape(), std::move(w));
    }
    return sum(multiply(out, projection));
  };
  return finite_difference_check(loss_fn, leaves);
}

}  // namespace nascore
