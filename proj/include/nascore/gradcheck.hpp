#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nascore/tensor.hpp"

namespace nascore {

inline constexpr Scalar kFiniteDifferenceStep = 1e-5;

struct CheckReport {
  Scalar max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// |a - b| / max(|a|, |b|, 1e-8)
Scalar relative_error(Scalar a, Scalar b);

/// One partial derivative: element `index` of leaf number `leaf`.
struct Coordinate {
  std::size_t leaf = 0;
  std::size_t index = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
/// `loss_fn` must rebuild its graph from `leaves` on every call; the leaves are
/// perturbed in place and restored. An empty `coords` checks every element.
CheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> leaves,
                                    std::span<const Coordinate> coords = {},
                                    Scalar step = kFiniteDifferenceStep);

/// Shapes used by the sweep over the full op set.
std::vector<Shape> default_check_shapes(OpKind kind);
OpAttrs default_check_attrs(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed);

/// Forward + backward of one op on seeded random inputs, projected to a scalar
/// by a fixed random weighting, checked against central differences. ReLU
/// inputs are kept at least 1e-2 away from the kink.
CheckReport grad_check(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed);
CheckReport grad_check(OpKind kind, const std::vector<Shape>& shapes, std::uint64_t seed, const OpAttrs& attrs);

}  // namespace nascore
