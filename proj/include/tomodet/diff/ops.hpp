#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tomodet/diff/tensor.hpp"

namespace tomodet::diff {

enum class Padding { zero, valid };

/// Cross-correlation over 2D ([C,H,W] input, [Co,Ci,KH,KW] kernel) or
/// 3D ([C,D,H,W] input, [Co,Ci,KD,KH,KW] kernel) spatial grids, stride 1.
/// Zero padding keeps the spatial extents and needs odd kernel extents.
Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);

Tensor relu(const Tensor& x);
/// Per-channel leaky slope: axis 0 of `x` is the channel axis, alpha has shape [C].
Tensor prelu(const Tensor& x, const Tensor& alpha);
Tensor sigmoid(const Tensor& x);

struct PoolWindow {
    std::size_t x = 2, y = 2, z = 2;
};

/// Max over disjoint windows of a [C,D,H,W] tensor. The gradient goes to the
/// first maximal element of each window.
Tensor maxpool3d(const Tensor& x, PoolWindow window);

inline constexpr double kCrossEntropyClamp = 1e-7;

/// Mean binary cross entropy of probabilities `scores` against 0/1 labels.
/// Scores are clamped to [kCrossEntropyClamp, 1 - kCrossEntropyClamp].
Tensor cross_entropy(const Tensor& scores, std::span<const int> labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);
/// <x, c> for a constant c of the same size; used to seed vector-Jacobian products.
Tensor dot_constant(const Tensor& x, std::span<const double> c);

/// Concatenates along axis 0; all trailing extents must agree.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Channels [begin, begin + count) along axis 0.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

/// a * x + b clamped to [lo, hi]; zero gradient where the clamp is active.
Tensor affine_clamp(const Tensor& x, double a, double b, double lo, double hi);

/// Dense linear map y = M x given as a forward routine and its exact adjoint.
/// The adjoint must ADD M^T g into its output buffer.
using LinearFn = std::function<void(std::span<const double> in, std::span<double> out)>;
Tensor linear_map(const Tensor& x, Shape out_shape, const LinearFn& forward, LinearFn adjoint_accumulate);

} // namespace tomodet::diff
