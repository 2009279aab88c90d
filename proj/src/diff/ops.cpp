#include "tomodet/diff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "tomodet/util/error.hpp"

namespace tomodet::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

struct ConvGeometry {
    std::size_t cin, d, h, w;
    std::size_t cout, kd, kh, kw;
    std::size_t pd, ph, pw;
    std::size_t od, oh, ow;
    std::size_t rows() const { return cin * kd * kh * kw; }
    std::size_t cols() const { return od * oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding)
{
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    const bool two_d = is.size() == 3 && ks.size() == 4;
    const bool three_d = is.size() == 4 && ks.size() == 5;
    if (!two_d && !three_d)
        throw std::invalid_argument("conv: input " + to_string(is) + " and kernel " + to_string(ks) +
                                    " are not a 2D or 3D pair");
    ConvGeometry g{};
    g.cin = is[0];
    g.d = two_d ? 1 : is[1];
    g.h = is[is.size() - 2];
    g.w = is[is.size() - 1];
    g.cout = ks[0];
    g.kd = two_d ? 1 : ks[2];
    g.kh = ks[ks.size() - 2];
    g.kw = ks[ks.size() - 1];
    if (ks[1] != g.cin)
        throw std::invalid_argument("conv: input " + to_string(is) + " has " + std::to_string(g.cin) +
                                    " channels but kernel " + to_string(ks) + " expects " +
                                    std::to_string(ks[1]));
    if (bias.shape() != Shape{g.cout})
        throw std::invalid_argument("conv: bias " + to_string(bias.shape()) + " does not match kernel " +
                                    to_string(ks));
    if (padding == Padding::zero) {
        if (g.kd % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0)
            throw std::invalid_argument("conv: zero padding needs odd kernel extents, kernel " + to_string(ks));
        g.pd = g.kd / 2;
        g.ph = g.kh / 2;
        g.pw = g.kw / 2;
    } else {
        if (g.d < g.kd || g.h < g.kh || g.w < g.kw)
            throw std::invalid_argument("conv: valid padding with kernel " + to_string(ks) +
                                        " larger than input " + to_string(is));
        g.pd = g.ph = g.pw = 0;
    }
    g.od = g.d + 2 * g.pd - g.kd + 1;
    g.oh = g.h + 2 * g.ph - g.kh + 1;
    g.ow = g.w + 2 * g.pw - g.kw + 1;
    return g;
}

// Visits every (column-row, input-row) run shared by im2col and col2im.
template <typename Fn>
void for_each_col_run(const ConvGeometry& g, Fn&& fn)
{
    const std::size_t P = g.cols();
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t kz = 0; kz < g.kd; ++kz)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx, ++r) {
                    const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(g.pw) - std::ptrdiff_t(kx));
                    const std::ptrdiff_t x_hi =
                        std::min<std::ptrdiff_t>(g.ow, std::ptrdiff_t(g.w + g.pw) - std::ptrdiff_t(kx));
                    if (x_lo >= x_hi) continue;
                    for (std::size_t oz = 0; oz < g.od; ++oz) {
                        const std::ptrdiff_t iz = std::ptrdiff_t(oz + kz) - std::ptrdiff_t(g.pd);
                        if (iz < 0 || iz >= std::ptrdiff_t(g.d)) continue;
                        for (std::size_t oy = 0; oy < g.oh; ++oy) {
                            const std::ptrdiff_t iy = std::ptrdiff_t(oy + ky) - std::ptrdiff_t(g.ph);
                            if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                            const std::size_t col = r * P + (oz * g.oh + oy) * g.ow + x_lo;
                            const std::size_t in = ((ci * g.d + iz) * g.h + iy) * g.w + (x_lo + kx - g.pw);
                            fn(col, in, static_cast<std::size_t>(x_hi - x_lo));
                        }
                    }
                }
}

RowMat im2col(const ConvGeometry& g, std::span<const double> input)
{
    RowMat col = RowMat::Zero(Eigen::Index(g.rows()), Eigen::Index(g.cols()));
    for_each_col_run(g, [&](std::size_t c, std::size_t i, std::size_t n) {
        std::copy_n(input.data() + i, n, col.data() + c);
    });
    return col;
}

// Eigen picks scalar or packet code paths from operand addresses, which
// changes rounding. Products therefore only ever see Eigen-owned storage,
// whose alignment is fixed, so results do not depend on where std::vector
// buffers happen to land.
RowMat owned(std::span<const double> v, std::size_t rows, std::size_t cols)
{
    return ConstMap(v.data(), Eigen::Index(rows), Eigen::Index(cols));
}

void col2im_accumulate(const ConvGeometry& g, std::span<const double> col, std::span<double> input_grad)
{
    for_each_col_run(g, [&](std::size_t c, std::size_t i, std::size_t n) {
        const double* src = col.data() + c;
        double* dst = input_grad.data() + i;
        for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
    });
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
}

} // namespace

Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding)
{
    const ConvGeometry g = conv_geometry(input, kernel, bias, padding);
    const std::size_t R = g.rows();
    const std::size_t P = g.cols();

    auto col = std::make_shared<RowMat>(im2col(g, input.data()));
    std::vector<double> out(g.cout * P);
    {
        const RowMat O = owned(kernel.data(), g.cout, R) * *col;
        const auto b = bias.data();
        for (std::size_t co = 0; co < g.cout; ++co) {
            const double* src = O.data() + co * P;
            double* dst = out.data() + co * P;
            for (std::size_t j = 0; j < P; ++j) dst[j] = src[j] + b[co];
        }
    }

    Shape out_shape = input.rank() == 3 ? Shape{g.cout, g.oh, g.ow} : Shape{g.cout, g.od, g.oh, g.ow};
    if (!kernel.requires_grad()) col.reset();
    return Tensor::from_op(
        std::move(out_shape), std::move(out), {input, kernel, bias}, [g, R, P, col](Node& self) {
            Node& in = *self.inputs[0];
            Node& ker = *self.inputs[1];
            Node& bs = *self.inputs[2];
            const RowMat GO = owned(self.grad, g.cout, P);
            if (ker.requires_grad) {
                const RowMat gk = GO * col->transpose();
                auto& dst = ker.grad_buffer();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gk.data()[i];
            }
            if (bs.requires_grad) {
                auto& gb = bs.grad_buffer();
                for (std::size_t co = 0; co < g.cout; ++co) {
                    const double* row = self.grad.data() + co * P;
                    double s = 0.0;
                    for (std::size_t j = 0; j < P; ++j) s += row[j];
                    gb[co] += s;
                }
            }
            if (in.requires_grad) {
                const RowMat gcol = owned(ker.data, g.cout, R).transpose() * GO;
                col2im_accumulate(g, std::span<const double>(gcol.data(), R * P), in.grad_buffer());
            }
        });
}

Tensor relu(const Tensor& x)
{
    require_finite(x.data(), "relu input");
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return Tensor::from_op(x.shape(), std::move(out), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.data[i] > 0.0) g[i] += self.grad[i];
    });
}

Tensor prelu(const Tensor& x, const Tensor& alpha)
{
    require_finite(x.data(), "prelu input");
    if (x.rank() < 1 || alpha.shape() != Shape{x.extent(0)})
        throw std::invalid_argument("prelu: alpha " + to_string(alpha.shape()) + " must be per-channel for input " +
                                    to_string(x.shape()));
    const std::size_t channels = x.extent(0);
    const std::size_t inner = x.size() / channels;
    std::vector<double> out(x.size());
    const auto in = x.data();
    const auto a = alpha.data();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = c * inner; i < (c + 1) * inner; ++i) out[i] = in[i] > 0.0 ? in[i] : a[c] * in[i];
    return Tensor::from_op(x.shape(), std::move(out), {x, alpha}, [channels, inner](Node& self) {
        Node& in = *self.inputs[0];
        Node& al = *self.inputs[1];
        if (in.requires_grad) {
            auto& g = in.grad_buffer();
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = c * inner; i < (c + 1) * inner; ++i)
                    g[i] += in.data[i] > 0.0 ? self.grad[i] : al.data[c] * self.grad[i];
        }
        if (al.requires_grad) {
            auto& g = al.grad_buffer();
            for (std::size_t c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (std::size_t i = c * inner; i < (c + 1) * inner; ++i)
                    if (in.data[i] <= 0.0) acc += in.data[i] * self.grad[i];
                g[c] += acc;
            }
        }
    });
}

Tensor sigmoid(const Tensor& x)
{
    require_finite(x.data(), "sigmoid input");
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Branching keeps exp() from overflowing for large |x|.
        out[i] = in[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-in[i])) : std::exp(in[i]) / (1.0 + std::exp(in[i]));
    }
    return Tensor::from_op(x.shape(), out, {x}, [out](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i] * (1.0 - out[i]);
    });
}

Tensor maxpool3d(const Tensor& x, PoolWindow window)
{
    if (x.rank() != 4) throw std::invalid_argument("maxpool3d: expected [C,D,H,W], got " + to_string(x.shape()));
    const std::size_t C = x.extent(0), D = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (window.x == 0 || window.y == 0 || window.z == 0 || D % window.z || H % window.y || W % window.x)
        throw std::invalid_argument("maxpool3d: extents " + to_string(x.shape()) +
                                    " not divisible by window (" + std::to_string(window.x) + "," +
                                    std::to_string(window.y) + "," + std::to_string(window.z) + ")");
    const std::size_t OD = D / window.z, OH = H / window.y, OW = W / window.x;
    std::vector<double> out(C * OD * OH * OW);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto in = x.data();
    std::size_t o = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oz = 0; oz < OD; ++oz)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
                    std::size_t best = ((c * D + oz * window.z) * H + oy * window.y) * W + ox * window.x;
                    for (std::size_t dz = 0; dz < window.z; ++dz)
                        for (std::size_t dy = 0; dy < window.y; ++dy)
                            for (std::size_t dx = 0; dx < window.x; ++dx) {
                                const std::size_t idx =
                                    ((c * D + oz * window.z + dz) * H + oy * window.y + dy) * W + ox * window.x + dx;
                                if (in[idx] > in[best]) best = idx;
                            }
                    out[o] = in[best];
                    (*argmax)[o] = best;
                }
    return Tensor::from_op({C, OD, OH, OW}, std::move(out), {x}, [argmax](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
    });
}

Tensor cross_entropy(const Tensor& scores, std::span<const int> labels)
{
    if (scores.size() != labels.size() || labels.empty())
        throw std::invalid_argument("cross_entropy: " + std::to_string(scores.size()) + " scores vs " +
                                    std::to_string(labels.size()) + " labels");
    require_finite(scores.data(), "cross_entropy scores");
    for (int l : labels)
        if (l != 0 && l != 1) throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " not in {0,1}");
    const auto s = scores.data();
    const double n = static_cast<double>(labels.size());
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::clamp(s[i], kCrossEntropyClamp, 1.0 - kCrossEntropyClamp);
        total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return Tensor::from_op({1}, {total / n}, {scores}, [lab, n](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < lab.size(); ++i) {
            const double p = in.data[i];
            if (p < kCrossEntropyClamp || p > 1.0 - kCrossEntropyClamp) continue;
            const double d = lab[i] ? -1.0 / p : 1.0 / (1.0 - p);
            g[i] += self.grad[0] * d / n;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            const double sign = k == 0 ? 1.0 : -1.0;
            auto& g = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
    return Tensor::from_op(x.shape(), std::move(out), {x}, [factor](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor sum(const Tensor& x)
{
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::from_op({1}, {total}, {x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor sum_squares(const Tensor& x)
{
    double total = 0.0;
    for (double v : x.data()) total += v * v;
    return Tensor::from_op({1}, {total}, {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in.data[i] * self.grad[0];
    });
}

Tensor dot_constant(const Tensor& x, std::span<const double> c)
{
    if (c.size() != x.size())
        throw std::invalid_argument("dot_constant: tensor " + to_string(x.shape()) + " vs " +
                                    std::to_string(c.size()) + " weights");
    double total = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) total += x.data()[i] * c[i];
    std::vector<double> weights(c.begin(), c.end());
    return Tensor::from_op({1}, {total}, {x}, [weights](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[i] * self.grad[0];
    });
}

Tensor concat_channels(const std::vector<Tensor>& parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t channels = 0;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail)
            throw std::invalid_argument("concat_channels: " + to_string(p.shape()) + " vs " +
                                        to_string(parts[0].shape()));
        channels += p.extent(0);
    }
    std::vector<double> out;
    out.reserve(channels * element_count(tail));
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape = tail;
    shape.insert(shape.begin(), channels);
    return Tensor::from_op(std::move(shape), std::move(out), parts, [offsets](Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            Node& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            auto& g = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count)
{
    if (x.rank() < 1 || begin + count > x.extent(0) || count == 0)
        throw std::invalid_argument("slice_channels: [" + std::to_string(begin) + "," +
                                    std::to_string(begin + count) + ") out of range for " + to_string(x.shape()));
    const std::size_t inner = x.size() / x.extent(0);
    std::vector<double> out(x.data().begin() + begin * inner, x.data().begin() + (begin + count) * inner);
    Shape shape = x.shape();
    shape[0] = count;
    const std::size_t offset = begin * inner;
    return Tensor::from_op(std::move(shape), std::move(out), {x}, [offset](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (element_count(shape) != x.size())
        throw std::invalid_argument("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::from_op(std::move(shape), std::move(out), {x}, [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor affine_clamp(const Tensor& x, double a, double b, double lo, double hi)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a * x.data()[i] + b, lo, hi);
    return Tensor::from_op(x.shape(), std::move(out), {x}, [a, b, lo, hi](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = a * in.data[i] + b;
            if (v > lo && v < hi) g[i] += a * self.grad[i];
        }
    });
}

Tensor linear_map(const Tensor& x, Shape out_shape, const LinearFn& forward, LinearFn adjoint_accumulate)
{
    std::vector<double> out(element_count(out_shape), 0.0);
    forward(x.data(), out);
    return Tensor::from_op(std::move(out_shape), std::move(out), {x},
                           [adj = std::move(adjoint_accumulate)](Node& self) {
                               adj(self.grad, self.inputs[0]->grad_buffer());
                           });
}

} // namespace tomodet::diff
