#pragma once

#include "batunet/volume.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace batunet {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar> using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Cubic convolution kernel with zero 'same' padding.
///
/// `weights` is out_ch x (in_ch * k^3); each row is a [in][kz][ky][kx]
/// kernel flattened row-major.
template <typename Scalar> struct ConvLayer {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 3;
    RowMatrix<Scalar> weights;
    ColVector<Scalar> bias;

    ConvLayer() = default;
    ConvLayer(std::size_t in, std::size_t out, std::size_t k)
        : in_ch(in), out_ch(out), kernel(k),
          weights(RowMatrix<Scalar>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k * k * k))),
          bias(ColVector<Scalar>::Zero(static_cast<Eigen::Index>(out))) {
        if (k != 1 && k != 3)
            throw InvalidInput("ConvLayer: kernel must be 1 or 3");
    }

    std::size_t taps() const noexcept { return kernel * kernel * kernel; }
    std::size_t parameter_count() const noexcept { return out_ch * in_ch * taps() + out_ch; }

    Scalar &weight(std::size_t o, std::size_t i, std::size_t kz, std::size_t ky, std::size_t kx) {
        return weights(static_cast<Eigen::Index>(o),
                       static_cast<Eigen::Index>(((i * kernel + kz) * kernel + ky) * kernel + kx));
    }

    friend bool operator==(const ConvLayer &a, const ConvLayer &b) {
        return a.in_ch == b.in_ch && a.out_ch == b.out_ch && a.kernel == b.kernel && a.weights == b.weights &&
               a.bias == b.bias;
    }
};

template <typename Scalar> struct ConvGrads {
    RowMatrix<Scalar> weights;
    ColVector<Scalar> bias;
};

namespace detail {

// Voxel columns per im2col chunk; bounds the scratch matrix at in_ch*27 x this.
inline constexpr std::size_t kIm2colColumns = 8192;

inline std::size_t planes_per_chunk(const Shape3 &s) {
    return std::max<std::size_t>(1, kIm2colColumns / (s.h * s.w));
}

// Fill `cols` with the 3x3x3 zero-padded neighbourhoods of planes [z0, z1).
template <typename Scalar>
void im2col(const Volume<Scalar> &x, std::size_t z0, std::size_t z1, RowMatrix<Scalar> &cols) {
    const auto &s = x.shape();
    const std::size_t plane = s.h * s.w;
    cols.setZero(static_cast<Eigen::Index>(x.channels() * 27), static_cast<Eigen::Index>((z1 - z0) * plane));
    const Scalar *src = x.data().data();
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t kz = 0; kz < 3; ++kz)
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    Scalar *row = cols.row(static_cast<Eigen::Index>(((c * 3 + kz) * 3 + ky) * 3 + kx)).data();
                    for (std::size_t z = z0; z < z1; ++z) {
                        const auto iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
                        if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(s.d))
                            continue;
                        for (std::size_t y = 0; y < s.h; ++y) {
                            const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h))
                                continue;
                            const Scalar *in = src + x.index(c, static_cast<std::size_t>(iz), static_cast<std::size_t>(iy), 0);
                            Scalar *dst = row + ((z - z0) * s.h + y) * s.w;
                            const std::size_t lo = kx == 0 ? 1 : 0;
                            const std::size_t hi = kx == 2 ? s.w - 1 : s.w;
                            for (std::size_t xx = lo; xx < hi; ++xx)
                                dst[xx] = in[xx + kx - 1];
                        }
                    }
                }
}

// Adjoint of im2col: scatter-add column gradients into `gx`.
template <typename Scalar>
void col2im(const RowMatrix<Scalar> &cols, std::size_t z0, std::size_t z1, Volume<Scalar> &gx) {
    const auto &s = gx.shape();
    Scalar *dst_base = gx.data().data();
    for (std::size_t c = 0; c < gx.channels(); ++c)
        for (std::size_t kz = 0; kz < 3; ++kz)
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const Scalar *row = cols.row(static_cast<Eigen::Index>(((c * 3 + kz) * 3 + ky) * 3 + kx)).data();
                    for (std::size_t z = z0; z < z1; ++z) {
                        const auto iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
                        if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(s.d))
                            continue;
                        for (std::size_t y = 0; y < s.h; ++y) {
                            const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h))
                                continue;
                            Scalar *out = dst_base + gx.index(c, static_cast<std::size_t>(iz), static_cast<std::size_t>(iy), 0);
                            const Scalar *src = row + ((z - z0) * s.h + y) * s.w;
                            const std::size_t lo = kx == 0 ? 1 : 0;
                            const std::size_t hi = kx == 2 ? s.w - 1 : s.w;
                            for (std::size_t xx = lo; xx < hi; ++xx)
                                out[xx + kx - 1] += src[xx];
                        }
                    }
                }
}

} // namespace detail

template <typename Scalar> Volume<Scalar> conv3d_forward(const Volume<Scalar> &x, const ConvLayer<Scalar> &layer) {
    if (x.channels() != layer.in_ch)
        throw ShapeError("conv3d: input has " + std::to_string(x.channels()) + " channels, layer expects " +
                         std::to_string(layer.in_ch));
    Volume<Scalar> out(x.shape(), layer.out_ch);
    auto y = out.matrix();
    if (layer.kernel == 1) {
        y.noalias() = layer.weights * x.matrix();
    } else {
        const auto &s = x.shape();
        const std::size_t plane = s.h * s.w;
        const std::size_t step = detail::planes_per_chunk(s);
        RowMatrix<Scalar> cols;
        for (std::size_t z0 = 0; z0 < s.d; z0 += step) {
            const std::size_t z1 = std::min(s.d, z0 + step);
            detail::im2col(x, z0, z1, cols);
            y.middleCols(static_cast<Eigen::Index>(z0 * plane), cols.cols()).noalias() = layer.weights * cols;
        }
    }
    y.colwise() += layer.bias;
    return out;
}

/// Gradients of a convolution given the upstream gradient of its output.
/// Returns dL/dx and fills `grads` with dL/dW, dL/db.
template <typename Scalar>
Volume<Scalar> conv3d_backward(const Volume<Scalar> &x, const ConvLayer<Scalar> &layer, const Volume<Scalar> &grad_out,
                               ConvGrads<Scalar> &grads) {
    if (grad_out.channels() != layer.out_ch || !(grad_out.shape() == x.shape()))
        throw ShapeError("conv3d_backward: gradient shape does not match layer output");
    const auto g = grad_out.matrix();
    grads.bias = g.rowwise().sum();
    Volume<Scalar> gx(x.shape(), layer.in_ch);
    if (layer.kernel == 1) {
        grads.weights.noalias() = g * x.matrix().transpose();
        gx.matrix().noalias() = layer.weights.transpose() * g;
        return gx;
    }
    const auto &s = x.shape();
    const std::size_t plane = s.h * s.w;
    const std::size_t step = detail::planes_per_chunk(s);
    grads.weights.setZero(layer.weights.rows(), layer.weights.cols());
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> gcols;
    for (std::size_t z0 = 0; z0 < s.d; z0 += step) {
        const std::size_t z1 = std::min(s.d, z0 + step);
        detail::im2col(x, z0, z1, cols);
        const auto gchunk = g.middleCols(static_cast<Eigen::Index>(z0 * plane), cols.cols());
        grads.weights.noalias() += gchunk * cols.transpose();
        gcols.noalias() = layer.weights.transpose() * gchunk;
        detail::col2im(gcols, z0, z1, gx);
    }
    return gx;
}

template <typename Scalar> Volume<Scalar> relu(const Volume<Scalar> &x) {
    return Volume<Scalar>(x.shape(), x.channels(), x.data().max(Scalar(0)).eval());
}

/// Gradient through ReLU; `pre` is the activation input.
template <typename Scalar> Volume<Scalar> relu_backward(const Volume<Scalar> &pre, const Volume<Scalar> &grad) {
    return Volume<Scalar>(pre.shape(), pre.channels(),
                          (pre.data() > Scalar(0)).select(grad.data(), Scalar(0)).eval());
}

template <typename Scalar> Volume<Scalar> sigmoid(const Volume<Scalar> &x) {
    return Volume<Scalar>(x.shape(), x.channels(), (Scalar(1) / (Scalar(1) + (-x.data()).exp())).eval());
}

template <typename Scalar> struct PoolResult {
    Volume<Scalar> output;
    /// For each output element, the linear index of the input element it came from.
    std::vector<std::size_t> argmax;
};

/// 2x2x2 max pooling; ties resolve to the lowest input index.
template <typename Scalar> PoolResult<Scalar> maxpool3d(const Volume<Scalar> &x) {
    const auto &s = x.shape();
    if (s.d % 2 || s.h % 2 || s.w % 2)
        throw ShapeError("maxpool3d: spatial dims must be even, got " + to_string(s));
    const Shape3 os{s.d / 2, s.h / 2, s.w / 2};
    PoolResult<Scalar> r{Volume<Scalar>(os, x.channels()), std::vector<std::size_t>(x.channels() * os.voxels())};
    std::size_t o = 0;
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t z = 0; z < os.d; ++z)
            for (std::size_t y = 0; y < os.h; ++y)
                for (std::size_t xx = 0; xx < os.w; ++xx, ++o) {
                    std::size_t best = x.index(c, 2 * z, 2 * y, 2 * xx);
                    for (std::size_t dz = 0; dz < 2; ++dz)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t i = x.index(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx);
                                if (x.data()[static_cast<Eigen::Index>(i)] > x.data()[static_cast<Eigen::Index>(best)])
                                    best = i;
                            }
                    r.argmax[o] = best;
                    r.output.data()[static_cast<Eigen::Index>(o)] = x.data()[static_cast<Eigen::Index>(best)];
                }
    return r;
}

template <typename Scalar>
Volume<Scalar> maxpool3d_backward(const Volume<Scalar> &grad_out, const std::vector<std::size_t> &argmax,
                                  const Shape3 &input_shape) {
    Volume<Scalar> gx(input_shape, grad_out.channels());
    for (std::size_t o = 0; o < argmax.size(); ++o)
        gx.data()[static_cast<Eigen::Index>(argmax[o])] += grad_out.data()[static_cast<Eigen::Index>(o)];
    return gx;
}

/// Nearest-neighbour 2x upsampling.
template <typename Scalar> Volume<Scalar> upsample3d(const Volume<Scalar> &x) {
    const auto &s = x.shape();
    Volume<Scalar> out({2 * s.d, 2 * s.h, 2 * s.w}, x.channels());
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t z = 0; z < 2 * s.d; ++z)
            for (std::size_t y = 0; y < 2 * s.h; ++y)
                for (std::size_t xx = 0; xx < 2 * s.w; ++xx)
                    out(c, z, y, xx) = x(c, z / 2, y / 2, xx / 2);
    return out;
}

template <typename Scalar> Volume<Scalar> upsample3d_backward(const Volume<Scalar> &grad_out) {
    const auto &s = grad_out.shape();
    Volume<Scalar> gx({s.d / 2, s.h / 2, s.w / 2}, grad_out.channels());
    for (std::size_t c = 0; c < grad_out.channels(); ++c)
        for (std::size_t z = 0; z < s.d; ++z)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t xx = 0; xx < s.w; ++xx)
                    gx(c, z / 2, y / 2, xx / 2) += grad_out(c, z, y, xx);
    return gx;
}

/// Channel concatenation, a's channels first.
template <typename Scalar> Volume<Scalar> concat_channels(const Volume<Scalar> &a, const Volume<Scalar> &b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError("concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    typename Volume<Scalar>::Array data(a.data().size() + b.data().size());
    data << a.data(), b.data();
    return Volume<Scalar>(a.shape(), a.channels() + b.channels(), std::move(data));
}

/// Inverse of concat_channels: the first `head` channels and the rest.
template <typename Scalar>
std::pair<Volume<Scalar>, Volume<Scalar>> split_channels(const Volume<Scalar> &v, std::size_t head) {
    if (head > v.channels())
        throw ShapeError("split_channels: head exceeds channel count");
    const auto n = static_cast<Eigen::Index>(head * v.voxels());
    return {Volume<Scalar>(v.shape(), head, v.data().head(n).eval()),
            Volume<Scalar>(v.shape(), v.channels() - head, v.data().tail(v.data().size() - n).eval())};
}

} // namespace batunet
