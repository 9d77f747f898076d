#pragma once

#include "batunet/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace batunet {

/// Spatial extent of a volume, depth-major (d, h, w).
struct Shape3 {
    std::size_t d = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    constexpr std::size_t voxels() const noexcept { return d * h * w; }
    constexpr bool valid() const noexcept { return d >= 1 && h >= 1 && w >= 1; }
    friend constexpr bool operator==(const Shape3 &, const Shape3 &) = default;
};

inline std::string to_string(const Shape3 &s) {
    return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

inline std::ostream &operator<<(std::ostream &os, const Shape3 &s) { return os << to_string(s); }

/// Dense multi-channel 3D grid, row-major as [channel][z][y][x].
///
/// Storage is a flat Eigen column array so whole-volume arithmetic can be
/// written as Eigen expressions; `matrix()` views it as channels x voxels.
template <typename Scalar> class Volume {
  public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixMap =
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Volume() = default;

    Volume(Shape3 shape, std::size_t channels, Scalar fill = Scalar(0))
        : shape_(shape), channels_(channels) {
        if (!shape.valid())
            throw ShapeError("volume shape must be at least 1x1x1, got " + to_string(shape));
        data_ = Array::Constant(static_cast<Eigen::Index>(channels * shape.voxels()), fill);
    }

    Volume(Shape3 shape, std::size_t channels, Array data)
        : shape_(shape), channels_(channels), data_(std::move(data)) {
        if (!shape.valid())
            throw ShapeError("volume shape must be at least 1x1x1, got " + to_string(shape));
        if (static_cast<std::size_t>(data_.size()) != channels * shape.voxels())
            throw ShapeError("volume data length " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(channels) + "x" + to_string(shape));
    }

    const Shape3 &shape() const noexcept { return shape_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t voxels() const noexcept { return shape_.voxels(); }
    std::size_t size() const noexcept { return static_cast<std::size_t>(data_.size()); }

    Array &data() noexcept { return data_; }
    const Array &data() const noexcept { return data_; }

    std::size_t index(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const noexcept {
        return ((c * shape_.d + z) * shape_.h + y) * shape_.w + x;
    }
    Scalar &operator()(std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
        return data_[static_cast<Eigen::Index>(index(c, z, y, x))];
    }
    Scalar operator()(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
        return data_[static_cast<Eigen::Index>(index(c, z, y, x))];
    }

    auto channel(std::size_t c) {
        return data_.segment(static_cast<Eigen::Index>(c * voxels()), static_cast<Eigen::Index>(voxels()));
    }
    auto channel(std::size_t c) const {
        return data_.segment(static_cast<Eigen::Index>(c * voxels()), static_cast<Eigen::Index>(voxels()));
    }

    MatrixMap matrix() {
        return MatrixMap(data_.data(), static_cast<Eigen::Index>(channels_), static_cast<Eigen::Index>(voxels()));
    }
    ConstMatrixMap matrix() const {
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(channels_),
                              static_cast<Eigen::Index>(voxels()));
    }

    bool all_finite() const { return data_.isFinite().all(); }

    template <typename Other> Volume<Other> cast() const {
        return Volume<Other>(shape_, channels_, data_.template cast<Other>().eval());
    }

    friend bool operator==(const Volume &a, const Volume &b) {
        return a.shape_ == b.shape_ && a.channels_ == b.channels_ && (a.data_ == b.data_).all();
    }

  private:
    Shape3 shape_{};
    std::size_t channels_ = 0;
    Array data_;
};

using VolumeF = Volume<float>;
using VolumeD = Volume<double>;

/// Binary voxel labels sharing the Volume layout (single channel).
struct MaskVolume {
    Shape3 shape{};
    std::vector<std::uint8_t> data;

    MaskVolume() = default;
    explicit MaskVolume(Shape3 s, std::uint8_t fill = 0) : shape(s), data(s.voxels(), fill) {
        if (!s.valid())
            throw ShapeError("mask shape must be at least 1x1x1, got " + to_string(s));
    }
    MaskVolume(Shape3 s, std::vector<std::uint8_t> labels) : shape(s), data(std::move(labels)) {
        if (data.size() != s.voxels())
            throw ShapeError("mask data length does not match " + to_string(s));
        for (auto v : data)
            if (v > 1)
                throw InvalidInput("mask labels must be 0 or 1");
    }

    std::size_t voxels() const noexcept { return shape.voxels(); }
    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
    }
    std::uint8_t &operator()(std::size_t z, std::size_t y, std::size_t x) {
        return data[(z * shape.h + y) * shape.w + x];
    }
    std::uint8_t operator()(std::size_t z, std::size_t y, std::size_t x) const {
        return data[(z * shape.h + y) * shape.w + x];
    }
    friend bool operator==(const MaskVolume &, const MaskVolume &) = default;
};

/// Divide every voxel by the volume maximum. Volumes whose maximum is <= 0
/// are returned unchanged.
template <typename Scalar> Volume<Scalar> normalize_max(const Volume<Scalar> &v) {
    if (!v.all_finite())
        throw InvalidInput("normalize_max: volume contains non-finite values");
    const Scalar peak = v.data().maxCoeff();
    if (!(peak > Scalar(0)))
        return v;
    return Volume<Scalar>(v.shape(), v.channels(), (v.data() / peak).eval());
}

namespace detail {

struct AxisSample {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// Half-pixel (align-corners-false) source coordinate for each output index.
inline std::vector<AxisSample> axis_samples(std::size_t in, std::size_t out) {
    std::vector<AxisSample> s(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        s[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return s;
}

// Nearest source index under the same half-pixel mapping.
inline std::vector<std::size_t> axis_nearest(std::size_t in, std::size_t out) {
    std::vector<std::size_t> s(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const auto src = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * scale));
        s[i] = std::min(src, in - 1);
    }
    return s;
}

} // namespace detail

/// Trilinear resampling of every channel to `target` using half-pixel
/// centres, clamped at the borders.
template <typename Scalar> Volume<Scalar> trilinear_resize(const Volume<Scalar> &v, Shape3 target) {
    if (!target.valid())
        throw ShapeError("trilinear_resize: target shape must be at least 1x1x1, got " + to_string(target));
    if (v.size() == 0)
        throw ShapeError("trilinear_resize: empty volume");
    if (target == v.shape())
        return v;

    const auto &src = v.shape();
    const auto zs = detail::axis_samples(src.d, target.d);
    const auto ys = detail::axis_samples(src.h, target.h);
    const auto xs = detail::axis_samples(src.w, target.w);

    Volume<Scalar> out(target, v.channels());
    for (std::size_t c = 0; c < v.channels(); ++c)
        for (std::size_t z = 0; z < target.d; ++z)
            for (std::size_t y = 0; y < target.h; ++y)
                for (std::size_t x = 0; x < target.w; ++x) {
                    const auto &sz = zs[z];
                    const auto &sy = ys[y];
                    const auto &sx = xs[x];
                    auto plane = [&](std::size_t zz) {
                        const Scalar a = std::lerp(v(c, zz, sy.lo, sx.lo), v(c, zz, sy.lo, sx.hi), Scalar(sx.frac));
                        const Scalar b = std::lerp(v(c, zz, sy.hi, sx.lo), v(c, zz, sy.hi, sx.hi), Scalar(sx.frac));
                        return std::lerp(a, b, Scalar(sy.frac));
                    };
                    out(c, z, y, x) = std::lerp(plane(sz.lo), plane(sz.hi), Scalar(sz.frac));
                }
    return out;
}

/// Nearest-neighbour resampling for label volumes (keeps labels binary).
inline MaskVolume nearest_resize(const MaskVolume &m, Shape3 target) {
    if (!target.valid())
        throw ShapeError("nearest_resize: target shape must be at least 1x1x1, got " + to_string(target));
    if (target == m.shape)
        return m;
    const auto zs = detail::axis_nearest(m.shape.d, target.d);
    const auto ys = detail::axis_nearest(m.shape.h, target.h);
    const auto xs = detail::axis_nearest(m.shape.w, target.w);
    MaskVolume out(target);
    for (std::size_t z = 0; z < target.d; ++z)
        for (std::size_t y = 0; y < target.h; ++y)
            for (std::size_t x = 0; x < target.w; ++x)
                out(z, y, x) = m(zs[z], ys[y], xs[x]);
    return out;
}

/// Voxel is positive iff p >= threshold.
template <typename Scalar> MaskVolume mask_from_probs(const Volume<Scalar> &p, double threshold) {
    if (p.channels() != 1)
        throw ShapeError("mask_from_probs: expected a single-channel probability volume");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw InvalidInput("mask_from_probs: threshold must lie in [0,1]");
    MaskVolume m(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = static_cast<double>(p.data()[static_cast<Eigen::Index>(i)]);
        if (!(v >= 0.0 && v <= 1.0))
            throw InvalidInput("mask_from_probs: probability outside [0,1] at voxel " + std::to_string(i));
        m.data[i] = v >= threshold ? 1 : 0;
    }
    return m;
}

} // namespace batunet
