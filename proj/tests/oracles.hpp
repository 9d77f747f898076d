#pragma once
// Slow, direct reference implementations used to check the library. Each is
// written from the definition, without sharing code with src/.

#include "batunet/layers.hpp"
#include "batunet/metrics.hpp"
#include "batunet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace batunet::oracle {

inline VolumeD random_volume(std::mt19937_64 &rng, Shape3 s, std::size_t channels = 1, double lo = 0.0,
                             double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    VolumeD v(s, channels);
    for (Eigen::Index i = 0; i < v.data().size(); ++i)
        v.data()[i] = u(rng);
    return v;
}

inline MaskVolume random_mask(std::mt19937_64 &rng, Shape3 s, double p) {
    std::bernoulli_distribution b(p);
    MaskVolume m(s);
    for (auto &v : m.data)
        v = b(rng);
    return m;
}

// Six nested loops over output voxel and kernel tap, zero outside the volume.
inline VolumeD conv3d(const VolumeD &x, ConvLayer<double> layer) {
    const auto &s = x.shape();
    const int k = static_cast<int>(layer.kernel), r = k / 2;
    VolumeD out(s, layer.out_ch);
    for (std::size_t o = 0; o < layer.out_ch; ++o)
        for (std::size_t z = 0; z < s.d; ++z)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t xx = 0; xx < s.w; ++xx) {
                    double acc = layer.bias[static_cast<Eigen::Index>(o)];
                    for (std::size_t i = 0; i < layer.in_ch; ++i)
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const long iz = long(z) + kz - r, iy = long(y) + ky - r, ix = long(xx) + kx - r;
                                    if (iz < 0 || iy < 0 || ix < 0 || iz >= long(s.d) || iy >= long(s.h) ||
                                        ix >= long(s.w))
                                        continue;
                                    acc += layer.weight(o, i, kz, ky, kx) * x(i, iz, iy, ix);
                                }
                    out(o, z, y, xx) = acc;
                }
    return out;
}

inline VolumeD blockwise_max(const VolumeD &x) {
    const auto &s = x.shape();
    VolumeD out({s.d / 2, s.h / 2, s.w / 2}, x.channels());
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t z = 0; z < s.d / 2; ++z)
            for (std::size_t y = 0; y < s.h / 2; ++y)
                for (std::size_t xx = 0; xx < s.w / 2; ++xx) {
                    double m = -INFINITY;
                    for (int q = 0; q < 8; ++q)
                        m = std::max(m, x(c, 2 * z + (q >> 2), 2 * y + ((q >> 1) & 1), 2 * xx + (q & 1)));
                    out(c, z, y, xx) = m;
                }
    return out;
}

// One output voxel by direct evaluation of the 8-corner weighted sum.
inline double trilinear_at(const VolumeD &v, std::size_t c, Shape3 target, std::size_t oz, std::size_t oy,
                           std::size_t ox) {
    const auto &s = v.shape();
    auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
        double p = (double(i) + 0.5) * double(in) / double(out) - 0.5;
        p = std::clamp(p, 0.0, double(in - 1));
        const auto i0 = std::size_t(std::floor(p));
        const auto i1 = std::min(i0 + 1, in - 1);
        return std::tuple{i0, i1, p - double(i0)};
    };
    const auto [z0, z1, fz] = coord(oz, s.d, target.d);
    const auto [y0, y1, fy] = coord(oy, s.h, target.h);
    const auto [x0, x1, fx] = coord(ox, s.w, target.w);
    double acc = 0.0;
    for (int q = 0; q < 8; ++q) {
        const bool bz = q & 4, by = q & 2, bx = q & 1;
        const double w = (bz ? fz : 1 - fz) * (by ? fy : 1 - fy) * (bx ? fx : 1 - fx);
        acc += w * v(c, bz ? z1 : z0, by ? y1 : y0, bx ? x1 : x0);
    }
    return acc;
}

// Mann-Whitney: fraction of (positive, negative) pairs ranked correctly, ties
// counted one half.
inline double pair_auc(const std::vector<double> &scores, const std::vector<std::uint8_t> &labels) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i])
            continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j])
                continue;
            pairs += 1.0;
            wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
        }
    }
    return wins / pairs;
}

inline ConfusionCounts confusion(const std::vector<double> &scores, const std::vector<std::uint8_t> &labels,
                                 double t) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool p = scores[i] >= t;
        if (p && labels[i])
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (labels[i])
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

} // namespace batunet::oracle
