#pragma once

#include "error.hpp"
#include "image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace slicereg
{

template <typename T>
concept Raster2Or3 = std::same_as<T, Image2D> || std::same_as<T, Volume3D>;

inline Image2D to_grayscale(const Image2D& img)
{
    require(img.channels() == 3, ErrorCode::InvalidArgument, "grayscale conversion needs a 3-channel image");
    Image2D out(img.grid(), 1);
    auto src = img.data();
    auto dst = out.data();
    for (std::size_t p = 0; p < dst.size(); ++p)
        dst[p] = static_cast<float>((static_cast<double>(src[3 * p]) + src[3 * p + 1] + src[3 * p + 2]) / 3.0);
    return out;
}

/// Linear-interpolation percentile, rank = pct·(n−1) over the sorted samples.
inline double percentile(std::span<const float> samples, double pct)
{
    require(!samples.empty(), ErrorCode::InvalidArgument, "percentile of empty data");
    require(pct >= 0.0 && pct <= 1.0, ErrorCode::InvalidArgument, "percentile fraction must be in [0, 1]");
    std::vector<float> v(samples.begin(), samples.end());
    const double rank = pct * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + lo, v.end());
    const double a = v[lo];
    double b = a;
    if (hi != lo)
        b = *std::min_element(v.begin() + lo + 1, v.end());
    return a + (rank - static_cast<double>(lo)) * (b - a);
}

template <Raster2Or3 T>
struct NormalizeResult
{
    T image;
    double p_lo = 0.0;
    double p_hi = 0.0;
    bool degenerate = false;
};

/// Maps [p_lo, p_hi] onto [0, 1] with clamping. Zero percentile range gives all-zero data and sets degenerate.
template <Raster2Or3 T>
NormalizeResult<T> percentile_normalize(const T& img, double lo_pct = 0.01, double hi_pct = 0.99)
{
    require(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 1.0, ErrorCode::InvalidArgument,
            "percentile range must satisfy 0 <= lo < hi <= 1");
    NormalizeResult<T> r{img};
    r.p_lo = percentile(img.data(), lo_pct);
    r.p_hi = percentile(img.data(), hi_pct);
    auto out = r.image.data();
    if (!(r.p_hi > r.p_lo))
    {
        r.degenerate = true;
        std::fill(out.begin(), out.end(), 0.0f);
        return r;
    }
    const double range = r.p_hi - r.p_lo;
    for (float& v : out)
        v = static_cast<float>(std::clamp((v - r.p_lo) / range, 0.0, 1.0));
    return r;
}

/// Zero mean, unit population standard deviation.
template <Raster2Or3 T>
T standardize(const T& img)
{
    auto in = img.data();
    const double n = static_cast<double>(in.size());
    double mean = 0.0;
    for (float v : in)
        mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : in)
        var += (v - mean) * (v - mean);
    var /= n;
    require(var > 0.0, ErrorCode::Degenerate, "cannot standardize constant data (zero variance)");
    const double inv_std = 1.0 / std::sqrt(var);
    T out = img;
    for (float& v : out.data())
        v = static_cast<float>((v - mean) * inv_std);
    return out;
}

namespace detail
{
inline int resampled_size(int n, double spacing, double target)
{
    return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}
} // namespace detail

/// Resamples onto a lattice with the target spacing covering the same physical extent.
/// Output sample i sits at input-frame position origin − s/2 + (i + 1/2)·t.
inline Image2D resample(const Image2D& img, Vec2 target)
{
    require(target.x > 0.0 && target.y > 0.0, ErrorCode::InvalidArgument, "target spacing must be > 0");
    const Vec2 s = img.spacing();
    Grid2D g{detail::resampled_size(img.width(), s.x, target.x), detail::resampled_size(img.height(), s.y, target.y),
             target,
             {img.origin().x + 0.5 * (target.x - s.x), img.origin().y + 0.5 * (target.y - s.y)}};
    if (g == img.grid())
        return img;
    Image2D out(g, img.channels());
    for (int j = 0; j < g.height; ++j)
        for (int i = 0; i < g.width; ++i)
        {
            const Vec2 f = img.grid().to_index(g.to_physical(i, j));
            for (int c = 0; c < img.channels(); ++c)
                out.at(i, j, c) = static_cast<float>(img.sample(f.x, f.y, c));
        }
    return out;
}

inline Volume3D resample(const Volume3D& vol, Vec3 target)
{
    require(target.x > 0.0 && target.y > 0.0 && target.z > 0.0, ErrorCode::InvalidArgument,
            "target spacing must be > 0");
    const Vec3 s = vol.spacing();
    const std::array<int, 3> dims{detail::resampled_size(vol.nx(), s.x, target.x),
                                  detail::resampled_size(vol.ny(), s.y, target.y),
                                  detail::resampled_size(vol.nz(), s.z, target.z)};
    const Vec3 origin{vol.origin().x + 0.5 * (target.x - s.x), vol.origin().y + 0.5 * (target.y - s.y),
                      vol.origin().z + 0.5 * (target.z - s.z)};
    if (dims == vol.dims() && target == s)
        return vol;
    Volume3D out(dims, target, origin);
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i)
            {
                const Vec3 f = vol.to_index(out.to_physical(i, j, k));
                out.at(i, j, k) = static_cast<float>(vol.sample(f.x, f.y, f.z));
            }
    return out;
}

template <Raster2Or3 T>
struct CropResult
{
    T image;
    std::array<int, 3> first_index{0, 0, 0};
    Vec3 offset{}; ///< physical offset of the crop origin from the input origin, µm
};

/// Minimal bounding box of samples whose min-max normalized intensity is ≥ threshold.
template <Raster2Or3 T>
CropResult<T> crop_to_foreground(const T& img, double threshold)
{
    require(threshold >= 0.0 && threshold <= 1.0, ErrorCode::InvalidArgument, "crop threshold must be in [0, 1]");
    auto data = img.data();
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    const double lo = *mn, range = static_cast<double>(*mx) - *mn;
    auto is_fg = [&](float v) { return (range > 0.0 ? (v - lo) / range : 0.0) >= threshold; };

    std::array<int, 3> dims;
    int channels = 1;
    if constexpr (std::same_as<T, Image2D>)
    {
        dims = {img.width(), img.height(), 1};
        channels = img.channels();
    }
    else
        dims = img.dims();

    std::array<int, 3> lo_idx{dims[0], dims[1], dims[2]}, hi_idx{-1, -1, -1};
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i)
            {
                const std::size_t base = ((static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i) * channels;
                bool fg = false;
                for (int c = 0; c < channels && !fg; ++c)
                    fg = is_fg(data[base + c]);
                if (!fg)
                    continue;
                const int idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a)
                {
                    lo_idx[a] = std::min(lo_idx[a], idx[a]);
                    hi_idx[a] = std::max(hi_idx[a], idx[a]);
                }
            }
    require(hi_idx[0] >= 0, ErrorCode::Degenerate, "no sample reaches the crop threshold");

    CropResult<T> r;
    r.first_index = lo_idx;
    if constexpr (std::same_as<T, Image2D>)
    {
        const Vec2 s = img.spacing();
        r.offset = {lo_idx[0] * s.x, lo_idx[1] * s.y, 0.0};
        Grid2D g{hi_idx[0] - lo_idx[0] + 1, hi_idx[1] - lo_idx[1] + 1, s,
                 {img.origin().x + r.offset.x, img.origin().y + r.offset.y}};
        Image2D out(g, channels);
        for (int j = 0; j < g.height; ++j)
            for (int i = 0; i < g.width; ++i)
                for (int c = 0; c < channels; ++c)
                    out.at(i, j, c) = img.at(i + lo_idx[0], j + lo_idx[1], c);
        r.image = std::move(out);
    }
    else
    {
        const Vec3 s = img.spacing();
        r.offset = {lo_idx[0] * s.x, lo_idx[1] * s.y, lo_idx[2] * s.z};
        const std::array<int, 3> nd{hi_idx[0] - lo_idx[0] + 1, hi_idx[1] - lo_idx[1] + 1, hi_idx[2] - lo_idx[2] + 1};
        Volume3D out(nd, s, img.origin() + r.offset);
        for (int k = 0; k < nd[2]; ++k)
            for (int j = 0; j < nd[1]; ++j)
                for (int i = 0; i < nd[0]; ++i)
                    out.at(i, j, k) = img.at(i + lo_idx[0], j + lo_idx[1], k + lo_idx[2]);
        r.image = std::move(out);
    }
    return r;
}

} // namespace slicereg
