#pragma once

#include "error.hpp"
#include "image.hpp"
#include "io.hpp"

#include <array>
#include <vector>

namespace slicereg
{

/// Multichannel 2D feature raster, planar storage [c][y][x].
struct FeatureMap
{
    int width = 1;
    int height = 1;
    int channels = 1;
    Vec2 spacing{1.0, 1.0};
    Vec2 origin{};
    double thickness = 1.5; ///< µm, slab thickness when used as a moving feature volume
    std::vector<float> data = std::vector<float>(1, 0.0f);

    FeatureMap() = default;
    FeatureMap(int w, int h, int c, Vec2 s = {1.0, 1.0}, Vec2 o = {})
        : width(w)
        , height(h)
        , channels(c)
        , spacing(s)
        , origin(o)
        , data(static_cast<std::size_t>(w) * h * c, 0.0f)
    {
        require(w >= 1 && h >= 1 && c >= 1, ErrorCode::InvalidArgument, "feature map dims must be >= 1");
    }

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    float& at(int c, int x, int y) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int x, int y) const { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
    Vec2 to_physical(int i, int j) const { return {origin.x + i * spacing.x, origin.y + j * spacing.y}; }
    Grid2D grid() const { return {width, height, spacing, origin}; }
};

/// Stack of feature maps along z, planar storage [c][z][y][x].
struct FeatureVolume
{
    std::array<int, 3> dims{1, 1, 1};
    int channels = 1;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    std::vector<float> data = std::vector<float>(1, 0.0f);

    FeatureVolume() = default;
    FeatureVolume(std::array<int, 3> d, int c, Vec3 s, Vec3 o)
        : dims(d)
        , channels(c)
        , spacing(s)
        , origin(o)
        , data(static_cast<std::size_t>(d[0]) * d[1] * d[2] * c, 0.0f)
    {
    }

    std::size_t volume_size() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
    float& at(int c, int x, int y, int z)
    {
        return data[c * volume_size() + (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x];
    }
    float at(int c, int x, int y, int z) const
    {
        return data[c * volume_size() + (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x];
    }

    /// Copies one slice into a feature map.
    FeatureMap slice(int k) const
    {
        FeatureMap m(dims[0], dims[1], channels, {spacing.x, spacing.y}, {origin.x, origin.y});
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x)
                    m.at(c, x, y) = at(c, x, y, k);
        return m;
    }

    /// Trilinear, clamp-to-edge sample of all channels at physical position p.
    void sample(Vec3 p, std::span<double> out) const
    {
        int i0[3], i1[3];
        double t[3];
        const double f[3] = {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
        for (int a = 0; a < 3; ++a)
            detail::lerp_axis(f[a], dims[a], i0[a], i1[a], t[a]);
        const std::size_t nx = dims[0], nxy = nx * dims[1];
        const std::size_t off[8] = {i0[2] * nxy + i0[1] * nx + i0[0], i0[2] * nxy + i0[1] * nx + i1[0],
                                    i0[2] * nxy + i1[1] * nx + i0[0], i0[2] * nxy + i1[1] * nx + i1[0],
                                    i1[2] * nxy + i0[1] * nx + i0[0], i1[2] * nxy + i0[1] * nx + i1[0],
                                    i1[2] * nxy + i1[1] * nx + i0[0], i1[2] * nxy + i1[1] * nx + i1[0]};
        const double w[8] = {(1 - t[0]) * (1 - t[1]) * (1 - t[2]), t[0] * (1 - t[1]) * (1 - t[2]),
                             (1 - t[0]) * t[1] * (1 - t[2]),       t[0] * t[1] * (1 - t[2]),
                             (1 - t[0]) * (1 - t[1]) * t[2],       t[0] * (1 - t[1]) * t[2],
                             (1 - t[0]) * t[1] * t[2],             t[0] * t[1] * t[2]};
        const std::size_t vs = volume_size();
        for (int c = 0; c < channels; ++c)
        {
            const float* base = data.data() + c * vs;
            double acc = 0.0;
            for (int k = 0; k < 8; ++k)
                acc += w[k] * base[off[k]];
            out[c] = acc;
        }
    }
};

/// Stacks maps of identical layout along z.
inline FeatureVolume stack_features(const std::vector<FeatureMap>& slices, double z_spacing, double z_origin)
{
    require(!slices.empty(), ErrorCode::InvalidArgument, "cannot stack zero feature maps");
    const FeatureMap& f0 = slices.front();
    FeatureVolume v({f0.width, f0.height, static_cast<int>(slices.size())}, f0.channels,
                    {f0.spacing.x, f0.spacing.y, z_spacing}, {f0.origin.x, f0.origin.y, z_origin});
    for (int k = 0; k < static_cast<int>(slices.size()); ++k)
    {
        const FeatureMap& f = slices[k];
        require(f.width == f0.width && f.height == f0.height && f.channels == f0.channels, ErrorCode::DimensionMismatch,
                "feature slices must share dims and channels");
        for (int c = 0; c < f.channels; ++c)
            for (int y = 0; y < f.height; ++y)
                for (int x = 0; x < f.width; ++x)
                    v.at(c, x, y, k) = f.at(c, x, y);
    }
    return v;
}

// Containers store channels interleaved (channel fastest).
inline Raster to_raster(const FeatureVolume& v)
{
    Raster r{v.dims, v.spacing, v.origin, v.channels, SampleType::F32, {}};
    r.data.resize(v.data.size());
    std::size_t o = 0;
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x)
                for (int c = 0; c < v.channels; ++c)
                    r.data[o++] = v.at(c, x, y, z);
    return r;
}

inline Raster to_raster(const FeatureMap& m)
{
    FeatureVolume v({m.width, m.height, 1}, m.channels, {m.spacing.x, m.spacing.y, m.thickness},
                    {m.origin.x, m.origin.y, 0.0});
    v.data = m.data;
    return to_raster(v);
}

inline FeatureVolume feature_volume_from_raster(const Raster& r)
{
    FeatureVolume v(r.dims, r.channels, r.spacing, r.origin);
    std::size_t o = 0;
    for (int z = 0; z < r.dims[2]; ++z)
        for (int y = 0; y < r.dims[1]; ++y)
            for (int x = 0; x < r.dims[0]; ++x)
                for (int c = 0; c < r.channels; ++c)
                    v.at(c, x, y, z) = r.data[o++];
    return v;
}

} // namespace slicereg
