#pragma once

#include "error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace slicereg
{

/// Physical point / vector in µm.
struct Vec2
{
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    Vec2& operator+=(Vec2 o)
    {
        x += o.x;
        y += o.y;
        return *this;
    }
    friend bool operator==(Vec2, Vec2) = default;
};

struct Vec3
{
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    friend bool operator==(Vec3, Vec3) = default;
};

inline double norm(Vec3 v)
{
    return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
}

/// Sampling lattice of a 2D raster: pixel (i, j) sits at origin + (i·sx, j·sy).
struct Grid2D
{
    int width = 1;
    int height = 1;
    Vec2 spacing{1.0, 1.0};
    Vec2 origin{0.0, 0.0};

    Vec2 to_physical(double i, double j) const { return {origin.x + i * spacing.x, origin.y + j * spacing.y}; }
    Vec2 to_index(Vec2 p) const { return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y}; }
    Vec2 center() const { return to_physical(0.5 * (width - 1), 0.5 * (height - 1)); }
    friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

namespace detail
{
inline void check_spacing(double s, const char* what)
{
    require(std::isfinite(s) && s > 0.0, ErrorCode::InvalidArgument, std::string(what) + " spacing must be > 0");
}

// Clamp-to-edge linear interpolation setup along one axis.
inline void lerp_axis(double f, int n, int& i0, int& i1, double& t)
{
    f = std::clamp(f, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(f));
    if (i0 >= n - 1)
    {
        i0 = n - 1;
        i1 = n - 1;
        t = 0.0;
        return;
    }
    i1 = i0 + 1;
    t = f - i0;
}
} // namespace detail

/// 2D raster, row-major with x fastest; multichannel samples are interleaved.
class Image2D
{
public:
    Image2D() = default;

    Image2D(int width, int height, int channels = 1, Vec2 spacing = {1.0, 1.0}, Vec2 origin = {0.0, 0.0})
        : Image2D(Grid2D{width, height, spacing, origin}, channels)
    {
    }

    explicit Image2D(const Grid2D& grid, int channels = 1)
        : m_grid(grid)
        , m_channels(channels)
    {
        validate();
        m_data.assign(static_cast<std::size_t>(grid.width) * grid.height * channels, 0.0f);
    }

    Image2D(const Grid2D& grid, int channels, std::vector<float> data)
        : m_grid(grid)
        , m_channels(channels)
        , m_data(std::move(data))
    {
        validate();
        require(m_data.size() == static_cast<std::size_t>(grid.width) * grid.height * channels,
                ErrorCode::DimensionMismatch, "image data length does not match dimensions");
        require(all_finite(), ErrorCode::InvalidArgument, "image samples must be finite");
    }

    int width() const { return m_grid.width; }
    int height() const { return m_grid.height; }
    int channels() const { return m_channels; }
    Vec2 spacing() const { return m_grid.spacing; }
    Vec2 origin() const { return m_grid.origin; }
    const Grid2D& grid() const { return m_grid; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(m_grid.width) * m_grid.height; }

    std::span<float> data() { return m_data; }
    std::span<const float> data() const { return m_data; }

    float& at(int x, int y, int c = 0) { return m_data[index(x, y, c)]; }
    float at(int x, int y, int c = 0) const { return m_data[index(x, y, c)]; }

    /// Bilinear sample at fractional pixel indices, clamp-to-edge.
    double sample(double fx, double fy, int c = 0) const
    {
        int x0, x1, y0, y1;
        double tx, ty;
        detail::lerp_axis(fx, m_grid.width, x0, x1, tx);
        detail::lerp_axis(fy, m_grid.height, y0, y1, ty);
        const double v00 = at(x0, y0, c), v10 = at(x1, y0, c);
        const double v01 = at(x0, y1, c), v11 = at(x1, y1, c);
        return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
    }

    double sample_physical(Vec2 p, int c = 0) const
    {
        Vec2 f = m_grid.to_index(p);
        return sample(f.x, f.y, c);
    }

    bool all_finite() const
    {
        return std::all_of(m_data.begin(), m_data.end(), [](float v) { return std::isfinite(v); });
    }

private:
    std::size_t index(int x, int y, int c) const
    {
        return (static_cast<std::size_t>(y) * m_grid.width + x) * m_channels + c;
    }

    void validate() const
    {
        require(m_grid.width >= 1 && m_grid.height >= 1, ErrorCode::InvalidArgument, "image dims must be >= 1");
        require(m_channels >= 1, ErrorCode::InvalidArgument, "image needs at least one channel");
        detail::check_spacing(m_grid.spacing.x, "image x");
        detail::check_spacing(m_grid.spacing.y, "image y");
    }

    Grid2D m_grid;
    int m_channels = 1;
    std::vector<float> m_data = std::vector<float>(1, 0.0f);
};

/// Scalar volume, x fastest then y then z. Voxel (i, j, k) sits at origin + (i·sx, j·sy, k·sz).
class Volume3D
{
public:
    Volume3D() = default;

    Volume3D(std::array<int, 3> dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {})
        : m_dims(dims)
        , m_spacing(spacing)
        , m_origin(origin)
    {
        validate();
        m_data.assign(voxel_count(), 0.0f);
    }

    Volume3D(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<float> data)
        : m_dims(dims)
        , m_spacing(spacing)
        , m_origin(origin)
        , m_data(std::move(data))
    {
        validate();
        require(m_data.size() == voxel_count(), ErrorCode::DimensionMismatch,
                "volume data length does not match dimensions");
        require(all_finite(), ErrorCode::InvalidArgument, "volume samples must be finite");
    }

    const std::array<int, 3>& dims() const { return m_dims; }
    int nx() const { return m_dims[0]; }
    int ny() const { return m_dims[1]; }
    int nz() const { return m_dims[2]; }
    Vec3 spacing() const { return m_spacing; }
    Vec3 origin() const { return m_origin; }
    std::size_t voxel_count() const { return static_cast<std::size_t>(m_dims[0]) * m_dims[1] * m_dims[2]; }

    std::span<float> data() { return m_data; }
    std::span<const float> data() const { return m_data; }

    float& at(int x, int y, int z) { return m_data[index(x, y, z)]; }
    float at(int x, int y, int z) const { return m_data[index(x, y, z)]; }

    Vec3 to_physical(double i, double j, double k) const
    {
        return {m_origin.x + i * m_spacing.x, m_origin.y + j * m_spacing.y, m_origin.z + k * m_spacing.z};
    }
    Vec3 to_index(Vec3 p) const
    {
        return {(p.x - m_origin.x) / m_spacing.x, (p.y - m_origin.y) / m_spacing.y, (p.z - m_origin.z) / m_spacing.z};
    }

    /// Trilinear sample at fractional voxel indices, clamp-to-edge.
    double sample(double fx, double fy, double fz) const
    {
        int x0, x1, y0, y1, z0, z1;
        double tx, ty, tz;
        detail::lerp_axis(fx, m_dims[0], x0, x1, tx);
        detail::lerp_axis(fy, m_dims[1], y0, y1, ty);
        detail::lerp_axis(fz, m_dims[2], z0, z1, tz);
        auto plane = [&](int z) {
            const double v00 = at(x0, y0, z), v10 = at(x1, y0, z);
            const double v01 = at(x0, y1, z), v11 = at(x1, y1, z);
            return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
        };
        return (1 - tz) * plane(z0) + tz * plane(z1);
    }

    double sample_physical(Vec3 p) const
    {
        Vec3 f = to_index(p);
        return sample(f.x, f.y, f.z);
    }

    /// Axis-aligned slice k as a 2D image in the volume's x/y frame.
    Image2D slice(int k) const
    {
        require(k >= 0 && k < m_dims[2], ErrorCode::InvalidArgument, "slice index out of range");
        Grid2D g{m_dims[0], m_dims[1], {m_spacing.x, m_spacing.y}, {m_origin.x, m_origin.y}};
        const std::size_t n = g.width * static_cast<std::size_t>(g.height);
        std::vector<float> d(m_data.begin() + k * n, m_data.begin() + (k + 1) * n);
        return Image2D(g, 1, std::move(d));
    }

    bool all_finite() const
    {
        return std::all_of(m_data.begin(), m_data.end(), [](float v) { return std::isfinite(v); });
    }

private:
    std::size_t index(int x, int y, int z) const
    {
        return (static_cast<std::size_t>(z) * m_dims[1] + y) * m_dims[0] + x;
    }

    void validate() const
    {
        for (int d : m_dims)
            require(d >= 1, ErrorCode::InvalidArgument, "volume dims must be >= 1");
        detail::check_spacing(m_spacing.x, "volume x");
        detail::check_spacing(m_spacing.y, "volume y");
        detail::check_spacing(m_spacing.z, "volume z");
    }

    std::array<int, 3> m_dims{1, 1, 1};
    Vec3 m_spacing{1.0, 1.0, 1.0};
    Vec3 m_origin{};
    std::vector<float> m_data = std::vector<float>(1, 0.0f);
};

/// Wraps a 2D image as an nz = 1 volume (scalar images only).
inline Volume3D as_volume(const Image2D& img)
{
    require(img.channels() == 1, ErrorCode::ChannelMismatch, "volume view needs a single-channel image");
    const auto d = img.data();
    return Volume3D({img.width(), img.height(), 1}, {img.spacing().x, img.spacing().y, 1.0},
                    {img.origin().x, img.origin().y, 0.0}, std::vector<float>(d.begin(), d.end()));
}

} // namespace slicereg
