#pragma once

// Sampling-plane pose, cubic B-spline control grids, and surface slice extraction.

#include "error.hpp"
#include "image.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace slicereg
{

inline double deg2rad(double d)
{
    return d * std::numbers::pi / 180.0;
}

inline double rad2deg(double r)
{
    return r * 180.0 / std::numbers::pi;
}

/// Pose of the sampling plane: rotation about x by rx, then about y by ry (degrees, pivot at center),
/// then translation by tz along the volume z axis.
struct PlanePose
{
    double tz = 0.0;
    double rx = 0.0;
    double ry = 0.0;
    Vec2 center{};

    void validate() const
    {
        require(std::isfinite(tz) && std::isfinite(rx) && std::isfinite(ry), ErrorCode::InvalidArgument,
                "pose parameters must be finite");
        require(std::abs(rx) <= 90.0 && std::abs(ry) <= 90.0, ErrorCode::InvalidArgument,
                "plane rotations must stay within ±90°");
    }
};

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Row-major rotation Ry·Rx of a pose.
inline Mat3 rotation_matrix(const PlanePose& pose)
{
    const double cx = std::cos(deg2rad(pose.rx)), sx = std::sin(deg2rad(pose.rx));
    const double cy = std::cos(deg2rad(pose.ry)), sy = std::sin(deg2rad(pose.ry));
    return {{{cy, sy * sx, sy * cx}, {0.0, cx, -sx}, {-sy, cy * sx, cy * cx}}};
}

/// Plane-to-volume map with the rotation precomputed.
class PlaneFrame
{
public:
    explicit PlaneFrame(const PlanePose& pose)
        : m_pose(pose)
        , m_r(rotation_matrix(pose))
    {
    }

    Vec3 to_world(double u, double v, double w) const
    {
        const double p[3] = {u - m_pose.center.x, v - m_pose.center.y, w};
        Vec3 q{m_r[0][0] * p[0] + m_r[0][1] * p[1] + m_r[0][2] * p[2],
               m_r[1][0] * p[0] + m_r[1][1] * p[1] + m_r[1][2] * p[2],
               m_r[2][0] * p[0] + m_r[2][1] * p[1] + m_r[2][2] * p[2]};
        return {q.x + m_pose.center.x, q.y + m_pose.center.y, q.z + m_pose.tz};
    }

    /// Returns (u, v, w).
    Vec3 to_plane(Vec3 x) const
    {
        const double d[3] = {x.x - m_pose.center.x, x.y - m_pose.center.y, x.z - m_pose.tz};
        Vec3 p{m_r[0][0] * d[0] + m_r[1][0] * d[1] + m_r[2][0] * d[2],
               m_r[0][1] * d[0] + m_r[1][1] * d[1] + m_r[2][1] * d[2],
               m_r[0][2] * d[0] + m_r[1][2] * d[1] + m_r[2][2] * d[2]};
        return {p.x + m_pose.center.x, p.y + m_pose.center.y, p.z};
    }

    Vec3 normal() const { return {m_r[0][2], m_r[1][2], m_r[2][2]}; }

private:
    PlanePose m_pose;
    Mat3 m_r;
};

inline Vec3 plane_to_world(const PlanePose& pose, double u, double v, double w)
{
    return PlaneFrame(pose).to_world(u, v, w);
}

inline Vec3 world_to_plane(const PlanePose& pose, Vec3 x)
{
    return PlaneFrame(pose).to_plane(x);
}

/// Uniform cubic B-spline weights for fractional position t ∈ [0,1] within a knot span.
inline std::array<double, 4> cubic_bspline_weights(double t)
{
    const double t2 = t * t, t3 = t2 * t, s = 1.0 - t;
    return {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0};
}

/// Physical rectangle spanned by a control grid (outer control rows sit on its boundary).
struct GridExtent
{
    double u0 = 0.0;
    double u1 = 1.0;
    double v0 = 0.0;
    double v1 = 1.0;

    static GridExtent of(const Grid2D& g)
    {
        const Vec2 a = g.to_physical(0, 0), b = g.to_physical(g.width - 1, g.height - 1);
        return {a.x, b.x, a.y, b.y};
    }
};

namespace detail
{
// Control-point indices and weights along one grid axis; indices are clamped to the grid.
struct AxisStencil
{
    std::array<int, 4> index;
    std::array<double, 4> weight;
};

inline AxisStencil axis_stencil(double s, int n)
{
    s = std::clamp(s, 0.0, 1.0);
    const double x = s * (n - 1);
    int i = std::min(static_cast<int>(std::floor(x)), n - 2);
    const double t = x - i;
    AxisStencil st{{}, cubic_bspline_weights(t)};
    for (int a = 0; a < 4; ++a)
        st.index[a] = std::clamp(i - 1 + a, 0, n - 1);
    return st;
}

inline double normalized(double x, double x0, double x1)
{
    return x1 > x0 ? (x - x0) / (x1 - x0) : 0.0;
}
} // namespace detail

/// Tensor-product cubic B-spline control grid with clamped end behaviour.
/// Values are stored with u fastest: value(i, j) = values[j·nu + i].
template <typename Value>
class ControlGrid
{
public:
    ControlGrid() = default;

    ControlGrid(int nu, int nv, GridExtent extent, Value fill = Value{})
        : m_nu(nu)
        , m_nv(nv)
        , m_extent(extent)
        , m_values(static_cast<std::size_t>(nu) * nv, fill)
    {
        require(nu >= 4 && nv >= 4, ErrorCode::InvalidArgument, "cubic B-spline grids need at least 4x4 points");
    }

    int nu() const { return m_nu; }
    int nv() const { return m_nv; }
    std::size_t size() const { return m_values.size(); }
    const GridExtent& extent() const { return m_extent; }

    Value& operator()(int i, int j) { return m_values[static_cast<std::size_t>(j) * m_nu + i]; }
    const Value& operator()(int i, int j) const { return m_values[static_cast<std::size_t>(j) * m_nu + i]; }
    std::vector<Value>& values() { return m_values; }
    const std::vector<Value>& values() const { return m_values; }

    /// Evaluation at normalized coordinates (s, t) ∈ [0,1]²; values outside are clamped.
    Value eval_normalized(double s, double t) const
    {
        const auto su = detail::axis_stencil(s, m_nu);
        const auto sv = detail::axis_stencil(t, m_nv);
        Value acc{};
        for (int b = 0; b < 4; ++b)
        {
            Value row{};
            for (int a = 0; a < 4; ++a)
                row += su.weight[a] * (*this)(su.index[a], sv.index[b]);
            acc += sv.weight[b] * row;
        }
        return acc;
    }

    /// Evaluation at physical plane coordinates (µm).
    Value eval(double u, double v) const
    {
        return eval_normalized(detail::normalized(u, m_extent.u0, m_extent.u1),
                               detail::normalized(v, m_extent.v0, m_extent.v1));
    }

    /// Field sampled at every pixel of a raster lattice, using separable stencils.
    std::vector<Value> sample_field(const Grid2D& g) const
    {
        std::vector<detail::AxisStencil> cols(g.width), rows(g.height);
        for (int i = 0; i < g.width; ++i)
            cols[i] = detail::axis_stencil(detail::normalized(g.to_physical(i, 0).x, m_extent.u0, m_extent.u1), m_nu);
        for (int j = 0; j < g.height; ++j)
            rows[j] = detail::axis_stencil(detail::normalized(g.to_physical(0, j).y, m_extent.v0, m_extent.v1), m_nv);

        std::vector<Value> field(static_cast<std::size_t>(g.width) * g.height);
        std::vector<Value> line(m_nu);
        for (int j = 0; j < g.height; ++j)
        {
            const auto& sv = rows[j];
            for (int i = 0; i < m_nu; ++i)
            {
                Value acc{};
                for (int b = 0; b < 4; ++b)
                    acc += sv.weight[b] * (*this)(i, sv.index[b]);
                line[i] = acc;
            }
            for (int i = 0; i < g.width; ++i)
            {
                const auto& su = cols[i];
                Value acc{};
                for (int a = 0; a < 4; ++a)
                    acc += su.weight[a] * line[su.index[a]];
                field[static_cast<std::size_t>(j) * g.width + i] = acc;
            }
        }
        return field;
    }

    bool is_zero() const
    {
        return std::all_of(m_values.begin(), m_values.end(), [](const Value& v) { return v == Value{}; });
    }

private:
    int m_nu = 4;
    int m_nv = 4;
    GridExtent m_extent{};
    std::vector<Value> m_values = std::vector<Value>(16);
};

/// z-displacement per control-point pair (µm).
using OutOfPlaneGrid = ControlGrid<double>;
/// In-plane displacement vectors (µm).
using InPlaneGrid = ControlGrid<Vec2>;

/// Samples the volume on the (optionally displaced) plane. Pixel (i, j) of `out` lies at plane
/// coordinates out.to_physical(i, j); the surface supplies the out-of-plane offset w.
inline Image2D extract_slice(const Volume3D& vol, const PlanePose& pose, const OutOfPlaneGrid* surface,
                             const Grid2D& out)
{
    require(out.width >= 1 && out.height >= 1, ErrorCode::InvalidArgument, "slice dims must be >= 1");
    require(out.spacing.x > 0.0 && out.spacing.y > 0.0, ErrorCode::InvalidArgument, "slice spacing must be > 0");
    const PlaneFrame frame(pose);
    std::vector<double> w;
    if (surface)
        w = surface->sample_field(out);

    Image2D img(out, 1);
    auto dst = img.data();
    for (int j = 0; j < out.height; ++j)
        for (int i = 0; i < out.width; ++i)
        {
            const std::size_t p = static_cast<std::size_t>(j) * out.width + i;
            const Vec2 uv = out.to_physical(i, j);
            const Vec3 x = frame.to_world(uv.x, uv.y, surface ? w[p] : 0.0);
            dst[p] = static_cast<float>(vol.sample_physical(x));
        }
    return img;
}

inline Image2D extract_slice(const Volume3D& vol, const PlanePose& pose, const OutOfPlaneGrid& surface,
                             const Grid2D& out)
{
    return extract_slice(vol, pose, &surface, out);
}

inline Image2D extract_slice(const Volume3D& vol, const PlanePose& pose, const Grid2D& out)
{
    return extract_slice(vol, pose, nullptr, out);
}

/// Backward warp: out(p) = img(p + d(p)), bilinear with clamp-to-edge.
inline Image2D warp_2d(const Image2D& img, const InPlaneGrid& grid)
{
    if (grid.is_zero())
        return img;
    const auto field = grid.sample_field(img.grid());
    const Vec2 s = img.spacing();
    Image2D out(img.grid(), img.channels());
    for (int j = 0; j < img.height(); ++j)
        for (int i = 0; i < img.width(); ++i)
        {
            const Vec2 d = field[static_cast<std::size_t>(j) * img.width() + i];
            const double fx = i + d.x / s.x, fy = j + d.y / s.y;
            for (int c = 0; c < img.channels(); ++c)
                out.at(i, j, c) = static_cast<float>(img.sample(fx, fy, c));
        }
    return out;
}

/// Maps a point of the histology frame to the volume: in-plane warp, then surface offset, then pose.
inline Vec3 map_to_volume(Vec2 q, const PlanePose& pose, const OutOfPlaneGrid* surface, const InPlaneGrid* inplane)
{
    const Vec2 p = inplane ? q + inplane->eval(q.x, q.y) : q;
    const double w = surface ? surface->eval(p.x, p.y) : 0.0;
    return plane_to_world(pose, p.x, p.y, w);
}

} // namespace slicereg
