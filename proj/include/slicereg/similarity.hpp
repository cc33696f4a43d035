#pragma once

#include "error.hpp"
#include "features.hpp"
#include "geometry.hpp"
#include "image.hpp"

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace slicereg
{

struct MetricConfig
{
    int lncc_radius = 4;           ///< pixels, window side 2r+1
    int lc2_radius = 3;            ///< pixels, patch side 2r+1
    double variance_epsilon = 1e-8; ///< intensity²

    void validate() const
    {
        require(lncc_radius >= 1 && lc2_radius >= 1, ErrorCode::Config, "metric radii must be >= 1");
        require(variance_epsilon > 0.0, ErrorCode::Config, "variance epsilon must be > 0");
    }
};

struct Score
{
    double value = 0.0;
    bool degenerate = false;
};

namespace detail
{
// Summed-area table over a W×H field; box queries are inclusive and clamped by the caller.
class BoxSums
{
public:
    BoxSums(int w, int h, const std::vector<double>& field)
        : m_w(w)
        , m_sat(static_cast<std::size_t>(w + 1) * (h + 1), 0.0)
    {
        for (int y = 0; y < h; ++y)
        {
            double row = 0.0;
            for (int x = 0; x < w; ++x)
            {
                row += field[static_cast<std::size_t>(y) * w + x];
                at(x + 1, y + 1) = at(x + 1, y) + row;
            }
        }
    }

    double sum(int x0, int y0, int x1, int y1) const
    {
        return at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0);
    }

private:
    double& at(int x, int y) { return m_sat[static_cast<std::size_t>(y) * (m_w + 1) + x]; }
    double at(int x, int y) const { return m_sat[static_cast<std::size_t>(y) * (m_w + 1) + x]; }

    int m_w;
    std::vector<double> m_sat;
};

inline std::vector<double> centered(const Image2D& img)
{
    auto d = img.data();
    double mean = 0.0;
    for (float v : d)
        mean += v;
    mean /= static_cast<double>(d.size());
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        out[i] = d[i] - mean;
    return out;
}

inline std::vector<double> product(const std::vector<double>& a, const std::vector<double>& b)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = a[i] * b[i];
    return out;
}

inline void check_same_dims(const Image2D& a, const Image2D& b)
{
    require(a.width() == b.width() && a.height() == b.height(), ErrorCode::DimensionMismatch,
            "images must have identical dimensions");
    require(a.channels() == 1 && b.channels() == 1, ErrorCode::ChannelMismatch, "metrics need scalar images");
}
} // namespace detail

/// Mean windowed normalized cross-correlation. Windows are clamped at the border; windows where
/// either variance is below epsilon contribute 0.
inline Score lncc(const Image2D& a, const Image2D& b, const MetricConfig& cfg = {})
{
    detail::check_same_dims(a, b);
    const int w = a.width(), h = a.height(), r = cfg.lncc_radius;
    const auto ca = detail::centered(a), cb = detail::centered(b);
    const detail::BoxSums sa(w, h, ca), sb(w, h, cb), saa(w, h, detail::product(ca, ca)),
        sbb(w, h, detail::product(cb, cb)), sab(w, h, detail::product(ca, cb));

    double total = 0.0;
    std::size_t valid = 0;
    for (int y = 0; y < h; ++y)
    {
        const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
        for (int x = 0; x < w; ++x)
        {
            const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
            const double n = static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
            const double ma = sa.sum(x0, y0, x1, y1) / n, mb = sb.sum(x0, y0, x1, y1) / n;
            const double va = saa.sum(x0, y0, x1, y1) / n - ma * ma;
            const double vb = sbb.sum(x0, y0, x1, y1) / n - mb * mb;
            if (va < cfg.variance_epsilon || vb < cfg.variance_epsilon)
                continue;
            const double cov = sab.sum(x0, y0, x1, y1) / n - ma * mb;
            total += std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
            ++valid;
        }
    }
    return {total / static_cast<double>(w * h), valid == 0};
}

/// Central-difference gradient magnitude in pixel units, clamp-to-edge.
inline Image2D gradient_magnitude(const Image2D& img)
{
    require(img.channels() == 1, ErrorCode::ChannelMismatch, "gradient needs a scalar image");
    const int w = img.width(), h = img.height();
    Image2D g(img.grid(), 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
            const double gx = 0.5 * (img.at(std::min(x + 1, w - 1), y) - img.at(std::max(x - 1, 0), y));
            const double gy = 0.5 * (img.at(x, std::min(y + 1, h - 1)) - img.at(x, std::max(y - 1, 0)));
            g.at(x, y) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
        }
    return g;
}

/// Patch-wise linear-combination similarity: each target patch is fitted by
/// α·source + β·|∇source| + γ; local score is the explained fraction of the target variance,
/// aggregated with the target-patch variance as weight.
inline Score lc2(const Image2D& source, const Image2D& target, const MetricConfig& cfg = {})
{
    detail::check_same_dims(source, target);
    const int w = source.width(), h = source.height(), r = cfg.lc2_radius;
    const double eps = cfg.variance_epsilon;
    const auto s = detail::centered(source), g = detail::centered(gradient_magnitude(source)),
               t = detail::centered(target);
    using detail::product;
    const detail::BoxSums Ss(w, h, s), Sg(w, h, g), St(w, h, t), Sss(w, h, product(s, s)), Sgg(w, h, product(g, g)),
        Stt(w, h, product(t, t)), Ssg(w, h, product(s, g)), Sst(w, h, product(s, t)), Sgt(w, h, product(g, t));

    double weighted = 0.0, weights = 0.0;
    for (int y = 0; y < h; ++y)
    {
        const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
        for (int x = 0; x < w; ++x)
        {
            const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
            const double n = static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
            const double ms = Ss.sum(x0, y0, x1, y1) / n, mg = Sg.sum(x0, y0, x1, y1) / n,
                         mt = St.sum(x0, y0, x1, y1) / n;
            const double ctt = Stt.sum(x0, y0, x1, y1) / n - mt * mt;
            if (ctt < eps)
                continue;
            const double css = Sss.sum(x0, y0, x1, y1) / n - ms * ms;
            const double cgg = Sgg.sum(x0, y0, x1, y1) / n - mg * mg;
            const double csg = Ssg.sum(x0, y0, x1, y1) / n - ms * mg;
            const double cst = Sst.sum(x0, y0, x1, y1) / n - ms * mt;
            const double cgt = Sgt.sum(x0, y0, x1, y1) / n - mg * mt;

            double explained = 0.0;
            const double det = css * cgg - csg * csg;
            if (css >= eps && cgg >= eps && det > 1e-10 * css * cgg)
                explained = (cgg * cst * cst - 2.0 * csg * cst * cgt + css * cgt * cgt) / det;
            else
            {
                // reduced span: best single regressor (or the constant alone)
                if (css >= eps)
                    explained = std::max(explained, cst * cst / css);
                if (cgg >= eps)
                    explained = std::max(explained, cgt * cgt / cgg);
            }
            const double local = std::clamp(explained / ctt, 0.0, 1.0);
            weighted += ctt * local;
            weights += ctt;
        }
    }
    if (weights <= 0.0)
        return {0.0, true};
    return {weighted / weights, false};
}

/// x ↦ A·x + b.
struct Affine3
{
    Mat3 a{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    Vec3 b{};

    Vec3 apply(Vec3 p) const
    {
        return {a[0][0] * p.x + a[0][1] * p.y + a[0][2] * p.z + b.x, a[1][0] * p.x + a[1][1] * p.y + a[1][2] * p.z + b.y,
                a[2][0] * p.x + a[2][1] * p.y + a[2][2] * p.z + b.z};
    }
};

/// Mean over moving positions of the dot product with the trilinearly sampled fixed features.
inline double disa_similarity(const FeatureMap& moving, const FeatureVolume& fixed, const Affine3& transform)
{
    require(moving.channels == fixed.channels, ErrorCode::ChannelMismatch,
            "moving and fixed features have different channel counts");
    const std::size_t plane = moving.plane_size();
    std::vector<double> sampled(fixed.channels);
    double total = 0.0;
    for (int j = 0; j < moving.height; ++j)
        for (int i = 0; i < moving.width; ++i)
        {
            const Vec2 p = moving.to_physical(i, j);
            fixed.sample(transform.apply({p.x, p.y, 0.0}), sampled);
            const float* m = moving.data.data() + static_cast<std::size_t>(j) * moving.width + i;
            double dot = 0.0;
            for (int c = 0; c < moving.channels; ++c)
                dot += m[c * plane] * sampled[c];
            total += dot;
        }
    return total / static_cast<double>(plane);
}

/// Mean Euclidean distance between corresponding points.
inline double fre(std::span<const Vec3> a, std::span<const Vec3> b)
{
    require(!a.empty() && a.size() == b.size(), ErrorCode::Fiducial,
            "fiducial lists must be non-empty and of equal length");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        total += norm(a[i] - b[i]);
    return total / static_cast<double>(a.size());
}

} // namespace slicereg
