#pragma once

// Synthetic benchmark cases: blob phantoms, a known curved and warped cut, simulated modality
// change, and fiducials consistent with the cut.

#include "error.hpp"
#include "fiducials.hpp"
#include "geometry.hpp"
#include "image.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace slicereg
{

struct PhantomParams
{
    int macro_blobs = 60;
    double macro_sigma_min = 6.0; ///< voxels
    double macro_sigma_max = 14.0;
    int micro_blobs = 6000;
    double micro_sigma_min = 1.2;
    double micro_sigma_max = 2.5;
    double micro_weight = 0.6; ///< micro amplitude relative to macro
};

namespace detail
{
// Adds amplitude·exp(−½‖Rᵀ(x−c)/σ‖²) over the ±3σ bounding box.
inline void add_blob(Volume3D& vol, Vec3 c, Vec3 sigma, const Mat3& r, double amplitude)
{
    const double reach = 3.0 * std::max({sigma.x, sigma.y, sigma.z});
    const int lo[3] = {std::max(0, static_cast<int>(std::floor(c.x - reach))),
                       std::max(0, static_cast<int>(std::floor(c.y - reach))),
                       std::max(0, static_cast<int>(std::floor(c.z - reach)))};
    const int hi[3] = {std::min(vol.nx() - 1, static_cast<int>(std::ceil(c.x + reach))),
                       std::min(vol.ny() - 1, static_cast<int>(std::ceil(c.y + reach))),
                       std::min(vol.nz() - 1, static_cast<int>(std::ceil(c.z + reach)))};
    const double inv[3] = {1.0 / sigma.x, 1.0 / sigma.y, 1.0 / sigma.z};
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
        {
            float* row = &vol.at(0, j, k);
            for (int i = lo[0]; i <= hi[0]; ++i)
            {
                const double d[3] = {i - c.x, j - c.y, k - c.z};
                double q = 0.0;
                for (int a = 0; a < 3; ++a)
                {
                    const double e = (r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2]) * inv[a];
                    q += e * e;
                }
                if (q < 18.0)
                    row[i] += static_cast<float>(amplitude * std::exp(-0.5 * q));
            }
        }
}
} // namespace detail

/// Seeded two-scale blob phantom normalized to [0, 1]; no blobs gives a constant zero volume.
inline Volume3D make_volume(std::uint64_t seed, std::array<int, 3> dims, Vec3 spacing, const PhantomParams& p = {})
{
    for (int d : dims)
        require(d >= 32, ErrorCode::InvalidArgument, "phantom dims must be >= 32 per axis");
    Volume3D vol(dims, spacing);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto blob = [&](double smin, double smax, double amplitude) {
        const Vec3 c{unit(rng) * (dims[0] - 1), unit(rng) * (dims[1] - 1), unit(rng) * (dims[2] - 1)};
        const Vec3 s{smin + (smax - smin) * unit(rng), smin + (smax - smin) * unit(rng),
                     smin + (smax - smin) * unit(rng)};
        const PlanePose orient{0.0, 180.0 * unit(rng) - 90.0, 180.0 * unit(rng) - 90.0, {}};
        detail::add_blob(vol, c, s, rotation_matrix(orient), amplitude);
    };
    for (int b = 0; b < p.macro_blobs; ++b)
        blob(p.macro_sigma_min, p.macro_sigma_max, unit(rng) < 0.7 ? 0.5 + 0.5 * unit(rng) : -0.5 * unit(rng));
    for (int b = 0; b < p.micro_blobs; ++b)
        blob(p.micro_sigma_min, p.micro_sigma_max, p.micro_weight * (2.0 * unit(rng) - 1.0));

    auto data = vol.data();
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    const double lo = *mn, range = static_cast<double>(*mx) - *mn;
    for (float& v : data)
        v = range > 0.0 ? static_cast<float>((v - lo) / range) : 0.0f;
    return vol;
}

struct ModalityParams
{
    double gamma = 1.0;
    bool invert = false;
    double noise_sigma = 0.0; ///< additive Gaussian, in normalized intensity units
};

struct GroundTruth
{
    PlanePose pose;
    OutOfPlaneGrid surface;
    InPlaneGrid inplane;
    ModalityParams modality;
    std::uint64_t seed = 0;
    Grid2D histology_grid{};
    std::vector<Fiducial> fiducials_3d; ///< µm, volume frame
    std::vector<Fiducial> fiducials_2d; ///< µm, histology frame (z = 0)
};

struct CaseParams
{
    double max_rotation_deg = 5.0;
    double tz_min_um = 100.0;
    double tz_max_um = 230.0;
    double surface_amplitude_um = 15.0; ///< max |control value|
    double inplane_amplitude_um = 10.0; ///< max |component| per control point
    int grid_size = 4;
    int n_fiducials = 20;
    ModalityParams modality{1.6, false, 0.03};
};

namespace detail
{
// Subtracts the least-squares plane a + b·i + c·j from the control values, so the pose alone
// carries the tilt and offset of the cut.
inline void remove_plane(OutOfPlaneGrid& g)
{
    const int nu = g.nu(), nv = g.nv();
    const double mi = 0.5 * (nu - 1), mj = 0.5 * (nv - 1);
    double mean = 0.0, si = 0.0, sj = 0.0, ii = 0.0, jj = 0.0;
    for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nu; ++i)
        {
            mean += g(i, j);
            si += (i - mi) * g(i, j);
            sj += (j - mj) * g(i, j);
            ii += (i - mi) * (i - mi);
            jj += (j - mj) * (j - mj);
        }
    mean /= nu * nv;
    for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nu; ++i)
            g(i, j) -= mean + si / ii * (i - mi) + sj / jj * (j - mj);
}
} // namespace detail

/// Inverse of the in-plane warp q ↦ q + d(q) by fixed-point iteration (d is a contraction for small grids).
inline Vec2 invert_inplane(const InPlaneGrid& grid, Vec2 p)
{
    Vec2 q = p;
    for (int it = 0; it < 200; ++it)
    {
        const Vec2 next = p - grid.eval(q.x, q.y);
        const double step = std::hypot(next.x - q.x, next.y - q.y);
        q = next;
        if (step < 1e-13)
            break;
    }
    return q;
}

/// Random ground truth whose histology lattice is the volume's xy lattice.
inline GroundTruth random_ground_truth(std::uint64_t seed, const Volume3D& vol, const CaseParams& p = {})
{
    require(p.tz_min_um <= p.tz_max_um, ErrorCode::InvalidArgument, "tz range is empty");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> sym(-1.0, 1.0), unit(0.0, 1.0);
    GroundTruth gt;
    gt.seed = seed;
    gt.modality = p.modality;
    gt.histology_grid = Grid2D{vol.nx(), vol.ny(), {vol.spacing().x, vol.spacing().y}, {vol.origin().x, vol.origin().y}};
    gt.pose.center = gt.histology_grid.center();
    gt.pose.tz = p.tz_min_um + (p.tz_max_um - p.tz_min_um) * unit(rng);
    gt.pose.rx = p.max_rotation_deg * sym(rng);
    gt.pose.ry = p.max_rotation_deg * sym(rng);
    const GridExtent ext = GridExtent::of(gt.histology_grid);
    gt.surface = OutOfPlaneGrid(p.grid_size, p.grid_size, ext);
    for (double& v : gt.surface.values())
        v = p.surface_amplitude_um * sym(rng);
    detail::remove_plane(gt.surface);
    gt.inplane = InPlaneGrid(p.grid_size, p.grid_size, ext);
    for (Vec2& v : gt.inplane.values())
        v = {p.inplane_amplitude_um * sym(rng), p.inplane_amplitude_um * sym(rng)};

    // fiducials on the true surface, away from the border
    for (int f = 0; f < p.n_fiducials; ++f)
    {
        const double u = ext.u0 + (ext.u1 - ext.u0) * (0.1 + 0.8 * unit(rng));
        const double v = ext.v0 + (ext.v1 - ext.v0) * (0.1 + 0.8 * unit(rng));
        gt.fiducials_3d.push_back({"F" + std::to_string(f + 1), plane_to_world(gt.pose, u, v, gt.surface.eval(u, v))});
    }
    return gt;
}

struct SynthPair
{
    Image2D histology;
    GroundTruth truth;
};

/// Cuts the volume along the true surface, warps, remaps intensities, adds noise, and maps the
/// 3D fiducials into the histology frame.
inline SynthPair make_pair(const Volume3D& vol, GroundTruth gt)
{
    gt.pose.validate();
    const Grid2D& g = gt.histology_grid;
    Image2D img = warp_2d(extract_slice(vol, gt.pose, gt.surface, g), gt.inplane);

    const ModalityParams& m = gt.modality;
    require(m.gamma > 0.0 && m.noise_sigma >= 0.0, ErrorCode::InvalidArgument, "invalid modality parameters");
    std::mt19937_64 rng(gt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (float& v : img.data())
    {
        double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
        if (m.gamma != 1.0)
            x = std::pow(x, m.gamma);
        if (m.invert)
            x = 1.0 - x;
        if (m.noise_sigma > 0.0)
            x += m.noise_sigma * noise(rng);
        v = static_cast<float>(x);
    }

    gt.fiducials_2d.clear();
    std::string outside;
    const GridExtent ext = GridExtent::of(g);
    for (const auto& f : gt.fiducials_3d)
    {
        const Vec3 uvw = world_to_plane(gt.pose, f.position);
        const Vec2 q = invert_inplane(gt.inplane, {uvw.x, uvw.y});
        if (q.x < ext.u0 || q.x > ext.u1 || q.y < ext.v0 || q.y > ext.v1)
            outside += (outside.empty() ? "" : ", ") + f.id;
        gt.fiducials_2d.push_back({f.id, {q.x, q.y, 0.0}});
    }
    require(outside.empty(), ErrorCode::Fiducial, "fiducials outside the slice domain: " + outside);
    return {std::move(img), std::move(gt)};
}

} // namespace slicereg
