#pragma once

// Slice-to-volume registration pipeline: preprocessing, plane initialization (manual, intensity
// scan, or learned features), plane-pose refinement, out-of-plane surface optimization, and the
// nested 2D-2D in-plane registration that scores every candidate cut.

#include "disa.hpp"
#include "error.hpp"
#include "features.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "preprocess.hpp"
#include "similarity.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace slicereg
{

enum class InitMode
{
    Disa,
    Intensity,
    Manual,
};

inline const char* to_string(InitMode m)
{
    switch (m)
    {
        case InitMode::Disa: return "disa";
        case InitMode::Intensity: return "intensity";
        case InitMode::Manual: return "manual";
    }
    return "?";
}

inline InitMode parse_init_mode(const std::string& s)
{
    if (s == "disa")
        return InitMode::Disa;
    if (s == "intensity")
        return InitMode::Intensity;
    if (s == "manual")
        return InitMode::Manual;
    throw Error(ErrorCode::Config, "unknown init mode '" + s + "' (expected disa, intensity or manual)");
}

struct ManualPose
{
    double tz = 0.0; ///< µm
    double rx = 0.0; ///< degrees
    double ry = 0.0;
};

struct RegisterConfig
{
    InitMode init_mode = InitMode::Intensity;
    int n_depths = 10;
    double rot_bound_deg = 10.0;
    double trans_bound_um = 400.0;
    std::optional<std::array<double, 2>> depth_range_um; ///< default: top 20% of the volume
    double pose_stop = 1e-4;
    int oop_restarts = 5;
    int oop_iterations = 80; ///< objective evaluations per restart
    double oop_bound_um = 200.0;
    double inplane_bound_um = 50.0;
    int grid_size = 4;
    int inner_max_evals = 40;       ///< nested registration inside outer objectives
    int final_inner_max_evals = 600; ///< last in-plane registration and intensity-init scoring
    double working_spacing_um = 10.4;
    double percentile_lo = 0.01;
    double percentile_hi = 0.99;
    double crop_threshold = 0.05;
    std::uint64_t seed = 0;
    MetricConfig metric;
    std::optional<ManualPose> manual_pose;

    void validate() const
    {
        require(n_depths >= 1, ErrorCode::Config, "n_depths must be >= 1");
        require(rot_bound_deg > 0.0 && rot_bound_deg < 90.0, ErrorCode::Config, "rot_bound_deg must be in (0, 90)");
        require(trans_bound_um > 0.0, ErrorCode::Config, "trans_bound_um must be > 0");
        require(pose_stop > 0.0, ErrorCode::Config, "pose_stop must be > 0");
        require(oop_restarts >= 1, ErrorCode::Config, "oop_restarts must be >= 1");
        require(oop_iterations >= 1, ErrorCode::Config, "oop_iterations must be >= 1");
        require(oop_bound_um > 0.0, ErrorCode::Config, "oop_bound_um must be > 0");
        require(inplane_bound_um > 0.0, ErrorCode::Config, "inplane_bound_um must be > 0");
        require(grid_size >= 4, ErrorCode::Config, "grid_size must be >= 4");
        require(inner_max_evals >= 1 && final_inner_max_evals >= 1, ErrorCode::Config,
                "inner evaluation budgets must be >= 1");
        require(working_spacing_um > 0.0, ErrorCode::Config, "working_spacing_um must be > 0");
        require(0.0 <= percentile_lo && percentile_lo < percentile_hi && percentile_hi <= 1.0, ErrorCode::Config,
                "percentiles must satisfy 0 <= lo < hi <= 1");
        require(crop_threshold >= 0.0 && crop_threshold <= 1.0, ErrorCode::Config, "crop_threshold must be in [0, 1]");
        if (depth_range_um)
            require((*depth_range_um)[0] < (*depth_range_um)[1], ErrorCode::Config,
                    "depth range needs lo < hi");
        if (init_mode == InitMode::Manual)
            require(manual_pose.has_value(), ErrorCode::Config, "manual init needs a manual pose");
        metric.validate();
    }
};

// ---------------------------------------------------------------------------------------------
// In-plane registration

struct InnerResult
{
    InPlaneGrid grid;
    double score = 0.0;
    bool degenerate = false;
    int evaluations = 0;
};

struct InnerOptions
{
    int max_evaluations = 0;    ///< 0 uses cfg.final_inner_max_evals
    int interpolation_points = 0; ///< 0 uses 2n+1
    const InPlaneGrid* warm_start = nullptr;
};

/// Maximizes lncc(warp_2d(ct_slice, grid), histology) over the in-plane control displacements.
inline InnerResult inner_register_2d(const Image2D& ct_slice, const Image2D& histology, const RegisterConfig& cfg,
                                     const InnerOptions& opt = {})
{
    require(ct_slice.grid() == histology.grid(), ErrorCode::DimensionMismatch,
            "in-plane registration needs images on the same lattice");
    const int n = cfg.grid_size;
    const Vec2 s = histology.spacing();
    InnerResult r{InPlaneGrid(n, n, GridExtent::of(histology.grid())), 0.0, false, 0};

    const Score zero = lncc(ct_slice, histology, cfg.metric);
    r.evaluations = 1;
    if (zero.degenerate)
    {
        r.degenerate = true;
        return r;
    }
    r.score = zero.value;

    // parameters: control displacements in histology pixels, x then y per control point
    const std::size_t m = r.grid.size();
    const double bx = cfg.inplane_bound_um / s.x, by = cfg.inplane_bound_um / s.y;
    OptimProblem p;
    p.x0.assign(2 * m, 0.0);
    p.lower.resize(2 * m);
    p.upper.resize(2 * m);
    for (std::size_t i = 0; i < m; ++i)
    {
        p.lower[2 * i] = -bx;
        p.upper[2 * i] = bx;
        p.lower[2 * i + 1] = -by;
        p.upper[2 * i + 1] = by;
        if (opt.warm_start)
        {
            p.x0[2 * i] = std::clamp(opt.warm_start->values()[i].x / s.x, -bx, bx);
            p.x0[2 * i + 1] = std::clamp(opt.warm_start->values()[i].y / s.y, -by, by);
        }
    }
    InPlaneGrid g = r.grid;
    auto to_grid = [&](std::span<const double> x) {
        for (std::size_t i = 0; i < m; ++i)
            g.values()[i] = {x[2 * i] * s.x, x[2 * i + 1] * s.y};
    };
    p.objective = [&](std::span<const double> x) {
        to_grid(x);
        return -lncc(warp_2d(ct_slice, g), histology, cfg.metric).value;
    };
    p.stop = cfg.pose_stop;
    p.initial_step = std::min(1.0, 0.25 * std::min(bx, by));
    p.max_evaluations = opt.max_evaluations > 0 ? opt.max_evaluations : cfg.final_inner_max_evals;
    p.interpolation_points = opt.interpolation_points;
    const OptimResult o = minimize_df(p);
    r.evaluations += o.evaluations;
    if (-o.f > r.score)
    {
        r.score = -o.f;
        to_grid(o.x);
        r.grid = g;
    }
    return r;
}

// ---------------------------------------------------------------------------------------------
// Cut scoring shared by the outer optimizers

/// Objective s(I_histo, I_ct(T, D)): the capped in-plane registration score of the cut, warm-started
/// from the best in-plane grid found so far by this instance.
class CutObjective
{
public:
    CutObjective(const Volume3D& vol, const Image2D& histology, const RegisterConfig& cfg, InPlaneGrid warm)
        : m_vol(vol)
        , m_hist(histology)
        , m_cfg(cfg)
        , m_warm(std::move(warm))
        , m_best_grid(m_warm)
    {
    }

    double operator()(const PlanePose& pose, const OutOfPlaneGrid* surface)
    {
        const Image2D slice = extract_slice(m_vol, pose, surface, m_hist.grid());
        InnerOptions opt;
        opt.max_evaluations = m_cfg.inner_max_evals;
        opt.interpolation_points = 2 * static_cast<int>(m_warm.size()) + 2; // n + 2 for the 2n parameters
        opt.warm_start = &m_warm;
        const InnerResult r = inner_register_2d(slice, m_hist, m_cfg, opt);
        ++m_calls;
        m_inner_evals += r.evaluations;
        if (m_calls == 1 || r.score > m_best)
        {
            m_best = r.score;
            m_best_grid = r.grid;
            m_warm = r.grid;
        }
        return r.score;
    }

    double best() const { return m_best; }
    const InPlaneGrid& best_grid() const { return m_best_grid; }
    int calls() const { return m_calls; }
    long inner_evaluations() const { return m_inner_evals; }

private:
    const Volume3D& m_vol;
    const Image2D& m_hist;
    const RegisterConfig& m_cfg;
    InPlaneGrid m_warm;
    InPlaneGrid m_best_grid;
    double m_best = 0.0;
    int m_calls = 0;
    long m_inner_evals = 0;
};

// ---------------------------------------------------------------------------------------------
// Initialization

struct InitResult
{
    InitMode mode = InitMode::Manual;
    PlanePose pose;
    double score = 0.0; ///< method-specific (inner LNCC for intensity, feature similarity for disa)
    bool degenerate = false;
    nlohmann::json details = nlohmann::json::object();
};

/// Default depth interval: the top 20% of the volume's z extent, starting at its first slice.
inline std::array<double, 2> default_depth_range(double z_first, double z_last)
{
    return {z_first, z_first + 0.2 * (z_last - z_first)};
}

inline std::array<double, 2> resolve_depth_range(const RegisterConfig& cfg, double z_first, double z_last)
{
    if (!cfg.depth_range_um)
        return default_depth_range(z_first, z_last);
    const auto r = *cfg.depth_range_um;
    require(r[0] < r[1], ErrorCode::Config, "depth range needs lo < hi");
    require(r[1] >= z_first && r[0] <= z_last, ErrorCode::Config, "depth range lies outside the volume");
    return r;
}

/// Scans axis-aligned slices at every z index in the depth range and keeps the one with the best
/// in-plane registration score (ties go to the shallower slice).
inline InitResult init_intensity(const Volume3D& vol, const Image2D& histology, const RegisterConfig& cfg,
                                 Vec2 center, std::array<double, 2> depth_range)
{
    std::vector<int> ks;
    for (int k = 0; k < vol.nz(); ++k)
    {
        const double z = vol.to_physical(0, 0, k).z;
        if (z >= depth_range[0] - 1e-9 && z <= depth_range[1] + 1e-9)
            ks.push_back(k);
    }
    require(!ks.empty(), ErrorCode::Config, "depth range contains no volume slice");

    std::vector<InnerResult> results(ks.size());
    parallel_for(static_cast<int>(ks.size()), [&](int t) {
        const PlanePose pose{vol.to_physical(0, 0, ks[t]).z, 0.0, 0.0, center};
        InnerOptions opt;
        opt.max_evaluations = cfg.inner_max_evals;
        opt.interpolation_points = 2 * cfg.grid_size * cfg.grid_size + 2;
        results[t] = inner_register_2d(extract_slice(vol, pose, histology.grid()), histology, cfg, opt);
    });

    InitResult r;
    r.mode = InitMode::Intensity;
    std::size_t best = 0;
    nlohmann::json scan = nlohmann::json::array();
    for (std::size_t t = 0; t < ks.size(); ++t)
    {
        scan.push_back({{"z_um", vol.to_physical(0, 0, ks[t]).z}, {"score", results[t].score}});
        if (results[t].score > results[best].score)
            best = t;
    }
    r.pose = PlanePose{vol.to_physical(0, 0, ks[best]).z, 0.0, 0.0, center};
    r.score = results[best].score;
    r.degenerate = std::all_of(results.begin(), results.end(), [](const InnerResult& x) { return x.degenerate; });
    r.details = {{"depth_range_um", {depth_range[0], depth_range[1]}}, {"scan", scan}};
    return r;
}

namespace detail
{
inline Mat3 matmul(const Mat3& a, const Mat3& b)
{
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                c[i][j] += a[i][k] * b[k][j];
    return c;
}

// Ry·Rx·Rz, degrees.
inline Mat3 rigid_rotation(double rx, double ry, double rz)
{
    const double c = std::cos(deg2rad(rz)), s = std::sin(deg2rad(rz));
    const Mat3 Rz{{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
    return matmul(rotation_matrix(PlanePose{0.0, rx, ry, {}}), Rz);
}

// X = A(p − c) + c + (0, 0, z) + t for moving points p = (x, y, 0).
inline Affine3 about_center(const Mat3& a, Vec2 center, double z, Vec3 t)
{
    Affine3 f;
    f.a = a;
    const Vec3 c{center.x, center.y, 0.0};
    const Vec3 ac{a[0][0] * c.x + a[0][1] * c.y, a[1][0] * c.x + a[1][1] * c.y, a[2][0] * c.x + a[2][1] * c.y};
    f.b = c - ac + Vec3{0.0, 0.0, z} + t;
    return f;
}

/// Plane pose of the image of the moving plane z = 0 under f: normal from the transformed in-plane
/// axes, tz where the plane meets the vertical line through the pose center.
inline PlanePose project_to_pose(const Affine3& f, Vec2 center)
{
    const Vec3 ex{f.a[0][0], f.a[1][0], f.a[2][0]}, ey{f.a[0][1], f.a[1][1], f.a[2][1]};
    Vec3 n{ex.y * ey.z - ex.z * ey.y, ex.z * ey.x - ex.x * ey.z, ex.x * ey.y - ex.y * ey.x};
    const double len = norm(n);
    require(len > 0.0 && std::abs(n.z) > 1e-9 * len, ErrorCode::Degenerate, "transformed plane is not transversal");
    n = {n.x / len, n.y / len, n.z / len};
    if (n.z < 0.0)
        n = {-n.x, -n.y, -n.z};
    const Vec3 x0 = f.apply({center.x, center.y, 0.0});
    PlanePose p;
    p.center = center;
    p.rx = rad2deg(-std::asin(std::clamp(n.y, -1.0, 1.0)));
    p.ry = rad2deg(std::atan2(n.x, n.z));
    p.tz = x0.z - (n.x * (center.x - x0.x) + n.y * (center.y - x0.y)) / n.z;
    return p;
}

inline bool all_zero(const std::vector<float>& v)
{
    return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}
} // namespace detail

/// Feature-based initialization: from each of n_depths equidistant start depths, a rigid then a
/// 12-parameter affine BFGS maximization of the feature dot product; the best trial is projected
/// onto the plane pose.
inline InitResult init_disa(const FeatureMap& moving, const FeatureVolume& fixed, const RegisterConfig& cfg,
                            Vec2 center, std::array<double, 2> depth_range)
{
    require(cfg.n_depths >= 1 && depth_range[0] <= depth_range[1], ErrorCode::Config,
            "feature initialization needs at least one feasible depth");
    require(moving.channels == fixed.channels, ErrorCode::ChannelMismatch,
            "moving and fixed features have different channel counts");
    const int nd = cfg.n_depths;
    const double rb = cfg.rot_bound_deg, tb = cfg.trans_bound_um;
    const double ab = std::sin(deg2rad(rb)) + 1e-3;

    struct Trial
    {
        double z0 = 0.0;
        double rigid_score = 0.0;
        double score = 0.0;
        std::array<double, 6> rigid{};
        Affine3 transform;
        int evaluations = 0;
        bool warning = false;
    };
    std::vector<Trial> trials(nd);
    const bool degenerate = detail::all_zero(moving.data) || detail::all_zero(fixed.data);

    parallel_for(nd, [&](int d) {
        Trial& t = trials[d];
        t.z0 = nd == 1 ? 0.5 * (depth_range[0] + depth_range[1])
                       : depth_range[0] + (depth_range[1] - depth_range[0]) * d / (nd - 1.0);
        t.transform = detail::about_center(detail::rigid_rotation(0, 0, 0), center, t.z0, {});
        if (degenerate)
            return;

        // rigid: (tx, ty, tz) µm, (rx, ry, rz) degrees
        OptimProblem rig;
        rig.x0.assign(6, 0.0);
        rig.lower = {-tb, -tb, -tb, -rb, -rb, -rb};
        rig.upper = {tb, tb, tb, rb, rb, rb};
        rig.stop = cfg.pose_stop;
        auto rigid_transform = [&](std::span<const double> x) {
            return detail::about_center(detail::rigid_rotation(x[3], x[4], x[5]), center, t.z0, {x[0], x[1], x[2]});
        };
        rig.objective = [&](std::span<const double> x) { return -disa_similarity(moving, fixed, rigid_transform(x)); };
        const OptimResult r1 = minimize_bfgs(rig);
        std::copy(r1.x.begin(), r1.x.end(), t.rigid.begin());
        t.rigid_score = -r1.f;

        // affine: 9 matrix entries within ±sin(rot bound) of the identity, translations as above
        const Affine3 start = rigid_transform(r1.x);
        OptimProblem aff;
        aff.x0.resize(12);
        aff.lower.resize(12);
        aff.upper.resize(12);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
            {
                const double id = i == j ? 1.0 : 0.0;
                aff.lower[3 * i + j] = id - ab;
                aff.upper[3 * i + j] = id + ab;
                aff.x0[3 * i + j] = std::clamp(start.a[i][j], id - ab, id + ab);
            }
        for (int i = 0; i < 3; ++i)
        {
            aff.lower[9 + i] = -tb;
            aff.upper[9 + i] = tb;
            aff.x0[9 + i] = r1.x[i];
        }
        aff.stop = cfg.pose_stop;
        auto affine_transform = [&](std::span<const double> x) {
            Mat3 a;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    a[i][j] = x[3 * i + j];
            return detail::about_center(a, center, t.z0, {x[9], x[10], x[11]});
        };
        aff.objective = [&](std::span<const double> x) { return -disa_similarity(moving, fixed, affine_transform(x)); };
        const OptimResult r2 = minimize_bfgs(aff);
        t.evaluations = r1.evaluations + r2.evaluations;
        t.warning = r1.warning || r2.warning;
        if (-r2.f >= t.rigid_score)
        {
            t.score = -r2.f;
            t.transform = affine_transform(r2.x);
        }
        else
        {
            t.score = t.rigid_score;
            t.transform = start;
        }
    });

    InitResult out;
    out.mode = InitMode::Disa;
    out.degenerate = degenerate;
    int best = 0;
    nlohmann::json log = nlohmann::json::array();
    for (int d = 0; d < nd; ++d)
    {
        const Trial& t = trials[d];
        if (t.score > trials[best].score)
            best = d;
        nlohmann::json a = nlohmann::json::array();
        for (int i = 0; i < 3; ++i)
            a.push_back({t.transform.a[i][0], t.transform.a[i][1], t.transform.a[i][2]});
        log.push_back({{"start_z_um", t.z0},
                       {"rigid_score", t.rigid_score},
                       {"score", t.score},
                       {"rigid_translation_um", {t.rigid[0], t.rigid[1], t.rigid[2]}},
                       {"rigid_rotation_deg", {t.rigid[3], t.rigid[4], t.rigid[5]}},
                       {"affine_matrix", a},
                       {"affine_offset_um", {t.transform.b.x, t.transform.b.y, t.transform.b.z}},
                       {"evaluations", t.evaluations},
                       {"line_search_warning", t.warning}});
    }
    const Trial& b = trials[best];
    out.pose = degenerate ? PlanePose{b.z0, 0.0, 0.0, center} : detail::project_to_pose(b.transform, center);
    out.score = b.score;
    // in-plane components are not part of the plane pose; keep them for inspection
    const Vec3 c0 = b.transform.apply({center.x, center.y, 0.0});
    out.details = {{"depth_range_um", {depth_range[0], depth_range[1]}},
                   {"best_trial", best},
                   {"discarded_inplane_shift_um", {c0.x - center.x, c0.y - center.y}},
                   {"discarded_inplane_rotation_deg", b.rigid[5]},
                   {"trials", log}};
    return out;
}

// ---------------------------------------------------------------------------------------------
// Refinement

struct StageResult
{
    double objective = 0.0;
    int evaluations = 0;
    long inner_evaluations = 0;
};

struct PoseResult
{
    PlanePose pose;
    StageResult stage;
    InPlaneGrid grid;
};

/// Plane-pose refinement over (tz, rx, ry) within the configured bounds around pose0. Parameters
/// are scaled to working voxels (tz) and degrees.
inline PoseResult refine_pose(const Volume3D& vol, const Image2D& histology, const PlanePose& pose0,
                              const RegisterConfig& cfg, CutObjective& objective)
{
    const double sz = vol.spacing().z;
    const double tb = cfg.trans_bound_um / sz, rb = cfg.rot_bound_deg;
    OptimProblem p;
    p.x0 = {pose0.tz / sz, pose0.rx, pose0.ry};
    p.lower = {p.x0[0] - tb, std::max(-89.0, pose0.rx - rb), std::max(-89.0, pose0.ry - rb)};
    p.upper = {p.x0[0] + tb, std::min(89.0, pose0.rx + rb), std::min(89.0, pose0.ry + rb)};
    for (int i = 0; i < 3; ++i)
        p.x0[i] = std::clamp(p.x0[i], p.lower[i], p.upper[i]);
    auto pose_of = [&](std::span<const double> x) { return PlanePose{x[0] * sz, x[1], x[2], pose0.center}; };
    p.objective = [&](std::span<const double> x) {
        const PlanePose pose = pose_of(x);
        return -objective(pose, nullptr);
    };
    p.stop = cfg.pose_stop;
    p.initial_step = 1.0;
    p.max_evaluations = 400;
    const long inner0 = objective.inner_evaluations();
    const OptimResult r = minimize_df(p);
    (void)histology;
    return {pose_of(r.x), {-r.f, r.evaluations, objective.inner_evaluations() - inner0}, objective.best_grid()};
}

inline PoseResult refine_pose(const Volume3D& vol, const Image2D& histology, const PlanePose& pose0,
                              const RegisterConfig& cfg)
{
    CutObjective obj(vol, histology, cfg, InPlaneGrid(cfg.grid_size, cfg.grid_size, GridExtent::of(histology.grid())));
    return refine_pose(vol, histology, pose0, cfg, obj);
}

struct SurfaceResult
{
    OutOfPlaneGrid surface;
    StageResult stage;
    InPlaneGrid grid;
    std::vector<double> restart_scores;
    int best_restart = 0;
};

/// Out-of-plane surface optimization: oop_restarts independent bounded runs over the control
/// z-displacements (first from zero, the rest from seeded uniform draws in ±oop_bound/2), each
/// capped at oop_iterations evaluations. Parameters are in working z voxels.
inline SurfaceResult optimize_out_of_plane(const Volume3D& vol, const Image2D& histology, const PlanePose& pose,
                                           const RegisterConfig& cfg, const InPlaneGrid& warm)
{
    const int n = cfg.grid_size;
    const std::size_t m = static_cast<std::size_t>(n) * n;
    const double sz = vol.spacing().z, b = cfg.oop_bound_um / sz;
    const GridExtent ext = GridExtent::of(histology.grid());

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-0.5 * b, 0.5 * b);
    std::vector<std::vector<double>> starts(cfg.oop_restarts, std::vector<double>(m, 0.0));
    for (int r = 1; r < cfg.oop_restarts; ++r)
        for (double& v : starts[r])
            v = u(rng);

    struct Run
    {
        OptimResult opt;
        InPlaneGrid grid;
        long inner = 0;
    };
    std::vector<Run> runs(cfg.oop_restarts);
    parallel_for(cfg.oop_restarts, [&](int r) {
        CutObjective obj(vol, histology, cfg, warm);
        OutOfPlaneGrid surface(n, n, ext);
        OptimProblem p;
        p.x0 = starts[r];
        p.lower.assign(m, -b);
        p.upper.assign(m, b);
        p.objective = [&](std::span<const double> x) {
            for (std::size_t i = 0; i < m; ++i)
                surface.values()[i] = x[i] * sz;
            return -obj(pose, &surface);
        };
        p.stop = cfg.pose_stop;
        p.initial_step = std::min(1.0, 0.25 * b);
        p.max_evaluations = cfg.oop_iterations;
        runs[r].opt = minimize_df(p);
        runs[r].grid = obj.best_grid();
        runs[r].inner = obj.inner_evaluations();
    });

    SurfaceResult out{OutOfPlaneGrid(n, n, ext), {}, warm, {}, 0};
    for (int r = 0; r < cfg.oop_restarts; ++r)
    {
        out.restart_scores.push_back(-runs[r].opt.f);
        if (-runs[r].opt.f > -runs[out.best_restart].opt.f)
            out.best_restart = r;
        out.stage.evaluations += runs[r].opt.evaluations;
        out.stage.inner_evaluations += runs[r].inner;
    }
    const Run& best = runs[out.best_restart];
    for (std::size_t i = 0; i < m; ++i)
        out.surface.values()[i] = best.opt.x[i] * sz;
    out.stage.objective = -best.opt.f;
    out.grid = best.grid;
    return out;
}

// ---------------------------------------------------------------------------------------------
// Pipeline

struct WorkingData
{
    Volume3D volume;
    Image2D histology;
    Vec2 center{};               ///< pose pivot: physical center of the input histology
    std::array<double, 2> depth_range{};
    nlohmann::json notes = nlohmann::json::object();
};

/// grayscale → crop → percentile normalization (foreground statistics) → resample to the working spacing.
inline WorkingData preprocess(const Volume3D& vol, const Image2D& histology, const RegisterConfig& cfg)
{
    WorkingData w;
    Image2D h = histology.channels() == 3 ? to_grayscale(histology) : histology;
    require(h.channels() == 1, ErrorCode::InvalidArgument, "histology must have 1 or 3 channels");
    w.center = histology.grid().center();

    auto hc = crop_to_foreground(h, cfg.crop_threshold);
    auto hn = percentile_normalize(hc.image, cfg.percentile_lo, cfg.percentile_hi);
    require(!hn.degenerate, ErrorCode::Degenerate, "histology has no intensity range after cropping");
    w.histology = resample(hn.image, {cfg.working_spacing_um, cfg.working_spacing_um});

    auto vc = crop_to_foreground(vol, cfg.crop_threshold);
    auto vn = percentile_normalize(vc.image, cfg.percentile_lo, cfg.percentile_hi);
    require(!vn.degenerate, ErrorCode::Degenerate, "volume has no intensity range after cropping");
    const double ws = cfg.working_spacing_um;
    w.volume = resample(vn.image, {ws, ws, ws});

    const double z_first = w.volume.origin().z;
    const double z_last = w.volume.to_physical(0, 0, w.volume.nz() - 1).z;
    w.depth_range = resolve_depth_range(cfg, z_first, z_last);

    w.notes = {
        {"order", "grayscale, crop, percentile normalization, resample"},
        {"normalization_statistics", "foreground (after crop)"},
        {"histology",
         {{"input_channels", histology.channels()},
          {"input_dims", {histology.width(), histology.height()}},
          {"crop_offset_um", {hc.offset.x, hc.offset.y}},
          {"percentiles", {hn.p_lo, hn.p_hi}},
          {"working_dims", {w.histology.width(), w.histology.height()}}}},
        {"volume",
         {{"input_dims", {vol.nx(), vol.ny(), vol.nz()}},
          {"crop_offset_um", {vc.offset.x, vc.offset.y, vc.offset.z}},
          {"percentiles", {vn.p_lo, vn.p_hi}},
          {"working_dims", {w.volume.nx(), w.volume.ny(), w.volume.nz()}}}},
        {"working_spacing_um", ws},
        {"depth_range_um", {w.depth_range[0], w.depth_range[1]}},
        {"depth_range_source", cfg.depth_range_um ? "config" : "default (top 20% of the volume)"},
    };
    return w;
}

struct StageRecord
{
    std::string name;
    double objective = 0.0;
    int evaluations = 0;
    long inner_evaluations = 0;
    double seconds = 0.0;
};

struct RegistrationResult
{
    RegisterConfig config;
    InitResult init;
    PlanePose pose;
    OutOfPlaneGrid surface;
    InPlaneGrid inplane;
    Score lncc_pre, lncc_post, lc2_pre, lc2_post;
    std::vector<StageRecord> stages;
    std::vector<double> oop_restart_scores;
    Image2D histology;        ///< working histology
    Image2D registered_slice; ///< warped CT cut on the working histology lattice
    nlohmann::json preprocessing = nlohmann::json::object();
};

namespace detail
{
class Stopwatch
{
public:
    double lap()
    {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - m_t).count();
        m_t = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point m_t = std::chrono::steady_clock::now();
};
} // namespace detail

/// Full pipeline on raw inputs. `net` is required for disa initialization.
inline RegistrationResult register_slice(const Volume3D& vol, const Image2D& histology, const RegisterConfig& cfg,
                                         const ConvNet* net = nullptr)
{
    cfg.validate();
    require(cfg.init_mode != InitMode::Disa || net != nullptr, ErrorCode::Config,
            "disa initialization needs network weights");

    detail::Stopwatch clock;
    RegistrationResult res;
    res.config = cfg;
    WorkingData w = preprocess(vol, histology, cfg);
    res.preprocessing = w.notes;
    res.stages.push_back({"preprocess", 0.0, 0, 0, clock.lap()});
    const Volume3D& V = w.volume;
    const Image2D& H = w.histology;
    const int n = cfg.grid_size;

    // initialization
    switch (cfg.init_mode)
    {
        case InitMode::Manual:
            res.init.mode = InitMode::Manual;
            res.init.pose = PlanePose{cfg.manual_pose->tz, cfg.manual_pose->rx, cfg.manual_pose->ry, w.center};
            res.init.pose.validate();
            break;
        case InitMode::Intensity: res.init = init_intensity(V, H, cfg, w.center, w.depth_range); break;
        case InitMode::Disa:
        {
            const FeatureMap fh = forward(*net, standardize(H));
            const FeatureVolume fv = feature_volume(*net, standardize(V));
            res.init = init_disa(fh, fv, cfg, w.center, w.depth_range);
            require(!res.init.degenerate, ErrorCode::Degenerate, "feature initialization is degenerate (all-zero features)");
            break;
        }
    }
    CutObjective init_obj(V, H, cfg, InPlaneGrid(n, n, GridExtent::of(H.grid())));
    const double init_objective = init_obj(res.init.pose, nullptr);
    res.stages.push_back({"init", init_objective, init_obj.calls(), init_obj.inner_evaluations(), clock.lap()});

    // plane pose, warm-started from the init in-plane grid
    CutObjective pose_obj(V, H, cfg, init_obj.best_grid());
    PoseResult pr = refine_pose(V, H, res.init.pose, cfg, pose_obj);
    if (pr.stage.objective < init_objective)
    {
        pr.pose = res.init.pose;
        pr.stage.objective = init_objective;
        pr.grid = init_obj.best_grid();
    }
    res.stages.push_back({"refine_pose", pr.stage.objective, pr.stage.evaluations, pr.stage.inner_evaluations, clock.lap()});
    res.pose = pr.pose;

    // out-of-plane surface
    SurfaceResult sr = optimize_out_of_plane(V, H, pr.pose, cfg, pr.grid);
    InPlaneGrid grid = pr.grid;
    res.surface = OutOfPlaneGrid(n, n, GridExtent::of(H.grid()));
    double objective = pr.stage.objective;
    if (sr.stage.objective >= objective)
    {
        res.surface = sr.surface;
        grid = sr.grid;
        objective = sr.stage.objective;
    }
    res.oop_restart_scores = sr.restart_scores;
    res.stages.push_back({"out_of_plane", objective, sr.stage.evaluations, sr.stage.inner_evaluations, clock.lap()});

    // final in-plane registration with the full budget
    const Image2D cut = extract_slice(V, res.pose, res.surface, H.grid());
    InnerOptions opt;
    opt.warm_start = &grid;
    const InnerResult fin = inner_register_2d(cut, H, cfg, opt);
    res.inplane = fin.score >= objective ? fin.grid : grid;
    objective = std::max(objective, fin.score);
    res.stages.push_back({"final_inplane", objective, fin.evaluations, fin.evaluations, clock.lap()});

    res.registered_slice = warp_2d(cut, res.inplane);
    res.lncc_pre = lncc(cut, H, cfg.metric);
    res.lc2_pre = lc2(cut, H, cfg.metric);
    res.lncc_post = lncc(res.registered_slice, H, cfg.metric);
    res.lc2_post = lc2(res.registered_slice, H, cfg.metric);
    res.histology = H;
    require(!res.lncc_post.degenerate, ErrorCode::Degenerate, "registered slice has no valid similarity windows");
    return res;
}

/// Maps histology-frame points through a result's in-plane warp, surface and pose.
inline Vec3 map_point(const RegistrationResult& r, Vec2 q)
{
    return map_to_volume(q, r.pose, &r.surface, &r.inplane);
}

} // namespace slicereg
