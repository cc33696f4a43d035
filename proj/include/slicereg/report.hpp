#pragma once

// Structured text (JSON) for configurations, registration results and synthetic ground truth.
// Result and ground-truth reports share the pose/grid layout so either can be evaluated.

#include "error.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "register.hpp"
#include "synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <set>
#include <string>

namespace slicereg
{

using ojson = nlohmann::ordered_json;

inline constexpr const char* kResultFormat = "slicereg-result/1";
inline constexpr const char* kTruthFormat = "slicereg-ground-truth/1";

// ---------------------------------------------------------------------------------------------
// Pose and grids

inline ojson pose_to_json(const PlanePose& p)
{
    return {{"tz_um", p.tz}, {"rx_deg", p.rx}, {"ry_deg", p.ry}, {"center_um", {p.center.x, p.center.y}}};
}

inline ojson extent_to_json(const GridExtent& e)
{
    return {{"u0", e.u0}, {"u1", e.u1}, {"v0", e.v0}, {"v1", e.v1}};
}

inline ojson surface_to_json(const OutOfPlaneGrid& g)
{
    ojson v = ojson::array();
    for (double x : g.values())
        v.push_back(x);
    return {{"size", {g.nu(), g.nv()}}, {"extent_um", extent_to_json(g.extent())}, {"values_um", v}};
}

inline ojson inplane_to_json(const InPlaneGrid& g)
{
    ojson v = ojson::array();
    for (const Vec2& x : g.values())
        v.push_back({x.x, x.y});
    return {{"size", {g.nu(), g.nv()}}, {"extent_um", extent_to_json(g.extent())}, {"values_um", v}};
}

namespace detail
{
template <typename J>
const J& field(const J& j, const char* key)
{
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorCode::Format, std::string("report is missing '") + key + "'");
    return j.at(key);
}

template <typename T, typename J>
T number(const J& j, const char* key)
{
    const auto& v = field(j, key);
    if (!v.is_number())
        throw Error(ErrorCode::Format, std::string("'") + key + "' must be a number");
    return v.template get<T>();
}

template <typename J>
GridExtent extent_from_json(const J& j)
{
    return {number<double>(j, "u0"), number<double>(j, "u1"), number<double>(j, "v0"), number<double>(j, "v1")};
}

template <typename J>
std::array<int, 2> grid_size(const J& j, std::size_t n_values)
{
    const auto& s = field(j, "size");
    if (!s.is_array() || s.size() != 2)
        throw Error(ErrorCode::Format, "grid size must be [nu, nv]");
    const std::array<int, 2> nn{s[0].template get<int>(), s[1].template get<int>()};
    if (nn[0] < 2 || nn[1] < 2 || static_cast<std::size_t>(nn[0]) * nn[1] != n_values)
        throw Error(ErrorCode::Format, "grid size does not match its values");
    return nn;
}
} // namespace detail

template <typename J>
PlanePose pose_from_json(const J& j)
{
    PlanePose p;
    p.tz = detail::number<double>(j, "tz_um");
    p.rx = detail::number<double>(j, "rx_deg");
    p.ry = detail::number<double>(j, "ry_deg");
    const auto& c = detail::field(j, "center_um");
    if (!c.is_array() || c.size() != 2)
        throw Error(ErrorCode::Format, "center_um must be [x, y]");
    p.center = {c[0].template get<double>(), c[1].template get<double>()};
    return p;
}

template <typename J>
OutOfPlaneGrid surface_from_json(const J& j)
{
    const auto& v = detail::field(j, "values_um");
    const auto nn = detail::grid_size(j, v.size());
    OutOfPlaneGrid g(nn[0], nn[1], detail::extent_from_json(detail::field(j, "extent_um")));
    for (std::size_t i = 0; i < v.size(); ++i)
        g.values()[i] = v[i].template get<double>();
    return g;
}

template <typename J>
InPlaneGrid inplane_from_json(const J& j)
{
    const auto& v = detail::field(j, "values_um");
    const auto nn = detail::grid_size(j, v.size());
    InPlaneGrid g(nn[0], nn[1], detail::extent_from_json(detail::field(j, "extent_um")));
    for (std::size_t i = 0; i < v.size(); ++i)
    {
        if (!v[i].is_array() || v[i].size() != 2)
            throw Error(ErrorCode::Format, "in-plane values must be [dx, dy] pairs");
        g.values()[i] = {v[i][0].template get<double>(), v[i][1].template get<double>()};
    }
    return g;
}

/// The parts of a result (or ground-truth) report needed to map points.
struct CutTransform
{
    PlanePose pose;
    OutOfPlaneGrid surface;
    InPlaneGrid inplane;

    Vec3 map(Vec2 q) const { return map_to_volume(q, pose, &surface, &inplane); }
};

template <typename J>
CutTransform cut_from_json(const J& j)
{
    return {pose_from_json(detail::field(j, "pose")), surface_from_json(detail::field(j, "out_of_plane")),
            inplane_from_json(detail::field(j, "in_plane"))};
}

// ---------------------------------------------------------------------------------------------
// Configuration

inline ojson config_to_json(const RegisterConfig& c)
{
    ojson j;
    j["init_mode"] = to_string(c.init_mode);
    j["n_depths"] = c.n_depths;
    j["rot_bound_deg"] = c.rot_bound_deg;
    j["trans_bound_um"] = c.trans_bound_um;
    j["depth_range_um"] = c.depth_range_um ? ojson{(*c.depth_range_um)[0], (*c.depth_range_um)[1]} : ojson(nullptr);
    j["pose_stop"] = c.pose_stop;
    j["oop_restarts"] = c.oop_restarts;
    j["oop_iterations"] = c.oop_iterations;
    j["oop_bound_um"] = c.oop_bound_um;
    j["inplane_bound_um"] = c.inplane_bound_um;
    j["grid_size"] = c.grid_size;
    j["inner_max_evals"] = c.inner_max_evals;
    j["final_inner_max_evals"] = c.final_inner_max_evals;
    j["working_spacing_um"] = c.working_spacing_um;
    j["percentile_lo"] = c.percentile_lo;
    j["percentile_hi"] = c.percentile_hi;
    j["crop_threshold"] = c.crop_threshold;
    j["seed"] = c.seed;
    j["metric"] = {{"lncc_radius", c.metric.lncc_radius},
                   {"lc2_radius", c.metric.lc2_radius},
                   {"variance_epsilon", c.metric.variance_epsilon}};
    j["manual_pose"] = c.manual_pose
                           ? ojson{{"tz_um", c.manual_pose->tz}, {"rx_deg", c.manual_pose->rx}, {"ry_deg", c.manual_pose->ry}}
                           : ojson(nullptr);
    return j;
}

namespace detail
{
inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw Error(ErrorCode::Config, where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw Error(ErrorCode::Config, "unknown configuration key '" + where + it.key() + "'");
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out)
{
    if (!j.contains(key) || j.at(key).is_null())
        return;
    try
    {
        out = j.at(key).get<T>();
    }
    catch (const nlohmann::json::exception&)
    {
        throw Error(ErrorCode::Config, std::string("configuration key '") + key + "' has the wrong type");
    }
}
} // namespace detail

/// Overlays the keys present in `j` onto `base`; unknown keys and wrong types are configuration errors.
inline RegisterConfig config_from_json(const nlohmann::json& j, RegisterConfig base = {})
{
    detail::reject_unknown(j,
                           {"init_mode", "n_depths", "rot_bound_deg", "trans_bound_um", "depth_range_um", "pose_stop",
                            "oop_restarts", "oop_iterations", "oop_bound_um", "inplane_bound_um", "grid_size",
                            "inner_max_evals", "final_inner_max_evals", "working_spacing_um", "percentile_lo",
                            "percentile_hi", "crop_threshold", "seed", "metric", "manual_pose"},
                           "");
    RegisterConfig c = base;
    std::string mode;
    detail::read_key(j, "init_mode", mode);
    if (!mode.empty())
        c.init_mode = parse_init_mode(mode);
    detail::read_key(j, "n_depths", c.n_depths);
    detail::read_key(j, "rot_bound_deg", c.rot_bound_deg);
    detail::read_key(j, "trans_bound_um", c.trans_bound_um);
    if (j.contains("depth_range_um") && !j["depth_range_um"].is_null())
    {
        std::array<double, 2> r{};
        detail::read_key(j, "depth_range_um", r);
        c.depth_range_um = r;
    }
    detail::read_key(j, "pose_stop", c.pose_stop);
    detail::read_key(j, "oop_restarts", c.oop_restarts);
    detail::read_key(j, "oop_iterations", c.oop_iterations);
    detail::read_key(j, "oop_bound_um", c.oop_bound_um);
    detail::read_key(j, "inplane_bound_um", c.inplane_bound_um);
    detail::read_key(j, "grid_size", c.grid_size);
    detail::read_key(j, "inner_max_evals", c.inner_max_evals);
    detail::read_key(j, "final_inner_max_evals", c.final_inner_max_evals);
    detail::read_key(j, "working_spacing_um", c.working_spacing_um);
    detail::read_key(j, "percentile_lo", c.percentile_lo);
    detail::read_key(j, "percentile_hi", c.percentile_hi);
    detail::read_key(j, "crop_threshold", c.crop_threshold);
    detail::read_key(j, "seed", c.seed);
    if (j.contains("metric") && !j["metric"].is_null())
    {
        const auto& m = j["metric"];
        detail::reject_unknown(m, {"lncc_radius", "lc2_radius", "variance_epsilon"}, "metric.");
        detail::read_key(m, "lncc_radius", c.metric.lncc_radius);
        detail::read_key(m, "lc2_radius", c.metric.lc2_radius);
        detail::read_key(m, "variance_epsilon", c.metric.variance_epsilon);
    }
    if (j.contains("manual_pose") && !j["manual_pose"].is_null())
    {
        const auto& m = j["manual_pose"];
        detail::reject_unknown(m, {"tz_um", "rx_deg", "ry_deg"}, "manual_pose.");
        ManualPose p;
        detail::read_key(m, "tz_um", p.tz);
        detail::read_key(m, "rx_deg", p.rx);
        detail::read_key(m, "ry_deg", p.ry);
        c.manual_pose = p;
    }
    return c;
}

inline RegisterConfig load_config(const std::filesystem::path& path, RegisterConfig base = {})
{
    const std::string text = detail::read_file(path);
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw Error(ErrorCode::Config, path.string() + ": " + e.what());
    }
    return config_from_json(j, base);
}

// ---------------------------------------------------------------------------------------------
// Reports

inline ojson score_to_json(const Score& pre, const Score& post)
{
    return {{"pre_warp", pre.value}, {"post_warp", post.value}, {"degenerate", pre.degenerate || post.degenerate}};
}

/// Deterministic result report: no wall times (see timings_to_json).
inline ojson result_to_json(const RegistrationResult& r)
{
    ojson stages = ojson::array();
    for (const auto& s : r.stages)
        stages.push_back({{"name", s.name},
                          {"objective_lncc", s.objective},
                          {"evaluations", s.evaluations},
                          {"inner_evaluations", s.inner_evaluations}});
    ojson j;
    j["format"] = kResultFormat;
    j["seed"] = r.config.seed;
    j["pose"] = pose_to_json(r.pose);
    j["out_of_plane"] = surface_to_json(r.surface);
    j["in_plane"] = inplane_to_json(r.inplane);
    j["scores"] = {{"lncc", score_to_json(r.lncc_pre, r.lncc_post)}, {"lc2", score_to_json(r.lc2_pre, r.lc2_post)}};
    j["init"] = {{"mode", to_string(r.init.mode)},
                 {"pose", pose_to_json(r.init.pose)},
                 {"score", r.init.score},
                 {"degenerate", r.init.degenerate},
                 {"details", ojson::parse(r.init.details.dump())}};
    j["stages"] = stages;
    j["oop_restart_scores"] = r.oop_restart_scores;
    j["working_histology"] = {{"dims", {r.histology.width(), r.histology.height()}},
                              {"spacing_um", {r.histology.spacing().x, r.histology.spacing().y}},
                              {"origin_um", {r.histology.origin().x, r.histology.origin().y}}};
    j["preprocessing"] = ojson::parse(r.preprocessing.dump());
    j["config"] = config_to_json(r.config);
    return j;
}

inline ojson timings_to_json(const RegistrationResult& r)
{
    ojson stages = ojson::array();
    double total = 0.0;
    for (const auto& s : r.stages)
    {
        stages.push_back({{"name", s.name}, {"seconds", s.seconds}});
        total += s.seconds;
    }
    return {{"stages", stages}, {"total_seconds", total}};
}

inline ojson ground_truth_to_json(const GroundTruth& gt)
{
    auto fids = [](const std::vector<Fiducial>& f) {
        ojson a = ojson::array();
        for (const auto& p : f)
            a.push_back({{"id", p.id}, {"position_um", {p.position.x, p.position.y, p.position.z}}});
        return a;
    };
    const Grid2D& g = gt.histology_grid;
    ojson j;
    j["format"] = kTruthFormat;
    j["seed"] = gt.seed;
    j["pose"] = pose_to_json(gt.pose);
    j["out_of_plane"] = surface_to_json(gt.surface);
    j["in_plane"] = inplane_to_json(gt.inplane);
    j["modality"] = {{"gamma", gt.modality.gamma}, {"invert", gt.modality.invert}, {"noise_sigma", gt.modality.noise_sigma}};
    j["histology_grid"] = {{"dims", {g.width, g.height}},
                           {"spacing_um", {g.spacing.x, g.spacing.y}},
                           {"origin_um", {g.origin.x, g.origin.y}}};
    j["fiducials_3d"] = fids(gt.fiducials_3d);
    j["fiducials_2d"] = fids(gt.fiducials_2d);
    return j;
}

inline void write_json(const std::filesystem::path& path, const ojson& j)
{
    detail::write_file(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path)
{
    const std::string text = detail::read_file(path);
    try
    {
        return nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw Error(ErrorCode::Format, path.string() + ": " + e.what());
    }
}

} // namespace slicereg
