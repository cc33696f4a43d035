#pragma once

// Command implementations behind the slicereg executable. Each throws slicereg::Error; the
// executable maps error codes to exit codes.

#include "disa.hpp"
#include "error.hpp"
#include "fiducials.hpp"
#include "io.hpp"
#include "preprocess.hpp"
#include "register.hpp"
#include "report.hpp"
#include "synth.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace slicereg
{

namespace fs = std::filesystem;

namespace detail
{
inline void require_file(const std::optional<fs::path>& p, const char* what)
{
    if (p)
        require(fs::is_regular_file(*p), ErrorCode::Io, std::string(what) + " file '" + p->string() + "' does not exist");
}

// Creates out_dir if needed (its parent must exist).
inline void prepare_out_dir(const fs::path& dir)
{
    require(!dir.empty(), ErrorCode::Io, "an output directory is required");
    if (fs::is_directory(dir))
        return;
    const fs::path parent = fs::absolute(dir).parent_path();
    require(fs::is_directory(parent), ErrorCode::Io, "output directory parent '" + parent.string() + "' does not exist");
    std::error_code ec;
    fs::create_directory(dir, ec);
    require(!ec, ErrorCode::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline bool has_extension(const fs::path& p, std::initializer_list<const char*> exts)
{
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const char* x : exts)
        if (e == x)
            return true;
    return false;
}
} // namespace detail

/// Histology input: .imv container, or PGM/PPM with an explicit pixel spacing.
inline Image2D load_histology(const fs::path& path, std::optional<double> pnm_spacing_um = {})
{
    if (detail::has_extension(path, {".pgm", ".ppm", ".pnm"}))
    {
        require(pnm_spacing_um.has_value(), ErrorCode::Config, "PGM/PPM histology needs --histology-spacing");
        return read_pnm(path, {*pnm_spacing_um, *pnm_spacing_um});
    }
    return read_image(path);
}

/// Checkerboard of two same-lattice images, each mapped to [0, 1] by its own 1st/99th percentiles.
inline Image2D checkerboard(const Image2D& a, const Image2D& b, int tile = 16)
{
    require(a.grid() == b.grid(), ErrorCode::DimensionMismatch, "checkerboard needs images on the same lattice");
    auto unit = [](const Image2D& img) {
        const auto n = percentile_normalize(img, 0.01, 0.99);
        return n.image;
    };
    const Image2D ua = unit(a), ub = unit(b);
    Image2D out(a.grid(), 1);
    for (int j = 0; j < a.height(); ++j)
        for (int i = 0; i < a.width(); ++i)
            out.at(i, j) = ((i / tile + j / tile) % 2 == 0) ? ua.at(i, j) : ub.at(i, j);
    return out;
}

// ---------------------------------------------------------------------------------------------
// synth

struct SynthOptions
{
    std::uint64_t seed = 1;
    fs::path out_dir;
    int size = 128;
    double spacing_um = 10.0;
    CaseParams case_params;
    PhantomParams phantom;
};

struct SynthOutputs
{
    fs::path volume, histology, fiducials_2d, fiducials_3d, ground_truth;
};

inline SynthOutputs cmd_synth(const SynthOptions& o)
{
    require(o.size >= 32, ErrorCode::Config, "synthetic volume size must be >= 32");
    require(o.spacing_um > 0.0, ErrorCode::Config, "synthetic spacing must be > 0");
    detail::prepare_out_dir(o.out_dir);
    const Volume3D vol = make_volume(o.seed, {o.size, o.size, o.size}, {o.spacing_um, o.spacing_um, o.spacing_um}, o.phantom);
    const SynthPair pair = make_pair(vol, random_ground_truth(o.seed, vol, o.case_params));
    SynthOutputs out{o.out_dir / "volume.imv", o.out_dir / "histology.imv", o.out_dir / "fiducials_2d.txt",
                     o.out_dir / "fiducials_3d.txt", o.out_dir / "ground_truth.json"};
    write_volume(out.volume, vol);
    write_image(out.histology, pair.histology);
    write_fiducials(out.fiducials_2d, pair.truth.fiducials_2d, false);
    write_fiducials(out.fiducials_3d, pair.truth.fiducials_3d, true);
    write_json(out.ground_truth, ground_truth_to_json(pair.truth));
    return out;
}

// ---------------------------------------------------------------------------------------------
// register

struct RegisterOptions
{
    fs::path ct;
    fs::path histology;
    std::optional<double> histology_spacing_um;
    std::optional<fs::path> weights;
    std::optional<fs::path> config;
    std::optional<InitMode> init;
    std::optional<ManualPose> manual_pose;
    std::optional<std::uint64_t> seed;
    std::optional<std::array<double, 2>> depth_range_um;
    fs::path out_dir;
};

/// Config file values, then command-line overrides.
inline RegisterConfig resolve_config(const RegisterOptions& o)
{
    RegisterConfig cfg = o.config ? load_config(*o.config) : RegisterConfig{};
    if (o.init)
        cfg.init_mode = *o.init;
    if (o.manual_pose)
        cfg.manual_pose = o.manual_pose;
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.depth_range_um)
        cfg.depth_range_um = o.depth_range_um;
    cfg.validate();
    require(cfg.init_mode != InitMode::Disa || o.weights.has_value(), ErrorCode::Config,
            "disa initialization needs --weights");
    return cfg;
}

struct RegisterOutputs
{
    RegistrationResult result;
    fs::path report, timings, registered_slice, working_histology, overlay;
};

namespace detail
{
inline void validate_inputs(const RegisterOptions& o)
{
    require(fs::is_regular_file(o.ct), ErrorCode::Io, "CT volume '" + o.ct.string() + "' does not exist");
    require(fs::is_regular_file(o.histology), ErrorCode::Io,
            "histology '" + o.histology.string() + "' does not exist");
    require_file(o.weights, "weights");
    require_file(o.config, "config");
}

inline RegistrationResult run_registration(const RegisterOptions& o, const RegisterConfig& cfg)
{
    std::optional<ConvNet> net;
    if (cfg.init_mode == InitMode::Disa)
        net = load_weights(*o.weights);
    const Volume3D vol = read_volume(o.ct);
    const Image2D hist = load_histology(o.histology, o.histology_spacing_um);
    return register_slice(vol, hist, cfg, net ? &*net : nullptr);
}
} // namespace detail

inline RegisterOutputs cmd_register(const RegisterOptions& o)
{
    detail::validate_inputs(o);
    const RegisterConfig cfg = resolve_config(o);
    detail::prepare_out_dir(o.out_dir);

    RegisterOutputs out;
    out.result = detail::run_registration(o, cfg);
    out.report = o.out_dir / "report.json";
    out.timings = o.out_dir / "timings.json";
    out.registered_slice = o.out_dir / "registered_slice.imv";
    out.working_histology = o.out_dir / "histology_working.imv";
    out.overlay = o.out_dir / "overlay.pgm";
    write_json(out.report, result_to_json(out.result));
    write_json(out.timings, timings_to_json(out.result));
    write_image(out.registered_slice, out.result.registered_slice);
    write_image(out.working_histology, out.result.histology);
    write_pgm(out.overlay, checkerboard(out.result.histology, out.result.registered_slice));
    return out;
}

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateOptions
{
    fs::path result;
    fs::path fiducials_2d;
    fs::path fiducials_3d;
    std::optional<fs::path> out;
};

struct FiducialError
{
    std::string id;
    Vec3 mapped{};
    Vec3 target{};
    double error_um = 0.0;
};

struct Evaluation
{
    double fre_um = 0.0;
    std::vector<FiducialError> points;
    std::optional<double> lncc, lc2; ///< post-warp scores when the report carries them
};

inline Evaluation evaluate(const CutTransform& cut, const std::vector<Fiducial>& f2d, const std::vector<Fiducial>& f3d)
{
    Evaluation e;
    std::vector<Vec3> a, b;
    for (const auto& [p2, p3] : pair_by_id(f2d, f3d))
    {
        const Vec3 x = cut.map({p2.position.x, p2.position.y});
        e.points.push_back({p2.id, x, p3.position, norm(x - p3.position)});
        a.push_back(x);
        b.push_back(p3.position);
    }
    e.fre_um = fre(a, b);
    return e;
}

inline ojson evaluation_to_json(const Evaluation& e)
{
    ojson pts = ojson::array();
    for (const auto& p : e.points)
        pts.push_back({{"id", p.id},
                       {"mapped_um", {p.mapped.x, p.mapped.y, p.mapped.z}},
                       {"target_um", {p.target.x, p.target.y, p.target.z}},
                       {"error_um", p.error_um}});
    return {{"fre_um", e.fre_um},
            {"n_pairs", e.points.size()},
            {"lncc_post_warp", e.lncc ? ojson(*e.lncc) : ojson(nullptr)},
            {"lc2_post_warp", e.lc2 ? ojson(*e.lc2) : ojson(nullptr)},
            {"fiducials", pts}};
}

inline Evaluation cmd_evaluate(const EvaluateOptions& o)
{
    require(fs::is_regular_file(o.result), ErrorCode::Io, "result '" + o.result.string() + "' does not exist");
    const nlohmann::json report = read_json(o.result);
    Evaluation e = evaluate(cut_from_json(report), read_fiducials(o.fiducials_2d), read_fiducials(o.fiducials_3d));
    if (report.contains("scores"))
    {
        e.lncc = report["scores"]["lncc"]["post_warp"].get<double>();
        e.lc2 = report["scores"]["lc2"]["post_warp"].get<double>();
    }
    if (o.out)
        write_json(*o.out, evaluation_to_json(e));
    return e;
}

// ---------------------------------------------------------------------------------------------
// features

struct FeaturesOptions
{
    fs::path input;
    fs::path weights;
    fs::path out;
};

/// Standardizes the input and runs the network per slice; the output is a 16-channel container.
inline Raster cmd_features(const FeaturesOptions& o)
{
    require(fs::is_regular_file(o.input), ErrorCode::Io, "input '" + o.input.string() + "' does not exist");
    require(fs::is_regular_file(o.weights), ErrorCode::Io, "weights '" + o.weights.string() + "' does not exist");
    const ConvNet net = load_weights(o.weights);
    const Raster in = read_raster(o.input);
    require(in.channels == 1 || in.channels == 3, ErrorCode::ChannelMismatch, "feature input must have 1 or 3 channels");
    Raster out;
    if (in.dims[2] == 1)
    {
        Image2D img = image_from_raster(in);
        if (img.channels() == 3)
            img = to_grayscale(img);
        out = to_raster(forward(net, standardize(img)));
    }
    else
    {
        require(in.channels == 1, ErrorCode::ChannelMismatch, "volume feature input must be single-channel");
        out = to_raster(feature_volume(net, standardize(volume_from_raster(in))));
    }
    write_raster(o.out, out);
    return out;
}

// ---------------------------------------------------------------------------------------------
// compare-inits

struct CompareOptions
{
    RegisterOptions base;
    std::optional<fs::path> fiducials_2d;
    std::optional<fs::path> fiducials_3d;
};

struct CompareRow
{
    InitMode mode = InitMode::Intensity;
    RegistrationResult result;
    std::optional<double> fre_um;
};

inline ojson compare_to_json(const std::vector<CompareRow>& rows)
{
    ojson a = ojson::array();
    for (const auto& r : rows)
    {
        ojson stages = ojson::object();
        for (const auto& s : r.result.stages)
            stages[s.name + "_s"] = s.seconds;
        a.push_back({{"init", to_string(r.mode)},
                     {"lncc_pre_warp", r.result.lncc_pre.value},
                     {"lncc_post_warp", r.result.lncc_post.value},
                     {"lc2_pre_warp", r.result.lc2_pre.value},
                     {"lc2_post_warp", r.result.lc2_post.value},
                     {"fre_um", r.fre_um ? ojson(*r.fre_um) : ojson(nullptr)},
                     {"pose", pose_to_json(r.result.pose)},
                     {"timings", stages}});
    }
    return {{"rows", a}};
}

inline void print_compare_table(std::ostream& os, const std::vector<CompareRow>& rows)
{
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %10s %10s %10s %10s %10s %10s\n", "init", "LNCC", "LC2", "FRE[um]",
                  "init[s]", "refine[s]", "total[s]");
    os << line;
    for (const auto& r : rows)
    {
        double init_s = 0.0, refine_s = 0.0, total = 0.0;
        for (const auto& s : r.result.stages)
        {
            total += s.seconds;
            if (s.name == "init")
                init_s = s.seconds;
            else if (s.name != "preprocess")
                refine_s += s.seconds;
        }
        char fre_s[32] = "-";
        if (r.fre_um)
            std::snprintf(fre_s, sizeof fre_s, "%.2f", *r.fre_um);
        std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %10s %10.2f %10.2f %10.2f\n", to_string(r.mode),
                      r.result.lncc_post.value, r.result.lc2_post.value, fre_s, init_s, refine_s, total);
        os << line;
    }
}

/// Runs the full pipeline once per available initialization: intensity, disa (with weights),
/// manual (with a manual pose).
inline std::vector<CompareRow> cmd_compare_inits(const CompareOptions& o)
{
    detail::validate_inputs(o.base);
    detail::require_file(o.fiducials_2d, "2D fiducial");
    detail::require_file(o.fiducials_3d, "3D fiducial");
    require(o.fiducials_2d.has_value() == o.fiducials_3d.has_value(), ErrorCode::Config,
            "FRE needs both --fiducials-2d and --fiducials-3d");
    RegisterOptions probe = o.base;
    probe.init = InitMode::Intensity;
    const RegisterConfig base_cfg = resolve_config(probe);
    detail::prepare_out_dir(o.base.out_dir);

    std::vector<InitMode> modes{InitMode::Intensity};
    if (o.base.weights)
        modes.push_back(InitMode::Disa);
    if (base_cfg.manual_pose)
        modes.push_back(InitMode::Manual);

    const Volume3D vol = read_volume(o.base.ct);
    const Image2D hist = load_histology(o.base.histology, o.base.histology_spacing_um);
    std::optional<ConvNet> net;
    if (o.base.weights)
        net = load_weights(*o.base.weights);
    std::vector<Fiducial> f2, f3;
    if (o.fiducials_2d)
    {
        f2 = read_fiducials(*o.fiducials_2d);
        f3 = read_fiducials(*o.fiducials_3d);
    }

    std::vector<CompareRow> rows;
    for (InitMode m : modes)
    {
        RegisterConfig cfg = base_cfg;
        cfg.init_mode = m;
        CompareRow row{m, register_slice(vol, hist, cfg, net ? &*net : nullptr), {}};
        if (!f2.empty())
        {
            const CutTransform cut{row.result.pose, row.result.surface, row.result.inplane};
            row.fre_um = evaluate(cut, f2, f3).fre_um;
        }
        write_json(o.base.out_dir / (std::string("report_") + to_string(m) + ".json"), result_to_json(row.result));
        rows.push_back(std::move(row));
    }
    write_json(o.base.out_dir / "compare.json", compare_to_json(rows));
    return rows;
}

// ---------------------------------------------------------------------------------------------
// make-weights

/// Writes a randomly initialized default network (for exercising the disa path without training).
inline void cmd_make_weights(std::uint64_t seed, const fs::path& out)
{
    write_weights(out, random_network(seed));
}

} // namespace slicereg
