#include <slicereg/commands.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace slicereg;

namespace
{

std::vector<double> parse_numbers(const std::string& s, std::size_t n, const char* flag)
{
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
    {
        std::size_t used = 0;
        double x = 0.0;
        try
        {
            x = std::stod(item, &used);
        }
        catch (const std::exception&)
        {
            used = 0;
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
            ++used;
        if (used == 0 || used != item.size())
            throw Error(ErrorCode::Config, std::string(flag) + ": '" + item + "' is not a number");
        v.push_back(x);
    }
    if (v.size() != n)
        throw Error(ErrorCode::Config, std::string(flag) + " needs " + std::to_string(n) + " comma-separated values");
    return v;
}

struct RegisterFlags
{
    std::string ct, histology, weights, config, init, manual_pose, depth_range, out_dir;
    double histology_spacing = 0.0;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;

    void add(CLI::App* app)
    {
        app->add_option("--ct", ct, "CT volume (.imv)")->required();
        app->add_option("--histology", histology, "histology image (.imv, or .pgm/.ppm with --histology-spacing)")
            ->required();
        app->add_option("--histology-spacing", histology_spacing, "pixel spacing in µm for PGM/PPM histology");
        app->add_option("--weights", weights, "network weights (.dsw), required for disa init");
        app->add_option("--config", config, "JSON configuration file");
        app->add_option("--init", init, "initialization: disa | intensity | manual");
        app->add_option("--manual-pose", manual_pose, "manual pose \"tz_um,rx_deg,ry_deg\"");
        seed_opt = app->add_option("--seed", seed, "random seed");
        app->add_option("--depth-range", depth_range, "depth range \"lo_um,hi_um\"");
        app->add_option("--out-dir", out_dir, "output directory")->required();
    }

    RegisterOptions options() const
    {
        RegisterOptions o;
        o.ct = ct;
        o.histology = histology;
        o.out_dir = out_dir;
        if (histology_spacing > 0.0)
            o.histology_spacing_um = histology_spacing;
        if (!weights.empty())
            o.weights = weights;
        if (!config.empty())
            o.config = config;
        if (!init.empty())
            o.init = parse_init_mode(init);
        if (!manual_pose.empty())
        {
            const auto v = parse_numbers(manual_pose, 3, "--manual-pose");
            o.manual_pose = ManualPose{v[0], v[1], v[2]};
        }
        if (seed_opt && seed_opt->count() > 0)
            o.seed = seed;
        if (!depth_range.empty())
        {
            const auto v = parse_numbers(depth_range, 2, "--depth-range");
            o.depth_range_um = std::array<double, 2>{v[0], v[1]};
        }
        return o;
    }
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Histology slice to µCT volume registration"};
    app.require_subcommand(1);

    // synth
    SynthOptions synth;
    std::string synth_out;
    auto* s = app.add_subcommand("synth", "generate a synthetic volume/histology case with ground truth");
    s->add_option("--seed", synth.seed, "random seed");
    s->add_option("--out-dir", synth_out, "output directory")->required();
    s->add_option("--size", synth.size, "volume edge length in voxels (>= 32)");
    s->add_option("--spacing", synth.spacing_um, "voxel spacing in µm");
    s->add_option("--max-rotation", synth.case_params.max_rotation_deg, "max |rx|, |ry| in degrees");
    s->add_option("--noise", synth.case_params.modality.noise_sigma, "additive noise sigma");
    s->add_option("--gamma", synth.case_params.modality.gamma, "intensity remap exponent");
    s->add_flag("--invert", synth.case_params.modality.invert, "invert contrast");
    s->add_option("--fiducials", synth.case_params.n_fiducials, "number of fiducials");

    // register
    RegisterFlags reg;
    auto* r = app.add_subcommand("register", "register a histology slice to a CT volume");
    reg.add(r);

    // evaluate
    EvaluateOptions eval;
    std::string eval_result, eval_f2, eval_f3, eval_out;
    auto* e = app.add_subcommand("evaluate", "fiducial registration error of a result or ground-truth report");
    e->add_option("--result", eval_result, "report.json or ground_truth.json")->required();
    e->add_option("--fiducials-2d", eval_f2, "histology fiducials (id, x, y in µm)")->required();
    e->add_option("--fiducials-3d", eval_f3, "volume fiducials (id, x, y, z in µm)")->required();
    e->add_option("--out", eval_out, "write the evaluation as JSON");

    // features
    FeaturesOptions feat;
    std::string feat_in, feat_w, feat_out;
    auto* f = app.add_subcommand("features", "run the feature network on an image or volume");
    f->add_option("--input", feat_in, "input container (.imv)")->required();
    f->add_option("--weights", feat_w, "network weights (.dsw)")->required();
    f->add_option("--out", feat_out, "output container (.imv)")->required();

    // compare-inits
    RegisterFlags cmp;
    std::string cmp_f2, cmp_f3;
    auto* c = app.add_subcommand("compare-inits", "run the pipeline with each available initialization");
    cmp.add(c);
    c->add_option("--fiducials-2d", cmp_f2, "histology fiducials for FRE");
    c->add_option("--fiducials-3d", cmp_f3, "volume fiducials for FRE");

    // make-weights
    std::uint64_t mw_seed = 0;
    std::string mw_out;
    auto* w = app.add_subcommand("make-weights", "write randomly initialized network weights");
    w->add_option("--seed", mw_seed, "random seed");
    w->add_option("--out", mw_out, "output .dsw file")->required();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& ex)
    {
        return app.exit(ex);
    }
    catch (const CLI::ParseError& ex)
    {
        app.exit(ex);
        return 3;
    }

    try
    {
        if (s->parsed())
        {
            synth.out_dir = synth_out;
            const auto out = cmd_synth(synth);
            std::cout << "wrote " << out.volume.string() << ", " << out.histology.string() << ", "
                      << out.ground_truth.string() << "\n";
        }
        else if (r->parsed())
        {
            const auto out = cmd_register(reg.options());
            std::cout << "LNCC " << out.result.lncc_post.value << "  LC2 " << out.result.lc2_post.value
                      << "  report " << out.report.string() << "\n";
        }
        else if (e->parsed())
        {
            eval.result = eval_result;
            eval.fiducials_2d = eval_f2;
            eval.fiducials_3d = eval_f3;
            if (!eval_out.empty())
                eval.out = eval_out;
            std::cout << evaluation_to_json(cmd_evaluate(eval)).dump(2) << "\n";
        }
        else if (f->parsed())
        {
            feat.input = feat_in;
            feat.weights = feat_w;
            feat.out = feat_out;
            const Raster out = cmd_features(feat);
            std::cout << "features " << out.dims[0] << "x" << out.dims[1] << "x" << out.dims[2] << " x "
                      << out.channels << " channels\n";
        }
        else if (c->parsed())
        {
            CompareOptions o;
            o.base = cmp.options();
            if (!cmp_f2.empty())
                o.fiducials_2d = cmp_f2;
            if (!cmp_f3.empty())
                o.fiducials_3d = cmp_f3;
            print_compare_table(std::cout, cmd_compare_inits(o));
        }
        else if (w->parsed())
        {
            cmd_make_weights(mw_seed, mw_out);
            std::cout << "wrote " << mw_out << "\n";
        }
    }
    catch (const Error& ex)
    {
        std::cerr << "error: " << ex.what() << "\n";
        return exit_code(ex.code());
    }
    catch (const std::exception& ex)
    {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
