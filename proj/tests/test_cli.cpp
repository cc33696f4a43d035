#include <slicereg/commands.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

using namespace slicereg;

namespace
{

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("slicereg_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Runs the executable; returns its exit status, stderr captured into `err`.
int run(const std::string& args, std::string* err = nullptr)
{
    const fs::path log = fs::temp_directory_path() / "slicereg_cli_stderr.txt";
    const std::string cmd = std::string(SLICEREG_CLI) + " " + args + " >/dev/null 2>" + log.string();
    const int status = std::system(cmd.c_str());
    if (err)
        *err = detail::read_file(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes(const fs::path& p)
{
    return detail::read_file(p);
}

SynthOptions small_case(const fs::path& dir, std::uint64_t seed = 3)
{
    SynthOptions o;
    o.seed = seed;
    o.out_dir = dir;
    o.size = 64;
    o.phantom.macro_blobs = 30;
    o.phantom.micro_blobs = 1500;
    return o;
}

double basis(double r)
{
    r = std::abs(r);
    if (r < 1.0)
        return (4.0 - 6.0 * r * r + 3.0 * r * r * r) / 6.0;
    if (r < 2.0)
        return (2.0 - r) * (2.0 - r) * (2.0 - r) / 6.0;
    return 0.0;
}

// Independent point mapper: explicit basis sums and rotation products.
template <typename G, typename F>
auto spline(const G& g, double u, double v, F value)
{
    const auto& e = g.extent();
    const double x = std::clamp((u - e.u0) / (e.u1 - e.u0), 0.0, 1.0) * (g.nu() - 1);
    const double y = std::clamp((v - e.v0) / (e.v1 - e.v0), 0.0, 1.0) * (g.nv() - 1);
    decltype(value(g(0, 0))) acc{};
    for (int m = -3; m <= g.nu() + 2; ++m)
        for (int n = -3; n <= g.nv() + 2; ++n)
        {
            const double w = basis(x - m) * basis(y - n);
            if (w != 0.0)
                acc = acc + w * value(g(std::clamp(m, 0, g.nu() - 1), std::clamp(n, 0, g.nv() - 1)));
        }
    return acc;
}

Vec3 oracle_map(const CutTransform& t, Vec2 q)
{
    const Vec2 d = spline(t.inplane, q.x, q.y, [](Vec2 v) { return v; });
    const Vec2 p = q + d;
    const double w = spline(t.surface, p.x, p.y, [](double v) { return v; });
    const double a = deg2rad(t.pose.rx), b = deg2rad(t.pose.ry);
    const double px = p.x - t.pose.center.x, py = p.y - t.pose.center.y;
    // Rx then Ry
    const double y1 = std::cos(a) * py - std::sin(a) * w, z1 = std::sin(a) * py + std::cos(a) * w;
    const double x2 = std::cos(b) * px + std::sin(b) * z1, z2 = -std::sin(b) * px + std::cos(b) * z1;
    return {x2 + t.pose.center.x, y1 + t.pose.center.y, z2 + t.pose.tz};
}

} // namespace

TEST(CliSynth, DeterministicFiles)
{
    const fs::path a = scratch("synth_a"), b = scratch("synth_b");
    const auto oa = cmd_synth(small_case(a)), ob = cmd_synth(small_case(b));
    EXPECT_EQ(bytes(oa.volume), bytes(ob.volume));
    EXPECT_EQ(bytes(oa.histology), bytes(ob.histology));
    EXPECT_EQ(bytes(oa.fiducials_2d), bytes(ob.fiducials_2d));
    EXPECT_EQ(bytes(oa.ground_truth), bytes(ob.ground_truth));
}

TEST(CliSynth, MissingParentExits2WithPath)
{
    std::string err;
    EXPECT_EQ(run("synth --seed 1 --out-dir /nonexistent_parent_dir/case", &err), 2);
    EXPECT_NE(err.find("/nonexistent_parent_dir"), std::string::npos);
}

TEST(CliSynth, GroundTruthEvaluatesToZeroFre)
{
    const fs::path d = scratch("synth_gt");
    const auto o = cmd_synth(small_case(d));
    const auto e = cmd_evaluate({o.ground_truth, o.fiducials_2d, o.fiducials_3d, {}});
    EXPECT_LE(e.fre_um, 1e-6);
    EXPECT_EQ(e.points.size(), 20u);
    EXPECT_FALSE(e.lncc.has_value());
}

TEST(CliEvaluate, IdentityResultGivesAnalyticOffset)
{
    const fs::path d = scratch("eval_offset");
    const GridExtent ext{0, 500, 0, 500};
    const CutTransform cut{PlanePose{0.0, 0.0, 0.0, {250, 250}}, OutOfPlaneGrid(4, 4, ext), InPlaneGrid(4, 4, ext)};
    ojson report = {{"pose", pose_to_json(cut.pose)},
                    {"out_of_plane", surface_to_json(cut.surface)},
                    {"in_plane", inplane_to_json(cut.inplane)}};
    write_json(d / "report.json", report);
    std::vector<Fiducial> f2, f3;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 500), off(-20, 20);
    double mean = 0.0;
    for (int i = 0; i < 10; ++i)
    {
        const Vec3 p{u(rng), u(rng), 0.0};
        const Vec3 o{off(rng), off(rng), off(rng)};
        f2.push_back({"P" + std::to_string(i), p});
        f3.push_back({"P" + std::to_string(i), p + o});
        mean += norm(o) / 10.0;
    }
    write_fiducials(d / "f2.txt", f2, false);
    write_fiducials(d / "f3.txt", f3, true);
    const auto e = cmd_evaluate({d / "report.json", d / "f2.txt", d / "f3.txt", d / "eval.json"});
    EXPECT_NEAR(e.fre_um, mean, 1e-9);
    EXPECT_TRUE(fs::exists(d / "eval.json"));
}

TEST(CliEvaluate, RandomResultMatchesPointMappingOracle)
{
    const fs::path d = scratch("eval_random");
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    const GridExtent ext{10, 610, -20, 580};
    CutTransform cut{PlanePose{150.0, 4.0 * u(rng), 4.0 * u(rng), {310, 280}}, OutOfPlaneGrid(4, 4, ext),
                     InPlaneGrid(4, 4, ext)};
    for (double& v : cut.surface.values())
        v = 40.0 * u(rng);
    for (Vec2& v : cut.inplane.values())
        v = {20.0 * u(rng), 20.0 * u(rng)};
    write_json(d / "report.json", {{"pose", pose_to_json(cut.pose)},
                                   {"out_of_plane", surface_to_json(cut.surface)},
                                   {"in_plane", inplane_to_json(cut.inplane)}});
    std::vector<Fiducial> f2, f3;
    std::vector<Vec3> mapped, target;
    for (int i = 0; i < 15; ++i)
    {
        const Vec2 q{10 + 600 * (0.5 + 0.5 * u(rng)), -20 + 600 * (0.5 + 0.5 * u(rng))};
        const Vec3 t{300 + 300 * u(rng), 300 + 300 * u(rng), 150 + 50 * u(rng)};
        f2.push_back({"Q" + std::to_string(i), {q.x, q.y, 0}});
        f3.push_back({"Q" + std::to_string(i), t});
        mapped.push_back(oracle_map(cut, q));
        target.push_back(t);
    }
    write_fiducials(d / "f2.txt", f2, false);
    write_fiducials(d / "f3.txt", f3, true);
    double oracle = 0.0;
    for (std::size_t i = 0; i < mapped.size(); ++i)
        oracle += norm(mapped[i] - target[i]) / mapped.size();
    const auto e = cmd_evaluate({d / "report.json", d / "f2.txt", d / "f3.txt", {}});
    EXPECT_NEAR(e.fre_um, oracle, 1e-9);
}

TEST(CliEvaluate, UnmatchedIdsAreListed)
{
    const fs::path d = scratch("eval_unmatched");
    const auto o = cmd_synth(small_case(d));
    auto f3 = read_fiducials(o.fiducials_3d);
    f3.back().id = "extra_point";
    write_fiducials(d / "f3.txt", f3, true);
    std::string err;
    EXPECT_EQ(run("evaluate --result " + o.ground_truth.string() + " --fiducials-2d " + o.fiducials_2d.string() +
                      " --fiducials-3d " + (d / "f3.txt").string(),
                  &err),
              2);
    EXPECT_NE(err.find("extra_point"), std::string::npos);
    EXPECT_NE(err.find("F20"), std::string::npos);
}

TEST(CliRegister, SelfPairManualInitAtTruth)
{
    const fs::path d = scratch("reg_self");
    const Volume3D vol = make_volume(5, {64, 64, 64}, {10.4, 10.4, 10.4}, small_case(d).phantom);
    const Grid2D g{64, 64, {10.4, 10.4}, {}};
    const PlanePose truth{250.0, 2.0, -1.0, g.center()};
    write_volume(d / "ct.imv", vol);
    write_image(d / "hist.imv", extract_slice(vol, truth, g));
    write_json(d / "config.json", {{"oop_restarts", 2}, {"oop_iterations", 30}, {"crop_threshold", 0.0}});
    EXPECT_EQ(run("register --ct " + (d / "ct.imv").string() + " --histology " + (d / "hist.imv").string() +
                  " --config " + (d / "config.json").string() + " --init manual --manual-pose 250,2,-1 --out-dir " +
                  (d / "out").string()),
              0);
    const auto report = read_json(d / "out" / "report.json");
    EXPECT_GE(report["scores"]["lncc"]["post_warp"].get<double>(), 0.99);
    EXPECT_EQ(report["config"]["oop_restarts"].get<int>(), 2);
    for (const char* f : {"registered_slice.imv", "histology_working.imv", "overlay.pgm", "timings.json"})
        EXPECT_TRUE(fs::exists(d / "out" / f)) << f;
    const Image2D reg = read_image(d / "out" / "registered_slice.imv");
    EXPECT_EQ(reg.width(), 64);
}

TEST(CliRegister, DisaWithoutWeightsExits3WithoutOutput)
{
    const fs::path d = scratch("reg_noweights");
    const auto o = cmd_synth(small_case(d));
    std::string err;
    EXPECT_EQ(run("register --ct " + o.volume.string() + " --histology " + o.histology.string() +
                      " --init disa --out-dir " + (d / "out").string(),
                  &err),
              3);
    EXPECT_NE(err.find("weights"), std::string::npos);
    EXPECT_FALSE(fs::exists(d / "out"));
}

TEST(CliRegister, ConfigErrorsExit3)
{
    const fs::path d = scratch("reg_config");
    const auto o = cmd_synth(small_case(d));
    write_json(d / "bad.json", {{"oop_restarts", 2}, {"not_a_key", 1}});
    const std::string base = "register --ct " + o.volume.string() + " --histology " + o.histology.string() +
                             " --out-dir " + (d / "out").string();
    std::string err;
    EXPECT_EQ(run(base + " --config " + (d / "bad.json").string(), &err), 3);
    EXPECT_NE(err.find("not_a_key"), std::string::npos);
    EXPECT_EQ(run(base + " --init manual"), 3);
    EXPECT_EQ(run(base + " --init manual --manual-pose 1,2"), 3);
    EXPECT_EQ(run(base + " --init warp"), 3);
    EXPECT_EQ(run(base + " --depth-range 50,10"), 3);
    EXPECT_EQ(run("register --ct /missing.imv --histology " + o.histology.string() + " --out-dir " +
                  (d / "out").string()),
              2);
}

TEST(CliRegister, BenchmarkCaseWithIntensityInit)
{
    const fs::path d = scratch("reg_bench");
    const auto o = cmd_synth(small_case(d, 4));
    RegisterOptions r;
    r.ct = o.volume;
    r.histology = o.histology;
    r.init = InitMode::Intensity;
    r.seed = 2;
    // the default range covers a fifth of the stack, too shallow for a 64-slice volume
    r.depth_range_um = std::array<double, 2>{0.0, 300.0};
    r.out_dir = d / "out";
    const auto out = cmd_register(r);
    const auto e = cmd_evaluate({out.report, o.fiducials_2d, o.fiducials_3d, {}});
    EXPECT_LE(e.fre_um, 3 * 10.4);
    ASSERT_TRUE(e.lncc.has_value());
    EXPECT_DOUBLE_EQ(*e.lncc, out.result.lncc_post.value);
}

TEST(CliFeatures, ShapesRoundTripAndSingletonVolume)
{
    const fs::path d = scratch("features");
    cmd_make_weights(3, d / "net.dsw");
    Image2D img(Grid2D{64, 64, {10, 10}, {}}, 1);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    for (float& v : img.data())
        v = static_cast<float>(n(rng));
    write_image(d / "img.imv", img);
    EXPECT_EQ(run("features --input " + (d / "img.imv").string() + " --weights " + (d / "net.dsw").string() +
                  " --out " + (d / "f.imv").string()),
              0);
    const Raster f = read_raster(d / "f.imv");
    EXPECT_EQ(f.dims[0], 16);
    EXPECT_EQ(f.dims[1], 16);
    EXPECT_EQ(f.dims[2], 1);
    EXPECT_EQ(f.channels, 16);
    // round trip through the container is bit-identical
    write_raster(d / "g.imv", f);
    EXPECT_EQ(bytes(d / "f.imv"), bytes(d / "g.imv"));
    // nz = 1 volume takes the same path as the image
    write_volume(d / "vol.imv", as_volume(img));
    const Raster fv = cmd_features({d / "vol.imv", d / "net.dsw", d / "fv.imv"});
    EXPECT_EQ(fv.data, f.data);
    // 3D input gives one feature slice per input slice
    Volume3D vol({32, 32, 3}, {10, 10, 10});
    for (float& v : vol.data())
        v = static_cast<float>(n(rng));
    write_volume(d / "v3.imv", vol);
    const Raster f3 = cmd_features({d / "v3.imv", d / "net.dsw", d / "f3.imv"});
    EXPECT_EQ(f3.dims, (std::array<int, 3>{8, 8, 3}));
}

TEST(CliFeatures, BadWeightsExit4)
{
    const fs::path d = scratch("features_bad");
    detail::write_file(d / "bad.dsw", "not a weight file at all");
    write_image(d / "img.imv", Image2D(Grid2D{16, 16, {1, 1}, {}}, 1, std::vector<float>(256, 1.0f)));
    EXPECT_EQ(run("features --input " + (d / "img.imv").string() + " --weights " + (d / "bad.dsw").string() +
                  " --out " + (d / "f.imv").string()),
              4);
}

TEST(CliCompare, RowsMatchIndividualRuns)
{
    const fs::path d = scratch("compare");
    const auto o = cmd_synth(small_case(d, 5));
    cmd_make_weights(1, d / "net.dsw");
    const nlohmann::json gt = read_json(o.ground_truth);
    const PlanePose truth = pose_from_json(gt["pose"]);

    CompareOptions c;
    c.base.ct = o.volume;
    c.base.histology = o.histology;
    c.base.weights = d / "net.dsw";
    c.base.manual_pose = ManualPose{truth.tz, truth.rx, truth.ry};
    c.base.seed = 6;
    c.base.out_dir = d / "cmp";
    c.fiducials_2d = o.fiducials_2d;
    c.fiducials_3d = o.fiducials_3d;
    const auto rows = cmd_compare_inits(c);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].mode, InitMode::Intensity);
    EXPECT_EQ(rows[1].mode, InitMode::Disa);
    EXPECT_EQ(rows[2].mode, InitMode::Manual);
    for (const auto& r : rows)
    {
        EXPECT_GE(r.result.lncc_post.value, -1.0);
        EXPECT_LE(r.result.lncc_post.value, 1.0);
        EXPECT_GE(r.result.lc2_post.value, 0.0);
        EXPECT_LE(r.result.lc2_post.value, 1.0);
        ASSERT_TRUE(r.fre_um.has_value());
    }
    // the manual row starts at the truth
    for (const auto& r : rows)
        EXPECT_LE(*rows[2].fre_um, *r.fre_um + 10.4);

    for (std::size_t i = 0; i < 2; ++i)
    {
        RegisterOptions single = c.base;
        single.init = rows[i].mode;
        single.out_dir = d / ("single_" + std::to_string(i));
        const auto out = cmd_register(single);
        EXPECT_EQ(out.result.lncc_post.value, rows[i].result.lncc_post.value);
        EXPECT_EQ(out.result.lc2_post.value, rows[i].result.lc2_post.value);
        EXPECT_EQ(bytes(out.report), bytes(d / "cmp" / (std::string("report_") + to_string(rows[i].mode) + ".json")));
    }
    EXPECT_TRUE(fs::exists(d / "cmp" / "compare.json"));
}

TEST(CliMakeWeights, LoadsAsDefaultNetwork)
{
    const fs::path d = scratch("weights");
    EXPECT_EQ(run("make-weights --seed 5 --out " + (d / "w.dsw").string()), 0);
    const ConvNet net = load_weights(d / "w.dsw");
    EXPECT_EQ(net.stride(), 4);
    EXPECT_EQ(net.output_channels(), 16);
    EXPECT_EQ(encode_weights(net), encode_weights(random_network(5)));
}

TEST(Report, ConfigRoundTripAndUnknownKeys)
{
    RegisterConfig c;
    c.init_mode = InitMode::Manual;
    c.manual_pose = ManualPose{100, 1, 2};
    c.depth_range_um = std::array<double, 2>{10, 90};
    c.seed = 77;
    c.metric.lncc_radius = 6;
    const RegisterConfig back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
    EXPECT_THROW(config_from_json({{"metric", {{"radius", 3}}}}), Error);
    EXPECT_THROW(config_from_json({{"n_depths", "ten"}}), Error);
    EXPECT_EQ(config_from_json({{"n_depths", 4}}).n_depths, 4);
}
