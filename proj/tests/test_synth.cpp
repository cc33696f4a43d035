#include <slicereg/similarity.hpp>
#include <slicereg/synth.hpp>

#include <gtest/gtest.h>

using namespace slicereg;

namespace
{

PhantomParams small_phantom()
{
    PhantomParams p;
    p.macro_blobs = 12;
    p.micro_blobs = 400;
    return p;
}

} // namespace

TEST(Phantom, DeterministicPerSeed)
{
    const auto a = make_volume(3, {32, 32, 32}, {10, 10, 10}, small_phantom());
    const auto b = make_volume(3, {32, 32, 32}, {10, 10, 10}, small_phantom());
    const auto c = make_volume(4, {32, 32, 32}, {10, 10, 10}, small_phantom());
    ASSERT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        differ += std::abs(a.data()[i] - c.data()[i]) > 0.01f;
    EXPECT_GT(differ, a.data().size() / 100);
}

TEST(Phantom, NormalizedRange)
{
    const auto v = make_volume(1, {32, 40, 36}, {5, 5, 8}, small_phantom());
    const auto [mn, mx] = std::minmax_element(v.data().begin(), v.data().end());
    EXPECT_FLOAT_EQ(*mn, 0.0f);
    EXPECT_FLOAT_EQ(*mx, 1.0f);
    EXPECT_EQ(v.nx(), 32);
    EXPECT_EQ(v.ny(), 40);
    EXPECT_EQ(v.nz(), 36);
}

TEST(Phantom, NoBlobsIsConstant)
{
    PhantomParams p;
    p.macro_blobs = 0;
    p.micro_blobs = 0;
    const auto v = make_volume(9, {32, 32, 32}, {10, 10, 10}, p);
    for (float x : v.data())
        ASSERT_EQ(x, 0.0f);
}

TEST(Phantom, RejectsTinyDims)
{
    EXPECT_THROW(make_volume(1, {16, 32, 32}, {10, 10, 10}), Error);
}

TEST(SynthCase, IdentityTruthReproducesVoxelSlice)
{
    const auto vol = make_volume(5, {32, 32, 40}, {10, 10, 10}, small_phantom());
    CaseParams cp;
    cp.max_rotation_deg = 0.0;
    cp.surface_amplitude_um = 0.0;
    cp.inplane_amplitude_um = 0.0;
    cp.tz_min_um = cp.tz_max_um = 120.0;
    cp.modality = {1.0, false, 0.0};
    const auto pair = make_pair(vol, random_ground_truth(2, vol, cp));
    const Image2D& h = pair.histology;
    ASSERT_EQ(h.width(), 32);
    ASSERT_EQ(h.height(), 32);
    for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 32; ++i)
            ASSERT_NEAR(h.at(i, j), vol.at(i, j, 12), 1e-6);
}

TEST(SynthCase, NoiseFreeTruthScoresPerfectly)
{
    const auto vol = make_volume(6, {40, 40, 40}, {10, 10, 10}, small_phantom());
    CaseParams cp;
    cp.modality = {1.0, false, 0.0};
    const auto pair = make_pair(vol, random_ground_truth(8, vol, cp));
    const auto& gt = pair.truth;
    const Image2D cut = warp_2d(extract_slice(vol, gt.pose, gt.surface, gt.histology_grid), gt.inplane);
    EXPECT_NEAR(lncc(cut, pair.histology).value, 1.0, 1e-6);
}

TEST(SynthCase, DeterministicAndSeedDependent)
{
    const auto vol = make_volume(6, {40, 40, 40}, {10, 10, 10}, small_phantom());
    const auto a = make_pair(vol, random_ground_truth(8, vol));
    const auto b = make_pair(vol, random_ground_truth(8, vol));
    const auto c = make_pair(vol, random_ground_truth(9, vol));
    EXPECT_TRUE(std::equal(a.histology.data().begin(), a.histology.data().end(), b.histology.data().begin()));
    EXPECT_NE(a.truth.pose.tz, c.truth.pose.tz);
    EXPECT_LE(std::abs(a.truth.pose.rx), 5.0);
    EXPECT_LE(std::abs(a.truth.pose.ry), 5.0);
}

TEST(SynthCase, FiducialsRoundTripThroughTheTrueMapping)
{
    const auto vol = make_volume(6, {48, 48, 48}, {10, 10, 10}, small_phantom());
    const auto pair = make_pair(vol, random_ground_truth(11, vol));
    const auto& gt = pair.truth;
    ASSERT_EQ(gt.fiducials_2d.size(), 20u);
    for (std::size_t f = 0; f < gt.fiducials_2d.size(); ++f)
    {
        EXPECT_EQ(gt.fiducials_2d[f].id, gt.fiducials_3d[f].id);
        const Vec3 q = gt.fiducials_2d[f].position;
        const Vec3 x = map_to_volume({q.x, q.y}, gt.pose, &gt.surface, &gt.inplane);
        const Vec3 e = gt.fiducials_3d[f].position;
        EXPECT_NEAR(norm(x - e), 0.0, 1e-6);
    }
}

TEST(SynthCase, FiducialOutsideDomainIsAnError)
{
    const auto vol = make_volume(6, {32, 32, 32}, {10, 10, 10}, small_phantom());
    GroundTruth gt = random_ground_truth(1, vol);
    gt.fiducials_3d.push_back({"far", {5000.0, 100.0, 150.0}});
    try
    {
        make_pair(vol, gt);
        FAIL() << "expected a fiducial error";
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::Fiducial);
        EXPECT_NE(std::string(e.what()).find("far"), std::string::npos);
    }
}

TEST(SynthCase, InvertInplaneSolvesFixedPoint)
{
    const GridExtent ext{0, 300, 0, 300};
    InPlaneGrid g(4, 4, ext);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-10, 10);
    for (auto& v : g.values())
        v = {u(rng), u(rng)};
    for (Vec2 p : {Vec2{10, 20}, Vec2{150, 150}, Vec2{290, 5}})
    {
        const Vec2 q = invert_inplane(g, p);
        const Vec2 back = q + g.eval(q.x, q.y);
        EXPECT_NEAR(back.x, p.x, 1e-9);
        EXPECT_NEAR(back.y, p.y, 1e-9);
    }
}
