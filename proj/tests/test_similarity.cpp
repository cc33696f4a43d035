#include <slicereg/similarity.hpp>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace slicereg;
using namespace oracle;



TEST(Lncc, SelfAndAntiCorrelation)
{
    const Image2D a = uniform_image(20, 20, 1);
    EXPECT_NEAR(lncc(a, a).value, 1.0, 1e-9);
    EXPECT_NEAR(lncc(a, remap(a, -1.0, 0.0)).value, -1.0, 1e-9);
}

TEST(Lncc, MatchesWindowedOracle)
{
    for (unsigned seed = 0; seed < 5; ++seed)
    {
        const Image2D a = uniform_image(32, 32, 100 + seed), b = uniform_image(32, 32, 200 + seed);
        const MetricConfig cfg{};
        EXPECT_NEAR(lncc(a, b, cfg).value, lncc_oracle(a, b, cfg.lncc_radius, cfg.variance_epsilon), 1e-6);
        MetricConfig small{2, 3, 1e-8};
        EXPECT_NEAR(lncc(a, b, small).value, lncc_oracle(a, b, 2, 1e-8), 1e-6);
    }
}

TEST(Lncc, SymmetricAndAffineInvariant)
{
    const Image2D a = uniform_image(24, 18, 3), b = uniform_image(24, 18, 4);
    const double ab = lncc(a, b).value;
    EXPECT_NEAR(ab, lncc(b, a).value, 1e-9);
    EXPECT_NEAR(ab, lncc(remap(a, 3.0, -2.0), b).value, 1e-6);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
}

TEST(Lncc, ConstantImagesDegenerate)
{
    Image2D c(8, 8);
    const Score s = lncc(c, c);
    EXPECT_TRUE(s.degenerate);
    EXPECT_EQ(s.value, 0.0);
}

TEST(Lncc, DimensionMismatch)
{
    EXPECT_THROW(lncc(Image2D(4, 4), Image2D(4, 5)), Error);
    EXPECT_THROW(lc2(Image2D(4, 4), Image2D(5, 4)), Error);
}

TEST(Lc2, SelfFitAndAffineTarget)
{
    const Image2D a = uniform_image(20, 20, 5);
    EXPECT_NEAR(lc2(a, a).value, 1.0, 1e-6);
    EXPECT_NEAR(lc2(a, remap(a, 2.0, 3.0)).value, 1.0, 1e-6);
}

TEST(Lc2, MatchesNormalEquationOracle)
{
    for (unsigned seed = 0; seed < 5; ++seed)
    {
        const Image2D s = uniform_image(24, 24, 300 + seed), t = uniform_image(24, 24, 400 + seed);
        const MetricConfig cfg{};
        EXPECT_NEAR(lc2(s, t, cfg).value, lc2_oracle(s, t, cfg.lc2_radius, cfg.variance_epsilon), 1e-6);
    }
}

TEST(Lc2, SourceAffineInvarianceAndRange)
{
    const Image2D s = uniform_image(24, 24, 6), t = uniform_image(24, 24, 7);
    const double base = lc2(s, t).value;
    EXPECT_NEAR(lc2(remap(s, 2.5, 1.0), t).value, base, 1e-6);
    EXPECT_NEAR(lc2(remap(s, -0.7, 4.0), t).value, base, 1e-6);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
}

TEST(Lc2, ConstantTargetDegenerate)
{
    const Score s = lc2(uniform_image(10, 10, 1), Image2D(10, 10));
    EXPECT_TRUE(s.degenerate);
    EXPECT_EQ(s.value, 0.0);
}

TEST(Lc2, ConstantSourceFallsBackToReducedSpan)
{
    const Image2D t = uniform_image(12, 12, 2);
    const Score s = lc2(Image2D(12, 12), t);
    EXPECT_FALSE(s.degenerate);
    EXPECT_NEAR(s.value, lc2_oracle(Image2D(12, 12), t, 3, 1e-8), 1e-9);
}

TEST(DisaSimilarity, ConstantAndZeroFields)
{
    FeatureMap m(5, 4, 3);
    FeatureVolume f({6, 6, 3}, 3, {1, 1, 1}, {});
    const float c[3] = {0.5f, -1.0f, 2.0f};
    for (int ch = 0; ch < 3; ++ch)
    {
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x)
                m.at(ch, x, y) = c[ch];
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x)
                    f.at(ch, x, y, z) = c[ch];
    }
    Affine3 t;
    t.a = rotation_matrix(PlanePose{0, 20, -10, {}});
    t.b = {30, -4, 2};
    EXPECT_NEAR(disa_similarity(m, f, t), 0.25 + 1.0 + 4.0, 1e-6);
    EXPECT_EQ(disa_similarity(FeatureMap(5, 4, 3), f, t), 0.0);
    EXPECT_THROW(disa_similarity(FeatureMap(5, 4, 2), f, t), Error);
}

TEST(DisaSimilarity, MatchesPerPositionOracleAndIsLinear)
{
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    FeatureMap m(6, 5, 4, {2.0, 2.0}, {1.0, 1.0}), m2(6, 5, 4, {2.0, 2.0}, {1.0, 1.0});
    FeatureVolume f({7, 8, 5}, 4, {2.0, 2.0, 3.0}, {0.0, 0.0, -1.0});
    for (float& v : m.data)
        v = u(rng);
    for (float& v : m2.data)
        v = u(rng);
    for (float& v : f.data)
        v = u(rng);
    Affine3 t;
    t.a = rotation_matrix(PlanePose{0, 7, 12, {}});
    t.b = {0.5, 1.5, 4.0};

    double total = 0.0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
        {
            const Vec2 p{1.0 + 2.0 * x, 1.0 + 2.0 * y};
            const Vec3 q{t.a[0][0] * p.x + t.a[0][1] * p.y + t.b.x, t.a[1][0] * p.x + t.a[1][1] * p.y + t.b.y,
                         t.a[2][0] * p.x + t.a[2][1] * p.y + t.b.z};
            const double fi[3] = {std::clamp(q.x / 2.0, 0.0, 6.0), std::clamp(q.y / 2.0, 0.0, 7.0),
                                  std::clamp((q.z + 1.0) / 3.0, 0.0, 4.0)};
            int i0[3];
            double w1[3];
            const int lim[3] = {6, 7, 4};
            for (int a = 0; a < 3; ++a)
            {
                i0[a] = std::min(static_cast<int>(fi[a]), lim[a] - 1);
                w1[a] = fi[a] - i0[a];
            }
            for (int c = 0; c < 4; ++c)
            {
                double s = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            s += (dx ? w1[0] : 1 - w1[0]) * (dy ? w1[1] : 1 - w1[1]) * (dz ? w1[2] : 1 - w1[2]) *
                                 f.at(c, i0[0] + dx, i0[1] + dy, i0[2] + dz);
                total += m.at(c, x, y) * s;
            }
        }
    EXPECT_NEAR(disa_similarity(m, f, t), total / 30.0, 1e-6);

    FeatureMap sum = m;
    for (std::size_t i = 0; i < sum.data.size(); ++i)
        sum.data[i] = m.data[i] + 3.0f * m2.data[i];
    EXPECT_NEAR(disa_similarity(sum, f, t), disa_similarity(m, f, t) + 3.0 * disa_similarity(m2, f, t), 1e-5);
}

TEST(Fre, IdentityAndOffsets)
{
    const std::vector<Vec3> a = {{1, 2, 3}, {4, 5, 6}};
    EXPECT_EQ(fre(a, a), 0.0);
    std::vector<Vec3> b = a;
    for (auto& p : b)
        p = p + Vec3{3, 4, 0};
    EXPECT_NEAR(fre(a, b), 5.0, 1e-12);
    EXPECT_THROW(fre(a, std::vector<Vec3>{{0, 0, 0}}), Error);
    EXPECT_THROW(fre(std::vector<Vec3>{}, std::vector<Vec3>{}), Error);
}

TEST(Fre, RandomPairsAndRigidInvariance)
{
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    std::vector<Vec3> a(20), b(20);
    double expected = 0.0;
    for (int i = 0; i < 20; ++i)
    {
        a[i] = {u(rng), u(rng), u(rng)};
        b[i] = {u(rng), u(rng), u(rng)};
        expected += std::sqrt((a[i].x - b[i].x) * (a[i].x - b[i].x) + (a[i].y - b[i].y) * (a[i].y - b[i].y) +
                              (a[i].z - b[i].z) * (a[i].z - b[i].z)) /
                    20.0;
    }
    EXPECT_NEAR(fre(a, b), expected, 1e-9);
    const PlaneFrame motion(PlanePose{12.0, 25.0, -40.0, {3.0, 7.0}});
    std::vector<Vec3> ma(20), mb(20);
    for (int i = 0; i < 20; ++i)
    {
        ma[i] = motion.to_world(a[i].x, a[i].y, a[i].z);
        mb[i] = motion.to_world(b[i].x, b[i].y, b[i].z);
    }
    EXPECT_NEAR(fre(ma, mb), expected, 1e-9);
}
