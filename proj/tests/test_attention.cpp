#include "ppad/attention.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace ppad;
using namespace ppad::attn;
using geom::Mask;
using geom::Pose2;
using testutil::random_mat;
using oracle::affine;
using oracle::dense_attention;
using oracle::scalar_bilinear;

namespace {

AttnParams random_attn(CounterRng& rng, int c, int h)
{
    AttnParams p(c, h);
    p.visit("a", [&](const std::string&, Mat& m) { testutil::fill_random(rng, m, 0.6); });
    return p;
}

Mask random_mask(CounterRng& rng, int rows, int cols, double p_block)
{
    Mask m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m.set(i, j, rng.bernoulli(p_block));
    return m;
}

BevGrid random_grid(CounterRng& rng, int h, int w, int c)
{
    BevGrid g(h, w, c, {-4.0, -3.0, 0.0}, 0.75);
    testutil::fill_random(rng, g.features, 1.0);
    return g;
}

} // namespace

TEST(MaskedMhca, SingleKeyIdentityReturnsKey)
{
    const Mat q = Mat::row({0.3, -1.2, 2.0, 0.5});
    const Mat k = Mat::row({1.0, 2.0, -3.0, 4.0});
    const Mat out = masked_mhca(q, k, Mask(1, 1), AttnParams::identity(4, 1));
    EXPECT_LT(max_abs_diff(out, k), 1e-15);
}

TEST(MaskedMhca, FullyBlockedRowIsExactlyZero)
{
    CounterRng rng(21);
    const AttnParams p = random_attn(rng, 8, 2);
    const Mat q = random_mat(rng, 3, 8);
    const Mat k = random_mat(rng, 5, 8);
    Mask m(3, 5);
    for (int j = 0; j < 5; ++j) m.set(1, j, true);
    m.set(0, 2, true);
    const Mat out = masked_mhca(q, k, m, p);
    for (int c = 0; c < 8; ++c) EXPECT_EQ(out(1, c), 0.0);
    for (const Mat& prob : attention_probabilities(q, k, m, p))
        for (int j = 0; j < 5; ++j) EXPECT_EQ(prob(1, j), 0.0);
}

TEST(MaskedMhca, MatchesDenseOracleTwoHeads)
{
    CounterRng rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const AttnParams p = random_attn(rng, 8, 2);
        const Mat q = random_mat(rng, 4, 8);
        const Mat k = random_mat(rng, 6, 8);
        const Mask m = random_mask(rng, 4, 6, 0.4);
        EXPECT_LT(max_abs_diff(masked_mhca(q, k, m, p), dense_attention(q, k, m, p)), 1e-10);
    }
}

TEST(MaskedMhca, ProbabilityRowsSumToOne)
{
    CounterRng rng(23);
    const AttnParams p = random_attn(rng, 12, 3);
    const Mat q = random_mat(rng, 5, 12);
    const Mat k = random_mat(rng, 7, 12);
    const Mask m = random_mask(rng, 5, 7, 0.5);
    for (const Mat& prob : attention_probabilities(q, k, m, p)) {
        for (int i = 0; i < 5; ++i) {
            double s = 0;
            for (int j = 0; j < 7; ++j) {
                if (m.blocked(i, j)) EXPECT_EQ(prob(i, j), 0.0);
                s += prob(i, j);
            }
            EXPECT_NEAR(s, m.row_fully_blocked(i) ? 0.0 : 1.0, 1e-12);
        }
    }
}

TEST(MaskedMhca, BlockedKeysDoNotInfluenceOutput)
{
    CounterRng rng(24);
    const AttnParams p = random_attn(rng, 8, 2);
    const Mat q = random_mat(rng, 3, 8);
    Mat k = random_mat(rng, 6, 8);
    Mask m(3, 6);
    for (int i = 0; i < 3; ++i) m.set(i, 4, true);
    const Mat before = masked_mhca(q, k, m, p);
    for (int c = 0; c < 8; ++c) k(4, c) = rng.uniform(-50, 50);
    EXPECT_EQ(masked_mhca(q, k, m, p), before);
}

TEST(MaskedMhca, KeyPermutationInvariance)
{
    CounterRng rng(25);
    const AttnParams p = random_attn(rng, 8, 4);
    const Mat q = random_mat(rng, 3, 8);
    const Mat k = random_mat(rng, 6, 8);
    const Mask m = random_mask(rng, 3, 6, 0.3);
    const int perm[] = {3, 0, 5, 1, 4, 2};
    Mat kp(6, 8);
    Mask mp(3, 6);
    for (int j = 0; j < 6; ++j) {
        for (int c = 0; c < 8; ++c) kp(j, c) = k(perm[j], c);
        for (int i = 0; i < 3; ++i) mp.set(i, j, m.blocked(i, perm[j]));
    }
    EXPECT_LT(max_abs_diff(masked_mhca(q, k, m, p), masked_mhca(q, kp, mp, p)), 1e-12);
}

TEST(MaskedMhca, RejectsBadShapes)
{
    const AttnParams p(8, 2);
    EXPECT_THROW(masked_mhca(Mat(2, 6), Mat(3, 8), Mask(2, 3), p), std::invalid_argument);
    EXPECT_THROW(masked_mhca(Mat(2, 8), Mat(3, 8), Mask(2, 4), p), std::invalid_argument);
    EXPECT_THROW(AttnParams(6, 4), std::invalid_argument);
}

TEST(MaskedMhca, GradientsMatchFiniteDifferences)
{
    CounterRng rng(26);
    AttnParams p = random_attn(rng, 8, 2);
    const Mask m = random_mask(rng, 3, 5, 0.3);
    std::vector<Mat*> leaves;
    p.visit("a", [&](const std::string&, Mat& w) { leaves.push_back(&w); });
    Mat query = random_mat(rng, 3, 8), keys = random_mat(rng, 5, 8);
    leaves.push_back(&query);
    leaves.push_back(&keys);
    auto loss = [&](ad::Tape& t) {
        ad::Var out = masked_mhca(t.param(query), t.param(keys), m, p);
        return testutil::random_projection(t, out, 2);
    };
    ad::Tape t;
    ad::Var y = loss(t);
    t.backward(y);
    double worst = 0;
    for (Mat* leaf : leaves) {
        const Mat g = t.param_grad(*leaf);
        for (std::size_t i = 0; i < leaf->size(); ++i) {
            const double orig = (*leaf)[i];
            (*leaf)[i] = orig + 1e-5;
            ad::Tape tp;
            const double fp = loss(tp).value()(0, 0);
            (*leaf)[i] = orig - 1e-5;
            ad::Tape tm;
            const double fm = loss(tm).value()(0, 0);
            (*leaf)[i] = orig;
            const double num = (fp - fm) / 2e-5;
            worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6}));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(BilinearSample, CellCenterReturnsCell)
{
    CounterRng rng(31);
    const BevGrid g = random_grid(rng, 5, 7, 3);
    const geom::Vec2 c = g.cell_center(2, 4);
    const auto s = bilinear_sample(g, {c.x, c.y, 0.0});
    for (int k = 0; k < 3; ++k) EXPECT_EQ(s[k], g.cell(2, 4)[k]);
}

TEST(BilinearSample, MidpointAveragesNeighbours)
{
    CounterRng rng(32);
    const BevGrid g = random_grid(rng, 5, 7, 3);
    const geom::Vec2 a = g.cell_center(1, 2), b = g.cell_center(1, 3);
    const auto s = bilinear_sample(g, {0.5 * (a.x + b.x), a.y, 0.0});
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(s[k], 0.5 * (g.cell(1, 2)[k] + g.cell(1, 3)[k]), 1e-14);
}

TEST(BilinearSample, MatchesScalarOracleAndZeroPadsOutside)
{
    CounterRng rng(33);
    const BevGrid g = random_grid(rng, 6, 9, 4);
    for (int n = 0; n < 200; ++n) {
        const double x = rng.uniform(-6.0, 4.0 + 9 * 0.75);
        const double y = rng.uniform(-5.0, 3.0 + 6 * 0.75);
        const auto s = bilinear_sample(g, {x, y, 0.0});
        const auto o = scalar_bilinear(g, x, y);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(s[k], o[k], 1e-12);
    }
    for (double v : bilinear_sample(g, {100.0, -100.0, 0.0})) EXPECT_EQ(v, 0.0);
}

TEST(DeformableAttention, ZeroOffsetsIdentityOutputReadsReferencePoint)
{
    CounterRng rng(41);
    const BevGrid g = random_grid(rng, 6, 8, 4);
    DeformParams p(4, 4);
    testutil::fill_random(rng, p.w_weight, 1.0);
    testutil::fill_random(rng, p.b_weight, 1.0);
    for (int i = 0; i < 4; ++i) p.w_out(i, i) = 1.0;
    const Pose2 ref{-1.3, -0.4, 0.0};
    const Mat out = deformable_bev_attention(random_mat(rng, 1, 4), ref, g, p);
    const auto expect = scalar_bilinear(g, ref.x, ref.y);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out(0, c), expect[c], 1e-12);
}

TEST(DeformableAttention, FarOutsideGridGivesZero)
{
    CounterRng rng(42);
    const BevGrid g = random_grid(rng, 6, 8, 4);
    DeformParams p(4, 4);
    p.visit("d", [&](const std::string&, Mat& m) { testutil::fill_random(rng, m, 0.3); });
    const Mat out = deformable_bev_attention(random_mat(rng, 1, 4), {500.0, 500.0, 0.0}, g, p);
    for (int c = 0; c < 4; ++c) EXPECT_EQ(out(0, c), 0.0);
}

TEST(DeformableAttention, MatchesStepwiseOracle)
{
    CounterRng rng(43);
    const BevGrid g = random_grid(rng, 6, 8, 4);
    DeformParams p(4, 3);
    p.visit("d", [&](const std::string&, Mat& m) { testutil::fill_random(rng, m, 0.8); });
    for (int trial = 0; trial < 20; ++trial) {
        const Mat q = random_mat(rng, 1, 4);
        const Pose2 ref{rng.uniform(-4, 2), rng.uniform(-3, 1), 0.0};
        const Mat off = affine(q, p.w_offset, &p.b_offset);
        const Mat logit = affine(q, p.w_weight, &p.b_weight);
        double top = logit(0, 0);
        for (int k = 1; k < 3; ++k) top = std::max(top, logit(0, k));
        double z = 0;
        for (int k = 0; k < 3; ++k) z += std::exp(logit(0, k) - top);
        Mat pooled(1, 4);
        for (int k = 0; k < 3; ++k) {
            const double w = std::exp(logit(0, k) - top) / z;
            const auto s = scalar_bilinear(g, ref.x + off(0, 2 * k), ref.y + off(0, 2 * k + 1));
            for (int c = 0; c < 4; ++c) pooled(0, c) += w * s[c];
        }
        const Mat expect = affine(pooled, p.w_out, nullptr);
        EXPECT_LT(max_abs_diff(deformable_bev_attention(q, ref, g, p), expect), 1e-12);
    }
}

TEST(DeformableAttention, GradientsMatchFiniteDifferences)
{
    CounterRng rng(44);
    BevGrid g = random_grid(rng, 6, 8, 4);
    DeformParams p(4, 3);
    p.visit("d", [&](const std::string&, Mat& m) { testutil::fill_random(rng, m, 0.3); });
    const kernels::GridMeta meta = g.meta();
    Mat queries = random_mat(rng, 3, 4);
    Mat refs(3, 2);
    for (int r = 0; r < 3; ++r) {
        // keep every sample comfortably inside a cell so floor() stays fixed
        refs(r, 0) = g.origin.x + (1 + 2 * r + 0.37) * g.cell_size;
        refs(r, 1) = g.origin.y + (2 + r + 0.61) * g.cell_size;
    }
    std::vector<Mat*> leaves{&queries, &refs, &g.features};
    p.visit("d", [&](const std::string&, Mat& m) { leaves.push_back(&m); });
    auto loss = [&](ad::Tape& t) {
        ad::Var out = deformable_bev_attention(t.param(queries), t.param(refs), t.param(g.features), meta, p);
        return testutil::random_projection(t, out, 3);
    };
    ad::Tape t;
    ad::Var y = loss(t);
    t.backward(y);
    double worst = 0;
    for (Mat* leaf : leaves) {
        const Mat grad = t.param_grad(*leaf);
        for (std::size_t i = 0; i < leaf->size(); ++i) {
            const double orig = (*leaf)[i];
            (*leaf)[i] = orig + 1e-6;
            ad::Tape tp;
            const double fp = loss(tp).value()(0, 0);
            (*leaf)[i] = orig - 1e-6;
            ad::Tape tm;
            const double fm = loss(tm).value()(0, 0);
            (*leaf)[i] = orig;
            const double num = (fp - fm) / 2e-6;
            worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6}));
        }
    }
    EXPECT_LT(worst, 1e-4);
}
