#include "ppad/autodiff.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ppad;
using testutil::gradient_check;
using testutil::random_mat;
using testutil::random_projection;

namespace {
constexpr double kTol = 1e-6;
}

TEST(Autodiff, MatmulAndBiasGradients)
{
    CounterRng rng(1);
    std::vector<Mat> in{random_mat(rng, 3, 4), random_mat(rng, 4, 5), random_mat(rng, 1, 5)};
    const double err = gradient_check(in, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        ad::Var y = ad::tanh(ad::add_row(ad::matmul(v[0], v[1]), v[2]));
        return random_projection(t, y, 7);
    });
    EXPECT_LT(err, kTol);
}

TEST(Autodiff, MatmulTransposedGradients)
{
    CounterRng rng(2);
    std::vector<Mat> in{random_mat(rng, 3, 4), random_mat(rng, 6, 4)};
    const double err = gradient_check(in, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return random_projection(t, ad::matmul_nt(v[0], v[1]), 8);
    });
    EXPECT_LT(err, kTol);
}

TEST(Autodiff, StructuralOpsGradients)
{
    CounterRng rng(3);
    std::vector<Mat> in{random_mat(rng, 4, 6), random_mat(rng, 4, 2)};
    const double err = gradient_check(in, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        ad::Var a = ad::slice_cols(v[0], 1, 5);
        ad::Var b = ad::slice_rows(v[0], 1, 3);
        ad::Var parts[] = {a, v[1]};
        ad::Var c = ad::concat_cols(parts);
        ad::Var r = ad::reshape(c, 6, 4);
        ad::Var rows[] = {r, ad::gather_rows(r, {3, 0, 0})};
        ad::Var stacked = ad::concat_rows(rows);
        ad::Var rep = ad::repeat_each_row(b, 3);
        ad::Var cs = ad::cumsum_rows(stacked);
        ad::Var mx = ad::max_rows(stacked);
        ad::Var mn = ad::mean_rows(rep);
        return ad::add(ad::add(random_projection(t, cs, 1), random_projection(t, mx, 2)),
                       random_projection(t, mn, 3));
    });
    EXPECT_LT(err, kTol);
}

TEST(Autodiff, MaskedSoftmaxGradientAndFullyBlockedRow)
{
    CounterRng rng(4);
    ad::BlockMask mask{0, 1, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1};
    std::vector<Mat> in{random_mat(rng, 3, 4)};
    const double err = gradient_check(in, [&mask](ad::Tape& t, const std::vector<ad::Var>& v) {
        return random_projection(t, ad::masked_softmax(v[0], &mask), 5);
    });
    EXPECT_LT(err, kTol);

    ad::Tape t;
    const Mat y = ad::masked_softmax(t.constant(in[0]), &mask).value();
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y(1, c), 0.0);
    EXPECT_EQ(y(0, 1), 0.0);
    EXPECT_NEAR(y(0, 0) + y(0, 2) + y(0, 3), 1.0, 1e-15);
}

TEST(Autodiff, BilinearSampleGradientInGridAndLocation)
{
    CounterRng rng(5);
    kernels::GridMeta meta{5, 6, 3, -1.0, -2.0, 0.7};
    // keep points off cell boundaries so the kink of floor() is not crossed
    Mat pts(7, 2);
    for (int i = 0; i < 7; ++i) {
        pts(i, 0) = meta.origin_x + (rng.uniform_int(-1, 5) + rng.uniform(0.1, 0.9)) * meta.cell;
        pts(i, 1) = meta.origin_y + (rng.uniform_int(-1, 4) + rng.uniform(0.1, 0.9)) * meta.cell;
    }
    std::vector<Mat> in{random_mat(rng, 30, 3), pts};
    const double err = gradient_check(in, [&meta](ad::Tape& t, const std::vector<ad::Var>& v) {
        return random_projection(t, ad::bilinear_sample(v[0], v[1], meta), 6);
    });
    EXPECT_LT(err, kTol);
}

TEST(Autodiff, GroupWeightedSumAndZeroRows)
{
    CounterRng rng(6);
    std::vector<Mat> in{random_mat(rng, 3, 2), random_mat(rng, 6, 4)};
    const double err = gradient_check(in, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        ad::Var g = ad::group_weighted_sum(v[0], v[1]);
        return random_projection(t, ad::zero_rows(g, {0, 1, 0}), 9);
    });
    EXPECT_LT(err, kTol);
}

TEST(Autodiff, TiedParametersShareOneLeaf)
{
    Mat w(1, 1, 3.0);
    ad::Tape t;
    ad::Var a = t.param(w);
    ad::Var b = t.param(w);
    EXPECT_EQ(a.id(), b.id());
    ad::Var y = ad::mul(a, b);
    t.backward(y);
    EXPECT_DOUBLE_EQ(t.param_grad(w)(0, 0), 6.0);
}

TEST(Autodiff, ConstantsReceiveNoGradientWork)
{
    ad::Tape t;
    ad::Var c = t.constant(Mat(2, 2, 1.0));
    ad::Var y = ad::sum_all(ad::tanh(c));
    Mat p(1, 1, 2.0);
    ad::Var z = ad::add(y, t.param(p));
    t.backward(z);
    EXPECT_TRUE(t.grad(c).empty());
    EXPECT_DOUBLE_EQ(t.param_grad(p)(0, 0), 1.0);
}

TEST(Autodiff, BackwardRequiresScalar)
{
    ad::Tape t;
    Mat p(2, 1, 1.0);
    EXPECT_THROW(t.backward(t.param(p)), std::invalid_argument);
}
