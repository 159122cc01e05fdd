#include "ppad/geometry.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace ppad;
using namespace ppad::geom;

namespace {

std::vector<Pose2> random_poses(CounterRng& rng, int n, double extent)
{
    std::vector<Pose2> p;
    for (int i = 0; i < n; ++i) {
        p.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-3.1, 3.1)});
    }
    return p;
}

// Separating-axis test on two rectangles. Returns the signed separation: the
// largest gap over the four candidate axes (positive = disjoint, negative =
// minimum penetration depth).
double sat_separation(const Pose2& pa, const BoxFootprint& ba, const Pose2& pb, const BoxFootprint& bb)
{
    const auto ca = box_corners(pa, ba);
    const auto cb = box_corners(pb, bb);
    const double axes[4][2] = {{std::cos(pa.heading), std::sin(pa.heading)},
                               {-std::sin(pa.heading), std::cos(pa.heading)},
                               {std::cos(pb.heading), std::sin(pb.heading)},
                               {-std::sin(pb.heading), std::cos(pb.heading)}};
    double sep = -kInf;
    for (const auto& ax : axes) {
        double amin = kInf, amax = -kInf, bmin = kInf, bmax = -kInf;
        for (const Vec2& c : ca) {
            const double p = c.x * ax[0] + c.y * ax[1];
            amin = std::min(amin, p);
            amax = std::max(amax, p);
        }
        for (const Vec2& c : cb) {
            const double p = c.x * ax[0] + c.y * ax[1];
            bmin = std::min(bmin, p);
            bmax = std::max(bmax, p);
        }
        sep = std::max(sep, std::max(bmin - amax, amin - bmax));
    }
    return sep;
}

} // namespace

TEST(PairwiseDistance, ThreeFourFive)
{
    const Pose2 q[] = {{0, 0, 0}};
    const Pose2 k[] = {{3, 4, 1.0}};
    EXPECT_EQ(pairwise_distance(q, k)(0, 0), 5.0);
}

TEST(PairwiseDistance, SelfDistanceIsZero)
{
    const Pose2 q[] = {{1, 1, 0}};
    EXPECT_EQ(pairwise_distance(q, q)(0, 0), 0.0);
}

TEST(PairwiseDistance, MatchesBruteForceDoubleLoop)
{
    CounterRng rng(101);
    const auto p = random_poses(rng, 8, 20.0);
    const Mat d = pairwise_distance(p, p);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            const double dx = p[i].x - p[j].x, dy = p[i].y - p[j].y;
            EXPECT_EQ(d(i, j), std::sqrt(dx * dx + dy * dy));
            EXPECT_EQ(d(i, j), d(j, i));
        }
}

TEST(PairwiseDistance, EmptyInputIsInvalid)
{
    const Pose2 q[] = {{0, 0, 0}};
    std::vector<Pose2> none;
    EXPECT_THROW(pairwise_distance(none, q), std::invalid_argument);
    EXPECT_THROW(pairwise_distance(q, none), std::invalid_argument);
}

TEST(PairwiseDistance, TriangleInequalityOnSampledTriples)
{
    CounterRng rng(102);
    const auto p = random_poses(rng, 12, 30.0);
    const Mat d = pairwise_distance(p, p);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            for (int k = 0; k < 12; ++k) EXPECT_LE(d(i, k), d(i, j) + d(j, k) + 1e-12);
}

TEST(KeyObjectsMask, BoundaryDistanceAttends)
{
    const Pose2 q[] = {{0, 0, 0}};
    const Pose2 k[] = {{3, 4, 0}};
    EXPECT_FALSE(key_objects_mask(q, k, 5.0).blocked(0, 0));
    EXPECT_TRUE(key_objects_mask(q, k, std::nextafter(5.0, 0.0)).blocked(0, 0));
}

TEST(KeyObjectsMask, InfiniteRangeNeverBlocks)
{
    CounterRng rng(103);
    const auto q = random_poses(rng, 5, 1e4);
    const auto k = random_poses(rng, 9, 1e4);
    const Mask m = key_objects_mask(q, k, kInf);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 9; ++j) EXPECT_FALSE(m.blocked(i, j));
}

TEST(KeyObjectsMask, MatchesThresholdOracle)
{
    CounterRng rng(104);
    const auto p = random_poses(rng, 16, 10.0);
    const Mask m = key_objects_mask(p, p, 7.5);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            const double d = std::hypot(p[i].x - p[j].x, p[i].y - p[j].y);
            EXPECT_EQ(m.blocked(i, j), d > 7.5);
        }
}

TEST(KeyObjectsMask, RejectsNonPositiveRange)
{
    const Pose2 q[] = {{0, 0, 0}};
    EXPECT_THROW(key_objects_mask(q, q, 0.0), std::invalid_argument);
    EXPECT_THROW(key_objects_mask(q, q, -3.0), std::invalid_argument);
    EXPECT_THROW(key_objects_mask(q, q, std::nan("")), std::invalid_argument);
}

TEST(KeyObjectsMask, MonotoneInRange)
{
    CounterRng rng(105);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_poses(rng, 4, 20.0);
        const auto k = random_poses(rng, 7, 20.0);
        double r1 = rng.uniform(0.1, 30.0), r2 = rng.uniform(0.1, 30.0);
        if (r1 > r2) std::swap(r1, r2);
        const Mask m1 = key_objects_mask(q, k, r1);
        const Mask m2 = key_objects_mask(q, k, r2);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 7; ++j)
                if (m2.blocked(i, j)) EXPECT_TRUE(m1.blocked(i, j));
    }
}

TEST(KeyObjectsMask, TinyRangeBlocksEveryDistinctPair)
{
    CounterRng rng(106);
    const auto p = random_poses(rng, 6, 5.0);
    const Mask m = key_objects_mask(p, p, 1e-300);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) EXPECT_EQ(m.blocked(i, j), i != j);
}

TEST(FootprintOverlap, IdenticalFootprintsOverlap)
{
    const BoxFootprint box{4.5, 2.0};
    const Pose2 p{3.3, -1.7, 0.4};
    EXPECT_TRUE(footprint_overlap(p, box, p, box, 0.5));
    const BoxFootprint tiny{0.1, 0.1};
    EXPECT_TRUE(footprint_overlap(p, tiny, p, tiny, 0.5));
}

TEST(FootprintOverlap, SeparatedCentersDoNotOverlap)
{
    const BoxFootprint a{4.5, 2.0}, b{0.7, 0.7};
    const double bound = 0.5 * (a.diagonal() + b.diagonal());
    CounterRng rng(107);
    for (int n = 0; n < 50; ++n) {
        const double ang = rng.uniform(-3.1, 3.1);
        const double d = bound + rng.uniform(1e-3, 5.0);
        EXPECT_FALSE(footprint_overlap({0, 0, rng.uniform(-3, 3)}, a, {d * std::cos(ang), d * std::sin(ang), 0.3}, b));
    }
}

TEST(FootprintOverlap, DegenerateBoxIsInvalid)
{
    EXPECT_THROW(footprint_overlap({}, {0.0, 1.0}, {}, {1.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(footprint_overlap({}, {1.0, 1.0}, {}, {1.0, -2.0}), std::invalid_argument);
}

TEST(FootprintOverlap, AgreesWithSeparatingAxisOracleAwayFromTangency)
{
    CounterRng rng(108);
    const double res = 0.1;
    // The grid can miss an overlap whose intersection contains no cell
    // center; that requires the penetration to be within a cell diagonal of
    // each footprint's edge.
    const double tol = 2.0 * res * std::numbers::sqrt2;
    int disagreements = 0;
    for (int n = 0; n < 100; ++n) {
        const BoxFootprint a{rng.uniform(0.5, 5.0), rng.uniform(0.5, 2.5)};
        const BoxFootprint b{rng.uniform(0.5, 5.0), rng.uniform(0.5, 2.5)};
        const Pose2 pa{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3.1, 3.1)};
        const Pose2 pb{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3.1, 3.1)};
        const double sep = sat_separation(pa, a, pb, b);
        const bool exact = sep <= 0.0;
        const bool grid = footprint_overlap(pa, a, pb, b, res);
        if (grid != exact) {
            ++disagreements;
            EXPECT_LE(std::abs(sep), tol) << "trial " << n;
        }
        EXPECT_EQ(grid, footprint_overlap(pb, b, pa, a, res));
    }
    EXPECT_LT(disagreements, 10);
}

TEST(Polylines, NearestSegmentAndSignedDistance)
{
    const std::vector<Polyline> bounds{{PolylineClass::boundary, {{-10, 2}, {10, 2}}},
                                       {PolylineClass::boundary, {{-10, -2}, {10, -2}}}};
    const std::vector<Region> road{{{0, 0, 0}, {20, 4}}};
    Vec2 g;
    EXPECT_NEAR(signed_boundary_distance(bounds, road, {0, 0.5}, &g), 1.5, 1e-12);
    EXPECT_NEAR(g.y, -1.0, 1e-12);
    EXPECT_NEAR(signed_boundary_distance(bounds, road, {0, 3.0}), -1.0, 1e-12);
    const NearestPoint np = nearest_on_polylines(bounds, {12, -3});
    EXPECT_EQ(np.polyline, 1);
    EXPECT_NEAR(np.distance, std::hypot(2.0, 1.0), 1e-12);
}

TEST(Polylines, SplitAndResamplePreserveEndpoints)
{
    const std::vector<Vec2> line{{0, 0}, {10, 0}, {10, 25}};
    const auto pieces = split_by_length(line, 12.0);
    ASSERT_EQ(pieces.size(), 3u);
    double total = 0;
    for (const auto& p : pieces) {
        EXPECT_LE(polyline_length(p), 12.0 + 1e-9);
        total += polyline_length(p);
    }
    EXPECT_NEAR(total, 35.0, 1e-9);
    EXPECT_EQ(pieces.front().front(), line.front());
    EXPECT_NEAR(pieces.back().back().y, 25.0, 1e-12);
    const auto r = resample(line, 8);
    EXPECT_EQ(r.size(), 8u);
    EXPECT_NEAR(r.back().y, 25.0, 1e-12);
    EXPECT_NEAR((r[1] - r[0]).norm(), 5.0, 1e-9);
}

TEST(Angles, WrapIntoHalfOpenInterval)
{
    EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
    EXPECT_DOUBLE_EQ(wrap_angle(-std::numbers::pi), std::numbers::pi);
    EXPECT_NEAR(wrap_angle(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-15);
}
