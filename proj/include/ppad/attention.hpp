#pragma once

#include "ppad/autodiff.hpp"
#include "ppad/geometry.hpp"
#include "ppad/kernels.hpp"
#include "ppad/tensor.hpp"

#include <string>
#include <vector>

namespace ppad::attn {

/// Multi-head cross-attention weights. Projections are C x C with a 1 x C
/// bias; head h owns columns [h*C/heads, (h+1)*C/heads).
struct AttnParams {
    int heads = 1;
    int channels = 0;
    Mat wq, bq, wk, wv, bv, wo, bo; // no key bias: softmax is invariant to it

    AttnParams() = default;
    AttnParams(int channels, int heads);
    /// Identity projections with zero biases.
    static AttnParams identity(int channels, int heads);
    void validate() const;

    template <typename F>
    void visit(const std::string& prefix, F&& f)
    {
        f(prefix + ".wq", wq);
        f(prefix + ".bq", bq);
        f(prefix + ".wk", wk);
        f(prefix + ".wv", wv);
        f(prefix + ".bv", bv);
        f(prefix + ".wo", wo);
        f(prefix + ".bo", bo);
    }
};

/// Deformable sampling around a reference point: P metric offsets and P
/// softmax weights predicted from the query, then a bias-free output
/// projection (so a query whose samples all fall off the grid yields zero).
struct DeformParams {
    int points = 1;
    int channels = 0;
    Mat w_offset, b_offset; // C x 2P, 1 x 2P  (meters; zero at construction)
    Mat w_weight, b_weight; // C x P,  1 x P
    Mat w_out;              // C x C

    DeformParams() = default;
    DeformParams(int channels, int points);
    void validate() const;

    template <typename F>
    void visit(const std::string& prefix, F&& f)
    {
        f(prefix + ".w_offset", w_offset);
        f(prefix + ".b_offset", b_offset);
        f(prefix + ".w_weight", w_weight);
        f(prefix + ".b_weight", b_weight);
        f(prefix + ".w_out", w_out);
    }
};

/// Axis-aligned metric feature grid; features stored [H*W x C], cell (i, j)
/// at row i*W + j, centered at origin + (j, i) * cell_size.
struct BevGrid {
    int height = 0;
    int width = 0;
    int channels = 0;
    geom::Pose2 origin; // center of cell (0, 0); heading must be 0
    double cell_size = 1.0;
    Mat features;

    BevGrid() = default;
    BevGrid(int height, int width, int channels, geom::Pose2 origin, double cell_size);
    kernels::GridMeta meta() const;
    std::span<double> cell(int i, int j) { return features.row_span(i * width + j); }
    std::span<const double> cell(int i, int j) const { return features.row_span(i * width + j); }
    geom::Vec2 cell_center(int i, int j) const
    {
        return {origin.x + j * cell_size, origin.y + i * cell_size};
    }
    void validate() const;
    bool operator==(const BevGrid&) const = default;
};

// --- value-level operations ------------------------------------------------

/// Scaled dot-product attention per head with blocked logits removed before
/// normalization, then the output projection. Rows whose keys are all
/// blocked come out exactly zero.
Mat masked_mhca(const Mat& query, const Mat& keys, const geom::Mask& mask, const AttnParams& params);

/// Per-head attention probabilities [Lq x Lk] of masked_mhca.
std::vector<Mat> attention_probabilities(const Mat& query, const Mat& keys, const geom::Mask& mask,
                                         const AttnParams& params);

/// Bilinear interpolation between the four surrounding cell centers; taps
/// outside the grid read as zero.
std::vector<double> bilinear_sample(const BevGrid& grid, const geom::Pose2& point);

/// Single-query deformable attention at a metric reference point.
Mat deformable_bev_attention(const Mat& query, const geom::Pose2& ref_point, const BevGrid& grid,
                             const DeformParams& params);

// --- differentiable forms ----------------------------------------------------

struct KeyProjection {
    ad::Var k;
    ad::Var v;
    int count = 0;
};

/// Key/value projections, reusable across queries against the same keys.
KeyProjection project_keys(ad::Var keys, const AttnParams& params);
ad::Var masked_mhca(ad::Var query, const KeyProjection& kv, const geom::Mask& mask, const AttnParams& params);
ad::Var masked_mhca(ad::Var query, ad::Var keys, const geom::Mask& mask, const AttnParams& params);

/// Batched deformable attention: one row per query, ref_points [R x 2],
/// grid features [H*W x C].
ad::Var deformable_bev_attention(ad::Var queries, ad::Var ref_points, ad::Var grid, const kernels::GridMeta& meta,
                                 const DeformParams& params);

} // namespace ppad::attn
