#include "ppad/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace ppad::attn {

AttnParams::AttnParams(int channels_, int heads_)
    : heads(heads_), channels(channels_), wq(channels_, channels_), bq(1, channels_), wk(channels_, channels_),
      wv(channels_, channels_), bv(1, channels_), wo(channels_, channels_), bo(1, channels_)
{
    validate();
}

AttnParams AttnParams::identity(int channels, int heads)
{
    AttnParams p(channels, heads);
    for (int i = 0; i < channels; ++i) {
        p.wq(i, i) = 1.0;
        p.wk(i, i) = 1.0;
        p.wv(i, i) = 1.0;
        p.wo(i, i) = 1.0;
    }
    return p;
}

void AttnParams::validate() const
{
    if (heads <= 0 || channels <= 0) throw std::invalid_argument("AttnParams: heads and channels must be positive");
    if (channels % heads != 0) throw std::invalid_argument("AttnParams: channels not divisible by heads");
    for (const Mat* w : {&wq, &wk, &wv, &wo}) {
        if (w->rows() != channels || w->cols() != channels) throw std::invalid_argument("AttnParams: bad weight shape");
    }
    for (const Mat* b : {&bq, &bv, &bo}) {
        if (b->rows() != 1 || b->cols() != channels) throw std::invalid_argument("AttnParams: bad bias shape");
    }
}

DeformParams::DeformParams(int channels_, int points_)
    : points(points_), channels(channels_), w_offset(channels_, 2 * points_), b_offset(1, 2 * points_),
      w_weight(channels_, points_), b_weight(1, points_), w_out(channels_, channels_)
{
    validate();
}

void DeformParams::validate() const
{
    if (points < 1 || channels <= 0) throw std::invalid_argument("DeformParams: points and channels must be positive");
    if (w_offset.rows() != channels || w_offset.cols() != 2 * points || b_offset.cols() != 2 * points ||
        w_weight.rows() != channels || w_weight.cols() != points || b_weight.cols() != points ||
        w_out.rows() != channels || w_out.cols() != channels) {
        throw std::invalid_argument("DeformParams: bad weight shape");
    }
}

BevGrid::BevGrid(int h, int w, int c, geom::Pose2 o, double cs)
    : height(h), width(w), channels(c), origin(o), cell_size(cs), features(h * w, c)
{
    validate();
}

void BevGrid::validate() const
{
    if (height < 2 || width < 2) throw std::invalid_argument("BevGrid: height and width must be >= 2");
    if (!(cell_size > 0.0)) throw std::invalid_argument("BevGrid: cell_size must be positive");
    if (origin.heading != 0.0) throw std::invalid_argument("BevGrid: rotated grids are not supported");
    if (features.rows() != height * width || features.cols() != channels) {
        throw std::invalid_argument("BevGrid: feature shape mismatch");
    }
}

kernels::GridMeta BevGrid::meta() const
{
    return {height, width, channels, origin.x, origin.y, cell_size};
}

namespace {

void check_tokens(const Mat& m, int channels, const char* what)
{
    if (m.cols() != channels) {
        throw std::invalid_argument(std::string(what) + ": token width " + std::to_string(m.cols()) +
                                    " != channels " + std::to_string(channels));
    }
}

struct HeadOut {
    ad::Var out;
    std::vector<ad::Var> probs;
};

HeadOut attend(ad::Var query, const KeyProjection& kv, const geom::Mask& mask, const AttnParams& p)
{
    ad::Tape& t = *query.tape();
    check_tokens(query.value(), p.channels, "masked_mhca query");
    if (mask.rows() != query.rows() || mask.cols() != kv.count) {
        throw std::invalid_argument("masked_mhca: mask shape mismatch");
    }
    const int d = p.channels / p.heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    ad::Var q = ad::add_row(ad::matmul(query, t.param(p.wq)), t.param(p.bq));
    HeadOut r;
    std::vector<ad::Var> heads;
    for (int h = 0; h < p.heads; ++h) {
        ad::Var qh = ad::slice_cols(q, h * d, (h + 1) * d);
        ad::Var kh = ad::slice_cols(kv.k, h * d, (h + 1) * d);
        ad::Var vh = ad::slice_cols(kv.v, h * d, (h + 1) * d);
        ad::Var logits = ad::scale(ad::matmul_nt(qh, kh), inv);
        ad::Var prob = ad::masked_softmax(logits, &mask.flags());
        r.probs.push_back(prob);
        heads.push_back(ad::matmul(prob, vh));
    }
    ad::Var o = p.heads == 1 ? heads[0] : ad::concat_cols(heads);
    ad::Var out = ad::add_row(ad::matmul(o, t.param(p.wo)), t.param(p.bo));
    std::vector<unsigned char> dead(query.rows(), 0);
    bool any_dead = false;
    for (int i = 0; i < query.rows(); ++i) {
        dead[i] = mask.row_fully_blocked(i) ? 1 : 0;
        any_dead = any_dead || dead[i];
    }
    r.out = any_dead ? ad::zero_rows(out, std::move(dead)) : out;
    return r;
}

} // namespace

KeyProjection project_keys(ad::Var keys, const AttnParams& p)
{
    p.validate();
    check_tokens(keys.value(), p.channels, "masked_mhca keys");
    ad::Tape& t = *keys.tape();
    KeyProjection kv;
    kv.k = ad::matmul(keys, t.param(p.wk));
    kv.v = ad::add_row(ad::matmul(keys, t.param(p.wv)), t.param(p.bv));
    kv.count = keys.rows();
    return kv;
}

ad::Var masked_mhca(ad::Var query, const KeyProjection& kv, const geom::Mask& mask, const AttnParams& p)
{
    return attend(query, kv, mask, p).out;
}

ad::Var masked_mhca(ad::Var query, ad::Var keys, const geom::Mask& mask, const AttnParams& p)
{
    return attend(query, project_keys(keys, p), mask, p).out;
}

Mat masked_mhca(const Mat& query, const Mat& keys, const geom::Mask& mask, const AttnParams& params)
{
    ad::Tape t;
    return masked_mhca(t.constant(query), t.constant(keys), mask, params).value();
}

std::vector<Mat> attention_probabilities(const Mat& query, const Mat& keys, const geom::Mask& mask,
                                         const AttnParams& params)
{
    ad::Tape t;
    const HeadOut r = attend(t.constant(query), project_keys(t.constant(keys), params), mask, params);
    std::vector<Mat> out;
    for (const ad::Var& p : r.probs) out.push_back(p.value());
    return out;
}

std::vector<double> bilinear_sample(const BevGrid& grid, const geom::Pose2& point)
{
    grid.validate();
    Mat pts(1, 2);
    pts(0, 0) = point.x;
    pts(0, 1) = point.y;
    Mat out;
    kernels::bilinear_sample(grid.features, grid.meta(), pts, out);
    return out.values();
}

ad::Var deformable_bev_attention(ad::Var queries, ad::Var ref_points, ad::Var grid, const kernels::GridMeta& meta,
                                 const DeformParams& p)
{
    p.validate();
    check_tokens(queries.value(), p.channels, "deformable_bev_attention query");
    if (meta.channels != p.channels || grid.cols() != p.channels) {
        throw std::invalid_argument("deformable_bev_attention: grid channels do not match params");
    }
    if (ref_points.rows() != queries.rows() || ref_points.cols() != 2) {
        throw std::invalid_argument("deformable_bev_attention: ref_points must be R x 2");
    }
    ad::Tape& t = *queries.tape();
    const int R = queries.rows();
    const int P = p.points;
    ad::Var offsets = ad::add_row(ad::matmul(queries, t.param(p.w_offset)), t.param(p.b_offset));
    ad::Var locations = ad::add(ad::repeat_each_row(ref_points, P), ad::reshape(offsets, R * P, 2));
    ad::Var logits = ad::add_row(ad::matmul(queries, t.param(p.w_weight)), t.param(p.b_weight));
    ad::Var weights = ad::masked_softmax(logits, nullptr);
    ad::Var samples = ad::bilinear_sample(grid, locations, meta);
    ad::Var pooled = ad::group_weighted_sum(weights, samples);
    return ad::matmul(pooled, t.param(p.w_out));
}

Mat deformable_bev_attention(const Mat& query, const geom::Pose2& ref_point, const BevGrid& grid,
                             const DeformParams& params)
{
    grid.validate();
    if (query.rows() != 1) throw std::invalid_argument("deformable_bev_attention: expected a single query row");
    ad::Tape t;
    Mat ref(1, 2);
    ref(0, 0) = ref_point.x;
    ref(0, 1) = ref_point.y;
    return deformable_bev_attention(t.constant(query), t.constant(ref), t.constant(grid.features), grid.meta(),
                                    params)
        .value();
}

} // namespace ppad::attn
