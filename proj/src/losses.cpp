#include "ppad/losses.hpp"

#include "ppad/errors.hpp"
#include "ppad/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ppad::losses {

using geom::Vec2;

void LossWeights::validate() const
{
    for (double v : {lambda1, lambda2, lambda3, lambda4, lambda5, zeta1, zeta2, d_safe, delta_bd, noise_sigma})
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument("LossWeights: weights and margins must be finite and nonnegative");
}

double constraint_loss(double col, double bd, double dir, const LossWeights& w)
{
    return w.lambda3 * col + w.lambda4 * bd + w.lambda5 * dir;
}

double total_loss(const LossBreakdown& p, const LossWeights& w)
{
    const std::pair<const char*, double> parts[] = {{"L_agent", p.L_agent}, {"L_plan", p.L_plan},
                                                    {"L_C", p.L_C},         {"L_plan_noisy", p.L_plan_noisy},
                                                    {"L_C_noisy", p.L_C_noisy}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v)) throw NumericError(std::string("total_loss: non-finite ") + name);
    const double l_s = w.lambda1 * p.L_agent; // the map term has no decoder to supervise
    return l_s + w.zeta1 * (p.L_C + p.L_plan) + w.zeta2 * (p.L_C_noisy + p.L_plan_noisy);
}

namespace {

double sign(double v)
{
    return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
}

void require_shape(const Mat& m, int rows, int cols, const char* what)
{
    if (m.rows() != rows || m.cols() != cols)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", got " + m.shape_str());
}

void zero_like(Mat* g, const Mat& m)
{
    if (g) *g = Mat(m.rows(), m.cols());
}

void emit(Summands* parts, double v)
{
    if (parts) parts->push_back(v);
}

// d half_extent / d u for unit direction u.
Vec2 half_extent_grad(const geom::BoxFootprint& box, double heading, Vec2 u)
{
    const Vec2 d{std::cos(heading), std::sin(heading)};
    const Vec2 n{-d.y, d.x};
    return d * (0.5 * box.length * sign(u.dot(d))) + n * (0.5 * box.width * sign(u.dot(n)));
}

} // namespace

double planning_loss(const Mat& pred, const Mat& gt, Mat* grad, Summands* parts)
{
    if (!pred.same_shape(gt) || pred.cols() != 2 || pred.rows() == 0)
        throw std::invalid_argument("planning_loss: offsets must be matching T x 2 (got " + pred.shape_str() + " vs " +
                                    gt.shape_str() + ")");
    const double T = pred.rows();
    zero_like(grad, pred);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        s += std::abs(d);
        emit(parts, std::abs(d) / T);
        if (grad) (*grad)[i] = sign(d) / T;
    }
    return s / T;
}

CollisionGeometry collision_geometry(const scene::Scene& sc, const scene::SceneConfig& cfg)
{
    CollisionGeometry g;
    g.ego_box = sc.ego_box;
    const int now = cfg.now(), T = cfg.t_fut;
    for (int t = 1; t <= T; ++t) g.ego_heading.push_back(sc.ego_gt[now + t].heading);
    g.agent_heading = Mat(static_cast<int>(sc.agents.size()), T);
    for (std::size_t a = 0; a < sc.agents.size(); ++a) {
        g.agent_box.push_back(sc.agents[a].box);
        for (int t = 1; t <= T; ++t) g.agent_heading(static_cast<int>(a), t - 1) = sc.agents[a].trajectory[now + t].heading;
    }
    return g;
}

double footprint_gap(Vec2 a, double ha, const geom::BoxFootprint& ba, Vec2 b, double hb, const geom::BoxFootprint& bb,
                     Vec2* grad)
{
    const Vec2 r = a - b;
    const double n = r.norm();
    if (n < 1e-12) {
        if (grad) *grad = {0.0, 0.0};
        return -(geom::half_extent_along(ba, ha, 1.0, 0.0) + geom::half_extent_along(bb, hb, 1.0, 0.0));
    }
    const Vec2 u = r * (1.0 / n);
    const double gap = n - geom::half_extent_along(ba, ha, u.x, u.y) - geom::half_extent_along(bb, hb, u.x, u.y);
    if (grad) {
        const Vec2 g = half_extent_grad(ba, ha, u) + half_extent_grad(bb, hb, u);
        // project onto the tangent of the unit circle: (I - u u^T) g / n
        const Vec2 tang = (g - u * u.dot(g)) * (1.0 / n);
        *grad = u - tang;
    }
    return gap;
}

double collision_loss(const Mat& ego, const Mat& fc, const Mat& conf, const CollisionGeometry& geo, double d_safe,
                      bool confidence_aware, Mat* g_ego, Mat* g_fc, Mat* g_conf, Summands* parts)
{
    const int T = ego.rows();
    const int na = conf.rows(), K = conf.cols();
    require_shape(ego, T, 2, "collision_loss ego");
    require_shape(fc, na * K, 2 * T, "collision_loss forecasts");
    if (static_cast<int>(geo.ego_heading.size()) != T || static_cast<int>(geo.agent_box.size()) != na)
        throw std::invalid_argument("collision_loss: geometry does not match the rollout");
    require_shape(geo.agent_heading, na, T, "collision_loss agent headings");
    zero_like(g_ego, ego);
    zero_like(g_fc, fc);
    zero_like(g_conf, conf);
    double total = 0;
    for (int a = 0; a < na; ++a) {
        int top = 0;
        for (int k = 1; k < K; ++k)
            if (conf(a, k) > conf(a, top)) top = k;
        for (int k = 0; k < K; ++k) {
            if (!confidence_aware && k != top) {
                for (int t = 0; t < T; ++t) emit(parts, 0.0);
                continue;
            }
            const double c = confidence_aware ? conf(a, k) : 1.0;
            const int r = a * K + k;
            double mode_sum = 0;
            for (int t = 0; t < T; ++t) {
                Vec2 g;
                const double gap = footprint_gap({ego(t, 0), ego(t, 1)}, geo.ego_heading[t], geo.ego_box,
                                                 {fc(r, 2 * t), fc(r, 2 * t + 1)}, geo.agent_heading(a, t),
                                                 geo.agent_box[a], &g);
                const double hinge = d_safe - gap;
                emit(parts, hinge > 0 ? c * hinge / T : 0.0);
                if (hinge <= 0) continue;
                mode_sum += hinge / T;
                if (g_ego) {
                    (*g_ego)(t, 0) -= c * g.x / T;
                    (*g_ego)(t, 1) -= c * g.y / T;
                }
                if (g_fc) {
                    (*g_fc)(r, 2 * t) += c * g.x / T;
                    (*g_fc)(r, 2 * t + 1) += c * g.y / T;
                }
            }
            total += c * mode_sum;
            if (g_conf && confidence_aware) (*g_conf)(a, k) = mode_sum;
        }
    }
    return total;
}

double boundary_loss(const Mat& ego, std::span<const geom::Polyline> boundaries, std::span<const geom::Region> drivable,
                     double delta, Mat* grad, Summands* parts)
{
    if (boundaries.empty()) throw std::invalid_argument("boundary_loss: empty boundary set");
    if (ego.cols() != 2 || ego.rows() == 0) throw std::invalid_argument("boundary_loss: ego must be T x 2");
    const int T = ego.rows();
    zero_like(grad, ego);
    double s = 0;
    for (int t = 0; t < T; ++t) {
        Vec2 g;
        const double d = geom::signed_boundary_distance(boundaries, drivable, {ego(t, 0), ego(t, 1)}, &g);
        emit(parts, delta - d > 0 ? (delta - d) / T : 0.0);
        if (delta - d <= 0) continue;
        s += (delta - d) / T;
        if (grad) {
            (*grad)(t, 0) = -g.x / T;
            (*grad)(t, 1) = -g.y / T;
        }
    }
    return s;
}

double directional_loss(const Mat& ego, std::span<const geom::Polyline> centerlines, Mat* grad, Summands* parts)
{
    if (centerlines.empty()) throw std::invalid_argument("directional_loss: no centerlines");
    if (ego.cols() != 2 || ego.rows() == 0) throw std::invalid_argument("directional_loss: ego must be T x 2");
    const int T = ego.rows();
    zero_like(grad, ego);
    if (T < 2) return 0.0;
    double s = 0;
    for (int t = 1; t < T; ++t) {
        const Vec2 step{ego(t, 0) - ego(t - 1, 0), ego(t, 1) - ego(t - 1, 1)};
        const double n = step.norm();
        if (n < 1e-9) {
            emit(parts, 0.0);
            continue;
        }
        const Vec2 tau = geom::nearest_on_polylines(centerlines, {ego(t, 0), ego(t, 1)}).tangent;
        const double cos = step.dot(tau) / n;
        s += (1.0 - cos) / (T - 1);
        emit(parts, (1.0 - cos) / (T - 1));
        if (grad) {
            const Vec2 dc = (tau - step * (cos / n)) * (1.0 / n);
            (*grad)(t, 0) -= dc.x / (T - 1);
            (*grad)(t, 1) -= dc.y / (T - 1);
            (*grad)(t - 1, 0) += dc.x / (T - 1);
            (*grad)(t - 1, 1) += dc.y / (T - 1);
        }
    }
    return s;
}

double agent_forecast_loss(const Mat& fc, const Mat& conf, const Mat& gt, Mat* g_fc, Mat* g_conf, Summands* parts)
{
    const int na = conf.rows(), K = conf.cols();
    if (na == 0 || K == 0) throw std::invalid_argument("agent_forecast_loss: need at least one agent and mode");
    if (gt.rows() != na || gt.cols() % 2 != 0 || gt.cols() == 0)
        throw std::invalid_argument("agent_forecast_loss: ground truth must be N_A x 2T");
    require_shape(fc, na * K, gt.cols(), "agent_forecast_loss forecasts");
    const int T = gt.cols() / 2;
    zero_like(g_fc, fc);
    zero_like(g_conf, conf);
    double total = 0;
    for (int a = 0; a < na; ++a) {
        int best = 0;
        double best_ade = geom::kInf;
        for (int k = 0; k < K; ++k) {
            double ade = 0;
            for (int t = 0; t < T; ++t)
                ade += std::hypot(fc(a * K + k, 2 * t) - gt(a, 2 * t), fc(a * K + k, 2 * t + 1) - gt(a, 2 * t + 1));
            if (ade < best_ade) best_ade = ade, best = k;
        }
        const int r = a * K + best;
        double l1 = 0;
        for (int c = 0; c < 2 * T; ++c) {
            const double d = fc(r, c) - gt(a, c);
            l1 += std::abs(d) / T;
            emit(parts, std::abs(d) / T / na);
            if (g_fc) (*g_fc)(r, c) = sign(d) / T / na;
        }
        const double p = conf(a, best);
        if (!(p > 0.0)) throw NumericError("agent_forecast_loss: confidence of the best mode is not positive");
        total += l1 - std::log(p);
        emit(parts, -std::log(p) / na);
        if (g_conf) (*g_conf)(a, best) = -1.0 / (p * na);
    }
    return total / na;
}

Mat perturb_trajectory(const Mat& gt_offsets, double sigma, std::uint64_t seed)
{
    if (!(sigma >= 0.0)) throw std::invalid_argument("perturb_trajectory: sigma must be nonnegative");
    if (gt_offsets.cols() != 2) throw std::invalid_argument("perturb_trajectory: offsets must be T x 2");
    CounterRng rng(seed, 0x6e6f697365ULL);
    Mat out = gt_offsets;
    double prev[2] = {0.0, 0.0};
    for (int t = 0; t < out.rows(); ++t)
        for (int c = 0; c < 2; ++c) {
            double z = rng.normal();
            while (std::abs(z) > 2.0) z = rng.normal();
            // noise on positions becomes a difference of consecutive draws on offsets
            out(t, c) += sigma * z - sigma * prev[c];
            prev[c] = z;
        }
    return out;
}

// --- tape wrappers -----------------------------------------------------------

ad::Var planning_loss(ad::Var pred, const Mat& gt, Summands* parts)
{
    Mat g;
    const double v = planning_loss(pred.value(), gt, &g, parts);
    const ad::Var in[] = {pred};
    return ad::scalar_with_grads(in, v, {std::move(g)});
}

ad::Var collision_loss(ad::Var ego, ad::Var fc, ad::Var conf, const CollisionGeometry& geo, double d_safe,
                       bool confidence_aware, Summands* parts)
{
    Mat ge, gf, gc;
    const double v =
        collision_loss(ego.value(), fc.value(), conf.value(), geo, d_safe, confidence_aware, &ge, &gf, &gc, parts);
    const ad::Var in[] = {ego, fc, conf};
    return ad::scalar_with_grads(in, v, {std::move(ge), std::move(gf), std::move(gc)});
}

ad::Var boundary_loss(ad::Var ego, std::span<const geom::Polyline> boundaries, std::span<const geom::Region> drivable,
                      double delta, Summands* parts)
{
    Mat g;
    const double v = boundary_loss(ego.value(), boundaries, drivable, delta, &g, parts);
    const ad::Var in[] = {ego};
    return ad::scalar_with_grads(in, v, {std::move(g)});
}

ad::Var directional_loss(ad::Var ego, std::span<const geom::Polyline> centerlines, Summands* parts)
{
    Mat g;
    const double v = directional_loss(ego.value(), centerlines, &g, parts);
    const ad::Var in[] = {ego};
    return ad::scalar_with_grads(in, v, {std::move(g)});
}

ad::Var agent_forecast_loss(ad::Var fc, ad::Var conf, const Mat& gt, Summands* parts)
{
    Mat gf, gc;
    const double v = agent_forecast_loss(fc.value(), conf.value(), gt, &gf, &gc, parts);
    const ad::Var in[] = {fc, conf};
    return ad::scalar_with_grads(in, v, {std::move(gf), std::move(gc)});
}

Targets targets(const scene::Scene& sc, const scene::SceneConfig& cfg)
{
    const int now = cfg.now(), T = cfg.t_fut;
    if (sc.ego_gt.size() < now + T + 1) throw std::invalid_argument("targets: ego trajectory shorter than the horizon");
    Targets out;
    out.ego_offsets = Mat(T, 2);
    out.ego_positions = Mat(T, 2);
    for (int t = 1; t <= T; ++t) {
        const auto& p = sc.ego_gt[now + t];
        const auto& q = sc.ego_gt[now + t - 1];
        out.ego_offsets(t - 1, 0) = p.x - q.x;
        out.ego_offsets(t - 1, 1) = p.y - q.y;
        out.ego_positions(t - 1, 0) = p.x;
        out.ego_positions(t - 1, 1) = p.y;
    }
    out.agents = Mat(static_cast<int>(sc.agents.size()), 2 * T);
    for (std::size_t a = 0; a < sc.agents.size(); ++a)
        for (int t = 1; t <= T; ++t) {
            out.agents(static_cast<int>(a), 2 * (t - 1)) = sc.agents[a].trajectory[now + t].x;
            out.agents(static_cast<int>(a), 2 * (t - 1) + 1) = sc.agents[a].trajectory[now + t].y;
        }
    return out;
}

} // namespace ppad::losses
