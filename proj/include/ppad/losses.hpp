#pragma once

#include "ppad/autodiff.hpp"
#include "ppad/geometry.hpp"
#include "ppad/scene.hpp"

#include <cstdint>
#include <vector>

namespace ppad::losses {

struct LossWeights {
    double lambda1 = 1.0; // agent forecasting
    double lambda2 = 1.0; // map (no map decoder here, term is always 0)
    double lambda3 = 1.0; // confidence-aware collision
    double lambda4 = 1.0; // boundary overstep
    double lambda5 = 0.5; // lane direction
    double zeta1 = 0.6;   // clean branch
    double zeta2 = 0.4;   // noisy branch
    double d_safe = 1.0;  // meters beyond the summed half extents
    double delta_bd = 1.25; // half ego width + 0.25 m
    double noise_sigma = 0.3;
    void validate() const;
};

struct LossBreakdown {
    double L_agent = 0, L_plan = 0, L_CA_col = 0, L_bd = 0, L_dir = 0, L_C = 0;
    double L_plan_noisy = 0, L_C_noisy = 0, total = 0;
};

/// lambda3 * col + lambda4 * bd + lambda5 * dir.
double constraint_loss(double col, double bd, double dir, const LossWeights& w);
/// lambda1 * L_agent + zeta1 * (L_C + L_plan) + zeta2 * (L_C_noisy + L_plan_noisy).
/// Throws NumericError naming the first non-finite part.
double total_loss(const LossBreakdown& parts, const LossWeights& w);

// --- value kernels; gradients are written when the pointers are non-null -------
//
// `parts`, when given, receives the individual summands in a fixed layout
// (inactive terms appear as 0) so two evaluations can be differenced term by
// term instead of through their rounded totals.
using Summands = std::vector<double>;

/// (1/T) sum_t |w_t - gt_t|_1 over [T x 2] offsets.
double planning_loss(const Mat& pred, const Mat& gt, Mat* grad = nullptr, Summands* parts = nullptr);

/// Headings and boxes used to turn centers into footprints. Headings come
/// from ground truth: ego_heading [T], agent_heading [N_A x T].
struct CollisionGeometry {
    geom::BoxFootprint ego_box;
    std::vector<double> ego_heading;
    std::vector<geom::BoxFootprint> agent_box;
    Mat agent_heading;
};
CollisionGeometry collision_geometry(const scene::Scene& sc, const scene::SceneConfig& cfg);

/// Gap between two footprints: center distance minus both half extents along
/// the line joining the centers. grad (w.r.t. a - b) is optional.
double footprint_gap(geom::Vec2 a, double heading_a, const geom::BoxFootprint& box_a, geom::Vec2 b, double heading_b,
                     const geom::BoxFootprint& box_b, geom::Vec2* grad = nullptr);

/// sum_a sum_k conf[a,k] * (1/T) sum_t max(0, d_safe - gap). ego [T x 2],
/// forecasts [N_A*K x 2T], conf [N_A x K]. With confidence_aware = false only
/// the most confident mode of each agent counts, with weight 1.
double collision_loss(const Mat& ego, const Mat& forecasts, const Mat& conf, const CollisionGeometry& geo,
                      double d_safe, bool confidence_aware = true, Mat* g_ego = nullptr, Mat* g_forecasts = nullptr,
                      Mat* g_conf = nullptr, Summands* parts = nullptr);

/// (1/T) sum_t max(0, delta - d_t), d_t signed distance to the nearest boundary.
double boundary_loss(const Mat& ego, std::span<const geom::Polyline> boundaries, std::span<const geom::Region> drivable,
                     double delta, Mat* grad = nullptr, Summands* parts = nullptr);

/// (1/(T-1)) sum_{t>=2} (1 - cos theta_t) between the step p_t - p_{t-1} and
/// the tangent of the centerline nearest p_t; zero-length steps give 0.
double directional_loss(const Mat& ego, std::span<const geom::Polyline> centerlines, Mat* grad = nullptr,
                        Summands* parts = nullptr);

/// Winner-take-all: per agent, the mode with smallest mean displacement gets
/// (1/T) sum_t |f_t - gt_t|_1 - log conf; averaged over agents.
/// gt [N_A x 2T] absolute positions.
double agent_forecast_loss(const Mat& forecasts, const Mat& conf, const Mat& gt, Mat* g_forecasts = nullptr,
                           Mat* g_conf = nullptr, Summands* parts = nullptr);

/// Adds truncated (+-2 sigma) Gaussian noise to every waypoint position
/// implied by the offsets and returns the offsets of the noisy path.
Mat perturb_trajectory(const Mat& gt_offsets, double sigma, std::uint64_t seed);

// --- tape wrappers -----------------------------------------------------------

ad::Var planning_loss(ad::Var pred, const Mat& gt, Summands* parts = nullptr);
ad::Var collision_loss(ad::Var ego, ad::Var forecasts, ad::Var conf, const CollisionGeometry& geo, double d_safe,
                       bool confidence_aware = true, Summands* parts = nullptr);
ad::Var boundary_loss(ad::Var ego, std::span<const geom::Polyline> boundaries, std::span<const geom::Region> drivable,
                      double delta, Summands* parts = nullptr);
ad::Var directional_loss(ad::Var ego, std::span<const geom::Polyline> centerlines, Summands* parts = nullptr);
ad::Var agent_forecast_loss(ad::Var forecasts, ad::Var conf, const Mat& gt, Summands* parts = nullptr);

/// Ground-truth targets of a scene in the rollout's frame.
struct Targets {
    Mat ego_offsets;   // [T x 2]
    Mat ego_positions; // [T x 2]
    Mat agents;        // [N_A x 2T]
};
Targets targets(const scene::Scene& sc, const scene::SceneConfig& cfg);

} // namespace ppad::losses
