#pragma once

#include "ppad/geometry.hpp"
#include "ppad/scene.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace ppad::metrics {

/// stp3: cumulative mean of the per-step values up to each second.
/// uniad: the value at exactly each second.
enum class Convention { stp3, uniad };

/// Values at 1 s, 2 s, 3 s and their mean.
using Horizon = std::array<double, 4>;

inline constexpr int kSteps = 6; // 3 s at 0.5 s
inline constexpr double kMissThreshold = 2.0;

/// Reduces a 6-step sequence to the reported horizons.
Horizon horizons(std::span<const double> per_step, Convention c);

std::vector<double> l2_per_step(const scene::Trajectory& pred, const scene::Trajectory& gt);
Horizon l2_metrics(const scene::Trajectory& pred, const scene::Trajectory& gt, Convention c);

/// c_t = 1 when the ego footprint at plan step t overlaps any GT agent at the
/// same future step (agent waypoint index now + 1 + t).
std::vector<double> collision_per_step(const scene::Trajectory& plan, const geom::BoxFootprint& ego_box,
                                       std::span<const scene::AgentTrack> agents, int now, double resolution = 0.5);
/// Per-scene collision values in percent.
Horizon collision_metrics(const scene::Trajectory& plan, const geom::BoxFootprint& ego_box,
                          std::span<const scene::AgentTrack> agents, int now, Convention c, double resolution = 0.5);

struct ForecastMetrics {
    double min_ade = 0, min_fde = 0, miss_rate = 0;
    int agents = 0;
};
/// forecasts [N_A*K x 2T], gt [N_A x 2T]; confidences are not used by these
/// metrics but the shape is checked.
ForecastMetrics forecast_metrics(const Mat& forecasts, const Mat& confidences, const Mat& gt,
                                 double miss_threshold = kMissThreshold);

/// Per-scene raw values kept for the per-scene CSV.
struct SceneMetrics {
    std::string scene_id;
    std::vector<double> e; // L2 per step
    std::vector<double> c; // collision indicator per step
    ForecastMetrics forecast;
};

struct MetricsReport {
    Horizon l2_stp3{}, l2_uniad{}, cr_stp3{}, cr_uniad{};
    double minADE = 0, minFDE = 0, miss_rate = 0;
    int scene_count = 0;
};

/// Scene-averaged report; forecast metrics are averaged over all agents.
MetricsReport aggregate(std::span<const SceneMetrics> scenes);

std::string to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

/// Header plus one row per scene: id, e1..e6, c1..c6, minADE, minFDE, misses, agents.
void write_scene_csv(std::ostream& os, std::span<const SceneMetrics> scenes);

} // namespace ppad::metrics
