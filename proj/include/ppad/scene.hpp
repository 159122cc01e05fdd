#pragma once

#include "ppad/attention.hpp"
#include "ppad/geometry.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ppad::scene {

enum class Scenario { lane_change_merge, car_follow, protected_turn };
enum class DrivingCommand { straight = 0, turn_left = 1, turn_right = 2 };
enum class AgentClass { vehicle = 0, pedestrian = 1 };

const char* to_string(Scenario s);
const char* to_string(DrivingCommand c);
Scenario parse_scenario(const std::string& s);

struct Trajectory {
    std::vector<geom::Pose2> waypoints;
    double dt = 0.5;

    int size() const { return static_cast<int>(waypoints.size()); }
    const geom::Pose2& operator[](int i) const { return waypoints[static_cast<std::size_t>(i)]; }
    /// Throws if empty or if any step implies a speed above 30 m/s.
    void validate() const;
    bool operator==(const Trajectory&) const = default;
};

struct AgentTrack {
    int id = 0;
    AgentClass cls = AgentClass::vehicle;
    geom::BoxFootprint box;
    Trajectory trajectory;
    bool operator==(const AgentTrack&) const = default;
};

struct SceneConfig {
    int t_obs = 4;
    int t_fut = 6;
    double dt = 0.5;
    int agent_count = 5;
    int lane_count = 3;
    double lane_width = 3.5;
    double range_x = 30.0; // perception half-extent along x
    double range_y = 15.0;
    int bev_width = 64;
    int bev_height = 32;
    double max_curvature = 0.25; // 1/m
    double max_accel = 4.0;      // m/s^2, both signs
    double pedestrian_ratio = 0.15;
    double command_threshold = 0.5; // lateral offset (m) at the horizon that makes a turn command
    geom::BoxFootprint ego_box{4.5, 2.0};

    int steps() const { return t_obs + t_fut; }
    /// Index of the current frame inside a full trajectory.
    int now() const { return t_obs - 1; }
    double bev_cell() const { return 2.0 * range_x / bev_width; }
    void validate() const;
};

inline constexpr int kBevRawChannels = 5; // drivable, signed distance, occupancy, lane dir x, lane dir y
inline constexpr double kBevDistanceClamp = 5.0;

/// Ground-truth world in the ego frame at the current step: the ego sits at
/// the origin with heading 0 at index t_obs - 1.
struct Scene {
    std::string scene_id;
    Scenario scenario = Scenario::car_follow;
    std::uint64_t seed = 0;
    Trajectory ego_gt; // t_obs + t_fut poses
    DrivingCommand command = DrivingCommand::straight;
    geom::BoxFootprint ego_box{4.5, 2.0};
    std::vector<AgentTrack> agents;
    std::vector<geom::Polyline> map_elements;
    std::vector<geom::Region> drivable;
    attn::BevGrid bev;

    std::vector<geom::Polyline> boundaries() const;
    std::vector<geom::Polyline> centerlines() const;
    bool operator==(const Scene&) const = default;
};

Scene generate_scene(Scenario scenario, std::uint64_t seed, const SceneConfig& cfg);

attn::BevGrid rasterize_bev(const Scene& scene, const SceneConfig& cfg);

/// Command implied by the ground-truth lateral offset at the end of the horizon.
DrivingCommand command_from_path(const Trajectory& ego, const SceneConfig& cfg);

/// Map tokens: every polyline is cut into pieces of at most max_len meters,
/// each resampled to points_per_element points.
struct MapElementChunk {
    geom::PolylineClass cls;
    std::vector<geom::Vec2> points;
};
std::vector<MapElementChunk> tokenize_map(const Scene& scene, double max_len = 12.0, int points_per_element = 6);

// Text record, one file per scene; see docs/scene_format.md.
void write_scene(std::ostream& os, const Scene& scene);
Scene read_scene(std::istream& is);
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

/// FNV-1a over the serialized record.
std::uint64_t scene_checksum(const Scene& scene);

} // namespace ppad::scene
