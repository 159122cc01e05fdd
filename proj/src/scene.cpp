#include "ppad/scene.hpp"

#include "ppad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace ppad::scene {

using geom::BoxFootprint;
using geom::Polyline;
using geom::PolylineClass;
using geom::Pose2;
using geom::Region;
using geom::Vec2;

const char* to_string(Scenario s)
{
    switch (s) {
    case Scenario::lane_change_merge: return "lane_change_merge";
    case Scenario::car_follow: return "car_follow";
    case Scenario::protected_turn: return "protected_turn";
    }
    return "?";
}

const char* to_string(DrivingCommand c)
{
    switch (c) {
    case DrivingCommand::straight: return "straight";
    case DrivingCommand::turn_left: return "turn_left";
    case DrivingCommand::turn_right: return "turn_right";
    }
    return "?";
}

Scenario parse_scenario(const std::string& s)
{
    if (s == "lane_change_merge") return Scenario::lane_change_merge;
    if (s == "car_follow") return Scenario::car_follow;
    if (s == "protected_turn") return Scenario::protected_turn;
    throw std::invalid_argument("unknown scenario '" + s + "'");
}

void Trajectory::validate() const
{
    if (waypoints.empty()) throw std::invalid_argument("Trajectory: empty");
    if (!(dt > 0.0)) throw std::invalid_argument("Trajectory: dt must be positive");
    for (std::size_t i = 1; i < waypoints.size(); ++i) {
        const double v = (waypoints[i].position() - waypoints[i - 1].position()).norm() / dt;
        if (!(v <= 30.0)) throw std::invalid_argument("Trajectory: step speed exceeds 30 m/s");
    }
}

void SceneConfig::validate() const
{
    if (agent_count < 1 || agent_count > 16) throw std::invalid_argument("SceneConfig: agent_count must be in [1, 16]");
    if (lane_count < 2 || lane_count > 4) throw std::invalid_argument("SceneConfig: lane_count must be in [2, 4]");
    if (t_obs < 2 || t_fut < 1) throw std::invalid_argument("SceneConfig: need t_obs >= 2 and t_fut >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("SceneConfig: dt must be positive");
    if (!(lane_width > 2.0)) throw std::invalid_argument("SceneConfig: lane_width must exceed 2 m");
    if (!(range_x > 0.0) || !(range_y > 0.0)) throw std::invalid_argument("SceneConfig: range must be positive");
    if (bev_width < 2 || bev_height < 2) throw std::invalid_argument("SceneConfig: BEV must be at least 2x2");
    if (std::abs(2.0 * range_y / bev_height - bev_cell()) > 1e-9) {
        throw std::invalid_argument("SceneConfig: BEV cells must be square over the perception range");
    }
    if (!(max_curvature > 0.0) || !(max_accel > 0.0)) throw std::invalid_argument("SceneConfig: bounds must be positive");
    if (!(pedestrian_ratio >= 0.0 && pedestrian_ratio <= 1.0)) {
        throw std::invalid_argument("SceneConfig: pedestrian_ratio must be in [0, 1]");
    }
    if (!(command_threshold > 0.0)) throw std::invalid_argument("SceneConfig: command_threshold must be positive");
    if (!(ego_box.length > 0.0 && ego_box.width > 0.0)) throw std::invalid_argument("SceneConfig: bad ego box");
}

std::vector<Polyline> Scene::boundaries() const
{
    std::vector<Polyline> out;
    for (const Polyline& p : map_elements)
        if (p.cls == PolylineClass::boundary) out.push_back(p);
    return out;
}

std::vector<Polyline> Scene::centerlines() const
{
    std::vector<Polyline> out;
    for (const Polyline& p : map_elements)
        if (p.cls == PolylineClass::centerline) out.push_back(p);
    return out;
}

DrivingCommand command_from_path(const Trajectory& ego, const SceneConfig& cfg)
{
    if (ego.size() != cfg.steps()) throw std::invalid_argument("command_from_path: trajectory length mismatch");
    const double lateral = ego.waypoints.back().y - ego[cfg.now()].y;
    if (lateral > cfg.command_threshold) return DrivingCommand::turn_left;
    if (lateral < -cfg.command_threshold) return DrivingCommand::turn_right;
    return DrivingCommand::straight;
}

namespace {

constexpr double kFineDt = 0.05;
constexpr double kFar = 80.0;

const BoxFootprint kPedestrianBox{0.7, 0.7};

/// Piecewise-linear reference path parameterized by arc length.
class Path {
public:
    Path() = default;
    explicit Path(std::vector<Vec2> pts) : pts_(std::move(pts))
    {
        s_.assign(pts_.size(), 0.0);
        for (std::size_t i = 1; i < pts_.size(); ++i) s_[i] = s_[i - 1] + (pts_[i] - pts_[i - 1]).norm();
    }

    const std::vector<Vec2>& points() const { return pts_; }

    Vec2 at(double s) const
    {
        if (s <= 0.0) return pts_.front();
        for (std::size_t i = 1; i < pts_.size(); ++i) {
            if (s <= s_[i] || i + 1 == pts_.size()) {
                const double len = s_[i] - s_[i - 1];
                const double f = len > 0 ? (s - s_[i - 1]) / len : 0.0;
                return pts_[i - 1] + (pts_[i] - pts_[i - 1]) * f;
            }
        }
        return pts_.back();
    }

    double project(Vec2 p) const
    {
        double best = geom::kInf, best_s = 0.0;
        for (std::size_t i = 1; i < pts_.size(); ++i) {
            const geom::NearestPoint np = geom::nearest_on_segment(p, pts_[i - 1], pts_[i]);
            if (np.distance < best) {
                best = np.distance;
                best_s = s_[i - 1] + (np.point - pts_[i - 1]).norm();
            }
        }
        return best_s;
    }

private:
    std::vector<Vec2> pts_;
    std::vector<double> s_;
};

struct Actor {
    AgentClass cls = AgentClass::vehicle;
    BoxFootprint box;
    Pose2 pose;
    double speed = 0.0;
    double v_desired = 0.0;
    Path path;
    double lateral_window = 0.0; // half-width used to find a leader ahead
    bool steer = true;
    std::vector<Pose2> samples;
    std::vector<double> sample_speed;
};

struct World {
    std::vector<Actor> actors;
    double t = 0.0;
};

using AccelHook = std::function<std::optional<double>(World&, int)>;

struct Leader {
    double gap = geom::kInf;
    double speed = 0.0;
};

Leader find_leader(const World& w, int i)
{
    const Actor& a = w.actors[i];
    const double ux = std::cos(a.pose.heading), uy = std::sin(a.pose.heading);
    Leader best;
    for (int j = 0; j < static_cast<int>(w.actors.size()); ++j) {
        if (j == i) continue;
        const Actor& b = w.actors[j];
        if (b.cls != AgentClass::vehicle) continue;
        const double dx = b.pose.x - a.pose.x, dy = b.pose.y - a.pose.y;
        const double lon = dx * ux + dy * uy;
        const double lat = -dx * uy + dy * ux;
        if (lon <= 0.0 || std::abs(lat) > a.lateral_window) continue;
        const double gap = lon - 0.5 * (a.box.length + b.box.length);
        if (gap < best.gap) best = {gap, b.speed * std::cos(b.pose.heading - a.pose.heading)};
    }
    return best;
}

double idm(double v, double v0, const Leader& lead)
{
    constexpr double a_max = 1.5, b = 2.0, s0 = 2.0, headway = 1.2;
    double acc = a_max * (1.0 - std::pow(v / std::max(v0, 0.1), 4));
    if (std::isfinite(lead.gap)) {
        const double s_star = s0 + std::max(0.0, v * headway + v * (v - lead.speed) / (2.0 * std::sqrt(a_max * b)));
        const double s = std::max(lead.gap, 0.1);
        acc -= a_max * (s_star / s) * (s_star / s);
    }
    return acc;
}

/// Advances every actor to the end time, sampling each dt.
void simulate(World& w, const SceneConfig& cfg, const AccelHook& hook)
{
    const int per_sample = static_cast<int>(std::lround(cfg.dt / kFineDt));
    const int total = (cfg.steps() - 1) * per_sample;
    auto record = [&] {
        for (Actor& a : w.actors) {
            a.samples.push_back(a.pose);
            a.sample_speed.push_back(a.speed);
        }
    };
    record();
    for (int step = 1; step <= total; ++step) {
        std::vector<double> acc(w.actors.size(), 0.0), curv(w.actors.size(), 0.0);
        for (int i = 0; i < static_cast<int>(w.actors.size()); ++i) {
            Actor& a = w.actors[i];
            if (a.cls == AgentClass::pedestrian) continue;
            std::optional<double> forced = hook ? hook(w, i) : std::nullopt;
            acc[i] = forced ? *forced : idm(a.speed, a.v_desired, find_leader(w, i));
            acc[i] = std::clamp(acc[i], -cfg.max_accel, cfg.max_accel);
            if (a.steer) {
                const double lookahead = std::clamp(0.9 * a.speed + 2.0, 3.0, 12.0);
                const Vec2 target = a.path.at(a.path.project(a.pose.position()) + lookahead);
                const double alpha = geom::wrap_angle(std::atan2(target.y - a.pose.y, target.x - a.pose.x) - a.pose.heading);
                curv[i] = std::clamp(2.0 * std::sin(alpha) / lookahead, -cfg.max_curvature, cfg.max_curvature);
            }
        }
        for (std::size_t i = 0; i < w.actors.size(); ++i) {
            Actor& a = w.actors[i];
            const double v_next = std::max(0.0, a.speed + acc[i] * kFineDt);
            const double v_mid = 0.5 * (a.speed + v_next);
            const double h_mid = a.pose.heading + 0.5 * v_mid * curv[i] * kFineDt;
            a.pose.x += v_mid * std::cos(h_mid) * kFineDt;
            a.pose.y += v_mid * std::sin(h_mid) * kFineDt;
            a.pose.heading = geom::wrap_angle(a.pose.heading + v_mid * curv[i] * kFineDt);
            a.speed = v_next;
        }
        w.t = step * kFineDt;
        if (step % per_sample == 0) record();
    }
}

struct Layout {
    int lanes = 3;
    double lw = 3.5;
    double lane_y(int i) const { return i * lw; }
    double bottom() const { return -0.5 * lw; }
    double top() const { return (lanes - 1) * lw + 0.5 * lw; }
};

std::vector<Vec2> lane_change_curve(double x0, double y_from, double y_to, double length)
{
    std::vector<Vec2> pts{{x0 - kFar, y_from}};
    constexpr int n = 24;
    for (int i = 0; i <= n; ++i) {
        const double f = static_cast<double>(i) / n;
        pts.push_back({x0 + f * length, y_from + (y_to - y_from) * 0.5 * (1.0 - std::cos(std::numbers::pi * f))});
    }
    pts.push_back({x0 + length + kFar, y_to});
    return pts;
}

double lane_change_length(double speed)
{
    return std::max(10.0, 2.0 * speed);
}

Actor make_vehicle(CounterRng& rng, double x, double y, double speed, const Layout& lay)
{
    Actor a;
    a.cls = AgentClass::vehicle;
    a.box = {rng.uniform(4.0, 5.0), rng.uniform(1.8, 2.1)};
    a.pose = {x, y, 0.0};
    a.speed = speed;
    a.v_desired = speed;
    a.path = Path({{-kFar - 100.0, y}, {kFar + 100.0, y}});
    a.lateral_window = 0.55 * lay.lw;
    return a;
}

Actor make_pedestrian(CounterRng& rng, double x, double y, bool forward)
{
    Actor a;
    a.cls = AgentClass::pedestrian;
    a.box = kPedestrianBox;
    a.speed = rng.uniform(0.8, 1.6);
    a.pose = {x, y, forward ? 0.0 : std::numbers::pi};
    a.steer = false;
    return a;
}

/// Adds randomly placed traffic until `count` actors (excluding the ego)
/// exist. Positions are drawn relative to the ego's expected position at the
/// current frame, with minimum spacing per lane.
void add_traffic(CounterRng& rng, World& w, int count, const Layout& lay, const SceneConfig& cfg, double ego_now_x,
                 const std::vector<int>& lanes_allowed)
{
    const double t_now = cfg.now() * cfg.dt;
    int guard = 0;
    while (static_cast<int>(w.actors.size()) - 1 < count) {
        if (++guard > 400) throw std::runtime_error("traffic placement failed");
        const double x_now = ego_now_x + rng.uniform(-0.8, 0.7) * cfg.range_x;
        if (rng.bernoulli(cfg.pedestrian_ratio)) {
            const bool upper = rng.bernoulli(0.5);
            const double y = upper ? lay.top() + rng.uniform(1.0, 2.5) : lay.bottom() - rng.uniform(1.0, 2.5);
            const bool forward = rng.bernoulli(0.5);
            Actor p = make_pedestrian(rng, 0.0, y, forward);
            p.pose.x = x_now - (forward ? 1.0 : -1.0) * p.speed * t_now;
            bool clear = true;
            for (const Actor& o : w.actors)
                if (o.cls == AgentClass::pedestrian && (o.pose.position() - p.pose.position()).norm() < 2.0) clear = false;
            if (clear) w.actors.push_back(p);
            continue;
        }
        const int lane = lanes_allowed[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(lanes_allowed.size()) - 1))];
        const double speed = rng.uniform(3.5, 7.0);
        Actor v = make_vehicle(rng, x_now - speed * t_now, lay.lane_y(lane), speed, lay);
        bool clear = true;
        for (const Actor& o : w.actors) {
            if (o.cls != AgentClass::vehicle) continue;
            if (std::abs(o.pose.y - v.pose.y) > 0.5 * lay.lw) continue;
            const double o_now = o.pose.x + o.speed * t_now;
            if (std::abs(o.pose.x - v.pose.x) < 10.0 || std::abs(o_now - x_now) < 10.0) clear = false;
        }
        if (clear) w.actors.push_back(v);
    }
}


struct Built {
    World world;
    AccelHook hook;
    std::vector<Polyline> map;
    std::vector<Region> regions;
    int conflictor = -1; // lane_change_merge only
    double naive_y_to = 0.0;
};

Region road_region(double x0, double x1, double y0, double y1)
{
    return Region{{0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.0}, {x1 - x0, y1 - y0}};
}

using Gap = std::optional<std::pair<double, double>>;

void add_straight_road(Built& b, const Layout& lay, Gap gap_top, Gap gap_bottom)
{
    const double x0 = -kFar - 100.0, x1 = kFar + 100.0;
    for (int i = 0; i < lay.lanes; ++i) {
        b.map.push_back({PolylineClass::centerline, {{x0, lay.lane_y(i)}, {x1, lay.lane_y(i)}}});
    }
    auto edge = [&](double y, Gap gap) {
        if (!gap) {
            b.map.push_back({PolylineClass::boundary, {{x0, y}, {x1, y}}});
            return;
        }
        b.map.push_back({PolylineClass::boundary, {{x0, y}, {gap->first, y}}});
        b.map.push_back({PolylineClass::boundary, {{gap->second, y}, {x1, y}}});
    };
    edge(lay.bottom(), gap_bottom);
    edge(lay.top(), gap_top);
    b.regions.push_back(road_region(x0, x1, lay.bottom(), lay.top()));
}

std::vector<int> all_lanes(const Layout& lay)
{
    std::vector<int> v;
    for (int i = 0; i < lay.lanes; ++i) v.push_back(i);
    return v;
}

Built build_car_follow(CounterRng& rng, const SceneConfig& cfg, const Layout& lay)
{
    Built b;
    add_straight_road(b, lay, std::nullopt, std::nullopt);
    const int ego_lane = rng.uniform_int(0, lay.lanes - 1);
    const double t_now = cfg.now() * cfg.dt;

    const double v_lead = rng.uniform(3.5, 6.0);
    Actor ego = make_vehicle(rng, 0.0, lay.lane_y(ego_lane), v_lead + rng.uniform(0.5, 2.5), lay);
    ego.box = cfg.ego_box;
    ego.v_desired = rng.uniform(7.0, 8.5);
    Actor lead = make_vehicle(rng, 0.0, ego.pose.y, v_lead, lay);
    lead.pose.x = rng.uniform(9.0, 13.0) + 0.5 * (ego.box.length + lead.box.length);
    b.world.actors = {ego, lead};
    add_traffic(rng, b.world, cfg.agent_count, lay, cfg, ego.speed * t_now, all_lanes(lay));

    // The lead follows its own speed schedule: cruise, then (often) brake.
    const bool brakes = rng.bernoulli(0.7);
    const double t_brake = t_now + rng.uniform(-0.5, 0.75);
    const double decel = rng.uniform(2.5, 4.0);
    const double v_after = brakes ? rng.uniform(0.0, 0.3) * v_lead : v_lead;
    b.hook = [=](World& w, int i) -> std::optional<double> {
        if (i != 1) return std::nullopt;
        const double target = w.t < t_brake ? v_lead : v_after;
        return std::clamp(2.0 * (target - w.actors[1].speed), -decel, 1.0);
    };
    return b;
}

Built build_lane_change(CounterRng& rng, const SceneConfig& cfg, const Layout& lay)
{
    Built b;
    add_straight_road(b, lay, std::nullopt, std::nullopt);
    const int ego_lane = rng.uniform_int(0, lay.lanes - 1);
    int dir = rng.bernoulli(0.5) ? 1 : -1;
    if (ego_lane + dir < 0 || ego_lane + dir >= lay.lanes) dir = -dir;
    const int target_lane = ego_lane + dir;
    const double t_now = cfg.now() * cfg.dt;

    const double v_e = rng.uniform(4.5, 7.0);
    Actor ego = make_vehicle(rng, 0.0, lay.lane_y(ego_lane), v_e, lay);
    ego.box = cfg.ego_box;
    ego.v_desired = v_e;
    const double v_c = v_e + rng.uniform(0.0, 1.0);
    Actor conflictor = make_vehicle(rng, 0.0, lay.lane_y(target_lane), v_c, lay);
    conflictor.pose.x = v_e * t_now + rng.uniform(2.0, 5.0) - v_c * t_now;
    b.world.actors = {ego, conflictor};
    b.conflictor = 1;
    b.naive_y_to = lay.lane_y(target_lane);
    add_traffic(rng, b.world, cfg.agent_count, lay, cfg, v_e * t_now, all_lanes(lay));

    // After the current frame the ego yields to the conflictor, then merges
    // behind it once the gap opens.
    auto merging = std::make_shared<bool>(false);
    const double yield_decel = rng.uniform(2.5, 3.5);
    const double y_from = lay.lane_y(ego_lane), y_to = lay.lane_y(target_lane);
    const double lw = lay.lw;
    b.hook = [=](World& w, int i) -> std::optional<double> {
        if (i != 0 || w.t < t_now - 1e-9 || *merging) return std::nullopt;
        Actor& e = w.actors[0];
        const Actor& c = w.actors[1];
        const double gap = c.pose.x - e.pose.x - 0.5 * (e.box.length + c.box.length);
        if (gap >= 0.5 + 0.25 * e.speed) {
            *merging = true;
            e.path = Path(lane_change_curve(e.pose.x, y_from, y_to, lane_change_length(e.speed)));
            e.lateral_window = 0.8 * lw;
            return std::nullopt;
        }
        return std::min(idm(e.speed, e.v_desired, find_leader(w, 0)), -yield_decel);
    };
    return b;
}

Built build_protected_turn(CounterRng& rng, const SceneConfig& cfg, const Layout& lay)
{
    Built b;
    const bool left = rng.bernoulli(0.5);
    const int ego_lane = left ? lay.lanes - 1 : 0;
    const double t_now = cfg.now() * cfg.dt;
    const double lw = lay.lw;
    const double v0 = rng.uniform(4.5, 6.5);
    const double v_turn = rng.uniform(3.5, 4.5);
    const double radius = rng.uniform(6.0, 8.0);
    const double x_i = v0 * t_now + rng.uniform(10.0, 16.0);
    const double y_lane = lay.lane_y(ego_lane);
    const double side = left ? 1.0 : -1.0;

    // Crossing road: two lanes centered on x_i leaving the main road on the
    // turning side.
    const double edge_y = left ? lay.top() : lay.bottom();
    const double far_y = edge_y + side * (kFar + 100.0);
    const Gap gap = std::make_pair(x_i - lw, x_i + lw);
    add_straight_road(b, lay, left ? gap : std::nullopt, left ? std::nullopt : gap);
    b.map.push_back({PolylineClass::boundary, {{x_i - lw, edge_y}, {x_i - lw, far_y}}});
    b.map.push_back({PolylineClass::boundary, {{x_i + lw, edge_y}, {x_i + lw, far_y}}});
    const double out_x = x_i + side * 0.5 * lw; // lane leaving the main road
    const double in_x = x_i - side * 0.5 * lw;
    b.map.push_back({PolylineClass::centerline, {{out_x, edge_y}, {out_x, far_y}}});
    b.map.push_back({PolylineClass::centerline, {{in_x, far_y}, {in_x, edge_y}}});
    b.regions.push_back(road_region(x_i - lw, x_i + lw, std::min(edge_y, far_y), std::max(edge_y, far_y)));

    const double x_start = out_x - radius;
    const Vec2 center{x_start, y_lane + side * radius};
    std::vector<Vec2> arc;
    constexpr int n = 16;
    for (int k = 0; k <= n; ++k) {
        const double th = 0.5 * std::numbers::pi * k / n;
        arc.push_back({center.x + radius * std::sin(th), center.y - side * radius * std::cos(th)});
    }
    b.map.push_back({PolylineClass::centerline, arc});

    std::vector<Vec2> route{{-kFar - 100.0, y_lane}};
    route.insert(route.end(), arc.begin(), arc.end());
    route.push_back({out_x, far_y});

    Actor ego = make_vehicle(rng, 0.0, y_lane, v0, lay);
    ego.box = cfg.ego_box;
    ego.v_desired = v0;
    ego.path = Path(route);
    b.world.actors = {ego};
    std::vector<int> lanes;
    for (int i = 0; i < lay.lanes; ++i)
        if (i != ego_lane) lanes.push_back(i);
    add_traffic(rng, b.world, cfg.agent_count, lay, cfg, v0 * t_now, lanes);

    const double s_start = ego.path.project({x_start, y_lane});
    const double s_end = s_start + 0.5 * std::numbers::pi * radius;
    b.hook = [=](World& w, int i) -> std::optional<double> {
        if (i != 0) return std::nullopt;
        const Actor& e = w.actors[0];
        const double s = e.path.project(e.pose.position());
        double v_ref = v0;
        if (s < s_start) v_ref = std::min(v0, std::sqrt(v_turn * v_turn + 2.0 * 1.5 * (s_start - s)));
        else if (s < s_end) v_ref = v_turn;
        return idm(e.speed, v_ref, find_leader(w, 0));
    };
    return b;
}

Pose2 to_frame(const Pose2& origin, const Pose2& p)
{
    const double c = std::cos(origin.heading), s = std::sin(origin.heading);
    const double dx = p.x - origin.x, dy = p.y - origin.y;
    return {c * dx + s * dy, -s * dx + c * dy, geom::wrap_angle(p.heading - origin.heading)};
}

Vec2 to_frame(const Pose2& origin, Vec2 p)
{
    return to_frame(origin, Pose2{p.x, p.y, 0.0}).position();
}

/// Liang-Barsky clip of segment a-b to the axis-aligned box |x| <= rx, |y| <= ry.
std::optional<std::pair<Vec2, Vec2>> clip_segment(Vec2 a, Vec2 b, double rx, double ry)
{
    double t0 = 0.0, t1 = 1.0;
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x + rx, rx - a.x, a.y + ry, ry - a.y};
    for (int k = 0; k < 4; ++k) {
        if (p[k] == 0.0) {
            if (q[k] < 0.0) return std::nullopt;
            continue;
        }
        const double r = q[k] / p[k];
        if (p[k] < 0.0) t0 = std::max(t0, r);
        else t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
    return std::make_pair(a + (b - a) * t0, a + (b - a) * t1);
}

std::vector<std::vector<Vec2>> clip_polyline(const std::vector<Vec2>& pts, double rx, double ry)
{
    std::vector<std::vector<Vec2>> out;
    std::vector<Vec2> cur;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const auto seg = clip_segment(pts[i - 1], pts[i], rx, ry);
        if (!seg) {
            if (cur.size() >= 2) out.push_back(cur);
            cur.clear();
            continue;
        }
        if (!cur.empty() && (cur.back() - seg->first).norm() > 1e-9) {
            if (cur.size() >= 2) out.push_back(cur);
            cur.clear();
        }
        if (cur.empty()) cur.push_back(seg->first);
        if ((seg->second - cur.back()).norm() > 1e-9) cur.push_back(seg->second);
        if ((seg->second - pts[i]).norm() > 1e-9) {
            if (cur.size() >= 2) out.push_back(cur);
            cur.clear();
        }
    }
    if (cur.size() >= 2) out.push_back(cur);
    std::erase_if(out, [](const std::vector<Vec2>& p) { return geom::polyline_length(p) < 0.5; });
    return out;
}

bool within_range(const Pose2& p, const SceneConfig& cfg)
{
    return std::abs(p.x) <= cfg.range_x && std::abs(p.y) <= cfg.range_y;
}

/// Constant-velocity lane change from the current frame, checked against the
/// conflicting agent's ground truth.
bool naive_lane_change_conflicts(const Built& b, const SceneConfig& cfg)
{
    const Actor& e = b.world.actors[0];
    const Actor& c = b.world.actors[static_cast<std::size_t>(b.conflictor)];
    const Pose2 now = e.samples[static_cast<std::size_t>(cfg.now())];
    const double v = e.sample_speed[static_cast<std::size_t>(cfg.now())];
    const Path naive(lane_change_curve(now.x, now.y, b.naive_y_to, lane_change_length(v)));
    double closest = geom::kInf;
    for (int k = 1; k <= cfg.t_fut; ++k) {
        const double x = now.x + v * k * cfg.dt;
        Vec2 q{x, b.naive_y_to}; // past the end of the curve

        const auto& pts = naive.points();
        for (std::size_t i = 1; i < pts.size(); ++i) {
            if (x <= pts[i].x) {
                const double f = (x - pts[i - 1].x) / (pts[i].x - pts[i - 1].x);
                q = pts[i - 1] + (pts[i] - pts[i - 1]) * f;
                break;
            }
        }
        const Pose2& a = c.samples[static_cast<std::size_t>(cfg.now() + k)];
        closest = std::min(closest, (q - a.position()).norm());
    }
    return closest < cfg.ego_box.length;
}

std::optional<Scene> finish(Built& b, Scenario scenario, std::uint64_t seed, const SceneConfig& cfg)
{
    const std::vector<Actor>& actors = b.world.actors;
    const Pose2 origin = actors[0].samples[static_cast<std::size_t>(cfg.now())];
    if (scenario == Scenario::lane_change_merge && !naive_lane_change_conflicts(b, cfg)) return std::nullopt;

    Scene sc;
    sc.scenario = scenario;
    sc.seed = seed;
    sc.scene_id = std::string(to_string(scenario)) + "-" + std::to_string(seed);
    sc.ego_box = cfg.ego_box;
    sc.ego_gt.dt = cfg.dt;
    for (const Pose2& p : actors[0].samples) sc.ego_gt.waypoints.push_back(to_frame(origin, p));
    for (std::size_t i = 1; i < actors.size(); ++i) {
        AgentTrack t;
        t.id = static_cast<int>(i) - 1;
        t.cls = actors[i].cls;
        t.box = actors[i].box;
        t.trajectory.dt = cfg.dt;
        for (const Pose2& p : actors[i].samples) t.trajectory.waypoints.push_back(to_frame(origin, p));
        sc.agents.push_back(std::move(t));
    }

    for (const Pose2& p : sc.ego_gt.waypoints)
        if (!within_range(p, cfg)) return std::nullopt;
    for (const AgentTrack& a : sc.agents)
        for (const Pose2& p : a.trajectory.waypoints)
            if (!within_range(p, cfg)) return std::nullopt;

    // Ground truth must be collision free under the evaluation footprint test.
    for (int k = 0; k < cfg.steps(); ++k) {
        for (std::size_t i = 0; i < sc.agents.size(); ++i) {
            const AgentTrack& a = sc.agents[i];
            if (geom::footprint_overlap(sc.ego_gt[k], sc.ego_box, a.trajectory[k], a.box)) return std::nullopt;
            for (std::size_t j = i + 1; j < sc.agents.size(); ++j) {
                const AgentTrack& o = sc.agents[j];
                if (geom::footprint_overlap(a.trajectory[k], a.box, o.trajectory[k], o.box)) return std::nullopt;
            }
        }
    }

    for (const Polyline& pl : b.map) {
        std::vector<Vec2> pts;
        for (const Vec2& p : pl.points) pts.push_back(to_frame(origin, p));
        for (auto& piece : clip_polyline(pts, cfg.range_x, cfg.range_y)) sc.map_elements.push_back({pl.cls, piece});
    }
    for (const Region& r : b.regions) sc.drivable.push_back({to_frame(origin, r.center), r.extent});
    if (sc.boundaries().empty() || sc.centerlines().empty()) return std::nullopt;

    sc.command = command_from_path(sc.ego_gt, cfg);
    sc.bev = rasterize_bev(sc, cfg);
    return sc;
}

} // namespace

Scene generate_scene(Scenario scenario, std::uint64_t seed, const SceneConfig& cfg)
{
    cfg.validate();
    const Layout lay{cfg.lane_count, cfg.lane_width};
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
        CounterRng rng(seed, static_cast<std::uint64_t>(scenario) * 1000003ULL + attempt);
        Built b;
        try {
            switch (scenario) {
            case Scenario::car_follow: b = build_car_follow(rng, cfg, lay); break;
            case Scenario::lane_change_merge: b = build_lane_change(rng, cfg, lay); break;
            case Scenario::protected_turn: b = build_protected_turn(rng, cfg, lay); break;
            }
        } catch (const std::runtime_error&) {
            continue; // placement failed; redraw
        }
        simulate(b.world, cfg, b.hook);
        if (auto sc = finish(b, scenario, seed, cfg)) return *sc;
    }
    throw std::runtime_error("generate_scene: no valid scene after 1000 attempts for " + std::string(to_string(scenario)) +
                             " seed " + std::to_string(seed));
}

attn::BevGrid rasterize_bev(const Scene& scene, const SceneConfig& cfg)
{
    const double cell = cfg.bev_cell();
    attn::BevGrid g(cfg.bev_height, cfg.bev_width, kBevRawChannels,
                    {-cfg.range_x + 0.5 * cell, -cfg.range_y + 0.5 * cell, 0.0}, cell);
    const std::vector<Polyline> bounds = scene.boundaries();
    const std::vector<Polyline> centers = scene.centerlines();
    const int now = cfg.now();
    for (int i = 0; i < g.height; ++i) {
        for (int j = 0; j < g.width; ++j) {
            const Vec2 c = g.cell_center(i, j);
            auto f = g.cell(i, j);
            const bool drivable = geom::inside_any(scene.drivable, c);
            f[0] = drivable ? 1.0 : 0.0;
            f[1] = bounds.empty() ? 0.0
                                  : std::clamp(geom::signed_boundary_distance(bounds, scene.drivable, c),
                                               -kBevDistanceClamp, kBevDistanceClamp);
            if (drivable && !centers.empty()) {
                const geom::NearestPoint np = geom::nearest_on_polylines(centers, c);
                f[3] = np.tangent.x;
                f[4] = np.tangent.y;
            }
        }
    }
    for (const AgentTrack& a : scene.agents) {
        if (now >= a.trajectory.size()) continue;
        const Pose2& p = a.trajectory[now];
        const Region box{p, a.box};
        for (int i = 0; i < g.height; ++i)
            for (int j = 0; j < g.width; ++j)
                if (box.contains(g.cell_center(i, j))) g.cell(i, j)[2] = 1.0;
        const int jc = static_cast<int>(std::floor((p.x - g.origin.x) / cell + 0.5));
        const int ic = static_cast<int>(std::floor((p.y - g.origin.y) / cell + 0.5));
        if (ic >= 0 && ic < g.height && jc >= 0 && jc < g.width) g.cell(ic, jc)[2] = 1.0;
    }
    return g;
}

std::vector<MapElementChunk> tokenize_map(const Scene& scene, double max_len, int points_per_element)
{
    if (!(max_len > 0.0) || points_per_element < 2) throw std::invalid_argument("tokenize_map: bad chunking");
    std::vector<MapElementChunk> out;
    for (const Polyline& pl : scene.map_elements) {
        for (const auto& piece : geom::split_by_length(pl.points, max_len)) {
            out.push_back({pl.cls, geom::resample(piece, points_per_element)});
        }
    }
    return out;
}

} // namespace ppad::scene
