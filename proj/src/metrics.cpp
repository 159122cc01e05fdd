#include "ppad/metrics.hpp"

#include "ppad/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace ppad::metrics {

Horizon horizons(std::span<const double> e, Convention c)
{
    if (e.size() != kSteps) throw std::invalid_argument("horizons: expected 6 per-step values");
    Horizon h{};
    for (int k = 1; k <= 3; ++k) {
        if (c == Convention::uniad) {
            h[k - 1] = e[2 * k - 1];
        } else {
            double s = 0;
            for (int t = 0; t < 2 * k; ++t) s += e[t];
            h[k - 1] = s / (2 * k);
        }
    }
    h[3] = (h[0] + h[1] + h[2]) / 3.0;
    return h;
}

std::vector<double> l2_per_step(const scene::Trajectory& pred, const scene::Trajectory& gt)
{
    if (pred.size() != kSteps || gt.size() != kSteps)
        throw std::invalid_argument("l2_metrics: both trajectories must have 6 steps");
    std::vector<double> e(kSteps);
    for (int t = 0; t < kSteps; ++t) e[t] = std::hypot(pred[t].x - gt[t].x, pred[t].y - gt[t].y);
    return e;
}

Horizon l2_metrics(const scene::Trajectory& pred, const scene::Trajectory& gt, Convention c)
{
    return horizons(l2_per_step(pred, gt), c);
}

std::vector<double> collision_per_step(const scene::Trajectory& plan, const geom::BoxFootprint& ego_box,
                                       std::span<const scene::AgentTrack> agents, int now, double resolution)
{
    if (plan.size() != kSteps) throw std::invalid_argument("collision_metrics: plan must have 6 steps");
    std::vector<double> c(kSteps, 0.0);
    for (int t = 0; t < kSteps; ++t)
        for (const scene::AgentTrack& a : agents) {
            if (a.trajectory.size() <= now + 1 + t)
                throw std::invalid_argument("collision_metrics: agent trajectory shorter than the horizon");
            if (geom::footprint_overlap(plan[t], ego_box, a.trajectory[now + 1 + t], a.box, resolution)) {
                c[t] = 1.0;
                break;
            }
        }
    return c;
}

Horizon collision_metrics(const scene::Trajectory& plan, const geom::BoxFootprint& ego_box,
                          std::span<const scene::AgentTrack> agents, int now, Convention c, double resolution)
{
    Horizon h = horizons(collision_per_step(plan, ego_box, agents, now, resolution), c);
    for (double& v : h) v *= 100.0;
    return h;
}

ForecastMetrics forecast_metrics(const Mat& fc, const Mat& conf, const Mat& gt, double miss_threshold)
{
    const int na = gt.rows();
    if (na == 0 || conf.rows() != na || conf.cols() == 0)
        throw std::invalid_argument("forecast_metrics: need at least one agent and one mode");
    const int K = conf.cols();
    if (fc.rows() != na * K || fc.cols() != gt.cols() || gt.cols() % 2 != 0 || gt.cols() == 0)
        throw std::invalid_argument("forecast_metrics: forecasts must be N_A*K x 2T matching the ground truth");
    const int T = gt.cols() / 2;
    ForecastMetrics m;
    m.agents = na;
    int misses = 0;
    for (int a = 0; a < na; ++a) {
        double ade = geom::kInf, fde = geom::kInf;
        for (int k = 0; k < K; ++k) {
            const int r = a * K + k;
            double s = 0;
            for (int t = 0; t < T; ++t) s += std::hypot(fc(r, 2 * t) - gt(a, 2 * t), fc(r, 2 * t + 1) - gt(a, 2 * t + 1));
            ade = std::min(ade, s / T);
            fde = std::min(fde, std::hypot(fc(r, 2 * T - 2) - gt(a, 2 * T - 2), fc(r, 2 * T - 1) - gt(a, 2 * T - 1)));
        }
        m.min_ade += ade / na;
        m.min_fde += fde / na;
        if (fde > miss_threshold) ++misses;
    }
    m.miss_rate = static_cast<double>(misses) / na;
    return m;
}

MetricsReport aggregate(std::span<const SceneMetrics> scenes)
{
    MetricsReport r;
    r.scene_count = static_cast<int>(scenes.size());
    if (scenes.empty()) return r;
    double agents = 0;
    for (const SceneMetrics& s : scenes) {
        const Horizon ls = horizons(s.e, Convention::stp3), lu = horizons(s.e, Convention::uniad);
        const Horizon cs = horizons(s.c, Convention::stp3), cu = horizons(s.c, Convention::uniad);
        for (int i = 0; i < 4; ++i) {
            r.l2_stp3[i] += ls[i];
            r.l2_uniad[i] += lu[i];
            r.cr_stp3[i] += 100.0 * cs[i];
            r.cr_uniad[i] += 100.0 * cu[i];
        }
        r.minADE += s.forecast.min_ade * s.forecast.agents;
        r.minFDE += s.forecast.min_fde * s.forecast.agents;
        r.miss_rate += s.forecast.miss_rate * s.forecast.agents;
        agents += s.forecast.agents;
    }
    const double n = static_cast<double>(scenes.size());
    for (int i = 0; i < 4; ++i) {
        r.l2_stp3[i] /= n;
        r.l2_uniad[i] /= n;
        r.cr_stp3[i] /= n;
        r.cr_uniad[i] /= n;
    }
    if (agents > 0) {
        r.minADE /= agents;
        r.minFDE /= agents;
        r.miss_rate /= agents;
    }
    return r;
}

std::string to_json(const MetricsReport& r)
{
    nlohmann::ordered_json j;
    j["l2_stp3"] = r.l2_stp3;
    j["l2_uniad"] = r.l2_uniad;
    j["cr_stp3"] = r.cr_stp3;
    j["cr_uniad"] = r.cr_uniad;
    j["minADE"] = r.minADE;
    j["minFDE"] = r.minFDE;
    j["miss_rate"] = r.miss_rate;
    j["scene_count"] = r.scene_count;
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        MetricsReport r;
        r.l2_stp3 = j.at("l2_stp3").get<Horizon>();
        r.l2_uniad = j.at("l2_uniad").get<Horizon>();
        r.cr_stp3 = j.at("cr_stp3").get<Horizon>();
        r.cr_uniad = j.at("cr_uniad").get<Horizon>();
        r.minADE = j.at("minADE").get<double>();
        r.minFDE = j.at("minFDE").get<double>();
        r.miss_rate = j.at("miss_rate").get<double>();
        r.scene_count = j.at("scene_count").get<int>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics report: ") + e.what());
    }
}

void write_scene_csv(std::ostream& os, std::span<const SceneMetrics> scenes)
{
    os << "scene_id";
    for (int t = 1; t <= kSteps; ++t) os << ",e" << t;
    for (int t = 1; t <= kSteps; ++t) os << ",c" << t;
    os << ",minADE,minFDE,miss_rate,agents\n";
    char buf[40];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const SceneMetrics& s : scenes) {
        os << s.scene_id;
        for (double v : s.e) os << ',' << num(v);
        for (double v : s.c) os << ',' << num(v);
        os << ',' << num(s.forecast.min_ade) << ',' << num(s.forecast.min_fde) << ',' << num(s.forecast.miss_rate)
           << ',' << s.forecast.agents << '\n';
    }
}

} // namespace ppad::metrics
