#include "ppad/errors.hpp"
#include "ppad/scene.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ppad::scene {

namespace {

constexpr const char* kMagic = "PPAD-SCENE v1";

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_pose(std::ostream& os, const geom::Pose2& p)
{
    os << num(p.x) << ' ' << num(p.y) << ' ' << num(p.heading) << '\n';
}

const char* class_name(AgentClass c)
{
    return c == AgentClass::vehicle ? "vehicle" : "pedestrian";
}

const char* class_name(geom::PolylineClass c)
{
    return c == geom::PolylineClass::centerline ? "centerline" : "boundary";
}

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    std::string word()
    {
        std::string w;
        if (!(is_ >> w)) throw DataError("scene record: unexpected end of input");
        return w;
    }

    void expect(const std::string& tag)
    {
        const std::string w = word();
        if (w != tag) throw DataError("scene record: expected '" + tag + "', found '" + w + "'");
    }

    double real()
    {
        const std::string w = word();
        try {
            std::size_t used = 0;
            const double v = std::stod(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
            return v;
        } catch (const std::exception&) {
            throw DataError("scene record: bad number '" + w + "'");
        }
    }

    long integer(long lo, long hi)
    {
        const std::string w = word();
        long v = 0;
        try {
            std::size_t used = 0;
            v = std::stol(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
        } catch (const std::exception&) {
            throw DataError("scene record: bad integer '" + w + "'");
        }
        if (v < lo || v > hi) throw DataError("scene record: count out of range: " + w);
        return v;
    }

    geom::Pose2 pose() { return {real(), real(), real()}; }

private:
    std::istream& is_;
};

} // namespace

void write_scene(std::ostream& os, const Scene& sc)
{
    os << kMagic << '\n';
    os << "id " << sc.scene_id << '\n';
    os << "scenario " << to_string(sc.scenario) << '\n';
    os << "seed " << sc.seed << '\n';
    os << "command " << to_string(sc.command) << '\n';
    os << "dt " << num(sc.ego_gt.dt) << '\n';
    os << "ego_box " << num(sc.ego_box.length) << ' ' << num(sc.ego_box.width) << '\n';
    os << "EGO " << sc.ego_gt.size() << '\n';
    for (const auto& p : sc.ego_gt.waypoints) write_pose(os, p);
    os << "AGENTS " << sc.agents.size() << '\n';
    for (const AgentTrack& a : sc.agents) {
        os << "AGENT " << a.id << ' ' << class_name(a.cls) << ' ' << num(a.box.length) << ' ' << num(a.box.width) << ' '
           << a.trajectory.size() << '\n';
        for (const auto& p : a.trajectory.waypoints) write_pose(os, p);
    }
    os << "POLYLINES " << sc.map_elements.size() << '\n';
    for (const geom::Polyline& pl : sc.map_elements) {
        os << "POLYLINE " << class_name(pl.cls) << ' ' << pl.points.size() << '\n';
        for (const auto& p : pl.points) os << num(p.x) << ' ' << num(p.y) << '\n';
    }
    os << "REGIONS " << sc.drivable.size() << '\n';
    for (const geom::Region& r : sc.drivable) {
        os << num(r.center.x) << ' ' << num(r.center.y) << ' ' << num(r.center.heading) << ' ' << num(r.extent.length)
           << ' ' << num(r.extent.width) << '\n';
    }
    const attn::BevGrid& g = sc.bev;
    os << "BEV " << g.height << ' ' << g.width << ' ' << g.channels << ' ' << num(g.origin.x) << ' ' << num(g.origin.y)
       << ' ' << num(g.cell_size) << '\n';
    for (int r = 0; r < g.features.rows(); ++r) {
        const auto row = g.features.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << num(row[c]);
        os << '\n';
    }
    os << "END\n";
}

Scene read_scene(std::istream& is)
{
    std::string magic;
    std::getline(is, magic);
    if (magic != kMagic) throw DataError("scene record: bad header '" + magic + "'");
    Reader rd(is);
    Scene sc;
    rd.expect("id");
    sc.scene_id = rd.word();
    rd.expect("scenario");
    try {
        sc.scenario = parse_scenario(rd.word());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("scene record: ") + e.what());
    }
    rd.expect("seed");
    {
        const std::string w = rd.word();
        try {
            sc.seed = std::stoull(w);
        } catch (const std::exception&) {
            throw DataError("scene record: bad seed '" + w + "'");
        }
    }
    rd.expect("command");
    const std::string cmd = rd.word();
    if (cmd == "straight") sc.command = DrivingCommand::straight;
    else if (cmd == "turn_left") sc.command = DrivingCommand::turn_left;
    else if (cmd == "turn_right") sc.command = DrivingCommand::turn_right;
    else throw DataError("scene record: bad command '" + cmd + "'");
    rd.expect("dt");
    const double dt = rd.real();
    rd.expect("ego_box");
    sc.ego_box.length = rd.real();
    sc.ego_box.width = rd.real();

    rd.expect("EGO");
    const long n_ego = rd.integer(1, 1000);
    sc.ego_gt.dt = dt;
    for (long i = 0; i < n_ego; ++i) sc.ego_gt.waypoints.push_back(rd.pose());

    rd.expect("AGENTS");
    const long n_agents = rd.integer(0, 1000);
    for (long a = 0; a < n_agents; ++a) {
        rd.expect("AGENT");
        AgentTrack t;
        t.id = static_cast<int>(rd.integer(0, 1000000));
        const std::string cls = rd.word();
        if (cls == "vehicle") t.cls = AgentClass::vehicle;
        else if (cls == "pedestrian") t.cls = AgentClass::pedestrian;
        else throw DataError("scene record: bad agent class '" + cls + "'");
        t.box.length = rd.real();
        t.box.width = rd.real();
        const long n = rd.integer(1, 1000);
        t.trajectory.dt = dt;
        for (long i = 0; i < n; ++i) t.trajectory.waypoints.push_back(rd.pose());
        sc.agents.push_back(std::move(t));
    }

    rd.expect("POLYLINES");
    const long n_poly = rd.integer(0, 100000);
    for (long k = 0; k < n_poly; ++k) {
        rd.expect("POLYLINE");
        geom::Polyline pl;
        const std::string cls = rd.word();
        if (cls == "centerline") pl.cls = geom::PolylineClass::centerline;
        else if (cls == "boundary") pl.cls = geom::PolylineClass::boundary;
        else throw DataError("scene record: bad polyline class '" + cls + "'");
        const long n = rd.integer(2, 100000);
        for (long i = 0; i < n; ++i) {
            const double x = rd.real();
            pl.points.push_back({x, rd.real()});
        }
        sc.map_elements.push_back(std::move(pl));
    }

    rd.expect("REGIONS");
    const long n_reg = rd.integer(0, 1000);
    for (long k = 0; k < n_reg; ++k) {
        geom::Region r;
        r.center = rd.pose();
        r.extent.length = rd.real();
        r.extent.width = rd.real();
        sc.drivable.push_back(r);
    }

    rd.expect("BEV");
    const int h = static_cast<int>(rd.integer(2, 100000));
    const int w = static_cast<int>(rd.integer(2, 100000));
    const int c = static_cast<int>(rd.integer(1, 4096));
    const double ox = rd.real(), oy = rd.real(), cell = rd.real();
    try {
        sc.bev = attn::BevGrid(h, w, c, {ox, oy, 0.0}, cell);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("scene record: ") + e.what());
    }
    for (double& v : sc.bev.features.values()) v = rd.real();
    rd.expect("END");
    try {
        sc.ego_gt.validate();
        for (const AgentTrack& a : sc.agents) a.trajectory.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("scene record: ") + e.what());
    }
    return sc;
}

void save_scene(const std::string& path, const Scene& scene)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_scene(os, scene);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Scene load_scene(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open scene file '" + path + "'");
    return read_scene(is);
}

std::uint64_t scene_checksum(const Scene& scene)
{
    std::ostringstream os;
    write_scene(os, scene);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : os.str()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace ppad::scene
