#include "ppad/harness.hpp"

#include "ppad/errors.hpp"
#include "ppad/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace fs = std::filesystem;

namespace ppad::harness {

namespace {

// --- value formatting ------------------------------------------------------------

std::string fmt(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string num17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

double parse_double(const std::string& key, const std::string& v)
{
    const std::string t = trim(v);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    double out = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
        throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v)
{
    const std::string t = trim(v);
    long long out = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
        throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v)
{
    const std::string t = trim(v);
    std::uint64_t out = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size())
        throw std::invalid_argument("config: " + key + " expects an unsigned integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    const std::string t = trim(v);
    if (t == "true" || t == "1" || t == "on") return true;
    if (t == "false" || t == "0" || t == "off") return false;
    throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

int parse_small(const std::string& key, const std::string& v)
{
    const long long x = parse_int(key, v);
    if (x < -1'000'000'000LL || x > 1'000'000'000LL) throw std::invalid_argument("config: " + key + " out of range");
    return static_cast<int>(x);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

// --- schema ------------------------------------------------------------------------

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Get>
Field dbl(std::string key, Get ref)
{
    return {key, [ref](const ExperimentConfig& c) { return fmt(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}
template <class Get>
Field integer(std::string key, Get ref)
{
    return {key, [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_small(key, v); }};
}
template <class Get>
Field u64(std::string key, Get ref)
{
    return {key, [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_u64(key, v); }};
}
template <class Get>
Field flag(std::string key, Get ref)
{
    return {key, [ref](const ExperimentConfig& c) { return bool_text(ref(const_cast<ExperimentConfig&>(c))); },
            [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}
template <class Get>
Field text(std::string key, Get ref)
{
    return {key, [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)); },
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = trim(v); }};
}

#define F(expr) [](ExperimentConfig & c) -> auto& { return expr; }

const std::vector<Field>& schema()
{
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        f.push_back(text("paths.data_dir", F(c.data_dir)));
        f.push_back(text("paths.eval_dir", F(c.eval_dir)));
        f.push_back(text("paths.run_dir", F(c.run_dir)));

        f.push_back(integer("scene.t_obs", F(c.scene.t_obs)));
        f.push_back(integer("scene.t_fut", F(c.scene.t_fut)));
        f.push_back(dbl("scene.dt", F(c.scene.dt)));
        f.push_back(integer("scene.agent_count", F(c.scene.agent_count)));
        f.push_back(integer("scene.lane_count", F(c.scene.lane_count)));
        f.push_back(dbl("scene.lane_width", F(c.scene.lane_width)));
        f.push_back(dbl("scene.range_x", F(c.scene.range_x)));
        f.push_back(dbl("scene.range_y", F(c.scene.range_y)));
        f.push_back(integer("scene.bev_width", F(c.scene.bev_width)));
        f.push_back(integer("scene.bev_height", F(c.scene.bev_height)));
        f.push_back(dbl("scene.max_curvature", F(c.scene.max_curvature)));
        f.push_back(dbl("scene.max_accel", F(c.scene.max_accel)));
        f.push_back(dbl("scene.pedestrian_ratio", F(c.scene.pedestrian_ratio)));
        f.push_back(dbl("scene.command_threshold", F(c.scene.command_threshold)));
        f.push_back(dbl("scene.ego_length", F(c.scene.ego_box.length)));
        f.push_back(dbl("scene.ego_width", F(c.scene.ego_box.width)));

        f.push_back({"model.distances",
                     [](const ExperimentConfig& c) {
                         std::string s;
                         for (double d : c.ppad.distances) s += (s.empty() ? "" : ",") + fmt(d);
                         return s;
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         std::vector<double> d;
                         for (const std::string& part : split(v, ','))
                             d.push_back(parse_double("model.distances", part));
                         c.ppad.distances = d;
                     }});
        f.push_back(integer("model.iterations", F(c.ppad.iterations)));
        f.push_back(integer("model.channels", F(c.ppad.channels)));
        f.push_back(integer("model.heads", F(c.ppad.heads)));
        f.push_back(integer("model.deform_points", F(c.ppad.deform_points)));
        f.push_back(integer("model.agent_modes", F(c.ppad.agent_modes)));
        f.push_back(flag("model.tied_scales", F(c.ppad.tied_scales)));
        f.push_back(dbl("model.offset_scale", F(c.ppad.offset_scale)));
        f.push_back(flag("model.zero_heads", F(c.zero_heads)));

        f.push_back(dbl("train.learning_rate", F(c.train.learning_rate)));
        f.push_back(integer("train.batch_size", F(c.train.batch_size)));
        f.push_back(integer("train.epochs", F(c.train.epochs)));
        f.push_back({"train.phase", [](const ExperimentConfig& c) { return std::string(train::to_string(c.train.phase)); },
                     [](ExperimentConfig& c, const std::string& v) { c.train.phase = train::parse_phase(trim(v)); }});
        f.push_back(u64("train.seed", F(c.train.seed)));
        f.push_back({"train.schedule", [](const ExperimentConfig& c) { return std::string(to_string(c.schedule)); },
                     [](ExperimentConfig& c, const std::string& v) {
                         const std::string t = trim(v);
                         if (t == "single") c.schedule = Schedule::single;
                         else if (t == "two_phase") c.schedule = Schedule::two_phase;
                         else throw std::invalid_argument("config: train.schedule must be single or two_phase");
                     }});
        f.push_back(integer("train.finetune_epochs", F(c.finetune_epochs)));

        f.push_back(dbl("loss.lambda1", F(c.weights.lambda1)));
        f.push_back(dbl("loss.lambda2", F(c.weights.lambda2)));
        f.push_back(dbl("loss.lambda3", F(c.weights.lambda3)));
        f.push_back(dbl("loss.lambda4", F(c.weights.lambda4)));
        f.push_back(dbl("loss.lambda5", F(c.weights.lambda5)));
        f.push_back(dbl("loss.zeta1", F(c.weights.zeta1)));
        f.push_back(dbl("loss.zeta2", F(c.weights.zeta2)));
        f.push_back(dbl("loss.d_safe", F(c.weights.d_safe)));
        f.push_back(dbl("loss.delta_bd", F(c.weights.delta_bd)));
        f.push_back(dbl("loss.noise_sigma", F(c.weights.noise_sigma)));

        f.push_back(flag("ablation.ppad_iterative", F(c.toggles.ppad_iterative)));
        f.push_back(flag("ablation.key_objects_attention", F(c.toggles.key_objects_attention)));
        f.push_back(flag("ablation.ca_collision", F(c.toggles.ca_collision)));
        f.push_back(flag("ablation.noisy_traj", F(c.toggles.noisy_traj)));
        f.push_back(flag("ablation.ea", F(c.toggles.ea)));
        f.push_back(flag("ablation.map", F(c.toggles.map)));
        f.push_back(flag("ablation.bev", F(c.toggles.bev)));

        f.push_back(dbl("metrics.collision_resolution", F(c.collision_resolution)));
        f.push_back(dbl("metrics.miss_threshold", F(c.miss_threshold)));

        f.push_back(integer("gen.count", F(c.gen_count)));
        f.push_back(u64("gen.seed", F(c.gen_seed)));
        f.push_back({"gen.mix",
                     [](const ExperimentConfig& c) {
                         std::string s;
                         for (const auto& [sc, r] : c.gen_mix)
                             s += (s.empty() ? "" : ",") + std::string(scene::to_string(sc)) + ":" + fmt(r);
                         return s;
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         std::vector<std::pair<scene::Scenario, double>> mix;
                         for (const std::string& part : split(v, ',')) {
                             const auto colon = part.find(':');
                             if (colon == std::string::npos)
                                 throw std::invalid_argument("config: gen.mix entries are scenario:ratio");
                             mix.emplace_back(scene::parse_scenario(trim(part.substr(0, colon))),
                                              parse_double("gen.mix", part.substr(colon + 1)));
                         }
                         c.gen_mix = mix;
                     }});

        f.push_back(integer("plot.scenes", F(c.plot_scenes)));
        f.push_back(integer("bench.repeats", F(c.bench_repeats)));
        f.push_back(integer("ablate.seeds", F(c.ablate_seeds)));
        return f;
    }();
    return fields;
}

#undef F

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (const unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t parse_hex(const std::string& s)
{
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw DataError("expected a hexadecimal checksum, got '" + s + "'");
    return v;
}

template <class Fn>
void parallel_for(int n, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#ifdef PPAD_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i) {
        try {
            fn(i);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double median(std::vector<double> v)
{
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

const char* to_string(Schedule s)
{
    return s == Schedule::single ? "single" : "two_phase";
}

void ExperimentConfig::validate() const
{
    scene.validate();
    effective_ppad(*this).validate();
    effective_train(*this).validate();
    if (scene.t_fut != metrics::kSteps)
        throw std::invalid_argument("config: the metrics need scene.t_fut = 6 (3 s at 0.5 s)");
    if (finetune_epochs < 0) throw std::invalid_argument("config: train.finetune_epochs must be >= 0");
    if (schedule == Schedule::two_phase && finetune_epochs == 0)
        throw std::invalid_argument("config: two_phase schedule needs train.finetune_epochs > 0");
    if (!(collision_resolution > 0) || !(miss_threshold > 0))
        throw std::invalid_argument("config: metric options must be positive");
    if (gen_count < 1) throw std::invalid_argument("config: gen.count must be >= 1");
    if (gen_mix.empty()) throw std::invalid_argument("config: gen.mix is empty");
    double total = 0;
    for (const auto& [s, r] : gen_mix) {
        if (!(r >= 0)) throw std::invalid_argument("config: gen.mix ratios must be >= 0");
        total += r;
    }
    if (!(total > 0)) throw std::invalid_argument("config: gen.mix ratios sum to zero");
    if (plot_scenes < 0 || bench_repeats < 1 || ablate_seeds < 1)
        throw std::invalid_argument("config: plot.scenes >= 0, bench.repeats >= 1, ablate.seeds >= 1");
}

model::PpadConfig effective_ppad(const ExperimentConfig& c)
{
    model::PpadConfig p = c.ppad;
    p.t_fut = c.scene.t_fut;
    if (!c.toggles.ppad_iterative) p.iterations = 1;
    if (!c.toggles.key_objects_attention) p.distances = {geom::kInf};
    p.use_agent_interaction = c.toggles.ea;
    p.use_map_interaction = c.toggles.map;
    p.use_bev_interaction = c.toggles.bev;
    return p;
}

train::TrainConfig effective_train(const ExperimentConfig& c)
{
    train::TrainConfig t = c.train;
    t.ppad = effective_ppad(c);
    t.weights = c.weights;
    t.ca_collision = c.toggles.ca_collision;
    t.noisy_traj = c.toggles.noisy_traj;
    return t;
}

// --- text format -------------------------------------------------------------------

void set_value(ExperimentConfig& c, const std::string& key, const std::string& value)
{
    const std::string k = trim(key);
    for (const Field& f : schema())
        if (f.key == k) {
            f.set(c, value);
            return;
        }
    throw std::invalid_argument("config: unknown key '" + k + "'");
}

void apply_text(ExperimentConfig& c, const std::string& text, const std::string& origin)
{
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(n) + ": expected key = value");
        try {
            set_value(c, line.substr(0, eq), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

void apply_file(ExperimentConfig& c, const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    apply_text(c, ss.str(), path);
}

void apply_override(ExperimentConfig& c, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
    set_value(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::pair<std::string, std::string>> entries(const ExperimentConfig& c)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : schema()) out.emplace_back(f.key, f.get(c));
    return out;
}

std::string to_text(const ExperimentConfig& c)
{
    std::string s;
    for (const auto& [k, v] : entries(c)) s += k + " = " + v + "\n";
    return s;
}

std::string model_text(const ExperimentConfig& c)
{
    std::string s;
    for (const auto& [k, v] : entries(c))
        if (k.rfind("paths.", 0) != 0) s += k + " = " + v + "\n";
    return s;
}

ExperimentConfig from_text(const std::string& text)
{
    ExperimentConfig c;
    apply_text(c, text);
    return c;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b)
{
    const auto ea = entries(a), eb = entries(b);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ea.size(); ++i)
        if (ea[i].second != eb[i].second) out.push_back(ea[i].first);
    return out;
}

std::uint64_t scene_config_hash(const scene::SceneConfig& s)
{
    ExperimentConfig c;
    c.scene = s;
    std::string text;
    for (const auto& [k, v] : entries(c))
        if (k.rfind("scene.", 0) == 0) text += k + "=" + v + "\n";
    return fnv1a(text);
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --- datasets ----------------------------------------------------------------------

std::uint64_t Dataset::checksum() const
{
    std::string s;
    for (const ManifestRow& r : manifest) s += hex64(r.checksum);
    return fnv1a(s);
}

std::vector<int> mix_counts(const std::vector<std::pair<scene::Scenario, double>>& mix, int count)
{
    double total = 0;
    for (const auto& m : mix) total += m.second;
    if (!(total > 0) || count < 0) throw std::invalid_argument("mix_counts: bad ratios or count");
    std::vector<int> n(mix.size());
    std::vector<std::pair<double, std::size_t>> rem;
    int used = 0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        const double exact = count * mix[i].second / total;
        n[i] = static_cast<int>(std::floor(exact));
        used += n[i];
        rem.emplace_back(exact - n[i], i);
    }
    // ties go to the earlier entry
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; used < count; ++i, ++used) ++n[rem[static_cast<std::size_t>(i)].second];
    return n;
}

std::vector<ManifestRow> plan_dataset(const ExperimentConfig& c)
{
    const std::vector<int> counts = mix_counts(c.gen_mix, c.gen_count);
    std::vector<scene::Scenario> order;
    for (std::size_t i = 0; i < counts.size(); ++i) order.insert(order.end(), counts[i], c.gen_mix[i].first);
    CounterRng rng(c.gen_seed, 0x6E40);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    std::vector<ManifestRow> rows(order.size());
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < order.size(); ++i) {
        rows[i].index = static_cast<int>(i);
        rows[i].scenario = order[i];
        CounterRng s(c.gen_seed, 0x5CE00000 + i);
        std::uint64_t seed = s.next_u64() >> 16; // keep ids short
        while (!seen.insert(seed).second) seed = s.next_u64() >> 16;
        rows[i].seed = seed;
    }
    return rows;
}

Dataset generate_dataset(const ExperimentConfig& c)
{
    c.scene.validate();
    Dataset d;
    d.scene_cfg = c.scene;
    d.scene_hash = scene_config_hash(c.scene);
    d.manifest = plan_dataset(c);
    d.scenes.resize(d.manifest.size());
    parallel_for(static_cast<int>(d.manifest.size()), [&](int i) {
        ManifestRow& r = d.manifest[static_cast<std::size_t>(i)];
        d.scenes[static_cast<std::size_t>(i)] = scene::generate_scene(r.scenario, r.seed, c.scene);
        r.scene_id = d.scenes[static_cast<std::size_t>(i)].scene_id;
        r.checksum = scene::scene_checksum(d.scenes[static_cast<std::size_t>(i)]);
    });
    return d;
}

namespace {

std::string scene_config_text(const scene::SceneConfig& s)
{
    ExperimentConfig c;
    c.scene = s;
    std::string text;
    for (const auto& [k, v] : entries(c))
        if (k.rfind("scene.", 0) == 0) text += k + " = " + v + "\n";
    return text;
}

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory '" + dir + "'");
}

} // namespace

void write_dataset(const Dataset& d, const scene::SceneConfig& scfg, const std::string& dir)
{
    ensure_dir(dir + "/scenes");
    for (std::size_t i = 0; i < d.scenes.size(); ++i)
        scene::save_scene(dir + "/scenes/" + d.manifest[i].scene_id + ".scene", d.scenes[i]);
    std::string m = "index,scene_id,scenario,seed,checksum\n";
    for (const ManifestRow& r : d.manifest)
        m += std::to_string(r.index) + "," + r.scene_id + "," + scene::to_string(r.scenario) + "," +
             std::to_string(r.seed) + "," + hex64(r.checksum) + "\n";
    write_file(dir + "/manifest.csv", m);
    write_file(dir + "/dataset.cfg", scene_config_text(scfg));
}

Dataset load_dataset(const std::string& dir)
{
    if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir + "' does not exist");
    if (!fs::exists(dir + "/manifest.csv") || !fs::exists(dir + "/dataset.cfg"))
        throw DataError("dataset '" + dir + "' has no manifest.csv/dataset.cfg (run `ppad gen` first)");
    Dataset d;
    d.dir = dir;
    ExperimentConfig c;
    try {
        apply_text(c, read_file(dir + "/dataset.cfg"), dir + "/dataset.cfg");
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    d.scene_cfg = c.scene;
    d.scene_hash = scene_config_hash(c.scene);
    const auto rows = read_csv(dir + "/manifest.csv");
    if (rows.empty() || rows[0] != std::vector<std::string>{"index", "scene_id", "scenario", "seed", "checksum"})
        throw DataError("manifest.csv: unexpected header");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& f = rows[i];
        if (f.size() != 5) throw DataError("manifest.csv: row " + std::to_string(i) + " has the wrong field count");
        ManifestRow r;
        try {
            r.index = parse_small("index", f[0]);
            r.scenario = scene::parse_scenario(f[2]);
            r.seed = parse_u64("seed", f[3]);
        } catch (const std::invalid_argument& e) {
            throw DataError(std::string("manifest.csv: ") + e.what());
        }
        r.scene_id = f[1];
        r.checksum = parse_hex(f[4]);
        d.manifest.push_back(r);
    }
    if (d.manifest.empty()) throw DataError("dataset '" + dir + "' is empty");
    d.scenes.resize(d.manifest.size());
    parallel_for(static_cast<int>(d.manifest.size()), [&](int i) {
        const ManifestRow& r = d.manifest[static_cast<std::size_t>(i)];
        scene::Scene sc = scene::load_scene(dir + "/scenes/" + r.scene_id + ".scene");
        if (scene::scene_checksum(sc) != r.checksum) throw DataError("checksum mismatch for scene " + r.scene_id);
        d.scenes[static_cast<std::size_t>(i)] = std::move(sc);
    });
    return d;
}

// --- evaluation ----------------------------------------------------------------------

metrics::SceneMetrics evaluate_plan(const scene::Scene& sc, const scene::SceneConfig& scfg,
                                    const scene::Trajectory& plan, const Mat* forecasts, const Mat* confidences,
                                    double resolution, double miss_threshold)
{
    metrics::SceneMetrics m;
    m.scene_id = sc.scene_id;
    scene::Trajectory gt;
    gt.dt = scfg.dt;
    for (int t = 1; t <= scfg.t_fut; ++t) gt.waypoints.push_back(sc.ego_gt[scfg.now() + t]);
    m.e = metrics::l2_per_step(plan, gt);
    m.c = metrics::collision_per_step(plan, sc.ego_box, sc.agents, scfg.now(), resolution);
    if (forecasts && confidences && !sc.agents.empty())
        m.forecast = metrics::forecast_metrics(*forecasts, *confidences, losses::targets(sc, scfg).agents,
                                               miss_threshold);
    return m;
}

metrics::SceneMetrics evaluate_scene(const scene::Scene& sc, const scene::SceneConfig& scfg,
                                     const model::Params& params, double resolution, double miss_threshold)
{
    const model::RolloutResult r = model::rollout(sc, scfg, params);
    return evaluate_plan(sc, scfg, r.ego_plan, &r.forecasts, &r.confidences, resolution, miss_threshold);
}

std::vector<metrics::SceneMetrics> evaluate(const std::vector<scene::Scene>& scenes, const scene::SceneConfig& scfg,
                                            const model::Params& params, double resolution, double miss_threshold)
{
    std::vector<metrics::SceneMetrics> out(scenes.size());
    parallel_for(static_cast<int>(scenes.size()), [&](int i) {
        out[static_cast<std::size_t>(i)] =
            evaluate_scene(scenes[static_cast<std::size_t>(i)], scfg, params, resolution, miss_threshold);
    });
    return out;
}

scene::Trajectory constant_velocity_plan(const scene::Scene& sc, const scene::SceneConfig& scfg)
{
    const int now = scfg.now();
    if (now < 1) throw std::invalid_argument("constant_velocity_plan: need two observed poses");
    const geom::Pose2 a = sc.ego_gt[now - 1], b = sc.ego_gt[now];
    const double vx = b.x - a.x, vy = b.y - a.y;
    scene::Trajectory out;
    out.dt = scfg.dt;
    const double heading = std::hypot(vx, vy) > 1e-9 ? std::atan2(vy, vx) : b.heading;
    for (int t = 1; t <= scfg.t_fut; ++t) out.waypoints.push_back({b.x + t * vx, b.y + t * vy, heading});
    return out;
}

// --- commands ----------------------------------------------------------------------

Dataset cmd_gen(const ExperimentConfig& c)
{
    c.validate();
    Dataset d = generate_dataset(c);
    write_dataset(d, c.scene, c.data_dir);
    d.dir = c.data_dir;
    return d;
}

namespace {

std::string log_text(const std::vector<train::LogRow>& log)
{
    std::string s = std::string(train::kLogHeader) + "\n";
    for (const train::LogRow& r : log) s += train::format_log_row(r) + "\n";
    return s;
}

model::Params fresh_params(const ExperimentConfig& c)
{
    model::Params p(effective_ppad(c));
    model::init_params(p, c.train.seed, c.zero_heads);
    return p;
}

void check_dataset_matches(const Dataset& d, const ExperimentConfig& c)
{
    if (d.scene_hash != scene_config_hash(c.scene))
        throw DataError("config hash mismatch: dataset '" + d.dir + "' was generated with scene config " +
                        hex64(d.scene_hash) + ", the run uses " + hex64(scene_config_hash(c.scene)));
}

std::vector<train::Sample> samples_of(const Dataset& d, const ExperimentConfig& c)
{
    std::vector<train::Sample> out(d.scenes.size());
    parallel_for(static_cast<int>(d.scenes.size()), [&](int i) {
        out[static_cast<std::size_t>(i)] =
            train::make_sample(d.scenes[static_cast<std::size_t>(i)], c.scene, c.ppad.channels);
    });
    return out;
}

/// Runs the configured schedule in memory.
train::TrainResult run_schedule(const ExperimentConfig& c, const std::vector<train::Sample>& data)
{
    train::TrainConfig tc = effective_train(c);
    model::Params init = fresh_params(c);
    if (c.schedule == Schedule::single) return train::train(tc, data, std::move(init));

    // Stage one: every task without the denoising branch. Stage two: the
    // configured phase with the branch switched on (if its toggle allows).
    train::TrainConfig first = tc;
    first.phase = train::Phase::joint;
    first.noisy_traj = false;
    train::TrainResult a = train::train(first, data, std::move(init));
    train::TrainConfig second = tc;
    second.epochs = c.finetune_epochs;
    second.seed = tc.seed + 1;
    train::TrainResult b = train::train(second, data, std::move(a.params));
    const long offset = a.log.empty() ? 0 : a.log.back().step + 1;
    for (train::LogRow r : b.log) {
        r.step += offset;
        r.epoch += c.train.epochs;
        a.log.push_back(r);
    }
    a.params = std::move(b.params);
    return a;
}

} // namespace

TrainOutput cmd_train(const ExperimentConfig& c)
{
    c.validate();
    const Dataset d = load_dataset(c.data_dir);
    check_dataset_matches(d, c);
    const std::vector<train::Sample> data = samples_of(d, c);
    train::TrainResult r = run_schedule(c, data);

    TrainOutput out{c.run_dir, std::move(r.params), std::move(r.log), {}};
    const auto per_scene = evaluate(d.scenes, c.scene, out.params, c.collision_resolution, c.miss_threshold);
    out.train_report = metrics::aggregate(per_scene);

    ensure_dir(c.run_dir);
    write_file(c.run_dir + "/config.resolved", to_text(c));
    train::save_checkpoint(c.run_dir + "/checkpoint.bin", out.params, model_text(c));
    write_file(c.run_dir + "/train_log.csv", log_text(out.log));
    write_file(c.run_dir + "/train_eval.json", metrics::to_json(out.train_report));
    std::ostringstream csv;
    metrics::write_scene_csv(csv, per_scene);
    write_file(c.run_dir + "/train_eval.csv", csv.str());
    return out;
}

std::pair<ExperimentConfig, model::Params> load_run(const std::string& checkpoint)
{
    ExperimentConfig c;
    try {
        apply_text(c, train::checkpoint_config(checkpoint), checkpoint);
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint config: ") + e.what());
    }
    model::Params p(effective_ppad(c));
    train::load_checkpoint(checkpoint, p);
    return {c, std::move(p)};
}

EvalOutput cmd_eval(const std::string& checkpoint, const std::string& dataset_dir, const std::string& out_dir)
{
    const auto [c, params] = load_run(checkpoint);
    const Dataset d = load_dataset(dataset_dir);
    check_dataset_matches(d, c);
    EvalOutput out;
    out.scenes = evaluate(d.scenes, c.scene, params, c.collision_resolution, c.miss_threshold);
    out.report = metrics::aggregate(out.scenes);
    ensure_dir(out_dir);
    write_file(out_dir + "/report.json", metrics::to_json(out.report));
    std::ostringstream csv;
    metrics::write_scene_csv(csv, out.scenes);
    write_file(out_dir + "/per_scene.csv", csv.str());
    return out;
}

// --- ablations ---------------------------------------------------------------------

const char* to_string(AblationTable t)
{
    switch (t) {
    case AblationTable::design: return "design";
    case AblationTable::interaction: return "interaction";
    case AblationTable::iterations: return "iterations";
    }
    return "?";
}

AblationTable parse_table(const std::string& s)
{
    if (s == "design") return AblationTable::design;
    if (s == "interaction") return AblationTable::interaction;
    if (s == "iterations") return AblationTable::iterations;
    throw std::invalid_argument("unknown ablation table '" + s + "' (design, interaction, iterations)");
}

std::vector<std::string> ablation_keys(AblationTable t)
{
    switch (t) {
    case AblationTable::design:
        return {"ablation.ppad_iterative", "ablation.key_objects_attention", "ablation.ca_collision",
                "ablation.noisy_traj"};
    case AblationTable::interaction: return {"ablation.ea", "ablation.map", "ablation.bev"};
    case AblationTable::iterations: return {"model.iterations"};
    }
    return {};
}

std::vector<AblationArm> ablation_arms(const ExperimentConfig& base, AblationTable t)
{
    std::vector<AblationArm> arms;
    switch (t) {
    case AblationTable::design: {
        // design rows: iterative loop, key-object scales, CA collision, noisy trajectories
        const bool rows[7][4] = {{false, false, false, false}, {true, false, false, false}, {true, true, false, false},
                                 {true, false, true, true},    {true, true, true, false},   {true, true, false, true},
                                 {true, true, true, true}};
        for (int i = 0; i < 7; ++i) {
            ExperimentConfig c = base;
            c.toggles.ppad_iterative = rows[i][0];
            c.toggles.key_objects_attention = rows[i][1];
            c.toggles.ca_collision = rows[i][2];
            c.toggles.noisy_traj = rows[i][3];
            std::string name = std::to_string(i + 1) + " [";
            const char* labels[4] = {"ppad", "koa", "ca", "noisy"};
            for (int j = 0; j < 4; ++j) name += std::string(j ? " " : "") + (rows[i][j] ? "+" : "-") + labels[j];
            name += "]";
            arms.push_back({name, c});
        }
        break;
    }
    case AblationTable::interaction: {
        const char* names[3] = {"EA", "EA+Map", "EA+Map+BEV"};
        for (int i = 0; i < 3; ++i) {
            ExperimentConfig c = base;
            c.toggles.ea = true;
            c.toggles.map = i >= 1;
            c.toggles.bev = i >= 2;
            arms.push_back({names[i], c});
        }
        break;
    }
    case AblationTable::iterations:
        for (int n : {2, 3, 6}) {
            ExperimentConfig c = base;
            c.ppad.iterations = n;
            arms.push_back({"N=" + std::to_string(n), c});
        }
        break;
    }
    return arms;
}

std::string ablation_markdown(const AblationResult& r)
{
    std::string s = "| arm | L2 1s | L2 2s | L2 3s | L2 avg | Col 1s | Col 2s | Col 3s | Col avg |\n";
    s += "|---|---|---|---|---|---|---|---|---|\n";
    char buf[64];
    for (const AblationRow& row : r.rows) {
        s += "| " + row.arm;
        for (double v : row.l2) std::snprintf(buf, sizeof buf, " | %.3f", v), s += buf;
        for (double v : row.collision) std::snprintf(buf, sizeof buf, " | %.2f", v), s += buf;
        s += " |\n";
    }
    return s;
}

AblationResult cmd_ablate(const ExperimentConfig& c, AblationTable t)
{
    c.validate();
    const Dataset train_set = load_dataset(c.data_dir);
    const Dataset eval_set = load_dataset(c.eval_dir.empty() ? c.data_dir : c.eval_dir);
    check_dataset_matches(train_set, c);
    check_dataset_matches(eval_set, c);
    const std::vector<train::Sample> data = samples_of(train_set, c);
    const std::vector<std::string> allowed = ablation_keys(t);

    AblationResult result;
    result.table = t;
    for (const AblationArm& arm : ablation_arms(c, t)) {
        for (const std::string& k : config_diff(c, arm.config))
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
                throw std::logic_error("ablation arm " + arm.name + " changes undocumented key " + k);
        std::vector<metrics::MetricsReport> reports;
        for (int s = 0; s < c.ablate_seeds; ++s) {
            ExperimentConfig run = arm.config;
            run.train.seed = c.train.seed + static_cast<std::uint64_t>(s);
            std::string tag;
            for (char ch : arm.name)
                if (std::isalnum(static_cast<unsigned char>(ch))) tag += ch;
                else if (ch == '+' || ch == '-') tag += ch == '+' ? 'P' : 'M';
            run.run_dir = c.run_dir + "/arms/" + to_string(t) + "_" + tag + "_seed" + std::to_string(s);
            run.validate();
            const train::TrainResult tr = run_schedule(run, data);
            ensure_dir(run.run_dir);
            write_file(run.run_dir + "/config.resolved", to_text(run));
            train::save_checkpoint(run.run_dir + "/checkpoint.bin", tr.params, model_text(run));
            write_file(run.run_dir + "/train_log.csv", log_text(tr.log));
            reports.push_back(metrics::aggregate(
                evaluate(eval_set.scenes, run.scene, tr.params, run.collision_resolution, run.miss_threshold)));
        }
        AblationRow row;
        row.arm = arm.name;
        row.train_checksum = train_set.checksum();
        row.eval_checksum = eval_set.checksum();
        for (int i = 0; i < 4; ++i) {
            std::vector<double> l2, col;
            for (const auto& r : reports) l2.push_back(r.l2_stp3[i]), col.push_back(r.cr_stp3[i]);
            row.l2[i] = median(l2);
            row.collision[i] = median(col);
        }
        for (const auto& r : reports) row.l2_avg_per_seed.push_back(r.l2_stp3[3]);
        result.rows.push_back(row);
    }

    ensure_dir(c.run_dir);
    std::string csv = "arm,l2_1s,l2_2s,l2_3s,l2_avg,col_1s,col_2s,col_3s,col_avg,l2_avg_per_seed,train_checksum,"
                      "eval_checksum\n";
    for (const AblationRow& row : result.rows) {
        csv += row.arm;
        for (double v : row.l2) csv += "," + num17(v);
        for (double v : row.collision) csv += "," + num17(v);
        std::string seeds;
        for (double v : row.l2_avg_per_seed) seeds += (seeds.empty() ? "" : ";") + num17(v);
        csv += "," + seeds + "," + hex64(row.train_checksum) + "," + hex64(row.eval_checksum) + "\n";
    }
    write_file(c.run_dir + "/ablation_" + to_string(t) + ".csv", csv);
    write_file(c.run_dir + "/ablation_" + to_string(t) + ".md", ablation_markdown(result));
    return result;
}

// --- bench -------------------------------------------------------------------------

std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("linear_fit: need at least two points");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("linear_fit: x values are all equal");
    const double b = sxy / sxx, a = my - b * mx;
    const double r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return {b, a, r2};
}

BenchResult cmd_bench(const std::string& checkpoint, const std::string& dataset_dir, int repeats)
{
    if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
    const auto run = load_run(checkpoint);
    const ExperimentConfig& c = run.first;
    const model::Params& loaded = run.second;
    const Dataset d = load_dataset(dataset_dir);
    check_dataset_matches(d, c);
    BenchResult out;
    std::vector<double> xs, ys;
    for (int n : {2, 3, 6}) {
        ExperimentConfig cn = c;
        cn.toggles.ppad_iterative = true;
        cn.ppad.iterations = n;
        // the motion heads' width depends on N, so other N use fresh weights
        model::Params params = loaded;
        if (effective_ppad(cn).iterations != loaded.cfg.iterations) {
            params = model::Params(effective_ppad(cn));
            model::init_params(params, cn.train.seed, false);
        }
        (void)model::rollout(d.scenes[0], c.scene, params); // warm-up
        std::vector<double> ms;
        for (int r = 0; r < repeats; ++r) {
            const scene::Scene& sc = d.scenes[static_cast<std::size_t>(r) % d.scenes.size()];
            const auto t0 = std::chrono::steady_clock::now();
            const model::RolloutResult res = model::rollout(sc, c.scene, params);
            const auto t1 = std::chrono::steady_clock::now();
            if (!std::isfinite(res.plan_offsets(0, 0))) throw NumericError("bench: non-finite plan");
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        BenchRow row;
        row.iterations = n;
        row.median_ms = median(ms);
        std::vector<double> sorted = ms;
        std::sort(sorted.begin(), sorted.end());
        row.p95_ms = sorted[std::min(sorted.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * sorted.size())) - 1)];
        const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
        double var = 0;
        for (double v : ms) var += (v - mean) * (v - mean);
        row.stddev_ms = ms.size() > 1 ? std::sqrt(var / (ms.size() - 1)) : 0.0;
        out.rows.push_back(row);
        xs.push_back(n);
        ys.push_back(row.median_ms);
    }
    const auto fit = linear_fit(xs, ys);
    out.slope_ms = fit[0];
    out.intercept_ms = fit[1];
    out.r2 = fit[2];
    out.ordering_holds = out.rows.back().median_ms >= out.rows.front().median_ms;
    return out;
}

// --- plots -------------------------------------------------------------------------

namespace {

/// Minimal SVG canvas mapping a data box onto a fixed pixel frame.
class Svg {
public:
    Svg(double x0, double x1, double y0, double y1, int w = 640, int h = 400) : x0_(x0), x1_(x1), y0_(y0), y1_(y1), w_(w), h_(h)
    {
        if (x1_ <= x0_) x1_ = x0_ + 1;
        if (y1_ <= y0_) y1_ = y0_ + 1;
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color, double width = 1.5,
                  bool dashed = false)
    {
        if (pts.empty()) return;
        body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + fmt(width) + "\"" +
                 (dashed ? " stroke-dasharray=\"4 3\"" : "") + " points=\"";
        for (const auto& [x, y] : pts) body_ += px(x) + "," + py(y) + " ";
        body_ += "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& color)
    {
        const double X0 = sx(x), X1 = sx(x + w), Y0 = sy(y), Y1 = sy(y + h);
        body_ += "<rect x=\"" + f2(std::min(X0, X1)) + "\" y=\"" + f2(std::min(Y0, Y1)) + "\" width=\"" +
                 f2(std::abs(X1 - X0)) + "\" height=\"" + f2(std::abs(Y1 - Y0)) + "\" fill=\"" + color + "\"/>\n";
    }
    void label(double x, double y, const std::string& s)
    {
        body_ += "<text x=\"" + px(x) + "\" y=\"" + py(y) + "\" font-size=\"11\" font-family=\"sans-serif\">" + s +
                 "</text>\n";
    }
    std::string str(const std::string& title) const
    {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w_) + "\" height=\"" +
               std::to_string(h_) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"8\" y=\"16\" "
               "font-size=\"13\" font-family=\"sans-serif\">" + title + "</text>\n" + body_ + "</svg>\n";
    }

private:
    static constexpr double kPad = 36;
    double sx(double x) const { return kPad + (x - x0_) / (x1_ - x0_) * (w_ - 2 * kPad); }
    double sy(double y) const { return h_ - kPad - (y - y0_) / (y1_ - y0_) * (h_ - 2 * kPad); }
    static std::string f2(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return buf;
    }
    std::string px(double x) const { return f2(sx(x)); }
    std::string py(double y) const { return f2(sy(y)); }
    double x0_, x1_, y0_, y1_;
    int w_, h_;
    std::string body_;
};

std::vector<std::string> plot_loss(const std::string& run_dir, const std::string& out)
{
    const auto rows = read_csv(run_dir + "/train_log.csv");
    if (rows.empty() || rows[0].size() != 10 || rows[0][0] != "step")
        throw DataError("train_log.csv: unexpected header");
    // columns kept verbatim from the log
    const std::vector<int> keep{0, 3, 2, 9}; // step, L_plan, L_agent, total
    std::string csv;
    std::vector<std::pair<double, double>> total, plan;
    double ymax = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != 10) throw DataError("train_log.csv: row " + std::to_string(i) + " is malformed");
        for (std::size_t j = 0; j < keep.size(); ++j) csv += (j ? "," : "") + rows[i][static_cast<std::size_t>(keep[j])];
        csv += "\n";
        if (i == 0) continue;
        const double s = parse_double("step", rows[i][0]), tv = parse_double("total", rows[i][9]),
                     pv = parse_double("L_plan", rows[i][3]);
        total.emplace_back(s, tv);
        plan.emplace_back(s, pv);
        ymax = std::max({ymax, tv, pv});
    }
    Svg svg(0, total.empty() ? 1 : total.back().first, 0, ymax > 0 ? ymax : 1);
    svg.polyline(total, "#1f77b4");
    svg.polyline(plan, "#d62728");
    write_file(out + "/loss_curve.csv", csv);
    write_file(out + "/loss_curve.svg", svg.str("training loss (blue: total, red: L_plan)"));
    return {"loss_curve.csv", "loss_curve.svg"};
}

std::vector<std::string> plot_trajectories(const std::string& run_dir, const std::string& out)
{
    ExperimentConfig resolved;
    apply_file(resolved, run_dir + "/config.resolved");
    const auto [c, params] = load_run(run_dir + "/checkpoint.bin");
    const Dataset d = load_dataset(resolved.data_dir);
    check_dataset_matches(d, c);
    std::vector<std::string> files;
    const int n = std::min<int>(resolved.plot_scenes, static_cast<int>(d.scenes.size()));
    for (int i = 0; i < n; ++i) {
        const scene::Scene& sc = d.scenes[static_cast<std::size_t>(i)];
        const model::RolloutResult r = model::rollout(sc, c.scene, params);
        std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
        for (std::size_t m = 0; m < sc.map_elements.size(); ++m) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& p : sc.map_elements[m].points) pts.emplace_back(p.x, p.y);
            series.emplace_back("map" + std::to_string(m), pts);
        }
        std::vector<std::pair<double, double>> gt{{0, 0}}, plan{{0, 0}};
        for (int t = 1; t <= c.scene.t_fut; ++t) gt.emplace_back(sc.ego_gt[c.scene.now() + t].x, sc.ego_gt[c.scene.now() + t].y);
        for (const auto& w : r.ego_plan.waypoints) plan.emplace_back(w.x, w.y);
        series.emplace_back("ego_gt", gt);
        series.emplace_back("ego_plan", plan);
        const int K = c.ppad.agent_modes;
        for (std::size_t a = 0; a < sc.agents.size(); ++a) {
            std::vector<std::pair<double, double>> ag;
            for (int t = 0; t <= c.scene.t_fut; ++t)
                ag.emplace_back(sc.agents[a].trajectory[c.scene.now() + t].x, sc.agents[a].trajectory[c.scene.now() + t].y);
            series.emplace_back("agent" + std::to_string(a) + "_gt", ag);
            for (int k = 0; k < K; ++k) {
                std::vector<std::pair<double, double>> fc{ag.front()};
                const int row = static_cast<int>(a) * K + k;
                for (int t = 0; t < c.scene.t_fut; ++t) fc.emplace_back(r.forecasts(row, 2 * t), r.forecasts(row, 2 * t + 1));
                series.emplace_back("agent" + std::to_string(a) + "_mode" + std::to_string(k), fc);
            }
        }
        std::string csv = "series,index,x,y\n";
        for (const auto& [name, pts] : series)
            for (std::size_t j = 0; j < pts.size(); ++j)
                csv += name + "," + std::to_string(j) + "," + num17(pts[j].first) + "," + num17(pts[j].second) + "\n";
        Svg svg(-c.scene.range_x, c.scene.range_x, -c.scene.range_y, c.scene.range_y, 800, 420);
        for (const auto& [name, pts] : series) {
            if (name.rfind("map", 0) == 0) svg.polyline(pts, "#bbbbbb", 1.0);
            else if (name == "ego_gt") svg.polyline(pts, "#2ca02c", 2.5);
            else if (name == "ego_plan") svg.polyline(pts, "#1f77b4", 2.5, true);
            else if (name.find("_gt") != std::string::npos) svg.polyline(pts, "#444444", 1.2);
            else svg.polyline(pts, "#ff7f0e", 1.0, true);
        }
        const std::string base = "trajectory_" + sc.scene_id;
        write_file(out + "/" + base + ".csv", csv);
        write_file(out + "/" + base + ".svg", svg.str(sc.scene_id + " (green: GT, blue: plan, orange: forecasts)"));
        files.push_back(base + ".csv");
        files.push_back(base + ".svg");
    }
    return files;
}

std::vector<std::string> plot_ablation(const std::string& path, const std::string& name, const std::string& out)
{
    const auto rows = read_csv(path);
    if (rows.size() < 2 || rows[0].size() < 9) throw DataError(path + ": unexpected layout");
    std::string csv = "arm,l2_avg,col_avg\n";
    std::vector<std::tuple<std::string, double, double>> bars;
    double l2max = 0, cmax = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        csv += rows[i][0] + "," + rows[i][4] + "," + rows[i][8] + "\n";
        bars.emplace_back(rows[i][0], parse_double("l2_avg", rows[i][4]), parse_double("col_avg", rows[i][8]));
        l2max = std::max(l2max, std::get<1>(bars.back()));
        cmax = std::max(cmax, std::get<2>(bars.back()));
    }
    const double n = static_cast<double>(bars.size());
    Svg svg(0, n, 0, 1.1);
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double x = static_cast<double>(i);
        svg.rect(x + 0.1, 0, 0.38, l2max > 0 ? std::get<1>(bars[i]) / l2max : 0, "#1f77b4");
        svg.rect(x + 0.52, 0, 0.38, cmax > 0 ? std::get<2>(bars[i]) / cmax : 0, "#d62728");
        svg.label(x + 0.1, -0.06, std::get<0>(bars[i]));
    }
    write_file(out + "/" + name + "_bars.csv", csv);
    write_file(out + "/" + name + "_bars.svg",
               svg.str(name + " (blue: avg L2, red: avg collision; each normalized to its max)"));
    return {name + "_bars.csv", name + "_bars.svg"};
}

} // namespace

std::vector<std::string> cmd_plot(const std::string& run_dir)
{
    const bool has_log = fs::exists(run_dir + "/train_log.csv");
    std::vector<std::string> ablations;
    for (const char* t : {"design", "interaction", "iterations"})
        if (fs::exists(run_dir + "/ablation_" + std::string(t) + ".csv")) ablations.push_back(t);
    if (!has_log && ablations.empty())
        throw DataError("run directory '" + run_dir + "' has no train_log.csv or ablation tables");
    const std::string out = run_dir + "/plots";
    ensure_dir(out);
    std::vector<std::string> files;
    if (has_log) {
        for (auto& f : plot_loss(run_dir, out)) files.push_back(f);
        if (fs::exists(run_dir + "/checkpoint.bin"))
            for (auto& f : plot_trajectories(run_dir, out)) files.push_back(f);
    }
    for (const std::string& t : ablations)
        for (auto& f : plot_ablation(run_dir + "/ablation_" + t + ".csv", "ablation_" + t, out)) files.push_back(f);
    return files;
}

// --- files -------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        std::istringstream ls(line);
        while (std::getline(ls, cur, ',')) f.push_back(cur);
        if (line.back() == ',') f.emplace_back();
        rows.push_back(f);
    }
    return rows;
}

std::string read_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace ppad::harness
