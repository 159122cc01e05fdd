#include "ppad/training.hpp"

#include "ppad/errors.hpp"
#include "ppad/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ppad::train {

using ad::Var;

const char* to_string(Phase p)
{
    return p == Phase::joint ? "joint" : "plan_finetune";
}

Phase parse_phase(const std::string& s)
{
    if (s == "joint") return Phase::joint;
    if (s == "plan_finetune") return Phase::plan_finetune;
    throw std::invalid_argument("unknown training phase '" + s + "' (expected joint or plan_finetune)");
}

const char* to_string(LossTerm t)
{
    switch (t) {
    case LossTerm::agent: return "L_agent";
    case LossTerm::plan: return "L_plan";
    case LossTerm::ca_col: return "L_CA_col";
    case LossTerm::bd: return "L_bd";
    case LossTerm::dir: return "L_dir";
    case LossTerm::plan_noisy: return "L_plan_noisy";
    case LossTerm::c_noisy: return "L_C_noisy";
    case LossTerm::total: return "total";
    }
    return "?";
}

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    weights.validate();
    ppad.validate();
}

losses::LossWeights phase_weights(const TrainConfig& cfg)
{
    losses::LossWeights w = cfg.weights;
    if (cfg.phase == Phase::plan_finetune) w.lambda1 = 0.0;
    if (!cfg.noisy_traj) w.zeta2 = 0.0;
    return w;
}

Sample make_sample(const scene::Scene& sc, const scene::SceneConfig& scfg, int channels)
{
    Sample s;
    s.scene_id = sc.scene_id;
    s.command = sc.command;
    s.inputs = model::token_inputs(sc, scfg, channels);
    s.targets = losses::targets(sc, scfg);
    s.geometry = losses::collision_geometry(sc, scfg);
    s.boundaries = sc.boundaries();
    s.centerlines = sc.centerlines();
    s.drivable = sc.drivable;
    return s;
}

Var SceneLoss::term(LossTerm t) const
{
    for (const auto& [k, v] : terms)
        if (k == t) return v;
    throw std::invalid_argument(std::string("loss term not computed: ") + to_string(t));
}

namespace {

Mat cumulative(const Mat& offsets)
{
    Mat out = offsets;
    for (int t = 1; t < out.rows(); ++t)
        for (int c = 0; c < out.cols(); ++c) out(t, c) += out(t - 1, c);
    return out;
}

struct Constraint {
    Var col, bd, dir, sum;
};

// Records go to the probe only when one is attached.
struct Recorder {
    std::vector<SummandRecord>* probe;
    losses::Summands* open(std::map<LossTerm, double> coeff)
    {
        if (!probe) return nullptr;
        probe->push_back({std::move(coeff), {}});
        return &probe->back().parts;
    }
};

// noisy == false: clean terms with coefficient zeta1 in the total; otherwise
// the pieces of L_C_noisy with coefficient zeta2.
Constraint constraint_terms(const model::RolloutVars& r, const Sample& s, const losses::LossWeights& w, bool ca,
                            bool noisy, Recorder rec)
{
    const double z = noisy ? w.zeta2 : w.zeta1;
    const auto coeff = [&](LossTerm own, double lambda) -> std::map<LossTerm, double> {
        if (noisy) return {{LossTerm::c_noisy, lambda}, {LossTerm::total, z * lambda}};
        return {{own, 1.0}, {LossTerm::total, z * lambda}};
    };
    Constraint c;
    c.col = losses::collision_loss(r.plan_positions, r.forecasts, r.confidences, s.geometry, w.d_safe, ca,
                                   rec.open(coeff(LossTerm::ca_col, w.lambda3)));
    c.bd = losses::boundary_loss(r.plan_positions, s.boundaries, s.drivable, w.delta_bd,
                                 rec.open(coeff(LossTerm::bd, w.lambda4)));
    c.dir = losses::directional_loss(r.plan_positions, s.centerlines, rec.open(coeff(LossTerm::dir, w.lambda5)));
    c.sum = ad::add(ad::add(ad::scale(c.col, w.lambda3), ad::scale(c.bd, w.lambda4)), ad::scale(c.dir, w.lambda5));
    return c;
}

double scalar(Var v)
{
    return v.value()(0, 0);
}

} // namespace

SceneLoss scene_loss(ad::Tape& t, const model::Params& params, const Sample& s, const TrainConfig& cfg,
                     std::uint64_t noise_seed, std::vector<SummandRecord>* probe)
{
    if (probe) probe->clear();
    Recorder rec{probe};
    const losses::LossWeights w = phase_weights(cfg);
    const model::TokenVars tok = model::encode_tokens(t, s.inputs, params);
    const model::RolloutVars clean = model::rollout(tok, params, s.command);

    SceneLoss out;
    const Var agent = losses::agent_forecast_loss(clean.forecasts, clean.confidences, s.targets.agents,
                                                  rec.open({{LossTerm::agent, 1.0}, {LossTerm::total, w.lambda1}}));
    const Var plan = losses::planning_loss(clean.plan_offsets, s.targets.ego_offsets,
                                           rec.open({{LossTerm::plan, 1.0}, {LossTerm::total, w.zeta1}}));
    const Constraint c = constraint_terms(clean, s, w, cfg.ca_collision, false, rec);
    Var total = ad::add(ad::scale(agent, w.lambda1), ad::scale(ad::add(c.sum, plan), w.zeta1));
    out.terms = {{LossTerm::agent, agent}, {LossTerm::plan, plan}, {LossTerm::ca_col, c.col}, {LossTerm::bd, c.bd},
                 {LossTerm::dir, c.dir}};
    out.parts.L_agent = scalar(agent);
    out.parts.L_plan = scalar(plan);
    out.parts.L_CA_col = scalar(c.col);
    out.parts.L_bd = scalar(c.bd);
    out.parts.L_dir = scalar(c.dir);
    out.parts.L_C = losses::constraint_loss(out.parts.L_CA_col, out.parts.L_bd, out.parts.L_dir, w);

    if (cfg.noisy_traj) {
        const Mat noisy_off = losses::perturb_trajectory(s.targets.ego_offsets, w.noise_sigma, noise_seed);
        const Mat noisy_pos = cumulative(noisy_off);
        const model::RolloutVars nb = model::rollout(tok, params, s.command, {&noisy_pos});
        // From a perturbed start the first waypoint must land back on the clean path.
        Mat target = s.targets.ego_offsets;
        const int steps = params.cfg.steps_per_iteration();
        for (int it = 1; it < params.cfg.iterations; ++it) {
            const int r = it * steps;
            target(r, 0) = s.targets.ego_positions(r, 0) - noisy_pos(r - 1, 0);
            target(r, 1) = s.targets.ego_positions(r, 1) - noisy_pos(r - 1, 1);
        }
        const Var plan_n = losses::planning_loss(nb.plan_offsets, target,
                                                 rec.open({{LossTerm::plan_noisy, 1.0}, {LossTerm::total, w.zeta2}}));
        const Constraint cn = constraint_terms(nb, s, w, cfg.ca_collision, true, rec);
        total = ad::add(total, ad::scale(ad::add(cn.sum, plan_n), w.zeta2));
        out.terms.push_back({LossTerm::plan_noisy, plan_n});
        out.terms.push_back({LossTerm::c_noisy, cn.sum});
        out.parts.L_plan_noisy = scalar(plan_n);
        out.parts.L_C_noisy = scalar(cn.sum);
    }
    out.total = total;
    out.terms.push_back({LossTerm::total, total});
    out.parts.total = losses::total_loss(out.parts, w);
    return out;
}

void adam_step(model::Params& params, const std::map<std::string, Mat>& grads, AdamState& state, double lr,
               const std::function<bool(const std::string&)>& trainable, double beta1, double beta2, double eps)
{
    for (const auto& [name, g] : grads)
        for (double v : g.values())
            if (!std::isfinite(v)) throw NumericError("adam_step: non-finite gradient in " + name);
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    params.visit([&](const std::string& name, Mat& p) {
        const auto it = grads.find(name);
        if (it == grads.end() || (trainable && !trainable(name))) return;
        const Mat& g = it->second;
        if (!g.same_shape(p)) throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
        Mat& m = state.m.try_emplace(name, p.rows(), p.cols()).first->second;
        Mat& v = state.v.try_emplace(name, p.rows(), p.cols()).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    });
}

std::string format_log_row(const LogRow& r)
{
    const losses::LossBreakdown& p = r.parts;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.step, r.epoch, p.L_agent,
                  p.L_plan, p.L_CA_col, p.L_bd, p.L_dir, p.L_plan_noisy, p.L_C_noisy, p.total);
    return buf;
}

namespace {

void accumulate(losses::LossBreakdown& into, const losses::LossBreakdown& p, double f)
{
    into.L_agent += f * p.L_agent;
    into.L_plan += f * p.L_plan;
    into.L_CA_col += f * p.L_CA_col;
    into.L_bd += f * p.L_bd;
    into.L_dir += f * p.L_dir;
    into.L_C += f * p.L_C;
    into.L_plan_noisy += f * p.L_plan_noisy;
    into.L_C_noisy += f * p.L_C_noisy;
    into.total += f * p.total;
}

std::uint64_t noise_seed(std::uint64_t seed, long step, int slot)
{
    return CounterRng(seed, 0x51ED0000ULL + static_cast<std::uint64_t>(step) * 64 + slot).next_u64();
}

} // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data, model::Params init,
                  const StepCallback& on_step)
{
    cfg.validate();
    if (data.empty()) throw DataError("train: empty dataset");
    TrainResult res{std::move(init), {}};
    model::Params& p = res.params;
    if (p.cfg.iterations != cfg.ppad.iterations || p.cfg.channels != cfg.ppad.channels)
        throw std::invalid_argument("train: parameters were built for a different model config");
    const bool finetune = cfg.phase == Phase::plan_finetune;
    const auto trainable = [&](const std::string& n) { return !(finetune && model::Params::is_encoder(n)); };

    AdamState state;
    long step = 0;
    const int n = static_cast<int>(data.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        CounterRng shuffle(cfg.seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_int(0, i)]);

        for (int b = 0; b < n; b += cfg.batch_size) {
            const int end = std::min(n, b + cfg.batch_size);
            const double f = 1.0 / (end - b);
            std::map<std::string, Mat> grads;
            LogRow row;
            row.step = step;
            row.epoch = epoch;
            for (int i = b; i < end; ++i) {
                ad::Tape t;
                const SceneLoss l = scene_loss(t, p, data[order[i]], cfg, noise_seed(cfg.seed, step, i - b));
                if (!std::isfinite(l.parts.total))
                    throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (scene " +
                                       data[order[i]].scene_id + ")");
                t.backward(l.total);
                p.visit([&](const std::string& name, const Mat& m) {
                    const Mat g = t.param_grad(m);
                    auto [it, fresh] = grads.try_emplace(name, m.rows(), m.cols());
                    for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += f * g[k];
                });
                accumulate(row.parts, l.parts, f);
            }
            adam_step(p, grads, state, cfg.learning_rate, trainable);
            res.log.push_back(row);
            ++step;
            if (on_step && !on_step(row)) return res;
        }
    }
    return res;
}

double FdReport::max_rel_error() const
{
    double worst = 0;
    for (const FdSample& c : coords) worst = std::max(worst, c.rel_error);
    return worst;
}

double fd_relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdDenominatorFloor});
}

FdReport central_difference_report(std::span<const NamedTensor> params, const std::function<losses::Summands()>& value,
                                   const std::vector<Mat>& analytic, double step, int coords, std::uint64_t seed)
{
    if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
    if (analytic.size() != params.size()) throw std::invalid_argument("one analytic gradient per tensor expected");
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!analytic[t].same_shape(*params[t].value))
            throw std::invalid_argument("analytic gradient shape mismatch for " + params[t].name);
        for (std::size_t k = 0; k < params[t].value->size(); ++k) pool.push_back({t, k});
    }
    if (pool.empty()) throw std::invalid_argument("finite_difference_check: no coordinates selected");
    CounterRng rng(seed, 0xFDC);
    const int count = std::min<int>(coords, static_cast<int>(pool.size()));
    // partial Fisher-Yates: distinct coordinates
    for (int i = 0; i < count; ++i) std::swap(pool[i], pool[rng.uniform_int(i, static_cast<int>(pool.size()) - 1)]);

    FdReport rep;
    for (int i = 0; i < count; ++i) {
        const auto [t, k] = pool[i];
        Mat& m = *params[t].value;
        const double orig = m[k];
        m[k] = orig + step;
        const double hi = m[k];
        const losses::Summands fp = value();
        m[k] = orig - step;
        const double lo = m[k];
        const losses::Summands fm = value();
        m[k] = orig;
        // Difference summand by summand when the layouts agree.
        long double d = 0;
        if (fp.size() == fm.size()) {
            for (std::size_t j = 0; j < fp.size(); ++j) d += static_cast<long double>(fp[j]) - fm[j];
        } else {
            for (double v : fp) d += v;
            for (double v : fm) d -= v;
        }
        FdSample c;
        c.tensor = params[t].name;
        c.index = k;
        c.analytic = analytic[t][k];
        c.numeric = static_cast<double>(d / (static_cast<long double>(hi) - lo));
        c.rel_error = fd_relative_error(c.analytic, c.numeric);
        rep.coords.push_back(std::move(c));
    }
    return rep;
}

FdReport finite_difference_report(model::Params& params, const std::vector<Sample>& samples, const TrainConfig& cfg,
                                  LossTerm term, double step, int coords, std::uint64_t seed,
                                  const std::function<bool(const std::string&)>& filter)
{
    if (samples.empty()) throw std::invalid_argument("finite_difference_check: no samples");
    std::vector<NamedTensor> tensors;
    std::vector<Mat> analytic;
    params.visit([&](const std::string& name, Mat& m) {
        if (filter && !filter(name)) return;
        tensors.push_back({name, &m});
        analytic.emplace_back(m.rows(), m.cols());
    });
    std::vector<SummandRecord> probe;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ad::Tape t;
        const Var x = scene_loss(t, params, samples[i], cfg, noise_seed(cfg.seed, 0, static_cast<int>(i))).term(term);
        t.backward(x);
        for (std::size_t j = 0; j < tensors.size(); ++j) {
            const Mat g = t.param_grad(*tensors[j].value);
            for (std::size_t k = 0; k < g.size(); ++k) analytic[j][k] += g[k];
        }
    }
    const auto value = [&] {
        losses::Summands out;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            ad::Tape t;
            scene_loss(t, params, samples[i], cfg, noise_seed(cfg.seed, 0, static_cast<int>(i)), &probe);
            for (const SummandRecord& r : probe) {
                const auto c = r.coeff.find(term);
                if (c == r.coeff.end()) continue;
                for (double v : r.parts) out.push_back(c->second * v);
            }
        }
        return out;
    };
    return central_difference_report(tensors, value, analytic, step, coords, seed);
}

double finite_difference_check(model::Params& params, const std::vector<Sample>& samples, const TrainConfig& cfg,
                               LossTerm term, double step, int coords, std::uint64_t seed,
                               const std::function<bool(const std::string&)>& filter)
{
    return finite_difference_report(params, samples, cfg, term, step, coords, seed, filter).max_rel_error();
}

// --- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'P', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_string(std::ostream& os, const std::string& s)
{
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::uint64_t limit)
{
    const std::uint64_t n = get_u64(is);
    if (n > limit) throw DataError("checkpoint: string length out of range");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint: truncated");
    return s;
}

std::string read_header(std::istream& is)
{
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError("checkpoint: bad magic");
    const std::uint64_t version = get_u64(is);
    if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    return get_string(is, 1u << 24);
}

} // namespace

void save_checkpoint(std::ostream& os, const model::Params& params, const std::string& config_text)
{
    os.write(kMagic, 8);
    put_u64(os, kVersion);
    put_string(os, config_text);
    std::uint64_t count = 0;
    params.visit([&](const std::string&, const Mat&) { ++count; });
    put_u64(os, count);
    params.visit([&](const std::string& name, const Mat& m) {
        put_string(os, name);
        put_u64(os, static_cast<std::uint64_t>(m.rows()));
        put_u64(os, static_cast<std::uint64_t>(m.cols()));
        for (double v : m.values()) put_u64(os, std::bit_cast<std::uint64_t>(v));
    });
}

void save_checkpoint(const std::string& path, const model::Params& params, const std::string& config_text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    save_checkpoint(os, params, config_text);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::string checkpoint_config(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    return read_header(is);
}

std::string load_checkpoint(std::istream& is, model::Params& params)
{
    const std::string config = read_header(is);
    std::uint64_t expected = 0;
    params.visit([&](const std::string&, const Mat&) { ++expected; });
    if (get_u64(is) != expected) throw DataError("checkpoint: tensor count does not match the model");
    params.visit([&](const std::string& name, Mat& m) {
        const std::string got = get_string(is, 4096);
        if (got != name) throw DataError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
        const std::uint64_t r = get_u64(is), c = get_u64(is);
        if (r != static_cast<std::uint64_t>(m.rows()) || c != static_cast<std::uint64_t>(m.cols()))
            throw DataError("checkpoint: shape mismatch for " + name);
        for (double& v : m.values()) {
            v = std::bit_cast<double>(get_u64(is));
            if (!std::isfinite(v)) throw DataError("checkpoint: non-finite value in " + name);
        }
    });
    return config;
}

std::string load_checkpoint(const std::string& path, model::Params& params)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(is, params);
}

} // namespace ppad::train
