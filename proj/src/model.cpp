#include "ppad/model.hpp"

#include "ppad/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ppad::model {

using ad::Var;

Mlp::Mlp(int in, int hidden, int out) : w1(in, hidden), b1(1, hidden), w2(hidden, out), b2(1, out)
{
    if (in <= 0 || hidden <= 0 || out <= 0) throw std::invalid_argument("Mlp: sizes must be positive");
}

Var mlp(Var x, const Mlp& p)
{
    ad::Tape& t = *x.tape();
    const Var h = ad::tanh(ad::add_row(ad::matmul(x, t.param(p.w1)), t.param(p.b1)));
    return ad::add_row(ad::matmul(h, t.param(p.w2)), t.param(p.b2));
}

Mat mlp(const Mat& x, const Mlp& p)
{
    ad::Tape t;
    return mlp(t.constant(x), p).value();
}

void PpadConfig::validate() const
{
    if (distances.empty()) throw std::invalid_argument("PpadConfig: need at least one interaction distance");
    for (std::size_t i = 0; i < distances.size(); ++i) {
        if (!(distances[i] > 0.0)) throw std::invalid_argument("PpadConfig: distances must be positive");
        if (i > 0 && !(distances[i] < distances[i - 1]))
            throw std::invalid_argument("PpadConfig: distances must be strictly descending");
    }
    if (iterations < 1 || t_fut < 1 || t_fut % iterations != 0)
        throw std::invalid_argument("PpadConfig: iterations must divide t_fut (got N=" + std::to_string(iterations) +
                                    ", T_fut=" + std::to_string(t_fut) + ")");
    if (channels < scene::kBevRawChannels || heads < 1 || channels % heads != 0)
        throw std::invalid_argument("PpadConfig: channels must be >= 5 and divisible by heads");
    if (deform_points < 1 || agent_modes < 1) throw std::invalid_argument("PpadConfig: counts must be positive");
    if (ego_modes != 3) throw std::invalid_argument("PpadConfig: ego_modes must be 3 (one per driving command)");
    if (!(offset_scale > 0.0)) throw std::invalid_argument("PpadConfig: offset_scale must be positive");
}

namespace {

std::vector<AttnParams> per_scale(const PpadConfig& cfg)
{
    const int n = cfg.tied_scales ? 1 : cfg.scale_count();
    return std::vector<AttnParams>(static_cast<std::size_t>(n), AttnParams(cfg.channels, cfg.heads));
}

const AttnParams& at_scale(const std::vector<AttnParams>& v, std::size_t s)
{
    return v.size() == 1 ? v[0] : v.at(s);
}

Var zeros(ad::Tape& t, int rows, int cols)
{
    return t.constant(Mat(rows, cols));
}

Var positions_var(ad::Tape& t, std::span<const Pose2> pos)
{
    Mat m(static_cast<int>(pos.size()), 2);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        m(static_cast<int>(i), 0) = pos[i].x;
        m(static_cast<int>(i), 1) = pos[i].y;
    }
    return t.constant(std::move(m));
}

std::vector<Pose2> positions_of(const Mat& m)
{
    std::vector<Pose2> out(static_cast<std::size_t>(m.rows()));
    for (int i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1), 0.0};
    return out;
}

std::uint64_t name_hash(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

EncoderParams::EncoderParams(const PpadConfig& cfg)
    : agent(kAgentFeatures, cfg.channels, cfg.channels), map(kMapFeatures, cfg.channels, cfg.channels),
      ego(kEgoFeatures, cfg.channels, cfg.channels), agent_modes(cfg.agent_modes, cfg.channels),
      ego_modes(cfg.ego_modes, cfg.channels), bev_bias(1, cfg.channels)
{
}

PredictionParams::PredictionParams(const PpadConfig& cfg)
    : self_attn(per_scale(cfg)), ego_attn(cfg.channels, cfg.heads), map_attn(per_scale(cfg)),
      bev(cfg.channels, cfg.deform_points), motion(cfg.channels, cfg.channels, 2 * cfg.steps_per_iteration()),
      confidence(cfg.channels, cfg.channels, 1)
{
}

PlanningParams::PlanningParams(const PpadConfig& cfg)
    : agent_attn(per_scale(cfg)), map_attn(per_scale(cfg)), bev(cfg.channels, cfg.deform_points),
      motion(3 * cfg.channels, 2 * cfg.channels, cfg.ego_modes * 2 * cfg.steps_per_iteration()),
      state(3 * cfg.channels, 2 * cfg.channels, cfg.channels)
{
}

Params::Params(const PpadConfig& c) : cfg((c.validate(), c)), enc(c), pred(c), plan(c) {}

std::size_t Params::count() const
{
    std::size_t n = 0;
    visit([&](const std::string&, const Mat& m) { n += m.size(); });
    return n;
}

void init_params(Params& params, std::uint64_t seed, bool zero_heads)
{
    params.visit([&](const std::string& name, Mat& m) {
        CounterRng rng(seed, name_hash(name));
        const bool bias = m.rows() == 1 && !ends_with(name, "modes");
        const bool head = ends_with(name, "motion.w2") || ends_with(name, "motion.b2") ||
                          ends_with(name, "confidence.w2") || ends_with(name, "confidence.b2") ||
                          ends_with(name, "state.w2") || ends_with(name, "state.b2");
        const bool offsets = ends_with(name, "w_offset") || ends_with(name, "b_offset");
        if (bias || offsets || (zero_heads && head)) {
            std::fill(m.values().begin(), m.values().end(), 0.0);
            return;
        }
        const double a = ends_with(name, "modes") ? 1.0 : std::sqrt(6.0 / (m.rows() + m.cols()));
        for (double& v : m.values()) v = rng.uniform(-a, a);
    });
}

// --- tokens ------------------------------------------------------------------

TokenInputs token_inputs(const scene::Scene& sc, const scene::SceneConfig& scfg, int channels)
{
    if (channels < scene::kBevRawChannels) throw std::invalid_argument("token_inputs: channels must be >= 5");
    const int now = scfg.now();
    if (sc.ego_gt.size() <= now || now < 1) throw std::invalid_argument("token_inputs: ego history too short");
    const double dt = scfg.dt;
    TokenInputs in;

    const int na = static_cast<int>(sc.agents.size());
    in.agent = Mat(na, kAgentFeatures);
    for (int a = 0; a < na; ++a) {
        const scene::AgentTrack& tr = sc.agents[static_cast<std::size_t>(a)];
        const Pose2& p = tr.trajectory[now];
        const Pose2& q = tr.trajectory[now - 1];
        const double f[kAgentFeatures] = {p.x / scfg.range_x,
                                          p.y / scfg.range_y,
                                          std::cos(p.heading),
                                          std::sin(p.heading),
                                          (p.x - q.x) / dt / 10.0,
                                          (p.y - q.y) / dt / 10.0,
                                          tr.box.length / 5.0,
                                          tr.box.width / 2.5,
                                          tr.cls == scene::AgentClass::vehicle ? 1.0 : 0.0,
                                          tr.cls == scene::AgentClass::pedestrian ? 1.0 : 0.0};
        for (int c = 0; c < kAgentFeatures; ++c) in.agent(a, c) = f[c];
        in.agent_pos.push_back({p.x, p.y, p.heading});
    }

    const auto chunks = scene::tokenize_map(sc, 12.0, kMapPoints);
    in.map = Mat(static_cast<int>(chunks.size()), kMapFeatures);
    for (std::size_t m = 0; m < chunks.size(); ++m) {
        const int r = static_cast<int>(m);
        for (int k = 0; k < kMapPoints; ++k) {
            in.map(r, 2 * k) = chunks[m].points[static_cast<std::size_t>(k)].x / scfg.range_x;
            in.map(r, 2 * k + 1) = chunks[m].points[static_cast<std::size_t>(k)].y / scfg.range_y;
        }
        in.map(r, 2 * kMapPoints) = chunks[m].cls == geom::PolylineClass::centerline ? 1.0 : 0.0;
        in.map(r, 2 * kMapPoints + 1) = chunks[m].cls == geom::PolylineClass::boundary ? 1.0 : 0.0;
        in.map_pos.push_back({chunks[m].points[0].x, chunks[m].points[0].y, 0.0});
    }

    const auto& e = sc.ego_gt;
    const double vx = (e[now].x - e[now - 1].x) / dt, vy = (e[now].y - e[now - 1].y) / dt;
    double ax = 0.0, ay = 0.0;
    if (now >= 2) {
        ax = (vx - (e[now - 1].x - e[now - 2].x) / dt) / dt;
        ay = (vy - (e[now - 1].y - e[now - 2].y) / dt) / dt;
    }
    in.ego = Mat(1, kEgoFeatures, {vx / 10.0, vy / 10.0, ax / 4.0, ay / 4.0});

    const attn::BevGrid& g = sc.bev;
    if (g.channels != scene::kBevRawChannels) throw std::invalid_argument("token_inputs: scene BEV must have 5 channels");
    in.bev = Mat(g.height * g.width, channels);
    for (int r = 0; r < in.bev.rows(); ++r)
        for (int c = 0; c < g.channels; ++c) in.bev(r, c) = g.features(r, c);
    in.bev_meta = g.meta();
    in.bev_meta.channels = channels;
    return in;
}

TokenVars encode_tokens(ad::Tape& t, const TokenInputs& in, const Params& p)
{
    const int C = p.cfg.channels;
    const int K = p.cfg.agent_modes;
    if (in.bev.cols() != C) throw std::invalid_argument("encode_tokens: BEV channels do not match the model");
    TokenVars tok;
    tok.ego_pos = {0.0, 0.0, 0.0};
    tok.agent_pos = in.agent_pos;
    tok.map_pos = in.map_pos;
    tok.bev_meta = in.bev_meta;

    const Var ego = mlp(t.constant(in.ego), p.enc.ego);
    tok.E = ad::add(ad::broadcast_rows(ego, p.cfg.ego_modes), t.param(p.enc.ego_modes));

    const int na = in.agent.rows();
    if (na > 0) {
        const Var a = ad::repeat_each_row(mlp(t.constant(in.agent), p.enc.agent), K);
        std::vector<Var> tiles(static_cast<std::size_t>(na), t.param(p.enc.agent_modes));
        tok.A = ad::add(a, ad::concat_rows(tiles));
    } else {
        tok.A = zeros(t, 0, C);
    }
    tok.M = in.map.rows() > 0 ? mlp(t.constant(in.map), p.enc.map) : zeros(t, 0, C);
    tok.B = ad::add_row(t.constant(in.bev), t.param(p.enc.bev_bias));
    return tok;
}

TokenSet encode_tokens(const scene::Scene& sc, const scene::SceneConfig& scfg, const Params& p)
{
    ad::Tape t;
    const TokenInputs in = token_inputs(sc, scfg, p.cfg.channels);
    const TokenVars v = encode_tokens(t, in, p);
    TokenSet s;
    s.E = v.E.value();
    s.A = v.A.value();
    s.M = v.M.value();
    s.B = attn::BevGrid(sc.bev.height, sc.bev.width, p.cfg.channels, sc.bev.origin, sc.bev.cell_size);
    s.B.features = v.B.value();
    s.ego_pos = v.ego_pos;
    s.agent_pos = v.agent_pos;
    s.map_pos = v.map_pos;
    const int na = v.agent_count();
    s.confidences = Mat(na, p.cfg.agent_modes, 1.0 / p.cfg.agent_modes);
    return s;
}

// --- interactions ------------------------------------------------------------

geom::Mask distance_mask(const Pose2& q, std::span<const Pose2> keys, double s)
{
    return geom::key_objects_mask(std::span<const Pose2>(&q, 1), keys, s);
}

std::vector<Var> agent_interaction_terms(Var E, Var A, const Pose2& ego_pos, std::span<const Pose2> agent_pos,
                                         int modes, const std::vector<double>& S, const std::vector<AttnParams>& attn)
{
    const int nk = A.rows();
    if (E.rows() != 1) throw std::invalid_argument("hierarchical_agent_interaction: E must be a single row");
    if (modes < 1 || nk % modes != 0 || static_cast<int>(agent_pos.size()) != nk)
        throw std::invalid_argument("hierarchical_agent_interaction: agent tokens, modes and positions disagree");
    const Var q = ad::broadcast_rows(E, modes);
    std::vector<Var> terms;
    for (std::size_t s = 0; s < S.size(); ++s) {
        const geom::Mask near = distance_mask(ego_pos, agent_pos, S[s]);
        geom::Mask mask(modes, nk);
        for (int k = 0; k < modes; ++k)
            for (int j = 0; j < nk; ++j) mask.set(k, j, near.blocked(0, j) || j % modes != k);
        terms.push_back(attn::masked_mhca(q, A, mask, at_scale(attn, s)));
    }
    return terms;
}

Var hierarchical_agent_interaction(Var E, Var A, const Pose2& ego_pos, std::span<const Pose2> agent_pos, int modes,
                                   const std::vector<double>& S, const std::vector<AttnParams>& attn)
{
    Var out;
    for (const Var& o : agent_interaction_terms(E, A, ego_pos, agent_pos, modes, S, attn))
        out = out.valid() ? ad::add(out, o) : o;
    return out;
}

Var mode_aggregate(Var stack)
{
    return ad::add(ad::max_rows(stack), ad::mean_rows(stack));
}

Mat mode_aggregate(const Mat& stack)
{
    ad::Tape t;
    return mode_aggregate(t.constant(stack)).value();
}

Var map_interaction(Var Q, Var M, std::span<const Pose2> query_pos, std::span<const Pose2> map_pos,
                    const std::vector<double>& S, const std::vector<AttnParams>& attn)
{
    if (static_cast<int>(query_pos.size()) != Q.rows() || static_cast<int>(map_pos.size()) != M.rows())
        throw std::invalid_argument("map_interaction: positions do not match tokens");
    if (M.rows() == 0) return zeros(*Q.tape(), Q.rows(), Q.cols());
    Var out;
    for (std::size_t s = 0; s < S.size(); ++s) {
        const Var o = attn::masked_mhca(Q, M, geom::key_objects_mask(query_pos, map_pos, S[s]), at_scale(attn, s));
        out = out.valid() ? ad::add(out, o) : o;
    }
    return out;
}

// --- steps -------------------------------------------------------------------

PredictionOut prediction_step(const LoopState& st, const TokenVars& tok, const Params& p)
{
    const PpadConfig& cfg = p.cfg;
    const int K = cfg.agent_modes;
    const int nk = st.A.rows();
    const int steps = cfg.steps_per_iteration();
    if (nk == 0) throw std::invalid_argument("prediction_step: no agents");

    // Agents of the same mode, excluding self, within s.
    Var x = st.A;
    {
        const Mat d = geom::pairwise_distance(st.agent_pos, st.agent_pos);
        Var sum;
        for (std::size_t s = 0; s < cfg.distances.size(); ++s) {
            geom::Mask mask(nk, nk);
            for (int i = 0; i < nk; ++i)
                for (int j = 0; j < nk; ++j)
                    mask.set(i, j, i % K != j % K || i / K == j / K || !(d(i, j) <= cfg.distances[s]));
            const Var o = attn::masked_mhca(x, x, mask, at_scale(p.pred.self_attn, s));
            sum = sum.valid() ? ad::add(sum, o) : o;
        }
        x = ad::add(x, sum);
    }
    x = ad::add(x, attn::masked_mhca(x, st.E, geom::Mask(nk, 1), p.pred.ego_attn));
    x = ad::add(x, map_interaction(x, tok.M, st.agent_pos, tok.map_pos, cfg.distances, p.pred.map_attn));
    x = ad::add(x, attn::deformable_bev_attention(x, st.agent_xy, tok.B, tok.bev_meta, p.pred.bev));

    PredictionOut out;
    out.tokens = x;
    out.offsets = ad::scale(mlp(x, p.pred.motion), cfg.offset_scale);
    out.confidences = ad::masked_softmax(ad::reshape(mlp(x, p.pred.confidence), nk / K, K), nullptr);
    std::vector<Var> cols;
    Var pos = st.agent_xy;
    for (int j = 0; j < steps; ++j) {
        pos = ad::add(pos, ad::slice_cols(out.offsets, 2 * j, 2 * j + 2));
        cols.push_back(pos);
    }
    out.positions = ad::concat_cols(cols);
    return out;
}

PlanOut plan_step(const LoopState& st, const TokenVars& tok, const Params& p, scene::DrivingCommand cmd)
{
    const PpadConfig& cfg = p.cfg;
    ad::Tape& t = *st.E.tape();
    const int C = cfg.channels;
    const int steps = cfg.steps_per_iteration();
    const std::span<const Pose2> ego(&st.ego_pos, 1);

    PlanOut out;
    if (cfg.use_agent_interaction && st.A.rows() > 0) {
        out.e1 = mode_aggregate(hierarchical_agent_interaction(st.E, st.A, st.ego_pos, st.agent_pos, cfg.agent_modes,
                                                               cfg.distances, p.plan.agent_attn));
    } else {
        out.e1 = st.E;
    }
    out.e2 = cfg.use_map_interaction ? map_interaction(out.e1, tok.M, ego, tok.map_pos, cfg.distances, p.plan.map_attn)
                                     : zeros(t, 1, C);
    out.e3 = cfg.use_bev_interaction
                 ? attn::deformable_bev_attention(out.e2, st.ego_xy, tok.B, tok.bev_meta, p.plan.bev)
                 : zeros(t, 1, C);
    const Var parts[] = {out.e1, out.e2, out.e3};
    out.h = ad::concat_cols(parts);
    const int c0 = static_cast<int>(cmd) * 2 * steps;
    const Var all = mlp(out.h, p.plan.motion);
    out.offsets = ad::scale(ad::reshape(ad::slice_cols(all, c0, c0 + 2 * steps), steps, 2), cfg.offset_scale);
    out.next_E = ad::add(st.E, mlp(out.h, p.plan.state));
    return out;
}

RolloutVars rollout(const TokenVars& tok, const Params& p, scene::DrivingCommand cmd, ForcedStarts forced)
{
    const PpadConfig& cfg = p.cfg;
    cfg.validate();
    ad::Tape& t = *tok.E.tape();
    const int K = cfg.agent_modes;
    const int steps = cfg.steps_per_iteration();
    if (tok.E.rows() != cfg.ego_modes) throw std::invalid_argument("rollout: ego tokens must have one row per command");
    if (tok.agent_count() == 0) throw std::invalid_argument("rollout: scene has no agents");
    if (forced.positions && (forced.positions->rows() != cfg.t_fut || forced.positions->cols() != 2))
        throw std::invalid_argument("rollout: forced positions must be t_fut x 2");

    LoopState st;
    const int c = static_cast<int>(cmd);
    st.E = ad::slice_rows(tok.E, c, c + 1);
    st.A = tok.A;
    st.ego_pos = tok.ego_pos;
    st.ego_xy = positions_var(t, std::span<const Pose2>(&st.ego_pos, 1));
    for (const Pose2& a : tok.agent_pos)
        for (int k = 0; k < K; ++k) st.agent_pos.push_back({a.x, a.y, 0.0});
    st.agent_xy = positions_var(t, st.agent_pos);

    RolloutVars out;
    std::vector<Var> plan_off, plan_pos, forecasts;
    for (int it = 0; it < cfg.iterations; ++it) {
        if (forced.positions && it > 0) {
            const int row = it * steps - 1;
            st.ego_pos = {(*forced.positions)(row, 0), (*forced.positions)(row, 1), 0.0};
            st.ego_xy = positions_var(t, std::span<const Pose2>(&st.ego_pos, 1));
        }
        const PredictionOut pr = prediction_step(st, tok, p);
        st.A = pr.tokens;
        st.agent_xy = ad::slice_cols(pr.positions, 2 * (steps - 1), 2 * steps);
        st.agent_pos = positions_of(st.agent_xy.value());
        st.confidences = pr.confidences;
        forecasts.push_back(pr.positions);

        const Mat E_in = st.E.value();
        const Pose2 ego_in = st.ego_pos;
        const PlanOut pl = plan_step(st, tok, p, cmd);
        const Var pos = ad::add_row(ad::cumsum_rows(pl.offsets), st.ego_xy);
        plan_off.push_back(pl.offsets);
        plan_pos.push_back(pos);
        st.E = pl.next_E;
        st.ego_xy = ad::slice_rows(pos, steps - 1, steps);
        st.ego_pos = {st.ego_xy.value()(0, 0), st.ego_xy.value()(0, 1), 0.0};
        out.trace.push_back({pl.e1.value(), pl.e2.value(), pl.e3.value(), pr.tokens.value(), E_in, ego_in, st.agent_pos});
    }
    out.plan_offsets = ad::concat_rows(plan_off);
    out.plan_positions = ad::concat_rows(plan_pos);
    out.forecasts = ad::concat_cols(forecasts);
    out.confidences = st.confidences;
    return out;
}

scene::Trajectory RolloutResult::forecast(int agent, int mode, int modes, double dt) const
{
    scene::Trajectory tr;
    tr.dt = dt;
    const int r = agent * modes + mode;
    for (int j = 0; 2 * j < forecasts.cols(); ++j) tr.waypoints.push_back({forecasts(r, 2 * j), forecasts(r, 2 * j + 1), 0.0});
    return tr;
}

RolloutResult rollout(const scene::Scene& sc, const scene::SceneConfig& scfg, const Params& p)
{
    if (p.cfg.t_fut != scfg.t_fut) throw std::invalid_argument("rollout: model and scene horizons differ");
    ad::Tape t;
    const TokenVars tok = encode_tokens(t, token_inputs(sc, scfg, p.cfg.channels), p);
    const RolloutVars v = rollout(tok, p, sc.command);
    RolloutResult r;
    r.plan_offsets = v.plan_offsets.value();
    r.forecasts = v.forecasts.value();
    r.confidences = v.confidences.value();
    r.trace = v.trace;
    r.ego_plan.dt = scfg.dt;
    const Mat& pp = v.plan_positions.value();
    for (int i = 0; i < pp.rows(); ++i) {
        const double px = i > 0 ? pp(i - 1, 0) : 0.0, py = i > 0 ? pp(i - 1, 1) : 0.0;
        const double dx = pp(i, 0) - px, dy = pp(i, 1) - py;
        const double heading = std::hypot(dx, dy) > 1e-6 ? std::atan2(dy, dx)
                               : r.ego_plan.waypoints.empty() ? 0.0
                                                              : r.ego_plan.waypoints.back().heading;
        r.ego_plan.waypoints.push_back({pp(i, 0), pp(i, 1), heading});
    }
    return r;
}

} // namespace ppad::model
