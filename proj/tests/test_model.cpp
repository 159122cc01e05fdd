#include "ppad/model.hpp"

#include "oracles.hpp"
#include "step_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace ppad;
using namespace ppad::model;
using oracle::affine;
using oracle::dense_attention;
using namespace oracle::steps;

namespace {

PpadConfig small_config(int iterations = 3)
{
    PpadConfig c;
    c.channels = 8;
    c.heads = 2;
    c.agent_modes = 2;
    c.deform_points = 2;
    c.iterations = iterations;
    c.distances = {geom::kInf, 10.0, 5.0};
    return c;
}

const scene::SceneConfig kScfg;

} // namespace

TEST(PpadConfig, IterationsMustDivideHorizon)
{
    for (int n : {1, 2, 3, 6}) {
        PpadConfig c;
        c.iterations = n;
        EXPECT_NO_THROW(c.validate());
        EXPECT_EQ(c.steps_per_iteration() * n, 6);
    }
    for (int n : {0, 4, 5, 7}) {
        PpadConfig c;
        c.iterations = n;
        EXPECT_THROW(c.validate(), std::invalid_argument) << n;
    }
    PpadConfig c;
    c.distances = {15.0, geom::kInf};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.channels = 30;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Params, CountMatchesLayerArithmetic)
{
    const auto mlp_n = [](int i, int h, int o) { return i * h + h + h * o + o; };
    const int C = 8, attn_n = 4 * C * C + 3 * C, P = 2, deform_n = C * 2 * P + 2 * P + C * P + P + C * C;
    const int enc = mlp_n(10, C, C) + mlp_n(14, C, C) + mlp_n(4, C, C) + 2 * C + 3 * C + C;
    const int pred = 3 * attn_n + attn_n + 3 * attn_n + deform_n + mlp_n(C, C, 4) + mlp_n(C, C, 1);
    const int plan = 3 * attn_n + 3 * attn_n + deform_n + mlp_n(3 * C, 2 * C, 12) + mlp_n(3 * C, 2 * C, C);
    PpadConfig cfg = small_config(3);
    EXPECT_EQ(Params(cfg).count(), static_cast<std::size_t>(enc + pred + plan));
    cfg.tied_scales = true;
    EXPECT_EQ(Params(cfg).count(), static_cast<std::size_t>(enc + pred + plan - 8 * attn_n));
}

TEST(Params, InitIsDeterministicAndNamed)
{
    Params a(small_config()), b(small_config()), c(small_config());
    init_params(a, 5);
    init_params(b, 5);
    init_params(c, 6);
    std::vector<std::string> names;
    bool same = true, differs = false;
    a.visit([&](const std::string& n, const Mat&) { names.push_back(n); });
    std::vector<const Mat*> ma, mb, mc;
    a.visit([&](const std::string&, const Mat& m) { ma.push_back(&m); });
    b.visit([&](const std::string&, const Mat& m) { mb.push_back(&m); });
    c.visit([&](const std::string&, const Mat& m) { mc.push_back(&m); });
    for (std::size_t i = 0; i < ma.size(); ++i) {
        same = same && *ma[i] == *mb[i];
        differs = differs || !(*ma[i] == *mc[i]);
    }
    EXPECT_TRUE(same);
    EXPECT_TRUE(differs);
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_TRUE(Params::is_encoder("enc.agent.w1"));
    EXPECT_FALSE(Params::is_encoder("plan.motion.w1"));
}

TEST(EncodeTokens, ShapesAndBevLayout)
{
    const scene::Scene sc = scene::generate_scene(scene::Scenario::car_follow, 3, kScfg);
    Params p(small_config());
    init_params(p, 1);
    const TokenSet ts = encode_tokens(sc, kScfg, p);
    EXPECT_EQ(ts.E.rows(), 3);
    EXPECT_EQ(ts.E.cols(), 8);
    EXPECT_EQ(ts.A.rows(), 5 * 2);
    EXPECT_EQ(ts.M.rows(), static_cast<int>(scene::tokenize_map(sc).size()));
    EXPECT_EQ(ts.B.channels, 8);
    for (int r = 0; r < ts.B.features.rows(); ++r)
        for (int c = 0; c < 8; ++c)
            EXPECT_EQ(ts.B.features(r, c), c < scene::kBevRawChannels ? sc.bev.features(r, c) : 0.0);
    // Mode rows of one agent differ only by the mode embedding.
    for (int c = 0; c < 8; ++c)
        EXPECT_NEAR(ts.A(0, c) - ts.A(1, c), p.enc.agent_modes(0, c) - p.enc.agent_modes(1, c), 1e-12);
    for (int a = 0; a < 5; ++a)
        for (int k = 0; k < 2; ++k) EXPECT_DOUBLE_EQ(ts.confidences(a, k), 0.5);
}

TEST(Rollout, ZeroHeadsGiveStationaryPlansAndUniformConfidence)
{
    const scene::Scene sc = scene::generate_scene(scene::Scenario::lane_change_merge, 4, kScfg);
    for (int n : {1, 2, 3, 6}) {
        Params p(small_config(n));
        init_params(p, 2, true);
        const RolloutResult r = rollout(sc, kScfg, p);
        ASSERT_EQ(r.ego_plan.size(), 6);
        for (const auto& w : r.ego_plan.waypoints) {
            EXPECT_EQ(w.x, 0.0);
            EXPECT_EQ(w.y, 0.0);
        }
        for (int a = 0; a < 5; ++a) {
            const auto now = sc.agents[a].trajectory[kScfg.now()];
            for (int k = 0; k < 2; ++k) {
                EXPECT_EQ(r.confidences(a, k), 0.5);
                const auto f = r.forecast(a, k, 2, kScfg.dt);
                ASSERT_EQ(f.size(), 6);
                for (const auto& w : f.waypoints) {
                    EXPECT_EQ(w.x, now.x);
                    EXPECT_EQ(w.y, now.y);
                }
            }
        }
    }
}

TEST(Rollout, IterationAccounting)
{
    const scene::Scene sc = scene::generate_scene(scene::Scenario::car_follow, 8, kScfg);
    for (int n : {1, 2, 3, 6}) {
        const Params p = random_params(small_config(n), 3);
        const RolloutResult r = rollout(sc, kScfg, p);
        EXPECT_EQ(static_cast<int>(r.trace.size()), n);
        EXPECT_EQ(r.plan_offsets.rows(), 6);
        EXPECT_EQ(r.forecasts.rows(), 10);
        EXPECT_EQ(r.forecasts.cols(), 12);
        // Plan positions are the running sum of the offsets.
        double x = 0, y = 0;
        for (int i = 0; i < 6; ++i) {
            x += r.plan_offsets(i, 0);
            y += r.plan_offsets(i, 1);
            EXPECT_NEAR(r.ego_plan[i].x, x, 1e-12);
            EXPECT_NEAR(r.ego_plan[i].y, y, 1e-12);
        }
        for (const auto& tr : r.trace) {
            EXPECT_EQ(tr.e1.cols(), 8);
            EXPECT_EQ(tr.agents.rows(), 10);
        }
    }
    PpadConfig bad = small_config(3);
    bad.t_fut = 4;
    bad.iterations = 2;
    EXPECT_THROW(rollout(sc, kScfg, Params(bad)), std::invalid_argument);
}

// One prediction step then one planning step against loop-level evaluation of
// each stage, with per-mode, per-distance key subsets chosen explicitly.
TEST(Rollout, StepsMatchStageByStageOracle)
{
    const PpadConfig cfg = small_config(3);
    const int K = cfg.agent_modes, steps = cfg.steps_per_iteration();
    for (auto scen : {scene::Scenario::car_follow, scene::Scenario::protected_turn}) {
        const scene::Scene sc = scene::generate_scene(scen, 6, kScfg);
        const Params p = random_params(cfg, 11);
        ad::Tape t;
        const TokenVars tok = encode_tokens(t, token_inputs(sc, kScfg, cfg.channels), p);
        LoopState st = initial_state(t, tok, cfg, sc.command);
        const StepOracle o = step_oracle(st, tok, p, sc.command);

        const PredictionOut pr = prediction_step(st, tok, p);
        EXPECT_LT(max_abs_diff(pr.tokens.value(), o.tokens), 1e-10);
        EXPECT_LT(max_abs_diff(pr.offsets.value(), o.agent_offsets), 1e-10);
        EXPECT_LT(max_abs_diff(pr.confidences.value(), o.confidences), 1e-12);
        EXPECT_LT(max_abs_diff(pr.positions.value(), o.agent_positions), 1e-10);

        st.A = pr.tokens;
        st.agent_xy = ad::slice_cols(pr.positions, 2 * (steps - 1), 2 * steps);
        st.agent_pos = o.moved;
        const PlanOut pl = plan_step(st, tok, p, sc.command);
        EXPECT_LT(max_abs_diff(pl.e1.value(), o.e1), 1e-10);
        EXPECT_LT(max_abs_diff(pl.e2.value(), o.e2), 1e-10);
        EXPECT_LT(max_abs_diff(pl.e3.value(), o.e3), 1e-10);
        EXPECT_LT(max_abs_diff(pl.offsets.value(), o.plan_offsets), 1e-10);
        EXPECT_LT(max_abs_diff(pl.next_E.value(), o.next_E), 1e-10);
        EXPECT_EQ(K, o.stack.rows());
    }
}

TEST(Rollout, AgentPermutationEquivariance)
{
    const scene::Scene sc = scene::generate_scene(scene::Scenario::lane_change_merge, 9, kScfg);
    scene::Scene perm = sc;
    const std::vector<int> order{3, 0, 4, 2, 1};
    for (int i = 0; i < 5; ++i) perm.agents[i] = sc.agents[order[i]];
    const Params p = random_params(small_config(3), 4);
    const RolloutResult a = rollout(sc, kScfg, p), b = rollout(perm, kScfg, p);
    EXPECT_LT(max_abs_diff(a.plan_offsets, b.plan_offsets), 1e-10);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 2; ++k) {
            EXPECT_NEAR(a.confidences(order[i], k), b.confidences(i, k), 1e-10);
            for (int c = 0; c < 12; ++c) EXPECT_NEAR(a.forecasts(order[i] * 2 + k, c), b.forecasts(i * 2 + k, c), 1e-10);
        }
}

// With only finite interaction distances, an agent that stays farther than the
// largest distance from the ego and every other agent cannot affect the plan.
TEST(Rollout, FarAgentHasNoInfluenceUnderFiniteDistances)
{
    PpadConfig local = small_config(3);
    local.distances = {15.0, 7.5};
    PpadConfig global = local;
    global.distances = {geom::kInf, 15.0, 7.5};
    const Params pl = random_params(local, 7, 0.3), pg = random_params(global, 7, 0.3);
    const scene::Scene sc = scene::generate_scene(scene::Scenario::car_follow, 2, kScfg);

    const auto run = [&](const Params& p, const TokenInputs& in) {
        ad::Tape t;
        const TokenVars tok = encode_tokens(t, in, p);
        const RolloutVars v = rollout(tok, p, sc.command);
        return std::pair{v.plan_positions.value(), v.forecasts.value()};
    };

    TokenInputs in = token_inputs(sc, kScfg, 8);
    // Park agent 0 in the corner farthest from everything else.
    double best = -1;
    geom::Pose2 corner;
    for (double cx : {-28.0, 28.0})
        for (double cy : {-14.0, 14.0}) {
            double d = std::hypot(cx, cy);
            for (int a = 1; a < 5; ++a) d = std::min(d, dist(cx, cy, in.agent_pos[a].x, in.agent_pos[a].y));
            if (d > best) best = d, corner = {cx, cy, 0.0};
        }
    in.agent_pos[0] = corner;
    in.agent(0, 0) = corner.x / kScfg.range_x;
    in.agent(0, 1) = corner.y / kScfg.range_y;
    TokenInputs bumped = in;
    bumped.agent(0, 4) += 0.3;
    bumped.agent(0, 6) -= 0.2;

    const auto [plan_a, fc_a] = run(pl, in);
    const auto [plan_b, fc_b] = run(pl, bumped);
    // precondition: agent 0 stays isolated over the whole rollout in both runs
    for (const Mat* fc : {&fc_a, &fc_b})
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 2; ++k) {
                const double x0 = (*fc)(k, 2 * j), y0 = (*fc)(k, 2 * j + 1);
                double d = j == 0 ? std::hypot(x0, y0) : dist(x0, y0, plan_a(j - 1, 0), plan_a(j - 1, 1));
                for (int r = 2; r < 10; ++r) d = std::min(d, dist(x0, y0, (*fc)(r, 2 * j), (*fc)(r, 2 * j + 1)));
                ASSERT_GT(d, 15.0 + 1e-6);
            }
    EXPECT_EQ(max_abs_diff(plan_a, plan_b), 0.0);
    for (int r = 2; r < 10; ++r)
        for (int c = 0; c < 12; ++c) EXPECT_EQ(fc_a(r, c), fc_b(r, c));

    // control: with the unbounded distance the same change does reach the plan
    const auto [plan_c, fc_c] = run(pg, in);
    const auto [plan_d, fc_d] = run(pg, bumped);
    EXPECT_GT(max_abs_diff(plan_c, plan_d), 1e-9);
}

TEST(Rollout, ForcedStartsResetIterationOrigins)
{
    const PpadConfig cfg = small_config(3);
    const Params p = random_params(cfg, 12);
    const scene::Scene sc = scene::generate_scene(scene::Scenario::car_follow, 1, kScfg);
    Mat forced(6, 2);
    for (int i = 0; i < 6; ++i) forced(i, 0) = 1.5 * (i + 1), forced(i, 1) = 0.1 * i;
    ad::Tape t;
    const TokenVars tok = encode_tokens(t, token_inputs(sc, kScfg, 8), p);
    const RolloutVars v = rollout(tok, p, sc.command, {&forced});
    const Mat& pos = v.plan_positions.value();
    const Mat& off = v.plan_offsets.value();
    EXPECT_NEAR(pos(0, 0), off(0, 0), 1e-12);
    for (int it = 1; it < 3; ++it) {
        const int r = 2 * it;
        EXPECT_NEAR(pos(r, 0), forced(r - 1, 0) + off(r, 0), 1e-12);
        EXPECT_NEAR(pos(r, 1), forced(r - 1, 1) + off(r, 1), 1e-12);
    }
}

TEST(Rollout, GradientsMatchFiniteDifferences)
{
    const PpadConfig cfg = small_config(3);
    Params p = random_params(cfg, 21, 0.4);
    const scene::Scene sc = scene::generate_scene(scene::Scenario::protected_turn, 3, kScfg);
    const TokenInputs in = token_inputs(sc, kScfg, 8);
    const auto loss = [&](ad::Tape& t) {
        const TokenVars tok = encode_tokens(t, in, p);
        const RolloutVars v = rollout(tok, p, sc.command);
        return ad::add(ad::add(testutil::random_projection(t, v.plan_positions, 1),
                               testutil::random_projection(t, v.forecasts, 2)),
                       testutil::random_projection(t, v.confidences, 3));
    };
    std::vector<std::pair<std::string, Mat*>> chosen;
    p.visit([&](const std::string& n, Mat& m) {
        for (const char* want : {"enc.agent.w1", "enc.ego_modes", "enc.bev_bias", "pred.self1.wq", "pred.ego.wv",
                                 "pred.map0.wk", "pred.bev.w_offset", "pred.confidence.w2", "plan.agent2.wv",
                                 "plan.map1.wq", "plan.bev.w_weight", "plan.motion.w2", "plan.state.w1"})
            if (n == want) chosen.push_back({n, &m});
    });
    ASSERT_EQ(chosen.size(), 13u);
    ad::Tape t;
    const ad::Var l = loss(t);
    t.backward(l);
    CounterRng pick(5);
    for (auto& [name, m] : chosen) {
        const Mat g = t.param_grad(*m);
        double worst = 0;
        for (int n = 0; n < 6; ++n) {
            const std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(m->size()) - 1));
            const double orig = (*m)[i], h = 1e-6;
            (*m)[i] = orig + h;
            ad::Tape tp;
            const double fp = loss(tp).value()(0, 0);
            (*m)[i] = orig - h;
            ad::Tape tm;
            const double fm = loss(tm).value()(0, 0);
            (*m)[i] = orig;
            const double num = (fp - fm) / (2 * h);
            worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6}));
        }
        EXPECT_LT(worst, 1e-4) << name;
    }
}

// Perturbing the tokens of agents outside radius s leaves that scale's term
// bit-identical; the unbounded scale sees the change.
TEST(AgentInteraction, OutOfRadiusTokensDoNotReachFiniteScaleTerms)
{
    const PpadConfig cfg = small_config();
    const Params p = random_params(cfg, 21);
    const int K = cfg.agent_modes, C = cfg.channels, na = 4;
    CounterRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Mat E(1, C), A(na * K, C);
        testutil::fill_random(rng, E, 1.0);
        testutil::fill_random(rng, A, 1.0);
        const Pose2 ego{rng.uniform(-3, 3), rng.uniform(-3, 3), 0.0};
        std::vector<Pose2> pos;
        for (int j = 0; j < na * K; ++j) pos.push_back({rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0});
        const auto terms = [&](const Mat& keys) {
            ad::Tape t;
            std::vector<Mat> out;
            for (const ad::Var& v :
                 agent_interaction_terms(t.constant(E), t.constant(keys), ego, pos, K, cfg.distances, p.plan.agent_attn))
                out.push_back(v.value());
            return out;
        };
        const std::vector<Mat> base = terms(A);
        ASSERT_EQ(base.size(), cfg.distances.size());
        for (std::size_t s = 1; s < cfg.distances.size(); ++s) {
            Mat bumped = A;
            bool any = false;
            for (int j = 0; j < na * K; ++j)
                if (dist(ego.x, ego.y, pos[j].x, pos[j].y) > cfg.distances[s]) {
                    for (int c = 0; c < C; ++c) bumped(j, c) += rng.uniform(-1, 1);
                    any = true;
                }
            if (!any) continue;
            const std::vector<Mat> moved = terms(bumped);
            for (std::size_t u = s; u < cfg.distances.size(); ++u) EXPECT_EQ(max_abs_diff(base[u], moved[u]), 0.0);
            EXPECT_GT(max_abs_diff(base[0], moved[0]), 0.0);
        }
    }
}
