#include "ppad/errors.hpp"
#include "ppad/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace ppad;
using namespace ppad::train;
using ad::Var;

namespace {

scene::SceneConfig small_scene()
{
    scene::SceneConfig s;
    s.agent_count = 2;
    s.bev_width = 16;
    s.bev_height = 8;
    return s;
}

TrainConfig small_train(int iterations = 3)
{
    TrainConfig c;
    c.ppad.channels = 8;
    c.ppad.heads = 2;
    c.ppad.agent_modes = 2;
    c.ppad.deform_points = 2;
    c.ppad.iterations = iterations;
    c.ppad.distances = {geom::kInf, 10.0, 5.0};
    c.learning_rate = 1e-3;
    return c;
}

std::vector<Sample> samples(int n, int channels, std::uint64_t seed = 11)
{
    const scene::SceneConfig s = small_scene();
    std::vector<Sample> out;
    const scene::Scenario mix[] = {scene::Scenario::car_follow, scene::Scenario::lane_change_merge,
                                   scene::Scenario::protected_turn};
    for (int i = 0; i < n; ++i)
        out.push_back(make_sample(scene::generate_scene(mix[i % 3], seed + i, s), s, channels));
    return out;
}

model::Params fresh(const TrainConfig& c, std::uint64_t seed = 3, bool zero_heads = true)
{
    model::Params p(c.ppad);
    model::init_params(p, seed, zero_heads);
    return p;
}

} // namespace

TEST(Adam, FirstStepIsSignedLearningRate)
{
    const TrainConfig c = small_train();
    model::Params p = fresh(c);
    const model::Params before = p;
    std::map<std::string, Mat> g;
    g["plan.motion.b2"] = Mat(1, p.plan.motion.b2.cols(), 0.0);
    for (int i = 0; i < g["plan.motion.b2"].cols(); ++i) g["plan.motion.b2"](0, i) = (i % 2 ? -1.0 : 1.0) * (0.1 + i);
    AdamState st;
    adam_step(p, g, st, 0.01);
    for (int i = 0; i < p.plan.motion.b2.cols(); ++i) {
        const double gi = g["plan.motion.b2"](0, i);
        EXPECT_NEAR(p.plan.motion.b2(0, i) - before.plan.motion.b2(0, i), -0.01 * gi / (std::abs(gi) + 1e-8), 1e-15);
    }
    // tensors without a gradient entry are untouched
    EXPECT_EQ(p.plan.motion.w2, before.plan.motion.w2);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, MatchesScalarRecurrenceOverTenSteps)
{
    const TrainConfig c = small_train();
    model::Params p = fresh(c);
    const double x0 = p.pred.confidence.b2(0, 0);
    AdamState st;
    double x = x0, m = 0, v = 0;
    for (int k = 1; k <= 10; ++k) {
        // gradient of (x - 2)^2 evaluated at the current value
        const double gp = 2 * (p.pred.confidence.b2(0, 0) - 2.0);
        adam_step(p, {{"pred.confidence.b2", Mat(1, 1, gp)}}, st, 0.05);
        const double g = 2 * (x - 2.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.05 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
        EXPECT_NEAR(p.pred.confidence.b2(0, 0), x, 1e-14) << "step " << k;
    }
    EXPECT_LT(std::abs(x - 2.0), std::abs(x0 - 2.0));
}

TEST(Adam, FrozenTensorsAndNonFiniteGradients)
{
    const TrainConfig c = small_train();
    model::Params p = fresh(c);
    const model::Params before = p;
    std::map<std::string, Mat> g;
    p.visit([&](const std::string& n, const Mat& m) { g[n] = Mat(m.rows(), m.cols(), 1.0); });
    AdamState st;
    adam_step(p, g, st, 0.1, [](const std::string& n) { return !model::Params::is_encoder(n); });
    EXPECT_EQ(p.enc.agent.w1, before.enc.agent.w1);
    EXPECT_EQ(p.enc.ego_modes, before.enc.ego_modes);
    EXPECT_NE(p.plan.state.w1, before.plan.state.w1);

    g["plan.state.w1"](0, 0) = std::nan("");
    const model::Params mid = p;
    EXPECT_THROW(adam_step(p, g, st, 0.1), NumericError);
    EXPECT_EQ(p.plan.state.w2, mid.plan.state.w2);
}

TEST(SceneLoss, TapeTotalMatchesComposedBreakdown)
{
    const TrainConfig c = small_train();
    const model::Params p = fresh(c, 5, false);
    for (const Sample& s : samples(3, c.ppad.channels)) {
        ad::Tape t;
        const SceneLoss l = scene_loss(t, p, s, c, 17);
        EXPECT_NEAR(l.total.value()(0, 0), l.parts.total, 1e-10 * std::max(1.0, std::abs(l.parts.total)));
        const losses::LossWeights w = phase_weights(c);
        const double manual = w.lambda1 * l.parts.L_agent + w.zeta1 * (l.parts.L_C + l.parts.L_plan) +
                              w.zeta2 * (l.parts.L_C_noisy + l.parts.L_plan_noisy);
        EXPECT_NEAR(l.parts.total, manual, 1e-12 * std::max(1.0, manual));
        EXPECT_NEAR(l.term(LossTerm::c_noisy).value()(0, 0), l.parts.L_C_noisy, 1e-12);
    }
}

TEST(SceneLoss, NoisyBranchOffDropsItsTerms)
{
    TrainConfig c = small_train();
    c.noisy_traj = false;
    const model::Params p = fresh(c, 5, false);
    const Sample s = samples(1, c.ppad.channels)[0];
    ad::Tape t;
    const SceneLoss l = scene_loss(t, p, s, c, 17);
    EXPECT_EQ(l.parts.L_plan_noisy, 0.0);
    EXPECT_EQ(l.parts.L_C_noisy, 0.0);
    EXPECT_THROW(l.term(LossTerm::plan_noisy), std::invalid_argument);
    const double clean = c.weights.lambda1 * l.parts.L_agent + c.weights.zeta1 * (l.parts.L_C + l.parts.L_plan);
    EXPECT_NEAR(l.parts.total, clean, 1e-12 * std::max(1.0, clean));

    // zeta2 = 0 with the branch on gives the same total
    TrainConfig on = small_train();
    on.weights.zeta2 = 0.0;
    ad::Tape t2;
    EXPECT_NEAR(scene_loss(t2, p, s, on, 17).parts.total, l.parts.total, 1e-12 * std::max(1.0, clean));
}

// With zero perturbation every forced start is the GT waypoint, so the noisy
// target reduces to the plain GT offsets.
TEST(SceneLoss, ZeroNoiseTargetsAreGroundTruthOffsets)
{
    TrainConfig c = small_train();
    c.weights.noise_sigma = 0.0;
    const model::Params p = fresh(c, 5, false);
    const Sample s = samples(1, c.ppad.channels)[0];
    ad::Tape t;
    const SceneLoss l = scene_loss(t, p, s, c, 17);
    const Mat gt_pos = s.targets.ego_positions;
    ad::Tape t2;
    const model::TokenVars tok = model::encode_tokens(t2, s.inputs, p);
    const model::RolloutVars r = model::rollout(tok, p, s.command, {&gt_pos});
    const double expect = losses::planning_loss(r.plan_offsets.value(), s.targets.ego_offsets, nullptr);
    EXPECT_NEAR(l.parts.L_plan_noisy, expect, 1e-12);
}

// Central differences at step 1e-5 carry a rounding floor of roughly
// eps * (size of the loss terms) / step, about 1e-9 here; coordinates whose
// gradient is near that floor are held to it instead of the relative bound.
constexpr double kRoundoffFloor = 2e-9;

void expect_gradients_match(const FdReport& r, const char* what)
{
    ASSERT_FALSE(r.coords.empty());
    for (const FdSample& c : r.coords) {
        const double scale = std::max({std::abs(c.analytic), std::abs(c.numeric), kFdDenominatorFloor});
        EXPECT_LE(std::abs(c.analytic - c.numeric), 1e-4 * scale + kRoundoffFloor)
            << what << " " << c.tensor << "[" << c.index << "] analytic " << c.analytic << " numeric " << c.numeric;
    }
}

TEST(GradientCheck, EveryTermThroughFullRollout)
{
    const TrainConfig c = small_train(6);
    model::Params p = fresh(c, 7, false);
    const std::vector<Sample> data = samples(2, c.ppad.channels);
    for (LossTerm term : {LossTerm::agent, LossTerm::plan, LossTerm::ca_col, LossTerm::bd, LossTerm::dir,
                          LossTerm::plan_noisy, LossTerm::c_noisy, LossTerm::total})
        expect_gradients_match(finite_difference_report(p, data, c, term, 1e-5, 64, 1), to_string(term));
}

TEST(GradientCheck, TrainedParametersAndPlanFinetune)
{
    TrainConfig c = small_train(6);
    c.learning_rate = 3e-3;
    const std::vector<Sample> data = samples(3, c.ppad.channels);
    TrainResult r = train::train(c, data, fresh(c, 2));
    const std::vector<Sample> two(data.begin(), data.begin() + 2);
    expect_gradients_match(finite_difference_report(r.params, two, c, LossTerm::total, 1e-5, 64, 4), "trained");
    c.phase = Phase::plan_finetune;
    c.ca_collision = false;
    expect_gradients_match(finite_difference_report(r.params, two, c, LossTerm::total, 1e-5, 64, 5), "finetune");
}

// f(x) = sum_i (a_i . x - b_i)^2 for a linear head x; the gradient is exact.
TEST(GradientCheck, LinearHeadQuadraticLossIsExact)
{
    CounterRng rng(8);
    Mat x = testutil::random_mat(rng, 3, 4);
    const Mat a = testutil::random_mat(rng, 5, 12), b = testutil::random_mat(rng, 5, 1);
    const auto residual = [&](int i) {
        double r = -b[i];
        for (int k = 0; k < 12; ++k) r += a(i, k) * x[k];
        return r;
    };
    const auto value = [&] {
        losses::Summands s;
        for (int i = 0; i < 5; ++i) s.push_back(residual(i) * residual(i));
        return s;
    };
    Mat g(3, 4);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 12; ++k) g[k] += 2 * residual(i) * a(i, k);
    const NamedTensor t[] = {{"x", &x}};
    const FdReport r = central_difference_report(t, value, {g}, 1e-5, 64, 0);
    EXPECT_EQ(r.coords.size(), 12u); // capped at the coordinate count, all distinct
    EXPECT_LT(r.max_rel_error(), 1e-9);

    // negative control: a gradient that is wrong by 5 % on every coordinate
    Mat bad = g;
    for (double& v : bad.values()) v *= 1.05;
    EXPECT_GT(central_difference_report(t, value, {bad}, 1e-5, 64, 0).max_rel_error(), 1e-2);
}

TEST(GradientCheck, CorruptedModelGradientIsDetected)
{
    const TrainConfig c = small_train(6);
    model::Params p = fresh(c, 7, false);
    const std::vector<Sample> data = samples(1, c.ppad.channels);
    std::vector<NamedTensor> tensors{{"plan.motion.w2", &p.plan.motion.w2}};
    ad::Tape t;
    const Var total = scene_loss(t, p, data[0], c, 0).total;
    t.backward(total);
    Mat g = t.param_grad(p.plan.motion.w2);
    for (double& v : g.values()) v = -v; // sign flip
    const auto value = [&] {
        ad::Tape u;
        return losses::Summands{scene_loss(u, p, data[0], c, 0).parts.total};
    };
    EXPECT_GT(central_difference_report(tensors, value, {g}, 1e-5, 64, 0).max_rel_error(), 1e-2);
}

TEST(GradientCheck, SpecMetricIsReportedVerbatim)
{
    const TrainConfig c = small_train(6);
    model::Params p = fresh(c, 7, false);
    const std::vector<Sample> data = samples(1, c.ppad.channels);
    const FdReport r = finite_difference_report(p, data, c, LossTerm::plan, 1e-5, 16, 3);
    double worst = 0;
    for (const FdSample& s : r.coords) {
        EXPECT_EQ(s.rel_error, fd_relative_error(s.analytic, s.numeric));
        worst = std::max(worst, s.rel_error);
    }
    EXPECT_EQ(worst, finite_difference_check(p, data, c, LossTerm::plan, 1e-5, 16, 3));
    EXPECT_EQ(fd_relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(fd_relative_error(1e-12, 0.0), 1e-4);
}

TEST(GradientCheck, DetectsAWrongStepSize)
{
    // a coarse step on a curved loss must be visible: the checker is not vacuous
    const TrainConfig c = small_train();
    model::Params p = fresh(c, 7, false);
    const std::vector<Sample> data = samples(1, c.ppad.channels);
    EXPECT_GT(finite_difference_check(p, data, c, LossTerm::total, 0.5, 24, 1), 1e-3);
}

TEST(Training, DeterministicForFixedSeed)
{
    TrainConfig c = small_train();
    c.batch_size = 2;
    c.epochs = 2;
    c.seed = 21;
    const std::vector<Sample> data = samples(5, c.ppad.channels);
    const TrainResult a = train::train(c, data, fresh(c));
    const TrainResult b = train::train(c, data, fresh(c));
    ASSERT_EQ(a.log.size(), 6u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(format_log_row(a.log[i]), format_log_row(b.log[i]));
    a.params.visit([&](const std::string& n, const Mat& m) {
        b.params.visit([&](const std::string& n2, const Mat& m2) {
            if (n == n2) EXPECT_EQ(m, m2) << n;
        });
    });
    c.seed = 22;
    const TrainResult d = train::train(c, data, fresh(c));
    EXPECT_NE(format_log_row(a.log[0]), format_log_row(d.log[0]));
}

TEST(Training, PlanFinetuneFreezesEncoderAndDropsForecastTerm)
{
    TrainConfig c = small_train();
    c.phase = Phase::plan_finetune;
    EXPECT_EQ(phase_weights(c).lambda1, 0.0);
    const model::Params init = fresh(c, 4, false);
    const TrainResult r = train::train(c, samples(3, c.ppad.channels), init);
    EXPECT_EQ(r.params.enc.agent.w1, init.enc.agent.w1);
    EXPECT_EQ(r.params.enc.bev_bias, init.enc.bev_bias);
    EXPECT_NE(r.params.plan.motion.w1, init.plan.motion.w1);
}

TEST(Training, CallbackStopsEarlyAndLogFormat)
{
    TrainConfig c = small_train();
    c.epochs = 3;
    int calls = 0;
    const TrainResult r = train::train(c, samples(4, c.ppad.channels), fresh(c), [&](const LogRow&) { return ++calls < 3; });
    EXPECT_EQ(r.log.size(), 3u);
    const std::string row = format_log_row(r.log[0]);
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 9);
    EXPECT_EQ(std::string(kLogHeader).substr(0, 11), "step,epoch,");
    EXPECT_THROW(train::train(c, {}, fresh(c)), DataError);
    TrainConfig bad = c;
    bad.learning_rate = -1;
    EXPECT_THROW(train::train(bad, samples(1, 8), fresh(c)), std::invalid_argument);
}

// Smoothed with non-overlapping windows of 20 steps, the car_follow training
// curve falls from window to window.
TEST(Training, LossDecreasesOverFirstHundredSteps)
{
    TrainConfig c = small_train(6);
    c.epochs = 5;
    c.learning_rate = 3e-3;
    const scene::SceneConfig sc = small_scene();
    std::vector<Sample> data;
    for (int i = 0; i < 20; ++i)
        data.push_back(make_sample(scene::generate_scene(scene::Scenario::car_follow, 100 + i, sc), sc, 8));
    const TrainResult r = train::train(c, data, fresh(c));
    ASSERT_EQ(r.log.size(), 100u);
    std::vector<double> window;
    for (int w = 0; w < 5; ++w) {
        double s = 0;
        for (int i = 20 * w; i < 20 * w + 20; ++i) s += r.log[i].parts.total;
        window.push_back(s / 20);
    }
    for (int w = 1; w < 5; ++w) EXPECT_LT(window[w], window[w - 1]) << "window " << w;
}

TEST(Checkpoint, RoundTripAndValidation)
{
    const TrainConfig c = small_train();
    const model::Params p = fresh(c, 9, false);
    std::stringstream ss;
    save_checkpoint(ss, p, "channels = 8\n");
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 8), "PPADCKPT");

    model::Params q = fresh(c, 1);
    std::stringstream in(bytes);
    EXPECT_EQ(load_checkpoint(in, q), "channels = 8\n");
    p.visit([&](const std::string& n, const Mat& m) {
        q.visit([&](const std::string& n2, const Mat& m2) {
            if (n == n2) EXPECT_EQ(m, m2) << n;
        });
    });

    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::stringstream bad(corrupt);
    EXPECT_THROW(load_checkpoint(bad, q), DataError);
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(load_checkpoint(cut, q), DataError);

    TrainConfig other = c;
    other.ppad.channels = 12;
    model::Params wrong(other.ppad);
    std::stringstream again(bytes);
    EXPECT_THROW(load_checkpoint(again, wrong), DataError);
}
