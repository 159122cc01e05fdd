#pragma once

#include "ppad/attention.hpp"
#include "ppad/autodiff.hpp"
#include "ppad/scene.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ppad::model {

using attn::AttnParams;
using attn::DeformParams;
using geom::Pose2;

/// Two-layer perceptron: tanh(x W1 + b1) W2 + b2.
struct Mlp {
    Mat w1, b1, w2, b2;

    Mlp() = default;
    Mlp(int in, int hidden, int out);
    int in() const { return w1.rows(); }
    int out() const { return w2.cols(); }

    template <typename F>
    void visit(const std::string& prefix, F&& f)
    {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

ad::Var mlp(ad::Var x, const Mlp& p);
Mat mlp(const Mat& x, const Mlp& p);

struct PpadConfig {
    std::vector<double> distances{geom::kInf, 15.0, 7.5}; // S, descending, +inf first
    int iterations = 6;                                    // N
    int t_fut = 6;
    int channels = 32;
    int heads = 4;
    int deform_points = 4;
    int agent_modes = 3; // N_A^mot
    int ego_modes = 3;   // N_E^mot, one per driving command
    bool tied_scales = false;
    double offset_scale = 1.0; // meters per unit of motion-head output
    // Ego-side interactions (interaction study); agents always use all of them.
    bool use_agent_interaction = true;
    bool use_map_interaction = true;
    bool use_bev_interaction = true;

    int steps_per_iteration() const { return t_fut / iterations; }
    int scale_count() const { return static_cast<int>(distances.size()); }
    void validate() const;
};

// --- parameters --------------------------------------------------------------

inline constexpr int kAgentFeatures = 10; // x, y, cos, sin, vx, vy, length, width, vehicle, pedestrian
inline constexpr int kEgoFeatures = 4;    // vx, vy, ax, ay
inline constexpr int kMapPoints = 6;
inline constexpr int kMapFeatures = 2 * kMapPoints + 2;

struct EncoderParams {
    Mlp agent, map, ego;
    Mat agent_modes; // K x C
    Mat ego_modes;   // 3 x C
    Mat bev_bias;    // 1 x C

    EncoderParams() = default;
    explicit EncoderParams(const PpadConfig& cfg);

    template <typename F>
    void visit(const std::string& p, F&& f)
    {
        agent.visit(p + ".agent", f);
        map.visit(p + ".map", f);
        ego.visit(p + ".ego", f);
        f(p + ".agent_modes", agent_modes);
        f(p + ".ego_modes", ego_modes);
        f(p + ".bev_bias", bev_bias);
    }
};

struct PredictionParams {
    std::vector<AttnParams> self_attn; // one per scale (one when tied)
    AttnParams ego_attn;
    std::vector<AttnParams> map_attn;
    DeformParams bev;
    Mlp motion;     // C -> steps*2
    Mlp confidence; // C -> 1

    PredictionParams() = default;
    explicit PredictionParams(const PpadConfig& cfg);

    template <typename F>
    void visit(const std::string& p, F&& f)
    {
        for (std::size_t s = 0; s < self_attn.size(); ++s) self_attn[s].visit(p + ".self" + std::to_string(s), f);
        ego_attn.visit(p + ".ego", f);
        for (std::size_t s = 0; s < map_attn.size(); ++s) map_attn[s].visit(p + ".map" + std::to_string(s), f);
        bev.visit(p + ".bev", f);
        motion.visit(p + ".motion", f);
        confidence.visit(p + ".confidence", f);
    }
};

struct PlanningParams {
    std::vector<AttnParams> agent_attn;
    std::vector<AttnParams> map_attn;
    DeformParams bev;
    Mlp motion; // 3C -> ego_modes*steps*2
    Mlp state;  // 3C -> C, residual ego update

    PlanningParams() = default;
    explicit PlanningParams(const PpadConfig& cfg);

    template <typename F>
    void visit(const std::string& p, F&& f)
    {
        for (std::size_t s = 0; s < agent_attn.size(); ++s) agent_attn[s].visit(p + ".agent" + std::to_string(s), f);
        for (std::size_t s = 0; s < map_attn.size(); ++s) map_attn[s].visit(p + ".map" + std::to_string(s), f);
        bev.visit(p + ".bev", f);
        motion.visit(p + ".motion", f);
        state.visit(p + ".state", f);
    }
};

/// Named registry of every trainable tensor.
struct Params {
    PpadConfig cfg;
    EncoderParams enc;
    PredictionParams pred;
    PlanningParams plan;

    Params() = default;
    explicit Params(const PpadConfig& cfg);

    template <typename F>
    void visit(F&& f)
    {
        enc.visit("enc", f);
        pred.visit("pred", f);
        plan.visit("plan", f);
    }
    template <typename F>
    void visit(F&& f) const
    {
        const_cast<Params*>(this)->visit([&](const std::string& n, Mat& m) { f(n, static_cast<const Mat&>(m)); });
    }
    std::size_t count() const;
    /// Encoder tensors are frozen in the plan_finetune phase.
    static bool is_encoder(const std::string& name) { return name.rfind("enc.", 0) == 0; }
};

/// Glorot-uniform projections, zero biases, zero deformable offsets, unit-scale
/// mode embeddings. With zero_heads the motion, confidence and state-update
/// output layers start at zero (stationary plans, uniform confidences).
/// Each tensor draws from its own stream keyed by its name.
void init_params(Params& params, std::uint64_t seed, bool zero_heads = true);

// --- tokens ------------------------------------------------------------------

/// Value form of the learned-query state at the current frame.
struct TokenSet {
    Mat E; // [N_E^mot x C]
    Mat A; // [N_A * N_A^mot x C], row a*K + k
    Mat M; // [N_M x C]
    attn::BevGrid B;
    Pose2 ego_pos;
    std::vector<Pose2> agent_pos; // per agent
    std::vector<Pose2> map_pos;   // per map token (first point)
    Mat confidences;              // [N_A x K]
    int agent_count() const { return static_cast<int>(agent_pos.size()); }
};

/// Differentiable form; positions are constants.
struct TokenVars {
    ad::Var E, A, M, B;
    kernels::GridMeta bev_meta;
    Pose2 ego_pos;
    std::vector<Pose2> agent_pos;
    std::vector<Pose2> map_pos;
    int agent_count() const { return static_cast<int>(agent_pos.size()); }
};

/// Raw per-token input features (before the encoder MLPs).
struct TokenInputs {
    Mat agent;  // [N_A x kAgentFeatures]
    Mat map;    // [N_M x kMapFeatures]
    Mat ego;    // [1 x kEgoFeatures]
    Mat bev;    // [H*W x C] raw channels then zeros
    kernels::GridMeta bev_meta;
    std::vector<Pose2> agent_pos;
    std::vector<Pose2> map_pos;
};

TokenInputs token_inputs(const scene::Scene& scene, const scene::SceneConfig& scfg, int channels);
TokenVars encode_tokens(ad::Tape& t, const TokenInputs& in, const Params& params);
TokenSet encode_tokens(const scene::Scene& scene, const scene::SceneConfig& scfg, const Params& params);

// --- interactions ------------------------------------------------------------

/// Key-objects mask for one query position against several keys.
geom::Mask distance_mask(const Pose2& q, std::span<const Pose2> keys, double s);

/// Per-scale terms of the hierarchical agent interaction for one ego row,
/// one [K x C] stack per entry of S. Mode k of the ego attends only to mode k
/// of each agent within distance S[s].
std::vector<ad::Var> agent_interaction_terms(ad::Var E, ad::Var A, const Pose2& ego_pos,
                                             std::span<const Pose2> agent_pos, int modes, const std::vector<double>& S,
                                             const std::vector<AttnParams>& attn);
/// Sum of agent_interaction_terms: the stack [K x C] of E^k.
ad::Var hierarchical_agent_interaction(ad::Var E, ad::Var A, const Pose2& ego_pos, std::span<const Pose2> agent_pos,
                                      int modes, const std::vector<double>& S, const std::vector<AttnParams>& attn);
/// Max + mean over rows.
ad::Var mode_aggregate(ad::Var stack);
Mat mode_aggregate(const Mat& stack);
/// Map interaction (also used with agent queries, one row per query position).
ad::Var map_interaction(ad::Var Q, ad::Var M, std::span<const Pose2> query_pos, std::span<const Pose2> map_pos,
                        const std::vector<double>& S, const std::vector<AttnParams>& attn);

/// Mutable loop state of a rollout.
struct LoopState {
    ad::Var E;              // [1 x C] commanded ego token
    ad::Var A;              // [N_A*K x C]
    ad::Var ego_xy;         // [1 x 2]
    ad::Var agent_xy;       // [N_A*K x 2]
    Pose2 ego_pos;          // value mirror of ego_xy
    std::vector<Pose2> agent_pos; // value mirror of agent_xy
    ad::Var confidences;    // [N_A x K]
};

struct PredictionOut {
    ad::Var offsets;     // [N_A*K x steps*2]
    ad::Var confidences; // [N_A x K]
    ad::Var tokens;      // next agent tokens
    ad::Var positions;   // [N_A*K x steps*2] absolute positions after each step
};

struct PlanOut {
    ad::Var offsets; // [steps x 2]
    ad::Var e1, e2, e3;
    ad::Var h;       // [1 x 3C]
    ad::Var next_E;
};

PredictionOut prediction_step(const LoopState& st, const TokenVars& tok, const Params& params);
/// Uses the agent positions already in st (advanced by the prediction step).
PlanOut plan_step(const LoopState& st, const TokenVars& tok, const Params& params, scene::DrivingCommand cmd);

struct RolloutVars {
    ad::Var plan_offsets;   // [t_fut x 2]
    ad::Var plan_positions; // [t_fut x 2], relative to the origin of the token frame
    ad::Var forecasts;      // [N_A*K x 2*t_fut]
    ad::Var confidences;    // [N_A x K], final
    struct Trace {
        Mat e1, e2, e3, agents;
        // inputs of the plan step
        Mat E;
        Pose2 ego_pos;
        std::vector<Pose2> agent_pos;
    };
    std::vector<Trace> trace;
};

/// Options for the denoising branch: ego start of every iteration after the
/// first is forced to the given positions (absolute, [t_fut x 2] rows at
/// steps 1..t_fut; rows at iteration starts are used).
struct ForcedStarts {
    const Mat* positions = nullptr;
};

RolloutVars rollout(const TokenVars& tok, const Params& params, scene::DrivingCommand cmd,
                    ForcedStarts forced = {});

struct RolloutResult {
    scene::Trajectory ego_plan; // t_fut waypoints
    Mat plan_offsets;
    Mat forecasts;   // [N_A*K x 2*t_fut]
    Mat confidences; // [N_A x K]
    std::vector<RolloutVars::Trace> trace;
    /// Per-agent per-mode trajectory.
    scene::Trajectory forecast(int agent, int mode, int modes, double dt) const;
};

RolloutResult rollout(const scene::Scene& scene, const scene::SceneConfig& scfg, const Params& params);

} // namespace ppad::model
