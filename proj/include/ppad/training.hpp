#pragma once

#include "ppad/losses.hpp"
#include "ppad/model.hpp"
#include "ppad/scene.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ppad::train {

enum class Phase { joint, plan_finetune };
const char* to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainConfig {
    double learning_rate = 2e-4;
    int batch_size = 1; // scenes per optimizer step (gradient averaged)
    int epochs = 1;
    Phase phase = Phase::joint;
    std::uint64_t seed = 0;
    losses::LossWeights weights;
    model::PpadConfig ppad;
    bool ca_collision = true; // confidence-weighted collision over all modes
    bool noisy_traj = true;   // denoising branch
    void validate() const;
};

/// Everything a scene contributes to training, precomputed once.
struct Sample {
    std::string scene_id;
    scene::DrivingCommand command = scene::DrivingCommand::straight;
    model::TokenInputs inputs;
    losses::Targets targets;
    losses::CollisionGeometry geometry;
    std::vector<geom::Polyline> boundaries, centerlines;
    std::vector<geom::Region> drivable;
};
Sample make_sample(const scene::Scene& sc, const scene::SceneConfig& scfg, int channels);

/// Which scalar to differentiate.
enum class LossTerm { agent, plan, ca_col, bd, dir, plan_noisy, c_noisy, total };
const char* to_string(LossTerm t);

struct SceneLoss {
    ad::Var total;
    losses::LossBreakdown parts;
    std::vector<std::pair<LossTerm, ad::Var>> terms; // every individual differentiable term
    ad::Var term(LossTerm t) const;
};

/// Summands of one loss-kernel call and the coefficient they carry in each term.
struct SummandRecord {
    std::map<LossTerm, double> coeff;
    losses::Summands parts;
};

/// Clean rollout plus (when enabled) the rollout from the perturbed ground
/// truth; the noisy branch's first offset of every iteration is supervised to
/// return to the clean trajectory. `probe` collects every kernel's summands.
SceneLoss scene_loss(ad::Tape& t, const model::Params& params, const Sample& s, const TrainConfig& cfg,
                     std::uint64_t noise_seed, std::vector<SummandRecord>* probe = nullptr);

/// Weights actually used for a phase (plan_finetune drops the forecast term).
losses::LossWeights phase_weights(const TrainConfig& cfg);

struct AdamState {
    std::map<std::string, Mat> m, v;
    long step = 0;
};

/// One bias-corrected Adam update. grads are keyed by registry name; tensors
/// without an entry (or rejected by `trainable`) are left untouched.
void adam_step(model::Params& params, const std::map<std::string, Mat>& grads, AdamState& state, double lr,
               const std::function<bool(const std::string&)>& trainable = {}, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct LogRow {
    long step = 0;
    int epoch = 0;
    losses::LossBreakdown parts;
};
inline constexpr const char* kLogHeader = "step,epoch,L_agent,L_plan,L_CA_col,L_bd,L_dir,L_plan_noisy,L_C_noisy,total";
std::string format_log_row(const LogRow& r);

struct TrainResult {
    model::Params params;
    std::vector<LogRow> log;
};

/// Called after every step; returning false stops training early.
using StepCallback = std::function<bool(const LogRow&)>;

/// Starts from `init` (already initialized). Deterministic given the inputs.
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data, model::Params init,
                  const StepCallback& on_step = {});

// --- finite differences ------------------------------------------------------

inline constexpr double kFdDenominatorFloor = 1e-8;

/// |a - n| / max(|a|, |n|, 1e-8).
double fd_relative_error(double analytic, double numeric);

struct FdSample {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0, numeric = 0, rel_error = 0;
};
struct FdReport {
    std::vector<FdSample> coords;
    double max_rel_error() const;
};

struct NamedTensor {
    std::string name;
    Mat* value;
};

/// Generic core: `value` returns the function at the current parameter values
/// as summands (their sum is the function). Two evaluations are differenced
/// summand by summand, which keeps the rounding of a large total out of the
/// quotient. `coords` distinct coordinates are drawn with the given seed.
FdReport central_difference_report(std::span<const NamedTensor> params, const std::function<losses::Summands()>& value,
                                   const std::vector<Mat>& analytic, double step, int coords, std::uint64_t seed);

/// Central differences on `coords` randomly chosen parameter coordinates
/// (drawn from the tensors accepted by `filter`, all when empty) against the
/// tape gradient of the selected term summed over the samples.
FdReport finite_difference_report(model::Params& params, const std::vector<Sample>& samples, const TrainConfig& cfg,
                                  LossTerm term, double step = 1e-5, int coords = 64, std::uint64_t seed = 0,
                                  const std::function<bool(const std::string&)>& filter = {});
/// The report's maximum relative error.
double finite_difference_check(model::Params& params, const std::vector<Sample>& samples, const TrainConfig& cfg,
                               LossTerm term, double step = 1e-5, int coords = 64, std::uint64_t seed = 0,
                               const std::function<bool(const std::string&)>& filter = {});

// --- checkpoints -----------------------------------------------------------------

/// Little-endian container: magic, version, config text, then every registry
/// tensor as (name, rows, cols, raw doubles).
void save_checkpoint(std::ostream& os, const model::Params& params, const std::string& config_text);
void save_checkpoint(const std::string& path, const model::Params& params, const std::string& config_text);
/// Reads only the embedded config text.
std::string checkpoint_config(const std::string& path);
/// Fills `params` (whose shapes must match) and returns the embedded config text.
std::string load_checkpoint(std::istream& is, model::Params& params);
std::string load_checkpoint(const std::string& path, model::Params& params);

} // namespace ppad::train
