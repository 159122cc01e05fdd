#pragma once

#include "ppad/metrics.hpp"
#include "ppad/model.hpp"
#include "ppad/scene.hpp"
#include "ppad/training.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ppad::harness {

/// Component switches; the defaults are the full model.
struct Toggles {
    bool ppad_iterative = true;        // false: one-shot plan (N = 1)
    bool key_objects_attention = true; // false: S = {inf}
    bool ca_collision = true;
    bool noisy_traj = true;
    bool ea = true, map = true, bev = true; // ego interactions
};

enum class Schedule { single, two_phase };
const char* to_string(Schedule s);

struct ExperimentConfig {
    std::string data_dir = "data";
    std::string eval_dir;    // ablation evaluation split; empty means data_dir
    std::string run_dir = "run";
    scene::SceneConfig scene;
    model::PpadConfig ppad;  // before toggles
    train::TrainConfig train; // ppad/weights/flags come from effective_train()
    losses::LossWeights weights;
    Toggles toggles;
    Schedule schedule = Schedule::single;
    int finetune_epochs = 0;   // second stage of the two-phase schedule
    bool zero_heads = true;    // init: stationary first rollout
    double collision_resolution = 0.5;
    double miss_threshold = metrics::kMissThreshold;
    // generation
    int gen_count = 100;
    std::uint64_t gen_seed = 1;
    std::vector<std::pair<scene::Scenario, double>> gen_mix{
        {scene::Scenario::lane_change_merge, 0.5}, {scene::Scenario::car_follow, 0.3},
        {scene::Scenario::protected_turn, 0.2}};
    // plotting / benchmarking
    int plot_scenes = 4;
    int bench_repeats = 20;
    int ablate_seeds = 3;

    void validate() const;
};

/// Model config after applying the toggles.
model::PpadConfig effective_ppad(const ExperimentConfig& c);
/// Training config after applying the toggles and weights.
train::TrainConfig effective_train(const ExperimentConfig& c);

// --- text format ---------------------------------------------------------------
//
// One `key = value` per line, `#` starts a comment, blank lines ignored.
// Later layers override earlier ones. Unknown keys are config errors.

/// Applies one assignment. Throws std::invalid_argument on an unknown key or a bad value.
void set_value(ExperimentConfig& c, const std::string& key, const std::string& value);
/// Applies every assignment in `text` (one layer).
void apply_text(ExperimentConfig& c, const std::string& text, const std::string& origin = "<text>");
void apply_file(ExperimentConfig& c, const std::string& path);
/// `key=value` from the command line.
void apply_override(ExperimentConfig& c, const std::string& assignment);

/// Every key with its canonical value, in schema order.
std::vector<std::pair<std::string, std::string>> entries(const ExperimentConfig& c);
/// Canonical text: all keys in schema order. Parsing it back gives the same text.
std::string to_text(const ExperimentConfig& c);
/// Canonical text without the path keys (embedded in checkpoints).
std::string model_text(const ExperimentConfig& c);
ExperimentConfig from_text(const std::string& text);
/// Keys whose values differ.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

/// FNV-1a of the scene.* keys; ties datasets to checkpoints.
std::uint64_t scene_config_hash(const scene::SceneConfig& s);
std::string hex64(std::uint64_t v);

// --- datasets ------------------------------------------------------------------

struct ManifestRow {
    int index = 0;
    std::string scene_id;
    scene::Scenario scenario = scene::Scenario::car_follow;
    std::uint64_t seed = 0;
    std::uint64_t checksum = 0;
};

struct Dataset {
    std::string dir;
    scene::SceneConfig scene_cfg;
    std::uint64_t scene_hash = 0;
    std::vector<ManifestRow> manifest;
    std::vector<scene::Scene> scenes;
    /// FNV-1a over the manifest checksums.
    std::uint64_t checksum() const;
};

/// Largest-remainder split of `count` scenes by the mix ratios.
std::vector<int> mix_counts(const std::vector<std::pair<scene::Scenario, double>>& mix, int count);
/// Scenario and seed of every scene, deterministic per (mix, count, seed).
std::vector<ManifestRow> plan_dataset(const ExperimentConfig& c);
/// Generates in memory (no files).
Dataset generate_dataset(const ExperimentConfig& c);

/// Writes scenes/<id>.scene, manifest.csv and dataset.cfg under dir.
void write_dataset(const Dataset& d, const scene::SceneConfig& scfg, const std::string& dir);
/// Throws DataError on a missing or inconsistent dataset (checksums re-verified).
Dataset load_dataset(const std::string& dir);

// --- evaluation ----------------------------------------------------------------

metrics::SceneMetrics evaluate_plan(const scene::Scene& sc, const scene::SceneConfig& scfg,
                                    const scene::Trajectory& plan, const Mat* forecasts, const Mat* confidences,
                                    double resolution, double miss_threshold);
metrics::SceneMetrics evaluate_scene(const scene::Scene& sc, const scene::SceneConfig& scfg,
                                     const model::Params& params, double resolution, double miss_threshold);
/// Scenes evaluated in parallel, results in input order.
std::vector<metrics::SceneMetrics> evaluate(const std::vector<scene::Scene>& scenes, const scene::SceneConfig& scfg,
                                            const model::Params& params, double resolution, double miss_threshold);

/// Ego keeps its current velocity (finite difference of the last two observed poses).
scene::Trajectory constant_velocity_plan(const scene::Scene& sc, const scene::SceneConfig& scfg);

// --- commands ------------------------------------------------------------------

/// Generates c.gen_count scenes into c.data_dir. Idempotent.
Dataset cmd_gen(const ExperimentConfig& c);

struct TrainOutput {
    std::string run_dir;
    model::Params params;
    std::vector<train::LogRow> log;
    metrics::MetricsReport train_report; // evaluation on the training set
};
/// Trains on c.data_dir and writes run_dir/{config.resolved, checkpoint.bin,
/// train_log.csv, train_eval.json}.
TrainOutput cmd_train(const ExperimentConfig& c);
/// Loads a checkpoint and its config.
std::pair<ExperimentConfig, model::Params> load_run(const std::string& checkpoint);

struct EvalOutput {
    metrics::MetricsReport report;
    std::vector<metrics::SceneMetrics> scenes;
};
/// Writes <out_dir>/report.json and <out_dir>/per_scene.csv. Throws DataError
/// when the dataset's scene-config hash differs from the checkpoint's.
EvalOutput cmd_eval(const std::string& checkpoint, const std::string& dataset_dir, const std::string& out_dir);

enum class AblationTable { design, interaction, iterations };
const char* to_string(AblationTable t);
AblationTable parse_table(const std::string& s);

struct AblationArm {
    std::string name;
    ExperimentConfig config;
};
/// Arms of a table, each differing from the base only in documented keys.
std::vector<AblationArm> ablation_arms(const ExperimentConfig& base, AblationTable t);
/// Keys an arm of the table may change.
std::vector<std::string> ablation_keys(AblationTable t);

struct AblationRow {
    std::string arm;
    metrics::Horizon l2{}, collision{}; // ST-P3 convention, median over seeds
    std::vector<double> l2_avg_per_seed;
    std::uint64_t train_checksum = 0, eval_checksum = 0;
};
struct AblationResult {
    AblationTable table = AblationTable::iterations;
    std::vector<AblationRow> rows;
};
/// Trains and evaluates every arm for c.ablate_seeds seeds (c.train.seed + i),
/// writes run_dir/ablation_<table>.{csv,md}.
AblationResult cmd_ablate(const ExperimentConfig& c, AblationTable t);
std::string ablation_markdown(const AblationResult& r);

struct BenchRow {
    int iterations = 0;
    double median_ms = 0, p95_ms = 0, stddev_ms = 0;
};
struct BenchResult {
    std::vector<BenchRow> rows;
    double slope_ms = 0, intercept_ms = 0, r2 = 0;
    bool ordering_holds = false; // median(N=6) >= median(N=2)
};
/// Rollout latency for N in {2, 3, 6}; dataset scenes are cycled.
BenchResult cmd_bench(const std::string& checkpoint, const std::string& dataset_dir, int repeats);
/// Least squares y = a + b x; returns {b, a, R^2}.
std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Writes loss curve, trajectory overlays and (if present) ablation bar charts
/// into run_dir/plots; returns the file names written.
std::vector<std::string> cmd_plot(const std::string& run_dir);

/// Reads a training log written by cmd_train.
std::vector<std::vector<std::string>> read_csv(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

} // namespace ppad::harness
