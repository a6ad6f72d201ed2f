#pragma once

#include <filesystem>
#include <optional>

#include "wah/metrics.hpp"
#include "wah/model.hpp"
#include "wah/warp.hpp"

namespace wah {

struct SourceSpec {
    std::string id;
    uint64_t scene_seed = 0;
    std::string kind = "orbit";  // motion kind, or "static" for a zero-rotation source
    double magnitude = 15.0;
    bool sprite = true;
};

struct DatasetSpec {
    int width = 64, height = 64, frames = 33;
    double focal = 64.0;
    std::vector<uint64_t> train_seeds;
    std::vector<std::string> train_kinds;
    std::vector<uint64_t> holdout_seeds;
    std::vector<std::string> holdout_kinds;
    double rot_magnitude_min = 8.0, rot_magnitude_max = 22.0;     // degrees
    double trans_magnitude_min = 0.35, trans_magnitude_max = 0.9;  // world units
    bool holdout_sprites = false;
};

struct RegimeSpec {
    PackMode mode = PackMode::full;
    bool one_shot = false;

    std::string name() const { return std::string(one_shot ? "one_shot_" : "zero_shot_") + to_string(mode); }
};

struct ExperimentPlan {
    int schema_version = 1;
    uint64_t seed = 1;
    DatasetSpec data;
    ModelConfig model;
    TrainConfig pretrain;
    FinetuneConfig finetune;
    double tau = 0.5;
    std::vector<RegimeSpec> regimes;
    SourceSpec oneshot_source;
    std::vector<SourceSpec> sweep_sources;
    int sweep_finetune_iters = 300;
    std::vector<double> profile_visible_fractions = {0.86, 0.47};
    int profile_runs = 5;

    // Split hygiene: train scenes, the one-shot sources, and held-out scenes
    // must be pairwise disjoint; held-out trajectory kinds unseen in training.
    void validate() const;
};

ExperimentPlan default_plan();
ExperimentPlan plan_from_json_text(const std::string& text);
std::string plan_to_json_text(const ExperimentPlan& plan);
ExperimentPlan read_plan_file(const std::filesystem::path& path);

struct HarnessClip {
    std::string id;
    Scene scene;
    ClipRecord clip;
};

Intrinsics plan_intrinsics(const ExperimentPlan& plan);
std::vector<HarnessClip> build_train_clips(const ExperimentPlan& plan);
std::vector<HarnessClip> build_holdout_clips(const ExperimentPlan& plan);
HarnessClip build_source_clip(const ExperimentPlan& plan, const SourceSpec& spec);

struct PretrainResult {
    std::filesystem::path checkpoint;
    TrainStats stats;
};

// Pretrains on clean-history continuation only and asserts that no warp
// tokens entered any training sample.
PretrainResult run_pretrain(const ExperimentPlan& plan, const std::filesystem::path& out_dir);

struct CellResult {
    std::string clip_id;
    std::string regime;
    bool failed = false;
    std::string error;
    MetricsReport metrics;
};

struct AblationResult {
    std::vector<CellResult> cells;

    std::vector<double> collect(const std::string& regime,
                                const std::function<double(const MetricsReport&)>& fn) const;
    double median_metric(const std::string& regime,
                         const std::function<double(const MetricsReport&)>& fn) const;
    // fraction of clips where `a` beats `b` (strictly lower value of fn)
    double win_rate_lower(const std::string& regime_a, const std::string& regime_b,
                          const std::function<double(const MetricsReport&)>& fn) const;
};

// One cell per (regime, held-out clip): build warp, pack, sample one chunk,
// estimate the trajectory photometrically, score. Cell seeds derive from
// (plan seed, regime, clip id); outputs are identical at any jobs level.
AblationResult run_ablation(const ExperimentPlan& plan, const ToyModel& model,
                            const LoraAdapter* adapter, const std::filesystem::path& out_dir,
                            int jobs, bool write_artifacts = true);

struct SweepRow {
    SourceSpec source;
    SourceDiagnostics diagnostics;
    double median_r_err = 0;
    double median_t_err = 0;
    double median_vis_psnr = 0;
    int failed_cells = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

// One adapter per source under an identical recipe; downstream metrics are
// joined with the source diagnostics columns.
SweepResult run_oneshot_sweep(const ExperimentPlan& plan, const ToyModel& model,
                              const std::filesystem::path& out_dir, int jobs);

// Baseline (no warp) plus one warp-conditioned run per visible fraction;
// profile_runs repetitions each, in emission order.
std::vector<RuntimeProfile> run_profile(const ExperimentPlan& plan, const ToyModel& model,
                                        const std::filesystem::path& out_dir);

double median(std::vector<double> values);

// Evaluates a generated chunk against a held-out clip (shared by ablation,
// sweep and the CLI `eval` subcommand).
MetricsReport evaluate_chunk(const HarnessClip& hc, std::span<const Image> generated,
                             std::span<const Mask> valid_masks);

}  // namespace wah
