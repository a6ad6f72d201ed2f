#pragma once

// Shared helpers for the harness-level tests: a miniature experiment plan
// that runs in seconds, and small file utilities.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "wah/harness.hpp"

namespace wah::testsupport {

inline ExperimentPlan tiny_plan() {
    ExperimentPlan plan;
    plan.seed = 42;

    plan.data.width = 16;
    plan.data.height = 16;
    plan.data.frames = 9;
    plan.data.focal = 16.0;
    plan.data.train_seeds = {9001, 9002, 9003};
    plan.data.train_kinds = {"pan_left", "orbit"};
    plan.data.holdout_seeds = {9101, 9102};
    plan.data.holdout_kinds = {"pan_right"};
    plan.data.rot_magnitude_min = 8.0;
    plan.data.rot_magnitude_max = 14.0;

    plan.model.dim = 16;
    plan.model.heads = 2;
    plan.model.blocks = 2;
    plan.model.patch_h = 4;
    plan.model.patch_w = 4;
    plan.model.target_frames = 3;
    plan.model.max_history_frames = 3;
    plan.model.sample_steps = 2;
    plan.model.ff_mult = 2;
    plan.model.time_bins = 4;

    plan.pretrain.iters = 6;
    plan.pretrain.batch = 1;
    plan.pretrain.lr = 1e-3;
    plan.pretrain.seed = 5;
    plan.pretrain.max_history = 2;

    plan.finetune.iters = 4;
    plan.finetune.lr = 1e-3;
    plan.finetune.seed = 6;

    plan.regimes = {{PackMode::text_only, false}, {PackMode::full, false}};
    plan.oneshot_source = {"src_tiny", 9201, "orbit", 12.0, false};
    plan.sweep_sources = {{"src_static", 9301, "static", 0.0, true},
                          {"src_pan", 9302, "pan_left", 10.0, false}};
    plan.sweep_finetune_iters = 3;
    plan.profile_visible_fractions = {0.86, 0.47};
    plan.profile_runs = 2;
    return plan;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("slurp: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    std::filesystem::path dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace wah::testsupport
