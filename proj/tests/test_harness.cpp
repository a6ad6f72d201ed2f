#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "wah/rng.hpp"

using namespace wah;
using namespace wah::testsupport;
namespace fs = std::filesystem;

TEST_CASE("median helper") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("plan json round-trips and validates") {
    ExperimentPlan plan = tiny_plan();
    std::string text = plan_to_json_text(plan);
    ExperimentPlan back = plan_from_json_text(text);
    CHECK(back.seed == plan.seed);
    CHECK(back.data.train_seeds == plan.data.train_seeds);
    CHECK(back.model.dim == plan.model.dim);
    CHECK(back.pretrain.iters == plan.pretrain.iters);
    CHECK(back.finetune.mode == plan.finetune.mode);
    CHECK(back.regimes.size() == plan.regimes.size());
    CHECK(back.sweep_sources.size() == plan.sweep_sources.size());
    CHECK(plan_to_json_text(back) == text);

    CHECK_THROWS(plan_from_json_text("{\"seed\": 1}"));
}

TEST_CASE("split hygiene is asserted") {
    ExperimentPlan plan = tiny_plan();
    plan.validate();

    ExperimentPlan overlap_seed = plan;
    overlap_seed.data.holdout_seeds.push_back(plan.data.train_seeds[0]);
    CHECK_THROWS_AS(overlap_seed.validate(), std::invalid_argument);

    ExperimentPlan overlap_kind = plan;
    overlap_kind.data.holdout_kinds.push_back(plan.data.train_kinds[0]);
    CHECK_THROWS_AS(overlap_kind.validate(), std::invalid_argument);

    ExperimentPlan source_in_holdout = plan;
    source_in_holdout.oneshot_source.scene_seed = plan.data.holdout_seeds[0];
    CHECK_THROWS_AS(source_in_holdout.validate(), std::invalid_argument);

    ExperimentPlan sweep_in_train = plan;
    sweep_in_train.sweep_sources[0].scene_seed = plan.data.train_seeds[1];
    CHECK_THROWS_AS(sweep_in_train.validate(), std::invalid_argument);
}

TEST_CASE("default plan satisfies the experiment constraints") {
    ExperimentPlan plan = default_plan();
    plan.validate();
    CHECK(plan.data.holdout_seeds.size() >= 20);
    CHECK(plan.data.frames == 33);
    CHECK(plan.model.dim == 128);
    CHECK(plan.finetune.iters == 1000);
    CHECK(plan.sweep_sources.size() >= 4);
    bool has_static = false;
    for (const SourceSpec& s : plan.sweep_sources) has_static |= s.kind == "static";
    CHECK(has_static);
    bool zero_full = false, zero_text = false, zero_noalign = false, one_full = false;
    for (const RegimeSpec& r : plan.regimes) {
        zero_full |= !r.one_shot && r.mode == PackMode::full;
        zero_text |= !r.one_shot && r.mode == PackMode::text_only;
        zero_noalign |= !r.one_shot && r.mode == PackMode::noalign;
        one_full |= r.one_shot && r.mode == PackMode::full;
    }
    CHECK(zero_full);
    CHECK(zero_text);
    CHECK(zero_noalign);
    CHECK(one_full);
}

TEST_CASE("clip construction: ids, holdout sprites off, static sources") {
    ExperimentPlan plan = tiny_plan();
    std::vector<HarnessClip> train = build_train_clips(plan);
    CHECK(train.size() == 3);
    CHECK(train[0].id == "c9001_pan_left");
    CHECK(train[1].id == "c9002_orbit");

    std::vector<HarnessClip> holdout = build_holdout_clips(plan);
    CHECK(holdout.size() == 2);
    for (const HarnessClip& hc : holdout) {
        CHECK(!hc.scene.sprite.enabled);
        for (const Mask& m : hc.clip.fg_masks) CHECK(m.count_set() == 0);
    }

    HarnessClip stat = build_source_clip(plan, plan.sweep_sources[0]);
    CHECK(stat.scene.sprite.enabled);
    TrajectoryDiagnostics d = trajectory_diagnostics(stat.clip.trajectory);
    CHECK(d.rot_max_deg == 0.0);
    CHECK(d.path_length == 0.0);
}

TEST_CASE("run_pretrain: checkpoint, loss curve, role audit, byte determinism") {
    ExperimentPlan plan = tiny_plan();
    fs::path out1 = fresh_dir("wah_h_pre1");
    PretrainResult r1 = run_pretrain(plan, out1);
    CHECK(fs::exists(r1.checkpoint));
    CHECK(fs::exists(out1 / "loss_curve.csv"));
    CHECK(fs::exists(out1 / "plan.json"));
    CHECK(r1.stats.loss_curve.size() == 6);
    CHECK(r1.stats.role_totals.warp == 0);

    fs::path out2 = fresh_dir("wah_h_pre2");
    PretrainResult r2 = run_pretrain(plan, out2);
    CHECK(slurp(r1.checkpoint) == slurp(r2.checkpoint));  // identical checkpoint bytes
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("run_ablation: cells, artifacts, jobs-independent bytes, eval audit") {
    ExperimentPlan plan = tiny_plan();
    fs::path pre_dir = fresh_dir("wah_h_abl_pre");
    PretrainResult pre = run_pretrain(plan, pre_dir);
    ToyModel model = load_model(pre.checkpoint);

    fs::path out1 = fresh_dir("wah_h_abl1");
    AblationResult r1 = run_ablation(plan, model, nullptr, out1, 1, true);
    CHECK(r1.cells.size() == plan.regimes.size() * plan.data.holdout_seeds.size());
    for (const CellResult& c : r1.cells) CHECK(!c.failed);
    CHECK(fs::exists(out1 / "ablation_cells.csv"));
    CHECK(fs::exists(out1 / "ablation_summary.csv"));
    CHECK(fs::exists(out1 / "cells" / "zero_shot_full" / "c9101_pan_right" / "gen_000.ppm"));
    CHECK(fs::exists(out1 / "cells" / "zero_shot_full" / "c9101_pan_right" / "warp" / "warp_manifest.json"));
    CHECK(fs::exists(out1 / "cells" / "zero_shot_full" / "c9101_pan_right" / "pack" / "pack_manifest.json"));
    // text_only cells carry no warp artifacts
    CHECK(!fs::exists(out1 / "cells" / "zero_shot_text_only" / "c9101_pan_right" / "warp"));

    fs::path out2 = fresh_dir("wah_h_abl2");
    AblationResult r2 = run_ablation(plan, model, nullptr, out2, 2, true);
    CHECK(slurp(out1 / "ablation_cells.csv") == slurp(out2 / "ablation_cells.csv"));
    CHECK(slurp(out1 / "cells" / "zero_shot_full" / "c9101_pan_right" / "gen_000.ppm") ==
          slurp(out2 / "cells" / "zero_shot_full" / "c9101_pan_right" / "gen_000.ppm"));

    // regenerable bit-identically from (plan, seeds, checkpoint)
    fs::path out3 = fresh_dir("wah_h_abl3");
    run_ablation(plan, model, nullptr, out3, 1, false);
    CHECK(slurp(out1 / "ablation_cells.csv") == slurp(out3 / "ablation_cells.csv"));

    // one-shot regimes require an adapter
    ExperimentPlan one = plan;
    one.regimes = {{PackMode::full, true}};
    CHECK_THROWS_AS(run_ablation(one, model, nullptr, fresh_dir("wah_h_abl4"), 1, false),
                    std::invalid_argument);

    fs::remove_all(pre_dir);
    fs::remove_all(out1);
    fs::remove_all(out2);
    fs::remove_all(out3);
}

TEST_CASE("run_profile: stage rows, baseline zero warp, token ordering, count determinism") {
    ExperimentPlan plan = tiny_plan();
    fs::path pre_dir = fresh_dir("wah_h_prof_pre");
    PretrainResult pre = run_pretrain(plan, pre_dir);
    ToyModel model = load_model(pre.checkpoint);

    fs::path out = fresh_dir("wah_h_prof");
    std::vector<RuntimeProfile> rows = run_profile(plan, model, out);
    // profile_runs baseline rows + profile_runs per fraction
    CHECK(rows.size() == static_cast<size_t>(plan.profile_runs) * (1 + plan.profile_visible_fractions.size()));
    CHECK(fs::exists(out / "profile.csv"));

    const RuntimeProfile* baseline = nullptr;
    const RuntimeProfile *v86 = nullptr, *v47 = nullptr;
    for (const RuntimeProfile& p : rows) {
        if (p.regime == "baseline") baseline = &p;
        if (p.regime == "visible_86") v86 = &p;
        if (p.regime == "visible_47") v47 = &p;
    }
    REQUIRE(baseline);
    REQUIRE(v86);
    REQUIRE(v47);
    CHECK(baseline->tokens_warp == 0);
    CHECK(baseline->stage_seconds("warp_construction") == 0.0);
    CHECK(v47->tokens_warp < v86->tokens_warp);
    CHECK(v47->total_tokens() < v86->total_tokens());
    for (const RuntimeProfile& p : rows) {
        CHECK(p.stages.size() == 4);
        // end-to-end covers the measured sub-stages (5% slack)
        double sum = p.stage_seconds("warp_construction") + p.stage_seconds("packing") +
                     p.stage_seconds("transformer_sampling");
        CHECK(p.stage_seconds("end_to_end") >= sum * 0.95 - 1e-6);
    }

    // token counts are pure functions of (config, mask): identical across runs
    int c86 = -1, c47 = -1;
    for (const RuntimeProfile& p : rows) {
        if (p.regime == "visible_86") {
            if (c86 < 0) c86 = p.total_tokens();
            CHECK(p.total_tokens() == c86);
        }
        if (p.regime == "visible_47") {
            if (c47 < 0) c47 = p.total_tokens();
            CHECK(p.total_tokens() == c47);
        }
    }
    fs::remove_all(pre_dir);
    fs::remove_all(out);
}

TEST_CASE("run_oneshot_sweep: schema, diagnostics join, distinct adapters") {
    ExperimentPlan plan = tiny_plan();
    fs::path pre_dir = fresh_dir("wah_h_swp_pre");
    PretrainResult pre = run_pretrain(plan, pre_dir);
    ToyModel model = load_model(pre.checkpoint);

    fs::path out = fresh_dir("wah_h_swp");
    SweepResult r = run_oneshot_sweep(plan, model, out, 2);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].source.id == "src_static");
    CHECK(r.rows[0].diagnostics.rot_mean_deg == 0.0);
    CHECK(r.rows[1].diagnostics.rot_mean_deg > 0.0);

    std::string csv = slurp(out / "sweep.csv");
    CHECK(csv.find("inv_mean") != std::string::npos);
    CHECK(csv.find("rot_mean_deg") != std::string::npos);
    CHECK(csv.find("fg_motion") != std::string::npos);
    CHECK(csv.find("median_r_err_deg") != std::string::npos);

    // adapters persisted and byte-different across sources
    std::string a = slurp(out / "src_static.wahl");
    std::string b = slurp(out / "src_pan.wahl");
    CHECK(a != b);
    fs::remove_all(pre_dir);
    fs::remove_all(out);
}
