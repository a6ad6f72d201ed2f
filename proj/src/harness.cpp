#include "wah/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "wah/rng.hpp"

namespace wah {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

bool is_rotational(const std::string& kind) {
    return kind == "pan_left" || kind == "pan_right" || kind == "tilt_up" || kind == "tilt_down" ||
           kind == "orbit";
}

Trajectory static_trajectory(int frames, const Intrinsics& k) {
    Trajectory t;
    t.intrinsics = k;
    t.poses.assign(frames, Pose::identity());
    return t;
}

Trajectory clip_trajectory(const ExperimentPlan& plan, uint64_t scene_seed, const std::string& kind,
                           std::optional<double> magnitude = std::nullopt) {
    Intrinsics k = plan_intrinsics(plan);
    if (kind == "static") return static_trajectory(plan.data.frames, k);
    MotionKind mk = motion_kind_from_string(kind);
    double mag;
    if (magnitude) {
        mag = *magnitude;
    } else {
        Rng rng(derive_seed(plan.seed, "clip_magnitude", scene_seed));
        mag = is_rotational(kind)
                  ? rng.next_range(plan.data.rot_magnitude_min, plan.data.rot_magnitude_max)
                  : rng.next_range(plan.data.trans_magnitude_min, plan.data.trans_magnitude_max);
    }
    return make_primitive_trajectory(mk, plan.data.frames, mag, k);
}

std::string clip_id(uint64_t seed, const std::string& kind) {
    return "c" + std::to_string(seed) + "_" + kind;
}

std::vector<double> drop_nan(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
    return v;
}

}  // namespace

double median(std::vector<double> values) {
    values = drop_nan(std::move(values));
    if (values.empty()) throw std::invalid_argument("median: no values");
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// Plan
// ---------------------------------------------------------------------------

void ExperimentPlan::validate() const {
    model.validate();
    if (data.frames < model.target_frames + 2)
        throw std::invalid_argument("plan: clips must be at least target_frames + 2 long");
    if (data.train_seeds.empty() || data.holdout_seeds.empty())
        throw std::invalid_argument("plan: train and holdout seed lists must be nonempty");

    std::set<uint64_t> train(data.train_seeds.begin(), data.train_seeds.end());
    std::set<uint64_t> holdout(data.holdout_seeds.begin(), data.holdout_seeds.end());
    for (uint64_t s : holdout)
        if (train.count(s)) throw std::invalid_argument("plan: train/holdout scene seeds overlap");

    std::set<uint64_t> sources;
    sources.insert(oneshot_source.scene_seed);
    for (const SourceSpec& s : sweep_sources) sources.insert(s.scene_seed);
    for (uint64_t s : sources) {
        if (train.count(s)) throw std::invalid_argument("plan: one-shot source scene seed appears in training");
        if (holdout.count(s)) throw std::invalid_argument("plan: one-shot source scene seed appears in holdout");
    }

    std::set<std::string> train_kinds(data.train_kinds.begin(), data.train_kinds.end());
    for (const std::string& k : data.holdout_kinds)
        if (train_kinds.count(k))
            throw std::invalid_argument("plan: holdout trajectory kind '" + k + "' was seen in training");
}

ExperimentPlan default_plan() {
    ExperimentPlan plan;
    plan.seed = 1;

    plan.data.width = 64;
    plan.data.height = 64;
    plan.data.frames = 33;
    plan.data.focal = 64.0;
    for (uint64_t s = 101; s <= 140; ++s) plan.data.train_seeds.push_back(s);
    plan.data.train_kinds = {"pan_left", "tilt_down", "dolly_out", "truck_right", "orbit"};
    for (uint64_t s = 201; s <= 220; ++s) plan.data.holdout_seeds.push_back(s);
    plan.data.holdout_kinds = {"pan_right", "tilt_up", "dolly_in", "truck_left"};

    plan.pretrain.iters = 2200;
    plan.pretrain.batch = 1;
    plan.pretrain.lr = 2e-3;
    plan.pretrain.seed = derive_seed(plan.seed, "pretrain");
    plan.pretrain.corruption = HistoryCorruption::Policy::drop_frames;
    plan.pretrain.corruption_rate = 0.25;

    plan.finetune.iters = 1000;
    plan.finetune.lr = 1e-3;
    plan.finetune.seed = derive_seed(plan.seed, "finetune");
    plan.finetune.mode = PackMode::full;
    plan.finetune.tau = 0.5;

    plan.regimes = {{PackMode::text_only, false},
                    {PackMode::noalign, false},
                    {PackMode::novisdrop, false},
                    {PackMode::full, false},
                    {PackMode::full, true}};

    plan.oneshot_source = {"src_orbit", 301, "orbit", 18.0, true};
    plan.sweep_sources = {{"src_static", 311, "static", 0.0, true},
                          {"src_pan", 312, "pan_left", 15.0, true},
                          {"src_orbit2", 313, "orbit", 18.0, true},
                          {"src_truck", 314, "truck_right", 0.7, false}};
    plan.sweep_finetune_iters = 300;
    return plan;
}

namespace {

nlohmann::json dataset_to_json(const DatasetSpec& d) {
    nlohmann::json j;
    j["width"] = d.width;
    j["height"] = d.height;
    j["frames"] = d.frames;
    j["focal"] = d.focal;
    j["train_seeds"] = d.train_seeds;
    j["train_kinds"] = d.train_kinds;
    j["holdout_seeds"] = d.holdout_seeds;
    j["holdout_kinds"] = d.holdout_kinds;
    j["rot_magnitude_min"] = d.rot_magnitude_min;
    j["rot_magnitude_max"] = d.rot_magnitude_max;
    j["trans_magnitude_min"] = d.trans_magnitude_min;
    j["trans_magnitude_max"] = d.trans_magnitude_max;
    j["holdout_sprites"] = d.holdout_sprites;
    return j;
}

DatasetSpec dataset_from_json(const nlohmann::json& j) {
    DatasetSpec d;
    d.width = j.at("width").get<int>();
    d.height = j.at("height").get<int>();
    d.frames = j.at("frames").get<int>();
    d.focal = j.at("focal").get<double>();
    d.train_seeds = j.at("train_seeds").get<std::vector<uint64_t>>();
    d.train_kinds = j.at("train_kinds").get<std::vector<std::string>>();
    d.holdout_seeds = j.at("holdout_seeds").get<std::vector<uint64_t>>();
    d.holdout_kinds = j.at("holdout_kinds").get<std::vector<std::string>>();
    d.rot_magnitude_min = j.at("rot_magnitude_min").get<double>();
    d.rot_magnitude_max = j.at("rot_magnitude_max").get<double>();
    d.trans_magnitude_min = j.at("trans_magnitude_min").get<double>();
    d.trans_magnitude_max = j.at("trans_magnitude_max").get<double>();
    d.holdout_sprites = j.at("holdout_sprites").get<bool>();
    return d;
}

nlohmann::json source_to_json(const SourceSpec& s) {
    return {{"id", s.id}, {"scene_seed", s.scene_seed}, {"kind", s.kind},
            {"magnitude", s.magnitude}, {"sprite", s.sprite}};
}

SourceSpec source_from_json(const nlohmann::json& j) {
    return {j.at("id").get<std::string>(), j.at("scene_seed").get<uint64_t>(),
            j.at("kind").get<std::string>(), j.at("magnitude").get<double>(),
            j.at("sprite").get<bool>()};
}

const char* policy_name(HistoryCorruption::Policy p) {
    switch (p) {
        case HistoryCorruption::Policy::none: return "none";
        case HistoryCorruption::Policy::drop_frames: return "drop_frames";
        case HistoryCorruption::Policy::mask_patches: return "mask_patches";
    }
    return "none";
}

}  // namespace

std::string plan_to_json_text(const ExperimentPlan& plan) {
    nlohmann::json j;
    j["schema_version"] = plan.schema_version;
    j["seed"] = plan.seed;
    j["data"] = dataset_to_json(plan.data);
    j["model"] = nlohmann::json::parse(model_config_to_json_text(plan.model));
    j["pretrain"] = {{"iters", plan.pretrain.iters},
                     {"batch", plan.pretrain.batch},
                     {"lr", plan.pretrain.lr},
                     {"seed", plan.pretrain.seed},
                     {"corruption", policy_name(plan.pretrain.corruption)},
                     {"corruption_rate", plan.pretrain.corruption_rate},
                     {"min_history", plan.pretrain.min_history},
                     {"max_history", plan.pretrain.max_history}};
    j["finetune"] = {{"iters", plan.finetune.iters},
                     {"lr", plan.finetune.lr},
                     {"seed", plan.finetune.seed},
                     {"mode", to_string(plan.finetune.mode)},
                     {"tau", plan.finetune.tau},
                     {"window_stride", plan.finetune.window_stride}};
    j["tau"] = plan.tau;
    nlohmann::json regimes = nlohmann::json::array();
    for (const RegimeSpec& r : plan.regimes)
        regimes.push_back({{"mode", to_string(r.mode)}, {"one_shot", r.one_shot}});
    j["regimes"] = regimes;
    j["oneshot_source"] = source_to_json(plan.oneshot_source);
    nlohmann::json sweep = nlohmann::json::array();
    for (const SourceSpec& s : plan.sweep_sources) sweep.push_back(source_to_json(s));
    j["sweep_sources"] = sweep;
    j["sweep_finetune_iters"] = plan.sweep_finetune_iters;
    j["profile_visible_fractions"] = plan.profile_visible_fractions;
    j["profile_runs"] = plan.profile_runs;
    return j.dump(2);
}

ExperimentPlan plan_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ExperimentPlan plan;
    plan.schema_version = j.at("schema_version").get<int>();
    if (plan.schema_version != 1) throw std::invalid_argument("plan: unsupported schema version");
    plan.seed = j.at("seed").get<uint64_t>();
    plan.data = dataset_from_json(j.at("data"));
    plan.model = model_config_from_json_text(j.at("model").dump());
    const auto& p = j.at("pretrain");
    plan.pretrain.iters = p.at("iters").get<int>();
    plan.pretrain.batch = p.at("batch").get<int>();
    plan.pretrain.lr = p.at("lr").get<double>();
    plan.pretrain.seed = p.at("seed").get<uint64_t>();
    plan.pretrain.corruption = corruption_policy_from_string(p.at("corruption").get<std::string>());
    plan.pretrain.corruption_rate = p.at("corruption_rate").get<double>();
    plan.pretrain.min_history = p.at("min_history").get<int>();
    plan.pretrain.max_history = p.at("max_history").get<int>();
    const auto& f = j.at("finetune");
    plan.finetune.iters = f.at("iters").get<int>();
    plan.finetune.lr = f.at("lr").get<double>();
    plan.finetune.seed = f.at("seed").get<uint64_t>();
    plan.finetune.mode = pack_mode_from_string(f.at("mode").get<std::string>());
    plan.finetune.tau = f.at("tau").get<double>();
    plan.finetune.window_stride = f.at("window_stride").get<int>();
    plan.tau = j.at("tau").get<double>();
    for (const auto& r : j.at("regimes"))
        plan.regimes.push_back(
            {pack_mode_from_string(r.at("mode").get<std::string>()), r.at("one_shot").get<bool>()});
    plan.oneshot_source = source_from_json(j.at("oneshot_source"));
    for (const auto& s : j.at("sweep_sources")) plan.sweep_sources.push_back(source_from_json(s));
    plan.sweep_finetune_iters = j.at("sweep_finetune_iters").get<int>();
    plan.profile_visible_fractions = j.at("profile_visible_fractions").get<std::vector<double>>();
    plan.profile_runs = j.at("profile_runs").get<int>();
    plan.validate();
    return plan;
}

ExperimentPlan read_plan_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open plan file " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return plan_from_json_text(text);
}

// ---------------------------------------------------------------------------
// Clip construction
// ---------------------------------------------------------------------------

Intrinsics plan_intrinsics(const ExperimentPlan& plan) {
    return make_intrinsics(plan.data.focal, plan.data.focal, plan.data.width / 2.0,
                           plan.data.height / 2.0, plan.data.width, plan.data.height);
}

std::vector<HarnessClip> build_train_clips(const ExperimentPlan& plan) {
    std::vector<HarnessClip> clips;
    for (size_t i = 0; i < plan.data.train_seeds.size(); ++i) {
        uint64_t seed = plan.data.train_seeds[i];
        const std::string& kind = plan.data.train_kinds[i % plan.data.train_kinds.size()];
        HarnessClip hc;
        hc.id = clip_id(seed, kind);
        hc.scene = generate_scene(seed, SpriteMode::seeded);
        hc.clip = make_clip(hc.scene, clip_trajectory(plan, seed, kind));
        clips.push_back(std::move(hc));
    }
    return clips;
}

std::vector<HarnessClip> build_holdout_clips(const ExperimentPlan& plan) {
    std::vector<HarnessClip> clips;
    for (size_t i = 0; i < plan.data.holdout_seeds.size(); ++i) {
        uint64_t seed = plan.data.holdout_seeds[i];
        const std::string& kind = plan.data.holdout_kinds[i % plan.data.holdout_kinds.size()];
        HarnessClip hc;
        hc.id = clip_id(seed, kind);
        hc.scene = generate_scene(seed, plan.data.holdout_sprites ? SpriteMode::seeded : SpriteMode::force_off);
        hc.clip = make_clip(hc.scene, clip_trajectory(plan, seed, kind));
        clips.push_back(std::move(hc));
    }
    return clips;
}

HarnessClip build_source_clip(const ExperimentPlan& plan, const SourceSpec& spec) {
    HarnessClip hc;
    hc.id = spec.id;
    hc.scene = generate_scene(spec.scene_seed, spec.sprite ? SpriteMode::force_on : SpriteMode::force_off);
    std::optional<double> mag;
    if (spec.kind != "static") mag = spec.magnitude;
    hc.clip = make_clip(hc.scene, clip_trajectory(plan, spec.scene_seed, spec.kind, mag));
    return hc;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

PretrainResult run_pretrain(const ExperimentPlan& plan, const std::filesystem::path& out_dir) {
    plan.validate();
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "plan.json", plan_to_json_text(plan));

    std::vector<HarnessClip> train_clips = build_train_clips(plan);
    std::vector<ClipRecord> dataset;
    dataset.reserve(train_clips.size());
    for (HarnessClip& hc : train_clips) dataset.push_back(std::move(hc.clip));

    ToyModel model = init_model(plan.model, derive_seed(plan.seed, "model_init"));
    TrainStats stats = train(model, dataset, plan.pretrain);
    if (stats.role_totals.warp != 0)
        throw std::logic_error("run_pretrain: warp tokens leaked into pretraining samples");

    PretrainResult result;
    result.checkpoint = out_dir / "pretrained.wahm";
    save_model(model, result.checkpoint);
    std::string curve = "iter,loss\n";
    char buf[64];
    for (size_t i = 0; i < stats.loss_curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.8g\n", i, stats.loss_curve[i]);
        curve += buf;
    }
    write_text_file(out_dir / "loss_curve.csv", curve);
    result.stats = std::move(stats);
    return result;
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

MetricsReport evaluate_chunk(const HarnessClip& hc, std::span<const Image> generated,
                             std::span<const Mask> valid_masks) {
    const int k = static_cast<int>(generated.size());
    const Intrinsics& intr = hc.clip.trajectory.intrinsics;

    std::vector<Image> reference(hc.clip.frames.begin() + 1, hc.clip.frames.begin() + 1 + k);

    Trajectory est, commanded;
    est.intrinsics = intr;
    commanded.intrinsics = intr;
    est.poses.push_back(hc.clip.trajectory.poses[0]);
    commanded.poses.assign(hc.clip.trajectory.poses.begin(), hc.clip.trajectory.poses.begin() + k + 1);
    Pose init = hc.clip.trajectory.poses[0];
    for (int j = 0; j < k; ++j) {
        PoseEstimate pe = estimate_pose_photometric(generated[j], hc.scene, intr, init, j + 1);
        est.poses.push_back(pe.pose);
        init = pe.pose;
    }
    return score_generation(generated, reference, valid_masks, est, commanded);
}

namespace {

struct CellArtifacts {
    std::vector<Image> generated;
    WarpVideo warp;
    bool has_warp = false;
    PackedSequence reference_pack;
};

CellResult run_cell(const ExperimentPlan& plan, const ToyModel& model, const HarnessClip& hc,
                    const RegimeSpec& regime, CellArtifacts* artifacts) {
    CellResult cell;
    cell.clip_id = hc.id;
    cell.regime = regime.name();
    try {
        const ModelConfig& cfg = model.cfg;
        const int k = cfg.target_frames;
        const Intrinsics& intr = hc.clip.trajectory.intrinsics;

        std::vector<Image> first_frame{hc.clip.frames[0]};
        TokenGrid clean = patchify(first_frame, cfg.patch_h, cfg.patch_w);

        TokenGrid warp_grid;
        WarpVideo wv;
        std::vector<Mask> masks;
        bool has_warp = regime.mode != PackMode::text_only;
        if (has_warp) {
            Trajectory target_traj;
            target_traj.intrinsics = intr;
            target_traj.poses.assign(hc.clip.trajectory.poses.begin() + 1,
                                     hc.clip.trajectory.poses.begin() + 1 + k);
            wv = build_warp_video(hc.clip, target_traj, 0);
            std::vector<Image> warp_frames;
            for (const WarpFrame& f : wv.frames) {
                warp_frames.push_back(f.rgb);
                masks.push_back(f.valid);
            }
            warp_grid = patchify(warp_frames, cfg.patch_h, cfg.patch_w);
            attach_support(warp_grid, masks);
        }

        SampleConditioning cond;
        cond.clean_history = &clean;
        cond.warp = has_warp ? &warp_grid : nullptr;
        cond.mode = regime.mode;
        cond.tau = plan.tau;
        cond.history_frames = 1;
        cond.frames = k;
        cond.width = intr.width;
        cond.height = intr.height;

        uint64_t cell_seed = derive_seed(plan.seed, "cell_" + regime.name() + "_" + hc.id);
        std::vector<Image> generated = sample_chunk(model, cond, cfg.sample_steps, cell_seed);

        cell.metrics = evaluate_chunk(hc, generated, masks);

        if (artifacts) {
            artifacts->generated = std::move(generated);
            artifacts->has_warp = has_warp;
            if (has_warp) artifacts->warp = std::move(wv);
            std::vector<Image> ref(hc.clip.frames.begin() + 1, hc.clip.frames.begin() + 1 + k);
            TokenGrid targets = patchify(ref, cfg.patch_h, cfg.patch_w);
            PackOptions opts;
            opts.mode = regime.mode;
            opts.tau = plan.tau;
            opts.history_frames = 1;
            artifacts->reference_pack =
                pack_condition_stream(&clean, has_warp ? &warp_grid : nullptr, targets, opts);
        }
    } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
    }
    return cell;
}

void write_cell_artifacts(const std::filesystem::path& dir, const CellArtifacts& artifacts) {
    std::filesystem::create_directories(dir);
    char name[32];
    for (size_t i = 0; i < artifacts.generated.size(); ++i) {
        std::snprintf(name, sizeof(name), "gen_%03zu.ppm", i);
        write_ppm(dir / name, artifacts.generated[i]);
    }
    if (artifacts.has_warp) write_warp_video(artifacts.warp, dir / "warp");
    write_packed(artifacts.reference_pack, dir / "pack");
}

std::string cells_csv(const std::vector<CellResult>& cells) {
    std::string csv = "regime,clip_id,failed," + metrics_csv_header() + "\n";
    for (const CellResult& c : cells) {
        csv += c.regime + "," + c.clip_id + "," + (c.failed ? "1" : "0") + ",";
        csv += c.failed ? ",,,,," : metrics_csv_row(c.metrics);
        csv += "\n";
    }
    return csv;
}

}  // namespace

std::vector<double> AblationResult::collect(
    const std::string& regime, const std::function<double(const MetricsReport&)>& fn) const {
    std::vector<double> out;
    for (const CellResult& c : cells)
        if (!c.failed && c.regime == regime) out.push_back(fn(c.metrics));
    return out;
}

double AblationResult::median_metric(const std::string& regime,
                                     const std::function<double(const MetricsReport&)>& fn) const {
    return median(collect(regime, fn));
}

double AblationResult::win_rate_lower(const std::string& regime_a, const std::string& regime_b,
                                      const std::function<double(const MetricsReport&)>& fn) const {
    int wins = 0, total = 0;
    for (const CellResult& a : cells) {
        if (a.regime != regime_a || a.failed) continue;
        for (const CellResult& b : cells) {
            if (b.regime != regime_b || b.failed || b.clip_id != a.clip_id) continue;
            ++total;
            if (fn(a.metrics) < fn(b.metrics)) ++wins;
        }
    }
    if (total == 0) throw std::invalid_argument("win_rate_lower: no paired cells");
    return static_cast<double>(wins) / total;
}

AblationResult run_ablation(const ExperimentPlan& plan, const ToyModel& model,
                            const LoraAdapter* adapter, const std::filesystem::path& out_dir,
                            int jobs, bool write_artifacts) {
    plan.validate();
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "plan.json", plan_to_json_text(plan));

    bool needs_adapter = false;
    for (const RegimeSpec& r : plan.regimes) needs_adapter |= r.one_shot;
    if (needs_adapter && !adapter)
        throw std::invalid_argument("run_ablation: plan has one-shot regimes but no adapter given");

    std::vector<HarnessClip> clips = build_holdout_clips(plan);

    ToyModel base(model);
    lora_mount(base, nullptr);
    ToyModel tuned(model);
    if (adapter) lora_mount(tuned, adapter);
    base.eval_count.store(0);
    tuned.eval_count.store(0);

    struct Task {
        const RegimeSpec* regime;
        const HarnessClip* clip;
    };
    std::vector<Task> tasks;
    for (const RegimeSpec& r : plan.regimes)
        for (const HarnessClip& c : clips) tasks.push_back({&r, &c});

    AblationResult result;
    result.cells.resize(tasks.size());
    std::vector<CellArtifacts> artifacts(write_artifacts ? tasks.size() : 0);

    auto run_task = [&](int i) {
        const Task& t = tasks[i];
        const ToyModel& m = t.regime->one_shot ? tuned : base;
        result.cells[i] =
            run_cell(plan, m, *t.clip, *t.regime, write_artifacts ? &artifacts[i] : nullptr);
    };
    if (jobs > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
        for (int i = 0; i < static_cast<int>(tasks.size()); ++i) run_task(i);
    } else {
        for (int i = 0; i < static_cast<int>(tasks.size()); ++i) run_task(i);
    }

    // sampler audit: exactly steps evaluations per sampled chunk
    int failed = 0;
    for (const CellResult& c : result.cells) failed += c.failed ? 1 : 0;
    if (failed == 0) {
        long expected = static_cast<long>(tasks.size()) * plan.model.sample_steps;
        long actual = base.eval_count.load() + tuned.eval_count.load();
        if (actual != expected)
            throw std::logic_error("run_ablation: sampler evaluation audit failed: expected " +
                                   std::to_string(expected) + " forwards, counted " +
                                   std::to_string(actual));
    }

    if (write_artifacts)
        for (size_t i = 0; i < tasks.size(); ++i)
            if (!result.cells[i].failed)
                write_cell_artifacts(
                    out_dir / "cells" / result.cells[i].regime / result.cells[i].clip_id,
                    artifacts[i]);

    write_text_file(out_dir / "ablation_cells.csv", cells_csv(result.cells));

    // summary with medians per regime
    std::string summary = "regime,median_r_err_deg,median_t_err,median_psnr,median_vis_psnr,cells,failed\n";
    for (const RegimeSpec& r : plan.regimes) {
        std::string name = r.name();
        auto r_errs = result.collect(name, [](const MetricsReport& m) { return m.r_err_deg; });
        if (r_errs.empty()) continue;
        char buf[256];
        auto get_psnr = [](const MetricsReport& m) { return m.psnr_db.value_or(0.0); };
        auto get_vis = [](const MetricsReport& m) {
            return m.vis_psnr_db ? *m.vis_psnr_db : std::numeric_limits<double>::quiet_NaN();
        };
        double vis = 0;
        auto vis_vals = drop_nan(result.collect(name, get_vis));
        if (!vis_vals.empty()) vis = median(vis_vals);
        int failed_cells = 0;
        for (const CellResult& c : result.cells)
            if (c.regime == name && c.failed) ++failed_cells;
        std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g,%zu,%d\n", name.c_str(),
                      median(r_errs),
                      result.median_metric(name, [](const MetricsReport& m) { return m.t_err; }),
                      result.median_metric(name, get_psnr), vis, r_errs.size() + failed_cells,
                      failed_cells);
        summary += buf;
    }
    write_text_file(out_dir / "ablation_summary.csv", summary);
    return result;
}

// ---------------------------------------------------------------------------
// One-shot source sweep
// ---------------------------------------------------------------------------

SweepResult run_oneshot_sweep(const ExperimentPlan& plan, const ToyModel& model,
                              const std::filesystem::path& out_dir, int jobs) {
    plan.validate();
    if (plan.sweep_sources.size() < 2)
        throw std::invalid_argument("run_oneshot_sweep: need at least 2 candidate sources");
    std::filesystem::create_directories(out_dir);

    std::vector<HarnessClip> clips = build_holdout_clips(plan);
    SweepResult result;

    for (size_t si = 0; si < plan.sweep_sources.size(); ++si) {
        const SourceSpec& spec = plan.sweep_sources[si];
        SweepRow row;
        row.source = spec;
        HarnessClip source = build_source_clip(plan, spec);
        row.diagnostics = source_diagnostics(source.clip);

        // identical recipe for every source; only the source video changes
        ToyModel tuned(model);
        lora_mount(tuned, nullptr);
        LoraAdapter adapter = init_lora(plan.model, 32, 32.0, derive_seed(plan.seed, "sweep_lora"));
        FinetuneConfig fc = plan.finetune;
        fc.iters = plan.sweep_finetune_iters;
        fc.seed = derive_seed(plan.seed, "sweep_finetune");
        lora_finetune(tuned, adapter, source.clip, fc);
        lora_mount(tuned, &adapter);
        save_adapter(adapter, out_dir / (spec.id + ".wahl"));

        RegimeSpec regime{plan.finetune.mode, true};
        std::vector<CellResult> cells(clips.size());
        auto run_task = [&](int i) {
            RegimeSpec named = regime;
            CellResult c = run_cell(plan, tuned, clips[i], named, nullptr);
            c.regime = "sweep_" + spec.id;
            cells[i] = std::move(c);
        };
        if (jobs > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
            for (int i = 0; i < static_cast<int>(clips.size()); ++i) run_task(i);
        } else {
            for (int i = 0; i < static_cast<int>(clips.size()); ++i) run_task(i);
        }

        std::vector<double> r_errs, t_errs, vis;
        for (const CellResult& c : cells) {
            if (c.failed) {
                ++row.failed_cells;
                continue;
            }
            r_errs.push_back(c.metrics.r_err_deg);
            t_errs.push_back(c.metrics.t_err);
            if (c.metrics.vis_psnr_db) vis.push_back(*c.metrics.vis_psnr_db);
        }
        row.median_r_err = median(r_errs);
        row.median_t_err = median(t_errs);
        row.median_vis_psnr = vis.empty() ? 0.0 : median(vis);
        result.rows.push_back(std::move(row));
    }

    std::string csv = "source_id,kind," + source_diagnostics_csv_header() +
                      ",median_r_err_deg,median_t_err,median_vis_psnr,failed_cells\n";
    for (const SweepRow& row : result.rows) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), ",%.6g,%.6g,%.6g,%d\n", row.median_r_err, row.median_t_err,
                      row.median_vis_psnr, row.failed_cells);
        csv += row.source.id + "," + row.source.kind + "," +
               source_diagnostics_csv_row(row.diagnostics) + buf;
    }
    write_text_file(out_dir / "sweep.csv", csv);
    return result;
}

// ---------------------------------------------------------------------------
// Runtime profile
// ---------------------------------------------------------------------------

namespace {

TokenGrid keep_top_fraction(const TokenGrid& grid, double fraction) {
    const int keep = std::clamp(static_cast<int>(std::lround(fraction * grid.count())), 0, grid.count());
    std::vector<int> order(grid.count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return grid.support[a] > grid.support[b]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    TokenGrid out;
    out.frames = grid.frames;
    out.rows = grid.rows;
    out.cols = grid.cols;
    out.patch_h = grid.patch_h;
    out.patch_w = grid.patch_w;
    out.token_dim = grid.token_dim;
    for (int idx : order) {
        out.coords.push_back(grid.coords[idx]);
        out.support.push_back(grid.support[idx]);
        std::span<const float> tok = grid.token(idx);
        out.tokens.insert(out.tokens.end(), tok.begin(), tok.end());
    }
    return out;
}

}  // namespace

std::vector<RuntimeProfile> run_profile(const ExperimentPlan& plan, const ToyModel& model,
                                        const std::filesystem::path& out_dir) {
    plan.validate();
    std::filesystem::create_directories(out_dir);
    std::vector<HarnessClip> clips = build_holdout_clips(plan);
    const HarnessClip& hc = clips.front();
    const ModelConfig& cfg = model.cfg;
    const int k = cfg.target_frames;
    const Intrinsics& intr = hc.clip.trajectory.intrinsics;

    std::vector<Image> first_frame{hc.clip.frames[0]};
    TokenGrid clean = patchify(first_frame, cfg.patch_h, cfg.patch_w);

    std::vector<RuntimeProfile> profiles;
    uint64_t seed = derive_seed(plan.seed, "profile");

    auto run_regime = [&](const std::string& name, const TokenGrid* warp, double warp_seconds,
                          double visible_fraction) {
        RuntimeProfile p;
        p.regime = name;
        p.visible_fraction = visible_fraction;
        auto t_total = Clock::now();

        SampleConditioning cond;
        cond.clean_history = &clean;
        cond.warp = warp;
        cond.mode = warp ? PackMode::novisdrop : PackMode::text_only;
        cond.tau = plan.tau;
        cond.history_frames = 1;
        cond.frames = k;
        cond.width = intr.width;
        cond.height = intr.height;

        auto t_pack = Clock::now();
        std::vector<Image> ref(hc.clip.frames.begin() + 1, hc.clip.frames.begin() + 1 + k);
        TokenGrid targets = patchify(ref, cfg.patch_h, cfg.patch_w);
        PackOptions opts;
        opts.mode = cond.mode;
        opts.tau = plan.tau;
        opts.history_frames = 1;
        PackedSequence packed = pack_condition_stream(&clean, warp, targets, opts);
        double pack_seconds = seconds_since(t_pack);

        RoleCounts counts = sequence_length_report(packed);
        p.tokens_clean = counts.clean;
        p.tokens_warp = counts.warp;
        p.tokens_target = counts.target;

        auto t_sample = Clock::now();
        sample_chunk(model, cond, cfg.sample_steps, seed);
        double sample_seconds = seconds_since(t_sample);

        p.stages = {{"warp_construction", warp_seconds},
                    {"packing", pack_seconds},
                    {"transformer_sampling", sample_seconds},
                    {"end_to_end", warp_seconds + seconds_since(t_total)}};
        profiles.push_back(std::move(p));
    };

    for (int run = 0; run < plan.profile_runs; ++run) run_regime("baseline", nullptr, 0.0, 0.0);

    for (double fraction : plan.profile_visible_fractions) {
        // warp construction timed once per run; the kept set is fixed by rank
        for (int run = 0; run < plan.profile_runs; ++run) {
            auto t_warp = Clock::now();
            Trajectory target_traj;
            target_traj.intrinsics = intr;
            target_traj.poses.assign(hc.clip.trajectory.poses.begin() + 1,
                                     hc.clip.trajectory.poses.begin() + 1 + k);
            WarpVideo wv = build_warp_video(hc.clip, target_traj, 0);
            std::vector<Image> warp_frames;
            std::vector<Mask> masks;
            for (const WarpFrame& f : wv.frames) {
                warp_frames.push_back(f.rgb);
                masks.push_back(f.valid);
            }
            TokenGrid warp_grid = patchify(warp_frames, cfg.patch_h, cfg.patch_w);
            attach_support(warp_grid, masks);
            TokenGrid kept = keep_top_fraction(warp_grid, fraction);
            double warp_seconds = seconds_since(t_warp);
            char name[64];
            std::snprintf(name, sizeof(name), "visible_%02d", static_cast<int>(fraction * 100));
            run_regime(name, &kept, warp_seconds,
                       static_cast<double>(kept.count()) / warp_grid.count());
        }
    }

    std::string csv = profile_csv_header() + "\n";
    for (const RuntimeProfile& p : profiles) csv += profile_csv_rows(p);
    write_text_file(out_dir / "profile.csv", csv);
    return profiles;
}

}  // namespace wah
