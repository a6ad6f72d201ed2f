// Command-line entry point wiring all modules. Batch, non-interactive.
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "wah/harness.hpp"
#include "wah/report.hpp"
#include "wah/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_verbosity = 0;

void log_resolved(const std::string& subcommand, const json& config) {
    json line;
    line["subcommand"] = subcommand;
    line["config"] = config;
    std::cout << "resolved-config: " << line.dump() << "\n";
}

void vlog(const std::string& msg) {
    if (g_verbosity > 0) std::cout << msg << "\n";
}

wah::ExperimentPlan load_plan(const std::string& plan_path) {
    if (plan_path.empty()) return wah::default_plan();
    return wah::read_plan_file(plan_path);
}

std::vector<wah::Image> read_generated_frames(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.starts_with("gen_") && name.ends_with(".ppm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no gen_*.ppm frames in " + dir.string());
    std::vector<wah::Image> frames;
    for (const auto& f : files) frames.push_back(wah::read_ppm(f));
    return frames;
}

// Shared conditioning construction: first frame as clean history, warp of it
// through the next K cameras.
struct CliConditioning {
    wah::TokenGrid clean;
    wah::TokenGrid warp;
    std::vector<wah::Mask> masks;
    wah::WarpVideo warp_video;
};

CliConditioning build_conditioning(const wah::ClipRecord& clip, int k, int patch, bool with_warp) {
    CliConditioning c;
    std::vector<wah::Image> first{clip.frames[0]};
    c.clean = wah::patchify(first, patch, patch);
    if (with_warp) {
        if (static_cast<int>(clip.size()) < k + 1)
            throw std::runtime_error("clip too short for " + std::to_string(k) + " target frames");
        wah::Trajectory target;
        target.intrinsics = clip.trajectory.intrinsics;
        target.poses.assign(clip.trajectory.poses.begin() + 1, clip.trajectory.poses.begin() + 1 + k);
        c.warp_video = wah::build_warp_video(clip, target, 0);
        std::vector<wah::Image> frames;
        for (const wah::WarpFrame& f : c.warp_video.frames) {
            frames.push_back(f.rgb);
            c.masks.push_back(f.valid);
        }
        c.warp = wah::patchify(frames, patch, patch);
        wah::attach_support(c.warp, c.masks);
    }
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"warp-as-history camera-control toolkit", "wah"};
    app.require_subcommand(1);
    app.add_flag("-v,--verbose", g_verbosity, "increase verbosity");

    // ---- synth
    auto* synth = app.add_subcommand("synth", "generate synthetic clips");
    uint64_t synth_seed = 7;
    int synth_clips = 8, synth_frames = 33, synth_width = 64, synth_height = 64;
    double synth_focal = 64.0;
    std::string synth_out;
    std::vector<std::string> synth_kinds = {"pan_left", "pan_right", "tilt_up", "tilt_down",
                                            "dolly_in", "dolly_out", "truck_left", "truck_right",
                                            "orbit"};
    synth->add_option("--seed", synth_seed, "root seed")->capture_default_str();
    synth->add_option("--clips", synth_clips, "number of clips")->capture_default_str();
    synth->add_option("--frames", synth_frames, "frames per clip")->capture_default_str();
    synth->add_option("--width", synth_width, "image width")->capture_default_str();
    synth->add_option("--height", synth_height, "image height")->capture_default_str();
    synth->add_option("--focal", synth_focal, "focal length in pixels")->capture_default_str();
    synth->add_option("--kinds", synth_kinds, "trajectory kinds to cycle through")
        ->delimiter(',')
        ->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();

    // ---- warp
    auto* warp_cmd = app.add_subcommand("warp", "build a warp video from a clip");
    std::string warp_clip, warp_out, warp_traj;
    int warp_source = 0;
    bool warp_fp2 = false;
    warp_cmd->add_option("--clip", warp_clip, "clip directory")->required();
    warp_cmd->add_option("--out", warp_out, "output directory")->required();
    warp_cmd->add_option("--traj", warp_traj, "target trajectory file (default: clip's own)");
    warp_cmd->add_option("--source-index", warp_source, "source frame index")->capture_default_str();
    warp_cmd->add_flag("--footprint2x2", warp_fp2, "use a 2x2 splat footprint");

    // ---- pack
    auto* pack_cmd = app.add_subcommand("pack", "pack a conditioning sequence");
    std::string pack_clip, pack_out, pack_mode = "full";
    double pack_tau = 0.5;
    int pack_history = 1, pack_targets = 8, pack_patch = 8;
    pack_cmd->add_option("--clip", pack_clip, "clip directory")->required();
    pack_cmd->add_option("--out", pack_out, "output directory")->required();
    pack_cmd->add_option("--mode", pack_mode, "full|noalign|novisdrop|seqconcat|chfusion|text_only")
        ->capture_default_str();
    pack_cmd->add_option("--tau", pack_tau, "visible-support threshold")->capture_default_str();
    pack_cmd->add_option("--history-frames", pack_history, "clean history frames")->capture_default_str();
    pack_cmd->add_option("--targets", pack_targets, "target frames")->capture_default_str();
    pack_cmd->add_option("--patch", pack_patch, "patch size")->capture_default_str();

    // ---- pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain the toy backbone");
    std::string pre_plan, pre_out;
    int pre_iters = -1;
    uint64_t pre_seed = 0;
    bool pre_seed_set = false;
    pretrain_cmd->add_option("--plan", pre_plan, "plan JSON (default: built-in plan)");
    pretrain_cmd->add_option("--out", pre_out, "output directory")->required();
    pretrain_cmd->add_option("--iters", pre_iters, "override pretrain iterations");
    pretrain_cmd->add_option("--seed", pre_seed, "override plan seed")->each([&](const std::string&) {
        pre_seed_set = true;
    });

    // ---- finetune
    auto* ft_cmd = app.add_subcommand("finetune", "train a low-rank adapter on one clip");
    std::string ft_model, ft_clip, ft_out, ft_mode = "full";
    int ft_rank = 32, ft_iters = 1000;
    double ft_alpha = 32.0, ft_lr = 1e-3, ft_tau = 0.5;
    uint64_t ft_seed = 11;
    ft_cmd->add_option("--model", ft_model, "model checkpoint (.wahm)")->required();
    ft_cmd->add_option("--clip", ft_clip, "source clip directory")->required();
    ft_cmd->add_option("--out", ft_out, "adapter output path (.wahl)")->required();
    ft_cmd->add_option("--rank", ft_rank, "adapter rank")->capture_default_str();
    ft_cmd->add_option("--alpha", ft_alpha, "adapter scaling factor")->capture_default_str();
    ft_cmd->add_option("--iters", ft_iters, "finetuning iterations")->capture_default_str();
    ft_cmd->add_option("--lr", ft_lr, "learning rate")->capture_default_str();
    ft_cmd->add_option("--mode", ft_mode, "packing mode for finetuning")->capture_default_str();
    ft_cmd->add_option("--tau", ft_tau, "visible-support threshold")->capture_default_str();
    ft_cmd->add_option("--seed", ft_seed, "finetuning seed")->capture_default_str();

    // ---- sample
    auto* sample_cmd = app.add_subcommand("sample", "sample one chunk conditioned on a clip");
    std::string smp_model, smp_adapter, smp_clip, smp_out, smp_mode = "full";
    int smp_steps = 6;
    double smp_tau = 0.5;
    uint64_t smp_seed = 3;
    sample_cmd->add_option("--model", smp_model, "model checkpoint (.wahm)")->required();
    sample_cmd->add_option("--adapter", smp_adapter, "adapter checkpoint (.wahl)");
    sample_cmd->add_option("--clip", smp_clip, "clip directory")->required();
    sample_cmd->add_option("--out", smp_out, "output directory")->required();
    sample_cmd->add_option("--mode", smp_mode, "packing mode")->capture_default_str();
    sample_cmd->add_option("--steps", smp_steps, "denoising steps")->capture_default_str();
    sample_cmd->add_option("--tau", smp_tau, "visible-support threshold")->capture_default_str();
    sample_cmd->add_option("--seed", smp_seed, "sampling seed")->capture_default_str();

    // ---- eval
    auto* eval_cmd = app.add_subcommand("eval", "score generated frames against a clip");
    std::string ev_gen, ev_clip, ev_json, ev_csv;
    eval_cmd->add_option("--gen", ev_gen, "directory with gen_*.ppm frames")->required();
    eval_cmd->add_option("--clip", ev_clip, "reference clip directory")->required();
    eval_cmd->add_option("--out", ev_json, "metrics JSON output path")->required();
    eval_cmd->add_option("--csv", ev_csv, "optional metrics CSV output path");

    // ---- ablate
    auto* abl_cmd = app.add_subcommand("ablate", "run the interface ablation");
    std::string abl_plan, abl_model, abl_adapter, abl_out;
    int abl_jobs = 1;
    bool abl_no_artifacts = false;
    abl_cmd->add_option("--plan", abl_plan, "plan JSON (default: built-in plan)");
    abl_cmd->add_option("--model", abl_model, "model checkpoint (.wahm)")->required();
    abl_cmd->add_option("--adapter", abl_adapter, "adapter for one-shot rows (trained if absent)");
    abl_cmd->add_option("--out", abl_out, "output directory")->required();
    abl_cmd->add_option("--jobs", abl_jobs, "cell-level parallelism")->capture_default_str();
    abl_cmd->add_flag("--no-artifacts", abl_no_artifacts, "skip per-cell artifact directories");

    // ---- sweep
    auto* swp_cmd = app.add_subcommand("sweep", "run the one-shot source sweep");
    std::string swp_plan, swp_model, swp_out;
    int swp_jobs = 1;
    swp_cmd->add_option("--plan", swp_plan, "plan JSON (default: built-in plan)");
    swp_cmd->add_option("--model", swp_model, "model checkpoint (.wahm)")->required();
    swp_cmd->add_option("--out", swp_out, "output directory")->required();
    swp_cmd->add_option("--jobs", swp_jobs, "cell-level parallelism")->capture_default_str();

    // ---- profile
    auto* prof_cmd = app.add_subcommand("profile", "profile chunk generation");
    std::string prof_plan, prof_model, prof_out;
    prof_cmd->add_option("--plan", prof_plan, "plan JSON (default: built-in plan)");
    prof_cmd->add_option("--model", prof_model, "model checkpoint (.wahm)")->required();
    prof_cmd->add_option("--out", prof_out, "output directory")->required();

    // ---- report
    auto* rep_cmd = app.add_subcommand("report", "render a result table as text and SVG charts");
    std::string rep_table, rep_out;
    rep_cmd->add_option("--table", rep_table, "result CSV")->required();
    rep_cmd->add_option("--out", rep_out, "chart output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            log_resolved("synth", {{"seed", synth_seed}, {"clips", synth_clips},
                                   {"frames", synth_frames}, {"width", synth_width},
                                   {"height", synth_height}, {"focal", synth_focal},
                                   {"kinds", synth_kinds}, {"out", synth_out}});
            wah::Intrinsics intr = wah::make_intrinsics(synth_focal, synth_focal, synth_width / 2.0,
                                                        synth_height / 2.0, synth_width, synth_height);
            for (int i = 0; i < synth_clips; ++i) {
                uint64_t scene_seed = wah::derive_seed(synth_seed, "synth_scene", i);
                wah::Scene scene = wah::generate_scene(scene_seed);
                const std::string& kind = synth_kinds[i % synth_kinds.size()];
                wah::Rng rng(wah::derive_seed(synth_seed, "synth_mag", i));
                bool rotational = kind == "pan_left" || kind == "pan_right" || kind == "tilt_up" ||
                                  kind == "tilt_down" || kind == "orbit";
                double mag = rotational ? rng.next_range(8.0, 22.0) : rng.next_range(0.35, 0.9);
                wah::Trajectory traj = wah::make_primitive_trajectory(
                    wah::motion_kind_from_string(kind), synth_frames, mag, intr);
                wah::ClipRecord clip = wah::make_clip(scene, traj);
                char name[32];
                std::snprintf(name, sizeof(name), "clip_%03d", i);
                wah::write_clip(clip, fs::path(synth_out) / name);
                vlog(std::string("wrote ") + name + " (" + kind + ")");
            }
        } else if (*warp_cmd) {
            log_resolved("warp", {{"clip", warp_clip}, {"out", warp_out}, {"traj", warp_traj},
                                  {"source_index", warp_source}, {"footprint2x2", warp_fp2}});
            wah::ClipRecord clip = wah::read_clip(warp_clip);
            wah::Trajectory target = warp_traj.empty()
                                         ? clip.trajectory
                                         : wah::read_trajectory_file(warp_traj, clip.frames[0].width,
                                                                     clip.frames[0].height);
            wah::SplatOptions opts{warp_fp2};
            wah::WarpVideo wv = wah::build_warp_video(clip, target, warp_source, opts);
            wah::write_warp_video(wv, warp_out);
        } else if (*pack_cmd) {
            log_resolved("pack", {{"clip", pack_clip}, {"out", pack_out}, {"mode", pack_mode},
                                  {"tau", pack_tau}, {"history_frames", pack_history},
                                  {"targets", pack_targets}, {"patch", pack_patch}});
            wah::ClipRecord clip = wah::read_clip(pack_clip);
            wah::PackMode mode = wah::pack_mode_from_string(pack_mode);
            const int t = static_cast<int>(clip.size());
            if (t < pack_history + pack_targets)
                throw std::runtime_error("clip too short for requested history+targets");
            std::vector<wah::Image> hist(clip.frames.begin(), clip.frames.begin() + pack_history);
            wah::TokenGrid clean = wah::patchify(hist, pack_patch, pack_patch);
            wah::TokenGrid warp_grid;
            bool with_warp = mode != wah::PackMode::text_only;
            if (with_warp) {
                wah::Trajectory target;
                target.intrinsics = clip.trajectory.intrinsics;
                target.poses.assign(clip.trajectory.poses.begin() + pack_history,
                                    clip.trajectory.poses.begin() + pack_history + pack_targets);
                wah::WarpVideo wv = wah::build_warp_video(clip, target, pack_history - 1);
                std::vector<wah::Image> frames;
                std::vector<wah::Mask> masks;
                for (const wah::WarpFrame& f : wv.frames) {
                    frames.push_back(f.rgb);
                    masks.push_back(f.valid);
                }
                warp_grid = wah::patchify(frames, pack_patch, pack_patch);
                wah::attach_support(warp_grid, masks);
            }
            std::vector<wah::Image> tgt(clip.frames.begin() + pack_history,
                                        clip.frames.begin() + pack_history + pack_targets);
            wah::TokenGrid targets = wah::patchify(tgt, pack_patch, pack_patch);
            wah::PackOptions opts;
            opts.mode = mode;
            opts.tau = pack_tau;
            opts.history_frames = pack_history;
            wah::PackedSequence packed =
                wah::pack_condition_stream(&clean, with_warp ? &warp_grid : nullptr, targets, opts);
            wah::write_packed(packed, pack_out);
        } else if (*pretrain_cmd) {
            wah::ExperimentPlan plan = load_plan(pre_plan);
            if (pre_iters > 0) plan.pretrain.iters = pre_iters;
            if (pre_seed_set) plan.seed = pre_seed;
            log_resolved("pretrain", {{"plan", pre_plan.empty() ? "<default>" : pre_plan},
                                      {"out", pre_out}, {"iters", plan.pretrain.iters},
                                      {"seed", plan.seed}});
            wah::PretrainResult r = wah::run_pretrain(plan, pre_out);
            std::printf("checkpoint: %s\n", r.checkpoint.string().c_str());
            std::printf("loss: first-window %.6g -> last-window %.6g\n",
                        r.stats.initial_window_mean(), r.stats.final_window_mean());
        } else if (*ft_cmd) {
            log_resolved("finetune", {{"model", ft_model}, {"clip", ft_clip}, {"out", ft_out},
                                      {"rank", ft_rank}, {"alpha", ft_alpha}, {"iters", ft_iters},
                                      {"lr", ft_lr}, {"mode", ft_mode}, {"tau", ft_tau},
                                      {"seed", ft_seed}});
            wah::ToyModel model = wah::load_model(ft_model);
            wah::ClipRecord clip = wah::read_clip(ft_clip);
            wah::LoraAdapter adapter =
                wah::init_lora(model.cfg, ft_rank, ft_alpha, wah::derive_seed(ft_seed, "lora_init"));
            wah::FinetuneConfig fc;
            fc.iters = ft_iters;
            fc.lr = ft_lr;
            fc.seed = ft_seed;
            fc.mode = wah::pack_mode_from_string(ft_mode);
            fc.tau = ft_tau;
            wah::TrainStats stats = wah::lora_finetune(model, adapter, clip, fc);
            wah::save_adapter(adapter, ft_out);
            std::printf("adapter: %s\n", ft_out.c_str());
            std::printf("loss: first-window %.6g -> last-window %.6g\n",
                        stats.initial_window_mean(), stats.final_window_mean());
        } else if (*sample_cmd) {
            log_resolved("sample", {{"model", smp_model}, {"adapter", smp_adapter},
                                    {"clip", smp_clip}, {"out", smp_out}, {"mode", smp_mode},
                                    {"steps", smp_steps}, {"tau", smp_tau}, {"seed", smp_seed}});
            wah::ToyModel model = wah::load_model(smp_model);
            wah::LoraAdapter adapter;
            if (!smp_adapter.empty()) {
                adapter = wah::load_adapter(smp_adapter);
                wah::lora_mount(model, &adapter);
            }
            wah::ClipRecord clip = wah::read_clip(smp_clip);
            wah::PackMode mode = wah::pack_mode_from_string(smp_mode);
            CliConditioning cond = build_conditioning(clip, model.cfg.target_frames,
                                                      model.cfg.patch_h,
                                                      mode != wah::PackMode::text_only);
            wah::SampleConditioning sc;
            sc.clean_history = &cond.clean;
            sc.warp = mode != wah::PackMode::text_only ? &cond.warp : nullptr;
            sc.mode = mode;
            sc.tau = smp_tau;
            sc.history_frames = 1;
            sc.frames = model.cfg.target_frames;
            sc.width = clip.frames[0].width;
            sc.height = clip.frames[0].height;
            std::vector<wah::Image> frames = wah::sample_chunk(model, sc, smp_steps, smp_seed);
            fs::create_directories(smp_out);
            for (size_t i = 0; i < frames.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "gen_%03zu.ppm", i);
                wah::write_ppm(fs::path(smp_out) / name, frames[i]);
            }
            if (mode != wah::PackMode::text_only)
                wah::write_warp_video(cond.warp_video, fs::path(smp_out) / "warp");
        } else if (*eval_cmd) {
            log_resolved("eval", {{"gen", ev_gen}, {"clip", ev_clip}, {"out", ev_json}, {"csv", ev_csv}});
            wah::ClipRecord clip = wah::read_clip(ev_clip);
            std::vector<wah::Image> generated = read_generated_frames(ev_gen);
            const int k = static_cast<int>(generated.size());
            CliConditioning cond = build_conditioning(clip, k, 8, true);
            wah::HarnessClip hc;
            hc.id = ev_clip;
            hc.scene = wah::generate_scene(clip.scene_seed);
            hc.clip = clip;
            wah::MetricsReport m = wah::evaluate_chunk(hc, generated, cond.masks);
            std::ofstream os(ev_json);
            os << m.to_json_text() << "\n";
            if (!ev_csv.empty()) {
                std::ofstream cs(ev_csv);
                cs << wah::metrics_csv_header() << "\n" << wah::metrics_csv_row(m) << "\n";
            }
            std::printf("%s\n%s\n", wah::metrics_csv_header().c_str(), wah::metrics_csv_row(m).c_str());
        } else if (*abl_cmd) {
            wah::ExperimentPlan plan = load_plan(abl_plan);
            log_resolved("ablate", {{"plan", abl_plan.empty() ? "<default>" : abl_plan},
                                    {"model", abl_model}, {"adapter", abl_adapter},
                                    {"out", abl_out}, {"jobs", abl_jobs},
                                    {"no_artifacts", abl_no_artifacts}});
            wah::ToyModel model = wah::load_model(abl_model);
            bool needs_adapter = false;
            for (const auto& r : plan.regimes) needs_adapter |= r.one_shot;
            wah::LoraAdapter adapter;
            bool have_adapter = false;
            if (needs_adapter) {
                if (!abl_adapter.empty()) {
                    adapter = wah::load_adapter(abl_adapter);
                } else {
                    vlog("training one-shot adapter from plan source " + plan.oneshot_source.id);
                    wah::HarnessClip source = wah::build_source_clip(plan, plan.oneshot_source);
                    adapter = wah::init_lora(plan.model, 32, 32.0,
                                             wah::derive_seed(plan.seed, "oneshot_lora"));
                    wah::lora_finetune(model, adapter, source.clip, plan.finetune);
                    fs::create_directories(abl_out);
                    wah::save_adapter(adapter, fs::path(abl_out) / "oneshot_adapter.wahl");
                }
                have_adapter = true;
            }
            wah::AblationResult r = wah::run_ablation(plan, model, have_adapter ? &adapter : nullptr,
                                                      abl_out, abl_jobs, !abl_no_artifacts);
            int failed = 0;
            for (const auto& c : r.cells) failed += c.failed ? 1 : 0;
            std::printf("cells: %zu (%d failed); tables in %s\n", r.cells.size(), failed,
                        abl_out.c_str());
        } else if (*swp_cmd) {
            wah::ExperimentPlan plan = load_plan(swp_plan);
            log_resolved("sweep", {{"plan", swp_plan.empty() ? "<default>" : swp_plan},
                                   {"model", swp_model}, {"out", swp_out}, {"jobs", swp_jobs}});
            wah::ToyModel model = wah::load_model(swp_model);
            wah::SweepResult r = wah::run_oneshot_sweep(plan, model, swp_out, swp_jobs);
            std::printf("sources: %zu; table in %s/sweep.csv\n", r.rows.size(), swp_out.c_str());
        } else if (*prof_cmd) {
            wah::ExperimentPlan plan = load_plan(prof_plan);
            log_resolved("profile", {{"plan", prof_plan.empty() ? "<default>" : prof_plan},
                                     {"model", prof_model}, {"out", prof_out}});
            wah::ToyModel model = wah::load_model(prof_model);
            std::vector<wah::RuntimeProfile> profiles = wah::run_profile(plan, model, prof_out);
            std::printf("%zu profile rows in %s/profile.csv\n", profiles.size(), prof_out.c_str());
        } else if (*rep_cmd) {
            log_resolved("report", {{"table", rep_table}, {"out", rep_out}});
            std::string text = wah::render_report(rep_table, rep_out);
            std::fputs(text.c_str(), stdout);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
