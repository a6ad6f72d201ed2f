#include <algorithm>
#include <cmath>
#include <cstring>

#include "model_internal.hpp"
#include "wah/rng.hpp"
#include "wah/warp.hpp"

namespace wah {

using detail::Cache;
using detail::Grads;

namespace {

struct BuiltSample {
    PackedSequence packed;
    std::vector<double> v_target;  // [ntgt][patch_dim]
    double tau = 0;
};

void remap_frame_coords(TokenGrid& grid, const std::vector<int>& kept_indices) {
    for (auto& co : grid.coords) co.f = kept_indices[co.f];
}

// Noises the target grid in place: x_tau = (1-tau)*eps + tau*x0. Velocity
// targets cover the first patch_dim entries of each token.
std::vector<double> noise_targets(TokenGrid& targets, double tau, Rng& rng) {
    std::vector<double> v;
    v.reserve(targets.tokens.size());
    for (float& x : targets.tokens) {
        double x0 = x;
        double eps = rng.next_normal();
        x = static_cast<float>(flow_interpolate(x0, eps, tau));
        v.push_back(flow_velocity(x0, eps));
    }
    return v;
}

BuiltSample build_pretrain_sample(const ModelConfig& cfg, std::span<const ClipRecord> dataset,
                                  const TrainConfig& tc, uint64_t sample_seed) {
    Rng rng(sample_seed);
    const ClipRecord& clip = dataset[rng.next_int(static_cast<int>(dataset.size()))];
    const int t = static_cast<int>(clip.size());
    const int k = cfg.target_frames;
    int cap = tc.max_history > 0 ? std::min(tc.max_history, cfg.max_history_frames)
                                 : cfg.max_history_frames;
    int h_max = std::min(cap, t - k);
    if (h_max < 1) throw std::invalid_argument("train: clips too short for target_frames");
    int h_min = std::clamp(tc.min_history, 1, h_max);
    int h = h_min + rng.next_int(h_max - h_min + 1);
    int s = h + rng.next_int(t - k - h + 1);

    std::vector<Image> history(clip.frames.begin() + (s - h), clip.frames.begin() + s);
    HistoryCorruption corruption{tc.corruption, tc.corruption_rate, rng.next_u64()};
    CorruptResult corrupted = corrupt_history(history, corruption, cfg.patch_h, cfg.patch_w);

    TokenGrid clean;
    bool have_clean = !corrupted.frames.empty();
    if (have_clean) {
        clean = patchify(corrupted.frames, cfg.patch_h, cfg.patch_w);
        remap_frame_coords(clean, corrupted.kept_indices);
    }

    std::vector<Image> target_frames(clip.frames.begin() + s, clip.frames.begin() + s + k);
    TokenGrid targets = patchify(target_frames, cfg.patch_h, cfg.patch_w);

    BuiltSample sample;
    sample.tau = rng.next_range(0.0, tc.tau_max);
    sample.v_target = noise_targets(targets, sample.tau, rng);
    PackOptions opts;
    opts.mode = PackMode::text_only;
    opts.history_frames = h;
    sample.packed = pack_condition_stream(have_clean ? &clean : nullptr, nullptr, targets, opts);
    return sample;
}

struct FinetuneWindow {
    TokenGrid clean;    // the frame just before the window
    TokenGrid warp;     // warp of that frame through the window's cameras
    TokenGrid targets;  // clean target patches (noised per sample)
};

std::vector<FinetuneWindow> build_finetune_windows(const ModelConfig& cfg, const ClipRecord& clip,
                                                   int stride) {
    const int t = static_cast<int>(clip.size());
    const int k = cfg.target_frames;
    if (t < k + 1) throw std::invalid_argument("finetune: source clip too short");
    std::vector<FinetuneWindow> windows;
    for (int s = 1; s + k <= t; s += stride) {
        FinetuneWindow w;
        std::vector<Image> hist(clip.frames.begin() + (s - 1), clip.frames.begin() + s);
        w.clean = patchify(hist, cfg.patch_h, cfg.patch_w);

        Trajectory target_traj;
        target_traj.intrinsics = clip.trajectory.intrinsics;
        target_traj.frame_rate = clip.trajectory.frame_rate;
        target_traj.poses.assign(clip.trajectory.poses.begin() + s,
                                 clip.trajectory.poses.begin() + s + k);
        WarpVideo wv = build_warp_video(clip, target_traj, s - 1);
        std::vector<Image> warp_frames;
        std::vector<Mask> warp_masks;
        for (WarpFrame& f : wv.frames) {
            warp_frames.push_back(std::move(f.rgb));
            warp_masks.push_back(std::move(f.valid));
        }
        w.warp = patchify(warp_frames, cfg.patch_h, cfg.patch_w);
        attach_support(w.warp, warp_masks);

        std::vector<Image> tgt(clip.frames.begin() + s, clip.frames.begin() + s + k);
        w.targets = patchify(tgt, cfg.patch_h, cfg.patch_w);
        windows.push_back(std::move(w));
    }
    return windows;
}

BuiltSample build_finetune_sample(const std::vector<FinetuneWindow>& windows,
                                  const FinetuneConfig& fc, uint64_t sample_seed, double tau_max) {
    Rng rng(sample_seed);
    const FinetuneWindow& w = windows[rng.next_int(static_cast<int>(windows.size()))];
    TokenGrid targets = w.targets;  // copy, then noise
    BuiltSample sample;
    sample.tau = rng.next_range(0.0, tau_max);
    sample.v_target = noise_targets(targets, sample.tau, rng);
    PackOptions opts;
    opts.mode = fc.mode;
    opts.tau = fc.tau;
    opts.history_frames = 1;
    sample.packed = pack_condition_stream(&w.clean, fc.mode == PackMode::text_only ? nullptr : &w.warp,
                                          targets, opts);
    return sample;
}

double mse_loss_and_grad(const ForwardResult& out, const std::vector<double>& v_target,
                         std::vector<double>& d_velocity) {
    const size_t count = out.velocity.size();
    if (count != v_target.size()) throw std::logic_error("loss: velocity size mismatch");
    d_velocity.resize(count);
    double loss = 0;
    const double inv = 1.0 / static_cast<double>(count);
    for (size_t i = 0; i < count; ++i) {
        double d = out.velocity[i] - v_target[i];
        loss += d * d;
        d_velocity[i] = 2.0 * d * inv;
    }
    return loss * inv;
}

struct Adam {
    std::vector<Tensor*> params;
    std::vector<Tensor*> grads;
    std::vector<std::vector<double>> m, v;
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;

    Adam(std::vector<Tensor*> p, std::vector<Tensor*> g, double lr_) : params(std::move(p)), grads(std::move(g)), lr(lr_) {
        for (Tensor* tp : params) {
            m.emplace_back(tp->v.size(), 0.0);
            v.emplace_back(tp->v.size(), 0.0);
        }
    }

    void set_lr(double lr_) { lr = lr_; }

    void step() {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            double* p = params[i]->data();
            const double* g = grads[i]->data();
            double* mi = m[i].data();
            double* vi = v[i].data();
            const size_t count = params[i]->v.size();
            for (size_t j = 0; j < count; ++j) {
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + eps);
            }
        }
    }
};

void zero_grads(Grads& grads) {
    if (grads.has_base)
        for_each_tensor(grads.base, [](const std::string&, Tensor& t) {
            std::fill(t.v.begin(), t.v.end(), 0.0);
        });
    if (grads.has_lora)
        for_each_tensor(grads.lora, [](const std::string&, Tensor& t) {
            std::fill(t.v.begin(), t.v.end(), 0.0);
        });
}

}  // namespace

double TrainStats::initial_window_mean() const {
    size_t w = std::max<size_t>(1, loss_curve.size() / 10);
    double s = 0;
    for (size_t i = 0; i < w; ++i) s += loss_curve[i];
    return s / static_cast<double>(w);
}

double TrainStats::final_window_mean() const {
    size_t w = std::max<size_t>(1, loss_curve.size() / 10);
    double s = 0;
    for (size_t i = loss_curve.size() - w; i < loss_curve.size(); ++i) s += loss_curve[i];
    return s / static_cast<double>(w);
}

TrainStats train(ToyModel& model, std::span<const ClipRecord> dataset, const TrainConfig& config) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    model.cfg.validate();

    Grads grads = detail::make_grads(model, /*base=*/true, /*lora=*/false);
    Adam adam(detail::collect_tensors(model.params), detail::collect_tensors(grads.base), config.lr);

    TrainStats stats;
    Cache cache;
    std::vector<double> d_velocity;
    for (int iter = 0; iter < config.iters; ++iter) {
        zero_grads(grads);
        double loss_sum = 0;
        for (int b = 0; b < config.batch; ++b) {
            uint64_t s = derive_seed(config.seed, "pretrain_sample",
                                     static_cast<uint64_t>(iter) * config.batch + b);
            BuiltSample sample = build_pretrain_sample(model.cfg, dataset, config, s);
            RoleCounts rc = sequence_length_report(sample.packed);
            stats.role_totals.clean += rc.clean;
            stats.role_totals.warp += rc.warp;
            stats.role_totals.target += rc.target;
            ForwardResult out = detail::forward_cached(model, sample.packed, sample.tau, &cache);
            loss_sum += mse_loss_and_grad(out, sample.v_target, d_velocity);
            detail::backward(model, sample.packed, cache, d_velocity, grads);
        }
        double loss = loss_sum / config.batch;
        if (!std::isfinite(loss))
            throw std::runtime_error("train: diverged (non-finite loss) at iteration " +
                                     std::to_string(iter));
        detail::scale_grads(grads, 1.0 / config.batch);
        double warm = config.warmup_iters > 0
                          ? std::min(1.0, (iter + 1.0) / config.warmup_iters)
                          : 1.0;
        double decay = config.lr_floor +
                       (1.0 - config.lr_floor) *
                           0.5 * (1.0 + std::cos(3.14159265358979323846 * iter / config.iters));
        adam.set_lr(config.lr * warm * decay);
        adam.step();
        stats.loss_curve.push_back(loss);
    }
    return stats;
}

TrainStats lora_finetune(ToyModel& model, LoraAdapter& adapter, const ClipRecord& source,
                         const FinetuneConfig& config) {
    const LoraAdapter* previous = model.adapter;
    lora_mount(model, &adapter);

    std::vector<FinetuneWindow> windows = build_finetune_windows(model.cfg, source, config.window_stride);

    Grads grads = detail::make_grads(model, /*base=*/false, /*lora=*/true);
    Adam adam(detail::collect_tensors(adapter), detail::collect_tensors(grads.lora), config.lr);

    TrainStats stats;
    Cache cache;
    std::vector<double> d_velocity;
    for (int iter = 0; iter < config.iters; ++iter) {
        zero_grads(grads);
        uint64_t s = derive_seed(config.seed, "finetune_sample", static_cast<uint64_t>(iter));
        BuiltSample sample = build_finetune_sample(windows, config, s, 0.9);
        ForwardResult out = detail::forward_cached(model, sample.packed, sample.tau, &cache);
        double loss = mse_loss_and_grad(out, sample.v_target, d_velocity);
        if (!std::isfinite(loss))
            throw std::runtime_error("lora_finetune: diverged (non-finite loss) at iteration " +
                                     std::to_string(iter));
        detail::backward(model, sample.packed, cache, d_velocity, grads);
        adam.step();
        stats.loss_curve.push_back(loss);
    }

    lora_mount(model, previous);
    return stats;
}

double lora_gradient_max_rel_error(const ModelConfig& cfg, uint64_t seed, double fd_step) {
    cfg.validate();
    ToyModel model = init_model(cfg, derive_seed(seed, "fd_model"));
    LoraAdapter adapter = init_lora(cfg, 4, 4.0, derive_seed(seed, "fd_lora"));
    // the gradient path through B vanishes at B = 0, so give it random values
    {
        Rng lora_rng(derive_seed(seed, "fd_lora_b"));
        for (auto& blk : adapter.blocks)
            for (auto& pair : blk)
                for (double& v : pair.b.v) v = 0.1 * lora_rng.next_normal();
    }
    lora_mount(model, &adapter);

    // a small deterministic sample: random history, warp with random masks,
    // random targets
    Rng rng(derive_seed(seed, "fd_sample"));
    const int w = cfg.patch_w * 3, h = cfg.patch_h * 3;
    auto random_frames = [&](int count) {
        std::vector<Image> frames;
        for (int i = 0; i < count; ++i) {
            Image img(w, h, 3);
            for (float& v : img.data) v = static_cast<float>(rng.next_double());
            frames.push_back(std::move(img));
        }
        return frames;
    };
    std::vector<Image> hist = random_frames(1);
    std::vector<Image> warp_frames = random_frames(cfg.target_frames);
    std::vector<Image> tgt_frames = random_frames(cfg.target_frames);
    std::vector<Mask> masks;
    for (int i = 0; i < cfg.target_frames; ++i) {
        Mask m(w, h);
        for (auto& v : m.data) v = rng.next_bool(0.7) ? 1 : 0;
        masks.push_back(std::move(m));
    }
    TokenGrid clean = patchify(hist, cfg.patch_h, cfg.patch_w);
    TokenGrid warp = patchify(warp_frames, cfg.patch_h, cfg.patch_w);
    attach_support(warp, masks);
    TokenGrid targets = patchify(tgt_frames, cfg.patch_h, cfg.patch_w);
    const double tau = 0.35;
    Rng noise_rng(derive_seed(seed, "fd_noise"));
    std::vector<double> v_target = noise_targets(targets, tau, noise_rng);
    PackOptions opts;
    opts.mode = PackMode::full;
    opts.tau = 0.5;
    opts.history_frames = 1;
    PackedSequence packed = pack_condition_stream(&clean, &warp, targets, opts);

    auto loss_fn = [&]() {
        ForwardResult out = forward(model, packed, tau);
        double loss = 0;
        for (size_t i = 0; i < out.velocity.size(); ++i) {
            double d = out.velocity[i] - v_target[i];
            loss += d * d;
        }
        return loss / static_cast<double>(out.velocity.size());
    };

    Grads grads = detail::make_grads(model, false, true);
    {
        Cache cache;
        ForwardResult out = detail::forward_cached(model, packed, tau, &cache);
        std::vector<double> d_velocity;
        mse_loss_and_grad(out, v_target, d_velocity);
        detail::backward(model, packed, cache, d_velocity, grads);
    }

    double max_rel = 0;
    std::vector<Tensor*> params = detail::collect_tensors(adapter);
    std::vector<Tensor*> analytic = detail::collect_tensors(grads.lora);
    for (size_t ti = 0; ti < params.size(); ++ti) {
        for (size_t j = 0; j < params[ti]->v.size(); ++j) {
            double saved = params[ti]->v[j];
            params[ti]->v[j] = saved + fd_step;
            double lp = loss_fn();
            params[ti]->v[j] = saved - fd_step;
            double lm = loss_fn();
            params[ti]->v[j] = saved;
            double fd = (lp - lm) / (2.0 * fd_step);
            double an = analytic[ti]->v[j];
            double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    lora_mount(model, nullptr);
    return max_rel;
}

std::vector<Image> sample_chunk(const ToyModel& model, const SampleConditioning& cond, int steps,
                                uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("sample_chunk: steps must be >= 1");
    const ModelConfig& cfg = model.cfg;
    if (cond.width % cfg.patch_w != 0 || cond.height % cfg.patch_h != 0)
        throw std::invalid_argument("sample_chunk: resolution not divisible by patch size");

    TokenGrid targets;
    targets.frames = cond.frames;
    targets.rows = cond.height / cfg.patch_h;
    targets.cols = cond.width / cfg.patch_w;
    targets.patch_h = cfg.patch_h;
    targets.patch_w = cfg.patch_w;
    targets.token_dim = cfg.patch_dim();
    const int count = targets.frames * targets.rows * targets.cols;
    targets.support.assign(count, 1.0f);
    for (int f = 0; f < targets.frames; ++f)
        for (int r = 0; r < targets.rows; ++r)
            for (int c = 0; c < targets.cols; ++c) targets.coords.push_back({f, r, c});

    const size_t elements = static_cast<size_t>(count) * targets.token_dim;
    std::vector<double> x(elements);
    Rng rng(derive_seed(seed, "chunk_noise"));
    for (double& v : x) v = rng.next_normal();

    PackOptions opts;
    opts.mode = cond.mode;
    opts.tau = cond.tau;
    opts.history_frames = cond.history_frames;

    targets.tokens.resize(elements);
    const double dt = 1.0 / steps;
    detail::Cache scratch;  // reused across steps so buffers allocate once
    for (int step = 0; step < steps; ++step) {
        const double tau = static_cast<double>(step) * dt;
        for (size_t i = 0; i < elements; ++i) targets.tokens[i] = static_cast<float>(x[i]);
        PackedSequence packed = pack_condition_stream(cond.clean_history, cond.warp, targets, opts);
        ForwardResult out = detail::forward_cached(model, packed, tau, &scratch);
        if (out.velocity.size() != elements)
            throw std::logic_error("sample_chunk: velocity size mismatch");
        for (size_t i = 0; i < elements; ++i) x[i] += dt * out.velocity[i];
    }

    for (size_t i = 0; i < elements; ++i)
        targets.tokens[i] = static_cast<float>(std::clamp(x[i], 0.0, 1.0));
    return unpatchify(targets);
}

std::vector<double> train_single_batch(ToyModel& model, const PackedSequence& packed,
                                       const std::vector<double>& v_target, double tau, int iters,
                                       double lr) {
    Grads grads = detail::make_grads(model, true, false);
    Adam adam(detail::collect_tensors(model.params), detail::collect_tensors(grads.base), lr);
    std::vector<double> losses;
    Cache cache;
    std::vector<double> d_velocity;
    for (int i = 0; i < iters; ++i) {
        zero_grads(grads);
        ForwardResult out = detail::forward_cached(model, packed, tau, &cache);
        losses.push_back(mse_loss_and_grad(out, v_target, d_velocity));
        detail::backward(model, packed, cache, d_velocity, grads);
        adam.step();
    }
    return losses;
}

}  // namespace wah
