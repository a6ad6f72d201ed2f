#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wah/image.hpp"
#include "wah/packing.hpp"
#include "wah/scene.hpp"

namespace wah {

struct ModelConfig {
    int dim = 128;
    int heads = 4;
    int blocks = 6;
    int patch_h = 8;
    int patch_w = 8;
    double rope_base = 10000.0;
    std::array<double, 3> rope_split = {0.5, 0.25, 0.25};  // t, r, c fractions of rotary pairs
    int target_frames = 8;
    int max_history_frames = 8;
    int sample_steps = 6;
    int ff_mult = 2;
    int time_bins = 32;

    int head_dim() const { return dim / heads; }
    int patch_dim() const { return patch_h * patch_w * 3; }
    void validate() const;
};

// Every field above must be present; missing keys are rejected.
ModelConfig model_config_from_json_text(const std::string& text);
std::string model_config_to_json_text(const ModelConfig& cfg);

struct Tensor {
    std::vector<double> v;
    std::vector<int> shape;

    static Tensor zeros(std::vector<int> s);
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;  // [dim][dim], output rows
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;  // [ff][dim], [ff]
    Tensor w2, b2;  // [dim][ff], [dim]
};

struct ModelParams {
    Tensor embed_w, embed_b;  // [dim][patch_dim], [dim]
    Tensor time_table;        // [time_bins][dim]
    Tensor time_gate;         // [time_bins], input-skip gate of the readout
    std::vector<BlockParams> blocks;
    Tensor final_g, final_b;  // [dim]
    Tensor out_w, out_b;      // [patch_dim][dim], [patch_dim]
};

// Low-rank update on the q/k/v/o projections: W x + (alpha/rank) * B (A x),
// with B zero-initialized so mounting is a no-op until trained.
struct LoraPair {
    Tensor a;  // [rank][dim]
    Tensor b;  // [dim][rank]
};

struct LoraAdapter {
    int rank = 32;
    double alpha = 32.0;
    std::vector<std::array<LoraPair, 4>> blocks;  // q, k, v, o per transformer block

    double scale() const { return alpha / rank; }
};

struct ToyModel {
    ModelConfig cfg;
    ModelParams params;
    const LoraAdapter* adapter = nullptr;       // mounted adapter, not owned
    mutable std::atomic<long> eval_count{0};    // forward invocations

    ToyModel() = default;
    ToyModel(const ToyModel& o)
        : cfg(o.cfg), params(o.params), adapter(o.adapter), eval_count(o.eval_count.load()) {}
    ToyModel& operator=(const ToyModel& o);
};

ToyModel init_model(const ModelConfig& cfg, uint64_t seed);
LoraAdapter init_lora(const ModelConfig& cfg, int rank, double alpha, uint64_t seed);

void lora_mount(ToyModel& model, const LoraAdapter* adapter);

// y[n x dim] = x W^T (+ bias) (+ lora path); exposed for the merge test.
void lora_projection(const Tensor& w, const LoraPair* lora, double scale, const double* x, int n,
                     double* y);

// Parameter traversal in a fixed, checkpoint-stable order.
void for_each_tensor(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const Tensor&)>& fn);
void for_each_tensor(LoraAdapter& a, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const LoraAdapter& a,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

uint64_t params_checksum(const ModelParams& p);

// ---------------------------------------------------------------------------
// Rotary embedding
// ---------------------------------------------------------------------------

// Pairs per axis derived from rope_split; theta_k = rope_base^(-2k/d_axis).
struct RopeLayout {
    int pairs_t = 0, pairs_r = 0, pairs_c = 0;
    std::vector<double> freq;  // per pair, concatenated t|r|c
    static RopeLayout make(const ModelConfig& cfg);
    int pairs() const { return pairs_t + pairs_r + pairs_c; }
    double angle(int pair, const RopeIndex& idx) const;
};

// Rotates one per-head vector in place (channels taken as consecutive pairs).
void rope_rotate(std::span<double> head_vec, const RopeIndex& idx, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Forward / flow matching
// ---------------------------------------------------------------------------

struct ForwardResult {
    std::vector<double> velocity;      // [n_target][patch_dim], sequence order
    std::vector<int> target_indices;   // positions of target tokens in the sequence
};

// Full self-attention over the packed sequence; readout only on noisy-target
// tokens; history tokens get no timestep embedding. noise_level in [0,1].
ForwardResult forward(const ToyModel& model, const PackedSequence& packed, double noise_level);

inline double flow_interpolate(double x0, double eps, double tau) { return (1.0 - tau) * eps + tau * x0; }
inline double flow_velocity(double x0, double eps) { return x0 - eps; }

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int iters = 2200;
    int batch = 1;
    double lr = 2e-3;
    uint64_t seed = 0;
    HistoryCorruption::Policy corruption = HistoryCorruption::Policy::drop_frames;
    double corruption_rate = 0.25;
    int min_history = 1;
    int max_history = 3;   // trainer-side cap, 0 = model's max_history_frames
    double tau_max = 0.9;  // the sampler never evaluates past 1 - 1/steps
    int warmup_iters = 50;
    double lr_floor = 0.1;  // cosine decay floor as a fraction of lr
};

struct TrainStats {
    std::vector<double> loss_curve;  // per iteration, batch mean
    RoleCounts role_totals;          // token roles seen across all samples

    double initial_window_mean() const;
    double final_window_mean() const;
};

// Clean-history continuation pretraining (text_only packing; no warp tokens).
// Aborts with the iteration number if the loss goes non-finite.
TrainStats train(ToyModel& model, std::span<const ClipRecord> dataset, const TrainConfig& config);

struct FinetuneConfig {
    int iters = 1000;
    double lr = 1e-3;
    uint64_t seed = 0;
    PackMode mode = PackMode::full;
    double tau = 0.5;
    int window_stride = 1;  // overlapping K-frame windows over the source clip
};

// Only the adapter receives gradient updates; base weights are frozen and
// base gradients are never accumulated.
TrainStats lora_finetune(ToyModel& model, LoraAdapter& adapter, const ClipRecord& source,
                         const FinetuneConfig& config);

// Central-finite-difference check of the analytic adapter gradients on a
// miniature configuration. Returns the worst relative error.
double lora_gradient_max_rel_error(const ModelConfig& cfg, uint64_t seed, double fd_step = 1e-5);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SampleConditioning {
    const TokenGrid* clean_history = nullptr;
    const TokenGrid* warp = nullptr;
    PackMode mode = PackMode::full;
    double tau = 0.5;
    int history_frames = -1;
    int frames = 8;  // target chunk length
    int width = 64, height = 64;
};

// Euler integration of the predicted velocity from pure noise to data in
// exactly `steps` model evaluations. No optimization, no guidance.
std::vector<Image> sample_chunk(const ToyModel& model, const SampleConditioning& cond, int steps,
                                uint64_t seed);

// Repeated Adam steps on one fixed batch; sanity hook for overfit checks.
std::vector<double> train_single_batch(ToyModel& model, const PackedSequence& packed,
                                       const std::vector<double>& v_target, double tau, int iters,
                                       double lr);

// ---------------------------------------------------------------------------
// Checkpoints: magic "WAHM"/"WAHL", versioned header, little-endian float32
// tensors with a name/shape table.
// ---------------------------------------------------------------------------

void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);
void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path);
LoraAdapter load_adapter(const std::filesystem::path& path);

}  // namespace wah
