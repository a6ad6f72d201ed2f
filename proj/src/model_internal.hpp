#pragma once

#include "wah/model.hpp"

namespace wah::detail {

struct BlockCache {
    std::vector<double> x_in, xn1, q_rot, k_rot, v, probs, attn, x_mid, xn2, u_ff, g_ff;
    std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::array<std::vector<double>, 4> lora_u;  // per projection, [n][rank]
};

struct Cache {
    int n = 0, ntgt = 0;
    std::vector<int> target_rows;
    std::vector<double> x_in_tokens;            // [n][patch_dim] embedding inputs
    std::vector<double> rope_cos, rope_sin;     // [n][pairs]
    std::vector<double> h;                      // hidden after the last block, [n][dim]
    std::vector<double> hn_tgt;                 // final-LN output on target rows
    std::vector<double> fln_mean, fln_rstd;     // [ntgt]
    std::vector<BlockCache> blocks;
    double tau = 0, time_w = 0;
    int time_i0 = 0, time_i1 = 0;
};

ForwardResult forward_cached(const ToyModel& model, const PackedSequence& packed, double tau,
                             Cache* cache);

struct Grads {
    bool has_base = false;
    ModelParams base;  // zero tensors shaped like the model
    bool has_lora = false;
    LoraAdapter lora;
};

Grads make_grads(const ToyModel& model, bool with_base, bool with_lora);
void scale_grads(Grads& g, double factor);

// d_velocity is [ntgt][patch_dim] in sequence order of target tokens.
void backward(const ToyModel& model, const PackedSequence& packed, const Cache& cache,
              const std::vector<double>& d_velocity, Grads& grads);

std::vector<Tensor*> collect_tensors(ModelParams& p);
std::vector<Tensor*> collect_tensors(LoraAdapter& a);

}  // namespace wah::detail
