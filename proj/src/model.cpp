#include "wah/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "model_internal.hpp"
#include "wah/kernels.hpp"
#include "wah/rng.hpp"

namespace wah {

using kernels::add_row_bias;
using kernels::matmul_nn;
using kernels::matmul_nt;
using kernels::matmul_tn;
using kernels::softmax_rows;

namespace {
constexpr double kLnEps = 1e-5;

double gelu(double u) {
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * u * (1.0 + std::tanh(c * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u) {
    const double c = 0.7978845608028654;
    double t = std::tanh(c * (u + 0.044715 * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * u * u);
}

void layer_norm(const double* x, const double* g, const double* b, int n, int dim, double* out,
                double* mean_out, double* rstd_out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* xi = x + static_cast<size_t>(i) * dim;
        double* oi = out + static_cast<size_t>(i) * dim;
        double mean = 0;
        for (int j = 0; j < dim; ++j) mean += xi[j];
        mean /= dim;
        double var = 0;
        for (int j = 0; j < dim; ++j) {
            double d = xi[j] - mean;
            var += d * d;
        }
        var /= dim;
        double rstd = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < dim; ++j) oi[j] = (xi[j] - mean) * rstd * g[j] + b[j];
        mean_out[i] = mean;
        rstd_out[i] = rstd;
    }
}

// dx for y = (x-mean)*rstd*g + b; also accumulates dg, db (serially, so the
// result does not depend on the thread count).
void layer_norm_backward(const double* x, const double* g, const double* mean, const double* rstd,
                         const double* dy, int n, int dim, double* dx, double* dg, double* db) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* xi = x + static_cast<size_t>(i) * dim;
        const double* dyi = dy + static_cast<size_t>(i) * dim;
        double* dxi = dx + static_cast<size_t>(i) * dim;
        double m1 = 0, m2 = 0;
        for (int j = 0; j < dim; ++j) {
            double xn = (xi[j] - mean[i]) * rstd[i];
            double dxn = dyi[j] * g[j];
            m1 += dxn;
            m2 += dxn * xn;
        }
        m1 /= dim;
        m2 /= dim;
        for (int j = 0; j < dim; ++j) {
            double xn = (xi[j] - mean[i]) * rstd[i];
            dxi[j] = rstd[i] * (dyi[j] * g[j] - m1 - xn * m2);
        }
    }
    if (dg && db) {
        for (int i = 0; i < n; ++i) {
            const double* xi = x + static_cast<size_t>(i) * dim;
            const double* dyi = dy + static_cast<size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) {
                dg[j] += dyi[j] * (xi[j] - mean[i]) * rstd[i];
                db[j] += dyi[j];
            }
        }
    }
}

void fill_normal(Tensor& t, uint64_t seed, double stddev) {
    Rng rng(seed);
    for (double& v : t.v) v = stddev * rng.next_normal();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config / parameters
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (dim <= 0 || heads <= 0 || blocks <= 0) throw std::invalid_argument("model config: non-positive sizes");
    if (dim % (2 * heads) != 0) throw std::invalid_argument("model config: dim must be divisible by 2*heads");
    if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("model config: bad patch size");
    double split_sum = rope_split[0] + rope_split[1] + rope_split[2];
    if (std::abs(split_sum - 1.0) > 1e-9) throw std::invalid_argument("model config: rope_split must sum to 1");
    if (target_frames <= 0 || max_history_frames < 0) throw std::invalid_argument("model config: bad frame counts");
    if (sample_steps < 1) throw std::invalid_argument("model config: sample_steps must be >= 1");
    if (ff_mult < 1 || time_bins < 2) throw std::invalid_argument("model config: bad ff_mult/time_bins");
}

ModelConfig model_config_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.dim = j.at("dim").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.blocks = j.at("blocks").get<int>();
    cfg.patch_h = j.at("patch_h").get<int>();
    cfg.patch_w = j.at("patch_w").get<int>();
    cfg.rope_base = j.at("rope_base").get<double>();
    auto split = j.at("rope_split").get<std::vector<double>>();
    if (split.size() != 3) throw std::invalid_argument("model config: rope_split must have 3 entries");
    cfg.rope_split = {split[0], split[1], split[2]};
    cfg.target_frames = j.at("target_frames").get<int>();
    cfg.max_history_frames = j.at("max_history_frames").get<int>();
    cfg.sample_steps = j.at("sample_steps").get<int>();
    cfg.ff_mult = j.at("ff_mult").get<int>();
    cfg.time_bins = j.at("time_bins").get<int>();
    cfg.validate();
    return cfg;
}

std::string model_config_to_json_text(const ModelConfig& cfg) {
    nlohmann::json j;
    j["dim"] = cfg.dim;
    j["heads"] = cfg.heads;
    j["blocks"] = cfg.blocks;
    j["patch_h"] = cfg.patch_h;
    j["patch_w"] = cfg.patch_w;
    j["rope_base"] = cfg.rope_base;
    j["rope_split"] = {cfg.rope_split[0], cfg.rope_split[1], cfg.rope_split[2]};
    j["target_frames"] = cfg.target_frames;
    j["max_history_frames"] = cfg.max_history_frames;
    j["sample_steps"] = cfg.sample_steps;
    j["ff_mult"] = cfg.ff_mult;
    j["time_bins"] = cfg.time_bins;
    return j.dump(2);
}

Tensor Tensor::zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    int64_t count = 1;
    for (int d : t.shape) count *= d;
    t.v.assign(static_cast<size_t>(count), 0.0);
    return t;
}

ToyModel& ToyModel::operator=(const ToyModel& o) {
    cfg = o.cfg;
    params = o.params;
    adapter = o.adapter;
    eval_count.store(o.eval_count.load());
    return *this;
}

void for_each_tensor(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embed_w", p.embed_w);
    fn("embed_b", p.embed_b);
    fn("time_table", p.time_table);
    fn("time_gate", p.time_gate);
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        std::string pre = "block" + std::to_string(i) + ".";
        BlockParams& b = p.blocks[i];
        fn(pre + "ln1_g", b.ln1_g);
        fn(pre + "ln1_b", b.ln1_b);
        fn(pre + "wq", b.wq);
        fn(pre + "wk", b.wk);
        fn(pre + "wv", b.wv);
        fn(pre + "wo", b.wo);
        fn(pre + "ln2_g", b.ln2_g);
        fn(pre + "ln2_b", b.ln2_b);
        fn(pre + "w1", b.w1);
        fn(pre + "b1", b.b1);
        fn(pre + "w2", b.w2);
        fn(pre + "b2", b.b2);
    }
    fn("final_g", p.final_g);
    fn("final_b", p.final_b);
    fn("out_w", p.out_w);
    fn("out_b", p.out_b);
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_tensor(const_cast<ModelParams&>(p),
                    [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void for_each_tensor(LoraAdapter& a, const std::function<void(const std::string&, Tensor&)>& fn) {
    static const char* proj[4] = {"q", "k", "v", "o"};
    for (size_t i = 0; i < a.blocks.size(); ++i)
        for (int p = 0; p < 4; ++p) {
            std::string pre = "block" + std::to_string(i) + "." + proj[p] + ".";
            fn(pre + "a", a.blocks[i][p].a);
            fn(pre + "b", a.blocks[i][p].b);
        }
}

void for_each_tensor(const LoraAdapter& a,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_tensor(const_cast<LoraAdapter&>(a),
                    [&](const std::string& name, Tensor& t) { fn(name, t); });
}

uint64_t params_checksum(const ModelParams& p) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for_each_tensor(p, [&](const std::string&, const Tensor& t) {
        for (double v : t.v) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            h ^= bits;
            h *= 0x100000001b3ULL;
        }
    });
    return h;
}

ToyModel init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;
    const int dim = cfg.dim, pd = cfg.patch_dim(), ff = cfg.ff_mult * dim;

    m.params.embed_w = Tensor::zeros({dim, pd});
    m.params.embed_b = Tensor::zeros({dim});
    m.params.time_table = Tensor::zeros({cfg.time_bins, dim});
    m.params.time_gate = Tensor::zeros({cfg.time_bins});
    m.params.final_g = Tensor::zeros({dim});
    m.params.final_b = Tensor::zeros({dim});
    m.params.out_w = Tensor::zeros({pd, dim});
    m.params.out_b = Tensor::zeros({pd});
    m.params.blocks.resize(cfg.blocks);
    for (BlockParams& b : m.params.blocks) {
        b.ln1_g = Tensor::zeros({dim});
        b.ln1_b = Tensor::zeros({dim});
        b.wq = Tensor::zeros({dim, dim});
        b.wk = Tensor::zeros({dim, dim});
        b.wv = Tensor::zeros({dim, dim});
        b.wo = Tensor::zeros({dim, dim});
        b.ln2_g = Tensor::zeros({dim});
        b.ln2_b = Tensor::zeros({dim});
        b.w1 = Tensor::zeros({ff, dim});
        b.b1 = Tensor::zeros({ff});
        b.w2 = Tensor::zeros({dim, ff});
        b.b2 = Tensor::zeros({dim});
    }

    for_each_tensor(m.params, [&](const std::string& name, Tensor& t) {
        uint64_t s = derive_seed(seed, name);
        if (name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "final_g") {
            std::fill(t.v.begin(), t.v.end(), 1.0);
        } else if (name.ends_with("_b") || name.ends_with(".b1") || name.ends_with(".b2")) {
            // biases stay zero
        } else if (name == "embed_w") {
            fill_normal(t, s, 1.0 / std::sqrt(static_cast<double>(pd)));
        } else if (name == "time_table") {
            // comparable in scale to the token embeddings so the noise level
            // is visible to the first block from the start
            fill_normal(t, s, 0.5);
        } else if (name == "time_gate") {
            // prior gate: at noise level tau the input keeps roughly a tau
            // share of the clean patch
            for (int i = 0; i < cfg.time_bins; ++i)
                t.v[i] = static_cast<double>(i) / (cfg.time_bins - 1);
        } else if (name.ends_with(".w2")) {
            fill_normal(t, s, 1.0 / std::sqrt(static_cast<double>(ff)));
        } else if (name == "out_w") {
            fill_normal(t, s, 1.0 / std::sqrt(static_cast<double>(dim)));
        } else {
            fill_normal(t, s, 1.0 / std::sqrt(static_cast<double>(dim)));
        }
    });
    return m;
}

LoraAdapter init_lora(const ModelConfig& cfg, int rank, double alpha, uint64_t seed) {
    if (rank < 1) throw std::invalid_argument("lora: rank must be >= 1");
    LoraAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    a.blocks.resize(cfg.blocks);
    for (int i = 0; i < cfg.blocks; ++i)
        for (int p = 0; p < 4; ++p) {
            a.blocks[i][p].a = Tensor::zeros({rank, cfg.dim});
            a.blocks[i][p].b = Tensor::zeros({cfg.dim, rank});  // B starts at zero
            fill_normal(a.blocks[i][p].a, derive_seed(seed, "lora_a", i * 4 + p),
                        1.0 / std::sqrt(static_cast<double>(cfg.dim)));
        }
    return a;
}

void lora_mount(ToyModel& model, const LoraAdapter* adapter) {
    if (adapter) {
        if (static_cast<int>(adapter->blocks.size()) != model.cfg.blocks)
            throw std::invalid_argument("lora_mount: adapter block count does not match model");
        for (const auto& blk : adapter->blocks)
            for (const LoraPair& p : blk)
                if (p.a.shape[1] != model.cfg.dim || p.b.shape[0] != model.cfg.dim ||
                    p.a.shape[0] != adapter->rank || p.b.shape[1] != adapter->rank)
                    throw std::invalid_argument("lora_mount: adapter shapes do not match model");
    }
    model.adapter = adapter;
}

void lora_projection(const Tensor& w, const LoraPair* lora, double scale, const double* x, int n,
                     double* y) {
    const int out_dim = w.shape[0], in_dim = w.shape[1];
    matmul_nt(x, in_dim, w.data(), in_dim, y, out_dim, n, in_dim, out_dim);
    if (lora) {
        const int r = lora->a.shape[0];
        std::vector<double> u(static_cast<size_t>(n) * r);
        matmul_nt(x, in_dim, lora->a.data(), in_dim, u.data(), r, n, in_dim, r);
        for (double& e : u) e *= scale;
        matmul_nt(u.data(), r, lora->b.data(), r, y, out_dim, n, r, out_dim, /*accumulate=*/true);
    }
}

// ---------------------------------------------------------------------------
// RoPE
// ---------------------------------------------------------------------------

RopeLayout RopeLayout::make(const ModelConfig& cfg) {
    RopeLayout l;
    const int pairs = cfg.head_dim() / 2;
    l.pairs_t = static_cast<int>(std::floor(pairs * cfg.rope_split[0]));
    l.pairs_r = static_cast<int>(std::floor(pairs * cfg.rope_split[1]));
    l.pairs_c = pairs - l.pairs_t - l.pairs_r;
    l.freq.resize(pairs);
    auto fill = [&](int start, int count) {
        for (int k = 0; k < count; ++k)
            l.freq[start + k] = std::pow(cfg.rope_base, -2.0 * k / (2.0 * count));
    };
    fill(0, l.pairs_t);
    fill(l.pairs_t, l.pairs_r);
    fill(l.pairs_t + l.pairs_r, l.pairs_c);
    return l;
}

double RopeLayout::angle(int pair, const RopeIndex& idx) const {
    int axis_value;
    if (pair < pairs_t) axis_value = idx.t;
    else if (pair < pairs_t + pairs_r) axis_value = idx.r;
    else axis_value = idx.c;
    return freq[pair] * axis_value;
}

void rope_rotate(std::span<double> head_vec, const RopeIndex& idx, const ModelConfig& cfg) {
    if (static_cast<int>(head_vec.size()) != cfg.head_dim())
        throw std::invalid_argument("rope_rotate: vector size must equal head_dim");
    RopeLayout layout = RopeLayout::make(cfg);
    for (int p = 0; p < layout.pairs(); ++p) {
        double ang = layout.angle(p, idx);
        double c = std::cos(ang), s = std::sin(ang);
        double x = head_vec[2 * p], y = head_vec[2 * p + 1];
        head_vec[2 * p] = x * c - y * s;
        head_vec[2 * p + 1] = x * s + y * c;
    }
}

namespace {

// in-place rotation of q or k, [n][dim], all heads, sign = +1 fwd / -1 inverse
void rotate_all(double* x, int n, int dim, int heads, const std::vector<double>& cs,
                const std::vector<double>& sn, int pairs, double sign) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* ci = cs.data() + static_cast<size_t>(i) * pairs;
        const double* si = sn.data() + static_cast<size_t>(i) * pairs;
        double* xi = x + static_cast<size_t>(i) * dim;
        const int hd = dim / heads;
        for (int h = 0; h < heads; ++h) {
            double* base = xi + h * hd;
            for (int p = 0; p < pairs; ++p) {
                double c = ci[p], s = sign * si[p];
                double a = base[2 * p], b = base[2 * p + 1];
                base[2 * p] = a * c - b * s;
                base[2 * p + 1] = a * s + b * c;
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace detail {

ForwardResult forward_cached(const ToyModel& model, const PackedSequence& packed, double tau,
                             Cache* cache) {
    const ModelConfig& cfg = model.cfg;
    cfg.validate();
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("forward: noise level outside [0,1]");
    if (packed.patch_h != cfg.patch_h || packed.patch_w != cfg.patch_w)
        throw std::invalid_argument("forward: packed patch size does not match model config");

    const int n = packed.count();
    const int dim = cfg.dim, pd = cfg.patch_dim(), heads = cfg.heads, hd = cfg.head_dim();
    const int ff = cfg.ff_mult * dim;
    const int tokens_per_frame = packed.target_rows * packed.target_cols;
    const int max_tokens = (cfg.max_history_frames + 3 * cfg.target_frames) * tokens_per_frame;
    if (n > max_tokens)
        throw std::invalid_argument("forward: sequence of " + std::to_string(n) +
                                    " tokens exceeds configured maximum " + std::to_string(max_tokens));

    model.eval_count.fetch_add(1, std::memory_order_relaxed);

    Cache local;
    Cache& c = cache ? *cache : local;
    c.n = n;
    c.tau = tau;
    c.target_rows.clear();
    for (int i = 0; i < n; ++i)
        if (packed.roles[i] == TokenRole::noisy_target) c.target_rows.push_back(i);
    c.ntgt = static_cast<int>(c.target_rows.size());

    // embedding inputs: fused tokens embed as the sum of their two halves
    c.x_in_tokens.assign(static_cast<size_t>(n) * pd, 0.0);
    for (int i = 0; i < n; ++i) {
        std::span<const float> tok = packed.token(i);
        double* row = c.x_in_tokens.data() + static_cast<size_t>(i) * pd;
        if (static_cast<int>(tok.size()) == pd) {
            for (int j = 0; j < pd; ++j) row[j] = tok[j];
        } else if (static_cast<int>(tok.size()) == 2 * pd) {
            for (int j = 0; j < pd; ++j) row[j] = static_cast<double>(tok[j]) + tok[pd + j];
        } else {
            throw std::invalid_argument("forward: token dimension does not match patch size");
        }
    }

    std::vector<double> h(static_cast<size_t>(n) * dim);
    matmul_nt(c.x_in_tokens.data(), pd, model.params.embed_w.data(), pd, h.data(), dim, n, pd, dim);
    add_row_bias(h.data(), model.params.embed_b.data(), n, dim);

    // timestep embedding (linear interpolation between bins) on target rows
    {
        double a = tau * (cfg.time_bins - 1);
        int i0 = std::min(static_cast<int>(a), cfg.time_bins - 1);
        int i1 = std::min(i0 + 1, cfg.time_bins - 1);
        double w = a - i0;
        c.time_i0 = i0;
        c.time_i1 = i1;
        c.time_w = w;
        const double* t0 = model.params.time_table.data() + static_cast<size_t>(i0) * dim;
        const double* t1 = model.params.time_table.data() + static_cast<size_t>(i1) * dim;
        for (int row : c.target_rows) {
            double* hr = h.data() + static_cast<size_t>(row) * dim;
            for (int j = 0; j < dim; ++j) hr[j] += (1.0 - w) * t0[j] + w * t1[j];
        }
    }

    // rope tables, shared by every head and block
    RopeLayout layout = RopeLayout::make(cfg);
    const int pairs = layout.pairs();
    c.rope_cos.resize(static_cast<size_t>(n) * pairs);
    c.rope_sin.resize(static_cast<size_t>(n) * pairs);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < pairs; ++p) {
            double ang = layout.angle(p, packed.rope[i]);
            c.rope_cos[static_cast<size_t>(i) * pairs + p] = std::cos(ang);
            c.rope_sin[static_cast<size_t>(i) * pairs + p] = std::sin(ang);
        }

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double lora_scale = model.adapter ? model.adapter->scale() : 0.0;
    c.blocks.resize(cfg.blocks);

    for (int bi = 0; bi < cfg.blocks; ++bi) {
        const BlockParams& bp = model.params.blocks[bi];
        BlockCache& bc = c.blocks[bi];
        bc.x_in = h;

        bc.ln1_mean.resize(n);
        bc.ln1_rstd.resize(n);
        bc.xn1.resize(static_cast<size_t>(n) * dim);
        layer_norm(h.data(), bp.ln1_g.data(), bp.ln1_b.data(), n, dim, bc.xn1.data(),
                   bc.ln1_mean.data(), bc.ln1_rstd.data());

        auto project = [&](const Tensor& w, int proj_idx, const double* x, std::vector<double>& out) {
            out.resize(static_cast<size_t>(n) * dim);
            matmul_nt(x, dim, w.data(), dim, out.data(), dim, n, dim, dim);
            if (model.adapter) {
                const LoraPair& lp = model.adapter->blocks[bi][proj_idx];
                const int r = model.adapter->rank;
                auto& u = bc.lora_u[proj_idx];
                u.resize(static_cast<size_t>(n) * r);
                matmul_nt(x, dim, lp.a.data(), dim, u.data(), r, n, dim, r);
                for (double& e : u) e *= lora_scale;
                matmul_nt(u.data(), r, lp.b.data(), r, out.data(), dim, n, r, dim, true);
            }
        };

        project(bp.wq, 0, bc.xn1.data(), bc.q_rot);
        project(bp.wk, 1, bc.xn1.data(), bc.k_rot);
        project(bp.wv, 2, bc.xn1.data(), bc.v);
        rotate_all(bc.q_rot.data(), n, dim, heads, c.rope_cos, c.rope_sin, pairs, 1.0);
        rotate_all(bc.k_rot.data(), n, dim, heads, c.rope_cos, c.rope_sin, pairs, 1.0);

        bc.attn.assign(static_cast<size_t>(n) * dim, 0.0);
        bc.probs.resize(static_cast<size_t>(heads) * n * n);
        std::vector<double> qh(static_cast<size_t>(n) * hd), kh(static_cast<size_t>(n) * hd);
        for (int hh = 0; hh < heads; ++hh) {
            // contiguous per-head copies keep the scores matmul cache-resident
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i) {
                std::memcpy(qh.data() + static_cast<size_t>(i) * hd,
                            bc.q_rot.data() + static_cast<size_t>(i) * dim + hh * hd,
                            sizeof(double) * hd);
                std::memcpy(kh.data() + static_cast<size_t>(i) * hd,
                            bc.k_rot.data() + static_cast<size_t>(i) * dim + hh * hd,
                            sizeof(double) * hd);
            }
            double* p = bc.probs.data() + static_cast<size_t>(hh) * n * n;
            matmul_nt(qh.data(), hd, kh.data(), hd, p, n, n, hd, n);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i) {
                double* row = p + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) row[j] *= scale;
            }
            softmax_rows(p, n, n, n);
            matmul_nn(p, n, bc.v.data() + hh * hd, dim, bc.attn.data() + hh * hd, dim, n, n, hd);
        }

        std::vector<double> proj_out;
        project(bp.wo, 3, bc.attn.data(), proj_out);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            double* hi = h.data() + static_cast<size_t>(i) * dim;
            const double* oi = proj_out.data() + static_cast<size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) hi[j] += oi[j];
        }
        bc.x_mid = h;

        bc.ln2_mean.resize(n);
        bc.ln2_rstd.resize(n);
        bc.xn2.resize(static_cast<size_t>(n) * dim);
        layer_norm(h.data(), bp.ln2_g.data(), bp.ln2_b.data(), n, dim, bc.xn2.data(),
                   bc.ln2_mean.data(), bc.ln2_rstd.data());

        bc.u_ff.resize(static_cast<size_t>(n) * ff);
        matmul_nt(bc.xn2.data(), dim, bp.w1.data(), dim, bc.u_ff.data(), ff, n, dim, ff);
        add_row_bias(bc.u_ff.data(), bp.b1.data(), n, ff);
        bc.g_ff.resize(bc.u_ff.size());
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ff; ++j) {
                size_t idx = static_cast<size_t>(i) * ff + j;
                bc.g_ff[idx] = gelu(bc.u_ff[idx]);
            }

        std::vector<double> y(static_cast<size_t>(n) * dim);
        matmul_nt(bc.g_ff.data(), ff, bp.w2.data(), ff, y.data(), dim, n, ff, dim);
        add_row_bias(y.data(), bp.b2.data(), n, dim);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            double* hi = h.data() + static_cast<size_t>(i) * dim;
            const double* yi = y.data() + static_cast<size_t>(i) * dim;
            for (int j = 0; j < dim; ++j) hi[j] += yi[j];
        }

        if (!cache) bc = BlockCache{};  // no backward pass coming, free the activations
    }

    // readout on target rows only
    const int ntgt = c.ntgt;
    std::vector<double> h_tgt(static_cast<size_t>(ntgt) * dim);
    for (int i = 0; i < ntgt; ++i)
        std::memcpy(h_tgt.data() + static_cast<size_t>(i) * dim,
                    h.data() + static_cast<size_t>(c.target_rows[i]) * dim, sizeof(double) * dim);
    c.h = std::move(h);

    c.fln_mean.resize(ntgt);
    c.fln_rstd.resize(ntgt);
    c.hn_tgt.resize(static_cast<size_t>(ntgt) * dim);
    layer_norm(h_tgt.data(), model.params.final_g.data(), model.params.final_b.data(), ntgt, dim,
               c.hn_tgt.data(), c.fln_mean.data(), c.fln_rstd.data());

    // x0-parameterized velocity head: the trunk predicts the clean patch,
    // the noisy input passes through analytically as (x0_hat - x_tau)/(1-tau).
    ForwardResult result;
    result.target_indices = c.target_rows;
    result.velocity.resize(static_cast<size_t>(ntgt) * pd);
    matmul_nt(c.hn_tgt.data(), dim, model.params.out_w.data(), dim, result.velocity.data(), pd,
              ntgt, dim, pd);
    add_row_bias(result.velocity.data(), model.params.out_b.data(), ntgt, pd);
    {
        double gate = (1.0 - c.time_w) * model.params.time_gate.v[c.time_i0] +
                      c.time_w * model.params.time_gate.v[c.time_i1];
        const double inv_rem = 1.0 / std::max(1.0 - tau, 0.05);
        for (int i = 0; i < ntgt; ++i) {
            std::span<const float> tok = packed.token(c.target_rows[i]);
            double* vi = result.velocity.data() + static_cast<size_t>(i) * pd;
            for (int j = 0; j < pd; ++j) {
                double x_tau = tok[j];  // noisy half only, even in chfusion
                double x0_hat = vi[j] + gate * x_tau;
                vi[j] = (x0_hat - x_tau) * inv_rem;
            }
        }
    }
    return result;
}

Grads make_grads(const ToyModel& model, bool with_base, bool with_lora) {
    Grads g;
    g.has_base = with_base;
    if (with_base) {
        // zero tensors with identical shapes
        const ModelParams& p = model.params;
        g.base.embed_w = Tensor::zeros(p.embed_w.shape);
        g.base.embed_b = Tensor::zeros(p.embed_b.shape);
        g.base.time_table = Tensor::zeros(p.time_table.shape);
        g.base.time_gate = Tensor::zeros(p.time_gate.shape);
        g.base.final_g = Tensor::zeros(p.final_g.shape);
        g.base.final_b = Tensor::zeros(p.final_b.shape);
        g.base.out_w = Tensor::zeros(p.out_w.shape);
        g.base.out_b = Tensor::zeros(p.out_b.shape);
        g.base.blocks.resize(p.blocks.size());
        for (size_t i = 0; i < p.blocks.size(); ++i) {
            const BlockParams& b = p.blocks[i];
            BlockParams& gb = g.base.blocks[i];
            gb.ln1_g = Tensor::zeros(b.ln1_g.shape);
            gb.ln1_b = Tensor::zeros(b.ln1_b.shape);
            gb.wq = Tensor::zeros(b.wq.shape);
            gb.wk = Tensor::zeros(b.wk.shape);
            gb.wv = Tensor::zeros(b.wv.shape);
            gb.wo = Tensor::zeros(b.wo.shape);
            gb.ln2_g = Tensor::zeros(b.ln2_g.shape);
            gb.ln2_b = Tensor::zeros(b.ln2_b.shape);
            gb.w1 = Tensor::zeros(b.w1.shape);
            gb.b1 = Tensor::zeros(b.b1.shape);
            gb.w2 = Tensor::zeros(b.w2.shape);
            gb.b2 = Tensor::zeros(b.b2.shape);
        }
    }
    g.has_lora = with_lora;
    if (with_lora) {
        if (!model.adapter) throw std::logic_error("make_grads: no adapter mounted");
        g.lora.rank = model.adapter->rank;
        g.lora.alpha = model.adapter->alpha;
        g.lora.blocks.resize(model.adapter->blocks.size());
        for (size_t i = 0; i < g.lora.blocks.size(); ++i)
            for (int p = 0; p < 4; ++p) {
                g.lora.blocks[i][p].a = Tensor::zeros(model.adapter->blocks[i][p].a.shape);
                g.lora.blocks[i][p].b = Tensor::zeros(model.adapter->blocks[i][p].b.shape);
            }
    }
    return g;
}

void scale_grads(Grads& g, double factor) {
    if (g.has_base)
        for_each_tensor(g.base, [&](const std::string&, Tensor& t) {
            for (double& v : t.v) v *= factor;
        });
    if (g.has_lora)
        for_each_tensor(g.lora, [&](const std::string&, Tensor& t) {
            for (double& v : t.v) v *= factor;
        });
}

void backward(const ToyModel& model, const PackedSequence& packed, const Cache& c,
              const std::vector<double>& d_velocity, Grads& grads) {
    const ModelConfig& cfg = model.cfg;
    const int n = c.n, ntgt = c.ntgt;
    const int dim = cfg.dim, pd = cfg.patch_dim(), heads = cfg.heads, hd = cfg.head_dim();
    const int ff = cfg.ff_mult * dim;
    const int pairs = RopeLayout::make(cfg).pairs();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double lora_scale = model.adapter ? model.adapter->scale() : 0.0;

    // velocity head backward: v = (out + gate*x_tau - x_tau)/(1-tau)
    const double inv_rem = 1.0 / std::max(1.0 - c.tau, 0.05);
    std::vector<double> d_out(d_velocity.size());
    double d_gate = 0;
    for (int i = 0; i < ntgt; ++i) {
        std::span<const float> tok = packed.token(c.target_rows[i]);
        for (int j = 0; j < pd; ++j) {
            size_t idx = static_cast<size_t>(i) * pd + j;
            d_out[idx] = d_velocity[idx] * inv_rem;
            d_gate += d_velocity[idx] * inv_rem * tok[j];
        }
    }
    if (grads.has_base) {
        grads.base.time_gate.v[c.time_i0] += (1.0 - c.time_w) * d_gate;
        grads.base.time_gate.v[c.time_i1] += c.time_w * d_gate;
    }

    std::vector<double> dhn(static_cast<size_t>(ntgt) * dim);
    matmul_nn(d_out.data(), pd, model.params.out_w.data(), dim, dhn.data(), dim, ntgt, pd, dim);
    if (grads.has_base) {
        matmul_tn(d_out.data(), pd, c.hn_tgt.data(), dim, grads.base.out_w.data(), dim, pd,
                  ntgt, dim, true);
        for (int i = 0; i < ntgt; ++i)
            for (int j = 0; j < pd; ++j)
                grads.base.out_b.v[j] += d_out[static_cast<size_t>(i) * pd + j];
    }

    // final layer norm backward (inputs were the target rows of c.h)
    std::vector<double> h_tgt(static_cast<size_t>(ntgt) * dim);
    for (int i = 0; i < ntgt; ++i)
        std::memcpy(h_tgt.data() + static_cast<size_t>(i) * dim,
                    c.h.data() + static_cast<size_t>(c.target_rows[i]) * dim, sizeof(double) * dim);
    std::vector<double> dh_tgt(static_cast<size_t>(ntgt) * dim);
    layer_norm_backward(h_tgt.data(), model.params.final_g.data(), c.fln_mean.data(),
                        c.fln_rstd.data(), dhn.data(), ntgt, dim, dh_tgt.data(),
                        grads.has_base ? grads.base.final_g.data() : nullptr,
                        grads.has_base ? grads.base.final_b.data() : nullptr);

    std::vector<double> dx(static_cast<size_t>(n) * dim, 0.0);
    for (int i = 0; i < ntgt; ++i)
        std::memcpy(dx.data() + static_cast<size_t>(c.target_rows[i]) * dim,
                    dh_tgt.data() + static_cast<size_t>(i) * dim, sizeof(double) * dim);

    std::vector<double> du(static_cast<size_t>(n) * ff);
    std::vector<double> dxn(static_cast<size_t>(n) * dim);
    std::vector<double> dq(static_cast<size_t>(n) * dim), dk(static_cast<size_t>(n) * dim),
        dv(static_cast<size_t>(n) * dim), dattn(static_cast<size_t>(n) * dim);
    std::vector<double> ds(static_cast<size_t>(n) * n);

    for (int bi = cfg.blocks - 1; bi >= 0; --bi) {
        const BlockParams& bp = model.params.blocks[bi];
        const BlockCache& bc = c.blocks[bi];
        BlockParams* gb = grads.has_base ? &grads.base.blocks[bi] : nullptr;

        // ---- feed-forward backward; dx currently holds d(x_out)
        matmul_nn(dx.data(), dim, bp.w2.data(), ff, du.data(), ff, n, dim, ff);  // dG
        if (gb) {
            matmul_tn(dx.data(), dim, bc.g_ff.data(), ff, gb->w2.data(), ff, dim, n, ff, true);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dim; ++j) gb->b2.v[j] += dx[static_cast<size_t>(i) * dim + j];
        }
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ff; ++j) {
                size_t idx = static_cast<size_t>(i) * ff + j;
                du[idx] *= gelu_grad(bc.u_ff[idx]);
            }
        if (gb) {
            matmul_tn(du.data(), ff, bc.xn2.data(), dim, gb->w1.data(), dim, ff, n, dim, true);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < ff; ++j) gb->b1.v[j] += du[static_cast<size_t>(i) * ff + j];
        }
        matmul_nn(du.data(), ff, bp.w1.data(), dim, dxn.data(), dim, n, ff, dim);
        {
            std::vector<double> dmid(static_cast<size_t>(n) * dim);
            layer_norm_backward(bc.x_mid.data(), bp.ln2_g.data(), bc.ln2_mean.data(),
                                bc.ln2_rstd.data(), dxn.data(), n, dim, dmid.data(),
                                gb ? gb->ln2_g.data() : nullptr, gb ? gb->ln2_b.data() : nullptr);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dim; ++j)
                    dx[static_cast<size_t>(i) * dim + j] += dmid[static_cast<size_t>(i) * dim + j];
        }

        // ---- attention backward; dx now holds d(x_mid)
        auto lora_backward = [&](int proj_idx, const double* dy, const double* x_in,
                                 std::vector<double>* dx_accum) {
            if (!model.adapter) return;
            const LoraPair& lp = model.adapter->blocks[bi][proj_idx];
            const int r = model.adapter->rank;
            // forward was y += u B^T with u = scale * x A^T
            std::vector<double> dub(static_cast<size_t>(n) * r);
            matmul_nn(dy, dim, lp.b.data(), r, dub.data(), r, n, dim, r);  // d u
            if (grads.has_lora) {
                LoraPair& gp = grads.lora.blocks[bi][proj_idx];
                matmul_tn(dy, dim, bc.lora_u[proj_idx].data(), r, gp.b.data(), r, dim, n, r, true);
                std::vector<double> dus(dub);
                for (double& e : dus) e *= lora_scale;
                matmul_tn(dus.data(), r, x_in, dim, gp.a.data(), dim, r, n, dim, true);
            }
            if (dx_accum) {
                std::vector<double> dus(dub);
                for (double& e : dus) e *= lora_scale;
                matmul_nn(dus.data(), r, lp.a.data(), dim, dx_accum->data(), dim, n, r, dim, true);
            }
        };

        // wo projection: out = attn Wo^T (+ lora), residual added to x_in
        matmul_nn(dx.data(), dim, bp.wo.data(), dim, dattn.data(), dim, n, dim, dim);
        if (gb) matmul_tn(dx.data(), dim, bc.attn.data(), dim, gb->wo.data(), dim, dim, n, dim, true);
        lora_backward(3, dx.data(), bc.attn.data(), &dattn);

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int hh = 0; hh < heads; ++hh) {
            const double* p = bc.probs.data() + static_cast<size_t>(hh) * n * n;
            // dP = dOh Vh^T
            matmul_nt(dattn.data() + hh * hd, dim, bc.v.data() + hh * hd, dim, ds.data(), n, n, hd, n);
            // dVh = P^T dOh
            matmul_tn(p, n, dattn.data() + hh * hd, dim, dv.data() + hh * hd, dim, n, n, hd, true);
            // softmax backward into ds, then scale
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i) {
                const double* pi = p + static_cast<size_t>(i) * n;
                double* di = ds.data() + static_cast<size_t>(i) * n;
                double dot = 0;
                for (int j = 0; j < n; ++j) dot += di[j] * pi[j];
                for (int j = 0; j < n; ++j) di[j] = pi[j] * (di[j] - dot) * scale;
            }
            // dQrot = dS Krot ; dKrot = dS^T Qrot
            matmul_nn(ds.data(), n, bc.k_rot.data() + hh * hd, dim, dq.data() + hh * hd, dim, n, n, hd, true);
            matmul_tn(ds.data(), n, bc.q_rot.data() + hh * hd, dim, dk.data() + hh * hd, dim, n, n, hd, true);
        }
        rotate_all(dq.data(), n, dim, heads, c.rope_cos, c.rope_sin, pairs, -1.0);
        rotate_all(dk.data(), n, dim, heads, c.rope_cos, c.rope_sin, pairs, -1.0);

        // projections backward into dxn
        matmul_nn(dq.data(), dim, bp.wq.data(), dim, dxn.data(), dim, n, dim, dim);
        matmul_nn(dk.data(), dim, bp.wk.data(), dim, dxn.data(), dim, n, dim, dim, true);
        matmul_nn(dv.data(), dim, bp.wv.data(), dim, dxn.data(), dim, n, dim, dim, true);
        if (gb) {
            matmul_tn(dq.data(), dim, bc.xn1.data(), dim, gb->wq.data(), dim, dim, n, dim, true);
            matmul_tn(dk.data(), dim, bc.xn1.data(), dim, gb->wk.data(), dim, dim, n, dim, true);
            matmul_tn(dv.data(), dim, bc.xn1.data(), dim, gb->wv.data(), dim, dim, n, dim, true);
        }
        lora_backward(0, dq.data(), bc.xn1.data(), &dxn);
        lora_backward(1, dk.data(), bc.xn1.data(), &dxn);
        lora_backward(2, dv.data(), bc.xn1.data(), &dxn);

        {
            std::vector<double> dblk(static_cast<size_t>(n) * dim);
            layer_norm_backward(bc.x_in.data(), bp.ln1_g.data(), bc.ln1_mean.data(),
                                bc.ln1_rstd.data(), dxn.data(), n, dim, dblk.data(),
                                gb ? gb->ln1_g.data() : nullptr, gb ? gb->ln1_b.data() : nullptr);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dim; ++j)
                    dx[static_cast<size_t>(i) * dim + j] += dblk[static_cast<size_t>(i) * dim + j];
        }
    }

    // embedding + time table backward
    if (grads.has_base) {
        matmul_tn(dx.data(), dim, c.x_in_tokens.data(), pd, grads.base.embed_w.data(), pd, dim, n,
                  pd, true);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dim; ++j) grads.base.embed_b.v[j] += dx[static_cast<size_t>(i) * dim + j];
        double* t0 = grads.base.time_table.data() + static_cast<size_t>(c.time_i0) * dim;
        double* t1 = grads.base.time_table.data() + static_cast<size_t>(c.time_i1) * dim;
        for (int row : c.target_rows) {
            const double* dr = dx.data() + static_cast<size_t>(row) * dim;
            for (int j = 0; j < dim; ++j) {
                t0[j] += (1.0 - c.time_w) * dr[j];
                t1[j] += c.time_w * dr[j];
            }
        }
    }

}

std::vector<Tensor*> collect_tensors(ModelParams& p) {
    std::vector<Tensor*> out;
    for_each_tensor(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<Tensor*> collect_tensors(LoraAdapter& a) {
    std::vector<Tensor*> out;
    for_each_tensor(a, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

}  // namespace detail

ForwardResult forward(const ToyModel& model, const PackedSequence& packed, double noise_level) {
    return detail::forward_cached(model, packed, noise_level, nullptr);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    uint8_t b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
    std::vector<float> f(t.v.size());
    for (size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(t.v[i]);
    os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
}

std::pair<std::string, Tensor> read_tensor(std::istream& is) {
    uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
    uint32_t ndim = read_u32(is);
    std::vector<int> shape(ndim);
    int64_t count = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        shape[i] = static_cast<int>(read_u32(is));
        count *= shape[i];
    }
    Tensor t = Tensor::zeros(shape);
    std::vector<float> f(static_cast<size_t>(count));
    if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * 4)))
        throw std::runtime_error("checkpoint: truncated tensor payload for " + name);
    for (size_t i = 0; i < f.size(); ++i) t.v[i] = f[i];
    return {name, t};
}

}  // namespace

void save_model(const ToyModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open " + path.string());
    os.write("WAHM", 4);
    write_u32(os, 1);  // version
    std::string cfg = model_config_to_json_text(model.cfg);
    write_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    uint32_t n_tensors = 0;
    for_each_tensor(model.params, [&](const std::string&, const Tensor&) { ++n_tensors; });
    write_u32(os, n_tensors);
    for_each_tensor(model.params,
                    [&](const std::string& name, const Tensor& t) { write_tensor(os, name, t); });
    if (!os) throw std::runtime_error("save_model: write failed for " + path.string());
}

ToyModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "WAHM", 4) != 0)
        throw std::runtime_error("load_model: bad magic in " + path.string());
    uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("load_model: unsupported version");
    uint32_t cfg_len = read_u32(is);
    std::string cfg(cfg_len, '\0');
    if (!is.read(cfg.data(), cfg_len)) throw std::runtime_error("load_model: truncated config");

    ToyModel model = init_model(model_config_from_json_text(cfg), 0);
    uint32_t n_tensors = read_u32(is);
    std::vector<std::pair<std::string, Tensor>> loaded;
    for (uint32_t i = 0; i < n_tensors; ++i) loaded.push_back(read_tensor(is));
    size_t cursor = 0;
    for_each_tensor(model.params, [&](const std::string& name, Tensor& t) {
        if (cursor >= loaded.size() || loaded[cursor].first != name)
            throw std::runtime_error("load_model: tensor table mismatch at " + name);
        if (loaded[cursor].second.shape != t.shape)
            throw std::runtime_error("load_model: shape mismatch for " + name);
        t = std::move(loaded[cursor].second);
        ++cursor;
    });
    if (cursor != loaded.size()) throw std::runtime_error("load_model: extra tensors in file");
    return model;
}

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_adapter: cannot open " + path.string());
    os.write("WAHL", 4);
    write_u32(os, 1);
    nlohmann::json meta;
    meta["rank"] = adapter.rank;
    meta["alpha"] = adapter.alpha;
    meta["blocks"] = adapter.blocks.size();
    std::string meta_s = meta.dump();
    write_u32(os, static_cast<uint32_t>(meta_s.size()));
    os.write(meta_s.data(), static_cast<std::streamsize>(meta_s.size()));
    uint32_t n_tensors = 0;
    for_each_tensor(adapter, [&](const std::string&, const Tensor&) { ++n_tensors; });
    write_u32(os, n_tensors);
    for_each_tensor(adapter,
                    [&](const std::string& name, const Tensor& t) { write_tensor(os, name, t); });
    if (!os) throw std::runtime_error("save_adapter: write failed for " + path.string());
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_adapter: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "WAHL", 4) != 0)
        throw std::runtime_error("load_adapter: bad magic in " + path.string());
    if (read_u32(is) != 1) throw std::runtime_error("load_adapter: unsupported version");
    uint32_t meta_len = read_u32(is);
    std::string meta_s(meta_len, '\0');
    if (!is.read(meta_s.data(), meta_len)) throw std::runtime_error("load_adapter: truncated meta");
    nlohmann::json meta = nlohmann::json::parse(meta_s);

    LoraAdapter adapter;
    adapter.rank = meta.at("rank").get<int>();
    adapter.alpha = meta.at("alpha").get<double>();
    adapter.blocks.resize(meta.at("blocks").get<size_t>());
    uint32_t n_tensors = read_u32(is);
    std::vector<std::pair<std::string, Tensor>> loaded;
    for (uint32_t i = 0; i < n_tensors; ++i) loaded.push_back(read_tensor(is));
    size_t cursor = 0;
    for_each_tensor(adapter, [&](const std::string& name, Tensor& t) {
        if (cursor >= loaded.size() || loaded[cursor].first != name)
            throw std::runtime_error("load_adapter: tensor table mismatch at " + name);
        t = std::move(loaded[cursor].second);
        ++cursor;
    });
    return adapter;
}

}  // namespace wah
