#include "wah/packing.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "wah/rng.hpp"

namespace wah {

TokenGrid patchify(std::span<const Image> frames, int patch_h, int patch_w) {
    if (frames.empty()) throw std::invalid_argument("patchify: no frames");
    const Image& first = frames[0];
    if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("patchify: bad patch size");
    if (first.height % patch_h != 0 || first.width % patch_w != 0)
        throw std::invalid_argument("patchify: image size not divisible by patch size");

    TokenGrid grid;
    grid.frames = static_cast<int>(frames.size());
    grid.rows = first.height / patch_h;
    grid.cols = first.width / patch_w;
    grid.patch_h = patch_h;
    grid.patch_w = patch_w;
    grid.token_dim = patch_h * patch_w * first.channels;

    const int count = grid.frames * grid.rows * grid.cols;
    grid.tokens.resize(static_cast<size_t>(count) * grid.token_dim);
    grid.coords.reserve(count);
    grid.support.assign(count, 1.0f);

    size_t w = 0;
    for (int f = 0; f < grid.frames; ++f) {
        const Image& img = frames[f];
        if (!img.same_shape(first)) throw std::invalid_argument("patchify: frame shapes disagree");
        for (int r = 0; r < grid.rows; ++r)
            for (int c = 0; c < grid.cols; ++c) {
                grid.coords.push_back({f, r, c});
                for (int py = 0; py < patch_h; ++py)
                    for (int px = 0; px < patch_w; ++px)
                        for (int ch = 0; ch < img.channels; ++ch)
                            grid.tokens[w++] = img.at(r * patch_h + py, c * patch_w + px, ch);
            }
    }
    return grid;
}

std::vector<Image> unpatchify(const TokenGrid& grid) {
    if (grid.patch_h <= 0 || grid.patch_w <= 0)
        throw std::invalid_argument("unpatchify: grid has no patch shape");
    const int channels = grid.token_dim / (grid.patch_h * grid.patch_w);
    std::vector<Image> frames(grid.frames,
                              Image(grid.cols * grid.patch_w, grid.rows * grid.patch_h, channels));
    for (int i = 0; i < grid.count(); ++i) {
        const auto& co = grid.coords[i];
        std::span<const float> tok = grid.token(i);
        size_t k = 0;
        for (int py = 0; py < grid.patch_h; ++py)
            for (int px = 0; px < grid.patch_w; ++px)
                for (int ch = 0; ch < channels; ++ch)
                    frames[co.f].at(co.r * grid.patch_h + py, co.c * grid.patch_w + px, ch) = tok[k++];
    }
    return frames;
}

std::vector<float> mask_to_support(const Mask& mask, int patch_h, int patch_w) {
    if (mask.height % patch_h != 0 || mask.width % patch_w != 0)
        throw std::invalid_argument("mask_to_support: mask size not divisible by patch size");
    const int rows = mask.height / patch_h, cols = mask.width / patch_w;
    std::vector<float> support(static_cast<size_t>(rows) * cols);
    const float denom = static_cast<float>(patch_h * patch_w);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            int count = 0;
            for (int py = 0; py < patch_h; ++py)
                for (int px = 0; px < patch_w; ++px)
                    count += mask.at(r * patch_h + py, c * patch_w + px) ? 1 : 0;
            support[static_cast<size_t>(r) * cols + c] = static_cast<float>(count) / denom;
        }
    return support;
}

void attach_support(TokenGrid& grid, std::span<const Mask> masks) {
    if (static_cast<int>(masks.size()) != grid.frames)
        throw std::invalid_argument("attach_support: one mask per frame required");
    for (int f = 0; f < grid.frames; ++f) {
        std::vector<float> s = mask_to_support(masks[f], grid.patch_h, grid.patch_w);
        if (static_cast<int>(s.size()) != grid.rows * grid.cols)
            throw std::invalid_argument("attach_support: mask shape does not match grid");
        std::copy(s.begin(), s.end(),
                  grid.support.begin() + static_cast<size_t>(f) * grid.rows * grid.cols);
    }
}

Selection select_visible_tokens(const TokenGrid& grid, double tau) {
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("select_visible_tokens: tau outside [0,1]");
    Selection sel;
    sel.grid.frames = grid.frames;
    sel.grid.rows = grid.rows;
    sel.grid.cols = grid.cols;
    sel.grid.patch_h = grid.patch_h;
    sel.grid.patch_w = grid.patch_w;
    sel.grid.token_dim = grid.token_dim;
    for (int i = 0; i < grid.count(); ++i) {
        if (static_cast<double>(grid.support[i]) >= tau) {
            sel.kept.push_back(i);
            sel.grid.coords.push_back(grid.coords[i]);
            sel.grid.support.push_back(grid.support[i]);
            std::span<const float> tok = grid.token(i);
            sel.grid.tokens.insert(sel.grid.tokens.end(), tok.begin(), tok.end());
        }
    }
    return sel;
}

std::vector<RopeIndex> assign_rope_indices(const TokenGrid& grid, RopeMode mode, int offset) {
    if (mode == RopeMode::ordinary_history && offset < 0)
        throw std::invalid_argument("assign_rope_indices: ordinary history offset must be >= 0");
    std::vector<RopeIndex> out;
    out.reserve(grid.coords.size());
    for (const auto& co : grid.coords) out.push_back({offset + co.f, co.r, co.c});
    return out;
}

PackMode pack_mode_from_string(std::string_view s) {
    if (s == "full") return PackMode::full;
    if (s == "noalign") return PackMode::noalign;
    if (s == "novisdrop") return PackMode::novisdrop;
    if (s == "seqconcat") return PackMode::seqconcat;
    if (s == "chfusion") return PackMode::chfusion;
    if (s == "text_only") return PackMode::text_only;
    throw std::invalid_argument("unknown pack mode: " + std::string(s));
}

std::string to_string(PackMode m) {
    switch (m) {
        case PackMode::full: return "full";
        case PackMode::noalign: return "noalign";
        case PackMode::novisdrop: return "novisdrop";
        case PackMode::seqconcat: return "seqconcat";
        case PackMode::chfusion: return "chfusion";
        case PackMode::text_only: return "text_only";
    }
    throw std::invalid_argument("unknown pack mode enum value");
}

std::vector<int> PackedSequence::role_indices(TokenRole role) const {
    std::vector<int> out;
    for (int i = 0; i < count(); ++i)
        if (roles[i] == role) out.push_back(i);
    return out;
}

namespace {

void append_token(PackedSequence& seq, std::span<const float> tok, TokenRole role, RopeIndex rope) {
    seq.payload.insert(seq.payload.end(), tok.begin(), tok.end());
    seq.offsets.push_back(static_cast<int>(seq.payload.size()));
    seq.roles.push_back(role);
    seq.rope.push_back(rope);
}

}  // namespace

PackedSequence pack_condition_stream(const TokenGrid* clean_history, const TokenGrid* warp,
                                     const TokenGrid& targets, const PackOptions& options) {
    if (targets.count() == 0) throw std::invalid_argument("pack: targets must be nonempty");
    if (options.mode == PackMode::text_only && warp != nullptr)
        throw std::invalid_argument("pack: text_only mode forbids a warp grid");
    if (options.mode != PackMode::text_only && warp == nullptr)
        throw std::invalid_argument("pack: mode " + to_string(options.mode) + " requires a warp grid");
    if (options.clean_stride < 1) throw std::invalid_argument("pack: clean_stride must be >= 1");

    auto check_shape = [&](const TokenGrid& g, const char* what) {
        if (g.patch_h != targets.patch_h || g.patch_w != targets.patch_w ||
            g.token_dim != targets.token_dim || g.rows != targets.rows || g.cols != targets.cols)
            throw std::invalid_argument(std::string("pack: ") + what +
                                        " grid shape inconsistent with targets");
    };
    if (clean_history) check_shape(*clean_history, "clean history");
    if (warp) {
        check_shape(*warp, "warp");
        if (warp->frames != targets.frames)
            throw std::invalid_argument("pack: warp frame count must match target frame count");
    }

    int history_band = options.history_frames;
    if (history_band < 0) {
        history_band = 0;
        if (clean_history)
            for (const auto& co : clean_history->coords)
                history_band = std::max(history_band, co.f + 1);
    }

    PackedSequence seq;
    seq.mode = options.mode;
    seq.patch_h = targets.patch_h;
    seq.patch_w = targets.patch_w;
    seq.target_frames = targets.frames;
    seq.target_rows = targets.rows;
    seq.target_cols = targets.cols;
    seq.history_band = history_band;
    seq.offsets.push_back(0);

    // clean history first, optionally temporally strided
    if (clean_history) {
        for (int i = 0; i < clean_history->count(); ++i) {
            const auto& co = clean_history->coords[i];
            if (co.f % options.clean_stride != 0) continue;
            append_token(seq, clean_history->token(i), TokenRole::clean_history, {co.f, co.r, co.c});
        }
    }

    // warp history at full frame rate
    const int target_band = options.mode == PackMode::noalign ? history_band + (warp ? warp->frames : 0)
                                                              : history_band;
    if (warp && options.mode != PackMode::chfusion) {
        const TokenGrid* source = warp;
        Selection sel;
        if (options.mode == PackMode::full || options.mode == PackMode::noalign) {
            sel = select_visible_tokens(*warp, options.tau);
            source = &sel.grid;
            seq.kept_mask.assign(warp->count(), 0);
            for (int idx : sel.kept) seq.kept_mask[idx] = 1;
        } else {
            seq.kept_mask.assign(warp->count(), 1);
        }
        int warp_offset;
        switch (options.mode) {
            case PackMode::full:
            case PackMode::novisdrop: warp_offset = target_band; break;          // target-aligned
            case PackMode::noalign: warp_offset = history_band; break;           // ordinary history
            case PackMode::seqconcat: warp_offset = target_band + targets.frames; break;  // fresh band
            default: throw std::logic_error("pack: unreachable mode");
        }
        for (int i = 0; i < source->count(); ++i) {
            const auto& co = source->coords[i];
            append_token(seq, source->token(i), TokenRole::warp_history,
                         {warp_offset + co.f, co.r, co.c});
        }
    }

    // noisy targets, feature-fused with the warp in chfusion mode
    if (options.mode == PackMode::chfusion) {
        if (warp->count() != targets.count())
            throw std::invalid_argument("pack: chfusion requires the full, un-dropped warp grid");
        seq.kept_mask.assign(warp->count(), 1);
        for (int i = 0; i < targets.count(); ++i) {
            if (!(warp->coords[i] == targets.coords[i]))
                throw std::invalid_argument("pack: chfusion warp/target coordinates disagree");
            const auto& co = targets.coords[i];
            std::span<const float> t = targets.token(i);
            std::span<const float> w = warp->token(i);
            std::vector<float> fused;
            fused.reserve(t.size() + w.size());
            fused.insert(fused.end(), t.begin(), t.end());
            fused.insert(fused.end(), w.begin(), w.end());
            append_token(seq, fused, TokenRole::noisy_target, {target_band + co.f, co.r, co.c});
        }
    } else {
        for (int i = 0; i < targets.count(); ++i) {
            const auto& co = targets.coords[i];
            append_token(seq, targets.token(i), TokenRole::noisy_target,
                         {target_band + co.f, co.r, co.c});
        }
    }
    return seq;
}

HistoryCorruption::Policy corruption_policy_from_string(std::string_view s) {
    if (s == "none") return HistoryCorruption::Policy::none;
    if (s == "drop_frames") return HistoryCorruption::Policy::drop_frames;
    if (s == "mask_patches") return HistoryCorruption::Policy::mask_patches;
    throw std::invalid_argument("unknown corruption policy: " + std::string(s));
}

CorruptResult corrupt_history(std::span<const Image> frames, const HistoryCorruption& corruption,
                              int patch_h, int patch_w) {
    if (corruption.rate < 0.0 || corruption.rate > 1.0)
        throw std::invalid_argument("corrupt_history: rate outside [0,1]");
    CorruptResult out;
    const int t = static_cast<int>(frames.size());

    if (corruption.policy == HistoryCorruption::Policy::none || t == 0) {
        out.frames.assign(frames.begin(), frames.end());
        out.kept_indices.resize(t);
        for (int i = 0; i < t; ++i) out.kept_indices[i] = i;
        return out;
    }

    Rng rng(derive_seed(corruption.seed, "corrupt_history"));

    if (corruption.policy == HistoryCorruption::Policy::drop_frames) {
        const int n_drop = std::min(t, static_cast<int>(std::ceil(corruption.rate * t)));
        std::vector<int> order(t);
        for (int i = 0; i < t; ++i) order[i] = i;
        for (int i = t - 1; i > 0; --i) std::swap(order[i], order[rng.next_int(i + 1)]);
        std::vector<uint8_t> dropped(t, 0);
        for (int i = 0; i < n_drop; ++i) dropped[order[i]] = 1;
        for (int i = 0; i < t; ++i)
            if (!dropped[i]) {
                out.frames.push_back(frames[i]);
                out.kept_indices.push_back(i);
            }
        return out;
    }

    // mask_patches: zero ceil(rate * patches) patch regions per frame
    out.frames.assign(frames.begin(), frames.end());
    out.kept_indices.resize(t);
    for (int i = 0; i < t; ++i) out.kept_indices[i] = i;
    for (int f = 0; f < t; ++f) {
        Image& img = out.frames[f];
        if (img.height % patch_h != 0 || img.width % patch_w != 0)
            throw std::invalid_argument("corrupt_history: image size not divisible by patch size");
        const int rows = img.height / patch_h, cols = img.width / patch_w;
        const int n_patches = rows * cols;
        const int n_zero = std::min(n_patches, static_cast<int>(std::ceil(corruption.rate * n_patches)));
        std::vector<int> order(n_patches);
        for (int i = 0; i < n_patches; ++i) order[i] = i;
        for (int i = n_patches - 1; i > 0; --i) std::swap(order[i], order[rng.next_int(i + 1)]);
        for (int i = 0; i < n_zero; ++i) {
            int r = order[i] / cols, c = order[i] % cols;
            for (int py = 0; py < patch_h; ++py)
                for (int px = 0; px < patch_w; ++px)
                    for (int ch = 0; ch < img.channels; ++ch)
                        img.at(r * patch_h + py, c * patch_w + px, ch) = 0.0f;
        }
    }
    return out;
}

RoleCounts sequence_length_report(const PackedSequence& packed) {
    RoleCounts counts;
    for (TokenRole r : packed.roles) {
        switch (r) {
            case TokenRole::clean_history: ++counts.clean; break;
            case TokenRole::warp_history: ++counts.warp; break;
            case TokenRole::noisy_target: ++counts.target; break;
        }
    }
    return counts;
}

void write_packed(const PackedSequence& packed, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    nlohmann::json manifest;
    manifest["mode"] = to_string(packed.mode);
    manifest["patch_h"] = packed.patch_h;
    manifest["patch_w"] = packed.patch_w;
    manifest["target_frames"] = packed.target_frames;
    manifest["target_rows"] = packed.target_rows;
    manifest["target_cols"] = packed.target_cols;
    manifest["history_band"] = packed.history_band;
    manifest["offsets"] = packed.offsets;
    nlohmann::json roles = nlohmann::json::array(), rope = nlohmann::json::array();
    for (TokenRole r : packed.roles) roles.push_back(static_cast<int>(r));
    for (const RopeIndex& ri : packed.rope) rope.push_back({ri.t, ri.r, ri.c});
    manifest["roles"] = roles;
    manifest["rope"] = rope;
    manifest["kept_mask"] = packed.kept_mask;
    manifest["payload_file"] = "payload.f32";
    std::ofstream os(directory / "pack_manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_packed: cannot write manifest");

    std::ofstream ps(directory / "payload.f32", std::ios::binary);
    static_assert(sizeof(float) == 4);
    ps.write(reinterpret_cast<const char*>(packed.payload.data()),
             static_cast<std::streamsize>(packed.payload.size() * sizeof(float)));
    if (!ps) throw std::runtime_error("write_packed: cannot write payload");
}

PackedSequence read_packed(const std::filesystem::path& directory) {
    std::ifstream is(directory / "pack_manifest.json");
    if (!is) throw std::runtime_error("read_packed: missing manifest in " + directory.string());
    nlohmann::json manifest = nlohmann::json::parse(is);
    PackedSequence packed;
    packed.mode = pack_mode_from_string(manifest.at("mode").get<std::string>());
    packed.patch_h = manifest.at("patch_h").get<int>();
    packed.patch_w = manifest.at("patch_w").get<int>();
    packed.target_frames = manifest.at("target_frames").get<int>();
    packed.target_rows = manifest.at("target_rows").get<int>();
    packed.target_cols = manifest.at("target_cols").get<int>();
    packed.history_band = manifest.at("history_band").get<int>();
    packed.offsets = manifest.at("offsets").get<std::vector<int>>();
    for (const auto& r : manifest.at("roles")) packed.roles.push_back(static_cast<TokenRole>(r.get<int>()));
    for (const auto& ri : manifest.at("rope"))
        packed.rope.push_back({ri[0].get<int>(), ri[1].get<int>(), ri[2].get<int>()});
    packed.kept_mask = manifest.at("kept_mask").get<std::vector<uint8_t>>();

    std::ifstream ps(directory / manifest.at("payload_file").get<std::string>(), std::ios::binary);
    if (!ps) throw std::runtime_error("read_packed: missing payload");
    packed.payload.resize(static_cast<size_t>(packed.offsets.back()));
    ps.read(reinterpret_cast<char*>(packed.payload.data()),
            static_cast<std::streamsize>(packed.payload.size() * sizeof(float)));
    if (static_cast<size_t>(ps.gcount()) != packed.payload.size() * sizeof(float))
        throw std::runtime_error("read_packed: truncated payload");
    return packed;
}

}  // namespace wah
