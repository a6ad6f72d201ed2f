#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "wah/image.hpp"

namespace wah {

// Flattened patch tokens with (frame-order, patch-row, patch-col) coordinates
// and per-token valid-support fractions (1.0 unless attached from a mask).
struct TokenGrid {
    int frames = 0, rows = 0, cols = 0;
    int patch_h = 0, patch_w = 0;
    int token_dim = 0;
    std::vector<float> tokens;  // [count][token_dim]

    struct Coord {
        int f, r, c;
        bool operator==(const Coord&) const = default;
    };
    std::vector<Coord> coords;
    std::vector<float> support;

    int count() const { return static_cast<int>(coords.size()); }
    std::span<const float> token(int i) const {
        return {tokens.data() + static_cast<size_t>(i) * token_dim, static_cast<size_t>(token_dim)};
    }
    std::span<float> token(int i) {
        return {tokens.data() + static_cast<size_t>(i) * token_dim, static_cast<size_t>(token_dim)};
    }
};

// Raster-order tokens (frame, row, col; pixels y,x,channel within a patch).
// Inverse of unpatchify, bit-exactly.
TokenGrid patchify(std::span<const Image> frames, int patch_h, int patch_w);
std::vector<Image> unpatchify(const TokenGrid& grid);

// Per-token mean validity over each patch footprint, raster order.
std::vector<float> mask_to_support(const Mask& mask, int patch_h, int patch_w);

// Fills grid.support from one mask per frame.
void attach_support(TokenGrid& grid, std::span<const Mask> masks);

struct Selection {
    TokenGrid grid;
    std::vector<int> kept;  // sorted source indices
};

// Keeps exactly the tokens with support >= tau, order preserved.
Selection select_visible_tokens(const TokenGrid& grid, double tau);

enum class RopeMode { ordinary_history, target_aligned };

struct RopeIndex {
    int t, r, c;
    bool operator==(const RopeIndex&) const = default;
};

// ordinary_history: t = offset + frame order (a band strictly before the
// targets). target_aligned: t = target band start + frame order, i.e. the
// t index of the noisy target at the same frame order. (r, c) always come
// from the token's own patch coordinates.
std::vector<RopeIndex> assign_rope_indices(const TokenGrid& grid, RopeMode mode, int offset);

enum class PackMode { full, noalign, novisdrop, seqconcat, chfusion, text_only };
PackMode pack_mode_from_string(std::string_view s);
std::string to_string(PackMode m);

enum class TokenRole : uint8_t { clean_history = 0, warp_history = 1, noisy_target = 2 };

struct PackedSequence {
    // ragged payload: token i is payload[offsets[i] .. offsets[i+1])
    std::vector<float> payload;
    std::vector<int> offsets;
    std::vector<TokenRole> roles;
    std::vector<RopeIndex> rope;
    std::vector<uint8_t> kept_mask;  // per original warp token, 1 = kept
    PackMode mode = PackMode::text_only;

    // target grid shape, needed to rebuild frames from target tokens
    int patch_h = 0, patch_w = 0;
    int target_frames = 0, target_rows = 0, target_cols = 0;
    int history_band = 0;  // number of t slots reserved for clean history

    int count() const { return static_cast<int>(roles.size()); }
    int token_dim(int i) const { return offsets[i + 1] - offsets[i]; }
    std::span<const float> token(int i) const {
        return {payload.data() + offsets[i], static_cast<size_t>(token_dim(i))};
    }
    std::span<float> token(int i) {
        return {payload.data() + offsets[i], static_cast<size_t>(token_dim(i))};
    }
    std::vector<int> role_indices(TokenRole role) const;
};

struct PackOptions {
    PackMode mode = PackMode::full;
    double tau = 0.5;          // visible-support threshold for full/noalign
    int history_frames = -1;   // clean-history band size; -1 = infer from grid
    int clean_stride = 1;      // temporal stride applied to clean history only
};

// Sequence order is [clean_history | warp_history | noisy_target].
//   full:      select_visible_tokens(tau), target-aligned t indices
//   noalign:   select_visible_tokens(tau), ordinary-history t indices
//   novisdrop: no selection, target-aligned t indices
//   seqconcat: no selection, fresh t band above the target band
//   chfusion:  warp patch vectors concatenated feature-wise onto the
//              matching target tokens (sequence length unchanged, target
//              token dimension doubles); warp grid must be full
//   text_only: no warp tokens allowed
// Warp history is always packed at full frame rate; clean_stride never
// applies to it.
PackedSequence pack_condition_stream(const TokenGrid* clean_history, const TokenGrid* warp,
                                     const TokenGrid& targets, const PackOptions& options);

struct HistoryCorruption {
    enum class Policy { none, drop_frames, mask_patches };
    Policy policy = Policy::none;
    double rate = 0.0;
    uint64_t seed = 0;
};

HistoryCorruption::Policy corruption_policy_from_string(std::string_view s);

struct CorruptResult {
    std::vector<Image> frames;
    std::vector<int> kept_indices;  // original frame indices, ascending
};

// drop_frames removes ceil(rate*T) whole frames; mask_patches zeroes
// ceil(rate*n_patches) patch regions per frame. Deterministic in the seed.
CorruptResult corrupt_history(std::span<const Image> frames, const HistoryCorruption& corruption,
                              int patch_h, int patch_w);

struct RoleCounts {
    int clean = 0, warp = 0, target = 0;
    int total() const { return clean + warp + target; }
};

RoleCounts sequence_length_report(const PackedSequence& packed);

// Manifest (JSON: roles, rope indices, kept mask, shapes) plus a raw
// little-endian float32 payload, for cross-implementation diffing.
void write_packed(const PackedSequence& packed, const std::filesystem::path& directory);
PackedSequence read_packed(const std::filesystem::path& directory);

}  // namespace wah
