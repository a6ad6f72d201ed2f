#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace wah {

// Row-major float image, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int ch = 3) : width(w), height(h), channels(ch), data(static_cast<size_t>(w) * h * ch, 0.0f) {}

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

// Binary per-pixel mask, 1 = set.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t count_set() const;
};

struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    DepthMap() = default;
    DepthMap(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Binary PPM (P6), maxval 255. Float values are scaled by 255 and rounded.
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

// Binary PGM (P5), 255 = set.
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

// Depth stack: "WAHD", u32 width/height/frame_count (LE), then
// frame_count * height * width little-endian float32, row-major.
void write_depth_stack(const std::filesystem::path& path, std::span<const DepthMap> frames);
std::vector<DepthMap> read_depth_stack(const std::filesystem::path& path);

// Quantize a float in [0,1] to the 8-bit grid used by the PPM writer.
inline float quantize8(float v) {
    if (v <= 0.0f) return 0.0f;
    if (v >= 1.0f) return 1.0f;
    return static_cast<float>(static_cast<int>(v * 255.0f + 0.5f)) / 255.0f;
}

}  // namespace wah
