#include "wah/image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace wah {

namespace {

void put_u32_le(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is, const std::string& what) {
    uint8_t b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("depth stack: truncated " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Reads one whitespace-delimited token of a PNM header, skipping '#' comments.
std::string pnm_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw std::runtime_error("pnm: truncated header");
    return tok;
}

}  // namespace

size_t Mask::count_set() const {
    size_t n = 0;
    for (uint8_t v : data) n += (v != 0);
    return n;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_ppm: expected 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path.string());
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[static_cast<size_t>(x) * 3 + c] = static_cast<uint8_t>(v * 255.0f + 0.5f);
            }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_ppm: cannot open " + path.string());
    if (pnm_token(is) != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
    int w = std::stoi(pnm_token(is));
    int h = std::stoi(pnm_token(is));
    int maxval = std::stoi(pnm_token(is));
    if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval");
    Image img(w, h, 3);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<float>(raw[i]) / 255.0f;
    return img;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path.string());
    os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<uint8_t> raw(mask.data.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

Mask read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
    if (pnm_token(is) != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path.string());
    int w = std::stoi(pnm_token(is));
    int h = std::stoi(pnm_token(is));
    int maxval = std::stoi(pnm_token(is));
    if (maxval != 255) throw std::runtime_error("read_pgm: unsupported maxval");
    Mask mask(w, h);
    std::vector<uint8_t> raw(mask.data.size());
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
    for (size_t i = 0; i < raw.size(); ++i) mask.data[i] = raw[i] >= 128 ? 1 : 0;
    return mask;
}

void write_depth_stack(const std::filesystem::path& path, std::span<const DepthMap> frames) {
    if (frames.empty()) throw std::invalid_argument("write_depth_stack: empty stack");
    const int w = frames[0].width, h = frames[0].height;
    for (const auto& f : frames)
        if (f.width != w || f.height != h)
            throw std::invalid_argument("write_depth_stack: inconsistent frame shapes");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_depth_stack: cannot open " + path.string());
    os.write("WAHD", 4);
    put_u32_le(os, static_cast<uint32_t>(w));
    put_u32_le(os, static_cast<uint32_t>(h));
    put_u32_le(os, static_cast<uint32_t>(frames.size()));
    static_assert(sizeof(float) == 4);
    for (const auto& f : frames)
        os.write(reinterpret_cast<const char*>(f.data.data()),
                 static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!os) throw std::runtime_error("write_depth_stack: write failed for " + path.string());
}

std::vector<DepthMap> read_depth_stack(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_depth_stack: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "WAHD", 4) != 0)
        throw std::runtime_error("read_depth_stack: bad magic in " + path.string());
    const uint32_t w = get_u32_le(is, "width");
    const uint32_t h = get_u32_le(is, "height");
    const uint32_t n = get_u32_le(is, "frame_count");
    std::vector<DepthMap> frames;
    frames.reserve(n);
    const size_t per_frame = static_cast<size_t>(w) * h * sizeof(float);
    for (uint32_t i = 0; i < n; ++i) {
        DepthMap d(static_cast<int>(w), static_cast<int>(h));
        is.read(reinterpret_cast<char*>(d.data.data()), static_cast<std::streamsize>(per_frame));
        if (static_cast<size_t>(is.gcount()) != per_frame) {
            size_t expected = 16 + per_frame * n;
            size_t got = 16 + per_frame * i + static_cast<size_t>(is.gcount());
            throw std::runtime_error("read_depth_stack: truncated payload, expected " +
                                     std::to_string(expected) + " bytes, got " + std::to_string(got));
        }
        frames.push_back(std::move(d));
    }
    return frames;
}

}  // namespace wah
