#include "tcnet/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tcnet/error.hpp"

namespace tcnet {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'N', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void write_tensor(const std::string& path, const Tensor<float>& t) {
    std::string buf;
    buf.reserve(8 + 4 * t.shape.size() + 4 * t.numel());
    buf.append(kMagic, 4);
    buf.push_back(static_cast<char>(kVersion));
    buf.push_back(static_cast<char>(kDtypeF32));
    buf.push_back(static_cast<char>(t.rank()));
    buf.push_back(0); // reserved
    for (int e : t.shape) put_u32le(buf, static_cast<std::uint32_t>(e));
    for (float v : t.data) put_u32le(buf, std::bit_cast<std::uint32_t>(v));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

Tensor<float> read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8) throw FormatError("tensor file too short: " + path);
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad magic in " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (p[4] != kVersion)
        throw FormatError("unsupported tensor file version " + std::to_string(p[4]) + " in " + path);
    if (p[5] != kDtypeF32)
        throw FormatError("unsupported dtype " + std::to_string(p[5]) + " in " + path);
    const int rank = p[6];
    if (rank <= 0 || rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " in " + path);
    const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
    if (buf.size() < header) throw FormatError("truncated extent header in " + path);
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(get_u32le(p + 8 + 4 * i));
        if (shape[i] <= 0) throw FormatError("nonpositive extent in " + path);
        n *= static_cast<std::size_t>(shape[i]);
    }
    if (buf.size() != header + 4 * n)
        throw FormatError("payload length mismatch in " + path + ": expected " +
                          std::to_string(header + 4 * n) + " bytes, file has " + std::to_string(buf.size()));
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < n; ++i)
        t.data[i] = std::bit_cast<float>(get_u32le(p + header + 4 * i));
    return t;
}

void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& pixels) {
    if (width <= 0 || height <= 0 ||
        pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw DimensionError("pgm: pixel buffer does not match " + std::to_string(width) + "x" +
                             std::to_string(height));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& width, int& height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw FormatError("not a binary PGM: " + path);
    int maxval = 0;
    f >> width >> height >> maxval;
    if (!f || width <= 0 || height <= 0) throw FormatError("bad PGM header in " + path);
    if (maxval != 255) throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " in " + path);
    f.get(); // single whitespace after maxval
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
    f.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw FormatError("truncated PGM payload in " + path);
    return pixels;
}

void write_mask_pgm(const std::string& path, const Tensor<float>& mask) {
    const int r = mask.rank();
    if (r != 2 && !(r == 3 && mask.shape[0] == 1))
        throw DimensionError("mask must be [H,W] or [1,H,W], got " + shape_string(mask.shape));
    const int h = mask.shape[r - 2], w = mask.shape[r - 1];
    std::vector<std::uint8_t> px(mask.numel());
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask.data[i] != 0.0f && mask.data[i] != 1.0f)
            throw ConfigError("mask is not binary, cannot write " + path);
        px[i] = mask.data[i] == 1.0f ? 255 : 0;
    }
    write_pgm(path, w, h, px);
}

Tensor<float> read_mask_pgm(const std::string& path) {
    int w = 0, h = 0;
    std::vector<std::uint8_t> px = read_pgm(path, w, h);
    Tensor<float> mask({1, h, w});
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (px[i] != 0 && px[i] != 255)
            throw FormatError("mask PGM has non-binary pixel value " + std::to_string(px[i]) + ": " + path);
        mask.data[i] = px[i] == 255 ? 1.0f : 0.0f;
    }
    return mask;
}

void write_gray_pgm(const std::string& path, const Tensor<float>& map, float lo, float hi) {
    const int r = map.rank();
    if (r != 2 && !(r == 3 && map.shape[0] == 1))
        throw DimensionError("gray map must be [H,W] or [1,H,W], got " + shape_string(map.shape));
    const int h = map.shape[r - 2], w = map.shape[r - 1];
    const float span = hi > lo ? hi - lo : 1.0f;
    std::vector<std::uint8_t> px(map.numel());
    for (std::size_t i = 0; i < map.numel(); ++i) {
        float v = (map.data[i] - lo) / span;
        v = std::min(std::max(v, 0.0f), 1.0f);
        px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    write_pgm(path, w, h, px);
}

} // namespace tcnet
