#include "tcnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tcnet/error.hpp"
#include "tcnet/rng.hpp"
#include "tcnet/tensor_io.hpp"

namespace fs = std::filesystem;

namespace tcnet {

void SynthSpec::validate() const {
    std::string errs;
    auto fail = [&errs](const std::string& m) {
        if (!errs.empty()) errs += "; ";
        errs += m;
    };
    if (volumes <= 0) fail("volumes must be positive");
    if (depth < 4) fail("depth must be at least 4 (slice stacking needs neighbours)");
    if (height <= 0 || width <= 0) fail("extents must be positive");
    if (min_lesions < 0 || max_lesions < min_lesions) fail("lesion count range is invalid");
    if (min_radius < 1.0) fail("min_radius must be at least 1");
    if (max_radius < min_radius) fail("max_radius must be >= min_radius");
    const double fit = (std::min({depth, height, width}) - 1) / 2.0;
    if (min_radius > fit)
        fail("min_radius " + std::to_string(min_radius) + " cannot fit inside extent " +
             std::to_string(std::min({depth, height, width})));
    if (val_fraction < 0.0 || val_fraction >= 1.0) fail("val_fraction must lie in [0, 1)");
    if (bg_level + bg_texture + noise > 0.5) fail("background intensities must stay below 0.5");
    if (lesion_level - lesion_jitter - noise < 0.55) fail("lesion intensities must stay above 0.55");
    if (!errs.empty()) throw ConfigError("invalid synth spec: " + errs);
}

namespace {

struct Ellipsoid {
    double cz, cy, cx;
    double rz, ry, rx;
};

bool inside(const Ellipsoid& e, int z, int y, int x) {
    const double dz = (z - e.cz) / e.rz;
    const double dy = (y - e.cy) / e.ry;
    const double dx = (x - e.cx) / e.rx;
    return dz * dz + dy * dy + dx * dx <= 1.0;
}

} // namespace

SynthVolume generate_volume(const SynthSpec& spec, int index) {
    spec.validate();
    Rng rng(spec.seed + static_cast<std::uint64_t>(index));
    const int d = spec.depth, h = spec.height, w = spec.width;

    SynthVolume vol;
    vol.image = Tensor<float>({d, h, w});
    vol.mask = Tensor<float>({d, h, w});

    // low-frequency cosine background texture
    constexpr int kWaves = 3;
    double fz[kWaves], fy[kWaves], fx[kWaves], phase[kWaves];
    for (int k = 0; k < kWaves; ++k) {
        fz[k] = rng.uniform(0.5, 2.5);
        fy[k] = rng.uniform(0.5, 2.5);
        fx[k] = rng.uniform(0.5, 2.5);
        phase[k] = rng.uniform(0.0, 6.283185307179586);
    }

    // lesions
    const int count =
        spec.min_lesions + static_cast<int>(rng.uniform_index(
                               static_cast<std::uint64_t>(spec.max_lesions - spec.min_lesions + 1)));
    std::vector<Ellipsoid> lesions;
    auto axis_radius = [&](int extent) {
        const double cap = (extent - 1) / 2.0;
        return rng.uniform(spec.min_radius, std::min(spec.max_radius, cap));
    };
    for (int i = 0; i < count; ++i) {
        Ellipsoid e;
        e.rz = axis_radius(d);
        e.ry = axis_radius(h);
        e.rx = axis_radius(w);
        e.cz = rng.uniform(e.rz, d - 1 - e.rz);
        e.cy = rng.uniform(e.ry, h - 1 - e.ry);
        e.cx = rng.uniform(e.rx, w - 1 - e.rx);
        lesions.push_back(e);
        vol.lesion_params.push_back({e.cz, e.cy, e.cx, e.rz, e.ry, e.rx});
    }
    vol.lesions = count;

    const double two_pi = 6.283185307179586;
    std::size_t i = 0;
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x, ++i) {
                bool fg = false;
                for (const auto& e : lesions)
                    if (inside(e, z, y, x)) {
                        fg = true;
                        break;
                    }
                double v;
                if (fg) {
                    vol.mask.data[i] = 1.0f;
                    v = spec.lesion_level + spec.lesion_jitter * (2.0 * rng.uniform() - 1.0) +
                        spec.noise * (2.0 * rng.uniform() - 1.0);
                    v = std::min(std::max(v, 0.55), 0.98);
                } else {
                    double tex = 0.0;
                    for (int k = 0; k < kWaves; ++k)
                        tex += std::cos(two_pi * (fz[k] * z / d + fy[k] * y / h + fx[k] * x / w) +
                                        phase[k]);
                    v = spec.bg_level + spec.bg_texture * tex / kWaves +
                        spec.noise * (2.0 * rng.uniform() - 1.0);
                    v = std::min(std::max(v, 0.02), 0.5);
                }
                vol.image.data[i] = static_cast<float>(v);
            }
        }
    }
    return vol;
}

namespace {

std::string volume_name(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "vol_%03d", idx);
    return buf;
}

} // namespace

void generate_synthetic(const SynthSpec& spec, const std::string& dir) {
    spec.validate();
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["spec"] = {{"volumes", spec.volumes},
                        {"depth", spec.depth},
                        {"height", spec.height},
                        {"width", spec.width},
                        {"min_lesions", spec.min_lesions},
                        {"max_lesions", spec.max_lesions},
                        {"min_radius", spec.min_radius},
                        {"max_radius", spec.max_radius},
                        {"bg_level", spec.bg_level},
                        {"bg_texture", spec.bg_texture},
                        {"lesion_level", spec.lesion_level},
                        {"lesion_jitter", spec.lesion_jitter},
                        {"noise", spec.noise},
                        {"val_fraction", spec.val_fraction},
                        {"seed", spec.seed}};

    nlohmann::json volumes = nlohmann::json::array();
    for (int v = 0; v < spec.volumes; ++v) {
        const SynthVolume vol = generate_volume(spec, v);
        const std::string base = volume_name(v);
        const std::string image_file = base + ".tcnt";
        write_tensor((fs::path(dir) / image_file).string(), vol.image);
        nlohmann::json masks = nlohmann::json::array();
        for (int z = 0; z < spec.depth; ++z) {
            char mask_file[48];
            std::snprintf(mask_file, sizeof(mask_file), "%s_mask_z%02d.pgm", base.c_str(), z);
            Tensor<float> slice({1, spec.height, spec.width});
            std::copy_n(vol.mask.ptr() + static_cast<std::size_t>(z) * spec.height * spec.width,
                        slice.numel(), slice.ptr());
            write_mask_pgm((fs::path(dir) / mask_file).string(), slice);
            masks.push_back(mask_file);
        }
        volumes.push_back({{"id", v}, {"image", image_file}, {"masks", masks}, {"lesions", vol.lesions}});
    }
    manifest["volumes"] = volumes;

    // seeded split by volume
    std::vector<int> ids(spec.volumes);
    for (int v = 0; v < spec.volumes; ++v) ids[v] = v;
    Rng split_rng(spec.seed ^ 0x59117aabULL);
    for (std::size_t k = ids.size(); k > 1; --k)
        std::swap(ids[k - 1], ids[split_rng.uniform_index(k)]);
    const int val_count = static_cast<int>(std::lround(spec.volumes * spec.val_fraction));
    std::vector<int> val(ids.begin(), ids.begin() + val_count);
    std::vector<int> train(ids.begin() + val_count, ids.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    manifest["splits"] = {{"train", train}, {"val", val}};

    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write dataset manifest in " + dir);
    f << manifest.dump(2) << '\n';
    if (!f) throw IoError("write failed: dataset manifest in " + dir);
}

} // namespace tcnet
