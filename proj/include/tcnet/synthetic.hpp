#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Deterministic synthetic lesion volumes: smooth low-frequency background
// texture plus brighter ellipsoid lesions; masks are the exact ellipsoid
// interiors. Background intensities stay below 0.5 and lesion intensities
// above 0.55, so mask/image consistency is checkable.
struct SynthSpec {
    int volumes = 40;
    int depth = 24, height = 96, width = 96;
    int min_lesions = 0, max_lesions = 3;
    double min_radius = 4.0, max_radius = 14.0; // per-axis, clamped to fit the extent
    double bg_level = 0.30, bg_texture = 0.08;
    double lesion_level = 0.78, lesion_jitter = 0.05;
    double noise = 0.02;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LesionInfo {
    double cz = 0, cy = 0, cx = 0; // center (voxel coordinates)
    double rz = 0, ry = 0, rx = 0; // per-axis radii
};

struct SynthVolume {
    Tensor<float> image; // [D,H,W]
    Tensor<float> mask;  // [D,H,W], binary
    int lesions = 0;
    std::vector<LesionInfo> lesion_params;
};

// Deterministic per (spec.seed + index).
SynthVolume generate_volume(const SynthSpec& spec, int index);

// Writes vol_###.tcnt images, per-slice mask PGMs and manifest.json
// (spec echo, volume list, seeded 80/20 train/val split by volume).
void generate_synthetic(const SynthSpec& spec, const std::string& dir);

} // namespace tcnet
