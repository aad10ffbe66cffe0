#pragma once

#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// One training/eval unit: stacked neighbouring slices (z-2, z-1, z, z+1) with
// edge-clamped indices, the binary mask of slice z, and the shared coarse
// patch target.
struct SegSample {
    Tensor<float> image;  // [4,H,W]
    Tensor<float> mask;   // [1,H,W], binary
    Tensor<float> coarse; // [G,G], binary
    int volume_id = -1;
    int slice_z = -1;
};

struct PreprocessConfig {
    int crop = 0; // center-crop side, 0 = keep extents
    int out_side = 96;
    int grid_side = 6;
};

// Center crop of the trailing two axes; crop larger than the input is an error.
Tensor<float> center_crop(const Tensor<float>& volume, int crop_h, int crop_w);

// Corner-aligned bilinear resize of [H,W]; sampling grid is
// src = dst * (in-1)/(out-1), so resizing at the same extent is the identity.
Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w);

// Nearest-neighbour resize (keeps masks binary), same corner-aligned grid.
Tensor<float> resize_nearest(const Tensor<float>& img, int out_h, int out_w);

// Slices the volume along Z into SegSamples with 4-slice stacks.
std::vector<SegSample> preprocess_volume(const Tensor<float>& volume, const Tensor<float>& mask_volume,
                                         const PreprocessConfig& cfg, int volume_id = -1);

// Removes lesion-free samples, keeping a deterministic fraction of them: the
// k-th empty sample (0-based, in order) is kept iff
// floor((k+1)*f) > floor(k*f); total kept = floor(n_empty * f).
std::vector<SegSample> drop_empty(std::vector<SegSample> samples, double keep_empty_fraction);

struct Dataset {
    std::vector<SegSample> train;
    std::vector<SegSample> val;
};

// Loads a generated dataset directory (manifest.json + volumes + mask slices),
// preprocesses every volume and filters the training split.
Dataset load_dataset(const std::string& dir, const PreprocessConfig& cfg, double keep_empty_fraction);

} // namespace tcnet
