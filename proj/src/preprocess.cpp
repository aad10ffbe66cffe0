#include "tcnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "tcnet/cpa.hpp"
#include "tcnet/error.hpp"
#include "tcnet/tensor_io.hpp"

namespace fs = std::filesystem;

namespace tcnet {

Tensor<float> center_crop(const Tensor<float>& volume, int crop_h, int crop_w) {
    const int r = volume.rank();
    if (r < 2) throw DimensionError("center_crop: rank must be at least 2");
    const int h = volume.shape[r - 2], w = volume.shape[r - 1];
    if (crop_h > h || crop_w > w)
        throw DimensionError("center_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                             " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    const int oy = (h - crop_h) / 2, ox = (w - crop_w) / 2;
    std::vector<int> out_shape = volume.shape;
    out_shape[r - 2] = crop_h;
    out_shape[r - 1] = crop_w;
    Tensor<float> out(out_shape);
    const std::size_t planes = volume.numel() / (static_cast<std::size_t>(h) * w);
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = volume.ptr() + p * h * w;
        float* dst = out.ptr() + p * crop_h * crop_w;
        for (int y = 0; y < crop_h; ++y)
            std::copy_n(src + (y + oy) * w + ox, crop_w, dst + y * crop_w);
    }
    return out;
}

namespace {

// corner-aligned source coordinate
inline double src_coord(int dst, int out_extent, int in_extent) {
    if (out_extent <= 1) return 0.0;
    return static_cast<double>(dst) * (in_extent - 1) / (out_extent - 1);
}

} // namespace

Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w) {
    if (img.rank() != 2) throw DimensionError("resize_bilinear: expected [H,W]");
    const int h = img.shape[0], w = img.shape[1];
    if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_bilinear: output extents must be positive");
    Tensor<float> out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const double sy = src_coord(y, out_h, h);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = src_coord(x, out_w, w);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            const double v00 = img.data[y0 * w + x0], v01 = img.data[y0 * w + x1];
            const double v10 = img.data[y1 * w + x0], v11 = img.data[y1 * w + x1];
            out.data[y * out_w + x] = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                                         fy * ((1 - fx) * v10 + fx * v11));
        }
    }
    return out;
}

Tensor<float> resize_nearest(const Tensor<float>& img, int out_h, int out_w) {
    if (img.rank() != 2) throw DimensionError("resize_nearest: expected [H,W]");
    const int h = img.shape[0], w = img.shape[1];
    if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_nearest: output extents must be positive");
    Tensor<float> out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>(std::lround(src_coord(y, out_h, h)));
        for (int x = 0; x < out_w; ++x) {
            const int sx = static_cast<int>(std::lround(src_coord(x, out_w, w)));
            out.data[y * out_w + x] = img.data[sy * w + sx];
        }
    }
    return out;
}

std::vector<SegSample> preprocess_volume(const Tensor<float>& volume, const Tensor<float>& mask_volume,
                                         const PreprocessConfig& cfg, int volume_id) {
    if (volume.rank() != 3) throw DimensionError("preprocess: volume must be [D,H,W]");
    if (volume.shape != mask_volume.shape)
        throw DimensionError("preprocess: image and mask volumes differ: " + shape_string(volume.shape) +
                             " vs " + shape_string(mask_volume.shape));
    const int d = volume.shape[0];
    if (d < 4) throw DimensionError("preprocess: need at least 4 slices, got " + std::to_string(d));
    const int h0 = volume.shape[1], w0 = volume.shape[2];

    const int crop_side = cfg.crop > 0 ? cfg.crop : std::min(h0, w0);
    const int side = cfg.out_side;

    // per-slice crop + resize (bilinear for images, nearest for masks)
    std::vector<Tensor<float>> slices(d), masks(d);
    for (int z = 0; z < d; ++z) {
        Tensor<float> img({h0, w0}), msk({h0, w0});
        std::copy_n(volume.ptr() + static_cast<std::size_t>(z) * h0 * w0, img.numel(), img.ptr());
        std::copy_n(mask_volume.ptr() + static_cast<std::size_t>(z) * h0 * w0, msk.numel(), msk.ptr());
        img = center_crop(img, crop_side, crop_side);
        msk = center_crop(msk, crop_side, crop_side);
        slices[z] = crop_side == side ? std::move(img) : resize_bilinear(img, side, side);
        masks[z] = crop_side == side ? std::move(msk) : resize_nearest(msk, side, side);
    }

    std::vector<SegSample> samples;
    samples.reserve(static_cast<std::size_t>(d));
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    for (int z = 0; z < d; ++z) {
        SegSample s;
        s.volume_id = volume_id;
        s.slice_z = z;
        s.image = Tensor<float>({4, side, side});
        const int src_z[4] = {std::max(z - 2, 0), std::max(z - 1, 0), z, std::min(z + 1, d - 1)};
        for (int c = 0; c < 4; ++c)
            std::copy_n(slices[src_z[c]].ptr(), plane, s.image.ptr() + c * plane);
        s.mask = Tensor<float>({1, side, side});
        std::copy_n(masks[z].ptr(), plane, s.mask.ptr());
        s.coarse = make_coarse_target(s.mask, cfg.grid_side);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<SegSample> drop_empty(std::vector<SegSample> samples, double keep_empty_fraction) {
    if (keep_empty_fraction < 0.0 || keep_empty_fraction > 1.0)
        throw ConfigError("drop_empty: keep fraction must lie in [0, 1]");
    std::vector<SegSample> kept;
    kept.reserve(samples.size());
    long long empty_index = 0;
    for (auto& s : samples) {
        bool has_lesion = false;
        for (float v : s.mask.data)
            if (v != 0.0f) {
                has_lesion = true;
                break;
            }
        if (has_lesion) {
            kept.push_back(std::move(s));
        } else {
            const long long k = empty_index++;
            const long long before = static_cast<long long>(std::floor(k * keep_empty_fraction));
            const long long after = static_cast<long long>(std::floor((k + 1) * keep_empty_fraction));
            if (after > before) kept.push_back(std::move(s));
        }
    }
    if (kept.empty())
        std::cerr << "warning: drop_empty removed every sample (no lesion-bearing slices)\n";
    return kept;
}

Dataset load_dataset(const std::string& dir, const PreprocessConfig& cfg, double keep_empty_fraction) {
    const fs::path root(dir);
    std::ifstream f(root / "manifest.json");
    if (!f) throw IoError("cannot open dataset manifest: " + (root / "manifest.json").string());
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed dataset manifest: " + std::string(e.what()));
    }

    std::vector<int> train_ids = manifest.at("splits").at("train").get<std::vector<int>>();
    std::vector<int> val_ids = manifest.at("splits").at("val").get<std::vector<int>>();

    Dataset ds;
    for (const auto& vol : manifest.at("volumes")) {
        const int id = vol.at("id").get<int>();
        const bool in_train = std::find(train_ids.begin(), train_ids.end(), id) != train_ids.end();
        const bool in_val = std::find(val_ids.begin(), val_ids.end(), id) != val_ids.end();
        if (!in_train && !in_val) continue;

        Tensor<float> image = read_tensor((root / vol.at("image").get<std::string>()).string());
        if (image.rank() != 3) throw FormatError("dataset volume is not rank 3");
        Tensor<float> mask(image.shape);
        const auto mask_files = vol.at("masks").get<std::vector<std::string>>();
        if (static_cast<int>(mask_files.size()) != image.shape[0])
            throw FormatError("dataset volume has " + std::to_string(image.shape[0]) + " slices but " +
                              std::to_string(mask_files.size()) + " mask files");
        const std::size_t plane = static_cast<std::size_t>(image.shape[1]) * image.shape[2];
        for (int z = 0; z < image.shape[0]; ++z) {
            Tensor<float> m = read_mask_pgm((root / mask_files[z]).string());
            if (m.shape[1] != image.shape[1] || m.shape[2] != image.shape[2])
                throw FormatError("mask slice extent mismatch in " + mask_files[z]);
            std::copy_n(m.ptr(), plane, mask.ptr() + static_cast<std::size_t>(z) * plane);
        }
        std::vector<SegSample> samples = preprocess_volume(image, mask, cfg, id);
        auto& dst = in_train ? ds.train : ds.val;
        for (auto& s : samples) dst.push_back(std::move(s));
    }
    ds.train = drop_empty(std::move(ds.train), keep_empty_fraction);
    return ds;
}

} // namespace tcnet
