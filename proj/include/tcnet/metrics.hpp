#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Strictly binary mask, 2D [H,W] or 3D [D,H,W], with physical spacing in mm
// per axis (entries aligned with shape axes; default isotropic 1 mm).
struct BinaryMask {
    std::vector<int> shape;
    std::vector<std::uint8_t> values;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    BinaryMask() = default;
    BinaryMask(std::vector<int> s, std::vector<std::uint8_t> v);

    static BinaryMask from_tensor(const Tensor<float>& t, std::array<double, 3> spacing = {1, 1, 1});

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t foreground_count() const;
};

// Dice similarity coefficient 2TP/(2TP+FP+FN); both-empty pairs score 1.
double dsc(const BinaryMask& pred, const BinaryMask& gt);

// Voxel-pooled DSC over a test set: 2*sum(TP) / (2*sum(TP)+sum(FP)+sum(FN)).
double dsc_global(const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs);

// (TP/(TP+FN), TP/(TP+FP)); an empty denominator scores 1 when both masks are
// empty and 0 otherwise.
std::pair<double, double> recall_precision(const BinaryMask& pred, const BinaryMask& gt);

// Boundary voxels: foreground with at least one face neighbour (4 in 2D, 6 in
// 3D) outside the foreground. Coordinates are (z,y,x) with z = 0 in 2D.
std::vector<std::array<int, 3>> surface(const BinaryMask& mask);

// Average symmetric surface distance in mm; absent when either surface is empty.
std::optional<double> assd(const BinaryMask& pred, const BinaryMask& gt);

// Symmetric Hausdorff distance (100th percentile) in mm; same emptiness rule.
std::optional<double> hd(const BinaryMask& pred, const BinaryMask& gt);

struct SampleMetrics {
    std::string id;
    double dsc = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    std::optional<double> assd_mm;
    std::optional<double> hd_mm;
};

struct MetricsReport {
    std::vector<SampleMetrics> per_sample;
    double dsc_global = 0.0;
    // mean / stddev over samples; distance aggregates skip samples with an
    // empty surface and count them in distance_excluded
    double mean_dsc = 0.0, std_dsc = 0.0;
    double mean_recall = 0.0, std_recall = 0.0;
    double mean_precision = 0.0, std_precision = 0.0;
    double mean_assd = 0.0, std_assd = 0.0;
    double mean_hd = 0.0, std_hd = 0.0;
    int distance_excluded = 0;
};

MetricsReport compute_metrics(const std::vector<std::string>& ids,
                              const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs);

// One row per sample plus MEAN / STD / GLOBAL rows (Table-style column set).
void write_metrics_csv(const std::string& path, const MetricsReport& report);

} // namespace tcnet
