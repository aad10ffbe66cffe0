#pragma once

#include <cmath>

#include "tcnet/tensor.hpp"

namespace tcnet {

template <class T>
struct SegLossResult {
    double dice = 0.0; // soft-Dice loss, mean over batch
    double bce = 0.0;  // pixel BCE with logits, mean over batch and pixels
    Tensor<T> grad_logits;
};

// Soft-Dice (smooth term 1.0) plus pixel binary cross-entropy on logits, equal
// weights. Targets must be binary. Accumulation in double regardless of T.
template <class T>
SegLossResult<T> dice_bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
    if (logits.shape != target.shape)
        throw DimensionError("seg loss: logits " + shape_string(logits.shape) + " vs target " +
                             shape_string(target.shape));
    const int n = logits.rank() == 4 ? logits.shape[0] : 1;
    const std::size_t per = logits.numel() / static_cast<std::size_t>(n);
    constexpr double kSmooth = 1.0;

    SegLossResult<T> res;
    res.grad_logits = Tensor<T>(logits.shape);
    std::vector<double> prob(logits.numel());
    double bce_acc = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const double z = static_cast<double>(logits.data[i]);
        const double t = static_cast<double>(target.data[i]);
        prob[i] = 1.0 / (1.0 + std::exp(-z));
        // stable softplus form of -[t log p + (1-t) log(1-p)]
        bce_acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    res.bce = bce_acc / static_cast<double>(logits.numel());

    const double bce_scale = 1.0 / static_cast<double>(logits.numel());
    double dice_acc = 0.0;
    for (int in = 0; in < n; ++in) {
        const std::size_t base = static_cast<std::size_t>(in) * per;
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            inter += prob[base + i] * static_cast<double>(target.data[base + i]);
            psum += prob[base + i];
            tsum += static_cast<double>(target.data[base + i]);
        }
        const double num = 2.0 * inter + kSmooth;
        const double den = psum + tsum + kSmooth;
        dice_acc += 1.0 - num / den;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < per; ++i) {
            const double p = prob[base + i];
            const double t = static_cast<double>(target.data[base + i]);
            const double ddice_dp = -(2.0 * t * den - num) / (den * den);
            const double dp_dz = p * (1.0 - p);
            res.grad_logits.data[base + i] =
                static_cast<T>(ddice_dp * dp_dz * inv_n + (p - t) * bce_scale);
        }
    }
    res.dice = dice_acc / static_cast<double>(n);
    return res;
}

} // namespace tcnet
