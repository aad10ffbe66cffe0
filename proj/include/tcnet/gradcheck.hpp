#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tcnet/rng.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

struct GradCheckTarget {
    std::string name;
    Tensor<double>* tensor = nullptr;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;
    std::size_t checked = 0;

    bool pass(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against analytic gradients, in 64-bit mode.
//
// loss_fn   pure forward evaluation of the scalar under test
// grad_fn   zero grads, then forward + backward at the base point
// h         perturbation (1e-5 central differences)
// max_coords_per_tensor  < 0 checks every coordinate, otherwise a seeded
//                        sample without replacement (used for whole-network checks)
//
// The error is |analytic - numeric| / max(|analytic| + |numeric|, floor): a
// mixed criterion, so true-zero gradients (where finite differences return
// pure rounding noise) are judged on an absolute scale of tol * floor.
inline GradCheckReport gradcheck(const std::function<double()>& loss_fn,
                                 const std::function<void()>& grad_fn,
                                 const std::vector<GradCheckTarget>& targets, double h = 1e-5,
                                 int max_coords_per_tensor = -1, std::uint64_t sample_seed = 17,
                                 double denom_floor = 1e-2) {
    grad_fn();
    // snapshot analytic gradients; loss_fn below runs forwards only
    std::vector<std::vector<double>> analytic;
    analytic.reserve(targets.size());
    for (const auto& t : targets) analytic.push_back(t.tensor->grad);

    GradCheckReport report;
    Rng rng(sample_seed);
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        Tensor<double>& t = *targets[ti].tensor;
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor < 0 || t.numel() <= static_cast<std::size_t>(max_coords_per_tensor)) {
            coords.resize(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) coords[i] = i;
        } else {
            std::vector<std::size_t> all(t.numel());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            for (int k = 0; k < max_coords_per_tensor; ++k) {
                const std::size_t j = k + rng.uniform_index(all.size() - k);
                std::swap(all[k], all[j]);
                coords.push_back(all[k]);
            }
        }
        for (const std::size_t i : coords) {
            const double orig = t.data[i];
            t.data[i] = orig + h;
            const double fp = loss_fn();
            t.data[i] = orig - h;
            const double fm = loss_fn();
            t.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double ana = analytic[ti][i];
            const double denom = std::max(std::abs(ana) + std::abs(numeric), denom_floor);
            const double rel = std::abs(ana - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = targets[ti].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

} // namespace tcnet
