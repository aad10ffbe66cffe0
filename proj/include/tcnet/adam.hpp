#pragma once

#include <cmath>
#include <vector>

#include "tcnet/network.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// Adam with bias correction. Update order follows the fixed parameter visit
// order, so steps are bit-reproducible.
template <class T>
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Adam() = default;
    Adam(double b1, double b2, double e) : beta1(b1), beta2(b2), eps(e) {}

    void attach(TcNet<T>& net) {
        slots_.clear();
        steps_ = 0;
        net.visit_params([this](const std::string&, Tensor<T>& t, bool trainable) {
            if (!trainable) return;
            t.ensure_grad();
            slots_.push_back(Slot{&t, std::vector<T>(t.numel(), T(0)), std::vector<T>(t.numel(), T(0))});
        });
    }

    void step(double lr) {
        ++steps_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        for (auto& s : slots_) {
            Tensor<T>& p = *s.param;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const T g = p.grad[i];
                s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
                s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
                const double mhat = static_cast<double>(s.m[i]) / bc1;
                const double vhat = static_cast<double>(s.v[i]) / bc2;
                p.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

    long long steps() const { return steps_; }

private:
    struct Slot {
        Tensor<T>* param;
        std::vector<T> m, v;
    };
    std::vector<Slot> slots_;
    long long steps_ = 0;
};

} // namespace tcnet
