#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tcnet/layers.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// ---------------------------------------------------------------------------
// Cross-feature fusion: squeeze the 3D auxiliary feature map to one channel,
// transform it back to C channels with 3x3 convolutions, derive per-channel
// sigmoid weights from the concatenated global descriptors, and recombine.
// ---------------------------------------------------------------------------

// out[c] = w3[c] * tfm3d[c] + w2[c] * f2d[c], channelwise broadcast.
template <class T>
Tensor<T> cff_fuse(const Tensor<T>& f2d, const Tensor<T>& tfm3d, const Tensor<T>& w2,
                   const Tensor<T>& w3) {
    if (f2d.shape != tfm3d.shape)
        throw DimensionError("cff_fuse: feature shapes differ: " + shape_string(f2d.shape) + " vs " +
                             shape_string(tfm3d.shape));
    int c = 0;
    std::vector<int> sp;
    const int n = detail::split_batch(f2d, 2, "cff_fuse", c, sp);
    if (static_cast<std::size_t>(n) * c != w2.numel() || w2.numel() != w3.numel())
        throw DimensionError("cff_fuse: weight vectors must have one entry per channel");
    const std::size_t hw = static_cast<std::size_t>(sp[0]) * sp[1];
    Tensor<T> out(f2d.shape);
    const T* ap = f2d.ptr();
    const T* bp = tfm3d.ptr();
    const T* w2p = w2.ptr();
    const T* w3p = w3.ptr();
    T* op = out.ptr();
    for (int nc = 0; nc < n * c; ++nc) {
        const T a = w2p[nc], b = w3p[nc];
        const T* x2 = ap + static_cast<std::size_t>(nc) * hw;
        const T* x3 = bp + static_cast<std::size_t>(nc) * hw;
        T* o = op + static_cast<std::size_t>(nc) * hw;
        for (std::size_t i = 0; i < hw; ++i) o[i] = b * x3[i] + a * x2[i];
    }
    return out;
}

template <class T>
struct FusionResult {
    Tensor<T> fused; // [N,C,H,W]
    Tensor<T> w2;    // [N,C] in (0,1)
    Tensor<T> w3;    // [N,C] in (0,1)
};

template <class T>
struct CffBlock {
    int channels = 0;   // 2D branch width C at this stage
    int channels3d = 0; // 3D branch width
    std::string name = "cff";
    Conv3d<T> squeeze_conv; // 1x1x1, C3 -> 1
    DepthMean<T> depth_mean;
    Conv2d<T> transform_conv; // 3x3, 1 -> C, padding 1
    GlobalAvgPool<T> gap2d, gap3d;
    Dense<T> w2_fc1, w2_fc2, w3_fc1, w3_fc2;
    ReLU<T> w2_relu, w3_relu;
    Sigmoid<T> w2_sig, w3_sig;
    // caches
    Tensor<T> f2d_cache, tfm_cache, w2_cache, w3_cache;

    void build(int c2d, int c3d, Rng& rng) {
        if (c2d <= 0 || c3d <= 0) throw ConfigError("cff: channel counts must be positive");
        if (c2d % 8 != 0)
            throw ConfigError("cff: 2D channel count " + std::to_string(c2d) + " not divisible by 8");
        channels = c2d;
        channels3d = c3d;
        squeeze_conv.spec = ConvSpec::cube3d(c3d, 1, 1);
        squeeze_conv.build(rng);
        transform_conv.spec = ConvSpec::square2d(1, c2d, 3, 1, 1);
        transform_conv.build(rng);
        w2_fc1.build(2 * c2d, c2d / 8, rng);
        w2_fc2.build(c2d / 8, c2d, rng);
        w3_fc1.build(2 * c2d, c2d / 8, rng);
        w3_fc2.build(c2d / 8, c2d, rng);
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        squeeze_conv.visit_params(prefix + ".squeeze", fn);
        transform_conv.visit_params(prefix + ".transform", fn);
        w2_fc1.visit_params(prefix + ".w2_fc1", fn);
        w2_fc2.visit_params(prefix + ".w2_fc2", fn);
        w3_fc1.visit_params(prefix + ".w3_fc1", fn);
        w3_fc2.visit_params(prefix + ".w3_fc2", fn);
    }

    // [N,C3,D,H,W] -> [N,1,H,W]: 1x1x1 conv collapses channels, then the depth
    // axis is collapsed by arithmetic mean.
    Tensor<T> squeeze_3d(const Tensor<T>& f3d) { return depth_mean.forward(squeeze_conv.forward(f3d)); }

    Tensor<T> transform_3d(const Tensor<T>& squeezed) { return transform_conv.forward(squeezed); }

    // g = concat(gap(tfm3d), gap(f2d)) with the 3D-transformed descriptors first.
    std::pair<Tensor<T>, Tensor<T>> fusion_weights(const Tensor<T>& f2d, const Tensor<T>& tfm3d) {
        Tensor<T> g = concat_channels(gap3d.forward(tfm3d), gap2d.forward(f2d));
        Tensor<T> w2 = w2_sig.forward(w2_fc2.forward(w2_relu.forward(w2_fc1.forward(g))));
        Tensor<T> w3 = w3_sig.forward(w3_fc2.forward(w3_relu.forward(w3_fc1.forward(g))));
        return {std::move(w2), std::move(w3)};
    }

    FusionResult<T> forward(const Tensor<T>& f2d, const Tensor<T>& f3d) {
        int c = 0;
        std::vector<int> sp2;
        detail::split_batch(f2d, 2, name.c_str(), c, sp2);
        int c3 = 0;
        std::vector<int> sp3;
        detail::split_batch(f3d, 3, name.c_str(), c3, sp3);
        if (sp3[1] != sp2[0] || sp3[2] != sp2[1])
            throw DimensionError(name + ": 3D spatial extent " + std::to_string(sp3[1]) + "x" +
                                 std::to_string(sp3[2]) + " does not match the paired 2D feature " +
                                 std::to_string(sp2[0]) + "x" + std::to_string(sp2[1]));
        if (c != channels)
            throw DimensionError(name + ": 2D channel count " + std::to_string(c) + ", block built for " +
                                 std::to_string(channels));

        Tensor<T> tfm = transform_3d(squeeze_3d(f3d));
        auto [w2, w3] = fusion_weights(f2d, tfm);
        FusionResult<T> out;
        out.fused = cff_fuse(f2d, tfm, w2, w3);
        out.w2 = w2;
        out.w3 = w3;
        f2d_cache = f2d;
        tfm_cache = tfm;
        w2_cache = std::move(w2);
        w3_cache = std::move(w3);
        return out;
    }

    // Returns (grad wrt f2d, grad wrt f3d).
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& gout) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gout, 2, name.c_str(), c, sp);
        const std::size_t hw = static_cast<std::size_t>(sp[0]) * sp[1];

        Tensor<T> gf2d(f2d_cache.shape);
        Tensor<T> gtfm(tfm_cache.shape);
        Tensor<T> gw2(w2_cache.shape);
        Tensor<T> gw3(w3_cache.shape);
        const T* gp = gout.ptr();
        const T* f2p = f2d_cache.ptr();
        const T* tfp = tfm_cache.ptr();
        const T* w2p = w2_cache.ptr();
        const T* w3p = w3_cache.ptr();
        for (int nc = 0; nc < n * c; ++nc) {
            const T* go = gp + static_cast<std::size_t>(nc) * hw;
            const T* x2 = f2p + static_cast<std::size_t>(nc) * hw;
            const T* x3 = tfp + static_cast<std::size_t>(nc) * hw;
            T* g2 = gf2d.ptr() + static_cast<std::size_t>(nc) * hw;
            T* g3 = gtfm.ptr() + static_cast<std::size_t>(nc) * hw;
            T acc2 = 0, acc3 = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                g2[i] = w2p[nc] * go[i];
                g3[i] = w3p[nc] * go[i];
                acc2 += go[i] * x2[i];
                acc3 += go[i] * x3[i];
            }
            gw2.data[nc] = acc2;
            gw3.data[nc] = acc3;
        }

        // weight MLPs back to the concatenated descriptor
        Tensor<T> gg2 = w2_fc1.backward(w2_relu.backward(w2_fc2.backward(w2_sig.backward(gw2))));
        Tensor<T> gg3 = w3_fc1.backward(w3_relu.backward(w3_fc2.backward(w3_sig.backward(gw3))));
        for (std::size_t i = 0; i < gg2.numel(); ++i) gg2.data[i] += gg3.data[i];
        Tensor<T> gdesc3, gdesc2;
        split_channels(gg2, channels, gdesc3, gdesc2);
        Tensor<T> gtfm_gap = gap3d.backward(gdesc3);
        Tensor<T> gf2d_gap = gap2d.backward(gdesc2);
        for (std::size_t i = 0; i < gtfm.numel(); ++i) gtfm.data[i] += gtfm_gap.data[i];
        for (std::size_t i = 0; i < gf2d.numel(); ++i) gf2d.data[i] += gf2d_gap.data[i];

        // transform -> depth mean -> squeeze -> 3D feature
        Tensor<T> gf3d = squeeze_conv.backward(depth_mean.backward(transform_conv.backward(gtfm)));
        return {std::move(gf2d), std::move(gf3d)};
    }
};

} // namespace tcnet
