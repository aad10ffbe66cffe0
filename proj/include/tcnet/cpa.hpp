#pragma once

#include <string>
#include <vector>

#include "tcnet/layers.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// ---------------------------------------------------------------------------
// Coarse-grained patch attention: a GxG patch-level attention grid per encoder
// stage, expanded to a patch-constant map and applied residually.
// ---------------------------------------------------------------------------

// Mean over channels, then mean over each (H/G)x(W/G) patch: [N,C,H,W] -> [N,1,G,G].
template <class T>
Tensor<T> patch_summary(const Tensor<T>& feature, int grid_side = 6) {
    int c = 0;
    std::vector<int> sp;
    detail::split_batch(feature, 2, "patch_summary", c, sp);
    if (sp[0] % grid_side != 0)
        throw DimensionError("patch_summary: height " + std::to_string(sp[0]) + " not divisible by grid side " +
                             std::to_string(grid_side));
    if (sp[1] % grid_side != 0)
        throw DimensionError("patch_summary: width " + std::to_string(sp[1]) + " not divisible by grid side " +
                             std::to_string(grid_side));
    ChannelMean<T> cm;
    AvgPool2d<T> pool(sp[0] / grid_side, sp[1] / grid_side);
    return pool.forward(cm.forward(feature));
}

// Exact patch-constant replication of a grid to full resolution: every pixel of
// cell (gy, gx) carries grid[gy, gx]; no interpolation across patch borders.
template <class T>
Tensor<T> expand_patch_map(const Tensor<T>& grid, int out_h, int out_w) {
    int c = 0;
    std::vector<int> sp;
    const int n = detail::split_batch(grid, 2, "expand_patch_map", c, sp);
    const int gh = sp[0], gw = sp[1];
    if (out_h % gh != 0 || out_w % gw != 0)
        throw DimensionError("expand_patch_map: output extent " + std::to_string(out_h) + "x" +
                             std::to_string(out_w) + " not divisible by grid " + std::to_string(gh) + "x" +
                             std::to_string(gw));
    const int ph = out_h / gh, pw = out_w / gw;
    Tensor<T> out = detail::make_like_rank(grid, n, {c, out_h, out_w});
    const T* gp = grid.ptr();
    T* op = out.ptr();
    for (int nc = 0; nc < n * c; ++nc) {
        const T* g = gp + static_cast<std::size_t>(nc) * gh * gw;
        T* o = op + static_cast<std::size_t>(nc) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const T* grow = g + (y / ph) * gw;
            T* orow = o + y * out_w;
            for (int x = 0; x < out_w; ++x) orow[x] = grow[x / pw];
        }
    }
    return out;
}

// Adjoint of expand_patch_map: sums map gradients inside each cell.
template <class T>
Tensor<T> expand_patch_map_backward(const Tensor<T>& gmap, int grid_h, int grid_w) {
    int c = 0;
    std::vector<int> sp;
    const int n = detail::split_batch(gmap, 2, "expand_patch_map", c, sp);
    const int out_h = sp[0], out_w = sp[1];
    const int ph = out_h / grid_h, pw = out_w / grid_w;
    Tensor<T> out = detail::make_like_rank(gmap, n, {c, grid_h, grid_w});
    const T* gp = gmap.ptr();
    T* op = out.ptr();
    for (int nc = 0; nc < n * c; ++nc) {
        const T* g = gp + static_cast<std::size_t>(nc) * out_h * out_w;
        T* o = op + static_cast<std::size_t>(nc) * grid_h * grid_w;
        for (int y = 0; y < out_h; ++y) {
            const T* grow = g + y * out_w;
            T* orow = o + (y / ph) * grid_w;
            for (int x = 0; x < out_w; ++x) orow[x / pw] += grow[x];
        }
    }
    return out;
}

// Binary GxG target: a cell is 1 iff its patch of the ground-truth mask contains
// at least one lesion pixel. One target serves all encoder stages.
template <class T>
Tensor<T> make_coarse_target(const Tensor<T>& mask, int grid_side = 6) {
    int c = 0;
    std::vector<int> sp;
    const int n = detail::split_batch(mask, 2, "make_coarse_target", c, sp);
    if (n != 1 || c != 1)
        throw DimensionError("make_coarse_target: expected a single-channel mask, got " +
                             shape_string(mask.shape));
    const int h = sp[0], w = sp[1];
    if (h % grid_side != 0)
        throw DimensionError("make_coarse_target: height " + std::to_string(h) + " not divisible by grid side " +
                             std::to_string(grid_side));
    if (w % grid_side != 0)
        throw DimensionError("make_coarse_target: width " + std::to_string(w) + " not divisible by grid side " +
                             std::to_string(grid_side));
    for (const T v : mask.data)
        if (v != T(0) && v != T(1))
            throw ConfigError("make_coarse_target: mask is not binary");
    const int ph = h / grid_side, pw = w / grid_side;
    Tensor<T> grid({grid_side, grid_side});
    const T* mp = mask.ptr();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mp[y * w + x] != T(0)) grid.data[(y / ph) * grid_side + x / pw] = T(1);
    return grid;
}

// Mean binary cross-entropy over grid cells, probabilities clamped to
// [eps, 1 - eps] with eps = 1e-7.
template <class T>
double coarse_bce_loss(const Tensor<T>& grid, const Tensor<T>& target) {
    if (grid.numel() != target.numel())
        throw DimensionError("coarse_bce_loss: grid " + shape_string(grid.shape) + " vs target " +
                             shape_string(target.shape));
    constexpr double kEps = 1e-7;
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.numel(); ++i) {
        double p = static_cast<double>(grid.data[i]);
        p = std::min(std::max(p, kEps), 1.0 - kEps);
        const double t = static_cast<double>(target.data[i]);
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return acc / static_cast<double>(grid.numel());
}

// d(coarse_bce_loss)/d(grid), scaled by loss_scale; zero where the clamp is active.
template <class T>
Tensor<T> coarse_bce_grad(const Tensor<T>& grid, const Tensor<T>& target, double loss_scale) {
    constexpr double kEps = 1e-7;
    Tensor<T> g(grid.shape);
    const double inv = loss_scale / static_cast<double>(grid.numel());
    for (std::size_t i = 0; i < grid.numel(); ++i) {
        const double p = static_cast<double>(grid.data[i]);
        if (p <= kEps || p >= 1.0 - kEps) continue;
        const double t = static_cast<double>(target.data[i]);
        g.data[i] = static_cast<T>(inv * (-t / p + (1.0 - t) / (1.0 - p)));
    }
    return g;
}

template <class T>
struct AttentionResult {
    Tensor<T> grid;   // [N,1,G,G], strictly in (0,1)
    Tensor<T> map;    // [N,1,H,W], patch-constant
    Tensor<T> output; // [N,C,H,W] = map * input + input
};

// One CPA block: summary -> G^2 -> G^2/2 -> G^2 perceptron -> sigmoid grid ->
// patch-constant map -> residual application Y = A*F + F.
template <class T>
struct CpaBlock {
    int grid_side = 6;
    std::string name = "cpa";
    Dense<T> fc1, fc2;
    ReLU<T> relu;
    Sigmoid<T> sig;
    ChannelMean<T> cmean;
    AvgPool2d<T> pool;
    Tensor<T> f_cache, map_cache;

    void build(int grid, Rng& rng) {
        grid_side = grid;
        const int cells = grid * grid;
        if (cells % 2 != 0) throw ConfigError("cpa: grid cell count must be even");
        fc1.build(cells, cells / 2, rng);
        fc2.build(cells / 2, cells, rng);
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fc1.visit_params(prefix + ".fc1", fn);
        fc2.visit_params(prefix + ".fc2", fn);
    }

    AttentionResult<T> forward(const Tensor<T>& f) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(f, 2, name.c_str(), c, sp);
        const int h = sp[0], w = sp[1];
        if (h % grid_side != 0 || w % grid_side != 0)
            throw DimensionError(name + ": feature extent " + std::to_string(h) + "x" + std::to_string(w) +
                                 " not divisible by grid side " + std::to_string(grid_side));
        pool.window_h = h / grid_side;
        pool.window_w = w / grid_side;
        const int cells = grid_side * grid_side;

        Tensor<T> summary = pool.forward(cmean.forward(f)); // [N,1,G,G]
        Tensor<T> flat = summary;
        flat.reshape(f.rank() == 4 ? std::vector<int>{n, cells} : std::vector<int>{cells});
        Tensor<T> weights = sig.forward(fc2.forward(relu.forward(fc1.forward(flat))));

        AttentionResult<T> result;
        result.grid = weights;
        result.grid.reshape(f.rank() == 4 ? std::vector<int>{n, 1, grid_side, grid_side}
                                          : std::vector<int>{1, grid_side, grid_side});
        result.map = expand_patch_map(result.grid, h, w);

        result.output = Tensor<T>(f.shape);
        const T* fp = f.ptr();
        const T* mp = result.map.ptr();
        T* op = result.output.ptr();
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        for (int in = 0; in < n; ++in) {
            const T* m = mp + static_cast<std::size_t>(in) * hw;
            for (int ic = 0; ic < c; ++ic) {
                const T* fc = fp + (static_cast<std::size_t>(in) * c + ic) * hw;
                T* oc = op + (static_cast<std::size_t>(in) * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i) oc[i] = fc[i] * (T(1) + m[i]);
            }
        }
        f_cache = f;
        map_cache = result.map;
        return result;
    }

    // grad_grid_extra: additional gradient on the sigmoid grid (coarse BCE
    // supervision); pass nullptr when absent.
    Tensor<T> backward(const Tensor<T>& gout, const Tensor<T>* grad_grid_extra) {
        const Tensor<T>& f = f_cache;
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(f, 2, name.c_str(), c, sp);
        const int h = sp[0], w = sp[1];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        const int cells = grid_side * grid_side;

        // direct residual path and map gradient
        Tensor<T> gf(f.shape);
        Tensor<T> gmap = detail::make_like_rank(f, n, {1, h, w});
        const T* gp = gout.ptr();
        const T* fp = f.ptr();
        const T* mp = map_cache.ptr();
        T* gfp = gf.ptr();
        T* gmp = gmap.ptr();
        for (int in = 0; in < n; ++in) {
            const T* m = mp + static_cast<std::size_t>(in) * hw;
            T* gm = gmp + static_cast<std::size_t>(in) * hw;
            for (int ic = 0; ic < c; ++ic) {
                const T* go = gp + (static_cast<std::size_t>(in) * c + ic) * hw;
                const T* fc = fp + (static_cast<std::size_t>(in) * c + ic) * hw;
                T* gfc = gfp + (static_cast<std::size_t>(in) * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    gfc[i] = go[i] * (T(1) + m[i]);
                    gm[i] += go[i] * fc[i];
                }
            }
        }

        Tensor<T> ggrid = expand_patch_map_backward(gmap, grid_side, grid_side);
        if (grad_grid_extra)
            for (std::size_t i = 0; i < ggrid.numel(); ++i) ggrid.data[i] += grad_grid_extra->data[i];

        ggrid.reshape(f.rank() == 4 ? std::vector<int>{n, cells} : std::vector<int>{cells});
        Tensor<T> gflat = fc1.backward(relu.backward(fc2.backward(sig.backward(ggrid))));
        gflat.reshape(f.rank() == 4 ? std::vector<int>{n, 1, grid_side, grid_side}
                                    : std::vector<int>{1, grid_side, grid_side});
        Tensor<T> gsummary = cmean.backward(pool.backward(gflat));
        for (std::size_t i = 0; i < gf.numel(); ++i) gf.data[i] += gsummary.data[i];
        return gf;
    }
};

} // namespace tcnet
