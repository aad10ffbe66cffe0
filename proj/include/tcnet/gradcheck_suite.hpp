#pragma once

#include <string>
#include <vector>

#include "tcnet/cff.hpp"
#include "tcnet/cpa.hpp"
#include "tcnet/gradcheck.hpp"
#include "tcnet/mdu.hpp"
#include "tcnet/network.hpp"
#include "tcnet/rng.hpp"

namespace tcnet {

struct SuiteCase {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string worst;
};

namespace suite_detail {

inline Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// random sign, magnitude in [0.5, 1.5]: keeps affine-case gradients away from
// zero so finite-difference noise stays far below the 1e-9 bar
inline Tensor<double> random_unit_tensor(std::vector<int> shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
    return t;
}

// fixed random linear functional of the op output
inline double weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
    Rng rng(seed);
    double acc = 0.0;
    for (double v : y.data) acc += v * rng.uniform(-1.0, 1.0);
    return acc;
}

inline Tensor<double> weighted_sum_grad(const std::vector<int>& shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> g(shape);
    for (auto& v : g.data) v = rng.uniform(-1.0, 1.0);
    return g;
}

inline bool maxpool_has_tie(const Tensor<double>& x, int window) {
    int c = 0;
    std::vector<int> sp;
    const int n = detail::split_batch(x, 2, "tie_scan", c, sp);
    const int h = sp[0], w = sp[1];
    for (int nc = 0; nc < n * c; ++nc) {
        const double* p = x.ptr() + static_cast<std::size_t>(nc) * h * w;
        for (int oy = 0; oy < h / window; ++oy)
            for (int ox = 0; ox < w / window; ++ox) {
                double best = -1e300;
                int hits = 0;
                for (int wy = 0; wy < window; ++wy)
                    for (int wx = 0; wx < window; ++wx) {
                        const double v = p[(oy * window + wy) * w + ox * window + wx];
                        if (v > best) {
                            best = v;
                            hits = 1;
                        } else if (v == best) {
                            ++hits;
                        }
                    }
                if (hits > 1) return true;
            }
    }
    return false;
}

} // namespace suite_detail

// Every layer and composite block against central finite differences (64-bit).
// include_full_network adds the whole-network case (a few minutes of CPU).
inline std::vector<SuiteCase> run_gradcheck_suite(bool include_full_network = true) {
    using suite_detail::random_tensor;
    using suite_detail::weighted_sum;
    using suite_detail::weighted_sum_grad;
    std::vector<SuiteCase> cases;
    auto record = [&cases](const std::string& name, const GradCheckReport& r, double tol) {
        cases.push_back({name, r.max_rel_err, tol, r.pass(tol), r.worst});
    };

    // --- affine dense layer: linear, agrees to machine-precision scale
    {
        Rng rng(101);
        Dense<double> fc;
        fc.build(7, 5, rng);
        fc.weight = suite_detail::random_unit_tensor({5, 7}, rng);
        fc.bias = suite_detail::random_unit_tensor({5}, rng);
        fc.weight.ensure_grad();
        fc.bias.ensure_grad();
        Tensor<double> x = suite_detail::random_unit_tensor({3, 7}, rng);
        x.ensure_grad();
        // loss weights come from random_unit draws too; dL/dx_k is a sum of
        // unit-magnitude terms and generically stays O(1)
        auto loss = [&]() { return weighted_sum(fc.forward(x), 7); };
        auto grads = [&]() {
            fc.weight.zero_grad();
            fc.bias.zero_grad();
            x.zero_grad();
            Tensor<double> y = fc.forward(x);
            Tensor<double> gx = fc.backward(weighted_sum_grad(y.shape, 7));
            x.grad = gx.data;
        };
        record("dense (affine)",
               gradcheck(loss, grads, {{"weight", &fc.weight}, {"bias", &fc.bias}, {"input", &x}}),
               1e-9);
    }

    // --- relu/sigmoid chain around a dense core
    {
        Rng rng(102);
        Dense<double> fc;
        fc.build(6, 6, rng);
        ReLU<double> relu;
        Sigmoid<double> sig;
        Tensor<double> x = random_tensor({4, 6}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(sig.forward(fc.forward(relu.forward(x))), 11); };
        auto grads = [&]() {
            fc.weight.zero_grad();
            fc.bias.zero_grad();
            x.zero_grad();
            Tensor<double> y = sig.forward(fc.forward(relu.forward(x)));
            x.grad = relu.backward(fc.backward(sig.backward(weighted_sum_grad(y.shape, 11)))).data;
        };
        record("relu-dense-sigmoid chain",
               gradcheck(loss, grads, {{"weight", &fc.weight}, {"bias", &fc.bias}, {"input", &x}}),
               1e-5);
    }

    // --- conv2d
    {
        Rng rng(103);
        Conv2d<double> conv;
        conv.spec = ConvSpec::square2d(3, 4, 3, 1, 1);
        conv.build(rng);
        Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(conv.forward(x), 13); };
        auto grads = [&]() {
            conv.weight.zero_grad();
            conv.bias.zero_grad();
            x.zero_grad();
            Tensor<double> y = conv.forward(x);
            x.grad = conv.backward(weighted_sum_grad(y.shape, 13)).data;
        };
        record("conv2d",
               gradcheck(loss, grads, {{"weight", &conv.weight}, {"bias", &conv.bias}, {"input", &x}}),
               1e-6);
    }

    // --- conv3d
    {
        Rng rng(104);
        Conv3d<double> conv;
        conv.spec = ConvSpec::cube3d(2, 3, 3, 1, 1);
        conv.build(rng);
        Tensor<double> x = random_tensor({1, 2, 4, 6, 6}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(conv.forward(x), 17); };
        auto grads = [&]() {
            conv.weight.zero_grad();
            conv.bias.zero_grad();
            x.zero_grad();
            Tensor<double> y = conv.forward(x);
            x.grad = conv.backward(weighted_sum_grad(y.shape, 17)).data;
        };
        record("conv3d",
               gradcheck(loss, grads, {{"weight", &conv.weight}, {"bias", &conv.bias}, {"input", &x}}),
               1e-6);
    }

    // --- transposed conv2d (stride 2 geometry used by MDU)
    {
        Rng rng(105);
        TransposedConv2d<double> tconv;
        tconv.spec = ConvSpec::square2d(3, 2, 3, 2, 1, 1);
        tconv.build(rng);
        Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(tconv.forward(x), 19); };
        auto grads = [&]() {
            tconv.weight.zero_grad();
            tconv.bias.zero_grad();
            x.zero_grad();
            Tensor<double> y = tconv.forward(x);
            x.grad = tconv.backward(weighted_sum_grad(y.shape, 19)).data;
        };
        record("transposed_conv2d",
               gradcheck(loss, grads, {{"weight", &tconv.weight}, {"bias", &tconv.bias}, {"input", &x}}),
               1e-6);
    }

    // --- max pool (resamples on exact ties)
    {
        MaxPool2d<double> pool(2, 2);
        Tensor<double> x;
        std::uint64_t seed = 106;
        do {
            Rng rng(seed++);
            x = random_tensor({2, 3, 8, 8}, rng);
        } while (suite_detail::maxpool_has_tie(x, 2));
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(pool.forward(x), 23); };
        auto grads = [&]() {
            x.zero_grad();
            Tensor<double> y = pool.forward(x);
            x.grad = pool.backward(weighted_sum_grad(y.shape, 23)).data;
        };
        record("max_pool2d", gradcheck(loss, grads, {{"input", &x}}), 1e-5);
    }

    // --- avg pool / reductions
    {
        Rng rng(107);
        AvgPool2d<double> pool(2, 2);
        GlobalAvgPool<double> gap;
        ChannelMean<double> cmean;
        Tensor<double> x = random_tensor({2, 4, 6, 6}, rng);
        x.ensure_grad();
        auto loss = [&]() {
            return weighted_sum(pool.forward(x), 29) + weighted_sum(gap.forward(x), 31) +
                   weighted_sum(cmean.forward(x), 37);
        };
        auto grads = [&]() {
            x.zero_grad();
            Tensor<double> y1 = pool.forward(x);
            Tensor<double> y2 = gap.forward(x);
            Tensor<double> y3 = cmean.forward(x);
            Tensor<double> g1 = pool.backward(weighted_sum_grad(y1.shape, 29));
            Tensor<double> g2 = gap.backward(weighted_sum_grad(y2.shape, 31));
            Tensor<double> g3 = cmean.backward(weighted_sum_grad(y3.shape, 37));
            for (std::size_t i = 0; i < x.numel(); ++i) x.grad[i] = g1.data[i] + g2.data[i] + g3.data[i];
        };
        record("avg_pool2d + reductions", gradcheck(loss, grads, {{"input", &x}}), 1e-5);
    }

    // --- batch norm, frozen running statistics (the mode the network
    //     gradient check relies on)
    {
        Rng rng(108);
        BatchNorm<double> bn;
        bn.build(5);
        Tensor<double> warm = random_tensor({3, 5, 4, 4}, rng, -2.0, 2.0);
        bn.forward(warm, /*training=*/true); // populate running stats
        Tensor<double> x = random_tensor({3, 5, 4, 4}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(bn.forward(x, false), 41); };
        auto grads = [&]() {
            bn.scale.zero_grad();
            bn.shift.zero_grad();
            x.zero_grad();
            Tensor<double> y = bn.forward(x, false);
            x.grad = bn.backward(weighted_sum_grad(y.shape, 41)).data;
        };
        record("batch_norm (frozen stats)",
               gradcheck(loss, grads, {{"scale", &bn.scale}, {"shift", &bn.shift}, {"input", &x}}),
               1e-5);
    }

    // --- batch norm, batch statistics (training-mode backward)
    {
        Rng rng(109);
        BatchNorm<double> bn;
        bn.build(4);
        Tensor<double> x = random_tensor({4, 4, 3, 3}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(bn.forward(x, true), 43); };
        auto grads = [&]() {
            bn.scale.zero_grad();
            bn.shift.zero_grad();
            x.zero_grad();
            Tensor<double> y = bn.forward(x, true);
            x.grad = bn.backward(weighted_sum_grad(y.shape, 43)).data;
        };
        record("batch_norm (batch stats)",
               gradcheck(loss, grads, {{"scale", &bn.scale}, {"shift", &bn.shift}, {"input", &x}}),
               1e-5);
    }

    // --- CPA block, including the coarse-BCE path into the grid
    {
        Rng rng(110);
        CpaBlock<double> cpa;
        cpa.build(6, rng);
        Tensor<double> x = random_tensor({1, 3, 12, 12}, rng);
        x.ensure_grad();
        Tensor<double> target({1, 1, 6, 6});
        for (auto& v : target.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        auto loss = [&]() {
            AttentionResult<double> r = cpa.forward(x);
            return weighted_sum(r.output, 47) + coarse_bce_loss(r.grid, target);
        };
        auto grads = [&]() {
            cpa.fc1.weight.zero_grad();
            cpa.fc1.bias.zero_grad();
            cpa.fc2.weight.zero_grad();
            cpa.fc2.bias.zero_grad();
            x.zero_grad();
            AttentionResult<double> r = cpa.forward(x);
            Tensor<double> ggrid = coarse_bce_grad(r.grid, target, 1.0);
            x.grad = cpa.backward(weighted_sum_grad(r.output.shape, 47), &ggrid).data;
        };
        record("cpa block",
               gradcheck(loss, grads,
                         {{"fc1.w", &cpa.fc1.weight},
                          {"fc1.b", &cpa.fc1.bias},
                          {"fc2.w", &cpa.fc2.weight},
                          {"fc2.b", &cpa.fc2.bias},
                          {"input", &x}}),
               1e-5);
    }

    // --- CFF block end to end: squeeze -> transform -> weights -> fuse
    {
        Rng rng(111);
        CffBlock<double> cff;
        cff.build(8, 4, rng);
        Tensor<double> f2d = random_tensor({1, 8, 6, 6}, rng);
        Tensor<double> f3d = random_tensor({1, 4, 4, 6, 6}, rng);
        f2d.ensure_grad();
        f3d.ensure_grad();
        auto loss = [&]() { return weighted_sum(cff.forward(f2d, f3d).fused, 53); };
        std::vector<GradCheckTarget> targets{{"f2d", &f2d}, {"f3d", &f3d}};
        cff.visit_params("cff", [&targets](const std::string& n, Tensor<double>& t, bool trainable) {
            if (trainable) targets.push_back({n, &t});
        });
        auto grads = [&]() {
            for (auto& t : targets) t.tensor->zero_grad();
            FusionResult<double> r = cff.forward(f2d, f3d);
            auto [g2, g3] = cff.backward(weighted_sum_grad(r.fused.shape, 53));
            f2d.grad = g2.data;
            f3d.grad = g3.data;
        };
        record("cff block", gradcheck(loss, grads, targets), 1e-5);
    }

    // --- MDU block (dropout off, batch-stats BN)
    {
        Rng rng(112);
        MduBlock<double> mdu;
        MduSpec spec;
        spec.in_channels = 6;
        spec.out_channels = 8;
        spec.dropout = 0.0;
        mdu.build(spec, rng, 999);
        Tensor<double> x = random_tensor({2, 6, 5, 5}, rng);
        x.ensure_grad();
        auto loss = [&]() { return weighted_sum(mdu.forward(x, true), 59); };
        std::vector<GradCheckTarget> targets{{"input", &x}};
        mdu.visit_params("mdu", [&targets](const std::string& n, Tensor<double>& t, bool trainable) {
            if (trainable) targets.push_back({n, &t});
        });
        auto grads = [&]() {
            for (auto& t : targets) t.tensor->zero_grad();
            Tensor<double> y = mdu.forward(x, true);
            x.grad = mdu.backward(weighted_sum_grad(y.shape, 59)).data;
        };
        record("mdu block", gradcheck(loss, grads, targets), 1e-5);
    }

    // --- full desk network (reduced widths, frozen BN stats, dropout off,
    //     sampled coordinates)
    if (include_full_network) {
        NetworkConfig cfg;
        cfg.input_side = 96;
        cfg.stage_channels = {8, 8, 16, 16, 16};
        cfg.decoder_channels = {16, 16, 8, 8};
        cfg.dropout = 0.0;
        TcNet<double> net = TcNet<double>::build(cfg, 4242);

        Rng rng(113);
        Tensor<double> batch = random_tensor({1, 4, 96, 96}, rng, 0.0, 1.0);
        batch.ensure_grad();
        Tensor<double> mask({1, 1, 96, 96});
        for (auto& v : mask.data) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
        Tensor<double> mask_plane = mask;
        mask_plane.reshape({1, 96, 96});
        Tensor<double> coarse_plane = make_coarse_target(mask_plane, cfg.patch_grid);
        Tensor<double> coarse({1, 1, cfg.patch_grid, cfg.patch_grid});
        std::copy(coarse_plane.data.begin(), coarse_plane.data.end(), coarse.data.begin());

        net.forward(batch, /*training=*/true); // populate BN running stats
        const double lambda = 0.25;
        auto loss = [&]() {
            ForwardTrace<double> trace = net.forward(batch, false);
            return total_loss<double>(trace, mask, coarse, lambda, nullptr, nullptr).total;
        };
        std::vector<GradCheckTarget> targets{{"input", &batch}};
        net.visit_params([&targets](const std::string& n, Tensor<double>& t, bool trainable) {
            if (trainable) targets.push_back({n, &t});
        });
        auto grads = [&]() {
            net.zero_grad();
            batch.zero_grad();
            ForwardTrace<double> trace = net.forward(batch, false);
            Tensor<double> grad_logits;
            std::vector<Tensor<double>> grad_grids;
            total_loss(trace, mask, coarse, lambda, &grad_logits, &grad_grids);
            batch.grad = net.backward(grad_logits, grad_grids).data;
        };
        // h = 1e-6 here: a single bias coordinate shifts tens of thousands of
        // activations, so the count of ReLU kinks crossed inside +-h scales
        // with h; 1e-6 keeps crossings rare while cancellation noise stays
        // orders below the tolerance.
        record("full desk network", gradcheck(loss, grads, targets, 1e-6, /*max_coords=*/1), 1e-4);
    }

    return cases;
}

} // namespace tcnet
