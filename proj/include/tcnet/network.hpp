#pragma once

#include <array>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tcnet/cff.hpp"
#include "tcnet/cpa.hpp"
#include "tcnet/layers.hpp"
#include "tcnet/loss.hpp"
#include "tcnet/mdu.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// ---------------------------------------------------------------------------
// Network configuration. The desk-scale defaults train on a laptop CPU; the
// full-scale variant uses input_side 192 and widths [32,64,128,256,512].
// ---------------------------------------------------------------------------
struct NetworkConfig {
    int input_side = 96; // stage extents H/2^i must all divide by patch_grid
    int in_slices = 4;
    std::array<int, 5> stage_channels{8, 16, 32, 64, 128};
    std::vector<int> cff_stages{4, 5}; // 1-based encoder stages with fusion
    std::array<int, 4> decoder_channels{64, 32, 16, 8};
    int patch_grid = 6;
    double dropout = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    bool use_cpa = true;
    bool use_cff = true;
    bool use_mdu = true;

    std::array<int, 5> stage_extents() const {
        return {input_side, input_side / 2, input_side / 4, input_side / 8, input_side / 16};
    }

    // Collects every violated constraint into one ConfigError.
    void validate() const {
        std::string errs;
        auto fail = [&errs](const std::string& m) {
            if (!errs.empty()) errs += "; ";
            errs += m;
        };
        if (patch_grid <= 0) fail("patch_grid must be positive");
        if ((patch_grid * patch_grid) % 2 != 0) fail("patch_grid cell count must be even");
        if (input_side <= 0 || input_side % 16 != 0)
            fail("input_side " + std::to_string(input_side) + " must be a positive multiple of 16");
        else if (patch_grid > 0 && (input_side / 16) % patch_grid != 0)
            fail("input_side " + std::to_string(input_side) + " gives stage-5 extent " +
                 std::to_string(input_side / 16) + " not divisible by patch grid " +
                 std::to_string(patch_grid));
        if (in_slices != 4) fail("in_slices must be 4");
        for (int i = 0; i < 5; ++i)
            if (stage_channels[i] <= 0) fail("stage_channels[" + std::to_string(i) + "] must be positive");
        for (int s : cff_stages) {
            if (s < 1 || s > 5) {
                fail("cff stage " + std::to_string(s) + " out of range 1..5");
            } else if (stage_channels[s - 1] % 8 != 0) {
                fail("stage " + std::to_string(s) + " width " + std::to_string(stage_channels[s - 1]) +
                     " not divisible by 8 (required at CFF stages)");
            }
        }
        for (int i = 0; i < 4; ++i) {
            if (decoder_channels[i] <= 0)
                fail("decoder_channels[" + std::to_string(i) + "] must be positive");
            else if (decoder_channels[i] % 4 != 0)
                fail("decoder_channels[" + std::to_string(i) + "] = " +
                     std::to_string(decoder_channels[i]) + " not divisible by 4");
        }
        if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
        if (bn_eps <= 0.0) fail("bn_eps must be positive");
        if (!errs.empty()) throw ConfigError("invalid network config: " + errs);
    }

    bool cff_at(int stage_1based) const {
        if (!use_cff) return false;
        for (int s : cff_stages)
            if (s == stage_1based) return true;
        return false;
    }
};

// Ablation switch: returns a copy with the module flags applied (all off =
// plain U-shaped baseline).
inline NetworkConfig ablate(NetworkConfig cfg, bool cpa, bool cff, bool mdu) {
    cfg.use_cpa = cpa;
    cfg.use_cff = cff;
    cfg.use_mdu = mdu;
    return cfg;
}

template <class T>
struct ForwardTrace {
    std::vector<AttentionResult<T>> attention;                       // 5 entries when CPA on
    std::vector<std::tuple<int, Tensor<T>, Tensor<T>>> cff_weights;  // (stage, w2, w3)
    Tensor<T> logits; // [N,1,H,W]
    Tensor<T> prob;   // sigmoid(logits)
};

// ---------------------------------------------------------------------------
// Encoder / decoder stages.
// ---------------------------------------------------------------------------
template <class T>
struct EncoderStage2d {
    Conv2d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    ReLU<T> relu1, relu2;
    bool has_cpa = false;
    CpaBlock<T> cpa;

    void build(int in_ch, int out_ch, const NetworkConfig& cfg, Rng& rng) {
        conv1.spec = ConvSpec::square2d(in_ch, out_ch, 3, 1, 1);
        conv2.spec = ConvSpec::square2d(out_ch, out_ch, 3, 1, 1);
        conv1.build(rng);
        conv2.build(rng);
        bn1.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
        bn2.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
        has_cpa = cfg.use_cpa;
        if (has_cpa) cpa.build(cfg.patch_grid, rng);
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv1.visit_params(prefix + ".conv1", fn);
        bn1.visit_params(prefix + ".bn1", fn);
        conv2.visit_params(prefix + ".conv2", fn);
        bn2.visit_params(prefix + ".bn2", fn);
        if (has_cpa) cpa.visit_params(prefix + ".cpa", fn);
    }

    // Returns the stage output; fills *att when CPA is enabled.
    Tensor<T> forward(const Tensor<T>& x, bool training, AttentionResult<T>* att) {
        Tensor<T> f = relu2.forward(bn2.forward(conv2.forward(relu1.forward(bn1.forward(conv1.forward(x), training))), training));
        if (!has_cpa) return f;
        AttentionResult<T> r = cpa.forward(f);
        Tensor<T> out = r.output;
        if (att) *att = std::move(r);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout, const Tensor<T>* grad_grid) {
        Tensor<T> g = has_cpa ? cpa.backward(gout, grad_grid) : gout;
        return conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(relu2.backward(g))))));
    }
};

template <class T>
struct EncoderStage3d {
    Conv3d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    ReLU<T> relu1, relu2;

    void build(int in_ch, int out_ch, const NetworkConfig& cfg, Rng& rng) {
        conv1.spec = ConvSpec::cube3d(in_ch, out_ch, 3, 1, 1);
        conv2.spec = ConvSpec::cube3d(out_ch, out_ch, 3, 1, 1);
        conv1.build(rng);
        conv2.build(rng);
        bn1.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
        bn2.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv1.visit_params(prefix + ".conv1", fn);
        bn1.visit_params(prefix + ".bn1", fn);
        conv2.visit_params(prefix + ".conv2", fn);
        bn2.visit_params(prefix + ".bn2", fn);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return relu2.forward(bn2.forward(conv2.forward(relu1.forward(bn1.forward(conv1.forward(x), training))), training));
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        return conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(relu2.backward(gout))))));
    }
};

template <class T>
struct DecoderStage {
    bool use_mdu = true;
    MduBlock<T> mdu;
    // interpolation fallback when MDU is ablated: nearest 2x then a 3x3 conv
    NearestUpsample2x<T> up;
    Conv2d<T> up_conv;
    Conv2d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    ReLU<T> relu1, relu2;
    int up_channels = 0;

    void build(int in_ch, int skip_ch, int out_ch, const NetworkConfig& cfg, Rng& rng,
               std::uint64_t dropout_seed) {
        use_mdu = cfg.use_mdu;
        up_channels = out_ch;
        if (use_mdu) {
            MduSpec s;
            s.in_channels = in_ch;
            s.out_channels = out_ch;
            s.dropout = cfg.dropout;
            s.bn_eps = cfg.bn_eps;
            s.bn_momentum = cfg.bn_momentum;
            mdu.build(s, rng, dropout_seed);
        } else {
            up_conv.spec = ConvSpec::square2d(in_ch, out_ch, 3, 1, 1);
            up_conv.build(rng);
        }
        conv1.spec = ConvSpec::square2d(out_ch + skip_ch, out_ch, 3, 1, 1);
        conv2.spec = ConvSpec::square2d(out_ch, out_ch, 3, 1, 1);
        conv1.build(rng);
        conv2.build(rng);
        bn1.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
        bn2.build(out_ch, cfg.bn_eps, cfg.bn_momentum);
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        if (use_mdu)
            mdu.visit_params(prefix + ".mdu", fn);
        else
            up_conv.visit_params(prefix + ".up_conv", fn);
        conv1.visit_params(prefix + ".conv1", fn);
        bn1.visit_params(prefix + ".bn1", fn);
        conv2.visit_params(prefix + ".conv2", fn);
        bn2.visit_params(prefix + ".bn2", fn);
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip, bool training) {
        Tensor<T> u = use_mdu ? mdu.forward(x, training) : up_conv.forward(up.forward(x));
        Tensor<T> cat = concat_channels(u, skip);
        return relu2.forward(bn2.forward(conv2.forward(relu1.forward(bn1.forward(conv1.forward(cat), training))), training));
    }

    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& gout) {
        Tensor<T> gcat =
            conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(relu2.backward(gout))))));
        Tensor<T> gu, gskip;
        split_channels(gcat, up_channels, gu, gskip);
        Tensor<T> gx = use_mdu ? mdu.backward(gu) : up.backward(up_conv.backward(gu));
        return {std::move(gx), std::move(gskip)};
    }
};

// ---------------------------------------------------------------------------
// Full network: five-stage 2D encoder with CPA, auxiliary 3D encoder feeding
// CFF at the configured stages, four MDU decoder stages with skip connections
// from the post-attention stage outputs, 1x1 logit head.
// ---------------------------------------------------------------------------
template <class T>
struct TcNet {
    NetworkConfig cfg;
    std::uint64_t seed = 0;

    std::array<EncoderStage2d<T>, 5> enc2d;
    std::array<MaxPool2d<T>, 4> pool2d;
    std::array<EncoderStage3d<T>, 5> enc3d;
    std::array<MaxPool3d<T>, 4> pool3d;
    std::array<CffBlock<T>, 5> cff; // used only at cfg.cff_stages
    std::array<DecoderStage<T>, 4> dec;
    Conv2d<T> head;

    // backward scratch filled by forward
    std::array<Tensor<T>, 5> stage_out_cache;
    bool ran_3d = false;

    static TcNet build(const NetworkConfig& config, std::uint64_t seed) {
        config.validate();
        TcNet net;
        net.cfg = config;
        net.seed = seed;
        Rng rng(seed);
        const auto& ch = config.stage_channels;
        for (int s = 0; s < 5; ++s) {
            const int in_ch = s == 0 ? config.in_slices : ch[s - 1];
            net.enc2d[s].build(in_ch, ch[s], config, rng);
        }
        for (int s = 0; s < 4; ++s) net.pool2d[s] = MaxPool2d<T>(2, 2);
        if (config.use_cff) {
            for (int s = 0; s < 5; ++s) {
                const int in_ch = s == 0 ? 1 : ch[s - 1];
                net.enc3d[s].build(in_ch, ch[s], config, rng);
            }
            for (int s = 0; s < 4; ++s) {
                net.pool3d[s].window_d = 1;
                net.pool3d[s].window_h = 2;
                net.pool3d[s].window_w = 2;
            }
            for (int s = 1; s <= 5; ++s)
                if (config.cff_at(s)) net.cff[s - 1].build(ch[s - 1], ch[s - 1], rng);
        }
        for (int j = 0; j < 4; ++j) {
            const int in_ch = j == 0 ? ch[4] : config.decoder_channels[j - 1];
            const int skip_ch = ch[3 - j];
            net.dec[j].build(in_ch, skip_ch, config.decoder_channels[j], config, rng,
                             seed + 0x5eed0000ull + static_cast<std::uint64_t>(j) * 16);
        }
        net.head.spec = ConvSpec::square2d(config.decoder_channels[3], 1, 1);
        net.head.build(rng);
        return net;
    }

    void visit_params(const ParamVisitor<T>& fn) {
        for (int s = 0; s < 5; ++s) enc2d[s].visit_params("enc2d." + std::to_string(s + 1), fn);
        if (cfg.use_cff) {
            for (int s = 0; s < 5; ++s) enc3d[s].visit_params("enc3d." + std::to_string(s + 1), fn);
            for (int s = 1; s <= 5; ++s)
                if (cfg.cff_at(s)) cff[s - 1].visit_params("cff." + std::to_string(s), fn);
        }
        for (int j = 0; j < 4; ++j) dec[j].visit_params("dec." + std::to_string(j + 1), fn);
        head.visit_params("head", fn);
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit_params([&n](const std::string&, Tensor<T>& t, bool trainable) {
            if (trainable) n += t.numel();
        });
        return n;
    }

    void zero_grad() {
        visit_params([](const std::string&, Tensor<T>& t, bool) { t.zero_grad(); });
    }

    ForwardTrace<T> forward(const Tensor<T>& batch, bool training) {
        if (batch.rank() != 4 || batch.shape[1] != cfg.in_slices || batch.shape[2] != cfg.input_side ||
            batch.shape[3] != cfg.input_side)
            throw DimensionError("network: expected input [N," + std::to_string(cfg.in_slices) + "," +
                                 std::to_string(cfg.input_side) + "," + std::to_string(cfg.input_side) +
                                 "], got " + shape_string(batch.shape));
        const int n = batch.shape[0];
        ForwardTrace<T> trace;

        // auxiliary 3D path: slices become the depth axis
        std::array<Tensor<T>, 5> t3d;
        ran_3d = cfg.use_cff;
        if (ran_3d) {
            Tensor<T> x3 = batch;
            x3.reshape({n, 1, cfg.in_slices, cfg.input_side, cfg.input_side});
            for (int s = 0; s < 5; ++s) {
                t3d[s] = enc3d[s].forward(x3, training);
                require_finite(t3d[s], ("encoder3d stage " + std::to_string(s + 1)).c_str());
                if (s < 4) x3 = pool3d[s].forward(t3d[s]);
            }
        }

        // 2D encoder with CPA and fusion
        Tensor<T> x = batch;
        for (int s = 0; s < 5; ++s) {
            AttentionResult<T> att;
            Tensor<T> f = enc2d[s].forward(x, training, cfg.use_cpa ? &att : nullptr);
            if (cfg.use_cpa) trace.attention.push_back(std::move(att));
            if (cfg.cff_at(s + 1)) {
                FusionResult<T> fr = cff[s].forward(f, t3d[s]);
                trace.cff_weights.emplace_back(s + 1, fr.w2, fr.w3);
                f = std::move(fr.fused);
            }
            require_finite(f, ("encoder stage " + std::to_string(s + 1)).c_str());
            stage_out_cache[s] = f;
            if (s < 4) x = pool2d[s].forward(f);
        }

        // decoder with skips from the post-attention stage outputs
        Tensor<T> d = stage_out_cache[4];
        for (int j = 0; j < 4; ++j) {
            d = dec[j].forward(d, stage_out_cache[3 - j], training);
            require_finite(d, ("decoder stage " + std::to_string(j + 1)).c_str());
        }
        trace.logits = head.forward(d);
        require_finite(trace.logits, "logit head");
        trace.prob = Tensor<T>(trace.logits.shape);
        for (std::size_t i = 0; i < trace.prob.numel(); ++i)
            trace.prob.data[i] = T(1) / (T(1) + std::exp(-trace.logits.data[i]));
        return trace;
    }

    // grad_grids: one per stage ([N,1,G,G]) when CPA supervision is active; may
    // be empty. Returns the gradient with respect to the input batch.
    Tensor<T> backward(const Tensor<T>& grad_logits, const std::vector<Tensor<T>>& grad_grids) {
        Tensor<T> gd = head.backward(grad_logits);
        std::array<Tensor<T>, 4> gskip;
        for (int j = 3; j >= 0; --j) {
            auto [gx, gs] = dec[j].backward(gd);
            gskip[3 - j] = std::move(gs);
            gd = std::move(gx);
        }

        std::array<Tensor<T>, 5> g3d; // grads on 3D encoder stage outputs
        Tensor<T> gin2d;
        Tensor<T> g = std::move(gd); // grad wrt stage-5 output
        for (int s = 4; s >= 0; --s) {
            if (s < 4)
                for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += gskip[s].data[i];
            if (cfg.cff_at(s + 1)) {
                auto [g2, g3] = cff[s].backward(g);
                g = std::move(g2);
                g3d[s] = std::move(g3);
            }
            const Tensor<T>* ggrid =
                (cfg.use_cpa && s < static_cast<int>(grad_grids.size())) ? &grad_grids[s] : nullptr;
            Tensor<T> gx = enc2d[s].backward(g, ggrid);
            if (s > 0)
                g = pool2d[s - 1].backward(gx);
            else
                gin2d = std::move(gx);
        }

        if (!ran_3d) return gin2d;

        Tensor<T> g3;
        bool have = false;
        for (int s = 4; s >= 0; --s) {
            if (g3d[s].numel() > 0) {
                if (!have) {
                    g3 = std::move(g3d[s]);
                    have = true;
                } else {
                    for (std::size_t i = 0; i < g3.numel(); ++i) g3.data[i] += g3d[s].data[i];
                }
            }
            if (!have) continue;
            Tensor<T> gx3 = enc3d[s].backward(g3);
            if (s > 0)
                g3 = pool3d[s - 1].backward(gx3);
            else {
                gx3.reshape(gin2d.shape);
                for (std::size_t i = 0; i < gin2d.numel(); ++i) gin2d.data[i] += gx3.data[i];
            }
        }
        return gin2d;
    }
};

// ---------------------------------------------------------------------------
// Total training loss: soft-Dice + pixel BCE (equal weights) plus
// lambda_cpa * mean over stages of the coarse BCE supervision.
// ---------------------------------------------------------------------------
struct LossBreakdown {
    double total = 0.0;
    double dice = 0.0;
    double bce = 0.0;
    double coarse = 0.0;
};

// coarse_target: [N,1,G,G] (same target for every stage). Fills grad_logits and
// one grid gradient per stage (empty vector when CPA off or lambda == 0).
template <class T>
LossBreakdown total_loss(const ForwardTrace<T>& trace, const Tensor<T>& gt_mask,
                         const Tensor<T>& coarse_target, double lambda_cpa,
                         Tensor<T>* grad_logits_out, std::vector<Tensor<T>>* grad_grids_out) {
    LossBreakdown out;
    SegLossResult<T> seg = dice_bce_with_logits(trace.logits, gt_mask);
    out.dice = seg.dice;
    out.bce = seg.bce;
    if (grad_logits_out) *grad_logits_out = std::move(seg.grad_logits);

    if (grad_grids_out) grad_grids_out->clear();
    if (!trace.attention.empty()) {
        const double stage_scale = 1.0 / static_cast<double>(trace.attention.size());
        for (const auto& att : trace.attention) {
            if (att.grid.shape != coarse_target.shape)
                throw DimensionError("coarse target " + shape_string(coarse_target.shape) +
                                     " does not match grid " + shape_string(att.grid.shape));
            // mean over cells and batch
            out.coarse += stage_scale * coarse_bce_loss(att.grid, coarse_target);
            if (grad_grids_out) {
                if (lambda_cpa > 0.0)
                    grad_grids_out->push_back(
                        coarse_bce_grad(att.grid, coarse_target, lambda_cpa * stage_scale));
                else
                    grad_grids_out->push_back(Tensor<T>(att.grid.shape));
            }
        }
    }
    out.total = out.dice + out.bce + lambda_cpa * out.coarse;
    return out;
}

} // namespace tcnet
