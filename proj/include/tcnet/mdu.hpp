#pragma once

#include <array>
#include <string>

#include "tcnet/layers.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// ---------------------------------------------------------------------------
// Multi-scale deconvolution upsampling: four parallel transposed convolutions
// (kernels 3/5/7/9, paddings 1/2/3/4, stride 2, output_padding 1), each
// followed by BN, ReLU and Dropout, concatenated in kernel order to double the
// spatial resolution.
// ---------------------------------------------------------------------------

inline constexpr std::array<int, 4> kMduKernels{3, 5, 7, 9};
inline constexpr std::array<int, 4> kMduPaddings{1, 2, 3, 4};

struct MduSpec {
    int in_channels = 0;
    int out_channels = 0; // divisible by 4; each branch contributes out_channels/4
    double dropout = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0)
            throw ConfigError("mdu: channel counts must be positive");
        if (out_channels % 4 != 0)
            throw ConfigError("mdu: out_channels " + std::to_string(out_channels) + " not divisible by 4");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("mdu: dropout must lie in [0, 1)");
    }
};

template <class T>
struct MduBlock {
    MduSpec spec;
    std::string name = "mdu";
    std::array<TransposedConv2d<T>, 4> deconv;
    std::array<BatchNorm<T>, 4> bn;
    std::array<ReLU<T>, 4> relu;
    std::array<Dropout<T>, 4> drop;

    void build(const MduSpec& s, Rng& rng, std::uint64_t dropout_seed) {
        s.validate();
        spec = s;
        const int branch_out = s.out_channels / 4;
        for (int b = 0; b < 4; ++b) {
            deconv[b].spec = ConvSpec::square2d(s.in_channels, branch_out, kMduKernels[b], 2,
                                                kMduPaddings[b], 1);
            deconv[b].name = "mdu.deconv" + std::to_string(kMduKernels[b]);
            deconv[b].build(rng);
            bn[b].build(branch_out, s.bn_eps, s.bn_momentum);
            drop[b] = Dropout<T>(s.dropout, dropout_seed + static_cast<std::uint64_t>(b));
        }
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        for (int b = 0; b < 4; ++b) {
            const std::string base = prefix + ".k" + std::to_string(kMduKernels[b]);
            deconv[b].visit_params(base + ".deconv", fn);
            bn[b].visit_params(base + ".bn", fn);
        }
    }

    // [N,C,h,w] -> [N,C',2h,2w]; channels [0, C'/4) come from the k=3 branch,
    // then k=5, k=7, k=9.
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        std::array<Tensor<T>, 4> branch;
        for (int b = 0; b < 4; ++b)
            branch[b] = drop[b].forward(relu[b].forward(bn[b].forward(deconv[b].forward(x), training)),
                                        training);
        return concat_channels(concat_channels(branch[0], branch[1]),
                               concat_channels(branch[2], branch[3]));
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const int branch_out = spec.out_channels / 4;
        Tensor<T> g01, g23, g0, g1, g2, g3;
        split_channels(gout, 2 * branch_out, g01, g23);
        split_channels(g01, branch_out, g0, g1);
        split_channels(g23, branch_out, g2, g3);
        const std::array<Tensor<T>*, 4> parts{&g0, &g1, &g2, &g3};
        Tensor<T> gin;
        for (int b = 0; b < 4; ++b) {
            Tensor<T> g = deconv[b].backward(bn[b].backward(relu[b].backward(drop[b].backward(*parts[b]))));
            if (b == 0)
                gin = std::move(g);
            else
                for (std::size_t i = 0; i < gin.numel(); ++i) gin.data[i] += g.data[i];
        }
        return gin;
    }
};

} // namespace tcnet
