#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "tcnet/layers.hpp"
#include "tcnet/rng.hpp"
#include "tcnet/tensor_io.hpp"

using namespace tcnet;

namespace {

Tensor<float> iota(std::vector<int> shape) {
    Tensor<float> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<float>(i + 1);
    return t;
}

template <class T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// independent sliding-window correlation oracle (stride 1 only)
Tensor<float> conv2d_oracle(const Tensor<float>& x, const Tensor<float>& w, const Tensor<float>& b,
                            int pad) {
    const int ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
    Tensor<float> out({co, oh, ow});
    for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b.data[oc];
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy + ky - pad, ix = ox + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += w.at({oc, ic, ky, kx}) * x.at({ic, iy, ix});
                        }
                out.at({oc, oy, ox}) = static_cast<float>(acc);
            }
    return out;
}

// zero-insertion-then-convolve oracle for transposed convolution
Tensor<float> tconv2d_oracle(const Tensor<float>& x, const Tensor<float>& w, const Tensor<float>& b,
                             int stride, int pad, int out_pad) {
    const int ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int co = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    const int oh = (h - 1) * stride - 2 * pad + kh + out_pad;
    const int ow = (wd - 1) * stride - 2 * pad + kw + out_pad;
    Tensor<float> out({co, oh, ow});
    for (int oc = 0; oc < co; ++oc)
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
            out.data[oc * oh * ow + i] = b.data[oc];
    for (int ic = 0; ic < ci; ++ic)
        for (int oc = 0; oc < co; ++oc)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < wd; ++ix)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int oy = iy * stride + ky - pad, ox = ix * stride + kx - pad;
                            if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                            out.at({oc, oy, ox}) += w.at({ic, oc, ky, kx}) * x.at({ic, iy, ix});
                        }
    return out;
}

} // namespace

TEST_CASE("conv2d spec examples") {
    Rng rng(1);

    SUBCASE("all-zero input gives all-zero output") {
        Conv2d<float> conv;
        conv.spec = ConvSpec::square2d(1, 2, 3, 1, 1);
        conv.build(rng);
        for (auto& v : conv.bias.data) v = 0.0f;
        Tensor<float> x({1, 3, 3});
        Tensor<float> y = conv.forward(x);
        for (float v : y.data) CHECK(v == 0.0f);
    }

    SUBCASE("1x1 kernel with weight 1 and bias 0 is the identity") {
        Conv2d<float> conv;
        conv.spec = ConvSpec::square2d(1, 1, 1);
        conv.build(rng);
        conv.weight.data[0] = 1.0f;
        conv.bias.data[0] = 0.0f;
        Tensor<float> x = iota({1, 4, 4});
        Tensor<float> y = conv.forward(x);
        CHECK(y.shape == x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
    }

    SUBCASE("4x4 iota with 3x3 ones kernel") {
        Conv2d<float> conv;
        conv.spec = ConvSpec::square2d(1, 1, 3);
        conv.build(rng);
        for (auto& v : conv.weight.data) v = 1.0f;
        conv.bias.data[0] = 0.0f;
        Tensor<float> y = conv.forward(iota({1, 4, 4}));
        REQUIRE(y.shape == std::vector<int>{1, 2, 2});
        CHECK(y.data[0] == doctest::Approx(54.0f));
        CHECK(y.data[1] == doctest::Approx(63.0f));
        CHECK(y.data[2] == doctest::Approx(90.0f));
        CHECK(y.data[3] == doctest::Approx(99.0f));
    }

    SUBCASE("matches the sliding-window oracle on random input") {
        Conv2d<float> conv;
        conv.spec = ConvSpec::square2d(3, 4, 3, 1, 1);
        conv.build(rng);
        Tensor<float> x = random_tensor<float>({3, 7, 9}, rng);
        Tensor<float> y = conv.forward(x);
        Tensor<float> o = conv2d_oracle(x, conv.weight, conv.bias, 1);
        REQUIRE(y.shape == o.shape);
        for (std::size_t i = 0; i < y.numel(); ++i)
            CHECK(y.data[i] == doctest::Approx(o.data[i]).epsilon(1e-5));
    }

    SUBCASE("channel mismatch names the axis") {
        Conv2d<float> conv;
        conv.spec = ConvSpec::square2d(2, 1, 3);
        conv.build(rng);
        CHECK_THROWS_WITH_AS(conv.forward(Tensor<float>({3, 5, 5})),
                             doctest::Contains("channel axis"), DimensionError);
    }
}

TEST_CASE("conv3d spec examples") {
    Rng rng(2);

    SUBCASE("zero input, zero bias -> zero output") {
        Conv3d<float> conv;
        conv.spec = ConvSpec::cube3d(1, 2, 3, 1, 1);
        conv.build(rng);
        for (auto& v : conv.bias.data) v = 0.0f;
        Tensor<float> y = conv.forward(Tensor<float>({1, 3, 3, 3}));
        for (float v : y.data) CHECK(v == 0.0f);
    }

    SUBCASE("1x1x1 kernel weight 2 bias 1 is elementwise 2x+1") {
        Conv3d<float> conv;
        conv.spec = ConvSpec::cube3d(1, 1, 1);
        conv.build(rng);
        conv.weight.data[0] = 2.0f;
        conv.bias.data[0] = 1.0f;
        Tensor<float> x = iota({1, 2, 2, 2});
        Tensor<float> y = conv.forward(x);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(y.data[i] == doctest::Approx(2.0f * x.data[i] + 1.0f));
    }
}

TEST_CASE("transposed conv2d spec examples") {
    Rng rng(3);

    SUBCASE("single input pixel scatters the kernel taps that overlap") {
        TransposedConv2d<float> tconv;
        tconv.spec = ConvSpec::square2d(1, 1, 3, 2, 1, 1);
        tconv.build(rng);
        for (auto& v : tconv.weight.data) v = 1.0f;
        tconv.bias.data[0] = 0.0f;
        Tensor<float> x({1, 1, 1});
        x.data[0] = 3.5f;
        Tensor<float> y = tconv.forward(x);
        REQUIRE(y.shape == std::vector<int>{1, 2, 2});
        // with a ones kernel every surviving tap carries v; center tap lands at (0,0)
        for (float v : y.data) CHECK(v == doctest::Approx(3.5f));

        // distinct taps: center (1,1) -> (0,0); (1,2) -> (0,1); (2,1) -> (1,0); (2,2) -> (1,1)
        for (auto& v : tconv.weight.data) v = 0.0f;
        tconv.weight.at({0, 0, 1, 1}) = 1.0f;
        tconv.weight.at({0, 0, 2, 2}) = 10.0f;
        y = tconv.forward(x);
        CHECK(y.data[0] == doctest::Approx(3.5f));
        CHECK(y.data[1] == doctest::Approx(0.0f));
        CHECK(y.data[2] == doctest::Approx(0.0f));
        CHECK(y.data[3] == doctest::Approx(35.0f));
    }

    SUBCASE("zero input -> zero output") {
        TransposedConv2d<float> tconv;
        tconv.spec = ConvSpec::square2d(2, 3, 5, 2, 2, 1);
        tconv.build(rng);
        for (auto& v : tconv.bias.data) v = 0.0f;
        Tensor<float> y = tconv.forward(Tensor<float>({2, 4, 4}));
        for (float v : y.data) CHECK(v == 0.0f);
    }

    SUBCASE("extent algebra: H=12, k=5, s=2, p=2, op=1 gives 24") {
        TransposedConv2d<float> tconv;
        tconv.spec = ConvSpec::square2d(1, 1, 5, 2, 2, 1);
        tconv.build(rng);
        Tensor<float> y = tconv.forward(Tensor<float>({1, 12, 12}));
        CHECK(y.shape == std::vector<int>{1, 24, 24});
    }

    SUBCASE("matches the zero-insertion oracle on random input") {
        TransposedConv2d<float> tconv;
        tconv.spec = ConvSpec::square2d(3, 2, 5, 2, 2, 1);
        tconv.build(rng);
        Tensor<float> x = random_tensor<float>({3, 6, 5}, rng);
        Tensor<float> y = tconv.forward(x);
        Tensor<float> o = tconv2d_oracle(x, tconv.weight, tconv.bias, 2, 2, 1);
        REQUIRE(y.shape == o.shape);
        for (std::size_t i = 0; i < y.numel(); ++i)
            CHECK(y.data[i] == doctest::Approx(o.data[i]).epsilon(1e-5));
    }

    SUBCASE("nonpositive computed extent is a dimension error") {
        TransposedConv2d<float> tconv;
        tconv.spec = ConvSpec::square2d(1, 1, 3, 1, 4, 0);
        tconv.build(rng);
        CHECK_THROWS_AS(tconv.forward(Tensor<float>({1, 2, 2})), DimensionError);
    }
}

TEST_CASE("pooling spec examples") {
    SUBCASE("constant input stays constant under both pools") {
        Tensor<float> x = Tensor<float>::full({1, 4, 4}, 2.5f);
        MaxPool2d<float> mp(2, 2);
        AvgPool2d<float> ap(2, 2);
        for (float v : mp.forward(x).data) CHECK(v == 2.5f);
        for (float v : ap.forward(x).data) CHECK(v == 2.5f);
    }

    SUBCASE("2x2 window over [[1,2],[3,4]]") {
        Tensor<float> x({1, 2, 2}, {1, 2, 3, 4});
        MaxPool2d<float> mp(2, 2);
        AvgPool2d<float> ap(2, 2);
        CHECK(mp.forward(x).data[0] == 4.0f);
        CHECK(ap.forward(x).data[0] == doctest::Approx(2.5f));
    }

    SUBCASE("avg pool of 4x4 iota") {
        AvgPool2d<float> ap(2, 2);
        Tensor<float> y = ap.forward(iota({1, 4, 4}));
        REQUIRE(y.shape == std::vector<int>{1, 2, 2});
        CHECK(y.data[0] == doctest::Approx(3.5f));
        CHECK(y.data[1] == doctest::Approx(5.5f));
        CHECK(y.data[2] == doctest::Approx(11.5f));
        CHECK(y.data[3] == doctest::Approx(13.5f));
    }

    SUBCASE("non-divisible extents raise a dimension error") {
        MaxPool2d<float> mp(2, 2);
        CHECK_THROWS_AS(mp.forward(Tensor<float>({1, 5, 4})), DimensionError);
    }

    SUBCASE("max backward routes to the first row-major maximum on ties") {
        MaxPool2d<float> mp(2, 2);
        Tensor<float> x({1, 2, 2}, {7, 7, 7, 7});
        Tensor<float> y = mp.forward(x);
        Tensor<float> g({1, 1, 1}, {1});
        Tensor<float> gx = mp.backward(g);
        CHECK(gx.data[0] == 1.0f);
        CHECK(gx.data[1] == 0.0f);
        CHECK(gx.data[2] == 0.0f);
        CHECK(gx.data[3] == 0.0f);
        CHECK(y.data[0] == 7.0f);
    }
}

TEST_CASE("global_avg_pool and channel_mean spec examples") {
    SUBCASE("constant channel maps to its value") {
        GlobalAvgPool<float> gap;
        Tensor<float> x = Tensor<float>::full({3, 4, 4}, 1.25f);
        Tensor<float> y = gap.forward(x);
        REQUIRE(y.shape == std::vector<int>{3});
        for (float v : y.data) CHECK(v == doctest::Approx(1.25f));
    }

    SUBCASE("two channels [1..4] and [0,0,0,8]") {
        GlobalAvgPool<float> gap;
        Tensor<float> x({2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 8});
        Tensor<float> y = gap.forward(x);
        CHECK(y.data[0] == doctest::Approx(2.5f));
        CHECK(y.data[1] == doctest::Approx(2.0f));
    }

    SUBCASE("zero tensor maps to the zero vector") {
        GlobalAvgPool<float> gap;
        Tensor<float> y = gap.forward(Tensor<float>({2, 3, 3}));
        for (float v : y.data) CHECK(v == 0.0f);
    }

    SUBCASE("channel_mean: single channel unchanged, [1] and [3] average to 2") {
        ChannelMean<float> cm;
        Tensor<float> x1 = iota({1, 2, 2});
        Tensor<float> y1 = cm.forward(x1);
        for (std::size_t i = 0; i < x1.numel(); ++i) CHECK(y1.data[i] == x1.data[i]);

        Tensor<float> x2({2, 1, 1}, {1, 3});
        CHECK(cm.forward(x2).data[0] == doctest::Approx(2.0f));
    }

    SUBCASE("channel_mean matches the per-pixel oracle on random input") {
        Rng rng(0);
        ChannelMean<float> cm;
        Tensor<float> x = random_tensor<float>({3, 5, 7}, rng);
        Tensor<float> y = cm.forward(x);
        for (int p = 0; p < 35; ++p) {
            double acc = 0;
            for (int c = 0; c < 3; ++c) acc += x.data[c * 35 + p];
            CHECK(y.data[p] == doctest::Approx(acc / 3.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("dense, activations, dropout, batch norm") {
    Rng rng(5);

    SUBCASE("sigmoid(0) is 0.5") {
        Sigmoid<float> sig;
        Tensor<float> y = sig.forward(Tensor<float>({3}));
        for (float v : y.data) CHECK(v == doctest::Approx(0.5f));
    }

    SUBCASE("dropout in eval mode is the identity; p >= 1 rejected") {
        Dropout<float> drop(0.5, 7);
        Tensor<float> x = iota({2, 3});
        Tensor<float> y = drop.forward(x, false);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == x.data[i]);
        CHECK_THROWS_AS(Dropout<float>(1.0, 7), ConfigError);
    }

    SUBCASE("training dropout scales survivors by 1/(1-p)") {
        Dropout<float> drop(0.25, 11);
        Tensor<float> x = Tensor<float>::full({1, 4000}, 1.0f);
        Tensor<float> y = drop.forward(x, true);
        std::size_t kept = 0;
        for (float v : y.data) {
            CHECK((v == 0.0f || v == doctest::Approx(1.0f / 0.75f)));
            if (v != 0.0f) ++kept;
        }
        CHECK(kept > 2700);
        CHECK(kept < 3300);
    }

    SUBCASE("batch norm normalizes a batch with mean 3 and variance 4 to (x-3)/2") {
        BatchNorm<float> bn;
        bn.build(1, 1e-12, 0.1);
        // batch values 1 and 5: mean 3, population variance 4
        Tensor<float> x({2, 1}, {1, 5});
        Tensor<float> y = bn.forward(x, true);
        CHECK(y.data[0] == doctest::Approx((1.0f - 3.0f) / 2.0f));
        CHECK(y.data[1] == doctest::Approx((5.0f - 3.0f) / 2.0f));
    }

    SUBCASE("dense is affine") {
        Dense<float> fc;
        fc.build(3, 2, rng);
        Tensor<float> x({2, 3}, {1, 0, 0, 0, 1, 0});
        Tensor<float> y = fc.forward(x);
        CHECK(y.at({0, 0}) == doctest::Approx(fc.weight.at({0, 0}) + fc.bias.data[0]));
        CHECK(y.at({1, 1}) == doctest::Approx(fc.weight.at({1, 1}) + fc.bias.data[1]));
    }
}

TEST_CASE("linearity of conv for zero-bias kernels") {
    Rng rng(6);
    Conv2d<float> conv;
    conv.spec = ConvSpec::square2d(2, 3, 3, 1, 1);
    conv.build(rng);
    for (auto& v : conv.bias.data) v = 0.0f;
    Tensor<float> x = random_tensor<float>({2, 6, 6}, rng);
    Tensor<float> y = random_tensor<float>({2, 6, 6}, rng);
    const float a = 1.7f, b = -0.4f;
    Tensor<float> mix({2, 6, 6});
    for (std::size_t i = 0; i < mix.numel(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    Tensor<float> lhs = conv.forward(mix);
    Tensor<float> fx = conv.forward(x);
    Tensor<float> fy = conv.forward(y);
    for (std::size_t i = 0; i < lhs.numel(); ++i) {
        const float rhs = a * fx.data[i] + b * fy.data[i];
        CHECK(lhs.data[i] == doctest::Approx(rhs).epsilon(1e-5));
    }
}

TEST_CASE("transposed-conv adjointness: <conv(x;W), y> == <x, tconv(y;W)>") {
    Rng rng(7);
    const int ci = 3, co = 2, k = 3, stride = 2;
    Conv2d<float> conv;
    conv.spec = ConvSpec::square2d(ci, co, k, stride, 0);
    conv.build(rng);
    for (auto& v : conv.bias.data) v = 0.0f;

    TransposedConv2d<float> tconv;
    tconv.spec = ConvSpec::square2d(co, ci, k, stride, 0, 0);
    tconv.build(rng);
    for (auto& v : tconv.bias.data) v = 0.0f;
    // same weight buffer: conv [co,ci,k,k] viewed as tconv [co(in),ci(out),k,k]
    tconv.weight.data = conv.weight.data;

    Tensor<float> x = random_tensor<float>({ci, 7, 7}, rng);
    Tensor<float> cx = conv.forward(x);
    Tensor<float> y = random_tensor<float>(cx.shape, rng);
    Tensor<float> ty = tconv.forward(y);
    REQUIRE(ty.shape == x.shape);

    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += static_cast<double>(cx.data[i]) * y.data[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x.data[i]) * ty.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("eval-mode forward is bit-pure") {
    Rng rng(8);
    Conv2d<float> conv;
    conv.spec = ConvSpec::square2d(2, 2, 3, 1, 1);
    conv.build(rng);
    BatchNorm<float> bn;
    bn.build(2);
    Dropout<float> drop(0.3, 1);
    Tensor<float> x = random_tensor<float>({1, 2, 8, 8}, rng);
    bn.forward(conv.forward(x), true); // populate running stats

    Tensor<float> a = drop.forward(bn.forward(conv.forward(x), false), false);
    Tensor<float> b = drop.forward(bn.forward(conv.forward(x), false), false);
    CHECK(a.data == b.data);
}

TEST_CASE("tensor container file round trip") {
    Rng rng(9);
    const std::string path = (std::filesystem::temp_directory_path() / "tcnet_io_test.tcnt").string();

    SUBCASE("round trip is bit-exact") {
        Tensor<float> t = random_tensor<float>({4, 192, 3}, rng);
        write_tensor(path, t);
        Tensor<float> r = read_tensor(path);
        CHECK(r.shape == t.shape);
        CHECK(r.data == t.data);

        // header extents match what was written
        Tensor<float> u = read_tensor(path);
        CHECK(u.shape == std::vector<int>{4, 192, 3});
    }

    SUBCASE("truncated payload is a format error") {
        Tensor<float> t = random_tensor<float>({8, 8}, rng);
        write_tensor(path, t);
        std::filesystem::resize_file(path, 40);
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }

    SUBCASE("bad magic is a format error") {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << "NOPE1234567890";
        f.close();
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }

    std::filesystem::remove(path);
}

TEST_CASE("pgm mask round trip stays binary") {
    const std::string path = (std::filesystem::temp_directory_path() / "tcnet_mask_test.pgm").string();
    Tensor<float> mask({1, 5, 4});
    mask.data[3] = 1.0f;
    mask.data[17] = 1.0f;
    write_mask_pgm(path, mask);
    Tensor<float> r = read_mask_pgm(path);
    CHECK(r.shape == mask.shape);
    CHECK(r.data == mask.data);

    mask.data[0] = 0.5f;
    CHECK_THROWS_AS(write_mask_pgm(path, mask), ConfigError);
    std::filesystem::remove(path);
}
