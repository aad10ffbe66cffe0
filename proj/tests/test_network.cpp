#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tcnet/adam.hpp"
#include "tcnet/network.hpp"
#include "tcnet/rng.hpp"
#include "tcnet/trainer.hpp"

using namespace tcnet;

namespace {

template <class T>
std::uint64_t param_checksum(TcNet<T>& net) {
    std::uint64_t h = 1469598103934665603ull;
    net.visit_params([&h](const std::string&, Tensor<T>& t, bool) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
        for (std::size_t i = 0; i < t.data.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

template <class T>
std::uint64_t grad_checksum(TcNet<T>& net) {
    std::uint64_t h = 1469598103934665603ull;
    net.visit_params([&h](const std::string&, Tensor<T>& t, bool trainable) {
        if (!trainable) return;
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.grad.data());
        for (std::size_t i = 0; i < t.grad.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.stage_channels = {8, 8, 8, 8, 8};
    cfg.decoder_channels = {8, 8, 8, 8};
    cfg.dropout = 0.0;
    return cfg;
}

// closed-form trainable parameter count for a config with all modules on
std::size_t analytic_parameter_count(const NetworkConfig& c) {
    std::size_t n = 0;
    auto conv2d_params = [](int ci, int co, int k) { return static_cast<std::size_t>(co) * ci * k * k + co; };
    auto conv3d_params = [](int ci, int co, int k) {
        return static_cast<std::size_t>(co) * ci * k * k * k + co;
    };
    auto bn_params = [](int ch) { return static_cast<std::size_t>(2) * ch; };
    const auto& sc = c.stage_channels;
    for (int s = 0; s < 5; ++s) {
        const int ci = s == 0 ? c.in_slices : sc[s - 1];
        n += conv2d_params(ci, sc[s], 3) + conv2d_params(sc[s], sc[s], 3) + 2 * bn_params(sc[s]);
        if (c.use_cpa) {
            const int cells = c.patch_grid * c.patch_grid;
            n += static_cast<std::size_t>(cells / 2) * cells + cells / 2; // hidden dense
            n += static_cast<std::size_t>(cells) * (cells / 2) + cells;   // output dense
        }
    }
    if (c.use_cff) {
        for (int s = 0; s < 5; ++s) {
            const int ci = s == 0 ? 1 : sc[s - 1];
            n += conv3d_params(ci, sc[s], 3) + conv3d_params(sc[s], sc[s], 3) + 2 * bn_params(sc[s]);
        }
        for (int s : c.cff_stages) {
            const int ch = sc[s - 1];
            n += static_cast<std::size_t>(ch) + 1;     // 1x1x1 squeeze
            n += conv2d_params(1, ch, 3);              // transform
            const std::size_t mlp = static_cast<std::size_t>(ch / 8) * 2 * ch + ch / 8 +
                                    static_cast<std::size_t>(ch) * (ch / 8) + ch;
            n += 2 * mlp;
        }
    }
    for (int j = 0; j < 4; ++j) {
        const int ci = j == 0 ? sc[4] : c.decoder_channels[j - 1];
        const int co = c.decoder_channels[j];
        const int skip = sc[3 - j];
        if (c.use_mdu) {
            for (int k : {3, 5, 7, 9})
                n += static_cast<std::size_t>(ci) * (co / 4) * k * k + co / 4 + bn_params(co / 4);
        } else {
            n += conv2d_params(ci, co, 3);
        }
        n += conv2d_params(co + skip, co, 3) + conv2d_params(co, co, 3) + 2 * bn_params(co);
    }
    n += conv2d_params(c.decoder_channels[3], 1, 1); // logit head
    return n;
}

} // namespace

TEST_CASE("network config validation") {
    SUBCASE("the desk default validates") {
        NetworkConfig cfg;
        CHECK_NOTHROW(cfg.validate());
    }
    SUBCASE("input side 100 is rejected for the 6x6 grid") {
        NetworkConfig cfg;
        cfg.input_side = 100;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("all violations are listed together") {
        NetworkConfig cfg;
        cfg.input_side = 100;
        cfg.decoder_channels = {63, 32, 16, 8};
        try {
            cfg.validate();
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("input_side") != std::string::npos);
            CHECK(msg.find("decoder_channels[0]") != std::string::npos);
        }
    }
    SUBCASE("CFF stage width must divide by 8") {
        NetworkConfig cfg;
        cfg.stage_channels = {8, 16, 32, 60, 128};
        cfg.cff_stages = {4};
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("build determinism and parameter count") {
    SUBCASE("parameter count equals the closed-form sum (default desk config)") {
        NetworkConfig cfg;
        TcNet<float> net = TcNet<float>::build(cfg, 0);
        CHECK(net.parameter_count() == analytic_parameter_count(cfg));
    }
    SUBCASE("the count shrinks as modules are ablated") {
        NetworkConfig cfg = tiny_config();
        TcNet<float> full = TcNet<float>::build(cfg, 0);
        TcNet<float> base = TcNet<float>::build(ablate(cfg, false, false, false), 0);
        CHECK(base.parameter_count() < full.parameter_count());
        CHECK(base.parameter_count() == analytic_parameter_count(ablate(cfg, false, false, false)));
    }
    SUBCASE("same seed gives identical parameters, different seed differs") {
        NetworkConfig cfg = tiny_config();
        TcNet<float> a = TcNet<float>::build(cfg, 7);
        TcNet<float> b = TcNet<float>::build(cfg, 7);
        TcNet<float> c = TcNet<float>::build(cfg, 8);
        CHECK(param_checksum(a) == param_checksum(b));
        CHECK(param_checksum(a) != param_checksum(c));
    }
}

TEST_CASE("forward shape, finiteness and purity") {
    NetworkConfig cfg = tiny_config();
    TcNet<float> net = TcNet<float>::build(cfg, 1);

    SUBCASE("zero input in eval mode gives finite logits and probabilities in (0,1)") {
        Tensor<float> batch({2, 4, 96, 96});
        ForwardTrace<float> trace = net.forward(batch, false);
        CHECK(trace.logits.shape == std::vector<int>{2, 1, 96, 96});
        CHECK(all_finite(trace.logits));
        for (float p : trace.prob.data) {
            CHECK(p > 0.0f);
            CHECK(p < 1.0f);
        }
    }

    SUBCASE("eval-mode forward twice is bit-identical") {
        Rng rng(2);
        Tensor<float> batch({1, 4, 96, 96});
        for (auto& v : batch.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
        ForwardTrace<float> t1 = net.forward(batch, false);
        ForwardTrace<float> t2 = net.forward(batch, false);
        CHECK(t1.logits.data == t2.logits.data);
        REQUIRE(t1.attention.size() == 5);
        for (std::size_t s = 0; s < 5; ++s)
            CHECK(t1.attention[s].grid.data == t2.attention[s].grid.data);
    }

    SUBCASE("wrong input extent is a dimension error") {
        CHECK_THROWS_AS(net.forward(Tensor<float>({1, 4, 48, 48}), false), DimensionError);
    }
}

TEST_CASE("total loss components") {
    NetworkConfig cfg = tiny_config();

    SUBCASE("probability 0.5 everywhere and grids 0.5 give BCE = ln 2 and coarse = ln 2") {
        TcNet<float> net = TcNet<float>::build(cfg, 3);
        for (auto& v : net.head.weight.data) v = 0.0f;
        for (auto& v : net.head.bias.data) v = 0.0f;
        for (auto& stage : net.enc2d) {
            for (auto& v : stage.cpa.fc1.weight.data) v = 0.0f;
            for (auto& v : stage.cpa.fc1.bias.data) v = 0.0f;
            for (auto& v : stage.cpa.fc2.weight.data) v = 0.0f;
            for (auto& v : stage.cpa.fc2.bias.data) v = 0.0f;
        }
        Rng rng(4);
        Tensor<float> batch({1, 4, 96, 96});
        for (auto& v : batch.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
        Tensor<float> mask({1, 1, 96, 96});
        for (auto& v : mask.data) v = rng.bernoulli(0.1) ? 1.0f : 0.0f;
        Tensor<float> coarse({1, 1, 6, 6});
        for (auto& v : coarse.data) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;

        ForwardTrace<float> trace = net.forward(batch, false);
        for (float p : trace.prob.data) CHECK(p == doctest::Approx(0.5f));
        LossBreakdown loss = total_loss<float>(trace, mask, coarse, 0.25, nullptr, nullptr);
        CHECK(loss.bce == doctest::Approx(std::log(2.0)).epsilon(1e-5));
        CHECK(loss.coarse == doctest::Approx(std::log(2.0)).epsilon(1e-5));
        CHECK(loss.total == doctest::Approx(loss.dice + loss.bce + 0.25 * loss.coarse));
    }

    SUBCASE("perfect saturated prediction scores below 1e-3") {
        // drive the logits through the bias of the head
        TcNet<float> net = TcNet<float>::build(cfg, 3);
        for (auto& v : net.head.weight.data) v = 0.0f;
        net.head.bias.data[0] = 30.0f; // probability ~= 1 everywhere
        for (auto& stage : net.enc2d) {
            for (auto& v : stage.cpa.fc2.weight.data) v = 0.0f;
            for (auto& v : stage.cpa.fc2.bias.data) v = 30.0f; // grids ~= 1
        }
        Tensor<float> batch({1, 4, 96, 96});
        Tensor<float> mask = Tensor<float>::full({1, 1, 96, 96}, 1.0f);
        Tensor<float> coarse = Tensor<float>::full({1, 1, 6, 6}, 1.0f);
        ForwardTrace<float> trace = net.forward(batch, false);
        LossBreakdown loss = total_loss<float>(trace, mask, coarse, 0.25, nullptr, nullptr);
        CHECK(loss.total < 1e-3);
    }

    SUBCASE("random case equals the sum of independently computed components") {
        TcNet<double> net = TcNet<double>::build(cfg, 0);
        Rng rng(0);
        Tensor<double> batch({1, 4, 96, 96});
        for (auto& v : batch.data) v = rng.uniform(0.0, 1.0);
        Tensor<double> mask({1, 1, 96, 96});
        for (auto& v : mask.data) v = rng.bernoulli(0.15) ? 1.0 : 0.0;
        Tensor<double> coarse({1, 1, 6, 6});
        for (auto& v : coarse.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        ForwardTrace<double> trace = net.forward(batch, false);
        LossBreakdown loss = total_loss<double>(trace, mask, coarse, 0.25, nullptr, nullptr);

        // independent: dice from probabilities, bce from logits, coarse per stage
        double inter = 0, psum = 0, tsum = 0, bce = 0;
        for (std::size_t i = 0; i < trace.prob.numel(); ++i) {
            const double p = trace.prob.data[i];
            const double t = mask.data[i];
            inter += p * t;
            psum += p;
            tsum += t;
            bce -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
        const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + tsum + 1.0);
        bce /= static_cast<double>(trace.prob.numel());
        double coarse_sum = 0;
        for (const auto& att : trace.attention) coarse_sum += coarse_bce_loss(att.grid, coarse);
        coarse_sum /= 5.0;
        CHECK(loss.dice == doctest::Approx(dice).epsilon(1e-9));
        CHECK(loss.bce == doctest::Approx(bce).epsilon(1e-7));
        CHECK(loss.coarse == doctest::Approx(coarse_sum).epsilon(1e-9));
        CHECK(loss.total == doctest::Approx(dice + bce + 0.25 * coarse_sum).epsilon(1e-7));
    }
}

TEST_CASE("ablation flags") {
    NetworkConfig cfg = tiny_config();

    SUBCASE("cpa off removes the coarse component and the attention trace") {
        TcNet<float> net = TcNet<float>::build(ablate(cfg, false, true, true), 5);
        Tensor<float> batch({1, 4, 96, 96});
        ForwardTrace<float> trace = net.forward(batch, false);
        CHECK(trace.attention.empty());
        LossBreakdown loss = total_loss<float>(trace, Tensor<float>({1, 1, 96, 96}),
                                               Tensor<float>({1, 1, 6, 6}), 0.25, nullptr, nullptr);
        CHECK(loss.coarse == 0.0);
    }

    SUBCASE("cff off removes the 3D branch") {
        TcNet<float> net = TcNet<float>::build(ablate(cfg, true, false, true), 5);
        Tensor<float> batch({1, 4, 96, 96});
        ForwardTrace<float> trace = net.forward(batch, false);
        CHECK(trace.cff_weights.empty());
    }

    SUBCASE("all six module combinations build and forward at the right shape") {
        const bool flags[6][3] = {{false, false, false}, {true, false, false}, {false, true, false},
                                  {false, false, true},  {true, true, false},  {true, true, true}};
        for (const auto& f : flags) {
            TcNet<float> net = TcNet<float>::build(ablate(cfg, f[0], f[1], f[2]), 6);
            Tensor<float> batch({1, 4, 96, 96});
            ForwardTrace<float> trace = net.forward(batch, false);
            CHECK(trace.logits.shape == std::vector<int>{1, 1, 96, 96});
        }
    }
}

TEST_CASE("lambda_cpa = 0 makes gradients independent of the coarse target") {
    NetworkConfig cfg = tiny_config();
    Rng rng(6);
    Tensor<float> batch({1, 4, 96, 96});
    for (auto& v : batch.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor<float> mask({1, 1, 96, 96});
    for (auto& v : mask.data) v = rng.bernoulli(0.1) ? 1.0f : 0.0f;
    Tensor<float> target_a = Tensor<float>::full({1, 1, 6, 6}, 1.0f);
    Tensor<float> target_b({1, 1, 6, 6});

    auto run = [&](const Tensor<float>& coarse) {
        TcNet<float> net = TcNet<float>::build(cfg, 7);
        ForwardTrace<float> trace = net.forward(batch, false);
        Tensor<float> grad_logits;
        std::vector<Tensor<float>> grad_grids;
        total_loss(trace, mask, coarse, 0.0, &grad_logits, &grad_grids);
        net.zero_grad();
        net.backward(grad_logits, grad_grids);
        return grad_checksum(net);
    };
    CHECK(run(target_a) == run(target_b));
}

TEST_CASE("lr schedule closed form") {
    CHECK(schedule_lr(1e-3, 0.96, 0) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(schedule_lr(1e-3, 0.96, 10) == doctest::Approx(6.648326359915008e-4).epsilon(1e-10));
}
