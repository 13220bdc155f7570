#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "backbones.hpp"
#include "embedding.hpp"
#include "optim.hpp"
#include "schedule.hpp"

namespace genodiff {
namespace ddpm {

/*-------------------------------- forward process --------------------------------*/

// x_t = sqrt(alpha_bar(t)) * x + sqrt(1 - alpha_bar(t)) * eps, per sample.
// Mask-false positions stay 0 because eps is 0 there and x is 0 there.
inline Tensor forward_noise(const Tensor& x, const std::vector<int64_t>& t, const Tensor& eps,
                            const NoiseSchedule& sched) {
    check_same_shape("forward_noise", x, eps);
    if (x.rank() < 1 || static_cast<int64_t>(t.size()) != x.dim(0))
        throw ShapeError("forward_noise: one step index per sample required");
    Tensor out(x.shape());
    int64_t b = x.dim(0);
    int64_t inner = x.numel() / b;
    for (int64_t i = 0; i < b; ++i) {
        int64_t ti = t[static_cast<size_t>(i)];
        sched.check(ti);
        double a = sched.sqrt_alpha_bar(ti);
        double s = sched.sqrt_one_minus_alpha_bar(ti);
        for (int64_t j = 0; j < inner; ++j)
            out[i * inner + j] = a * x[i * inner + j] + s * eps[i * inner + j];
    }
    return out;
}

// single-step inversion: x_p = (x_t - sqrt(1 - alpha_bar(t)) * eps_p) / sqrt(alpha_bar(t)).
// sqrt(alpha_bar) comes from the schedule's log-space accumulator, so large t
// cannot underflow the division.
inline Tensor one_shot_denoise(const Tensor& x_t, const std::vector<int64_t>& t,
                               const Tensor& eps_p, const NoiseSchedule& sched) {
    check_same_shape("one_shot_denoise", x_t, eps_p);
    if (static_cast<int64_t>(t.size()) != x_t.dim(0))
        throw ShapeError("one_shot_denoise: one step index per sample required");
    Tensor out(x_t.shape());
    int64_t b = x_t.dim(0);
    int64_t inner = x_t.numel() / b;
    for (int64_t i = 0; i < b; ++i) {
        int64_t ti = t[static_cast<size_t>(i)];
        sched.check(ti);
        double inv_a = std::exp(-0.5 * std::log(sched.alpha_bar(ti)));
        double s = sched.sqrt_one_minus_alpha_bar(ti);
        for (int64_t j = 0; j < inner; ++j)
            out[i * inner + j] = (x_t[i * inner + j] - s * eps_p[i * inner + j]) * inv_a;
    }
    return out;
}

// gaussian noise at mask-true positions, exact zeros elsewhere
inline Tensor masked_noise(const Shape& shape, const Tensor& mask, Rng& rng) {
    Tensor eps(shape);
    int64_t b = shape[0];
    int64_t inner = eps.numel() / b;
    if (mask.numel() != inner) throw ShapeError("masked_noise: mask shape mismatch");
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j)
            eps[i * inner + j] = mask[j] != 0.0 ? rng.normal() : 0.0;
    return eps;
}

/*----------------------------------- training ------------------------------------*/

struct TrainConfig {
    int64_t t_steps = 1000;
    double beta_first = 1e-4;
    double beta_last = 0.02;
    int64_t steps = 2000;
    int64_t batch = 32;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int64_t eval_every = 100;
    int64_t val_batch_cap = 64;  // cap on validation samples used per eval
    uint64_t seed = 0;
    bool conditional = true;

    void validate() const {
        if (t_steps < 2) throw ConfigError("train: T must be >= 2");
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (lr <= 0) throw ConfigError("train: lr must be > 0");
        if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    }
};

// One optimizer step on one batch: per sample draw t ~ U{1..T} and eps,
// noise, predict, mask, and take the mean squared error over mask-true
// positions. Returns the batch loss.
inline double training_step(nn::NoisePredictor& model, const Tensor& x_batch,
                            const std::vector<int64_t>& y_batch, const NoiseSchedule& sched,
                            Adam& opt, const Tensor& mask, Rng& rng) {
    int64_t b = x_batch.dim(0);
    std::vector<int64_t> t(static_cast<size_t>(b));
    for (auto& ti : t) ti = 1 + rng.uniform_int(sched.t_steps());
    Tensor eps = masked_noise(x_batch.shape(), mask, rng);
    Tensor x_t = forward_noise(x_batch, t, eps, sched);

    Tensor batch_mask(x_batch.shape());
    for (int64_t i = 0; i < b; ++i)
        std::copy(mask.data(), mask.data() + mask.numel(), batch_mask.data() + i * mask.numel());

    opt.zero_grad();
    Var eps_p = model.forward(Var::constant(x_t), t, y_batch);
    Var loss = ops::mse_masked(ops::mul_const(eps_p, batch_mask), eps, batch_mask);
    double loss_val = loss.value()[0];
    if (!std::isfinite(loss_val))
        throw NumericError("training_step: non-finite loss; aborting epoch (check data scaling)");
    loss.backward();
    opt.step();
    return loss_val;
}

// evaluation-only loss on a fixed (t, eps) draw
inline double masked_eps_loss(nn::NoisePredictor& model, const Tensor& x,
                              const std::vector<int64_t>& y, const std::vector<int64_t>& t,
                              const Tensor& eps, const NoiseSchedule& sched, const Tensor& mask) {
    NoGradGuard ng;
    Tensor x_t = forward_noise(x, t, eps, sched);
    Tensor eps_p = model.eps(x_t, t, y);
    double num = 0.0, den = 0.0;
    int64_t b = x.dim(0);
    int64_t inner = x.numel() / b;
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) {
            if (mask[j] == 0.0) continue;
            double d = eps_p[i * inner + j] - eps[i * inner + j];
            num += d * d;
            den += 1.0;
        }
    return num / den;
}

struct TrainMetricsRow {
    int64_t step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_recon_error = 0.0;
};

// Full training loop. All randomness derives from cfg.seed substreams; the
// validation (t, eps) draw is fixed once so the loss curve is comparable
// across evals and reruns are bit-identical.
inline std::vector<TrainMetricsRow> train(nn::NoisePredictor& model, const Tensor& train_x,
                                          const std::vector<int64_t>& train_y, const Tensor& val_x,
                                          const std::vector<int64_t>& val_y,
                                          const NoiseSchedule& sched, const TrainConfig& cfg,
                                          const Tensor& mask) {
    cfg.validate();
    int64_t n = train_x.dim(0);
    int64_t inner = train_x.numel() / n;
    if (static_cast<int64_t>(train_y.size()) != n)
        throw ShapeError("train: labels length != samples");

    Adam opt(model.param_vars(), {.lr = cfg.lr, .beta1 = cfg.adam_beta1, .beta2 = cfg.adam_beta2});
    Rng step_rng = make_stream(cfg.seed, "train.steps");
    Rng shuffle_rng = make_stream(cfg.seed, "train.shuffle");

    // fixed validation draw
    int64_t nv = std::min<int64_t>(val_x.dim(0), cfg.val_batch_cap);
    Tensor val_sub({nv, val_x.dim(1), val_x.dim(2)});
    std::vector<int64_t> val_sub_y(static_cast<size_t>(nv));
    for (int64_t i = 0; i < nv; ++i) {
        std::copy(val_x.data() + i * inner, val_x.data() + (i + 1) * inner,
                  val_sub.data() + i * inner);
        val_sub_y[static_cast<size_t>(i)] =
            cfg.conditional ? val_y[static_cast<size_t>(i)] : model.null_label();
    }
    Rng val_rng = make_stream(cfg.seed, "train.val");
    std::vector<int64_t> val_t(static_cast<size_t>(nv));
    for (auto& ti : val_t) ti = 1 + val_rng.uniform_int(sched.t_steps());
    Tensor val_eps = masked_noise(val_sub.shape(), mask, val_rng);

    auto eval_model = [&](int64_t step, double train_loss) {
        TrainMetricsRow row;
        row.step = step;
        row.train_loss = train_loss;
        row.val_loss = masked_eps_loss(model, val_sub, val_sub_y, val_t, val_eps, sched, mask);
        NoGradGuard ng;
        Tensor x_t = forward_noise(val_sub, val_t, val_eps, sched);
        Tensor eps_p = model.eps(x_t, val_t, val_sub_y);
        Tensor x_p = one_shot_denoise(x_t, val_t, eps_p, sched);
        double err = 0.0;
        for (int64_t i = 0; i < nv; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < inner; ++j) {
                double d = x_p[i * inner + j] - val_sub[i * inner + j];
                acc += d * d;
            }
            err += std::sqrt(acc);
        }
        row.val_recon_error = err / static_cast<double>(nv);
        return row;
    };

    std::vector<TrainMetricsRow> metrics;
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int64_t cursor = n;  // triggers reshuffle on first use

    double loss_acc = 0.0;
    int64_t loss_count = 0;
    Tensor batch({cfg.batch, train_x.dim(1), train_x.dim(2)});
    std::vector<int64_t> batch_y(static_cast<size_t>(cfg.batch));
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        for (int64_t k = 0; k < cfg.batch; ++k) {
            if (cursor >= n) {
                shuffle_rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            int64_t i = order[static_cast<size_t>(cursor++)];
            std::copy(train_x.data() + i * inner, train_x.data() + (i + 1) * inner,
                      batch.data() + k * inner);
            batch_y[static_cast<size_t>(k)] =
                cfg.conditional ? train_y[static_cast<size_t>(i)] : model.null_label();
        }
        loss_acc += training_step(model, batch, batch_y, sched, opt, mask, step_rng);
        ++loss_count;
        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            metrics.push_back(eval_model(step, loss_acc / static_cast<double>(loss_count)));
            loss_acc = 0.0;
            loss_count = 0;
        }
    }
    return metrics;
}

/*----------------------------------- sampling ------------------------------------*/

struct SampleRequest {
    int64_t n_samples = 1;
    std::optional<int64_t> label;  // empty = unconditional (null label)
    uint64_t seed = 0;
};

// Full-length ancestral sampling (no step skipping):
//   x_{t-1} = (x_t - ((1 - alpha(t)) / sqrt(1 - alpha_bar(t))) * eps_p) / sqrt(alpha(t))
//             + sqrt(beta_tilde(t)) * z,   z = 0 at t = 1.
// Each chain draws all of its noise from its own (seed, chain) stream, so
// results are independent of batching and thread count. Mask-false positions
// are forced to exactly 0 after every step.
inline Tensor sample_chains(const nn::EpsFn& eps_fn, const NoiseSchedule& sched,
                            const std::vector<int64_t>& labels, uint64_t seed, const Tensor& mask) {
    auto n = static_cast<int64_t>(labels.size());
    if (n < 1) throw ConfigError("sample: need at least one chain");
    if (mask.rank() != 2) throw ShapeError("sample: mask must be (g_pad, channels)");
    int64_t g = mask.dim(0), c = mask.dim(1);
    int64_t inner = g * c;

    std::vector<Rng> streams;
    streams.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        streams.push_back(make_stream(seed, "sample.chain", static_cast<uint64_t>(i)));

    Tensor x({n, g, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < inner; ++j)
            x[i * inner + j] = mask[j] != 0.0 ? streams[static_cast<size_t>(i)].normal() : 0.0;

    std::vector<int64_t> t_batch(static_cast<size_t>(n));
    for (int64_t t = sched.t_steps(); t >= 1; --t) {
        std::fill(t_batch.begin(), t_batch.end(), t);
        Tensor eps_p = eps_fn(x, t_batch, labels);
        double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
        double coef = (1.0 - sched.alpha(t)) / sched.sqrt_one_minus_alpha_bar(t);
        double sigma = std::sqrt(sched.beta_tilde(t));
        for (int64_t i = 0; i < n; ++i) {
            Rng& rng = streams[static_cast<size_t>(i)];
            for (int64_t j = 0; j < inner; ++j) {
                if (mask[j] == 0.0) {
                    x[i * inner + j] = 0.0;
                    continue;
                }
                double mean = inv_sqrt_alpha * (x[i * inner + j] - coef * eps_p[i * inner + j]);
                double z = t > 1 ? rng.normal() : 0.0;
                x[i * inner + j] = mean + sigma * z;
            }
        }
        if (!x.all_finite())
            throw NumericError("sample: non-finite state at step " + std::to_string(t));
    }
    return x;
}

inline embed::EmbeddingTensor sample(nn::NoisePredictor& model, const NoiseSchedule& sched,
                                     const SampleRequest& req, const Tensor& mask) {
    if (req.n_samples < 1) throw ConfigError("sample: n_samples must be >= 1");
    if (req.label && (*req.label < 0 || *req.label >= model.n_classes()))
        throw ConfigError("sample: label " + std::to_string(*req.label) +
                          " outside [0, " + std::to_string(model.n_classes()) + ")");
    std::vector<int64_t> labels(static_cast<size_t>(req.n_samples),
                                req.label ? *req.label : model.null_label());
    embed::EmbeddingTensor out;
    out.values = sample_chains(model.eps_fn(), sched, labels, req.seed, mask);
    out.standardized = true;
    if (req.label) out.labels.assign(static_cast<size_t>(req.n_samples), *req.label);
    return out;
}

/*--------------------------------- diagnostics -----------------------------------*/

struct NoiseBinStat {
    int64_t t_lo = 0, t_hi = 0;  // inclusive step range
    double mean_recon_error = 0.0;
    int64_t count = 0;
};

// Validation reconstruction error ||x_p - x|| binned by t. Bins partition
// [1, T] contiguously; each (sample, bin) pair contributes one draw, with t
// sampled uniformly inside the bin.
inline std::vector<NoiseBinStat> loss_vs_noise_report(nn::NoisePredictor& model, const Tensor& val_x,
                                                      const std::vector<int64_t>& val_y,
                                                      const NoiseSchedule& sched, int64_t n_bins,
                                                      const Tensor& mask, uint64_t seed) {
    if (val_x.dim(0) < 1) throw ConfigError("loss_vs_noise: empty validation set");
    if (n_bins < 1 || n_bins > sched.t_steps()) throw ConfigError("loss_vs_noise: bad bin count");
    NoGradGuard ng;
    int64_t n = val_x.dim(0);
    int64_t inner = val_x.numel() / n;
    Rng rng = make_stream(seed, "loss_vs_noise");
    std::vector<NoiseBinStat> bins(static_cast<size_t>(n_bins));
    int64_t t_total = sched.t_steps();
    for (int64_t k = 0; k < n_bins; ++k) {
        auto& bin = bins[static_cast<size_t>(k)];
        bin.t_lo = 1 + k * t_total / n_bins;
        bin.t_hi = (k + 1) * t_total / n_bins;
        std::vector<int64_t> t(static_cast<size_t>(n));
        for (auto& ti : t) ti = bin.t_lo + rng.uniform_int(bin.t_hi - bin.t_lo + 1);
        Tensor eps = masked_noise(val_x.shape(), mask, rng);
        Tensor x_t = forward_noise(val_x, t, eps, sched);
        Tensor eps_p = model.eps(x_t, t, val_y);
        Tensor x_p = one_shot_denoise(x_t, t, eps_p, sched);
        double err = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < inner; ++j) {
                double d = x_p[i * inner + j] - val_x[i * inner + j];
                acc += d * d;
            }
            err += std::sqrt(acc);
        }
        bin.mean_recon_error = err / static_cast<double>(n);
        bin.count = n;
    }
    return bins;
}

}  // namespace ddpm
}  // namespace genodiff
