#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nn_ops.hpp"
#include "optim.hpp"

namespace genodiff {
namespace nn {

namespace cop = genodiff::ops;

enum class ClassifierArch { MLP, CNN1d, Transformer };

inline const char* arch_name(ClassifierArch a) {
    switch (a) {
        case ClassifierArch::MLP: return "mlp";
        case ClassifierArch::CNN1d: return "cnn1d";
        case ClassifierArch::Transformer: return "transformer";
    }
    return "?";
}

inline ClassifierArch arch_from_name(const std::string& s) {
    if (s == "mlp") return ClassifierArch::MLP;
    if (s == "cnn1d") return ClassifierArch::CNN1d;
    if (s == "transformer") return ClassifierArch::Transformer;
    throw ConfigError("unknown classifier arch '" + s + "'");
}

struct ClassifierSpec {
    ClassifierArch arch = ClassifierArch::MLP;
    int64_t hidden = 64;
    int64_t steps = 300;
    int64_t batch = 32;
    double lr = 1e-3;
    uint64_t seed = 0;
    int64_t param_cap = 5'000'000;  // desk-scale cap

    void validate() const {
        if (hidden < 1) throw ConfigError("classifier: hidden must be >= 1");
        if (steps < 1) throw ConfigError("classifier: steps must be >= 1");
        if (batch < 1) throw ConfigError("classifier: batch must be >= 1");
        if (lr <= 0) throw ConfigError("classifier: lr must be > 0");
    }
};

// Small label classifier over embedded tensors (n, g, 8) or raw flat
// matrices (n, d). The transformer variant needs the per-gene token layout
// and rejects flat input.
class Classifier {
public:
    Classifier(const ClassifierSpec& spec, Shape input_shape, int64_t n_classes)
        : spec_(spec), input_shape_(std::move(input_shape)), n_classes_(n_classes) {
        spec_.validate();
        if (n_classes < 2) throw ConfigError("classifier: need at least 2 classes");
        Rng rng = make_stream(spec.seed, "classifier.init");
        bool flat = input_shape_.size() == 1;
        int64_t h = spec_.hidden;
        switch (spec_.arch) {
            case ClassifierArch::MLP: {
                int64_t d = flat ? input_shape_[0] : input_shape_[0] * input_shape_[1];
                w1_ = reg("w1", glorot({d, h}, d, h, rng));
                b1_ = reg("b1", Tensor({h}));
                w2_ = reg("w2", glorot({h, n_classes}, h, n_classes, rng));
                b2_ = reg("b2", Tensor({n_classes}));
                break;
            }
            case ClassifierArch::CNN1d: {
                int64_t cin = flat ? 1 : input_shape_[1];
                conv1_w_ = reg("conv1.w", glorot({h / 2, cin, 5}, cin * 5, h / 2 * 5, rng));
                conv1_b_ = reg("conv1.b", Tensor({h / 2}));
                conv2_w_ = reg("conv2.w", glorot({h, h / 2, 5}, h / 2 * 5, h * 5, rng));
                conv2_b_ = reg("conv2.b", Tensor({h}));
                w2_ = reg("head.w", glorot({h, n_classes}, h, n_classes, rng));
                b2_ = reg("head.b", Tensor({n_classes}));
                break;
            }
            case ClassifierArch::Transformer: {
                if (flat)
                    throw ConfigError("classifier: transformer needs (genes, channels) input");
                int64_t c = input_shape_[1];
                patch_w_ = reg("patch.w", glorot({c, h}, c, h, rng));
                patch_b_ = reg("patch.b", Tensor({h}));
                pos_ = reg("pos", glorot({input_shape_[0], h}, input_shape_[0], h, rng));
                for (int l = 0; l < 2; ++l) {
                    std::string p = "layer" + std::to_string(l);
                    Layer lay;
                    lay.ln1g = reg(p + ".ln1.g", Tensor::full({h}, 1.0));
                    lay.ln1b = reg(p + ".ln1.b", Tensor({h}));
                    lay.q = reg(p + ".q", glorot({h, h}, h, h, rng));
                    lay.qb = reg(p + ".qb", Tensor({h}));
                    lay.k = reg(p + ".k", glorot({h, h}, h, h, rng));
                    lay.kb = reg(p + ".kb", Tensor({h}));
                    lay.v = reg(p + ".v", glorot({h, h}, h, h, rng));
                    lay.vb = reg(p + ".vb", Tensor({h}));
                    lay.o = reg(p + ".o", glorot({h, h}, h, h, rng));
                    lay.ob = reg(p + ".ob", Tensor({h}));
                    lay.ln2g = reg(p + ".ln2.g", Tensor::full({h}, 1.0));
                    lay.ln2b = reg(p + ".ln2.b", Tensor({h}));
                    lay.f1 = reg(p + ".f1", glorot({h, 2 * h}, h, 2 * h, rng));
                    lay.f1b = reg(p + ".f1b", Tensor({2 * h}));
                    lay.f2 = reg(p + ".f2", glorot({2 * h, h}, 2 * h, h, rng));
                    lay.f2b = reg(p + ".f2b", Tensor({h}));
                    layers_.push_back(lay);
                }
                w2_ = reg("head.w", glorot({h, n_classes}, h, n_classes, rng));
                b2_ = reg("head.b", Tensor({n_classes}));
                break;
            }
        }
        if (total_params(params_) > spec_.param_cap)
            throw ConfigError("classifier: " + std::to_string(total_params(params_)) +
                              " parameters exceed the desk-scale cap of " +
                              std::to_string(spec_.param_cap));
    }

    Var forward(const Var& x) {
        int64_t b = x.shape()[0];
        switch (spec_.arch) {
            case ClassifierArch::MLP: {
                Var flat = cop::reshape(x, {b, x.numel() / b});
                Var h = cop::silu(cop::linear(flat, w1_, b1_));
                return cop::linear(h, w2_, b2_);
            }
            case ClassifierArch::CNN1d: {
                Var seq = x.shape().size() == 3 ? cop::swap_last2(x)
                                                : cop::reshape(x, {b, 1, x.numel() / b});
                Var h = cop::silu(cop::conv1d(seq, conv1_w_, conv1_b_, 2, 2));
                h = cop::silu(cop::conv1d(h, conv2_w_, conv2_b_, 2, 2));
                int64_t l = h.shape()[2];
                Var pooled = cop::reshape(cop::avg_pool1d(h, l, l), {b, spec_.hidden});
                return cop::linear(pooled, w2_, b2_);
            }
            case ClassifierArch::Transformer: {
                int64_t g = x.shape()[1], c = x.shape()[2];
                int64_t h = spec_.hidden;
                Var tok = cop::reshape(cop::linear(cop::reshape(x, {b * g, c}), patch_w_, patch_b_),
                                       {b, g, h});
                tok = cop::add_batch_broadcast(tok, pos_);
                for (const Layer& lay : layers_) {
                    Var n1 = cop::layer_norm(tok, lay.ln1g, lay.ln1b);
                    Var flat = cop::reshape(n1, {b * g, h});
                    Var q = cop::reshape(cop::linear(flat, lay.q, lay.qb), {b, g, h});
                    Var k = cop::reshape(cop::linear(flat, lay.k, lay.kb), {b, g, h});
                    Var v = cop::reshape(cop::linear(flat, lay.v, lay.vb), {b, g, h});
                    Var att = cop::multi_head_attention(q, k, v, 4);
                    tok = cop::add(tok, cop::reshape(cop::linear(cop::reshape(att, {b * g, h}),
                                                                 lay.o, lay.ob),
                                                     {b, g, h}));
                    Var n2 = cop::layer_norm(tok, lay.ln2g, lay.ln2b);
                    Var ff = cop::linear(cop::silu(cop::linear(cop::reshape(n2, {b * g, h}), lay.f1,
                                                               lay.f1b)),
                                         lay.f2, lay.f2b);
                    tok = cop::add(tok, cop::reshape(ff, {b, g, h}));
                }
                Var pooled = cop::reshape(cop::avg_pool1d(cop::swap_last2(tok), g, g), {b, h});
                return cop::linear(pooled, w2_, b2_);
            }
        }
        throw UsageError("classifier: unreachable");
    }

    Tensor logits(const Tensor& x) {
        NoGradGuard ng;
        return forward(Var::constant(x)).value();
    }

    std::vector<int64_t> predict(const Tensor& x) {
        Tensor lg = logits(x);
        int64_t b = lg.dim(0), k = lg.dim(1);
        std::vector<int64_t> out(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            int64_t arg = 0;
            for (int64_t j = 1; j < k; ++j)
                if (lg.at(i, j) > lg.at(i, arg)) arg = j;
            out[static_cast<size_t>(i)] = arg;
        }
        return out;
    }

    double accuracy(const Tensor& x, const std::vector<int64_t>& y) {
        auto pred = predict(x);
        int64_t correct = 0;
        for (size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == y[i]) ++correct;
        return static_cast<double>(correct) / static_cast<double>(pred.size());
    }

    std::vector<Var> param_vars() {
        std::vector<Var> v;
        for (auto& p : params_) v.push_back(p.var);
        return v;
    }

    int64_t n_params() const { return total_params(params_); }
    const ClassifierSpec& spec() const { return spec_; }

private:
    Var reg(const std::string& name, Tensor t) {
        params_.push_back({name, Var::param(std::move(t))});
        return params_.back().var;
    }

    struct Layer {
        Var ln1g, ln1b, q, qb, k, kb, v, vb, o, ob, ln2g, ln2b, f1, f1b, f2, f2b;
    };

    ClassifierSpec spec_;
    Shape input_shape_;  // per-sample shape
    int64_t n_classes_;
    std::vector<Parameter> params_;
    Var w1_, b1_, w2_, b2_;
    Var conv1_w_, conv1_b_, conv2_w_, conv2_b_;
    Var patch_w_, patch_b_, pos_;
    std::vector<Layer> layers_;
};

struct TrainedClassifier {
    std::unique_ptr<Classifier> model;
    double val_accuracy = 0.0;
};

// Deterministic under spec.seed. Throws if the training set has one class.
inline TrainedClassifier train_classifier(const Tensor& train_x,
                                          const std::vector<int64_t>& train_y,
                                          const Tensor& val_x, const std::vector<int64_t>& val_y,
                                          const ClassifierSpec& spec, int64_t n_classes) {
    int64_t n = train_x.dim(0);
    if (static_cast<int64_t>(train_y.size()) != n)
        throw ShapeError("train_classifier: labels length != samples");
    {
        std::vector<int64_t> seen;
        for (int64_t y : train_y)
            if (std::find(seen.begin(), seen.end(), y) == seen.end()) seen.push_back(y);
        if (seen.size() < 2)
            throw ConfigError("train_classifier: training set contains a single class");
    }
    Shape per_sample(train_x.shape().begin() + 1, train_x.shape().end());
    TrainedClassifier out;
    out.model = std::make_unique<Classifier>(spec, per_sample, n_classes);

    Adam opt(out.model->param_vars(), {.lr = spec.lr});
    Rng shuffle = make_stream(spec.seed, "classifier.shuffle");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int64_t cursor = n;
    int64_t inner = train_x.numel() / n;
    int64_t bsz = std::min<int64_t>(spec.batch, n);
    Shape batch_shape = train_x.shape();
    batch_shape[0] = bsz;
    Tensor batch(batch_shape);
    std::vector<int64_t> batch_y(static_cast<size_t>(bsz));
    for (int64_t step = 0; step < spec.steps; ++step) {
        for (int64_t k = 0; k < bsz; ++k) {
            if (cursor >= n) {
                shuffle.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            int64_t i = order[static_cast<size_t>(cursor++)];
            std::copy(train_x.data() + i * inner, train_x.data() + (i + 1) * inner,
                      batch.data() + k * inner);
            batch_y[static_cast<size_t>(k)] = train_y[static_cast<size_t>(i)];
        }
        opt.zero_grad();
        Var loss = cop::cross_entropy_logits(out.model->forward(Var::constant(batch)), batch_y);
        if (!std::isfinite(loss.value()[0]))
            throw NumericError("train_classifier: non-finite loss");
        loss.backward();
        opt.step();
    }
    out.val_accuracy = val_x.dim(0) > 0 ? out.model->accuracy(val_x, val_y) : 0.0;
    return out;
}

}  // namespace nn
}  // namespace genodiff
