#pragma once

#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "blob_io.hpp"
#include "nn_ops.hpp"
#include "optim.hpp"

namespace genodiff {
namespace nn {

namespace op = genodiff::ops;

/*------------------------------- shared pieces ---------------------------------*/

// sinusoidal features of t / t_max over `dim` channels
inline Tensor sinusoidal_features(const std::vector<int64_t>& t, int64_t t_max, int64_t dim) {
    auto b = static_cast<int64_t>(t.size());
    Tensor out({b, dim});
    int64_t half = dim / 2;
    for (int64_t i = 0; i < b; ++i) {
        double pos = static_cast<double>(t[static_cast<size_t>(i)]) / static_cast<double>(t_max);
        for (int64_t j = 0; j < half; ++j) {
            double freq = std::exp(static_cast<double>(j) / std::max<double>(1.0, static_cast<double>(half - 1)) *
                                   std::log(10000.0));
            out.at(i, 2 * j) = std::sin(pos * freq);
            out.at(i, 2 * j + 1) = std::cos(pos * freq);
        }
        if (dim % 2) out.at(i, dim - 1) = pos;
    }
    return out;
}

// epsilon-predictor interface used by the sampler; riggable in tests
using EpsFn = std::function<Tensor(const Tensor& x_t, const std::vector<int64_t>& t,
                                   const std::vector<int64_t>& y)>;

// Base for all noise predictors E(x_t, t, y) -> eps_p. x is (batch, g_pad, 8);
// t holds 1-based schedule steps; y holds class ids where n_classes is the
// "unconditional" null id. The clamp mask, when set, zeroes padded positions
// of the returned prediction.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;

    virtual Var forward(const Var& x, const std::vector<int64_t>& t,
                        const std::vector<int64_t>& y) = 0;
    virtual const char* variant() const = 0;
    virtual nlohmann::json arch_manifest() const = 0;

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Var> param_vars() {
        std::vector<Var> v;
        v.reserve(params_.size());
        for (auto& p : params_) v.push_back(p.var);
        return v;
    }

    int64_t g_pad() const { return g_pad_; }
    int64_t n_classes() const { return n_classes_; }
    int64_t null_label() const { return n_classes_; }
    int64_t t_max() const { return t_max_; }
    int64_t flops_per_sample() const { return flops_; }

    void set_clamp_mask(Tensor mask) {
        if (mask.shape() != Shape{g_pad_, 8})
            throw ShapeError("set_clamp_mask: mask must be (g_pad, 8)");
        mask_ = std::move(mask);
    }
    const Tensor& clamp_mask() const { return mask_; }

    Tensor eps(const Tensor& x, const std::vector<int64_t>& t, const std::vector<int64_t>& y) {
        NoGradGuard ng;
        return forward(Var::constant(x), t, y).value();
    }

    EpsFn eps_fn() {
        return [this](const Tensor& x, const std::vector<int64_t>& t,
                      const std::vector<int64_t>& y) { return eps(x, t, y); };
    }

protected:
    NoisePredictor(int64_t g_pad, int64_t n_classes, int64_t t_max)
        : g_pad_(g_pad), n_classes_(n_classes), t_max_(t_max) {
        if (g_pad < 1) throw ConfigError("backbone: g_pad must be >= 1");
        if (n_classes < 1) throw ConfigError("backbone: n_classes must be >= 1");
        if (t_max < 2) throw ConfigError("backbone: t_max must be >= 2");
    }

    Var reg(const std::string& name, Tensor init) {
        params_.push_back({name, Var::param(std::move(init))});
        return params_.back().var;
    }

    void check_batch(const Var& x, const std::vector<int64_t>& t,
                     const std::vector<int64_t>& y) const {
        if (x.shape().size() != 3 || x.shape()[1] != g_pad_ || x.shape()[2] != 8)
            throw ShapeError("predictor: input must be (batch, " + std::to_string(g_pad_) + ", 8), got " +
                             shape_str(x.shape()));
        auto b = static_cast<size_t>(x.shape()[0]);
        if (t.size() != b || y.size() != b)
            throw ShapeError("predictor: t/y length must equal batch size");
        for (int64_t ti : t)
            if (ti < 1 || ti > t_max_)
                throw std::out_of_range("predictor: step " + std::to_string(ti) + " outside [1, " +
                                        std::to_string(t_max_) + "]");
        for (int64_t yi : y)
            if (yi < 0 || yi > n_classes_)
                throw ShapeError("predictor: label " + std::to_string(yi) + " outside [0, " +
                                 std::to_string(n_classes_) + "]");
    }

    Var masked(const Var& out) const {
        if (mask_.numel() == 0) return out;
        return op::mul_const_broadcast(out, mask_);
    }

    // time/label conditioning: 2-layer perceptron on sinusoidal(t / t_max)
    // plus a learned label embedding with a trailing null id
    struct CondEmbed {
        int64_t dim = 0;
        int64_t t_max = 0;
        Var w1, b1, w2, b2, table;
        Var operator()(const std::vector<int64_t>& t, const std::vector<int64_t>& y) const {
            Var feats = Var::constant(sinusoidal_features(t, t_max, dim));
            Var h = op::linear(op::silu(op::linear(feats, w1, b1)), w2, b2);
            return op::add(h, op::embedding_lookup(table, y));
        }
    };

    CondEmbed make_cond(int64_t dim, Rng& rng) {
        CondEmbed c;
        c.dim = dim;
        c.t_max = t_max_;
        c.w1 = reg("cond.w1", glorot({dim, dim}, dim, dim, rng));
        c.b1 = reg("cond.b1", Tensor({dim}));
        c.w2 = reg("cond.w2", glorot({dim, dim}, dim, dim, rng));
        c.b2 = reg("cond.b2", Tensor({dim}));
        c.table = reg("cond.labels", glorot({n_classes_ + 1, dim}, n_classes_ + 1, dim, rng));
        flops_ += 2 * dim * dim * 2;
        return c;
    }

    struct Dense {
        Var w, b;
        Var operator()(const Var& x) const { return op::linear(x, w, b); }
    };

    Dense make_dense(const std::string& name, int64_t in, int64_t out, Rng& rng) {
        Dense d;
        d.w = reg(name + ".w", glorot({in, out}, in, out, rng));
        d.b = reg(name + ".b", Tensor({out}));
        flops_ += 2 * in * out;
        return d;
    }

    struct Norm {
        Var gamma, beta;
    };

    Norm make_norm(const std::string& name, int64_t width) {
        Norm n;
        n.gamma = reg(name + ".gamma", Tensor::full({width}, 1.0));
        n.beta = reg(name + ".beta", Tensor({width}));
        flops_ += 8 * width;
        return n;
    }

    std::vector<Parameter> params_;
    int64_t g_pad_ = 0;
    int64_t n_classes_ = 0;
    int64_t t_max_ = 0;
    int64_t flops_ = 0;  // per-sample forward estimate, multiply-add = 2 ops
    Tensor mask_;
};

/*---------------------------------- MLP U-Net ----------------------------------*/

struct MlpUnetConfig {
    int64_t g_pad = 0;
    int64_t depth = 4;        // down blocks; widths halve per block
    int64_t base_width = 128;
    int64_t emb_dim = 64;
    int64_t n_classes = 2;
    int64_t t_max = 1000;
    uint64_t init_seed = 1;
};

class MlpUnet : public NoisePredictor {
public:
    explicit MlpUnet(const MlpUnetConfig& cfg)
        : NoisePredictor(cfg.g_pad, cfg.n_classes, cfg.t_max), cfg_(cfg) {
        if (cfg.depth < 1) throw ConfigError("mlp_unet: depth must be >= 1");
        if (cfg.g_pad % (int64_t(1) << cfg.depth) != 0)
            throw ConfigError("mlp_unet: g_pad " + std::to_string(cfg.g_pad) +
                              " is not divisible by 2^depth = " +
                              std::to_string(int64_t(1) << cfg.depth));
        Rng rng = make_stream(cfg.init_seed, "init.mlp_unet");
        cond_ = make_cond(cfg.emb_dim, rng);

        widths_.push_back(cfg.base_width);
        for (int64_t i = 0; i < cfg.depth; ++i)
            widths_.push_back(std::max<int64_t>(8, widths_.back() / 2));
        int64_t in_dim = cfg.g_pad * 8;

        in_proj_ = make_dense("in_proj", in_dim, widths_[0], rng);
        in_cond_ = make_dense("in_cond", cfg.emb_dim, widths_[0], rng);
        in_norm_ = make_norm("in_norm", widths_[0]);
        for (int64_t i = 0; i < cfg.depth; ++i) {
            std::string p = "down" + std::to_string(i);
            down_.push_back(make_dense(p, widths_[static_cast<size_t>(i)],
                                       widths_[static_cast<size_t>(i + 1)], rng));
            down_cond_.push_back(make_dense(p + ".cond", cfg.emb_dim,
                                            widths_[static_cast<size_t>(i + 1)], rng));
            down_norm_.push_back(make_norm(p + ".norm", widths_[static_cast<size_t>(i + 1)]));
        }
        int64_t wd = widths_.back();
        mid_ = make_dense("mid", wd, wd, rng);
        mid_cond_ = make_dense("mid.cond", cfg.emb_dim, wd, rng);
        mid_norm_ = make_norm("mid.norm", wd);
        for (int64_t i = cfg.depth - 1; i >= 0; --i) {
            std::string p = "up" + std::to_string(i);
            up_.push_back(make_dense(p, 2 * widths_[static_cast<size_t>(i + 1)],
                                     widths_[static_cast<size_t>(i)], rng));
            up_cond_.push_back(make_dense(p + ".cond", cfg.emb_dim,
                                          widths_[static_cast<size_t>(i)], rng));
            up_norm_.push_back(make_norm(p + ".norm", widths_[static_cast<size_t>(i)]));
        }
        out_proj_ = make_dense("out_proj", widths_[0], in_dim, rng);
        // Time-gated elementwise input->output skip. The flattened trunk is
        // far narrower than the input, so without this path the model cannot
        // represent the per-coordinate component of the noise (which carries
        // most of the loss at desk widths). Zero-initialized: inactive until
        // trained.
        skip_gate_ = make_dense("skip_gate", cfg.emb_dim, in_dim, rng);
        skip_gate_.w.value_mut().fill(0.0);
        skip_gate_.b.value_mut().fill(0.0);
    }

    Var forward(const Var& x, const std::vector<int64_t>& t,
                const std::vector<int64_t>& y) override {
        check_batch(x, t, y);
        int64_t b = x.shape()[0];
        Var cond = cond_(t, y);
        Var h = op::reshape(x, {b, g_pad_ * 8});
        h = block(in_proj_, in_cond_, in_norm_, h, cond);
        std::vector<Var> skips;
        for (size_t i = 0; i < down_.size(); ++i) {
            h = block(down_[i], down_cond_[i], down_norm_[i], h, cond);
            skips.push_back(h);
        }
        h = block(mid_, mid_cond_, mid_norm_, h, cond);
        for (size_t i = 0; i < up_.size(); ++i) {
            Var skip = skips[skips.size() - 1 - i];
            h = block(up_[i], up_cond_[i], up_norm_[i], op::concat<double>({h, skip}, 1), cond);
        }
        Var flat_in = op::reshape(x, {b, g_pad_ * 8});
        Var gated = op::mul(skip_gate_(cond), flat_in);
        Var out = op::reshape(op::add(out_proj_(h), gated), {b, g_pad_, int64_t(8)});
        return masked(out);
    }

    const char* variant() const override { return "mlp_unet"; }

    nlohmann::json arch_manifest() const override {
        return {{"variant", variant()},   {"g_pad", cfg_.g_pad},       {"depth", cfg_.depth},
                {"base_width", cfg_.base_width}, {"emb_dim", cfg_.emb_dim},
                {"n_classes", cfg_.n_classes},   {"t_max", cfg_.t_max},
                {"init_seed", cfg_.init_seed}};
    }

private:
    Var block(const Dense& d, const Dense& c, const Norm& n, const Var& h, const Var& cond) {
        return op::silu(op::layer_norm(op::add(d(h), c(cond)), n.gamma, n.beta));
    }

    MlpUnetConfig cfg_;
    std::vector<int64_t> widths_;
    CondEmbed cond_;
    Dense in_proj_, in_cond_, mid_, mid_cond_, out_proj_, skip_gate_;
    Norm in_norm_, mid_norm_;
    std::vector<Dense> down_, down_cond_, up_, up_cond_;
    std::vector<Norm> down_norm_, up_norm_;
};

/*---------------------------------- CNN U-Net ----------------------------------*/

struct CnnUnetConfig {
    int64_t g_pad = 0;
    int64_t base_filters = 16;
    std::vector<int64_t> channel_mults = {1, 1, 2, 2};  // one per down block
    std::set<int64_t> attention_blocks = {2, 3};
    int64_t heads = 4;
    int64_t groups = 8;
    int64_t emb_dim = 64;
    int64_t n_classes = 2;
    int64_t t_max = 1000;
    bool use_norm = true;  // group norms; off for strict shift-equivariance checks
    uint64_t init_seed = 1;
};

// full-scale variant: 8 down blocks, mults (1,1,1,1,2,2,3,4), attention at
// blocks 5 and 6 (1-based), base filter size 64
inline CnnUnetConfig cnn_unet_large_config() {
    CnnUnetConfig cfg;
    cfg.base_filters = 64;
    cfg.channel_mults = {1, 1, 1, 1, 2, 2, 3, 4};
    cfg.attention_blocks = {4, 5};
    cfg.emb_dim = 256;
    return cfg;
}

class CnnUnet : public NoisePredictor {
public:
    explicit CnnUnet(const CnnUnetConfig& cfg)
        : NoisePredictor(cfg.g_pad, cfg.n_classes, cfg.t_max), cfg_(cfg) {
        int64_t n = static_cast<int64_t>(cfg.channel_mults.size());
        if (n < 1) throw ConfigError("cnn_unet: need at least one down block");
        if (cfg.g_pad % (int64_t(1) << n) != 0)
            throw ConfigError("cnn_unet: sequence length " + std::to_string(cfg.g_pad) +
                              " is not divisible by 2^" + std::to_string(n));
        for (int64_t m : cfg.channel_mults)
            if (cfg.base_filters * m % cfg.groups != 0)
                throw ConfigError("cnn_unet: channel count " + std::to_string(cfg.base_filters * m) +
                                  " not divisible by groups");
        Rng rng = make_stream(cfg.init_seed, "init.cnn_unet");
        cond_ = make_cond(cfg.emb_dim, rng);

        std::vector<int64_t> ch;
        for (int64_t m : cfg.channel_mults) ch.push_back(cfg.base_filters * m);

        int64_t len = cfg.g_pad;
        stem_ = make_conv("stem", 8, ch[0], 3, len, rng);
        for (int64_t i = 0; i < n; ++i) {
            std::string p = "down" + std::to_string(i);
            down_res_.push_back(make_res(p, ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i)], len, rng));
            if (cfg.attention_blocks.count(i))
                down_attn_.push_back(make_attn(p + ".attn", ch[static_cast<size_t>(i)], len, rng));
            else
                down_attn_.emplace_back();
            int64_t next = i + 1 < n ? ch[static_cast<size_t>(i + 1)] : ch.back();
            down_conv_.push_back(make_conv(p + ".down", ch[static_cast<size_t>(i)], next, 3, len / 2, rng, 2));
            len /= 2;
        }
        mid1_ = make_res("mid1", ch.back(), ch.back(), len, rng);
        mid2_ = make_res("mid2", ch.back(), ch.back(), len, rng);
        for (int64_t i = n - 1; i >= 0; --i) {
            std::string p = "up" + std::to_string(i);
            int64_t cur = i + 1 < n ? ch[static_cast<size_t>(i + 1)] : ch.back();
            len *= 2;
            up_conv_.push_back(make_conv(p + ".proj", cur, ch[static_cast<size_t>(i)], 3, len, rng));
            up_res_.push_back(make_res(p, 2 * ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i)], len, rng));
            if (cfg.attention_blocks.count(i))
                up_attn_.push_back(make_attn(p + ".attn", ch[static_cast<size_t>(i)], len, rng));
            else
                up_attn_.emplace_back();
        }
        if (cfg.use_norm) head_norm_ = make_norm("head.norm", ch[0]);
        head_ = make_conv("head", ch[0], 8, 3, cfg.g_pad, rng);
    }

    Var forward(const Var& x, const std::vector<int64_t>& t,
                const std::vector<int64_t>& y) override {
        check_batch(x, t, y);
        Var cond = cond_(t, y);
        Var h = op::swap_last2(x);  // (b, 8, g_pad): PC columns as channels
        h = stem_(h);
        std::vector<Var> skips;
        for (size_t i = 0; i < down_res_.size(); ++i) {
            h = res_forward(down_res_[i], h, cond);
            if (down_attn_[i].heads) h = attn_forward(down_attn_[i], h);
            skips.push_back(h);
            h = op::conv1d(h, down_conv_[i].w, down_conv_[i].b, 2, 1);
        }
        h = res_forward(mid1_, h, cond);
        h = res_forward(mid2_, h, cond);
        for (size_t i = 0; i < up_res_.size(); ++i) {
            h = up_conv_[i](op::upsample_nearest1d(h, 2));
            Var skip = skips[skips.size() - 1 - i];
            h = res_forward(up_res_[i], op::concat<double>({h, skip}, 1), cond);
            if (up_attn_[i].heads) h = attn_forward(up_attn_[i], h);
        }
        if (cfg_.use_norm) h = op::group_norm(h, cfg_.groups, head_norm_.gamma, head_norm_.beta);
        Var out = op::swap_last2(head_(op::silu(h)));
        return masked(out);
    }

    const char* variant() const override { return "cnn_unet"; }

    nlohmann::json arch_manifest() const override {
        return {{"variant", variant()},
                {"g_pad", cfg_.g_pad},
                {"base_filters", cfg_.base_filters},
                {"channel_mults", cfg_.channel_mults},
                {"attention_blocks", std::vector<int64_t>(cfg_.attention_blocks.begin(),
                                                          cfg_.attention_blocks.end())},
                {"heads", cfg_.heads},
                {"groups", cfg_.groups},
                {"emb_dim", cfg_.emb_dim},
                {"n_classes", cfg_.n_classes},
                {"t_max", cfg_.t_max},
                {"use_norm", cfg_.use_norm},
                {"init_seed", cfg_.init_seed}};
    }

private:
    struct Conv {
        Var w, b;
        Var operator()(const Var& x) const { return op::conv1d(x, w, b, 1, 1); }
    };

    Conv make_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t lout,
                   Rng& rng, int64_t stride = 1) {
        (void)stride;
        Conv c;
        c.w = reg(name + ".w", glorot({cout, cin, k}, cin * k, cout * k, rng));
        c.b = reg(name + ".b", Tensor({cout}));
        flops_ += 2 * k * cin * cout * lout;
        return c;
    }

    struct Res {
        Norm n1, n2;
        Conv c1, c2, skip;
        Dense cond;
        bool has_skip = false;
        int64_t cin = 0, cout = 0;
    };

    Res make_res(const std::string& name, int64_t cin, int64_t cout, int64_t len, Rng& rng) {
        Res r;
        r.cin = cin;
        r.cout = cout;
        if (cfg_.use_norm) {
            r.n1 = make_norm(name + ".n1", cin);
            r.n2 = make_norm(name + ".n2", cout);
        }
        r.c1 = make_conv(name + ".c1", cin, cout, 3, len, rng);
        r.c2 = make_conv(name + ".c2", cout, cout, 3, len, rng);
        r.cond = make_dense(name + ".cond", cfg_.emb_dim, cout, rng);
        if (cin != cout) {
            r.has_skip = true;
            r.skip = make_conv(name + ".skip", cin, cout, 1, len, rng);
        }
        return r;
    }

    Var res_forward(const Res& r, const Var& x, const Var& cond) {
        Var h = cfg_.use_norm ? op::group_norm(x, cfg_.groups, r.n1.gamma, r.n1.beta) : x;
        h = op::conv1d(op::silu(h), r.c1.w, r.c1.b, 1, 1);
        h = op::add_channel(h, r.cond(cond));
        if (cfg_.use_norm) h = op::group_norm(h, cfg_.groups, r.n2.gamma, r.n2.beta);
        h = op::conv1d(op::silu(h), r.c2.w, r.c2.b, 1, 1);
        Var sk = r.has_skip ? op::conv1d(x, r.skip.w, r.skip.b, 1, 0) : x;
        return op::add(sk, h);
    }

    struct Attn {
        int64_t heads = 0;
        Norm norm;
        Dense q, k, v, o;
    };

    Attn make_attn(const std::string& name, int64_t c, int64_t len, Rng& rng) {
        Attn a;
        a.heads = cfg_.heads;
        if (c % cfg_.heads != 0)
            throw ConfigError("cnn_unet: channels " + std::to_string(c) + " not divisible by heads");
        a.norm = make_norm(name + ".norm", c);
        a.q = make_dense(name + ".q", c, c, rng);
        a.k = make_dense(name + ".k", c, c, rng);
        a.v = make_dense(name + ".v", c, c, rng);
        a.o = make_dense(name + ".o", c, c, rng);
        flops_ += 4 * len * len * c;
        return a;
    }

    Var attn_forward(const Attn& a, const Var& x) {
        const Shape& s = x.shape();
        int64_t b = s[0], c = s[1], l = s[2];
        Var tkn = op::swap_last2(x);  // (b, l, c)
        Var nrm = op::layer_norm(tkn, a.norm.gamma, a.norm.beta);
        Var flat = op::reshape(nrm, {b * l, c});
        Var q = op::reshape(a.q(flat), {b, l, c});
        Var k = op::reshape(a.k(flat), {b, l, c});
        Var v = op::reshape(a.v(flat), {b, l, c});
        Var att = op::multi_head_attention(q, k, v, a.heads);
        Var out = op::reshape(a.o(op::reshape(att, {b * l, c})), {b, l, c});
        return op::add(x, op::swap_last2(out));
    }

    CnnUnetConfig cfg_;
    CondEmbed cond_;
    Conv stem_, head_;
    Norm head_norm_;
    std::vector<Res> down_res_, up_res_;
    std::vector<Conv> down_conv_, up_conv_;
    std::vector<Attn> down_attn_, up_attn_;
    Res mid1_, mid2_;
};

/*---------------------------------- transformer --------------------------------*/

struct TransformerConfig {
    int64_t g_pad = 0;
    int64_t feature = 64;
    int64_t layers = 4;
    int64_t heads = 4;
    int64_t ff_mult = 4;
    int64_t n_classes = 2;
    int64_t t_max = 1000;
    uint64_t init_seed = 1;
};

// full-scale variant: 12 encoder layers, feature size 384
inline TransformerConfig transformer_large_config() {
    TransformerConfig cfg;
    cfg.feature = 384;
    cfg.layers = 12;
    cfg.heads = 6;
    return cfg;
}

class TransformerPredictor : public NoisePredictor {
public:
    explicit TransformerPredictor(const TransformerConfig& cfg)
        : NoisePredictor(cfg.g_pad, cfg.n_classes, cfg.t_max), cfg_(cfg) {
        if (cfg.feature % cfg.heads != 0)
            throw ConfigError("transformer: feature " + std::to_string(cfg.feature) +
                              " not divisible by heads " + std::to_string(cfg.heads));
        Rng rng = make_stream(cfg.init_seed, "init.transformer");
        int64_t f = cfg.feature;
        int64_t g = cfg.g_pad;

        // projection layers are unique to every gene position
        in_w_ = reg("in_proj.w", glorot({g, 8, f}, 8, f, rng));
        in_b_ = reg("in_proj.b", Tensor({g, f}));
        out_w_ = reg("out_proj.w", glorot({g, f, 8}, f, 8, rng));
        out_b_ = reg("out_proj.b", Tensor({g, 8}));
        flops_ += 2 * g * 8 * f * 2;
        pos_ = reg("pos_emb", glorot({g + 2, f}, g + 2, f, rng));

        // conditioning enters as two extra tokens: time and label
        t_tok1_ = make_dense("t_token.1", f, f, rng);
        t_tok2_ = make_dense("t_token.2", f, f, rng);
        y_tok_ = reg("y_token", glorot({cfg.n_classes + 1, f}, cfg.n_classes + 1, f, rng));

        int64_t len = g + 2;
        for (int64_t i = 0; i < cfg.layers; ++i) {
            std::string p = "layer" + std::to_string(i);
            Layer lay;
            lay.ln1 = make_norm(p + ".ln1", f);
            lay.q = make_dense(p + ".q", f, f, rng);
            lay.k = make_dense(p + ".k", f, f, rng);
            lay.v = make_dense(p + ".v", f, f, rng);
            lay.o = make_dense(p + ".o", f, f, rng);
            lay.ln2 = make_norm(p + ".ln2", f);
            lay.ff1 = make_dense(p + ".ff1", f, cfg.ff_mult * f, rng);
            lay.ff2 = make_dense(p + ".ff2", cfg.ff_mult * f, f, rng);
            layers_.push_back(lay);
            flops_ += 4 * len * len * f;
        }
        final_norm_ = make_norm("final_norm", f);
    }

    Var forward(const Var& x, const std::vector<int64_t>& t,
                const std::vector<int64_t>& y) override {
        check_batch(x, t, y);
        int64_t b = x.shape()[0];
        int64_t f = cfg_.feature, g = g_pad_;

        Var tokens = op::position_wise_linear(x, in_w_, op::reshape(in_b_, {g * f}));
        Var t_feats = Var::constant(sinusoidal_features(t, t_max_, f));
        Var t_tok = op::reshape(t_tok2_(op::silu(t_tok1_(t_feats))), {b, 1, f});
        Var y_tok = op::reshape(op::embedding_lookup(y_tok_, y), {b, 1, f});
        Var h = op::concat<double>({t_tok, y_tok, tokens}, 1);  // (b, g+2, f)
        h = op::add_batch_broadcast(h, pos_);

        int64_t len = g + 2;
        for (const Layer& lay : layers_) {
            Var n1 = op::layer_norm(h, lay.ln1.gamma, lay.ln1.beta);
            Var flat = op::reshape(n1, {b * len, f});
            Var q = op::reshape(lay.q(flat), {b, len, f});
            Var k = op::reshape(lay.k(flat), {b, len, f});
            Var v = op::reshape(lay.v(flat), {b, len, f});
            Var att = op::multi_head_attention(q, k, v, cfg_.heads);
            h = op::add(h, op::reshape(lay.o(op::reshape(att, {b * len, f})), {b, len, f}));
            Var n2 = op::layer_norm(h, lay.ln2.gamma, lay.ln2.beta);
            Var ff = lay.ff2(op::silu(lay.ff1(op::reshape(n2, {b * len, f}))));
            h = op::add(h, op::reshape(ff, {b, len, f}));
        }
        h = op::layer_norm(h, final_norm_.gamma, final_norm_.beta);
        Var body = op::slice(h, 1, 2, len);  // strip t/y tokens
        Var out = op::position_wise_linear(body, out_w_, op::reshape(out_b_, {g * 8}));
        return masked(out);
    }

    const char* variant() const override { return "transformer"; }

    nlohmann::json arch_manifest() const override {
        return {{"variant", variant()}, {"g_pad", cfg_.g_pad},     {"feature", cfg_.feature},
                {"layers", cfg_.layers}, {"heads", cfg_.heads},     {"ff_mult", cfg_.ff_mult},
                {"n_classes", cfg_.n_classes}, {"t_max", cfg_.t_max}, {"init_seed", cfg_.init_seed}};
    }

    // test access: zeroing these forces E == 0
    Var out_proj_weight() { return out_w_; }
    Var out_proj_bias() { return out_b_; }

private:
    struct Layer {
        Norm ln1, ln2;
        Dense q, k, v, o, ff1, ff2;
    };

    TransformerConfig cfg_;
    Var in_w_, in_b_, out_w_, out_b_, pos_, y_tok_;
    Dense t_tok1_, t_tok2_;
    std::vector<Layer> layers_;
    Norm final_norm_;
};

/*---------------------------------- gated combo --------------------------------*/

// lambda(t) = sigmoid(mlp2(silu(mlp1(t / t_max)))); the output layer starts at
// zero so an untrained gate mixes both branches equally (lambda = 0.5).
struct GateNet {
    int64_t hidden = 16;
    int64_t t_max = 1000;
    Var w1, b1, w2, b2;

    Var lambda(const std::vector<int64_t>& t) const {
        auto b = static_cast<int64_t>(t.size());
        Tensor in({b, 1});
        for (int64_t i = 0; i < b; ++i)
            in[i] = static_cast<double>(t[static_cast<size_t>(i)]) / static_cast<double>(t_max);
        Var h = op::silu(op::linear(Var::constant(in), w1, b1));
        return op::sigmoid(op::linear(h, w2, b2));  // (b, 1)
    }
};

struct GatedComboConfig {
    MlpUnetConfig mlp;
    CnnUnetConfig cnn;
    int64_t gate_hidden = 16;
    uint64_t init_seed = 1;
};

class GatedCombo : public NoisePredictor {
public:
    explicit GatedCombo(const GatedComboConfig& cfg)
        : NoisePredictor(cfg.mlp.g_pad, cfg.mlp.n_classes, cfg.mlp.t_max), cfg_(cfg) {
        if (cfg.mlp.g_pad != cfg.cnn.g_pad || cfg.mlp.n_classes != cfg.cnn.n_classes ||
            cfg.mlp.t_max != cfg.cnn.t_max)
            throw ConfigError("gated_combo: sub-model shapes disagree");
        mlp_ = std::make_unique<MlpUnet>(cfg.mlp);
        cnn_ = std::make_unique<CnnUnet>(cfg.cnn);
        Rng rng = make_stream(cfg.init_seed, "init.gate");
        gate_.hidden = cfg.gate_hidden;
        gate_.t_max = cfg.mlp.t_max;
        gate_.w1 = Var::param(glorot({1, cfg.gate_hidden}, 1, cfg.gate_hidden, rng));
        gate_.b1 = Var::param(Tensor({cfg.gate_hidden}));
        gate_.w2 = Var::param(Tensor({cfg.gate_hidden, 1}));  // zero-init: lambda starts at 0.5
        gate_.b2 = Var::param(Tensor({1}));

        // joint parameter list: both sub-models and the gate train together
        for (auto& p : mlp_->parameters()) params_.push_back({"mlp." + p.name, p.var});
        for (auto& p : cnn_->parameters()) params_.push_back({"cnn." + p.name, p.var});
        params_.push_back({"gate.w1", gate_.w1});
        params_.push_back({"gate.b1", gate_.b1});
        params_.push_back({"gate.w2", gate_.w2});
        params_.push_back({"gate.b2", gate_.b2});
        flops_ = mlp_->flops_per_sample() + cnn_->flops_per_sample() + 4 * cfg.gate_hidden;
    }

    // (MLP + CNN)(x,t,y) = (1 - lambda(t)) * MLP(x,t,y) + lambda(t) * CNN(x,t,y)
    Var forward(const Var& x, const std::vector<int64_t>& t,
                const std::vector<int64_t>& y) override {
        check_batch(x, t, y);
        Var lam = gate_.lambda(t);
        Var mlp_out = mlp_->forward(x, t, y);
        Var cnn_out = cnn_->forward(x, t, y);
        Var out = op::add(op::scale_per_sample(mlp_out, op::affine(lam, -1.0, 1.0)),
                          op::scale_per_sample(cnn_out, lam));
        return masked(out);
    }

    const char* variant() const override { return "gated_combo"; }

    nlohmann::json arch_manifest() const override {
        return {{"variant", variant()},
                {"mlp", mlp_->arch_manifest()},
                {"cnn", cnn_->arch_manifest()},
                {"gate_hidden", cfg_.gate_hidden},
                {"init_seed", cfg_.init_seed}};
    }

    void set_clamp_mask_all(Tensor mask) {
        mlp_->set_clamp_mask(mask);
        cnn_->set_clamp_mask(mask);
        set_clamp_mask(std::move(mask));
    }

    std::vector<double> lambda_curve(const std::vector<int64_t>& t_grid) const {
        NoGradGuard ng;
        Var lam = gate_.lambda(t_grid);
        std::vector<double> out(lam.value().vec());
        return out;
    }

    MlpUnet& mlp() { return *mlp_; }
    CnnUnet& cnn() { return *cnn_; }
    GateNet& gate() { return gate_; }

private:
    GatedComboConfig cfg_;
    std::unique_ptr<MlpUnet> mlp_;
    std::unique_ptr<CnnUnet> cnn_;
    GateNet gate_;
};

// reporting helper for the lambda-vs-t curve; only meaningful for the combo
inline std::vector<double> lambda_curve(NoisePredictor& model, const std::vector<int64_t>& t_grid) {
    auto* combo = dynamic_cast<GatedCombo*>(&model);
    if (!combo)
        throw UsageError(std::string("lambda_curve: model variant '") + model.variant() +
                         "' has no gate");
    return combo->lambda_curve(t_grid);
}

/*---------------------------------- accounting ---------------------------------*/

inline int64_t count_params(const NoisePredictor& model) { return total_params(model.parameters()); }

inline int64_t count_flops(const NoisePredictor& model, int64_t batch = 1) {
    return model.flops_per_sample() * batch;
}

/*------------------------------------ presets -----------------------------------*/

// Desk presets take their downsampling depth from the embedding that
// produced g_pad (the padding guarantees divisibility for exactly that
// depth); the large presets keep their fixed block structure.
inline std::unique_ptr<NoisePredictor> build_preset(const std::string& name, int64_t g_pad,
                                                    int64_t n_classes, int64_t t_max,
                                                    uint64_t init_seed, int64_t depth = 4) {
    auto desk_mults = [&]() {
        std::vector<int64_t> base{1, 1, 2, 2};
        std::vector<int64_t> mults;
        for (int64_t i = 0; i < depth; ++i)
            mults.push_back(i < static_cast<int64_t>(base.size()) ? base[static_cast<size_t>(i)]
                                                                  : base.back());
        return mults;
    };
    auto desk_attention = [&]() {
        std::set<int64_t> attn;
        if (depth >= 1) attn.insert(depth - 1);
        if (depth >= 2) attn.insert(depth - 2);
        return attn;
    };
    if (name == "mlp_unet_desk") {
        MlpUnetConfig cfg;
        cfg.g_pad = g_pad;
        cfg.depth = depth;
        cfg.n_classes = n_classes;
        cfg.t_max = t_max;
        cfg.init_seed = init_seed;
        return std::make_unique<MlpUnet>(cfg);
    }
    if (name == "cnn_unet_desk") {
        CnnUnetConfig cfg;
        cfg.g_pad = g_pad;
        cfg.channel_mults = desk_mults();
        cfg.attention_blocks = desk_attention();
        cfg.n_classes = n_classes;
        cfg.t_max = t_max;
        cfg.init_seed = init_seed;
        return std::make_unique<CnnUnet>(cfg);
    }
    if (name == "cnn_unet_large") {
        CnnUnetConfig cfg = cnn_unet_large_config();
        cfg.g_pad = g_pad;
        cfg.n_classes = n_classes;
        cfg.t_max = t_max;
        cfg.init_seed = init_seed;
        return std::make_unique<CnnUnet>(cfg);
    }
    if (name == "transformer_desk") {
        TransformerConfig cfg;
        cfg.g_pad = g_pad;
        cfg.n_classes = n_classes;
        cfg.t_max = t_max;
        cfg.init_seed = init_seed;
        return std::make_unique<TransformerPredictor>(cfg);
    }
    if (name == "transformer_large") {
        TransformerConfig cfg = transformer_large_config();
        cfg.g_pad = g_pad;
        cfg.n_classes = n_classes;
        cfg.t_max = t_max;
        cfg.init_seed = init_seed;
        return std::make_unique<TransformerPredictor>(cfg);
    }
    if (name == "gated_desk") {
        GatedComboConfig cfg;
        cfg.mlp.g_pad = cfg.cnn.g_pad = g_pad;
        cfg.mlp.depth = depth;
        cfg.cnn.channel_mults = desk_mults();
        cfg.cnn.attention_blocks = desk_attention();
        cfg.mlp.n_classes = cfg.cnn.n_classes = n_classes;
        cfg.mlp.t_max = cfg.cnn.t_max = t_max;
        cfg.mlp.init_seed = cfg.cnn.init_seed = cfg.init_seed = init_seed;
        return std::make_unique<GatedCombo>(cfg);
    }
    throw ConfigError("unknown backbone preset '" + name + "'");
}

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"mlp_unet_desk",   "cnn_unet_desk",
                                                   "cnn_unet_large",  "transformer_desk",
                                                   "transformer_large", "gated_desk"};
    return names;
}

/*---------------------------------- checkpoints ---------------------------------*/

inline std::unique_ptr<NoisePredictor> build_from_manifest(const nlohmann::json& m) {
    std::string variant = m.at("variant");
    if (variant == "mlp_unet") {
        MlpUnetConfig cfg;
        cfg.g_pad = m.at("g_pad");
        cfg.depth = m.at("depth");
        cfg.base_width = m.at("base_width");
        cfg.emb_dim = m.at("emb_dim");
        cfg.n_classes = m.at("n_classes");
        cfg.t_max = m.at("t_max");
        cfg.init_seed = m.at("init_seed");
        return std::make_unique<MlpUnet>(cfg);
    }
    if (variant == "cnn_unet") {
        CnnUnetConfig cfg;
        cfg.g_pad = m.at("g_pad");
        cfg.base_filters = m.at("base_filters");
        cfg.channel_mults = m.at("channel_mults").get<std::vector<int64_t>>();
        auto attn = m.at("attention_blocks").get<std::vector<int64_t>>();
        cfg.attention_blocks = std::set<int64_t>(attn.begin(), attn.end());
        cfg.heads = m.at("heads");
        cfg.groups = m.at("groups");
        cfg.emb_dim = m.at("emb_dim");
        cfg.n_classes = m.at("n_classes");
        cfg.t_max = m.at("t_max");
        cfg.use_norm = m.at("use_norm");
        cfg.init_seed = m.at("init_seed");
        return std::make_unique<CnnUnet>(cfg);
    }
    if (variant == "transformer") {
        TransformerConfig cfg;
        cfg.g_pad = m.at("g_pad");
        cfg.feature = m.at("feature");
        cfg.layers = m.at("layers");
        cfg.heads = m.at("heads");
        cfg.ff_mult = m.at("ff_mult");
        cfg.n_classes = m.at("n_classes");
        cfg.t_max = m.at("t_max");
        cfg.init_seed = m.at("init_seed");
        return std::make_unique<TransformerPredictor>(cfg);
    }
    if (variant == "gated_combo") {
        GatedComboConfig cfg;
        cfg.mlp.g_pad = m.at("mlp").at("g_pad");
        cfg.mlp.depth = m.at("mlp").at("depth");
        cfg.mlp.base_width = m.at("mlp").at("base_width");
        cfg.mlp.emb_dim = m.at("mlp").at("emb_dim");
        cfg.mlp.n_classes = m.at("mlp").at("n_classes");
        cfg.mlp.t_max = m.at("mlp").at("t_max");
        cfg.mlp.init_seed = m.at("mlp").at("init_seed");
        cfg.cnn.g_pad = m.at("cnn").at("g_pad");
        cfg.cnn.base_filters = m.at("cnn").at("base_filters");
        cfg.cnn.channel_mults = m.at("cnn").at("channel_mults").get<std::vector<int64_t>>();
        auto attn = m.at("cnn").at("attention_blocks").get<std::vector<int64_t>>();
        cfg.cnn.attention_blocks = std::set<int64_t>(attn.begin(), attn.end());
        cfg.cnn.heads = m.at("cnn").at("heads");
        cfg.cnn.groups = m.at("cnn").at("groups");
        cfg.cnn.emb_dim = m.at("cnn").at("emb_dim");
        cfg.cnn.n_classes = m.at("cnn").at("n_classes");
        cfg.cnn.t_max = m.at("cnn").at("t_max");
        cfg.cnn.use_norm = m.at("cnn").at("use_norm");
        cfg.cnn.init_seed = m.at("cnn").at("init_seed");
        cfg.gate_hidden = m.at("gate_hidden");
        cfg.init_seed = m.at("init_seed");
        return std::make_unique<GatedCombo>(cfg);
    }
    throw ParseError("unknown model variant '" + variant + "' in checkpoint");
}

inline void save_model(const std::string& path, const NoisePredictor& model,
                       const std::string& config_hash = "") {
    nlohmann::json extra;
    extra["arch"] = model.arch_manifest();
    if (!config_hash.empty()) extra["config_hash"] = config_hash;
    if (model.clamp_mask().numel() != 0) extra["has_mask"] = true;
    BlobWriter w("#params v1", extra);
    for (const auto& p : model.parameters()) w.add(p.name, p.var.value());
    if (model.clamp_mask().numel() != 0) w.add("__clamp_mask__", model.clamp_mask());
    w.write(path);
}

inline std::unique_ptr<NoisePredictor> load_model(const std::string& path,
                                                  std::string* config_hash = nullptr) {
    Blob blob = read_blob(path, "#params v1");
    auto model = build_from_manifest(blob.extra.at("arch"));
    if (config_hash) *config_hash = blob.extra.value("config_hash", "");
    for (auto& p : model->parameters()) {
        const Tensor& t = blob.get(p.name);
        if (t.shape() != p.var.shape())
            throw ParseError(path + ": parameter '" + p.name + "' has shape " +
                             shape_str(t.shape()) + ", expected " + shape_str(p.var.shape()));
        p.var.value_mut() = t;
    }
    if (blob.extra.value("has_mask", false)) {
        if (auto* combo = dynamic_cast<GatedCombo*>(model.get()))
            combo->set_clamp_mask_all(blob.get("__clamp_mask__"));
        else
            model->set_clamp_mask(blob.get("__clamp_mask__"));
    }
    return model;
}

}  // namespace nn
}  // namespace genodiff
