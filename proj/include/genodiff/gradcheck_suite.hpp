#pragma once

#include <functional>
#include <string>
#include <vector>

#include "backbones.hpp"
#include "gradcheck.hpp"
#include "nn_ops.hpp"

namespace genodiff {

// Canonical finite-difference coverage: one case per autodiff primitive plus
// one composite case per backbone variant. Shared by the CLI gradcheck
// command, the unit tests, and the acceptance suite.

struct GradSuiteCase {
    std::string name;
    std::function<Var(const std::vector<Var>&)> f;
    std::function<std::vector<Tensor>(uint64_t)> make;
};

struct GradSuiteRow {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;
    bool pass = false;
};

namespace gradsuite_detail {

inline Tensor randn(Shape s, uint64_t seed) {
    Rng r(splitmix64(seed));
    return Tensor::randn(std::move(s), r);
}

inline Tensor randn_nudged(Shape s, uint64_t seed) {
    Tensor t = randn(std::move(s), seed);
    for (int64_t i = 0; i < t.numel(); ++i)
        if (std::abs(t[i]) < 5e-3) t[i] = t[i] < 0 ? -5e-3 : 5e-3;
    return t;
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteCase> primitive_grad_cases() {
    namespace op = genodiff::ops;
    using gradsuite_detail::randn;
    using gradsuite_detail::randn_nudged;
    std::vector<GradSuiteCase> cases;
    auto one = [&](const char* name, std::function<Var(const std::vector<Var>&)> f,
                   std::function<std::vector<Tensor>(uint64_t)> make) {
        cases.push_back({name, std::move(f), std::move(make)});
    };

    one("add", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::add(v[0], v[1]), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 4}, s), randn({3, 4}, s + 100)}; });
    one("mul", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::sub(v[0], v[1]), v[1])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 5}, s), randn({2, 5}, s + 100)}; });
    one("affine", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::affine(v[0], 1.7, -0.3), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({7}, s)}; });
    one("sigmoid", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::sigmoid(v[0]), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 3}, s)}; });
    one("silu", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::silu(v[0]), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 3}, s)}; });
    one("relu", [](const std::vector<Var>& v) { return op::sum_all(op::mul(op::relu(v[0]), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn_nudged({4, 4}, s)}; });
    one("mul_const+reshape",
        [](const std::vector<Var>& v) {
            Tensor m({12});
            for (int64_t i = 0; i < 12; ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
            return op::sum_all(op::mul_const(op::reshape(v[0], {12}), m));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 4}, s)}; });
    one("concat+slice",
        [](const std::vector<Var>& v) {
            Var c = op::concat<double>({v[0], v[1]}, 1);
            return op::sum_all(op::mul(op::slice(c, 1, 1, 5), op::slice(c, 1, 2, 6)));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3}, s), randn({2, 4}, s + 100)}; });
    one("softmax+mean",
        [](const std::vector<Var>& v) { return op::mean_all(op::mul(op::softmax(v[0]), v[0])); },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 5}, s)}; });
    one("mse_masked",
        [](const std::vector<Var>& v) {
            Tensor target = randn({3, 4}, 999);
            Tensor mask({3, 4});
            for (int64_t i = 0; i < 12; ++i) mask[i] = (i % 4 == 2) ? 0.0 : 1.0;
            return op::mse_masked(v[0], target, mask);
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 4}, s)}; });
    one("cross_entropy",
        [](const std::vector<Var>& v) { return op::cross_entropy_logits(v[0], {0, 2, 1}); },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 3}, s)}; });
    one("scale_per_sample",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::scale_per_sample(v[0], v[1]), v[0]));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 4}, s), randn({3}, s + 100)}; });
    one("matmul",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul_const(op::matmul(v[0], v[1]), randn({3, 5}, 777)));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 4}, s), randn({4, 5}, s + 100)}; });
    one("linear",
        [](const std::vector<Var>& v) { return op::sum_all(op::silu(op::linear(v[0], v[1], v[2]))); },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({3, 4}, s), randn({4, 2}, s + 100), randn({2}, s + 200)};
        });
    one("transpose2d",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::transpose2d(v[0]), op::transpose2d(v[0])));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 5}, s)}; });
    one("swap_last2",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::swap_last2(v[0]), op::swap_last2(v[0])));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3, 4}, s)}; });
    one("conv1d_s1",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::silu(op::conv1d(v[0], v[1], v[2], 1, 1)));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({2, 3, 8}, s), randn({4, 3, 3}, s + 100), randn({4}, s + 200)};
        });
    one("conv1d_s2",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::silu(op::conv1d(v[0], v[1], v[2], 2, 1)));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({2, 2, 8}, s), randn({3, 2, 3}, s + 100), randn({3}, s + 200)};
        });
    one("upsample_nearest",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::upsample_nearest1d(v[0], 2), op::upsample_nearest1d(v[0], 2)));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3, 4}, s)}; });
    one("avg_pool",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::avg_pool1d(v[0], 2, 2), op::avg_pool1d(v[0], 2, 2)));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3, 8}, s)}; });
    one("embedding_lookup",
        [](const std::vector<Var>& v) {
            Var e = op::embedding_lookup(v[0], {1, 0, 3, 1});
            return op::sum_all(op::mul(e, e));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({5, 3}, s)}; });
    one("position_wise_linear",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::silu(op::position_wise_linear(v[0], v[1], v[2])));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({2, 3, 4}, s), randn({3, 4, 5}, s + 100),
                                       randn({3, 5}, s + 200)};
        });
    one("add_channel",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::add_channel(v[0], v[1]), v[0]));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3, 4}, s), randn({2, 3}, s + 100)}; });
    one("add_batch_broadcast",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::add_batch_broadcast(v[0], v[1]), v[0]));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({2, 3, 4}, s), randn({3, 4}, s + 100)}; });
    one("mul_const_broadcast",
        [](const std::vector<Var>& v) {
            Tensor m({12});
            for (int64_t i = 0; i < 12; ++i) m[i] = (i % 2) ? 1.0 : 0.5;
            return op::sum_all(op::mul(op::mul_const_broadcast(v[0], m), v[0]));
        },
        [](uint64_t s) { return std::vector<Tensor>{randn({3, 12}, s)}; });
    one("layer_norm",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::layer_norm(v[0], v[1], v[2]), v[0]));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({3, 6}, s), randn({6}, s + 100), randn({6}, s + 200)};
        });
    one("group_norm",
        [](const std::vector<Var>& v) {
            return op::sum_all(op::mul(op::group_norm(v[0], 2, v[1], v[2]), v[0]));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({2, 4, 5}, s), randn({4}, s + 100), randn({4}, s + 200)};
        });
    one("multi_head_attention",
        [](const std::vector<Var>& v) {
            return op::sum_all(
                op::mul_const(op::multi_head_attention(v[0], v[1], v[2], 2), randn({2, 4, 6}, 888)));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{randn({2, 4, 6}, s), randn({2, 4, 6}, s + 100),
                                       randn({2, 4, 6}, s + 200)};
        });
    return cases;
}

inline std::vector<GradSuiteRow> run_primitive_grad_suite(int64_t n_seeds = 5, double tol = 1e-4,
                                                          int64_t max_coords = 200) {
    std::vector<GradSuiteRow> rows;
    for (const auto& c : primitive_grad_cases()) {
        GradSuiteRow row;
        row.name = c.name;
        for (uint64_t seed = 1; seed <= static_cast<uint64_t>(n_seeds); ++seed) {
            auto res = grad_check(c.f, c.make(seed), 1e-5, max_coords, seed);
            row.max_rel_err = std::max(row.max_rel_err, res.max_rel_err);
            row.checked += res.checked;
        }
        row.pass = row.max_rel_err < tol;
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<GradSuiteRow> run_backbone_grad_suite(int64_t n_seeds = 5, double tol = 1e-4,
                                                         int64_t max_coords = 25) {
    namespace op = genodiff::ops;
    using gradsuite_detail::randn;
    std::vector<GradSuiteRow> rows;

    auto run_variant = [&](const char* name, auto make_model) {
        GradSuiteRow row;
        row.name = name;
        for (uint64_t seed = 1; seed <= static_cast<uint64_t>(n_seeds); ++seed) {
            auto model = make_model(seed);
            Tensor x = randn({2, 8, 8}, seed * 31 + 1);
            Tensor target = randn({2, 8, 8}, seed * 31 + 2);
            Tensor mask = Tensor::full({2, 8, 8}, 1.0);
            std::vector<int64_t> t{3, 40};
            std::vector<int64_t> y{1, 0};
            auto f = [&]() {
                Var out = model->forward(Var::constant(x), t, y);
                return op::mse_masked(out, target, mask);
            };
            auto res = grad_check_inplace(f, model->param_vars(), 1e-5, max_coords, seed);
            row.max_rel_err = std::max(row.max_rel_err, res.max_rel_err);
            row.checked += res.checked;
        }
        row.pass = row.max_rel_err < tol;
        rows.push_back(row);
    };

    run_variant("mlp_unet", [](uint64_t seed) {
        nn::MlpUnetConfig cfg;
        cfg.g_pad = 8;
        cfg.depth = 2;
        cfg.base_width = 16;
        cfg.emb_dim = 8;
        cfg.n_classes = 2;
        cfg.t_max = 50;
        cfg.init_seed = seed;
        return std::make_unique<nn::MlpUnet>(cfg);
    });
    run_variant("cnn_unet", [](uint64_t seed) {
        nn::CnnUnetConfig cfg;
        cfg.g_pad = 8;
        cfg.base_filters = 8;
        cfg.channel_mults = {1, 2};
        cfg.attention_blocks = {1};
        cfg.heads = 2;
        cfg.groups = 4;
        cfg.emb_dim = 8;
        cfg.n_classes = 2;
        cfg.t_max = 50;
        cfg.init_seed = seed;
        return std::make_unique<nn::CnnUnet>(cfg);
    });
    run_variant("transformer", [](uint64_t seed) {
        nn::TransformerConfig cfg;
        cfg.g_pad = 8;
        cfg.feature = 16;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.ff_mult = 2;
        cfg.n_classes = 2;
        cfg.t_max = 50;
        cfg.init_seed = seed;
        return std::make_unique<nn::TransformerPredictor>(cfg);
    });
    run_variant("gated_combo", [](uint64_t seed) {
        nn::GatedComboConfig cfg;
        cfg.mlp.g_pad = cfg.cnn.g_pad = 8;
        cfg.mlp.depth = 2;
        cfg.mlp.base_width = 16;
        cfg.mlp.emb_dim = 8;
        cfg.cnn.base_filters = 8;
        cfg.cnn.channel_mults = {1, 2};
        cfg.cnn.attention_blocks = {};
        cfg.cnn.heads = 2;
        cfg.cnn.groups = 4;
        cfg.cnn.emb_dim = 8;
        cfg.mlp.n_classes = cfg.cnn.n_classes = 2;
        cfg.mlp.t_max = cfg.cnn.t_max = 50;
        cfg.mlp.init_seed = cfg.cnn.init_seed = cfg.init_seed = seed;
        // the gate's output layer starts at zero; nudge it so its gradient
        // path is exercised away from the symmetric point
        auto model = std::make_unique<nn::GatedCombo>(cfg);
        Rng r(seed);
        model->gate().w2.value_mut() = Tensor::randn({16, 1}, r);
        return model;
    });
    return rows;
}

}  // namespace genodiff
