#include <cmath>

#include "doctest.h"
#include "genodiff/classifier.hpp"
#include "genodiff/embedding.hpp"
#include "genodiff/evaluate.hpp"

using namespace genodiff;
using namespace genodiff::nn;
using namespace genodiff::sim;

namespace {

// two well-separated gaussian blobs, shape (n, g, 8)
std::pair<Tensor, std::vector<int64_t>> blobs(int64_t n, int64_t g, double gap, uint64_t seed) {
    Rng r(splitmix64(seed));
    Tensor x({n, g, 8});
    std::vector<int64_t> y(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        y[static_cast<size_t>(i)] = i % 2;
        double mu = (i % 2) ? gap / 2 : -gap / 2;
        for (int64_t j = 0; j < g * 8; ++j) x[i * g * 8 + j] = mu + r.normal();
    }
    return {x, y};
}

}  // namespace

TEST_CASE("linearly separable data trains to better than 99%") {
    auto [x, y] = blobs(200, 4, 6.0, 1);
    auto [tx, ty] = blobs(100, 4, 6.0, 2);
    ClassifierSpec spec;
    spec.hidden = 16;
    spec.steps = 200;
    spec.seed = 5;
    auto trained = train_classifier(x, y, tx, ty, spec, 2);
    CHECK(trained.val_accuracy > 0.99);
}

TEST_CASE("shuffled labels score near chance on balanced classes") {
    auto [x, y] = blobs(200, 4, 6.0, 3);
    Rng r(7);
    r.shuffle(y.begin(), y.end());
    r.shuffle(y.begin(), y.end());
    auto [tx, ty] = blobs(200, 4, 6.0, 4);
    Rng r2(8);
    r2.shuffle(ty.begin(), ty.end());
    ClassifierSpec spec;
    spec.hidden = 16;
    spec.steps = 150;
    spec.seed = 5;
    auto trained = train_classifier(x, y, tx, ty, spec, 2);
    CHECK(std::abs(trained.val_accuracy - 0.5) < 0.1);
}

TEST_CASE("single-class training set is rejected") {
    auto [x, y] = blobs(50, 4, 6.0, 5);
    std::fill(y.begin(), y.end(), 0);
    ClassifierSpec spec;
    CHECK_THROWS_AS(train_classifier(x, y, x, y, spec, 2), ConfigError);
}

TEST_CASE("classifier training is deterministic under the seed") {
    auto [x, y] = blobs(120, 4, 2.0, 6);
    auto [tx, ty] = blobs(60, 4, 2.0, 7);
    ClassifierSpec spec;
    spec.hidden = 16;
    spec.steps = 100;
    spec.seed = 9;
    auto a = train_classifier(x, y, tx, ty, spec, 2);
    auto b = train_classifier(x, y, tx, ty, spec, 2);
    CHECK(a.val_accuracy == b.val_accuracy);
    Tensor la = a.model->logits(tx);
    Tensor lb = b.model->logits(tx);
    for (int64_t i = 0; i < la.numel(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("parameter cap rejects oversized configs") {
    ClassifierSpec spec;
    spec.hidden = 4096;
    spec.param_cap = 100000;
    CHECK_THROWS_AS(Classifier(spec, {300, 8}, 2), ConfigError);
}

TEST_CASE("all three architectures learn the blob task") {
    auto [x, y] = blobs(160, 8, 4.0, 10);
    auto [tx, ty] = blobs(80, 8, 4.0, 11);
    for (ClassifierArch arch :
         {ClassifierArch::MLP, ClassifierArch::CNN1d, ClassifierArch::Transformer}) {
        ClassifierSpec spec;
        spec.arch = arch;
        spec.hidden = 16;
        spec.steps = 150;
        spec.seed = 12;
        auto trained = train_classifier(x, y, tx, ty, spec, 2);
        INFO(arch_name(arch) << " accuracy " << trained.val_accuracy);
        CHECK(trained.val_accuracy > 0.9);
    }
}

TEST_CASE("raw flat input works for mlp and cnn, not transformer") {
    Rng r(13);
    Tensor x({60, 20});
    std::vector<int64_t> y(60);
    for (int64_t i = 0; i < 60; ++i) {
        y[static_cast<size_t>(i)] = i % 2;
        for (int64_t j = 0; j < 20; ++j) x.at(i, j) = (i % 2 ? 3.0 : -3.0) + r.normal();
    }
    for (ClassifierArch arch : {ClassifierArch::MLP, ClassifierArch::CNN1d}) {
        ClassifierSpec spec;
        spec.arch = arch;
        spec.hidden = 8;
        spec.steps = 120;
        spec.seed = 3;
        auto trained = train_classifier(x, y, x, y, spec, 2);
        CHECK(trained.val_accuracy > 0.95);
    }
    ClassifierSpec tf;
    tf.arch = ClassifierArch::Transformer;
    CHECK_THROWS_AS(train_classifier(x, y, x, y, tf, 2), ConfigError);
}

TEST_CASE("embedded 2-population cohort classifies above 0.9") {
    SimConfig cfg;
    cfg.n_samples = 400;
    cfg.n_genes = 60;
    cfg.snps_per_gene_min = 5;
    cfg.snps_per_gene_max = 9;
    cfg.n_populations = 2;
    cfg.fst = 0.3;
    cfg.ld_strength = 0.5;
    cfg.seed = 14;
    auto [m, gm] = simulate_cohort(cfg);
    auto parts = split_dataset(m, {0.7, 0.15, 0.15}, 15);
    embed::EmbeddingModel model = embed::fit_embedding(parts[0], gm, 0.95, 2);
    auto tr = embed::encode(model, parts[0]);
    auto te = embed::encode(model, parts[2]);
    ClassifierSpec spec;
    spec.hidden = 32;
    spec.steps = 250;
    spec.seed = 16;
    auto trained = train_classifier(tr.values, tr.labels, te.values, te.labels, spec, 2);
    INFO("accuracy " << trained.val_accuracy);
    CHECK(trained.val_accuracy > 0.9);
}

TEST_CASE("augmentation: degenerate full fraction gives equal accuracies") {
    auto [x, y] = blobs(80, 4, 2.0, 17);
    auto [sx, sy] = blobs(120, 4, 2.0, 18);
    auto [tx, ty] = blobs(60, 4, 2.0, 19);
    ClassifierSpec spec;
    spec.hidden = 8;
    spec.steps = 80;
    spec.seed = 20;
    auto rows = eval::augmentation_experiment(x, y, sx, sy, tx, ty, {1.0}, spec, 2);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n_syn == 0);
    CHECK(rows[0].acc_real_only == rows[0].acc_augmented);
}

TEST_CASE("augmentation: synthetic top-up closes the small-data gap") {
    // "synthetic" data drawn from the true distribution: the protocol must
    // show the gain that extra samples provide at small real fractions
    auto [x, y] = blobs(200, 4, 1.2, 21);
    auto [sx, sy] = blobs(400, 4, 1.2, 22);
    auto [tx, ty] = blobs(300, 4, 1.2, 23);
    ClassifierSpec spec;
    spec.hidden = 8;
    spec.steps = 150;
    spec.seed = 24;
    auto rows = eval::augmentation_experiment(x, y, sx, sy, tx, ty, {0.05, 1.0}, spec, 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].n_real == 10);
    CHECK(rows[0].n_syn == 190);
    CHECK(rows[0].acc_augmented > rows[0].acc_real_only);
}

TEST_CASE("augmentation: near-empty fractions are skipped with a note") {
    auto [x, y] = blobs(40, 4, 2.0, 25);
    // make class 1 rare so a 5% pick drops it
    for (size_t i = 0; i < y.size(); ++i) y[i] = i < 38 ? 0 : 1;
    auto [sx, sy] = blobs(80, 4, 2.0, 26);
    ClassifierSpec spec;
    spec.seed = 27;
    auto rows = eval::augmentation_experiment(x, y, sx, sy, x, y, {0.05}, spec, 2);
    REQUIRE(rows.size() == 1);
    CHECK(!rows[0].note.empty());

    // synthetic pool smaller than real set violates the protocol
    auto [small_sx, small_sy] = blobs(10, 4, 2.0, 28);
    CHECK_THROWS_AS(eval::augmentation_experiment(x, y, small_sx, small_sy, x, y, {0.5}, spec, 2),
                    ConfigError);
}

TEST_CASE("augmentation: real-only accuracy is non-decreasing in f within noise") {
    std::vector<double> fractions{0.05, 0.1, 0.2, 0.5};
    std::vector<double> mean_acc(fractions.size(), 0.0);
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        auto [x, y] = blobs(200, 4, 1.0, 30 + static_cast<uint64_t>(s));
        auto [sx, sy] = blobs(220, 4, 1.0, 60 + static_cast<uint64_t>(s));
        auto [tx, ty] = blobs(200, 4, 1.0, 90 + static_cast<uint64_t>(s));
        ClassifierSpec spec;
        spec.hidden = 8;
        spec.steps = 120;
        spec.seed = static_cast<uint64_t>(s);
        auto rows = eval::augmentation_experiment(x, y, sx, sy, tx, ty, fractions, spec, 2);
        for (size_t k = 0; k < rows.size(); ++k) mean_acc[k] += rows[k].acc_real_only;
    }
    for (auto& a : mean_acc) a /= seeds;
    for (size_t k = 0; k + 1 < mean_acc.size(); ++k) CHECK(mean_acc[k + 1] >= mean_acc[k] - 0.05);
}

TEST_CASE("evaluate_synthetic produces a coherent report") {
    auto [x, y] = blobs(120, 4, 3.0, 40);
    auto [tx, ty] = blobs(80, 4, 3.0, 41);
    auto [sx, sy] = blobs(120, 4, 3.0, 42);
    eval::EvalOptions opts;
    opts.classifier.hidden = 8;
    opts.classifier.steps = 100;
    opts.classifier.seed = 43;
    opts.seed = 44;
    eval::EvalReport rep = eval::evaluate_synthetic(x, y, tx, ty, sx, sy, 2, opts);
    CHECK(rep.recovery == rep.a_s / rep.a_r);
    CHECK(rep.aa_test.aa_truth >= 0.0);
    CHECK(rep.aa_test.aa_truth <= 1.0);
    CHECK(rep.audit.duplicate_count == 0);
    auto j = rep.to_json();
    CHECK(j.contains("classifier"));
    CHECK(j.contains("nnaa"));
    CHECK(j.contains("privacy_loss"));
    // identical inputs give byte-identical serialization
    eval::EvalReport rep2 = eval::evaluate_synthetic(x, y, tx, ty, sx, sy, 2, opts);
    CHECK(rep.to_json().dump() == rep2.to_json().dump());
}
