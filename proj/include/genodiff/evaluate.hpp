#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "classifier.hpp"
#include "embedding.hpp"
#include "metrics.hpp"

namespace genodiff {
namespace eval {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// embedded samples flattened to (n, d) over mask-true positions only — the
// space the generator actually operates in
inline Tensor flatten_masked(const Tensor& values, const Tensor& mask) {
    if (values.rank() != 3) throw ShapeError("flatten_masked: values must be (n, g, c)");
    if (mask.numel() != values.dim(1) * values.dim(2))
        throw ShapeError("flatten_masked: mask shape mismatch");
    int64_t n = values.dim(0);
    int64_t inner = mask.numel();
    int64_t d = 0;
    for (int64_t j = 0; j < inner; ++j)
        if (mask[j] != 0.0) ++d;
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        int64_t k = 0;
        for (int64_t j = 0; j < inner; ++j)
            if (mask[j] != 0.0) out.at(i, k++) = values[i * inner + j];
    }
    return out;
}

/*------------------------------- augmentation ------------------------------------*/

struct AugRow {
    double fraction = 0.0;
    int64_t n_real = 0;
    int64_t n_syn = 0;
    double acc_real_only = 0.0;
    double acc_augmented = 0.0;
    std::string note;
};

namespace detail {

// stratified seeded pick of about frac*n rows per class
inline std::vector<int64_t> stratified_pick(const std::vector<int64_t>& labels, double frac,
                                            int64_t n_classes, uint64_t seed, const char* stream) {
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int64_t>(i));
    Rng rng = make_stream(seed, stream);
    std::vector<int64_t> picked;
    for (auto& idx : by_class) {
        if (idx.empty()) continue;
        rng.shuffle(idx.begin(), idx.end());
        auto want = static_cast<int64_t>(
            std::llround(frac * static_cast<double>(idx.size())));
        want = std::min<int64_t>(want, static_cast<int64_t>(idx.size()));
        for (int64_t k = 0; k < want; ++k) picked.push_back(idx[static_cast<size_t>(k)]);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    Shape s = x.shape();
    s[0] = static_cast<int64_t>(rows.size());
    int64_t inner = x.numel() / x.dim(0);
    Tensor out(s);
    for (size_t k = 0; k < rows.size(); ++k)
        std::copy(x.data() + rows[k] * inner, x.data() + (rows[k] + 1) * inner,
                  out.data() + static_cast<int64_t>(k) * inner);
    return out;
}

inline std::vector<int64_t> gather_labels(const std::vector<int64_t>& y,
                                          const std::vector<int64_t>& rows) {
    std::vector<int64_t> out;
    out.reserve(rows.size());
    for (int64_t r : rows) out.push_back(y[static_cast<size_t>(r)]);
    return out;
}

inline Tensor vstack(const Tensor& a, const Tensor& b) {
    if (b.dim(0) == 0) return a;
    Shape s = a.shape();
    s[0] = a.dim(0) + b.dim(0);
    Tensor out(s);
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    return out;
}

}  // namespace detail

// For each fraction f: train once on f*real, once on f*real topped up with
// synthetic samples to |real|; both evaluated on the same held-out test set.
inline std::vector<AugRow> augmentation_experiment(
    const Tensor& real_x, const std::vector<int64_t>& real_y, const Tensor& syn_x,
    const std::vector<int64_t>& syn_y, const Tensor& test_x, const std::vector<int64_t>& test_y,
    const std::vector<double>& fractions, const nn::ClassifierSpec& spec, int64_t n_classes) {
    if (syn_x.dim(0) < real_x.dim(0))
        throw ConfigError("augmentation: synthetic set (" + std::to_string(syn_x.dim(0)) +
                          ") is smaller than the real set (" + std::to_string(real_x.dim(0)) + ")");
    std::vector<AugRow> rows;
    for (double f : fractions) {
        AugRow row;
        row.fraction = f;
        auto keep = detail::stratified_pick(real_y, f, n_classes, spec.seed, "augment.real");
        row.n_real = static_cast<int64_t>(keep.size());
        Tensor fx = detail::gather_rows(real_x, keep);
        auto fy = detail::gather_labels(real_y, keep);
        {
            std::vector<int64_t> seen;
            for (int64_t y : fy)
                if (std::find(seen.begin(), seen.end(), y) == seen.end()) seen.push_back(y);
            if (seen.size() < 2) {
                row.note = "skipped: fraction leaves fewer than 2 classes";
                rows.push_back(row);
                continue;
            }
        }
        auto real_trained = nn::train_classifier(fx, fy, test_x, test_y, spec, n_classes);
        row.acc_real_only = real_trained.val_accuracy;

        int64_t missing = real_x.dim(0) - static_cast<int64_t>(keep.size());
        row.n_syn = missing;
        if (missing > 0) {
            double syn_frac = static_cast<double>(missing) / static_cast<double>(syn_x.dim(0));
            auto syn_rows = detail::stratified_pick(syn_y, syn_frac, n_classes, spec.seed,
                                                    "augment.syn");
            // top up to the exact count with unused rows
            Rng rng = make_stream(spec.seed, "augment.syn.fill");
            std::vector<uint8_t> used(static_cast<size_t>(syn_x.dim(0)), 0);
            for (int64_t r : syn_rows) used[static_cast<size_t>(r)] = 1;
            while (static_cast<int64_t>(syn_rows.size()) < missing) {
                int64_t r = rng.uniform_int(syn_x.dim(0));
                if (!used[static_cast<size_t>(r)]) {
                    used[static_cast<size_t>(r)] = 1;
                    syn_rows.push_back(r);
                }
            }
            while (static_cast<int64_t>(syn_rows.size()) > missing) syn_rows.pop_back();
            std::sort(syn_rows.begin(), syn_rows.end());
            Tensor ax = detail::vstack(fx, detail::gather_rows(syn_x, syn_rows));
            auto ay = fy;
            auto sy = detail::gather_labels(syn_y, syn_rows);
            ay.insert(ay.end(), sy.begin(), sy.end());
            auto aug_trained = nn::train_classifier(ax, ay, test_x, test_y, spec, n_classes);
            row.acc_augmented = aug_trained.val_accuracy;
        } else {
            // degenerate f = 100% row: no synthetic samples, identical run
            auto aug_trained = nn::train_classifier(fx, fy, test_x, test_y, spec, n_classes);
            row.acc_augmented = aug_trained.val_accuracy;
        }
        rows.push_back(row);
    }
    return rows;
}

/*--------------------------------- eval report -----------------------------------*/

struct EvalReport {
    double a_r = 0.0;  // test accuracy, classifier trained on real data
    double a_s = 0.0;  // test accuracy, classifier trained on synthetic data
    double recovery = 0.0;
    AaPair aa_test;   // nnaa vs held-out real data
    AaPair aa_train;  // nnaa vs real training data
    double privacy_loss_avg = 0.0;
    double privacy_loss_truth_only = 0.0;
    DistanceAudit audit;
    std::vector<AugRow> augmentation;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["classifier"] = {{"a_r", a_r}, {"a_s", a_s}, {"recovery_rate", recovery}};
        j["nnaa"] = {{"test", {{"aa_truth", aa_test.aa_truth}, {"aa_syn", aa_test.aa_syn}}},
                     {"train", {{"aa_truth", aa_train.aa_truth}, {"aa_syn", aa_train.aa_syn}}}};
        j["privacy_loss"] = {{"averaged", privacy_loss_avg}, {"truth_only", privacy_loss_truth_only}};
        j["distance_audit"] = {{"min_l1", audit.min_l1},
                               {"min_l2", audit.min_l2},
                               {"min_cosine", audit.min_cosine},
                               {"duplicate_count", audit.duplicate_count},
                               {"zero_norm_flagged", audit.zero_norm_flagged}};
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : augmentation)
            rows.push_back({{"fraction", r.fraction},
                            {"n_real", r.n_real},
                            {"n_syn", r.n_syn},
                            {"acc_real_only", r.acc_real_only},
                            {"acc_augmented", r.acc_augmented},
                            {"note", r.note}});
        j["augmentation"] = rows;
        return j;
    }
};

struct EvalOptions {
    nn::ClassifierSpec classifier;
    Metric metric = Metric::L2;
    uint64_t seed = 0;
};

// Full quantitative evaluation of synthetic data against real train/test
// splits, all in the standardized embedding space restricted to real
// positions.
inline EvalReport evaluate_synthetic(const Tensor& train_x, const std::vector<int64_t>& train_y,
                                     const Tensor& test_x, const std::vector<int64_t>& test_y,
                                     const Tensor& syn_x, const std::vector<int64_t>& syn_y,
                                     int64_t n_classes, const EvalOptions& opts) {
    EvalReport rep;
    nn::ClassifierSpec spec = opts.classifier;
    auto real_cls = nn::train_classifier(train_x, train_y, test_x, test_y, spec, n_classes);
    rep.a_r = real_cls.val_accuracy;
    auto syn_cls = nn::train_classifier(syn_x, syn_y, test_x, test_y, spec, n_classes);
    rep.a_s = syn_cls.val_accuracy;
    rep.recovery = recovery_rate(rep.a_r, rep.a_s);

    int64_t n = train_x.dim(0);
    Tensor train_flat = train_x.rank() == 2 ? train_x : train_x.reshaped({n, train_x.numel() / n});
    Tensor test_flat = test_x.rank() == 2 ? test_x
                                          : test_x.reshaped({test_x.dim(0), test_x.numel() / test_x.dim(0)});
    Tensor syn_flat = syn_x.rank() == 2 ? syn_x
                                        : syn_x.reshaped({syn_x.dim(0), syn_x.numel() / syn_x.dim(0)});
    rep.aa_test = nnaa(test_flat, syn_flat, opts.metric, opts.seed);
    rep.aa_train = nnaa(train_flat, syn_flat, opts.metric, opts.seed);
    PrivacyResult pr = privacy_loss(train_flat, test_flat, syn_flat, opts.metric, opts.seed);
    rep.privacy_loss_avg = pr.value;
    rep.privacy_loss_truth_only = pr.value_truth_only;
    rep.audit = distance_audit(train_flat, syn_flat);
    return rep;
}

/*----------------------------------- csv io --------------------------------------*/

inline void write_projection_csv(const std::string& path,
                                 const std::vector<ProjectedPoint>& points) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("projection: cannot open '" + path + "'");
    f << "source_name,pc1,pc2\n";
    for (const auto& p : points)
        f << p.source << ',' << fmt_double(p.pc1) << ',' << fmt_double(p.pc2) << "\n";
}

// 2-component PCA of the named datasets, written as source_name,pc1,pc2 rows
inline void export_projection(const std::vector<std::pair<std::string, Tensor>>& datasets,
                              const std::string& out_path) {
    write_projection_csv(out_path, project_2pc(datasets));
}

inline void write_augmentation_csv(const std::string& path, const std::vector<AugRow>& rows,
                                   const std::string& config_hash = "") {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("augmentation: cannot open '" + path + "'");
    if (!config_hash.empty()) f << "#confighash " << config_hash << "\n";
    f << "fraction,n_real,n_syn,acc_real_only,acc_augmented,note\n";
    for (const auto& r : rows)
        f << fmt_double(r.fraction) << ',' << r.n_real << ',' << r.n_syn << ','
          << fmt_double(r.acc_real_only) << ',' << fmt_double(r.acc_augmented) << ',' << r.note
          << "\n";
}

}  // namespace eval
}  // namespace genodiff
