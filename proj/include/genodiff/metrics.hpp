#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace genodiff {
namespace eval {

/*---------------------------------- distances -----------------------------------*/

enum class Metric { L1, L2, Cosine };

inline const char* metric_name(Metric m) {
    switch (m) {
        case Metric::L1: return "l1";
        case Metric::L2: return "l2";
        case Metric::Cosine: return "cosine";
    }
    return "?";
}

inline double row_distance(const double* a, const double* b, int64_t d, Metric m,
                           bool* zero_norm_flag = nullptr) {
    switch (m) {
        case Metric::L1: {
            double acc = 0;
            for (int64_t i = 0; i < d; ++i) acc += std::abs(a[i] - b[i]);
            return acc;
        }
        case Metric::L2: {
            double acc = 0;
            for (int64_t i = 0; i < d; ++i) {
                double diff = a[i] - b[i];
                acc += diff * diff;
            }
            return std::sqrt(acc);
        }
        case Metric::Cosine: {
            double dot = 0, na = 0, nb = 0;
            for (int64_t i = 0; i < d; ++i) {
                dot += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            if (na <= 0.0 || nb <= 0.0) {
                // a zero-norm vector has no direction; report distance 1 and flag
                if (zero_norm_flag) *zero_norm_flag = true;
                return 1.0;
            }
            return 1.0 - dot / std::sqrt(na * nb);
        }
    }
    return 0.0;
}

/*------------------------------------- nnaa --------------------------------------*/

struct AaPair {
    double aa_truth = 0.0;
    double aa_syn = 0.0;
};

namespace detail {

// min_j distance(a_i, b_j); with skip_diagonal, j == i is excluded (leave-one-out)
inline std::vector<double> min_cross_distances(const Tensor& a, const Tensor& b, Metric m,
                                               bool skip_diagonal) {
    int64_t n = a.dim(0), d = a.dim(1);
    std::vector<double> out(static_cast<size_t>(n));
    parallel_for(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                double best = 1e300;
                const double* ra = a.data() + i * d;
                for (int64_t j = 0; j < b.dim(0); ++j) {
                    if (skip_diagonal && j == i) continue;
                    best = std::min(best, row_distance(ra, b.data() + j * d, d, m));
                }
                out[static_cast<size_t>(i)] = best;
            }
        },
        8);
    return out;
}

inline Tensor take_rows(const Tensor& x, const std::vector<int64_t>& rows) {
    int64_t d = x.dim(1);
    Tensor out({static_cast<int64_t>(rows.size()), d});
    for (size_t k = 0; k < rows.size(); ++k)
        std::copy(x.data() + rows[k] * d, x.data() + (rows[k] + 1) * d,
                  out.data() + static_cast<int64_t>(k) * d);
    return out;
}

inline Tensor subsample_rows(const Tensor& x, int64_t n, uint64_t seed, const char* stream) {
    if (x.dim(0) == n) return x;
    std::vector<int64_t> idx(static_cast<size_t>(x.dim(0)));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    Rng rng = make_stream(seed, stream);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(static_cast<size_t>(n));
    std::sort(idx.begin(), idx.end());
    return take_rows(x, idx);
}

}  // namespace detail

// Nearest-neighbour adversarial accuracy:
//   AA_truth = mean_i 1(d_{truth,syn}(i) > d_{truth,truth}(i))   (leave-one-out within set)
//   AA_syn   = mean_i 1(d_{syn,truth}(i) > d_{syn,syn}(i))
// Unequal set sizes are equalized by seeded uniform subsampling.
inline AaPair nnaa(const Tensor& truth, const Tensor& syn, Metric metric = Metric::L2,
                   uint64_t seed = 0) {
    if (truth.rank() != 2 || syn.rank() != 2 || truth.dim(1) != syn.dim(1))
        throw ShapeError("nnaa: inputs must be (n, d) with matching d");
    int64_t n = std::min(truth.dim(0), syn.dim(0));
    if (n < 2) throw ConfigError("nnaa: need at least 2 samples per set");
    Tensor t = detail::subsample_rows(truth, n, seed, "nnaa.truth");
    Tensor s = detail::subsample_rows(syn, n, seed, "nnaa.syn");
    if (t.dim(0) != s.dim(0)) throw NumericError("nnaa: subsampling failed to equalize sizes");

    auto d_ts = detail::min_cross_distances(t, s, metric, false);
    auto d_tt = detail::min_cross_distances(t, t, metric, true);
    auto d_st = detail::min_cross_distances(s, t, metric, false);
    auto d_ss = detail::min_cross_distances(s, s, metric, true);
    AaPair out;
    for (int64_t i = 0; i < n; ++i) {
        if (d_ts[static_cast<size_t>(i)] > d_tt[static_cast<size_t>(i)]) out.aa_truth += 1.0;
        if (d_st[static_cast<size_t>(i)] > d_ss[static_cast<size_t>(i)]) out.aa_syn += 1.0;
    }
    out.aa_truth /= static_cast<double>(n);
    out.aa_syn /= static_cast<double>(n);
    return out;
}

/*--------------------------------- privacy loss ----------------------------------*/

struct PrivacyResult {
    AaPair train;  // nnaa(truth_train, syn)
    AaPair test;   // nnaa(truth_test, syn)
    // averaged-score difference S(train) - S(test), S = (AA_truth + AA_syn)/2
    double value = 0.0;
    // variant using AA_truth alone (the formula's literal reading)
    double value_truth_only = 0.0;
};

inline PrivacyResult privacy_loss(const Tensor& truth_train, const Tensor& truth_test,
                                  const Tensor& syn, Metric metric = Metric::L2,
                                  uint64_t seed = 0) {
    int64_t n = std::min({truth_train.dim(0), truth_test.dim(0), syn.dim(0)});
    if (n < 2) throw ConfigError("privacy_loss: need at least 2 samples per set");
    // train and test share one subsampling stream so identical inputs give
    // identical subsets (privacy_loss(X, X, syn) must be exactly 0)
    Tensor tr = detail::subsample_rows(truth_train, n, seed, "privacy.truth");
    Tensor te = detail::subsample_rows(truth_test, n, seed, "privacy.truth");
    Tensor sy = detail::subsample_rows(syn, n, seed, "privacy.syn");
    PrivacyResult out;
    out.train = nnaa(tr, sy, metric, seed);
    out.test = nnaa(te, sy, metric, seed);
    double s_train = 0.5 * (out.train.aa_truth + out.train.aa_syn);
    double s_test = 0.5 * (out.test.aa_truth + out.test.aa_syn);
    out.value = s_train - s_test;
    out.value_truth_only = out.train.aa_truth - out.test.aa_truth;
    return out;
}

/*--------------------------------- distance audit --------------------------------*/

struct DistanceAudit {
    double min_l1 = 0.0;
    double min_l2 = 0.0;
    double min_cosine = 0.0;
    int64_t duplicate_count = 0;  // cross pairs with L2 < 1e-9
    bool zero_norm_flagged = false;
};

inline DistanceAudit distance_audit(const Tensor& truth, const Tensor& syn) {
    if (truth.rank() != 2 || syn.rank() != 2 || truth.dim(1) != syn.dim(1))
        throw ShapeError("distance_audit: inputs must be (n, d) with matching d");
    if (truth.dim(0) < 1 || syn.dim(0) < 1) throw ConfigError("distance_audit: empty set");
    int64_t d = truth.dim(1);
    int64_t nt = truth.dim(0);
    std::vector<DistanceAudit> partial(static_cast<size_t>(nt));
    parallel_for(
        nt,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                DistanceAudit& acc = partial[static_cast<size_t>(i)];
                acc.min_l1 = acc.min_l2 = acc.min_cosine = 1e300;
                const double* ra = truth.data() + i * d;
                for (int64_t j = 0; j < syn.dim(0); ++j) {
                    const double* rb = syn.data() + j * d;
                    double l1 = row_distance(ra, rb, d, Metric::L1);
                    double l2 = row_distance(ra, rb, d, Metric::L2);
                    bool zflag = false;
                    double co = row_distance(ra, rb, d, Metric::Cosine, &zflag);
                    acc.min_l1 = std::min(acc.min_l1, l1);
                    acc.min_l2 = std::min(acc.min_l2, l2);
                    acc.min_cosine = std::min(acc.min_cosine, co);
                    acc.zero_norm_flagged = acc.zero_norm_flagged || zflag;
                    if (l2 < 1e-9) ++acc.duplicate_count;
                }
            }
        },
        4);
    DistanceAudit out;
    out.min_l1 = out.min_l2 = out.min_cosine = 1e300;
    for (const auto& p : partial) {
        out.min_l1 = std::min(out.min_l1, p.min_l1);
        out.min_l2 = std::min(out.min_l2, p.min_l2);
        out.min_cosine = std::min(out.min_cosine, p.min_cosine);
        out.duplicate_count += p.duplicate_count;
        out.zero_norm_flagged = out.zero_norm_flagged || p.zero_norm_flagged;
    }
    return out;
}

/*------------------------------- recovery rate -----------------------------------*/

inline double recovery_rate(double a_r, double a_s) {
    if (!(a_r > 0.0))
        throw NumericError("recovery_rate: undefined for a_r = " + std::to_string(a_r));
    return a_s / a_r;
}

/*------------------------------ 2-component PCA ----------------------------------*/

struct ProjectedPoint {
    std::string source;
    double pc1 = 0.0;
    double pc2 = 0.0;
};

// Top-2 PCA of the union by deterministic subspace iteration on the implicit
// covariance (X^T X via matvec pairs); dimensions are too large for a dense
// eigensolve and the sample counts make the Gram matrix awkward too.
inline std::vector<ProjectedPoint> project_2pc(
    const std::vector<std::pair<std::string, Tensor>>& datasets) {
    if (datasets.empty()) throw ConfigError("project_2pc: no datasets");
    int64_t d = datasets[0].second.dim(1);
    int64_t n = 0;
    for (const auto& [name, x] : datasets) {
        if (x.rank() != 2 || x.dim(1) != d)
            throw ShapeError("project_2pc: dimension mismatch for '" + name + "'");
        n += x.dim(0);
    }
    Tensor all({n, d});
    int64_t row = 0;
    for (const auto& [name, x] : datasets) {
        std::copy(x.data(), x.data() + x.numel(), all.data() + row * d);
        row += x.dim(0);
    }
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += all.at(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) all.at(i, j) -= mean[static_cast<size_t>(j)];

    auto cov_apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        std::vector<double> xv(static_cast<size_t>(n), 0.0);
        parallel_for(n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                double acc = 0;
                const double* r = all.data() + i * d;
                for (int64_t j = 0; j < d; ++j) acc += r[j] * v[static_cast<size_t>(j)];
                xv[static_cast<size_t>(i)] = acc;
            }
        });
        std::fill(out.begin(), out.end(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            const double* r = all.data() + i * d;
            double s = xv[static_cast<size_t>(i)];
            for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] += s * r[j];
        }
    };

    // two-vector subspace iteration with Gram-Schmidt, fixed seed and count
    Rng rng(0x9c0ffee);
    std::vector<std::vector<double>> basis(2, std::vector<double>(static_cast<size_t>(d)));
    for (auto& v : basis)
        for (auto& x : v) x = rng.normal();
    std::vector<double> tmp(static_cast<size_t>(d));
    auto normalize = [&](std::vector<double>& v) {
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(std::max(norm, 1e-300));
        for (auto& x : v) x /= norm;
    };
    for (int iter = 0; iter < 200; ++iter) {
        for (int k = 0; k < 2; ++k) {
            cov_apply(basis[static_cast<size_t>(k)], tmp);
            basis[static_cast<size_t>(k)] = tmp;
            for (int prev = 0; prev < k; ++prev) {
                double dot = 0;
                for (int64_t j = 0; j < d; ++j)
                    dot += basis[static_cast<size_t>(k)][static_cast<size_t>(j)] *
                           basis[static_cast<size_t>(prev)][static_cast<size_t>(j)];
                for (int64_t j = 0; j < d; ++j)
                    basis[static_cast<size_t>(k)][static_cast<size_t>(j)] -=
                        dot * basis[static_cast<size_t>(prev)][static_cast<size_t>(j)];
            }
            normalize(basis[static_cast<size_t>(k)]);
        }
    }
    // sign convention: largest-magnitude loading positive
    for (auto& v : basis) {
        int64_t arg = 0;
        for (int64_t j = 1; j < d; ++j)
            if (std::abs(v[static_cast<size_t>(j)]) > std::abs(v[static_cast<size_t>(arg)])) arg = j;
        if (v[static_cast<size_t>(arg)] < 0)
            for (auto& x : v) x = -x;
    }

    std::vector<ProjectedPoint> points;
    points.reserve(static_cast<size_t>(n));
    row = 0;
    for (const auto& [name, x] : datasets) {
        for (int64_t i = 0; i < x.dim(0); ++i) {
            ProjectedPoint p;
            p.source = name;
            const double* r = all.data() + (row + i) * d;
            for (int64_t j = 0; j < d; ++j) {
                p.pc1 += r[j] * basis[0][static_cast<size_t>(j)];
                p.pc2 += r[j] * basis[1][static_cast<size_t>(j)];
            }
            points.push_back(std::move(p));
        }
        row += x.dim(0);
    }
    return points;
}

}  // namespace eval
}  // namespace genodiff
