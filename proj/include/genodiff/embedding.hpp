#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "blob_io.hpp"
#include "cohort.hpp"
#include "tensor.hpp"

namespace genodiff {
namespace embed {

constexpr int64_t kChannels = 8;  // PC slots per gene

namespace detail {

// Cyclic Jacobi eigendecomposition for a symmetric matrix (row-major n x n).
// Eigenvalues sorted descending; eigenvectors returned as rows of `vectors`
// (vectors[k] is the k-th eigenvector). Deterministic; gene sizes are <= 100
// so quadratic-cubic cost is negligible.
inline void jacobi_eigen(std::vector<double> a, int64_t n, std::vector<double>& values,
                         std::vector<double>& vectors) {
    std::vector<double> v(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
    auto off_norm = [&]() {
        double s = 0.0;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) s += a[static_cast<size_t>(p * n + q)] * a[static_cast<size_t>(p * n + q)];
        return s;
    };
    double scale = 0.0;
    for (int64_t i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(a[static_cast<size_t>(i)]));
    double tol = std::max(1e-300, scale * scale * 1e-26);
    for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = a[static_cast<size_t>(p * n + q)];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[static_cast<size_t>(p * n + p)];
                double aqq = a[static_cast<size_t>(q * n + q)];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int64_t k = 0; k < n; ++k) {
                    double akp = a[static_cast<size_t>(k * n + p)];
                    double akq = a[static_cast<size_t>(k * n + q)];
                    a[static_cast<size_t>(k * n + p)] = c * akp - s * akq;
                    a[static_cast<size_t>(k * n + q)] = s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    double apk = a[static_cast<size_t>(p * n + k)];
                    double aqk = a[static_cast<size_t>(q * n + k)];
                    a[static_cast<size_t>(p * n + k)] = c * apk - s * aqk;
                    a[static_cast<size_t>(q * n + k)] = s * apk + c * aqk;
                }
                for (int64_t k = 0; k < n; ++k) {
                    double vkp = v[static_cast<size_t>(k * n + p)];
                    double vkq = v[static_cast<size_t>(k * n + q)];
                    v[static_cast<size_t>(k * n + p)] = c * vkp - s * vkq;
                    v[static_cast<size_t>(k * n + q)] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return a[static_cast<size_t>(x * n + x)] > a[static_cast<size_t>(y * n + y)];
    });
    values.resize(static_cast<size_t>(n));
    vectors.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t k = 0; k < n; ++k) {
        int64_t src = order[static_cast<size_t>(k)];
        values[static_cast<size_t>(k)] = a[static_cast<size_t>(src * n + src)];
        // fix sign: largest-magnitude component positive
        int64_t arg = 0;
        double best = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            double m = std::abs(v[static_cast<size_t>(i * n + src)]);
            if (m > best + 1e-18) {
                best = m;
                arg = i;
            }
        }
        double sgn = v[static_cast<size_t>(arg * n + src)] >= 0.0 ? 1.0 : -1.0;
        for (int64_t i = 0; i < n; ++i)
            vectors[static_cast<size_t>(k * n + i)] = sgn * v[static_cast<size_t>(i * n + src)];
    }
}

}  // namespace detail

/*-------------------------------- embedding model -------------------------------*/

struct GenePca {
    std::vector<double> mean;        // length s_g
    std::vector<double> components;  // k_g x s_g, rows are orthonormal PCs
    int64_t k = 0;
    double explained = 0.0;  // fraction of gene variance captured by the k PCs
};

struct EmbeddingModel {
    sim::Ploidy ploidy = sim::Ploidy::genotype;
    sim::GeneMap gene_map;
    int64_t g_pad = 0;
    int64_t depth = 0;
    double variance_target = 0.95;
    std::vector<GenePca> genes;
    std::vector<int64_t> degenerate_genes;  // zero-variance genes flagged at fit time
    bool standardized = true;
    Tensor std_mean;     // (g_pad, 8)
    Tensor std_stddev;   // (g_pad, 8)
    Tensor clamp_mask;   // (g_pad, 8), 1 where a real PC lives

    int64_t n_genes() const { return static_cast<int64_t>(genes.size()); }
    int64_t n_snps() const { return gene_map.n_snps(); }

    // mask broadcast to a batch of b samples
    Tensor batch_mask(int64_t b) const {
        Tensor m({b, g_pad, kChannels});
        for (int64_t i = 0; i < b; ++i)
            std::copy(clamp_mask.data(), clamp_mask.data() + clamp_mask.numel(),
                      m.data() + i * clamp_mask.numel());
        return m;
    }
};

struct EmbeddingTensor {
    Tensor values;  // (n, g_pad, 8)
    bool standardized = true;
    std::vector<int64_t> labels;            // optional, may be empty
    std::vector<std::string> label_names;   // optional

    int64_t n_samples() const { return values.rank() == 3 ? values.dim(0) : 0; }
};

inline int64_t padded_gene_count(int64_t g, int64_t depth) {
    int64_t block = int64_t(1) << depth;
    return (g + block - 1) / block * block;
}

/*------------------------------------- fit --------------------------------------*/

inline EmbeddingModel fit_embedding(const sim::GenotypeMatrix& train, const sim::GeneMap& gm,
                                    double variance_target = 0.95, int64_t depth = 4) {
    if (train.n_samples < 1) throw ConfigError("fit_embedding: empty training matrix");
    if (gm.n_snps() != train.n_snps)
        throw ShapeError("fit_embedding: gene map covers " + std::to_string(gm.n_snps()) +
                         " sites, matrix has " + std::to_string(train.n_snps));
    if (!(variance_target > 0.0 && variance_target <= 1.0))
        throw ConfigError("fit_embedding: variance_target must lie in (0, 1]");
    if (depth < 0) throw ConfigError("fit_embedding: depth must be >= 0");

    EmbeddingModel model;
    model.ploidy = train.ploidy;
    model.gene_map = gm;
    model.depth = depth;
    model.variance_target = variance_target;
    model.g_pad = padded_gene_count(gm.n_genes(), depth);
    model.genes.resize(static_cast<size_t>(gm.n_genes()));

    int64_t n = train.n_samples;
    double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

    std::vector<uint8_t> degenerate(static_cast<size_t>(gm.n_genes()), 0);
    parallel_for(
        gm.n_genes(),
        [&](int64_t lo, int64_t hi) {
            for (int64_t g = lo; g < hi; ++g) {
                int64_t b = gm.gene_begin(g);
                int64_t s = gm.gene_size(g);
                GenePca& pca = model.genes[static_cast<size_t>(g)];
                pca.mean.assign(static_cast<size_t>(s), 0.0);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < s; ++j)
                        pca.mean[static_cast<size_t>(j)] += train.at(i, b + j);
                for (auto& m : pca.mean) m /= static_cast<double>(n);

                std::vector<double> cov(static_cast<size_t>(s * s), 0.0);
                std::vector<double> centered(static_cast<size_t>(s));
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < s; ++j)
                        centered[static_cast<size_t>(j)] =
                            train.at(i, b + j) - pca.mean[static_cast<size_t>(j)];
                    for (int64_t p = 0; p < s; ++p)
                        for (int64_t q = p; q < s; ++q)
                            cov[static_cast<size_t>(p * s + q)] +=
                                centered[static_cast<size_t>(p)] * centered[static_cast<size_t>(q)];
                }
                for (int64_t p = 0; p < s; ++p)
                    for (int64_t q = p; q < s; ++q) {
                        cov[static_cast<size_t>(p * s + q)] /= denom;
                        cov[static_cast<size_t>(q * s + p)] = cov[static_cast<size_t>(p * s + q)];
                    }

                double total = 0.0;
                for (int64_t p = 0; p < s; ++p) total += cov[static_cast<size_t>(p * s + p)];
                int64_t cap = std::min<int64_t>(kChannels, s);
                if (total < 1e-12) {
                    // zero-variance gene: fixed unit vector, flagged, not an error
                    degenerate[static_cast<size_t>(g)] = 1;
                    pca.k = 1;
                    pca.components.assign(static_cast<size_t>(s), 0.0);
                    pca.components[0] = 1.0;
                    pca.explained = 1.0;
                    continue;
                }
                std::vector<double> values, vectors;
                detail::jacobi_eigen(cov, s, values, vectors);
                double cum = 0.0;
                int64_t k = cap;
                for (int64_t i = 0; i < cap; ++i) {
                    cum += std::max(0.0, values[static_cast<size_t>(i)]);
                    if (cum / total >= variance_target) {
                        k = i + 1;
                        break;
                    }
                }
                pca.k = std::max<int64_t>(1, k);
                pca.components.assign(vectors.begin(),
                                      vectors.begin() + pca.k * s);
                double kept = 0.0;
                for (int64_t i = 0; i < pca.k; ++i) kept += std::max(0.0, values[static_cast<size_t>(i)]);
                pca.explained = kept / total;
            }
        },
        8);
    for (int64_t g = 0; g < gm.n_genes(); ++g)
        if (degenerate[static_cast<size_t>(g)]) model.degenerate_genes.push_back(g);

    model.clamp_mask = Tensor({model.g_pad, kChannels});
    for (int64_t g = 0; g < gm.n_genes(); ++g)
        for (int64_t c = 0; c < model.genes[static_cast<size_t>(g)].k; ++c)
            model.clamp_mask.at(g, c) = 1.0;

    // standardization statistics from the raw (pre-standardization) encoding
    // of the training data, per real position
    model.standardized = false;
    model.std_mean = Tensor({model.g_pad, kChannels});
    model.std_stddev = Tensor::full({model.g_pad, kChannels}, 1.0);
    {
        EmbeddingModel& m = model;
        Tensor sums({m.g_pad, kChannels}), sq({m.g_pad, kChannels});
        std::vector<double> coeff(static_cast<size_t>(kChannels));
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t g = 0; g < gm.n_genes(); ++g) {
                const GenePca& pca = m.genes[static_cast<size_t>(g)];
                int64_t b = gm.gene_begin(g), s = gm.gene_size(g);
                for (int64_t c = 0; c < pca.k; ++c) {
                    double acc = 0.0;
                    const double* w = pca.components.data() + c * s;
                    for (int64_t j = 0; j < s; ++j)
                        acc += w[j] * (train.at(i, b + j) - pca.mean[static_cast<size_t>(j)]);
                    coeff[static_cast<size_t>(c)] = acc;
                }
                for (int64_t c = 0; c < pca.k; ++c) {
                    sums.at(g, c) += coeff[static_cast<size_t>(c)];
                    sq.at(g, c) += coeff[static_cast<size_t>(c)] * coeff[static_cast<size_t>(c)];
                }
            }
        }
        for (int64_t g = 0; g < m.g_pad; ++g)
            for (int64_t c = 0; c < kChannels; ++c) {
                if (m.clamp_mask.at(g, c) == 0.0) continue;
                double mu = sums.at(g, c) / static_cast<double>(n);
                double var = sq.at(g, c) / static_cast<double>(n) - mu * mu;
                m.std_mean.at(g, c) = mu;
                m.std_stddev.at(g, c) = var > 1e-12 ? std::sqrt(var) : 1.0;
            }
    }
    model.standardized = true;
    return model;
}

/*--------------------------------- encode/decode --------------------------------*/

inline EmbeddingTensor encode(const EmbeddingModel& m, const sim::GenotypeMatrix& x) {
    if (x.n_snps != m.n_snps())
        throw ShapeError("encode: matrix has " + std::to_string(x.n_snps) + " sites, model expects " +
                         std::to_string(m.n_snps()));
    if (x.ploidy != m.ploidy) throw ShapeError("encode: ploidy mode mismatch");

    EmbeddingTensor out;
    out.standardized = m.standardized;
    out.labels = x.labels;
    out.label_names = x.label_names;
    out.values = Tensor({x.n_samples, m.g_pad, kChannels});
    Tensor& v = out.values;
    parallel_for(
        x.n_samples,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                for (int64_t g = 0; g < m.n_genes(); ++g) {
                    const GenePca& pca = m.genes[static_cast<size_t>(g)];
                    int64_t b = m.gene_map.gene_begin(g), s = m.gene_map.gene_size(g);
                    for (int64_t c = 0; c < pca.k; ++c) {
                        double acc = 0.0;
                        const double* w = pca.components.data() + c * s;
                        for (int64_t j = 0; j < s; ++j)
                            acc += w[j] * (x.at(i, b + j) - pca.mean[static_cast<size_t>(j)]);
                        if (m.standardized)
                            acc = (acc - m.std_mean.at(g, c)) / m.std_stddev.at(g, c);
                        v.at(i, g, c) = acc;
                    }
                    // positions >= k stay exactly 0 (clamp contract)
                }
            }
        },
        16);
    return out;
}

inline sim::GenotypeMatrix decode(const EmbeddingModel& m, const EmbeddingTensor& e) {
    const Tensor& v = e.values;
    if (v.rank() != 3 || v.dim(1) != m.g_pad || v.dim(2) != kChannels)
        throw ShapeError("decode: tensor shape " + shape_str(v.shape()) + " does not match model (" +
                         std::to_string(m.g_pad) + ", 8)");
    if (!v.all_finite()) throw NumericError("decode: non-finite values in embedding tensor");

    sim::GenotypeMatrix out;
    out.ploidy = m.ploidy;
    out.n_samples = v.dim(0);
    out.n_snps = m.n_snps();
    out.values.resize(static_cast<size_t>(out.n_samples * out.n_snps));
    out.labels = e.labels;
    out.label_names = e.label_names;
    if (out.labels.empty()) out.labels.assign(static_cast<size_t>(out.n_samples), 0);
    if (out.label_names.empty()) out.label_names = {"unlabeled"};
    out.sample_ids.resize(static_cast<size_t>(out.n_samples));
    for (int64_t i = 0; i < out.n_samples; ++i)
        out.sample_ids[static_cast<size_t>(i)] = "d" + std::to_string(i);

    int top = sim::alphabet_max(m.ploidy);
    parallel_for(
        out.n_samples,
        [&](int64_t lo, int64_t hi) {
            std::vector<double> recon;
            for (int64_t i = lo; i < hi; ++i) {
                for (int64_t g = 0; g < m.n_genes(); ++g) {
                    const GenePca& pca = m.genes[static_cast<size_t>(g)];
                    int64_t b = m.gene_map.gene_begin(g), s = m.gene_map.gene_size(g);
                    recon.assign(pca.mean.begin(), pca.mean.end());
                    for (int64_t c = 0; c < pca.k; ++c) {
                        double coef = v.at(i, g, c);
                        if (e.standardized)
                            coef = coef * m.std_stddev.at(g, c) + m.std_mean.at(g, c);
                        const double* w = pca.components.data() + c * s;
                        for (int64_t j = 0; j < s; ++j) recon[static_cast<size_t>(j)] += coef * w[j];
                    }
                    for (int64_t j = 0; j < s; ++j) {
                        // round to the alphabet; exact .5 ties round down
                        double r = recon[static_cast<size_t>(j)];
                        int val = 0;
                        while (val < top && r > static_cast<double>(val) + 0.5) ++val;
                        out.at(i, b + j) = static_cast<uint8_t>(val);
                    }
                }
            }
        },
        16);
    return out;
}

/*---------------------------------- diagnostics ---------------------------------*/

struct ReconstructionReport {
    std::vector<double> explained_variance;  // per gene
    double mismatch_rate = 0.0;
    int64_t mismatches = 0;
    int64_t entries = 0;
};

inline ReconstructionReport reconstruction_report(const EmbeddingModel& m,
                                                  const sim::GenotypeMatrix& x) {
    ReconstructionReport rep;
    rep.explained_variance.reserve(m.genes.size());
    for (const auto& g : m.genes) rep.explained_variance.push_back(g.explained);
    sim::GenotypeMatrix back = decode(m, encode(m, x));
    rep.entries = x.n_samples * x.n_snps;
    for (int64_t i = 0; i < x.n_samples; ++i)
        for (int64_t j = 0; j < x.n_snps; ++j)
            if (back.at(i, j) != x.at(i, j)) ++rep.mismatches;
    rep.mismatch_rate = static_cast<double>(rep.mismatches) / static_cast<double>(rep.entries);
    return rep;
}

/*------------------------------------ file io -----------------------------------*/

inline void save_embedding(const std::string& path, const EmbeddingModel& m,
                           const std::string& config_hash = "") {
    nlohmann::json extra;
    extra["ploidy"] = sim::ploidy_name(m.ploidy);
    extra["gene_end"] = m.gene_map.gene_end;
    extra["g_pad"] = m.g_pad;
    extra["depth"] = m.depth;
    extra["variance_target"] = m.variance_target;
    extra["standardized"] = m.standardized;
    extra["degenerate_genes"] = m.degenerate_genes;
    std::vector<int64_t> ks;
    std::vector<double> explained;
    for (const auto& g : m.genes) {
        ks.push_back(g.k);
        explained.push_back(g.explained);
    }
    extra["k"] = ks;
    extra["explained"] = explained;
    if (!config_hash.empty()) extra["config_hash"] = config_hash;

    BlobWriter w("#embed v1", extra);
    std::vector<Tensor> holders;
    holders.reserve(m.genes.size() * 2 + 3);
    for (size_t g = 0; g < m.genes.size(); ++g) {
        const GenePca& pca = m.genes[g];
        auto s = static_cast<int64_t>(pca.mean.size());
        holders.emplace_back(Shape{s}, pca.mean);
        holders.emplace_back(Shape{pca.k, s}, pca.components);
    }
    holders.push_back(m.std_mean);
    holders.push_back(m.std_stddev);
    size_t idx = 0;
    for (size_t g = 0; g < m.genes.size(); ++g) {
        w.add("mean." + std::to_string(g), holders[idx++]);
        w.add("components." + std::to_string(g), holders[idx++]);
    }
    w.add("std_mean", holders[idx++]);
    w.add("std_stddev", holders[idx++]);
    w.write(path);
}

inline EmbeddingModel load_embedding(const std::string& path, std::string* config_hash = nullptr) {
    Blob blob = read_blob(path, "#embed v1");
    EmbeddingModel m;
    m.ploidy = sim::ploidy_from_name(blob.extra.at("ploidy"));
    m.gene_map.gene_end = blob.extra.at("gene_end").get<std::vector<int64_t>>();
    m.g_pad = blob.extra.at("g_pad");
    m.depth = blob.extra.at("depth");
    m.variance_target = blob.extra.at("variance_target");
    m.standardized = blob.extra.at("standardized");
    m.degenerate_genes = blob.extra.at("degenerate_genes").get<std::vector<int64_t>>();
    auto ks = blob.extra.at("k").get<std::vector<int64_t>>();
    auto explained = blob.extra.at("explained").get<std::vector<double>>();
    if (config_hash) *config_hash = blob.extra.value("config_hash", "");
    m.genes.resize(ks.size());
    for (size_t g = 0; g < ks.size(); ++g) {
        GenePca& pca = m.genes[g];
        pca.k = ks[g];
        pca.explained = explained[g];
        const Tensor& mean = blob.get("mean." + std::to_string(g));
        const Tensor& comp = blob.get("components." + std::to_string(g));
        pca.mean = mean.vec();
        pca.components = comp.vec();
        if (comp.dim(0) != pca.k || comp.dim(1) != m.gene_map.gene_size(static_cast<int64_t>(g)))
            throw ParseError(path + ": component shape mismatch for gene " + std::to_string(g));
    }
    m.std_mean = blob.get("std_mean");
    m.std_stddev = blob.get("std_stddev");
    m.clamp_mask = Tensor({m.g_pad, kChannels});
    for (int64_t g = 0; g < m.n_genes(); ++g)
        for (int64_t c = 0; c < m.genes[static_cast<size_t>(g)].k; ++c) m.clamp_mask.at(g, c) = 1.0;
    return m;
}

inline void save_embedding_tensor(const std::string& path, const EmbeddingTensor& t,
                                  const std::string& config_hash = "") {
    nlohmann::json extra;
    extra["standardized"] = t.standardized;
    extra["labels"] = t.labels;
    extra["label_names"] = t.label_names;
    if (!config_hash.empty()) extra["config_hash"] = config_hash;
    BlobWriter w("#embtensor v1", extra);
    w.add("values", t.values);
    w.write(path);
}

inline EmbeddingTensor load_embedding_tensor(const std::string& path,
                                             std::string* config_hash = nullptr) {
    Blob blob = read_blob(path, "#embtensor v1");
    EmbeddingTensor t;
    t.standardized = blob.extra.at("standardized");
    t.labels = blob.extra.at("labels").get<std::vector<int64_t>>();
    t.label_names = blob.extra.at("label_names").get<std::vector<std::string>>();
    if (config_hash) *config_hash = blob.extra.value("config_hash", "");
    t.values = blob.get("values");
    if (t.values.rank() != 3) throw ParseError(path + ": embedding tensor must be rank 3");
    return t;
}

}  // namespace embed
}  // namespace genodiff
