#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace genodiff {
namespace sim {

enum class Ploidy { genotype, haplotype };

inline int alphabet_max(Ploidy p) { return p == Ploidy::genotype ? 2 : 1; }

inline const char* ploidy_name(Ploidy p) { return p == Ploidy::genotype ? "genotype" : "haplotype"; }

inline Ploidy ploidy_from_name(const std::string& s) {
    if (s == "genotype") return Ploidy::genotype;
    if (s == "haplotype") return Ploidy::haplotype;
    throw ParseError("unknown ploidy mode '" + s + "'");
}

/*---------------------------------- gene map -----------------------------------*/

// Contiguous gene ranges partitioning [0, N). gene_end holds exclusive end
// indices, one per gene, strictly increasing.
struct GeneMap {
    std::vector<int64_t> gene_end;

    int64_t n_genes() const { return static_cast<int64_t>(gene_end.size()); }
    int64_t n_snps() const { return gene_end.empty() ? 0 : gene_end.back(); }
    int64_t gene_begin(int64_t g) const { return g == 0 ? 0 : gene_end[static_cast<size_t>(g - 1)]; }
    int64_t gene_size(int64_t g) const { return gene_end[static_cast<size_t>(g)] - gene_begin(g); }

    int64_t gene_of_snp(int64_t snp) const {
        if (snp < 0 || snp >= n_snps()) throw ShapeError("gene_of_snp: site index out of range");
        auto it = std::upper_bound(gene_end.begin(), gene_end.end(), snp);
        return static_cast<int64_t>(it - gene_end.begin());
    }

    void validate() const {
        if (gene_end.empty()) throw ConfigError("gene map: no genes");
        int64_t prev = 0;
        for (size_t g = 0; g < gene_end.size(); ++g) {
            int64_t sz = gene_end[g] - prev;
            if (sz < 5 || sz > 100)
                throw ConfigError("gene map: gene " + std::to_string(g) + " has " +
                                  std::to_string(sz) + " SNP sites, expected 5..100");
            prev = gene_end[g];
        }
    }
};

/*-------------------------------- cohort matrix ---------------------------------*/

struct GenotypeMatrix {
    Ploidy ploidy = Ploidy::genotype;
    int64_t n_samples = 0;
    int64_t n_snps = 0;
    std::vector<uint8_t> values;  // n_samples x n_snps, row-major
    std::vector<int64_t> labels;
    std::vector<std::string> label_names;
    std::vector<std::string> sample_ids;

    uint8_t at(int64_t i, int64_t j) const { return values[static_cast<size_t>(i * n_snps + j)]; }
    uint8_t& at(int64_t i, int64_t j) { return values[static_cast<size_t>(i * n_snps + j)]; }

    int64_t n_classes() const { return static_cast<int64_t>(label_names.size()); }

    void validate() const {
        if (static_cast<int64_t>(values.size()) != n_samples * n_snps)
            throw ShapeError("cohort: value buffer size mismatch");
        if (static_cast<int64_t>(labels.size()) != n_samples)
            throw ShapeError("cohort: labels length != n_samples");
        if (static_cast<int64_t>(sample_ids.size()) != n_samples)
            throw ShapeError("cohort: sample_ids length != n_samples");
        int top = alphabet_max(ploidy);
        for (size_t i = 0; i < values.size(); ++i)
            if (values[i] > top)
                throw ShapeError("cohort: entry " + std::to_string(int(values[i])) +
                                 " outside alphabet at flat index " + std::to_string(i));
        for (int64_t l : labels)
            if (l < 0 || l >= n_classes()) throw ShapeError("cohort: label index out of range");
    }

    bool operator==(const GenotypeMatrix& o) const {
        return ploidy == o.ploidy && n_samples == o.n_samples && n_snps == o.n_snps &&
               values == o.values && labels == o.labels && label_names == o.label_names &&
               sample_ids == o.sample_ids;
    }
};

/*---------------------------------- simulation ----------------------------------*/

struct PhenotypeConfig {
    int64_t n_causal_snps = 20;
    double effect_size = 1.0;
    double intercept = 0.0;
};

struct SimConfig {
    int64_t n_samples = 600;
    int64_t n_genes = 200;
    int64_t snps_per_gene_min = 5;
    int64_t snps_per_gene_max = 20;
    int64_t n_populations = 2;
    double fst = 0.2;
    double ld_strength = 0.5;
    std::optional<PhenotypeConfig> phenotype;
    Ploidy ploidy = Ploidy::genotype;
    uint64_t seed = 0;

    void validate() const {
        if (n_samples < 1) throw ConfigError("simulate: n_samples must be >= 1");
        if (n_genes < 1) throw ConfigError("simulate: n_genes must be >= 1");
        if (snps_per_gene_min < 5) throw ConfigError("simulate: snps_per_gene_min must be >= 5");
        if (snps_per_gene_max > 100) throw ConfigError("simulate: snps_per_gene_max must be <= 100");
        if (snps_per_gene_min > snps_per_gene_max)
            throw ConfigError("simulate: snps_per_gene_min > snps_per_gene_max");
        if (n_populations < 1) throw ConfigError("simulate: n_populations must be >= 1");
        if (!(fst > 0.0 && fst < 1.0)) throw ConfigError("simulate: fst must lie in (0, 1)");
        if (!(ld_strength >= 0.0 && ld_strength < 1.0))
            throw ConfigError("simulate: ld_strength must lie in [0, 1)");
        if (phenotype) {
            if (phenotype->n_causal_snps < 1)
                throw ConfigError("simulate: phenotype.n_causal_snps must be >= 1");
            if (phenotype->effect_size < 0.0)
                throw ConfigError("simulate: phenotype.effect_size must be >= 0");
        }
    }
};

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// one haplotype: AR(1) gaussian copula within each gene, Bernoulli marginals
// at the population allele frequencies
inline void draw_haplotype(const GeneMap& gm, const std::vector<double>& freq, double rho,
                           Rng& rng, uint8_t* out) {
    for (int64_t g = 0; g < gm.n_genes(); ++g) {
        int64_t b = gm.gene_begin(g), e = gm.gene_end[static_cast<size_t>(g)];
        double z = 0.0;
        for (int64_t j = b; j < e; ++j) {
            double n = rng.normal();
            z = (j == b) ? n : rho * z + std::sqrt(1.0 - rho * rho) * n;
            out[j] = std_normal_cdf(z) < freq[static_cast<size_t>(j)] ? 1 : 0;
        }
    }
}

}  // namespace detail

// Balding–Nichols cohort with AR(1) copula LD inside genes. Per-sample RNG
// streams derive from (seed, sample index), so the loop can run in parallel
// and results never depend on thread count.
inline std::pair<GenotypeMatrix, GeneMap> simulate_cohort(const SimConfig& cfg) {
    cfg.validate();

    Rng structure = make_stream(cfg.seed, "sim.structure");
    GeneMap gm;
    gm.gene_end.reserve(static_cast<size_t>(cfg.n_genes));
    int64_t pos = 0;
    for (int64_t g = 0; g < cfg.n_genes; ++g) {
        pos += cfg.snps_per_gene_min +
               structure.uniform_int(cfg.snps_per_gene_max - cfg.snps_per_gene_min + 1);
        gm.gene_end.push_back(pos);
    }
    gm.validate();
    int64_t n_snps = gm.n_snps();

    // ancestral and per-population allele frequencies
    std::vector<double> ancestral(static_cast<size_t>(n_snps));
    for (auto& p : ancestral) p = structure.uniform(0.05, 0.95);
    double f = cfg.fst;
    double conc = (1.0 - f) / f;
    std::vector<std::vector<double>> pop_freq(static_cast<size_t>(cfg.n_populations));
    for (int64_t k = 0; k < cfg.n_populations; ++k) {
        auto& v = pop_freq[static_cast<size_t>(k)];
        v.resize(static_cast<size_t>(n_snps));
        for (int64_t j = 0; j < n_snps; ++j) {
            double p = ancestral[static_cast<size_t>(j)];
            v[static_cast<size_t>(j)] = structure.beta(p * conc, (1.0 - p) * conc);
        }
    }

    std::vector<int64_t> causal;
    if (cfg.phenotype) {
        Rng pheno = make_stream(cfg.seed, "sim.phenotype");
        std::vector<int64_t> all(static_cast<size_t>(n_snps));
        for (int64_t j = 0; j < n_snps; ++j) all[static_cast<size_t>(j)] = j;
        pheno.shuffle(all.begin(), all.end());
        int64_t nc = std::min(cfg.phenotype->n_causal_snps, n_snps);
        causal.assign(all.begin(), all.begin() + nc);
    }

    GenotypeMatrix m;
    m.ploidy = cfg.ploidy;
    m.n_samples = cfg.n_samples;
    m.n_snps = n_snps;
    m.values.resize(static_cast<size_t>(cfg.n_samples * n_snps));
    m.labels.resize(static_cast<size_t>(cfg.n_samples));
    m.sample_ids.resize(static_cast<size_t>(cfg.n_samples));
    if (cfg.phenotype) {
        m.label_names = {"control", "case"};
    } else {
        for (int64_t k = 0; k < cfg.n_populations; ++k)
            m.label_names.push_back("pop" + std::to_string(k));
    }

    int copies = cfg.ploidy == Ploidy::genotype ? 2 : 1;
    parallel_for(
        cfg.n_samples,
        [&](int64_t lo, int64_t hi) {
            std::vector<uint8_t> hap(static_cast<size_t>(n_snps));
            for (int64_t i = lo; i < hi; ++i) {
                Rng rng = make_stream(cfg.seed, "sim.sample", static_cast<uint64_t>(i));
                int64_t pop = i % cfg.n_populations;
                uint8_t* row = m.values.data() + i * n_snps;
                std::fill(row, row + n_snps, uint8_t(0));
                for (int c = 0; c < copies; ++c) {
                    detail::draw_haplotype(gm, pop_freq[static_cast<size_t>(pop)], cfg.ld_strength,
                                           rng, hap.data());
                    for (int64_t j = 0; j < n_snps; ++j) row[j] += hap[static_cast<size_t>(j)];
                }
                if (cfg.phenotype) {
                    // logistic phenotype over standardized causal dosages
                    double s = 0.0;
                    for (int64_t j : causal) {
                        double p = ancestral[static_cast<size_t>(j)];
                        double mean = copies * p;
                        double sd = std::sqrt(copies * p * (1.0 - p));
                        s += (static_cast<double>(row[j]) - mean) / sd;
                    }
                    s /= std::sqrt(static_cast<double>(causal.size()));
                    double eta = cfg.phenotype->intercept + cfg.phenotype->effect_size * s;
                    double prob = 1.0 / (1.0 + std::exp(-eta));
                    m.labels[static_cast<size_t>(i)] = rng.uniform01() < prob ? 1 : 0;
                } else {
                    m.labels[static_cast<size_t>(i)] = pop;
                }
            }
        },
        64);
    for (int64_t i = 0; i < cfg.n_samples; ++i)
        m.sample_ids[static_cast<size_t>(i)] = "s" + std::to_string(i);

    m.validate();
    return {std::move(m), std::move(gm)};
}

/*------------------------------------ split -------------------------------------*/

// Stratified split: per class, counts use largest-remainder rounding, so each
// split's class count is within +-1 of the exact proportion.
inline std::array<GenotypeMatrix, 3> split_dataset(const GenotypeMatrix& m,
                                                   std::array<double, 3> fractions, uint64_t seed) {
    double total = fractions[0] + fractions[1] + fractions[2];
    for (double f : fractions)
        if (f <= 0.0) throw ConfigError("split: fractions must be positive");
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(m.n_classes()));
    for (int64_t i = 0; i < m.n_samples; ++i)
        by_class[static_cast<size_t>(m.labels[static_cast<size_t>(i)])].push_back(i);

    std::array<std::vector<int64_t>, 3> picks;
    Rng rng = make_stream(seed, "split");
    for (size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        if (static_cast<int64_t>(idx.size()) < 3)
            throw StratifyError("split: class '" + m.label_names[c] + "' has " +
                                std::to_string(idx.size()) + " samples, fewer than 3 splits");
        rng.shuffle(idx.begin(), idx.end());
        auto n = static_cast<double>(idx.size());
        std::array<int64_t, 3> count;
        std::array<double, 3> frac_part;
        int64_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            double want = fractions[static_cast<size_t>(s)] * n;
            count[static_cast<size_t>(s)] = static_cast<int64_t>(std::floor(want + 1e-12));
            frac_part[static_cast<size_t>(s)] = want - std::floor(want + 1e-12);
            assigned += count[static_cast<size_t>(s)];
        }
        // distribute the remainder by largest fractional part, ties to the
        // earlier split for determinism
        while (assigned < static_cast<int64_t>(idx.size())) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac_part[static_cast<size_t>(s)] > frac_part[static_cast<size_t>(best)] + 1e-12)
                    best = s;
            ++count[static_cast<size_t>(best)];
            frac_part[static_cast<size_t>(best)] = -1.0;
            ++assigned;
        }
        int64_t off = 0;
        for (int s = 0; s < 3; ++s) {
            for (int64_t k = 0; k < count[static_cast<size_t>(s)]; ++k)
                picks[static_cast<size_t>(s)].push_back(idx[static_cast<size_t>(off + k)]);
            off += count[static_cast<size_t>(s)];
        }
    }

    std::array<GenotypeMatrix, 3> out;
    for (int s = 0; s < 3; ++s) {
        auto& sel = picks[static_cast<size_t>(s)];
        std::sort(sel.begin(), sel.end());  // keep original sample order within each split
        GenotypeMatrix& part = out[static_cast<size_t>(s)];
        part.ploidy = m.ploidy;
        part.n_snps = m.n_snps;
        part.n_samples = static_cast<int64_t>(sel.size());
        part.label_names = m.label_names;
        part.values.resize(sel.size() * static_cast<size_t>(m.n_snps));
        for (size_t k = 0; k < sel.size(); ++k) {
            int64_t i = sel[k];
            std::copy(m.values.begin() + i * m.n_snps, m.values.begin() + (i + 1) * m.n_snps,
                      part.values.begin() + static_cast<int64_t>(k) * m.n_snps);
            part.labels.push_back(m.labels[static_cast<size_t>(i)]);
            part.sample_ids.push_back(m.sample_ids[static_cast<size_t>(i)]);
        }
        part.validate();
    }
    return out;
}

/*------------------------------------ file io -----------------------------------*/

// Cohort text format v1:
//   #cohort v1 mode=<genotype|haplotype> samples=<n> snps=<N> genes=<G> classes=<K>
//   #genes <g0_end> <g1_end> ...
//   #labels <name0> <name1> ...
//   [#confighash <hex>]
//   <sample_id> <label_index> <digit string of length N>
inline void write_cohort(const std::string& path, const GenotypeMatrix& m, const GeneMap& gm,
                         const std::string& config_hash = "") {
    m.validate();
    if (gm.n_snps() != m.n_snps) throw ShapeError("write_cohort: gene map does not span matrix");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_cohort: cannot open '" + path + "'");
    f << "#cohort v1 mode=" << ploidy_name(m.ploidy) << " samples=" << m.n_samples
      << " snps=" << m.n_snps << " genes=" << gm.n_genes() << " classes=" << m.n_classes() << "\n";
    f << "#genes";
    for (int64_t e : gm.gene_end) f << ' ' << e;
    f << "\n#labels";
    for (const auto& n : m.label_names) f << ' ' << n;
    f << "\n";
    if (!config_hash.empty()) f << "#confighash " << config_hash << "\n";
    std::string row(static_cast<size_t>(m.n_snps), '0');
    for (int64_t i = 0; i < m.n_samples; ++i) {
        for (int64_t j = 0; j < m.n_snps; ++j)
            row[static_cast<size_t>(j)] = static_cast<char>('0' + m.at(i, j));
        f << m.sample_ids[static_cast<size_t>(i)] << ' ' << m.labels[static_cast<size_t>(i)] << ' '
          << row << "\n";
    }
    if (!f) throw IoError("write_cohort: write failed on '" + path + "'");
}

struct CohortFile {
    GenotypeMatrix matrix;
    GeneMap gene_map;
    std::string config_hash;
};

inline CohortFile read_cohort(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_cohort: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line.empty())
        throw ParseError(path + ":1: missing header");
    std::istringstream h(line);
    std::string magic, ver;
    h >> magic >> ver;
    if (magic != "#cohort" || ver != "v1") throw ParseError(path + ":1: missing header");
    CohortFile out;
    GenotypeMatrix& m = out.matrix;
    int64_t n_genes = -1;
    int64_t n_classes = -1;
    std::string kv;
    while (h >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError(path + ":1: malformed header field '" + kv + "'");
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
            if (key == "mode")
                m.ploidy = ploidy_from_name(val);
            else if (key == "samples")
                m.n_samples = std::stoll(val);
            else if (key == "snps")
                m.n_snps = std::stoll(val);
            else if (key == "genes")
                n_genes = std::stoll(val);
            else if (key == "classes")
                n_classes = std::stoll(val);
            else
                throw ParseError(path + ":1: unknown header field '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError(path + ":1: malformed value for '" + key + "'");
        }
    }
    if (m.n_samples < 0 || m.n_snps < 1 || n_genes < 1 || n_classes < 1)
        throw ParseError(path + ":1: incomplete header");

    if (!std::getline(f, line)) throw ParseError(path + ":2: missing #genes line");
    {
        std::istringstream g(line);
        std::string tag;
        g >> tag;
        if (tag != "#genes") throw ParseError(path + ":2: expected #genes");
        int64_t e, prev = 0;
        while (g >> e) {
            if (e <= prev) throw ParseError(path + ":2: gene ends must be strictly increasing");
            out.gene_map.gene_end.push_back(e);
            prev = e;
        }
        if (static_cast<int64_t>(out.gene_map.gene_end.size()) != n_genes)
            throw ParseError(path + ":2: expected " + std::to_string(n_genes) + " gene ends, got " +
                             std::to_string(out.gene_map.gene_end.size()));
        if (out.gene_map.n_snps() != m.n_snps)
            throw ParseError(path + ":2: gene ends do not cover snps=" + std::to_string(m.n_snps));
    }

    if (!std::getline(f, line)) throw ParseError(path + ":3: missing #labels line");
    {
        std::istringstream g(line);
        std::string tag;
        g >> tag;
        if (tag != "#labels") throw ParseError(path + ":3: expected #labels");
        std::string name;
        while (g >> name) m.label_names.push_back(name);
        if (static_cast<int64_t>(m.label_names.size()) != n_classes)
            throw ParseError(path + ":3: expected " + std::to_string(n_classes) + " label names");
    }

    m.values.reserve(static_cast<size_t>(m.n_samples * m.n_snps));
    int top = alphabet_max(m.ploidy);
    int64_t line_no = 3;
    int64_t row = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream g(line);
            std::string tag;
            g >> tag;
            if (tag == "#confighash") g >> out.config_hash;
            continue;
        }
        if (row >= m.n_samples)
            throw ParseError(path + ":" + std::to_string(line_no) + ": more sample rows than header declares");
        std::istringstream g(line);
        std::string id, digits;
        int64_t label;
        if (!(g >> id >> label >> digits))
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed sample row");
        if (label < 0 || label >= n_classes)
            throw ParseError(path + ":" + std::to_string(line_no) + ": label index out of range");
        if (static_cast<int64_t>(digits.size()) != m.n_snps)
            throw ParseError(path + ":" + std::to_string(line_no) + ": digit string length " +
                             std::to_string(digits.size()) + " != snps=" + std::to_string(m.n_snps));
        for (int64_t j = 0; j < m.n_snps; ++j) {
            char c = digits[static_cast<size_t>(j)];
            if (c < '0' || c > static_cast<char>('0' + top))
                throw ParseError(path + ":" + std::to_string(line_no) + ": entry '" +
                                 std::string(1, c) + "' outside alphabet at row " +
                                 std::to_string(row) + " column " + std::to_string(j));
            m.values.push_back(static_cast<uint8_t>(c - '0'));
        }
        m.sample_ids.push_back(id);
        m.labels.push_back(label);
        ++row;
    }
    if (row != m.n_samples)
        throw ParseError(path + ": truncated file: header declares " + std::to_string(m.n_samples) +
                         " samples, found " + std::to_string(row));
    m.validate();
    return out;
}

/*------------------------------ matrix conversions -----------------------------*/

// label histogram, length n_classes
inline std::vector<int64_t> class_counts(const GenotypeMatrix& m) {
    std::vector<int64_t> counts(static_cast<size_t>(m.n_classes()), 0);
    for (int64_t l : m.labels) ++counts[static_cast<size_t>(l)];
    return counts;
}

}  // namespace sim
}  // namespace genodiff
