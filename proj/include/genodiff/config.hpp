#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "classifier.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "diffusion.hpp"
#include "metrics.hpp"

namespace genodiff {
namespace cli {

/*------------------------------ key-value config ---------------------------------*/

// TOML-style subset: [section] headers, key = value lines, # comments.
// Values: integer, float, boolean, quoted string, or flat array of numbers.
struct ConfigValue {
    std::variant<int64_t, double, bool, std::string, std::vector<double>> v;

    const char* type_name() const {
        switch (v.index()) {
            case 0: return "integer";
            case 1: return "float";
            case 2: return "boolean";
            case 3: return "string";
            default: return "array";
        }
    }
};

class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("config: cannot open '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return parse_string(ss.str(), path);
    }

    static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<config>") {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line, section;
        int64_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw ParseError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
                section = strip(s.substr(1, s.size() - 2));
                if (section.empty())
                    throw ParseError(origin + ":" + std::to_string(line_no) + ": empty section name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ParseError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            std::string key = strip(s.substr(0, eq));
            std::string val = strip(s.substr(eq + 1));
            if (key.empty())
                throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[qualify(section, key)] =
                parse_value(val, origin + ":" + std::to_string(line_no));
        }
        return cfg;
    }

    // "section.key=value" override, e.g. from the command line
    void set_override(const std::string& assignment) {
        auto eq = assignment.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + assignment + "' must look like section.key=value");
        std::string key = strip(assignment.substr(0, eq));
        std::string val = strip(assignment.substr(eq + 1));
        values_[key] = parse_value(val, "<override>");
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    int64_t get_int(const std::string& key, std::optional<int64_t> def = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (def) return *def;
            throw ConfigError("config: missing required key '" + key + "'");
        }
        if (auto* i = std::get_if<int64_t>(&it->second.v)) return *i;
        throw ConfigError("config: key '" + key + "' must be an integer, found " +
                          it->second.type_name());
    }

    double get_float(const std::string& key, std::optional<double> def = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (def) return *def;
            throw ConfigError("config: missing required key '" + key + "'");
        }
        if (auto* d = std::get_if<double>(&it->second.v)) return *d;
        if (auto* i = std::get_if<int64_t>(&it->second.v)) return static_cast<double>(*i);
        throw ConfigError("config: key '" + key + "' must be a number, found " +
                          it->second.type_name());
    }

    bool get_bool(const std::string& key, std::optional<bool> def = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (def) return *def;
            throw ConfigError("config: missing required key '" + key + "'");
        }
        if (auto* b = std::get_if<bool>(&it->second.v)) return *b;
        throw ConfigError("config: key '" + key + "' must be a boolean, found " +
                          it->second.type_name());
    }

    std::string get_string(const std::string& key, std::optional<std::string> def = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (def) return *def;
            throw ConfigError("config: missing required key '" + key + "'");
        }
        if (auto* s = std::get_if<std::string>(&it->second.v)) return *s;
        throw ConfigError("config: key '" + key + "' must be a string, found " +
                          it->second.type_name());
    }

    std::vector<double> get_array(const std::string& key, std::optional<std::vector<double>> def = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (def) return *def;
            throw ConfigError("config: missing required key '" + key + "'");
        }
        if (auto* a = std::get_if<std::vector<double>>(&it->second.v)) return *a;
        throw ConfigError("config: key '" + key + "' must be an array, found " +
                          it->second.type_name());
    }

    // canonical serialization: sorted keys, normalized numbers. The output
    // directory is a location, not a parameter: identical configs into
    // different directories must produce byte-identical artifacts, so "out"
    // stays outside the hash.
    std::string canonical_string() const {
        std::ostringstream os;
        for (const auto& [key, value] : values_) {
            if (key == "out") continue;
            os << key << '=';
            std::visit(
                [&os](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, int64_t>) {
                        os << 'i' << v;
                    } else if constexpr (std::is_same_v<T, double>) {
                        char buf[40];
                        std::snprintf(buf, sizeof(buf), "f%.17g", v);
                        os << buf;
                    } else if constexpr (std::is_same_v<T, bool>) {
                        os << (v ? "btrue" : "bfalse");
                    } else if constexpr (std::is_same_v<T, std::string>) {
                        os << 's' << v;
                    } else {
                        os << 'a';
                        for (double d : v) {
                            char buf[40];
                            std::snprintf(buf, sizeof(buf), "%.17g,", d);
                            os << buf;
                        }
                    }
                },
                value.v);
            os << '\n';
        }
        return os.str();
    }

    std::string hash() const { return hex64(fnv1a64(canonical_string())); }

private:
    static std::string strip(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static std::string qualify(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }

    static ConfigValue parse_value(std::string val, const std::string& where) {
        // drop trailing comment outside quotes
        bool in_quote = false;
        for (size_t i = 0; i < val.size(); ++i) {
            if (val[i] == '"') in_quote = !in_quote;
            if (val[i] == '#' && !in_quote) {
                val = strip(val.substr(0, i));
                break;
            }
        }
        if (val.empty()) throw ParseError(where + ": empty value");
        ConfigValue out;
        if (val == "true") {
            out.v = true;
            return out;
        }
        if (val == "false") {
            out.v = false;
            return out;
        }
        if (val.front() == '"') {
            if (val.size() < 2 || val.back() != '"')
                throw ParseError(where + ": unterminated string");
            out.v = val.substr(1, val.size() - 2);
            return out;
        }
        if (val.front() == '[') {
            if (val.back() != ']') throw ParseError(where + ": unterminated array");
            std::vector<double> arr;
            std::string body = val.substr(1, val.size() - 2);
            std::istringstream bs(body);
            std::string item;
            while (std::getline(bs, item, ',')) {
                item = strip(item);
                if (item.empty()) continue;
                try {
                    size_t pos = 0;
                    arr.push_back(std::stod(item, &pos));
                    if (pos != item.size()) throw std::invalid_argument(item);
                } catch (const std::exception&) {
                    throw ParseError(where + ": array element '" + item + "' is not a number");
                }
            }
            out.v = std::move(arr);
            return out;
        }
        // integer or float
        try {
            size_t pos = 0;
            if (val.find_first_of(".eE") == std::string::npos) {
                int64_t i = std::stoll(val, &pos);
                if (pos == val.size()) {
                    out.v = i;
                    return out;
                }
            }
            pos = 0;
            double d = std::stod(val, &pos);
            if (pos == val.size()) {
                out.v = d;
                return out;
            }
        } catch (const std::exception&) {
        }
        throw ParseError(where + ": cannot parse value '" + val + "'");
    }

    std::map<std::string, ConfigValue> values_;
};

/*----------------------------------- run config -----------------------------------*/

// All pipeline stages draw their options (and the config hash) from here.
struct RunConfig {
    KeyValueConfig kv;
    uint64_t seed = 0;
    std::string out_dir;
    std::string config_hash;

    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {},
                          std::optional<uint64_t> seed_override = {},
                          std::optional<std::string> out_override = {}) {
        RunConfig rc;
        rc.kv = KeyValueConfig::parse_file(path);
        for (const auto& o : overrides) rc.kv.set_override(o);
        if (seed_override) rc.kv.set_override("seed=" + std::to_string(*seed_override));
        if (out_override) rc.kv.set_override("out=\"" + *out_override + "\"");
        rc.seed = static_cast<uint64_t>(rc.kv.get_int("seed"));
        rc.out_dir = rc.kv.get_string("out");
        rc.config_hash = rc.kv.hash();
        return rc;
    }

    sim::SimConfig sim_config() const {
        sim::SimConfig c;
        c.n_samples = kv.get_int("simulate.n_samples", 600);
        c.n_genes = kv.get_int("simulate.n_genes", 200);
        c.snps_per_gene_min = kv.get_int("simulate.snps_per_gene_min", 5);
        c.snps_per_gene_max = kv.get_int("simulate.snps_per_gene_max", 9);
        c.n_populations = kv.get_int("simulate.n_populations", 2);
        c.fst = kv.get_float("simulate.fst", 0.3);
        c.ld_strength = kv.get_float("simulate.ld_strength", 0.6);
        c.ploidy = sim::ploidy_from_name(kv.get_string("simulate.mode", "genotype"));
        if (kv.get_bool("simulate.phenotype", false)) {
            sim::PhenotypeConfig p;
            p.n_causal_snps = kv.get_int("simulate.phenotype_n_causal", 40);
            p.effect_size = kv.get_float("simulate.phenotype_effect", 2.0);
            p.intercept = kv.get_float("simulate.phenotype_intercept", 0.0);
            c.phenotype = p;
        }
        c.seed = substream_seed(seed, "simulate");
        c.validate();
        return c;
    }

    std::array<double, 3> split_fractions() const {
        auto arr = kv.get_array("simulate.split", std::vector<double>{0.8, 0.1, 0.1});
        if (arr.size() != 3)
            throw ConfigError("config: simulate.split must have 3 fractions (train, val, test)");
        return {arr[0], arr[1], arr[2]};
    }

    double variance_target() const { return kv.get_float("embed.variance_target", 0.95); }
    int64_t embed_depth() const { return kv.get_int("embed.depth", 4); }

    std::string train_preset() const { return kv.get_string("train.preset", "mlp_unet_desk"); }

    ddpm::TrainConfig train_config() const {
        ddpm::TrainConfig c;
        c.t_steps = kv.get_int("train.t_steps", 1000);
        c.beta_first = kv.get_float("train.beta_first", 1e-4);
        c.beta_last = kv.get_float("train.beta_last", 0.02);
        c.steps = kv.get_int("train.steps", 2000);
        c.batch = kv.get_int("train.batch", 32);
        c.lr = kv.get_float("train.lr", 1e-3);
        c.eval_every = kv.get_int("train.eval_every", 100);
        c.val_batch_cap = kv.get_int("train.val_batch_cap", 64);
        c.conditional = kv.get_bool("train.conditional", true);
        c.seed = substream_seed(seed, "train");
        c.validate();
        return c;
    }

    int64_t generate_n() const { return kv.get_int("generate.n_samples", 400); }
    bool generate_per_class() const { return kv.get_bool("generate.per_class", true); }
    std::optional<int64_t> generate_label() const {
        if (!kv.has("generate.label")) return {};
        return kv.get_int("generate.label");
    }

    nn::ClassifierSpec classifier_spec() const {
        nn::ClassifierSpec s;
        s.arch = nn::arch_from_name(kv.get_string("evaluate.classifier", "mlp"));
        s.hidden = kv.get_int("evaluate.hidden", 64);
        s.steps = kv.get_int("evaluate.steps", 300);
        s.batch = kv.get_int("evaluate.batch", 32);
        s.lr = kv.get_float("evaluate.lr", 1e-3);
        s.seed = substream_seed(seed, "evaluate");
        return s;
    }

    eval::Metric eval_metric() const {
        std::string m = kv.get_string("evaluate.metric", "l2");
        if (m == "l1") return eval::Metric::L1;
        if (m == "l2") return eval::Metric::L2;
        if (m == "cosine") return eval::Metric::Cosine;
        throw ConfigError("config: evaluate.metric must be l1, l2, or cosine");
    }

    bool eval_projection() const { return kv.get_bool("evaluate.projection", true); }

    // classify on raw genotype digits instead of the embedding space
    // (distance metrics stay in the embedding space either way)
    bool eval_raw_space() const { return kv.get_bool("evaluate.raw_space", false); }

    std::vector<double> augment_fractions() const {
        return kv.get_array("augment.fractions", std::vector<double>{0.05, 0.1, 0.2, 0.5});
    }
};

}  // namespace cli
}  // namespace genodiff
