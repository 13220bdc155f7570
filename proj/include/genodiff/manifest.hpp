#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blob_io.hpp"

namespace genodiff {
namespace cli {

// Per-run bookkeeping: config hash, and per-stage input/output digests with
// wall-clock. Stages verify their inputs' digests against what the producing
// stage recorded, so artifacts mixed in from another run are rejected.
class RunManifest {
public:
    RunManifest(std::string path, std::string config_hash)
        : path_(std::move(path)), config_hash_(std::move(config_hash)) {
        if (std::filesystem::exists(path_)) {
            std::ifstream f(path_);
            try {
                f >> doc_;
            } catch (const nlohmann::json::exception&) {
                doc_ = nlohmann::json::object();
            }
            if (doc_.value("config_hash", config_hash_) != config_hash_)
                doc_ = nlohmann::json::object();  // a different run owns this directory state
        }
        doc_["config_hash"] = config_hash_;
        doc_["artifact_version"] = "v1";
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
    }

    // recompute a previously recorded output digest before consuming it
    void verify_input(const std::string& file) const {
        uint64_t actual = file_digest(file);
        for (const auto& [stage, info] : doc_.at("stages").items()) {
            if (!info.contains("outputs")) continue;
            for (const auto& [path, digest] : info.at("outputs").items()) {
                if (path == file && digest.get<std::string>() != hex64(actual))
                    throw IoError("manifest: digest mismatch for '" + file +
                                  "' (artifact changed since stage '" + stage + "' wrote it)");
            }
        }
    }

    void record_stage(const std::string& name, const std::vector<std::string>& inputs,
                      const std::vector<std::string>& outputs, double wall_ms) {
        nlohmann::json stage;
        stage["inputs"] = nlohmann::json::object();
        for (const auto& p : inputs) stage["inputs"][p] = hex64(file_digest(p));
        stage["outputs"] = nlohmann::json::object();
        for (const auto& p : outputs) stage["outputs"][p] = hex64(file_digest(p));
        stage["wall_ms"] = wall_ms;
        doc_["stages"][name] = stage;
        std::ofstream f(path_);
        if (!f) throw IoError("manifest: cannot write '" + path_ + "'");
        f << doc_.dump(2) << "\n";
    }

    const std::string& config_hash() const { return config_hash_; }

private:
    std::string path_;
    std::string config_hash_;
    nlohmann::json doc_;
};

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double wall_ms() const {
        auto d = std::chrono::steady_clock::now() - start_;
        return std::chrono::duration<double, std::milli>(d).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace cli
}  // namespace genodiff
