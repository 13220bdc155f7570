#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tensor.hpp"

namespace genodiff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint formats are little-endian; big-endian hosts are unsupported");

// Shared binary container used by every checkpoint format:
//   <magic line>\n
//   <u64 manifest length> <manifest JSON bytes>
//   <raw little-endian f64 arrays, in manifest["tensors"] order>
// The manifest lists {name, shape} per tensor plus format-specific fields
// under "extra".
class BlobWriter {
public:
    BlobWriter(std::string magic, nlohmann::json extra = nlohmann::json::object())
        : magic_(std::move(magic)), extra_(std::move(extra)) {}

    void add(const std::string& name, const Tensor& t) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = "f64";
        entries_.push_back(e);
        tensors_.push_back(&t);
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("blob: cannot open '" + path + "' for writing");
        nlohmann::json manifest;
        manifest["tensors"] = entries_;
        manifest["extra"] = extra_;
        std::string mjson = manifest.dump();
        f << magic_ << "\n";
        uint64_t len = mjson.size();
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
        for (const Tensor* t : tensors_)
            f.write(reinterpret_cast<const char*>(t->data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t->numel())));
        if (!f) throw IoError("blob: write failed on '" + path + "'");
    }

private:
    std::string magic_;
    nlohmann::json extra_;
    std::vector<nlohmann::json> entries_;
    std::vector<const Tensor*> tensors_;
};

struct Blob {
    nlohmann::json extra;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw ParseError("blob: missing tensor '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }
};

inline Blob read_blob(const std::string& path, const std::string& magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("blob: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": missing header");
    if (line != magic)
        throw ParseError(path + ": expected magic '" + magic + "', found '" + line + "'");
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f || len == 0 || len > (1ull << 32)) throw ParseError(path + ": bad manifest length");
    std::string mjson(len, '\0');
    f.read(mjson.data(), static_cast<std::streamsize>(len));
    if (!f) throw ParseError(path + ": truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mjson);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": manifest is not valid JSON: " + e.what());
    }
    Blob out;
    out.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
        std::string name = e.at("name");
        Shape shape = e.at("shape").get<Shape>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        if (!f) throw ParseError(path + ": truncated tensor data for '" + name + "'");
        out.tensors.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

inline uint64_t file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("digest: cannot open '" + path + "'");
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    }
    return h;
}

}  // namespace genodiff
