#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "matdiff/nn/modules.hpp"

namespace matdiff::nn {

// Checkpoint container: 8-byte magic, u64 header length, JSON header
// (metadata + blob table), then raw float blobs in table order.
class Checkpoint {
  public:
    nlohmann::json meta;

    void put(const std::string& name, const Tensor& t) {
        blobs_[name] = t.clone();
    }

    const Tensor& get(const std::string& name) const {
        auto it = blobs_.find(name);
        if (it == blobs_.end())
            throw std::runtime_error("checkpoint: no blob named " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return blobs_.count(name) > 0; }
    size_t blob_count() const { return blobs_.size(); }

    template <typename M>
    void put_module(const std::string& prefix, M& m) {
        m.visit(prefix, [&](const std::string& n, Parameter& p) {
            put(n, p.value);
        });
    }

    template <typename M>
    void load_module(const std::string& prefix, M& m) const {
        m.visit(prefix, [&](const std::string& n, Parameter& p) {
            const Tensor& t = get(n);
            if (t.shape() != p.value.shape())
                throw std::runtime_error("checkpoint: shape mismatch at " + n +
                                         " " + t.shape_str() + " vs " +
                                         p.value.shape_str());
            std::memcpy(p.value.data(), t.data(),
                        sizeof(float) * t.numel());
        });
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json header;
        header["meta"] = meta;
        nlohmann::json table = nlohmann::json::array();
        for (const auto& [name, t] : blobs_) {
            nlohmann::json e;
            e["name"] = name;
            e["shape"] = t.shape();
            table.push_back(e);
        }
        header["blobs"] = table;
        std::string hs = header.dump();
        std::filesystem::create_directories(path.parent_path());
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write " + path.string());
        std::fwrite(kMagic, 1, 8, f);
        uint64_t hlen = hs.size();
        std::fwrite(&hlen, sizeof(hlen), 1, f);
        std::fwrite(hs.data(), 1, hs.size(), f);
        for (const auto& [name, t] : blobs_)
            std::fwrite(t.data(), sizeof(float), (size_t)t.numel(), f);
        std::fclose(f);
    }

    static Checkpoint load(const std::filesystem::path& path) {
        std::FILE* f = std::fopen(path.string().c_str(), "rb");
        if (!f) throw std::runtime_error("cannot read " + path.string());
        char magic[8];
        if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8)) {
            std::fclose(f);
            throw std::runtime_error("bad checkpoint magic in " + path.string());
        }
        uint64_t hlen = 0;
        if (std::fread(&hlen, sizeof(hlen), 1, f) != 1) {
            std::fclose(f);
            throw std::runtime_error("truncated checkpoint " + path.string());
        }
        std::string hs(hlen, '\0');
        if (std::fread(hs.data(), 1, hlen, f) != hlen) {
            std::fclose(f);
            throw std::runtime_error("truncated checkpoint " + path.string());
        }
        nlohmann::json header = nlohmann::json::parse(hs);
        Checkpoint ck;
        ck.meta = header.value("meta", nlohmann::json::object());
        for (const auto& e : header["blobs"]) {
            std::vector<int> shape = e["shape"].get<std::vector<int>>();
            Tensor t = Tensor::zeros(shape);
            if (std::fread(t.data(), sizeof(float), (size_t)t.numel(), f) !=
                (size_t)t.numel()) {
                std::fclose(f);
                throw std::runtime_error("truncated blob in " + path.string());
            }
            ck.blobs_[e["name"].get<std::string>()] = std::move(t);
        }
        std::fclose(f);
        return ck;
    }

  private:
    static constexpr char kMagic[9] = "MDIFCKPT";
    std::map<std::string, Tensor> blobs_; // ordered, so files are reproducible
};

} // namespace matdiff::nn
