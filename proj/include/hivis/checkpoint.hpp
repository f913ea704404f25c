#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hivis/tensor.hpp"

namespace hivis {

// Named parameter set. std::map keeps iteration (and therefore serialization
// and optimizer update order) canonical.
struct ParamStore {
    std::map<std::string, Tensor> t;

    Tensor& add(const std::string& name, Tensor v) {
        auto [it, fresh] = t.emplace(name, std::move(v));
        if (!fresh) fail("ParamStore: duplicate " + name);
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = t.find(name);
        if (it == t.end()) fail("ParamStore: missing " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = t.find(name);
        if (it == t.end()) fail("ParamStore: missing " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return t.count(name) != 0; }
    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [k, v] : t) n += v.numel();
        return n;
    }
};

// Flat binary checkpoint: magic "HVS1", version u32, then per-tensor records
// (u32 name length, name bytes, u32 rank, extents u64, data f64), all
// little-endian. Round trips bit-exactly.
std::vector<uint8_t> serialize_params(const ParamStore& p);
ParamStore deserialize_params(const std::vector<uint8_t>& bytes);
void save_checkpoint(const ParamStore& p, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

uint64_t fnv1a64(const uint8_t* data, size_t n);
uint64_t param_hash(const ParamStore& p);

}  // namespace hivis
