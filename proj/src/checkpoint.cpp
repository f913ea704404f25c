#include "hivis/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hivis {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

namespace {
constexpr char kMagic[4] = {'H', 'V', 'S', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::vector<uint8_t>& out, const T& v) {
    size_t off = out.size();
    out.resize(off + sizeof(T));
    std::memcpy(out.data() + off, &v, sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& in, size_t& off) {
    if (off + sizeof(T) > in.size()) fail("checkpoint: truncated file");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}
}  // namespace

std::vector<uint8_t> serialize_params(const ParamStore& p) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put<uint32_t>(out, kVersion);
    for (const auto& [name, v] : p.t) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<uint32_t>(out, static_cast<uint32_t>(v.shape.size()));
        for (int64_t e : v.shape) put<uint64_t>(out, static_cast<uint64_t>(e));
        size_t off = out.size();
        out.resize(off + v.data.size() * sizeof(double));
        std::memcpy(out.data() + off, v.data.data(), v.data.size() * sizeof(double));
    }
    return out;
}

ParamStore deserialize_params(const std::vector<uint8_t>& bytes) {
    size_t off = 0;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail("checkpoint: bad magic (expected HVS1)");
    off = 4;
    uint32_t version = take<uint32_t>(bytes, off);
    if (version != kVersion) fail("checkpoint: unsupported version " + std::to_string(version));
    ParamStore p;
    while (off < bytes.size()) {
        uint32_t name_len = take<uint32_t>(bytes, off);
        if (off + name_len > bytes.size()) fail("checkpoint: truncated name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + off), name_len);
        off += name_len;
        uint32_t rank = take<uint32_t>(bytes, off);
        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            auto e = static_cast<int64_t>(take<uint64_t>(bytes, off));
            shape.push_back(e);
            numel *= e;
        }
        Tensor v(shape);
        if (off + static_cast<size_t>(numel) * sizeof(double) > bytes.size())
            fail("checkpoint: truncated data for " + name);
        std::memcpy(v.data.data(), bytes.data() + off, static_cast<size_t>(numel) * sizeof(double));
        off += static_cast<size_t>(numel) * sizeof(double);
        p.add(name, std::move(v));
    }
    return p;
}

void save_checkpoint(const ParamStore& p, const std::string& path) {
    std::vector<uint8_t> bytes = serialize_params(p);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("checkpoint: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail("checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("checkpoint: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_params(bytes);
}

uint64_t fnv1a64(const uint8_t* data, size_t n) {
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t param_hash(const ParamStore& p) {
    std::vector<uint8_t> bytes = serialize_params(p);
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace hivis
