#pragma once

// Versioned named-array container, shared by codec/teacher/student weights.
// Layout: magic "TSDF", u32 version, u32 array count, then per array:
// u32 name length, UTF-8 name, u32 rank, u32 dims..., little-endian f32 data.

#include "tsd/optim.hpp"
#include "tsd/tensor.hpp"

namespace tsd {

struct Checkpoint {
    static constexpr uint32_t kVersion = 1;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        fail("checkpoint: missing array '" + name + "'");
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return true;
        return false;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        check(os.good(), "checkpoint: cannot open for writing: " + path);
        os.write("TSDF", 4);
        write_u32(os, kVersion);
        write_u32(os, static_cast<uint32_t>(arrays.size()));
        for (const auto& [name, t] : arrays) {
            write_u32(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<uint32_t>(t.shape().size()));
            for (int d : t.shape()) write_u32(os, static_cast<uint32_t>(d));
            write_f32_block(os, t.data());
        }
        check(os.good(), "checkpoint: write failed: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        check(is.good(), "checkpoint: cannot open: " + path);
        char magic[4];
        is.read(magic, 4);
        check(is.good() && std::memcmp(magic, "TSDF", 4) == 0,
              "checkpoint: bad magic in " + path);
        uint32_t version = read_u32(is, "version");
        check(version == kVersion, "checkpoint: unsupported version " + std::to_string(version));
        uint32_t count = read_u32(is, "array count");
        Checkpoint ckpt;
        for (uint32_t i = 0; i < count; ++i) {
            uint32_t name_len = read_u32(is, "name length");
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            check(is.good(), "checkpoint: truncated name in " + path);
            uint32_t rank = read_u32(is, "rank");
            Shape shape(rank);
            for (uint32_t d = 0; d < rank; ++d)
                shape[d] = static_cast<int>(read_u32(is, "dim"));
            std::vector<double> data;
            read_f32_block(is, data, static_cast<size_t>(numel_of(shape)), "array '" + name + "'");
            ckpt.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
        }
        return ckpt;
    }
};

// Snapshot of live parameters (values are f32-rounded, matching what a
// save/load round trip would produce).
inline Checkpoint snapshot_params(const NamedParams& params) {
    Checkpoint c;
    for (const auto& [name, p] : params) {
        std::vector<double> v = p.data();
        quantize_f32(v);
        c.arrays.emplace_back(name, Tensor(p.shape(), std::move(v)));
    }
    return c;
}

// Copy checkpoint values into live parameters (shape-checked).
inline void load_params(const Checkpoint& ckpt, NamedParams& params) {
    for (auto& [name, p] : params) {
        const Tensor& src = ckpt.get(name);
        check(src.shape() == p.shape(), "checkpoint: shape mismatch for '" + name + "': " +
                                            shape_str(src.shape()) + " vs " + shape_str(p.shape()));
        p.data() = src.data();
    }
}

inline uint64_t hash_params(const NamedParams& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : params) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(p.data().data(), p.data().size() * sizeof(double), h);
    }
    return h;
}

}  // namespace tsd
