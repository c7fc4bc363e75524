#pragma once

// Seedable 64-bit generator (splitmix64) with Box-Muller normals. The
// algorithm is fixed so sample streams are portable and bit-reproducible.

#include "tsd/tensor.hpp"

namespace tsd {

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97f4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // log-uniform on [lo,hi], lo > 0
    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Derive an independent, reproducible child stream.
    Rng fork(uint64_t salt) {
        uint64_t s = state_ ^ (salt * 0x9E3779B97f4A7C15ull + 0x632BE59BD9B4E019ull);
        Rng child(s);
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// i.i.d. standard normal entries.
inline Tensor sample_normal(Rng& rng, const Shape& shape) {
    check(!shape.empty() && numel_of(shape) > 0, "sample_normal: invalid shape " + shape_str(shape));
    std::vector<double> v(static_cast<size_t>(numel_of(shape)));
    for (double& x : v) x = rng.normal();
    return Tensor(shape, std::move(v));
}

}  // namespace tsd
