#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hivis/common.hpp"

namespace hivis {

// Dense row-major f64 tensor. The single numeric currency of the engine;
// everything model-facing is rank 1 or 2.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shp);

    static Tensor zeros(std::vector<int64_t> shp) { return Tensor(std::move(shp)); }
    static Tensor full(std::vector<int64_t> shp, double v);
    static Tensor scalar(double v);
    static Tensor row_vector(std::vector<double> v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    // 2-D accessors; rank-1 tensors are treated as a single row.
    int64_t rows() const { return rank() == 2 ? shape[0] : 1; }
    int64_t cols() const { return rank() == 2 ? shape[1] : (shape.empty() ? 1 : shape[0]); }

    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }
    double* row(int64_t i) { return data.data() + i * cols(); }
    const double* row(int64_t i) const { return data.data() + i * cols(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

inline void check_shape(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
    if (!ok) fail(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Deterministic RNG: mt19937_64 (bit-specified by the standard) plus
// hand-rolled transforms so sequences do not depend on the stdlib's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // standard normal, Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // [0, n)
    int64_t below(int64_t n) {
        assert(n > 0);
        return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
    }

    Tensor randn(std::vector<int64_t> shp, double stddev) {
        Tensor t(std::move(shp));
        for (double& v : t.data) v = normal() * stddev;
        return t;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hivis
