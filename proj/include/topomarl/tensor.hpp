#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace topomarl {

// Dense row-major matrix of doubles. Rows are batch entries unless noted.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    static Tensor2 zeros(std::size_t r, std::size_t c) { return Tensor2(r, c); }

    static Tensor2 full(std::size_t r, std::size_t c, double v) {
        Tensor2 t(r, c);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
};

enum class InitScheme { UniformFanIn, Zeros };

// Deterministic initialization. UniformFanIn draws from
// U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = rows.
inline Tensor2 seeded_init(std::size_t rows, std::size_t cols, InitScheme scheme,
                           std::uint64_t seed) {
    Tensor2 t(rows, cols);
    if (scheme == InitScheme::Zeros) return t;
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

inline Tensor2 gaussian_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Tensor2 t(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

// out += a * b
inline void matmul_accum(const Tensor2& a, const Tensor2& b, Tensor2& out) {
    if (a.cols != b.rows || out.rows != a.rows || out.cols != b.cols)
        throw std::runtime_error("shape error: matmul");
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = &a.data[i * k];
        double* or_ = &out.data[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            const double* br = &b.data[p * m];
            for (std::size_t j = 0; j < m; ++j) or_[j] += av * br[j];
        }
    }
}

inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    Tensor2 out(a.rows, b.cols);
    matmul_accum(a, b, out);
    return out;
}

// out += a^T * b
inline void matmul_at_b_accum(const Tensor2& a, const Tensor2& b, Tensor2& out) {
    if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols)
        throw std::runtime_error("shape error: matmul_at_b");
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = &a.data[i * k];
        const double* br = &b.data[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            double* or_ = &out.data[p * m];
            for (std::size_t j = 0; j < m; ++j) or_[j] += av * br[j];
        }
    }
}

// out += a * b^T
inline void matmul_a_bt_accum(const Tensor2& a, const Tensor2& b, Tensor2& out) {
    if (a.cols != b.cols || out.rows != a.rows || out.cols != b.rows)
        throw std::runtime_error("shape error: matmul_a_bt");
    const std::size_t n = a.rows, k = a.cols, m = b.rows;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = &a.data[i * k];
        double* or_ = &out.data[i * m];
        for (std::size_t j = 0; j < m; ++j) {
            const double* br = &b.data[j * k];
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            or_[j] += acc;
        }
    }
}

}  // namespace topomarl
