#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "uir/common.hpp"

namespace uir {

using Vec = std::vector<double>;

// A softmax output: entries in (0,1) summing to 1. Alias kept for API
// vocabulary; sum_is_one() asserts the contract where it matters.
using ProbabilityVector = Vec;

// Dense row-major matrix of doubles.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }

    bool operator==(const Mat& o) const = default;
};

inline Vec to_vec(std::span<const double> s) { return Vec(s.begin(), s.end()); }

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimensionError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

// Unit vector in the direction of v. Rejects near-zero inputs, whose
// direction is meaningless.
inline Vec l2_normalize(std::span<const double> v) {
    double n = norm(v);
    if (n <= 1e-12) throw DegenerateInputError("l2_normalize: norm below 1e-12");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// d_cos(u, v) = 1 - u.v / (|u| |v|), clamped into [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimensionError("cosine_distance: size mismatch");
    double nu = norm(u);
    double nv = norm(v);
    if (nu <= 1e-12 || nv <= 1e-12) {
        throw DegenerateInputError("cosine_distance: zero vector");
    }
    double d = 1.0 - dot(u, v) / (nu * nv);
    return std::clamp(d, 0.0, 2.0);
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    return 1.0 - cosine_distance(u, v);
}

inline double logsumexp(std::span<const double> z) {
    if (z.empty()) throw DimensionError("logsumexp: empty input");
    double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double x : z) s += std::exp(x - m);
    return m + std::log(s);
}

// Max-shift softmax: never overflows for finite input.
inline ProbabilityVector softmax(std::span<const double> z) {
    if (z.empty()) throw DimensionError("softmax: empty input");
    double m = *std::max_element(z.begin(), z.end());
    Vec p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

// Vector-Jacobian product of softmax: given p = softmax(z) and g = dL/dp,
// returns dL/dz = p .* (g - <p, g>).
inline Vec softmax_vjp(std::span<const double> p, std::span<const double> g) {
    if (p.size() != g.size()) throw DimensionError("softmax_vjp: size mismatch");
    double pg = dot(p, g);
    Vec out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (g[i] - pg);
    return out;
}

inline bool sum_is_one(std::span<const double> p, double tol = 1e-9) {
    double s = 0.0;
    for (double x : p) s += x;
    return std::abs(s - 1.0) <= tol;
}

// y = M x
inline Vec matvec(const Mat& m, std::span<const double> x) {
    if (x.size() != m.cols) throw DimensionError("matvec: size mismatch");
    Vec y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.a.data() + r * m.cols;
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

// y = M^T x
inline Vec matvec_transposed(const Mat& m, std::span<const double> x) {
    if (x.size() != m.rows) throw DimensionError("matvec_transposed: size mismatch");
    Vec y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.a.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
    }
    return y;
}

}  // namespace uir
