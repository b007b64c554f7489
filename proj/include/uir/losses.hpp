#pragma once

#include <cmath>
#include <cstddef>

#include "uir/numerics.hpp"

namespace uir {

// Loss value together with its analytic gradient w.r.t. the logits it was
// evaluated on.
struct LossResult {
    double value = 0.0;
    Vec grad_logits;
};

// Loss value with gradient pulled back to the cosine stage, ready to feed the
// model backward pass.
struct CosineLossResult {
    double value = 0.0;
    Vec grad_cosines;
};

struct LossWeights {
    double w = 0.1;
};

namespace detail {
inline void check_target(std::size_t n, std::size_t target, const char* who) {
    if (target >= n) throw IndexError(std::string(who) + ": target index out of range");
}
}  // namespace detail

// Additive-angular-margin logits: every entry is rescaled to s*cos(theta),
// and the target entry gets the margin inside the angle, s*cos(theta + m).
// Cosines are clamped into [-1, 1] before the arccos.
inline Vec arcface_logits(std::span<const double> cosines, std::size_t target, double s,
                          double m) {
    if (cosines.empty()) throw DimensionError("arcface_logits: empty input");
    detail::check_target(cosines.size(), target, "arcface_logits");
    if (m < 0.0 || m >= 1.5707963267948966) {
        throw InvalidArgument("arcface_logits: margin must be in [0, pi/2)");
    }
    for (double c : cosines) {
        if (std::abs(c) > 1.0 + 1e-6) {
            throw InvalidArgument("arcface_logits: cosine outside [-1, 1]");
        }
    }
    Vec out(cosines.size());
    for (std::size_t j = 0; j < cosines.size(); ++j) out[j] = s * cosines[j];
    double c = std::clamp(cosines[target], -1.0, 1.0);
    out[target] = s * std::cos(std::acos(c) + m);
    return out;
}

// Softmax cross-entropy against a single target class.
// value = -log softmax(logits)[target], grad = softmax(logits) - one_hot.
inline LossResult cross_entropy(std::span<const double> logits, std::size_t target) {
    if (logits.empty()) throw DimensionError("cross_entropy: empty input");
    detail::check_target(logits.size(), target, "cross_entropy");
    LossResult r;
    r.value = logsumexp(logits) - logits[target];
    r.grad_logits = softmax(logits);
    r.grad_logits[target] -= 1.0;
    return r;
}

// Rejection loss for a sample that belongs to none of the n known classes:
// with p = softmax(logits), value = -sum_i log p_i. Minimized (at n*ln n)
// exactly when p is uniform, i.e. the sample is rejected by every class.
//
// The plain variant takes the log of the raw probabilities and blows up once
// some p_i underflows. The stabilized variant applies a second softmax first,
// which bounds every probability below by 1/(n-1+e) and leaves the argmax
// unchanged; its gradient is chained through both softmax layers.
inline LossResult uir_loss(std::span<const double> logits, bool stabilized) {
    std::size_t n = logits.size();
    if (n < 2) throw DimensionError("uir_loss: need at least 2 classes");
    LossResult r;
    Vec p = softmax(logits);
    if (!stabilized) {
        double v = 0.0;
        for (double pi : p) v -= std::log(pi);
        r.value = v;
        r.grad_logits.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            r.grad_logits[j] = static_cast<double>(n) * p[j] - 1.0;
        }
        return r;
    }
    Vec p2 = softmax(p);
    double v = 0.0;
    for (double pi : p2) v -= std::log(pi);
    r.value = v;
    // dL/dp2 = -1/p2, pulled back through both softmax layers.
    Vec g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = -1.0 / p2[j];
    Vec gp = softmax_vjp(p2, g);
    r.grad_logits = softmax_vjp(p, gp);
    return r;
}

inline double combined_loss(double l_sup, double l_uir, const LossWeights& weights) {
    if (!(weights.w >= 0.0)) throw InvalidArgument("combined_loss: weight must be >= 0");
    if (!std::isfinite(l_sup) || !std::isfinite(l_uir)) {
        throw InvalidArgument("combined_loss: non-finite loss input");
    }
    return l_sup + weights.w * l_uir;
}

// Margin cross-entropy evaluated directly on cosines; the returned gradient
// is w.r.t. the cosines, i.e. the margin+scale map is already pulled back.
inline CosineLossResult arcface_cross_entropy(std::span<const double> cosines,
                                              std::size_t target, double s, double m) {
    Vec logits = arcface_logits(cosines, target, s, m);
    LossResult ce = cross_entropy(logits, target);
    CosineLossResult r;
    r.value = ce.value;
    r.grad_cosines.resize(cosines.size());
    for (std::size_t j = 0; j < cosines.size(); ++j) {
        r.grad_cosines[j] = s * ce.grad_logits[j];
    }
    // Target entry: d/dc s*cos(acos(c) + m) = s*sin(theta + m)/sin(theta).
    double c = std::clamp(cosines[target], -1.0, 1.0);
    double theta = std::acos(c);
    double sin_theta = std::max(std::sqrt(std::max(0.0, 1.0 - c * c)), 1e-12);
    r.grad_cosines[target] =
        ce.grad_logits[target] * s * std::sin(theta + m) / sin_theta;
    return r;
}

// Rejection loss on margin-free scaled logits s*cosines (an unlabeled sample
// has no target class, so no margin applies).
inline CosineLossResult uir_loss_on_cosines(std::span<const double> cosines, double s,
                                            bool stabilized) {
    Vec logits(cosines.size());
    for (std::size_t j = 0; j < cosines.size(); ++j) logits[j] = s * cosines[j];
    LossResult lr = uir_loss(logits, stabilized);
    CosineLossResult r;
    r.value = lr.value;
    r.grad_cosines.resize(cosines.size());
    for (std::size_t j = 0; j < cosines.size(); ++j) {
        r.grad_cosines[j] = s * lr.grad_logits[j];
    }
    return r;
}

}  // namespace uir
