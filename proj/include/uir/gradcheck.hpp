#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uir/losses.hpp"
#include "uir/model.hpp"
#include "uir/rng.hpp"

namespace uir {

struct GradCheckReport {
    std::string name;
    std::size_t instances = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass() const { return instances > 0 && max_rel_err <= tolerance; }
};

namespace gradcheck_detail {

inline constexpr double kStep = 1e-5;

template <class F>
Vec fd_gradient(F&& f, Vec x) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + kStep;
        double fp = f(x);
        x[i] = keep - kStep;
        double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * kStep);
    }
    return g;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

inline double max_rel_err(const Vec& analytic, const Vec& numeric) {
    if (analytic.size() != numeric.size()) throw DimensionError("gradcheck: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, rel_err(analytic[i], numeric[i]));
    }
    return worst;
}

inline Vec flatten_params(const EmbeddingModel& m) {
    Vec out;
    for (const auto& layer : m.layers) {
        out.insert(out.end(), layer.weight.a.begin(), layer.weight.a.end());
        out.insert(out.end(), layer.bias.begin(), layer.bias.end());
    }
    out.insert(out.end(), m.head.a.begin(), m.head.a.end());
    return out;
}

inline void unflatten_params(EmbeddingModel& m, const Vec& v) {
    std::size_t at = 0;
    auto take = [&](std::vector<double>& dst) {
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(at),
                  v.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
        at += dst.size();
    };
    for (auto& layer : m.layers) {
        take(layer.weight.a);
        take(layer.bias);
    }
    take(m.head.a);
    if (at != v.size()) throw DimensionError("gradcheck: parameter count mismatch");
}

inline Vec flatten_grads(const Gradients& g) {
    Vec out;
    for (std::size_t l = 0; l < g.layer_weight.size(); ++l) {
        out.insert(out.end(), g.layer_weight[l].a.begin(), g.layer_weight[l].a.end());
        out.insert(out.end(), g.layer_bias[l].begin(), g.layer_bias[l].end());
    }
    out.insert(out.end(), g.head.a.begin(), g.head.a.end());
    return out;
}

}  // namespace gradcheck_detail

inline GradCheckReport gradcheck_cross_entropy(std::size_t instances, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport rep{"cross_entropy", 0, 0.0, 1e-6};
    Rng rng(derive_seed(seed, 0xa1U));
    for (std::size_t k = 0; k < instances; ++k) {
        std::size_t n = 2 + rng.index(7);
        Vec z(n);
        for (double& x : z) x = rng.uniform(-3.0, 3.0);
        std::size_t target = rng.index(n);
        Vec analytic = cross_entropy(z, target).grad_logits;
        Vec numeric = gd::fd_gradient(
            [&](const Vec& v) { return cross_entropy(v, target).value; }, z);
        rep.max_rel_err = std::max(rep.max_rel_err, gd::max_rel_err(analytic, numeric));
        ++rep.instances;
    }
    return rep;
}

inline GradCheckReport gradcheck_uir(bool stabilized, std::size_t instances, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport rep{stabilized ? "uir_stabilized" : "uir_plain", 0, 0.0, 5e-6};
    Rng rng(derive_seed(seed, stabilized ? 0xb2U : 0xb3U));
    for (std::size_t k = 0; k < instances; ++k) {
        std::size_t n = 2 + rng.index(7);
        Vec z(n);
        for (double& x : z) x = rng.uniform(-3.0, 3.0);
        Vec analytic = uir_loss(z, stabilized).grad_logits;
        Vec numeric =
            gd::fd_gradient([&](const Vec& v) { return uir_loss(v, stabilized).value; }, z);
        rep.max_rel_err = std::max(rep.max_rel_err, gd::max_rel_err(analytic, numeric));
        ++rep.instances;
    }
    return rep;
}

inline GradCheckReport gradcheck_arcface(std::size_t instances, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport rep{"arcface_cross_entropy", 0, 0.0, 5e-5};
    Rng rng(derive_seed(seed, 0xc4U));
    const double s = 64.0, m = 0.5;
    for (std::size_t k = 0; k < instances; ++k) {
        std::size_t n = 2 + rng.index(7);
        Vec c(n);
        for (double& x : c) x = rng.uniform(-0.95, 0.95);
        std::size_t target = rng.index(n);
        Vec analytic = arcface_cross_entropy(c, target, s, m).grad_cosines;
        Vec numeric = gd::fd_gradient(
            [&](const Vec& v) { return arcface_cross_entropy(v, target, s, m).value; }, c);
        rep.max_rel_err = std::max(rep.max_rel_err, gd::max_rel_err(analytic, numeric));
        ++rep.instances;
    }
    return rep;
}

// End-to-end check of backward(): combined supervised + weighted UIR loss,
// differentiated through the dense stack, embedding normalization, and the
// normalized head rows. Instances that land near a ReLU kink or a cosine
// saturation point are redrawn, since finite differences are invalid there.
inline GradCheckReport gradcheck_model(std::size_t instances, std::uint64_t seed) {
    namespace gd = gradcheck_detail;
    GradCheckReport rep{"model_backward", 0, 0.0, 1e-4};
    Rng rng(derive_seed(seed, 0xd5U));
    const double s = 64.0, m = 0.5, w = 0.1;
    const std::size_t d_in = 6, embed = 5, classes = 4;

    for (std::size_t k = 0; k < instances; ++k) {
        EmbeddingModel model = init_model(d_in, {8}, embed, classes, rng);
        Vec x(d_in);
        std::size_t target = 0;
        bool clean = false;
        for (std::size_t attempt = 0; attempt < 100 && !clean; ++attempt) {
            for (double& v : x) v = rng.gaussian();
            target = rng.index(classes);
            ForwardTrace t = forward(model, x);
            if (t.degenerate || t.embedding_norm < 1e-3) continue;
            clean = true;
            for (std::size_t l = 0; l < model.layers.size() && clean; ++l) {
                if (model.layers[l].activation != Activation::relu) continue;
                for (double z : t.preactivations[l]) {
                    if (std::abs(z) < 1e-3) clean = false;
                }
            }
            for (double c : t.cosines) {
                if (std::abs(c) > 0.99) clean = false;
            }
        }
        if (!clean) continue;

        auto loss_at = [&](const EmbeddingModel& mm) {
            ForwardTrace t = forward(mm, x);
            if (t.degenerate) throw DegenerateInputError("gradcheck: degenerate during probe");
            return arcface_cross_entropy(t.cosines, target, s, m).value +
                   w * uir_loss_on_cosines(t.cosines, s, true).value;
        };

        ForwardTrace t = forward(model, x);
        auto ce = arcface_cross_entropy(t.cosines, target, s, m);
        auto uir = uir_loss_on_cosines(t.cosines, s, true);
        Vec grad_cos(t.cosines.size());
        for (std::size_t i = 0; i < grad_cos.size(); ++i) {
            grad_cos[i] = ce.grad_cosines[i] + w * uir.grad_cosines[i];
        }
        Gradients grads = Gradients::zeros_like(model);
        backward(model, t, grad_cos, grads);
        Vec analytic = gd::flatten_grads(grads);

        EmbeddingModel probe = model;
        Vec numeric = gd::fd_gradient(
            [&](const Vec& params) {
                gd::unflatten_params(probe, params);
                return loss_at(probe);
            },
            gd::flatten_params(model));
        rep.max_rel_err = std::max(rep.max_rel_err, gd::max_rel_err(analytic, numeric));
        ++rep.instances;
    }
    return rep;
}

inline std::vector<GradCheckReport> run_gradient_checks(std::uint64_t seed,
                                                        std::size_t instances = 100) {
    return {
        gradcheck_cross_entropy(instances, seed),
        gradcheck_uir(false, instances, seed),
        gradcheck_uir(true, instances, seed),
        gradcheck_arcface(instances, seed),
        gradcheck_model(instances, seed),
    };
}

}  // namespace uir
