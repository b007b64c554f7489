#pragma once

#include <cstddef>
#include <vector>

#include "uir/numerics.hpp"
#include "uir/rng.hpp"

namespace uir {

enum class Activation { relu, none };

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;    // out
    Activation activation = Activation::relu;
};

// Feed-forward embedding network plus a classification head whose rows act as
// identity centers on the unit sphere. Head rows are stored unnormalized and
// normalized on the fly in each forward pass, so optimizer updates stay
// unconstrained.
struct EmbeddingModel {
    std::vector<DenseLayer> layers;
    Mat head;  // n_known x embed_dim

    std::size_t input_dim() const { return layers.empty() ? head.cols : layers.front().weight.cols; }
    std::size_t embed_dim() const { return head.cols; }
    std::size_t n_known() const { return head.rows; }
};

inline void validate(const EmbeddingModel& m) {
    std::size_t d = m.input_dim();
    for (const auto& l : m.layers) {
        if (l.weight.cols != d) throw DimensionError("model: layer input dim mismatch");
        if (l.bias.size() != l.weight.rows) throw DimensionError("model: bias dim mismatch");
        d = l.weight.rows;
    }
    if (m.head.cols != d) throw DimensionError("model: head dim mismatch");
    if (m.head.rows == 0) throw DimensionError("model: empty head");
}

// Everything the backward pass needs from one forward evaluation.
// activations[0] is the input; activations[i] the output of layer i-1.
struct ForwardTrace {
    std::vector<Vec> activations;
    std::vector<Vec> preactivations;  // one per layer
    Vec embedding;                    // last activation, before normalization
    Vec feature;                      // unit-norm embedding f
    Vec cosines;                      // f . head_row_i / |head_row_i|
    double embedding_norm = 0.0;
    bool degenerate = false;  // embedding norm below 1e-12; feature/cosines unset
};

inline ForwardTrace forward(const EmbeddingModel& model, std::span<const double> input) {
    if (input.size() != model.input_dim()) throw DimensionError("forward: input dim mismatch");
    ForwardTrace t;
    t.activations.reserve(model.layers.size() + 1);
    t.preactivations.reserve(model.layers.size());
    t.activations.push_back(to_vec(input));
    for (const auto& layer : model.layers) {
        Vec z = matvec(layer.weight, t.activations.back());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
        t.preactivations.push_back(z);
        if (layer.activation == Activation::relu) {
            for (double& x : z) x = x > 0.0 ? x : 0.0;
        }
        t.activations.push_back(std::move(z));
    }
    t.embedding = t.activations.back();
    t.embedding_norm = norm(t.embedding);
    if (t.embedding_norm <= 1e-12) {
        t.degenerate = true;
        return t;
    }
    t.feature.resize(t.embedding.size());
    for (std::size_t i = 0; i < t.embedding.size(); ++i) {
        t.feature[i] = t.embedding[i] / t.embedding_norm;
    }
    t.cosines.resize(model.head.rows);
    for (std::size_t r = 0; r < model.head.rows; ++r) {
        auto row = model.head.row(r);
        double rn = norm(row);
        if (rn <= 1e-12) throw DegenerateInputError("forward: zero head row");
        t.cosines[r] = dot(t.feature, row) / rn;
    }
    return t;
}

// Scaled margin-free logits s * cosines.
inline Vec head_logits(const ForwardTrace& trace, double s) {
    Vec out(trace.cosines.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * trace.cosines[i];
    return out;
}

// Parameter gradients, same shape as the model.
struct Gradients {
    std::vector<Mat> layer_weight;
    std::vector<Vec> layer_bias;
    Mat head;

    static Gradients zeros_like(const EmbeddingModel& m) {
        Gradients g;
        g.layer_weight.reserve(m.layers.size());
        g.layer_bias.reserve(m.layers.size());
        for (const auto& l : m.layers) {
            g.layer_weight.emplace_back(l.weight.rows, l.weight.cols);
            g.layer_bias.emplace_back(l.bias.size(), 0.0);
        }
        g.head = Mat(m.head.rows, m.head.cols);
        return g;
    }

    void set_zero() {
        for (auto& w : layer_weight) std::fill(w.a.begin(), w.a.end(), 0.0);
        for (auto& b : layer_bias) std::fill(b.begin(), b.end(), 0.0);
        std::fill(head.a.begin(), head.a.end(), 0.0);
    }

    // this += alpha * other
    void add_scaled(const Gradients& other, double alpha) {
        for (std::size_t l = 0; l < layer_weight.size(); ++l) {
            for (std::size_t i = 0; i < layer_weight[l].a.size(); ++i) {
                layer_weight[l].a[i] += alpha * other.layer_weight[l].a[i];
            }
            for (std::size_t i = 0; i < layer_bias[l].size(); ++i) {
                layer_bias[l][i] += alpha * other.layer_bias[l][i];
            }
        }
        for (std::size_t i = 0; i < head.a.size(); ++i) head.a[i] += alpha * other.head.a[i];
    }
};

// Backpropagates dL/dcosines through the normalized head, the feature
// normalization, and the dense layers, writing parameter gradients into out.
// Both normalizations contribute their projection terms: the gradient that
// reaches the raw embedding is orthogonal to the feature direction, and each
// head-row gradient is orthogonal to that row's direction.
inline void backward(const EmbeddingModel& model, const ForwardTrace& trace,
                     std::span<const double> grad_cosines, Gradients& out) {
    if (grad_cosines.size() != model.head.rows) {
        throw DimensionError("backward: gradient dim mismatch");
    }
    out.set_zero();
    if (trace.degenerate) return;

    const Vec& f = trace.feature;
    Vec grad_f(f.size(), 0.0);
    for (std::size_t r = 0; r < model.head.rows; ++r) {
        double g = grad_cosines[r];
        auto row = model.head.row(r);
        double rn = norm(row);
        double c = trace.cosines[r];
        auto hrow = out.head.row(r);
        for (std::size_t i = 0; i < f.size(); ++i) {
            double w_hat = row[i] / rn;
            // d cos_r / d w_r = (f - cos_r * w_hat) / |w_r|
            hrow[i] = g * (f[i] - c * w_hat) / rn;
            grad_f[i] += g * w_hat;
        }
    }

    // Through f = e / |e|: grad_e = (grad_f - <f, grad_f> f) / |e|.
    double fg = dot(f, grad_f);
    Vec grad_a(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        grad_a[i] = (grad_f[i] - fg * f[i]) / trace.embedding_norm;
    }

    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const auto& layer = model.layers[l];
        Vec grad_z = std::move(grad_a);
        if (layer.activation == Activation::relu) {
            const Vec& z = trace.preactivations[l];
            for (std::size_t i = 0; i < grad_z.size(); ++i) {
                if (z[i] <= 0.0) grad_z[i] = 0.0;
            }
        }
        const Vec& a_prev = trace.activations[l];
        Mat& gw = out.layer_weight[l];
        for (std::size_t r = 0; r < gw.rows; ++r) {
            double gz = grad_z[r];
            double* wrow = gw.a.data() + r * gw.cols;
            for (std::size_t c = 0; c < gw.cols; ++c) wrow[c] = gz * a_prev[c];
            out.layer_bias[l][r] = gz;
        }
        if (l > 0) grad_a = matvec_transposed(layer.weight, grad_z);
    }
}

// Xavier-uniform layers, unit-Gaussian-direction head rows.
inline EmbeddingModel init_model(std::size_t input_dim,
                                 const std::vector<std::size_t>& hidden_widths,
                                 std::size_t embed_dim, std::size_t n_known, Rng& rng) {
    if (input_dim < 1 || embed_dim < 1 || n_known < 1) {
        throw InvalidArgument("init_model: dimensions must be positive");
    }
    EmbeddingModel m;
    std::size_t in = input_dim;
    std::vector<std::size_t> widths = hidden_widths;
    widths.push_back(embed_dim);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        DenseLayer layer;
        std::size_t out_dim = widths[i];
        layer.weight = Mat(out_dim, in);
        double a = std::sqrt(6.0 / static_cast<double>(in + out_dim));
        for (double& w : layer.weight.a) w = rng.uniform(-a, a);
        layer.bias.assign(out_dim, 0.0);
        // Last layer linear so the embedding can use the full space.
        layer.activation = (i + 1 == widths.size()) ? Activation::none : Activation::relu;
        m.layers.push_back(std::move(layer));
        in = out_dim;
    }
    m.head = Mat(n_known, embed_dim);
    for (std::size_t r = 0; r < n_known; ++r) {
        Vec row(embed_dim);
        for (double& x : row) x = rng.gaussian();
        row = l2_normalize(row);
        std::copy(row.begin(), row.end(), m.head.row(r).begin());
    }
    validate(m);
    return m;
}

}  // namespace uir
