#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "uir/data.hpp"
#include "uir/filter.hpp"
#include "uir/model.hpp"
#include "uir/parallel.hpp"
#include "uir/rng.hpp"

namespace uir {

struct VerificationProtocol {
    std::vector<std::pair<std::size_t, std::size_t>> genuine;
    std::vector<std::pair<std::size_t, std::size_t>> impostor;
};

// Pairs held-out samples by their generating identity: every within-identity
// pair is genuine; impostor pairs are sampled (with replacement) to
// impostor_multiple times the genuine count. Rows with unknown identity
// (sentinel) are left out entirely.
inline VerificationProtocol build_protocol(const SampleSet& samples,
                                           std::size_t impostor_multiple, std::uint64_t seed) {
    if (impostor_multiple < 1) throw InvalidArgument("protocol: impostor_multiple must be >= 1");
    const auto& ids = samples.true_identity;
    if (ids.size() != samples.count()) throw InvalidArgument("protocol: samples lack identity info");

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != kUnlabeled) eligible.push_back(i);
    }
    VerificationProtocol p;
    for (std::size_t a = 0; a < eligible.size(); ++a) {
        for (std::size_t b = a + 1; b < eligible.size(); ++b) {
            if (ids[eligible[a]] == ids[eligible[b]]) p.genuine.emplace_back(eligible[a], eligible[b]);
        }
    }
    if (p.genuine.empty()) throw InvalidArgument("protocol: no genuine pairs");

    bool two_ids = false;
    for (std::size_t a = 1; a < eligible.size() && !two_ids; ++a) {
        two_ids = ids[eligible[a]] != ids[eligible[0]];
    }
    if (!two_ids) throw InvalidArgument("protocol: need at least two identities");

    Rng rng(derive_seed(seed, 0x8fU));
    std::size_t target = impostor_multiple * p.genuine.size();
    std::size_t guard = 0;
    while (p.impostor.size() < target) {
        std::size_t a = eligible[rng.index(eligible.size())];
        std::size_t b = eligible[rng.index(eligible.size())];
        if (ids[a] != ids[b]) p.impostor.emplace_back(a, b);
        if (++guard > 1000 * target + 1000) throw InvalidArgument("protocol: impostor sampling stalled");
    }
    return p;
}

// Unit-norm embeddings, one row per input; degenerate embeddings come back
// as zero rows.
inline Mat embed_features(const EmbeddingModel& model, const Mat& inputs,
                          std::size_t workers = 0) {
    if (inputs.cols != model.input_dim()) throw DimensionError("embed: input dim mismatch");
    Mat out(inputs.rows, model.embed_dim());
    parallel_for(inputs.rows, workers, [&](std::size_t i) {
        ForwardTrace t = forward(model, inputs.row(i));
        if (t.degenerate) return;  // row stays zero
        std::copy(t.feature.begin(), t.feature.end(), out.row(i).begin());
    });
    return out;
}

struct Postprocess {
    bool normalize = false;  // N flag
    bool flip = false;       // F flag
};

inline std::string postprocess_tag(Postprocess p) {
    return std::string("N") + (p.normalize ? "1" : "0") + "F" + (p.flip ? "1" : "0");
}

inline Postprocess parse_postprocess(const std::string& tag) {
    if (tag.size() == 4 && tag[0] == 'N' && tag[2] == 'F' && (tag[1] == '0' || tag[1] == '1') &&
        (tag[3] == '0' || tag[3] == '1')) {
        return {tag[1] == '1', tag[3] == '1'};
    }
    throw FormatError("postprocess: expected tag of the form N{0,1}F{0,1}, got " + tag);
}

// F1 sums the two views elementwise; N1 l2-normalizes each row. Sum first,
// then normalize. alt_view must be present exactly when flip is set.
inline Mat postprocess_features(const Mat& raw, const Mat* alt_view, Postprocess p) {
    if (p.flip && alt_view == nullptr) {
        throw InvalidArgument("postprocess: flip requested without an alternate view");
    }
    Mat out = raw;
    if (p.flip) {
        if (alt_view->rows != raw.rows || alt_view->cols != raw.cols) {
            throw DimensionError("postprocess: view shape mismatch");
        }
        for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += alt_view->a[i];
    }
    if (p.normalize) {
        for (std::size_t r = 0; r < out.rows; ++r) {
            Vec v = l2_normalize(to_vec(out.row(r)));
            std::copy(v.begin(), v.end(), out.row(r).begin());
        }
    }
    return out;
}

inline std::pair<Vec, Vec> score_pairs(const Mat& features, const VerificationProtocol& protocol) {
    auto score_list = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
        Vec out;
        out.reserve(pairs.size());
        for (auto [a, b] : pairs) {
            if (a >= features.rows || b >= features.rows) {
                throw IndexError("score_pairs: pair index out of range");
            }
            out.push_back(cosine_similarity(features.row(a), features.row(b)));
        }
        return out;
    };
    return {score_list(protocol.genuine), score_list(protocol.impostor)};
}

struct TarResult {
    double tar = 0.0;
    double threshold = 0.0;
};

// Threshold = smallest observed impostor score (or +inf) whose acceptance
// fraction under the rule "accept iff score >= t" stays within the FAR
// budget; TAR is the genuine acceptance fraction at that threshold.
inline TarResult tar_at_far(const Vec& genuine, const Vec& impostor, double far) {
    if (genuine.empty() || impostor.empty()) throw InvalidArgument("tar_at_far: empty score list");
    if (!(far > 0.0 && far < 1.0)) throw InvalidArgument("tar_at_far: far must be in (0, 1)");
    Vec imp = impostor;
    std::sort(imp.begin(), imp.end());
    std::size_t n = imp.size();
    // Largest acceptable impostor count under the exact fractional test.
    std::size_t budget = n;
    while (static_cast<double>(budget) / static_cast<double>(n) > far) --budget;

    TarResult res;
    if (budget >= n) {
        res.threshold = imp.front();
    } else {
        // First index that must survive is n - budget; a candidate value
        // tied across that boundary would accept too many.
        std::size_t p = n - budget;
        auto it = p == 0 ? imp.begin() : std::upper_bound(imp.begin(), imp.end(), imp[p - 1]);
        res.threshold = it == imp.end() ? std::numeric_limits<double>::infinity() : *it;
    }
    std::size_t accepted = 0;
    for (double g : genuine) {
        if (g >= res.threshold) ++accepted;
    }
    res.tar = static_cast<double>(accepted) / static_cast<double>(genuine.size());
    return res;
}

// Mean pairwise cosine distance between classifier weight rows.
inline double center_sparsity(const Mat& head) {
    if (head.rows < 2) throw InvalidArgument("center_sparsity: need at least two rows");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < head.rows; ++a) {
        for (std::size_t b = a + 1; b < head.rows; ++b) {
            sum += cosine_distance(head.row(a), head.row(b));
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

struct ActivationStats {
    std::vector<std::pair<double, double>> cdf;  // threshold -> fraction of maxima strictly below
    double mean = 0.0;
};

inline std::vector<double> default_activation_thresholds() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

inline ActivationStats activation_stats(const EmbeddingModel& model, const SampleSet& samples,
                                        const std::vector<double>& thresholds, double scale,
                                        std::size_t workers = 0) {
    if (samples.count() == 0) throw InvalidArgument("activation_stats: empty sample set");
    if (thresholds.empty()) throw InvalidArgument("activation_stats: empty threshold list");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        bool ok = thresholds[i] > 0.0 && thresholds[i] < 1.0 &&
                  (i == 0 || thresholds[i] > thresholds[i - 1]);
        if (!ok) throw InvalidArgument("activation_stats: thresholds must be strictly increasing in (0, 1)");
    }
    Vec maxima(samples.count());
    parallel_for(samples.count(), workers, [&](std::size_t i) {
        maxima[i] = max_activation(model, samples.inputs.row(i), scale);
    });
    ActivationStats st;
    double sum = 0.0;
    for (double m : maxima) sum += m;
    st.mean = sum / static_cast<double>(maxima.size());
    for (double t : thresholds) {
        std::size_t below = 0;
        for (double m : maxima) {
            if (m < t) ++below;
        }
        st.cdf.emplace_back(t, static_cast<double>(below) / static_cast<double>(maxima.size()));
    }
    return st;
}

struct MetricsReport {
    std::string postprocess;
    std::vector<std::pair<double, TarResult>> tar_at_far;  // far -> result
    std::size_t genuine_pairs = 0;
    std::size_t impostor_pairs = 0;
    double avg_center_distance = 0.0;
    std::vector<std::pair<double, double>> activation_cdf;
    double mean_activation = 0.0;
};

}  // namespace uir
