#pragma once

#include <array>
#include <cstddef>

#include "uir/data.hpp"
#include "uir/model.hpp"
#include "uir/parallel.hpp"

namespace uir {

struct FilterReport {
    std::size_t kept = 0;
    std::size_t discarded = 0;
    double threshold = 0.0;
    // Max-activation histogram, 10 uniform bins over [0, 1].
    std::array<std::size_t, 10> histogram{};
};

// Max known-class activation of one sample under the margin-free scaled
// logits s*cos. Degenerate embeddings score 0 (no confident assignment).
inline double max_activation(const EmbeddingModel& model, std::span<const double> input,
                             double scale) {
    ForwardTrace t = forward(model, input);
    if (t.degenerate) return 0.0;
    Vec p = softmax(head_logits(t, scale));
    return *std::max_element(p.begin(), p.end());
}

// Drops unlabeled samples the model confidently claims as a known identity
// (max activation strictly above threshold). Order of kept rows preserved.
inline std::pair<SampleSet, FilterReport> filter_overlap(const EmbeddingModel& model,
                                                         const SampleSet& unlabeled,
                                                         double threshold, double scale,
                                                         std::size_t workers = 0) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw InvalidArgument("filter_overlap: threshold must be in (0, 1]");
    }
    if (unlabeled.count() > 0 && unlabeled.dim() != model.input_dim()) {
        throw DimensionError("filter_overlap: input dim mismatch");
    }
    FilterReport report;
    report.threshold = threshold;

    std::vector<double> maxima(unlabeled.count());
    parallel_for(unlabeled.count(), workers, [&](std::size_t i) {
        maxima[i] = max_activation(model, unlabeled.inputs.row(i), scale);
    });

    std::vector<std::size_t> keep;
    keep.reserve(unlabeled.count());
    for (std::size_t i = 0; i < unlabeled.count(); ++i) {
        double m = maxima[i];
        std::size_t bin = std::min<std::size_t>(9, static_cast<std::size_t>(m * 10.0));
        ++report.histogram[bin];
        if (m > threshold) {
            ++report.discarded;
        } else {
            ++report.kept;
            keep.push_back(i);
        }
    }

    SampleSet out;
    out.provenance = unlabeled.provenance;
    out.inputs = Mat(keep.size(), unlabeled.dim());
    out.labels.reserve(keep.size());
    bool has_truth = unlabeled.true_identity.size() == unlabeled.count();
    if (has_truth) out.true_identity.reserve(keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
        auto src = unlabeled.inputs.row(keep[j]);
        std::copy(src.begin(), src.end(), out.inputs.row(j).begin());
        out.labels.push_back(unlabeled.labels[keep[j]]);
        if (has_truth) out.true_identity.push_back(unlabeled.true_identity[keep[j]]);
    }
    return {std::move(out), report};
}

}  // namespace uir
