#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uir/data.hpp"
#include "uir/filter.hpp"
#include "uir/losses.hpp"
#include "uir/model.hpp"
#include "uir/parallel.hpp"
#include "uir/rng.hpp"

namespace uir {

struct TrainConfig {
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    double labeled_fraction = 0.75;  // semi-supervised phase batch split
    double uir_weight = 0.1;
    double margin = 0.5;
    double scale = 64.0;
    bool stabilized = true;
    std::size_t supervised_epochs = 200;  // upper bound; plateau rule may stop earlier
    double plateau_tolerance = 1e-4;
    std::size_t plateau_patience = 3;
    std::size_t semisup_epochs = 20;
    std::uint64_t seed = 1;
    // Re-run overlap filtering against the current model at every
    // semi-supervised epoch instead of relying on a pre-filtered pool.
    bool refilter_each_epoch = false;
    double filter_threshold = 0.9;
    // Architecture (hidden ReLU widths; a final linear projection to
    // embed_dim is always appended).
    std::vector<std::size_t> hidden_widths = {64};
    std::size_t embed_dim = 32;
    std::size_t n_classes = 0;  // 0 = infer from labels
};

inline void validate_config(const TrainConfig& c) {
    if (c.lr < 0.0) throw InvalidArgument("train: negative lr");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw InvalidArgument("train: momentum must be in [0, 1)");
    if (c.batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
    if (!(c.labeled_fraction > 0.0 && c.labeled_fraction <= 1.0)) {
        throw InvalidArgument("train: labeled_fraction must be in (0, 1]");
    }
    if (c.uir_weight < 0.0) throw InvalidArgument("train: negative uir_weight");
    if (!(c.margin >= 0.0 && c.margin < 1.5707963267948966)) throw InvalidArgument("train: bad margin");
    if (c.scale <= 0.0) throw InvalidArgument("train: scale must be positive");
    if (c.embed_dim < 1) throw InvalidArgument("train: embed_dim must be >= 1");
    if (c.plateau_patience < 1) throw InvalidArgument("train: plateau_patience must be >= 1");
}

struct EpochRecord {
    std::size_t epoch = 0;
    double supervised_loss = 0.0;
    double uir_loss = 0.0;       // 0 when the epoch had no unlabeled portion
    double combined_loss = 0.0;  // supervised + w * uir
    double train_accuracy = 0.0;
    double wall_seconds = 0.0;
    std::size_t steps = 0;
    std::size_t skipped_degenerate = 0;
    std::size_t unlabeled_pool = 0;  // pool size this epoch (after any refiltering)
};

struct TrainLog {
    std::string phase;
    std::size_t batch_size = 0;
    bool stopped_early = false;
    std::vector<EpochRecord> epochs;
    std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// v <- momentum*v - lr*g; p <- p + v
inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
                     double momentum, std::span<double> velocity) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw DimensionError("sgd_step: shape mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] - lr * grads[i];
        params[i] += velocity[i];
    }
}

inline void apply_sgd(EmbeddingModel& model, const Gradients& grads, Gradients& velocity,
                      double lr, double momentum) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        sgd_step(model.layers[l].weight.a, grads.layer_weight[l].a, lr, momentum,
                 velocity.layer_weight[l].a);
        sgd_step(model.layers[l].bias, grads.layer_bias[l], lr, momentum, velocity.layer_bias[l]);
    }
    sgd_step(model.head.a, grads.head.a, lr, momentum, velocity.head.a);
}

struct StepStats {
    double sup_loss = 0.0;       // mean over contributing labeled samples
    double uir_loss = 0.0;       // mean over contributing unlabeled samples
    double combined_loss = 0.0;  // sup + w * uir
    std::size_t labeled_used = 0;
    std::size_t unlabeled_used = 0;
    std::size_t correct = 0;
    std::size_t skipped = 0;  // degenerate embeddings
};

// One SGD step on a composed batch (unlabeled portion may be empty, which
// makes this a plain supervised step). Forward passes fan out to workers;
// gradient reduction runs in sample order so results do not depend on the
// worker count.
inline StepStats semisup_step(EmbeddingModel& model, const Batch& batch, const TrainConfig& cfg,
                              Gradients& velocity, std::size_t workers = 0) {
    std::size_t nl = batch.labeled_inputs.rows;
    std::size_t nu = batch.unlabeled_inputs.rows;
    StepStats st;

    std::vector<ForwardTrace> traces(nl + nu);
    std::vector<CosineLossResult> pulls(nl + nu);
    parallel_for(nl + nu, workers, [&](std::size_t i) {
        if (i < nl) {
            traces[i] = forward(model, batch.labeled_inputs.row(i));
            if (traces[i].degenerate) return;
            auto label = static_cast<std::size_t>(batch.labels[i]);
            pulls[i] = arcface_cross_entropy(traces[i].cosines, label, cfg.scale, cfg.margin);
        } else {
            traces[i] = forward(model, batch.unlabeled_inputs.row(i - nl));
            if (traces[i].degenerate) return;
            pulls[i] = uir_loss_on_cosines(traces[i].cosines, cfg.scale, cfg.stabilized);
        }
    });

    for (std::size_t i = 0; i < nl + nu; ++i) {
        if (traces[i].degenerate) {
            ++st.skipped;
            continue;
        }
        if (i < nl) {
            ++st.labeled_used;
            st.sup_loss += pulls[i].value;
            auto best = std::max_element(traces[i].cosines.begin(), traces[i].cosines.end());
            if (best - traces[i].cosines.begin() == batch.labels[i]) ++st.correct;
        } else {
            ++st.unlabeled_used;
            st.uir_loss += pulls[i].value;
        }
    }
    if (st.labeled_used > 0) st.sup_loss /= static_cast<double>(st.labeled_used);
    if (st.unlabeled_used > 0) st.uir_loss /= static_cast<double>(st.unlabeled_used);
    st.combined_loss = st.sup_loss + cfg.uir_weight * st.uir_loss;

    Gradients grads = Gradients::zeros_like(model);
    Gradients scratch = Gradients::zeros_like(model);
    for (std::size_t i = 0; i < nl + nu; ++i) {
        if (traces[i].degenerate) continue;
        double alpha = i < nl ? 1.0 / static_cast<double>(st.labeled_used)
                              : cfg.uir_weight / static_cast<double>(st.unlabeled_used);
        backward(model, traces[i], pulls[i].grad_cosines, scratch);
        grads.add_scaled(scratch, alpha);
    }
    apply_sgd(model, grads, velocity, cfg.lr, cfg.momentum);
    return st;
}

namespace detail {

inline void check_labels(const SampleSet& labeled, std::size_t n_classes) {
    for (std::int64_t l : labeled.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
            throw InvalidArgument("train: label out of range for known identity set");
        }
    }
}

inline std::size_t infer_classes(const TrainConfig& cfg, const SampleSet& labeled) {
    if (cfg.n_classes > 0) return cfg.n_classes;
    std::int64_t mx = -1;
    for (std::int64_t l : labeled.labels) mx = std::max(mx, l);
    if (mx < 0) throw InvalidArgument("train: cannot infer class count from unlabeled data");
    return static_cast<std::size_t>(mx) + 1;
}

// Labeled-only epochs: sample without replacement, drop the partial tail.
template <class StepFn>
void run_supervised_epochs(EmbeddingModel& model, const SampleSet& labeled,
                           const TrainConfig& cfg, std::size_t max_epochs, bool plateau,
                           Rng& order_rng, TrainLog& log, const EpochCallback& on_epoch,
                           StepFn&& step) {
    std::vector<std::size_t> order(labeled.count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double prev_loss = 0.0;
    std::size_t streak = 0;
    for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(order);
        EpochRecord rec;
        rec.epoch = log.epochs.size();
        double sup_sum = 0.0;
        std::size_t correct = 0, used = 0;
        for (std::size_t at = 0; at + cfg.batch_size <= order.size(); at += cfg.batch_size) {
            Batch b;
            b.labeled_inputs = Mat(cfg.batch_size, labeled.dim());
            b.labels.resize(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                auto row = labeled.inputs.row(order[at + i]);
                std::copy(row.begin(), row.end(), b.labeled_inputs.row(i).begin());
                b.labels[i] = labeled.labels[order[at + i]];
            }
            StepStats st = step(model, b);
            ++rec.steps;
            rec.skipped_degenerate += st.skipped;
            sup_sum += st.sup_loss * static_cast<double>(st.labeled_used);
            correct += st.correct;
            used += st.labeled_used;
        }
        if (rec.steps == 0) throw InvalidArgument("train: labeled pool smaller than batch size");
        rec.supervised_loss = used > 0 ? sup_sum / static_cast<double>(used) : 0.0;
        rec.combined_loss = rec.supervised_loss;
        rec.train_accuracy = used > 0 ? static_cast<double>(correct) / static_cast<double>(used) : 0.0;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (plateau) {
            if (epoch > 0 && prev_loss - rec.supervised_loss < cfg.plateau_tolerance) {
                ++streak;
            } else {
                streak = 0;
            }
            prev_loss = rec.supervised_loss;
            if (streak >= cfg.plateau_patience) {
                log.stopped_early = true;
                break;
            }
        }
    }
}

}  // namespace detail

// Phase 1: ArcFace cross-entropy on the labeled set until the epoch-mean
// loss plateaus (improvement < plateau_tolerance for plateau_patience
// consecutive epochs) or supervised_epochs is hit.
inline std::pair<EmbeddingModel, TrainLog> train_supervised(const TrainConfig& cfg,
                                                            const SampleSet& labeled,
                                                            std::size_t workers = 0,
                                                            const EpochCallback& on_epoch = {}) {
    validate_config(cfg);
    if (labeled.count() == 0) throw InvalidArgument("train: no labeled data");
    std::size_t n_classes = detail::infer_classes(cfg, labeled);
    detail::check_labels(labeled, n_classes);

    Rng init_rng(derive_seed(cfg.seed, 0x6dU));
    EmbeddingModel model =
        init_model(labeled.dim(), cfg.hidden_widths, cfg.embed_dim, n_classes, init_rng);
    Gradients velocity = Gradients::zeros_like(model);
    Rng order_rng(derive_seed(cfg.seed, 0x51U));

    TrainLog log;
    log.phase = "supervised";
    log.batch_size = cfg.batch_size;
    detail::run_supervised_epochs(model, labeled, cfg, cfg.supervised_epochs, /*plateau=*/true,
                                  order_rng, log, on_epoch, [&](EmbeddingModel& m, const Batch& b) {
                                      return semisup_step(m, b, cfg, velocity, workers);
                                  });
    return {std::move(model), std::move(log)};
}

// Phase 2: combined objective on mixed batches. Epochs are defined by
// exhaustion of the labeled pool; the unlabeled pool reshuffles as needed.
// Momentum state restarts at zero (checkpoints carry no optimizer state).
inline std::pair<EmbeddingModel, TrainLog> train_semisupervised(
    const TrainConfig& cfg, EmbeddingModel model, const SampleSet& labeled,
    const SampleSet& unlabeled_filtered, std::size_t workers = 0,
    const EpochCallback& on_epoch = {}) {
    validate_config(cfg);
    if (labeled.count() == 0) throw InvalidArgument("train: no labeled data");
    validate(model);
    if (model.input_dim() != labeled.dim()) throw DimensionError("train: input dim mismatch");
    detail::check_labels(labeled, model.n_known());

    Gradients velocity = Gradients::zeros_like(model);
    TrainLog log;
    log.phase = "semisupervised";
    log.batch_size = cfg.batch_size;

    if (unlabeled_filtered.count() == 0) {
        log.warnings.push_back(
            "unlabeled pool is empty after filtering; running supervised steps instead");
        Rng order_rng(derive_seed(cfg.seed, 0x52U));
        detail::run_supervised_epochs(model, labeled, cfg, cfg.semisup_epochs, /*plateau=*/false,
                                      order_rng, log, on_epoch,
                                      [&](EmbeddingModel& m, const Batch& b) {
                                          return semisup_step(m, b, cfg, velocity, workers);
                                      });
        return {std::move(model), std::move(log)};
    }

    if (!(cfg.labeled_fraction < 1.0)) {
        throw InvalidArgument("train: labeled_fraction must be < 1 for the semi-supervised phase");
    }
    if (model.input_dim() != unlabeled_filtered.dim()) {
        throw DimensionError("train: input dim mismatch");
    }
    std::optional<BatchComposer> composer;
    SampleSet refiltered;  // outlives the composer referencing it
    if (!cfg.refilter_each_epoch) {
        composer.emplace(labeled, unlabeled_filtered, cfg.batch_size, cfg.labeled_fraction,
                         derive_seed(cfg.seed, 0x7eU));
    }
    bool warned_empty = false;
    for (std::size_t epoch = 0; epoch < cfg.semisup_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.unlabeled_pool = unlabeled_filtered.count();
        if (cfg.refilter_each_epoch) {
            composer.reset();
            refiltered = filter_overlap(model, unlabeled_filtered, cfg.filter_threshold,
                                        cfg.scale, workers)
                             .first;
            rec.unlabeled_pool = refiltered.count();
            if (refiltered.count() == 0) {
                if (!warned_empty) {
                    log.warnings.push_back(
                        "refiltering left no unlabeled samples; running supervised steps");
                    warned_empty = true;
                }
            } else {
                composer.emplace(labeled, refiltered, cfg.batch_size, cfg.labeled_fraction,
                                 derive_seed(cfg.seed, 0x7e00U + epoch));
            }
        }
        double sup_sum = 0.0, uir_sum = 0.0;
        std::size_t correct = 0, lab_used = 0, unl_used = 0;
        if (composer.has_value()) {
            while (auto b = composer->next()) {
                StepStats st = semisup_step(model, *b, cfg, velocity, workers);
                ++rec.steps;
                rec.skipped_degenerate += st.skipped;
                sup_sum += st.sup_loss * static_cast<double>(st.labeled_used);
                uir_sum += st.uir_loss * static_cast<double>(st.unlabeled_used);
                correct += st.correct;
                lab_used += st.labeled_used;
                unl_used += st.unlabeled_used;
            }
        } else {
            // Labeled-only fallback epoch: full batches, fresh order.
            Rng order_rng(derive_seed(cfg.seed, 0x5200U + epoch));
            std::vector<std::size_t> order(labeled.count());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            order_rng.shuffle(order);
            for (std::size_t at = 0; at + cfg.batch_size <= order.size(); at += cfg.batch_size) {
                Batch b;
                b.labeled_inputs = Mat(cfg.batch_size, labeled.dim());
                b.labels.resize(cfg.batch_size);
                for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                    auto row = labeled.inputs.row(order[at + i]);
                    std::copy(row.begin(), row.end(), b.labeled_inputs.row(i).begin());
                    b.labels[i] = labeled.labels[order[at + i]];
                }
                StepStats st = semisup_step(model, b, cfg, velocity, workers);
                ++rec.steps;
                rec.skipped_degenerate += st.skipped;
                sup_sum += st.sup_loss * static_cast<double>(st.labeled_used);
                correct += st.correct;
                lab_used += st.labeled_used;
            }
        }
        if (rec.steps == 0) throw InvalidArgument("train: labeled pool smaller than batch share");
        rec.supervised_loss = lab_used > 0 ? sup_sum / static_cast<double>(lab_used) : 0.0;
        rec.uir_loss = unl_used > 0 ? uir_sum / static_cast<double>(unl_used) : 0.0;
        rec.combined_loss = rec.supervised_loss + cfg.uir_weight * rec.uir_loss;
        rec.train_accuracy =
            lab_used > 0 ? static_cast<double>(correct) / static_cast<double>(lab_used) : 0.0;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return {std::move(model), std::move(log)};
}

}  // namespace uir
