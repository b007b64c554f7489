#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uir/numerics.hpp"
#include "uir/rng.hpp"

namespace uir {

inline constexpr std::int64_t kUnlabeled = -1;

enum class Provenance { known, unknown, mixed };

// Disjoint synthetic identity populations: rows are unit-norm centers drawn
// uniformly on the sphere. Known identities occupy global indices
// [0, n_known), unknown identities [n_known, n_known + n_unknown).
struct IdentityUniverse {
    Mat known_centers;
    Mat unknown_centers;
    std::uint64_t seed = 0;

    std::size_t n_known() const { return known_centers.rows; }
    std::size_t n_unknown() const { return unknown_centers.rows; }
    std::size_t input_dim() const { return known_centers.cols; }
};

struct SampleSet {
    Mat inputs;
    std::vector<std::int64_t> labels;  // known-identity index, or kUnlabeled
    Provenance provenance = Provenance::mixed;
    // Global identity index each sample was actually drawn from; analysis
    // only, never consulted by training. Empty when unknown (e.g. file load).
    std::vector<std::int64_t> true_identity;

    std::size_t count() const { return inputs.rows; }
    std::size_t dim() const { return inputs.cols; }
};

struct Batch {
    Mat labeled_inputs;
    std::vector<std::int64_t> labels;
    Mat unlabeled_inputs;
};

inline IdentityUniverse gen_universe(std::size_t n_known, std::size_t n_unknown,
                                     std::size_t d_input, std::uint64_t seed) {
    if (n_known < 1 || n_unknown < 1) throw InvalidArgument("gen_universe: counts must be >= 1");
    if (d_input < 2) throw InvalidArgument("gen_universe: d_input must be >= 2");
    IdentityUniverse u;
    u.seed = seed;
    Rng rng(derive_seed(seed, 0x1dU));
    auto fill = [&](Mat& m, std::size_t rows) {
        m = Mat(rows, d_input);
        for (std::size_t r = 0; r < rows; ++r) {
            Vec v(d_input);
            for (double& x : v) x = rng.gaussian();
            v = l2_normalize(v);
            std::copy(v.begin(), v.end(), m.row(r).begin());
        }
    };
    fill(u.known_centers, n_known);
    fill(u.unknown_centers, n_unknown);
    return u;
}

namespace detail {
inline void add_noisy_sample(Mat& out, std::size_t row, std::span<const double> center,
                             double sigma, Rng& rng) {
    auto dst = out.row(row);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = center[i] + sigma * rng.gaussian();
    }
}
}  // namespace detail

// per_identity noisy draws around every known center; labels carry the
// center index.
inline SampleSet sample_labeled(const IdentityUniverse& u, std::size_t per_identity,
                                double noise_sigma, std::uint64_t seed) {
    if (per_identity < 1) throw InvalidArgument("sample_labeled: per_identity must be >= 1");
    if (noise_sigma < 0.0) throw InvalidArgument("sample_labeled: negative noise");
    Rng rng(derive_seed(seed, 0x2aU));
    SampleSet s;
    s.provenance = Provenance::known;
    s.inputs = Mat(u.n_known() * per_identity, u.input_dim());
    s.labels.reserve(s.inputs.rows);
    s.true_identity.reserve(s.inputs.rows);
    std::size_t row = 0;
    for (std::size_t id = 0; id < u.n_known(); ++id) {
        for (std::size_t k = 0; k < per_identity; ++k, ++row) {
            detail::add_noisy_sample(s.inputs, row, u.known_centers.row(id), noise_sigma, rng);
            s.labels.push_back(static_cast<std::int64_t>(id));
            s.true_identity.push_back(static_cast<std::int64_t>(id));
        }
    }
    return s;
}

// Half-open range of unknown-identity indices (local to unknown_centers).
struct UnknownRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // 0 means "all"
};

// Draws `total` samples from the unknown population with per-identity counts
// following a Zipf-like law: identity at rank k gets weight 1/k^exponent
// (exponent 0 = uniform). With a heavy tail most identities contribute only
// one or two samples. Labels are all kUnlabeled; the generating identity is
// kept in true_identity as a global index.
inline SampleSet sample_unlabeled(const IdentityUniverse& u, std::size_t total,
                                  double zipf_exponent, double noise_sigma,
                                  std::uint64_t seed, UnknownRange range = {}) {
    if (total < 1) throw InvalidArgument("sample_unlabeled: total must be >= 1");
    if (noise_sigma < 0.0) throw InvalidArgument("sample_unlabeled: negative noise");
    std::size_t begin = range.begin;
    std::size_t end = range.end == 0 ? u.n_unknown() : range.end;
    if (begin >= end || end > u.n_unknown()) {
        throw InvalidArgument("sample_unlabeled: bad identity range");
    }
    std::size_t n_ids = end - begin;

    // Cumulative rank weights for one categorical draw per sample.
    std::vector<double> cum(n_ids);
    double acc = 0.0;
    for (std::size_t k = 0; k < n_ids; ++k) {
        acc += 1.0 / std::pow(static_cast<double>(k + 1), zipf_exponent);
        cum[k] = acc;
    }

    Rng rng(derive_seed(seed, 0x3bU));
    SampleSet s;
    s.provenance = Provenance::unknown;
    s.inputs = Mat(total, u.input_dim());
    s.labels.assign(total, kUnlabeled);
    s.true_identity.reserve(total);
    for (std::size_t row = 0; row < total; ++row) {
        double x = rng.uniform() * acc;
        std::size_t k =
            std::lower_bound(cum.begin(), cum.end(), x) - cum.begin();
        if (k >= n_ids) k = n_ids - 1;
        std::size_t id = begin + k;
        detail::add_noisy_sample(s.inputs, row, u.unknown_centers.row(id), noise_sigma, rng);
        s.true_identity.push_back(static_cast<std::int64_t>(u.n_known() + id));
    }
    return s;
}

// Balanced evaluation draw: per_identity samples around every unknown center
// in the range. Labels carry the global identity index (n_known + local)
// so verification pairs can be formed; these sets are never trained on.
inline SampleSet sample_unknown_balanced(const IdentityUniverse& u, UnknownRange range,
                                         std::size_t per_identity, double noise_sigma,
                                         std::uint64_t seed) {
    if (per_identity < 1) throw InvalidArgument("sample_unknown_balanced: per_identity must be >= 1");
    if (noise_sigma < 0.0) throw InvalidArgument("sample_unknown_balanced: negative noise");
    std::size_t begin = range.begin;
    std::size_t end = range.end == 0 ? u.n_unknown() : range.end;
    if (begin >= end || end > u.n_unknown()) {
        throw InvalidArgument("sample_unknown_balanced: bad identity range");
    }
    Rng rng(derive_seed(seed, 0x5dU));
    SampleSet s;
    s.provenance = Provenance::unknown;
    s.inputs = Mat((end - begin) * per_identity, u.input_dim());
    s.labels.reserve(s.inputs.rows);
    s.true_identity.reserve(s.inputs.rows);
    std::size_t row = 0;
    for (std::size_t id = begin; id < end; ++id) {
        for (std::size_t k = 0; k < per_identity; ++k, ++row) {
            detail::add_noisy_sample(s.inputs, row, u.unknown_centers.row(id), noise_sigma, rng);
            auto gid = static_cast<std::int64_t>(u.n_known() + id);
            s.labels.push_back(gid);
            s.true_identity.push_back(gid);
        }
    }
    return s;
}

// Deterministic alternate view of each sample: the sign of the first input
// coordinate is flipped. Used as the second view for flip-style feature
// aggregation at evaluation time.
inline Mat alternate_view(const Mat& inputs) {
    if (inputs.cols == 0) throw DimensionError("alternate_view: empty inputs");
    Mat out = inputs;
    for (std::size_t r = 0; r < out.rows; ++r) out(r, 0) = -out(r, 0);
    return out;
}

// Draws batches with a fixed labeled/unlabeled split. Within an epoch the
// labeled pool is sampled without replacement; next() returns nullopt when
// the remaining labeled pool cannot fill another batch, then reshuffles for
// the following epoch. The unlabeled pool is an endless reshuffled stream.
class BatchComposer {
  public:
    BatchComposer(const SampleSet& labeled, const SampleSet& unlabeled,
                  std::size_t batch_size, double labeled_fraction, std::uint64_t seed)
        : labeled_(labeled), unlabeled_(unlabeled), batch_size_(batch_size),
          rng_(derive_seed(seed, 0x4cU)) {
        if (batch_size < 2) throw InvalidArgument("compose_batch: batch_size must be >= 2");
        if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) {
            throw InvalidArgument("compose_batch: labeled_fraction must be in (0, 1)");
        }
        if (labeled.count() == 0) throw InvalidArgument("compose_batch: empty labeled pool");
        // Round half up.
        n_labeled_ = static_cast<std::size_t>(
            std::floor(labeled_fraction * static_cast<double>(batch_size) + 0.5));
        if (n_labeled_ < 1) n_labeled_ = 1;
        if (n_labeled_ > batch_size) n_labeled_ = batch_size;
        n_unlabeled_ = batch_size - n_labeled_;
        if (unlabeled.count() == 0 && n_unlabeled_ > 0) {
            throw InvalidArgument("compose_batch: empty unlabeled pool");
        }
        labeled_order_.resize(labeled.count());
        for (std::size_t i = 0; i < labeled_order_.size(); ++i) labeled_order_[i] = i;
        rng_.shuffle(labeled_order_);
        unlabeled_order_.resize(unlabeled.count());
        for (std::size_t i = 0; i < unlabeled_order_.size(); ++i) unlabeled_order_[i] = i;
        rng_.shuffle(unlabeled_order_);
    }

    std::size_t labeled_per_batch() const { return n_labeled_; }
    std::size_t unlabeled_per_batch() const { return n_unlabeled_; }

    // nullopt signals the epoch boundary.
    std::optional<Batch> next() {
        if (labeled_cursor_ + n_labeled_ > labeled_order_.size()) {
            labeled_cursor_ = 0;
            rng_.shuffle(labeled_order_);
            return std::nullopt;
        }
        Batch b;
        b.labeled_inputs = Mat(n_labeled_, labeled_.dim());
        b.labels.reserve(n_labeled_);
        for (std::size_t i = 0; i < n_labeled_; ++i) {
            std::size_t src = labeled_order_[labeled_cursor_++];
            auto row = labeled_.inputs.row(src);
            std::copy(row.begin(), row.end(), b.labeled_inputs.row(i).begin());
            b.labels.push_back(labeled_.labels[src]);
        }
        b.unlabeled_inputs = Mat(n_unlabeled_, unlabeled_.dim());
        for (std::size_t i = 0; i < n_unlabeled_; ++i) {
            if (unlabeled_cursor_ >= unlabeled_order_.size()) {
                unlabeled_cursor_ = 0;
                rng_.shuffle(unlabeled_order_);
            }
            std::size_t src = unlabeled_order_[unlabeled_cursor_++];
            auto row = unlabeled_.inputs.row(src);
            std::copy(row.begin(), row.end(), b.unlabeled_inputs.row(i).begin());
        }
        return b;
    }

  private:
    const SampleSet& labeled_;
    const SampleSet& unlabeled_;
    std::size_t batch_size_;
    std::size_t n_labeled_ = 0;
    std::size_t n_unlabeled_ = 0;
    Rng rng_;
    std::vector<std::size_t> labeled_order_;
    std::vector<std::size_t> unlabeled_order_;
    std::size_t labeled_cursor_ = 0;
    std::size_t unlabeled_cursor_ = 0;
};

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, const char* ctx) {
    double x = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || !std::isfinite(x)) {
        throw FormatError(std::string("dataset: bad number in ") + ctx);
    }
    return x;
}

}  // namespace detail

// Text format: header "uirset v1 <dim> <count>", then one line per sample,
// label first (-1 = unlabeled) followed by <dim> floats. Shortest-round-trip
// float formatting keeps write/read lossless.
inline void write_dataset(const std::string& path, const SampleSet& s) {
    std::ofstream os(path);
    if (!os) throw IoError("dataset: cannot open for writing: " + path);
    os << "uirset v1 " << s.dim() << ' ' << s.count() << '\n';
    for (std::size_t r = 0; r < s.count(); ++r) {
        os << s.labels[r];
        auto row = s.inputs.row(r);
        for (double x : row) os << ' ' << detail::format_double(x);
        os << '\n';
    }
    if (!os) throw IoError("dataset: write failed: " + path);
}

inline SampleSet read_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("dataset: cannot open: " + path);
    std::string magic, version;
    std::size_t dim = 0, count = 0;
    if (!(is >> magic >> version >> dim >> count)) throw FormatError("dataset: bad header");
    if (magic != "uirset") throw FormatError("dataset: bad magic");
    if (version != "v1") throw VersionError("dataset: unsupported version " + version);
    if (dim == 0) throw FormatError("dataset: zero dim");
    std::string rest;
    std::getline(is, rest);
    SampleSet s;
    s.inputs = Mat(count, dim);
    s.labels.reserve(count);
    bool any_labeled = false, any_unlabeled = false;
    std::string line, tok;
    for (std::size_t r = 0; r < count; ++r) {
        if (!std::getline(is, line)) throw FormatError("dataset: truncated file");
        std::istringstream ls(line);
        std::int64_t label;
        if (!(ls >> label)) throw FormatError("dataset: bad label");
        if (label < kUnlabeled) throw FormatError("dataset: bad label");
        (label == kUnlabeled ? any_unlabeled : any_labeled) = true;
        s.labels.push_back(label);
        auto row = s.inputs.row(r);
        for (std::size_t c = 0; c < dim; ++c) {
            if (!(ls >> tok)) throw FormatError("dataset: short row");
            row[c] = detail::parse_double(tok, "sample row");
        }
        if (ls >> tok) throw FormatError("dataset: trailing tokens on row");
    }
    s.provenance = any_labeled && any_unlabeled ? Provenance::mixed
                   : any_labeled               ? Provenance::known
                                               : Provenance::unknown;
    // True generating identities are not stored in the file; keep what the
    // labels say for labeled rows.
    s.true_identity = s.labels;
    return s;
}

}  // namespace uir
