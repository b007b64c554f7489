#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "uir/data.hpp"
#include "uir/eval.hpp"
#include "uir/rng.hpp"

using namespace uir;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SampleSet labeled_set(const std::vector<std::int64_t>& ids, std::size_t dim = 3) {
    SampleSet s;
    s.inputs = Mat(ids.size(), dim);
    for (std::size_t i = 0; i < ids.size(); ++i) s.inputs(i, i % dim) = 1.0;
    s.labels = ids;
    s.true_identity = ids;
    return s;
}

// Exhaustive reference: try every observed impostor score (plus +inf) as the
// threshold, keep the smallest one whose acceptance fraction fits the budget.
TarResult tar_oracle(const Vec& genuine, const Vec& impostor, double far) {
    std::vector<double> cand(impostor.begin(), impostor.end());
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    cand.push_back(kInf);
    double n = static_cast<double>(impostor.size());
    TarResult r;
    for (double t : cand) {
        std::size_t acc = 0;
        for (double s : impostor) {
            if (s >= t) ++acc;
        }
        if (static_cast<double>(acc) / n <= far) {
            r.threshold = t;
            break;
        }
    }
    std::size_t acc = 0;
    for (double g : genuine) {
        if (g >= r.threshold) ++acc;
    }
    r.tar = static_cast<double>(acc) / static_cast<double>(genuine.size());
    return r;
}

}  // namespace

TEST_CASE("protocol pairs samples by identity", "[eval]") {
    SampleSet s = labeled_set({5, 5, 5, 9, 9, 9, 2, 2, 2});
    VerificationProtocol p = build_protocol(s, 4, 1);
    CHECK(p.genuine.size() == 9);  // 3 ids x C(3,2)
    CHECK(p.impostor.size() == 36);
    for (auto [a, b] : p.genuine) CHECK(s.true_identity[a] == s.true_identity[b]);
    for (auto [a, b] : p.impostor) CHECK(s.true_identity[a] != s.true_identity[b]);

    // Sentinel rows never enter the protocol.
    SampleSet with_sentinel = labeled_set({5, 5, 5, 9, 9, 9, kUnlabeled, kUnlabeled});
    VerificationProtocol q = build_protocol(with_sentinel, 4, 1);
    CHECK(q.genuine.size() == 6);
    for (auto [a, b] : q.impostor) {
        CHECK(a < 6);
        CHECK(b < 6);
    }
}

TEST_CASE("protocol is deterministic in its seed", "[eval]") {
    SampleSet s = labeled_set({1, 1, 2, 2, 3, 3});
    VerificationProtocol a = build_protocol(s, 10, 7);
    VerificationProtocol b = build_protocol(s, 10, 7);
    VerificationProtocol c = build_protocol(s, 10, 8);
    CHECK(a.impostor == b.impostor);
    CHECK_FALSE(a.impostor == c.impostor);
}

TEST_CASE("protocol rejects impossible pairings", "[eval]") {
    CHECK_THROWS_WITH(build_protocol(labeled_set({1, 2, 3}), 4, 1),
                      Catch::Matchers::ContainsSubstring("no genuine pairs"));
    CHECK_THROWS_WITH(build_protocol(labeled_set({4, 4, 4}), 4, 1),
                      Catch::Matchers::ContainsSubstring("two identities"));
    CHECK_THROWS_AS(build_protocol(labeled_set({1, 1, 2, 2}), 0, 1), InvalidArgument);

    SampleSet missing = labeled_set({1, 1, 2, 2});
    missing.true_identity.clear();
    CHECK_THROWS_AS(build_protocol(missing, 4, 1), InvalidArgument);
}

TEST_CASE("embed_features normalizes rows and zeroes degenerate ones", "[eval]") {
    EmbeddingModel m;
    DenseLayer l;
    l.weight = Mat(2, 2);
    l.weight(0, 0) = 2.0;
    l.weight(1, 1) = 2.0;
    l.bias.assign(2, 0.0);
    l.activation = Activation::none;
    m.layers.push_back(l);
    m.head = Mat(2, 2);
    m.head(0, 0) = 1.0;
    m.head(1, 1) = 1.0;

    Mat inputs(3, 2);
    inputs(0, 0) = 5.0;
    inputs(1, 0) = 1.0;
    inputs(1, 1) = 1.0;
    // Row 2 stays zero: degenerate.
    Mat f = embed_features(m, inputs);
    CHECK(f.rows == 3);
    CHECK(f.cols == 2);
    CHECK(f(0, 0) == Catch::Approx(1.0));
    CHECK(f(1, 0) == Catch::Approx(1.0 / std::sqrt(2.0)));
    CHECK(f(2, 0) == 0.0);
    CHECK(f(2, 1) == 0.0);

    CHECK_THROWS_AS(embed_features(m, Mat(1, 3)), DimensionError);
}

TEST_CASE("postprocess tags round-trip", "[eval]") {
    for (bool n : {false, true}) {
        for (bool f : {false, true}) {
            Postprocess p{n, f};
            Postprocess q = parse_postprocess(postprocess_tag(p));
            CHECK(q.normalize == n);
            CHECK(q.flip == f);
        }
    }
    CHECK(postprocess_tag({true, true}) == "N1F1");
    CHECK_THROWS_AS(parse_postprocess("N2F0"), FormatError);
    CHECK_THROWS_AS(parse_postprocess("NF"), FormatError);
    CHECK_THROWS_AS(parse_postprocess("n1f1"), FormatError);
}

TEST_CASE("postprocess sums views before normalizing", "[eval]") {
    Mat raw(1, 2);
    raw(0, 0) = 3.0;
    raw(0, 1) = 4.0;
    Mat alt(1, 2);
    alt(0, 0) = 1.0;

    Mat plain = postprocess_features(raw, nullptr, {false, false});
    CHECK(plain == raw);

    Mat n = postprocess_features(raw, nullptr, {true, false});
    CHECK(n(0, 0) == Catch::Approx(0.6));
    CHECK(n(0, 1) == Catch::Approx(0.8));

    Mat f = postprocess_features(raw, &alt, {false, true});
    CHECK(f(0, 0) == Catch::Approx(4.0));
    CHECK(f(0, 1) == Catch::Approx(4.0));

    // Sum first, then normalize: [4,4] -> [1/sqrt2, 1/sqrt2]. Normalizing
    // each view first would give a different direction; rule that out.
    Mat nf = postprocess_features(raw, &alt, {true, true});
    CHECK(nf(0, 0) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(nf(0, 1) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(postprocess_features(raw, nullptr, {false, true}), InvalidArgument);
    Mat bad(2, 2);
    CHECK_THROWS_AS(postprocess_features(raw, &bad, {false, true}), DimensionError);
}

TEST_CASE("score_pairs computes cosine similarities", "[eval]") {
    Mat f(3, 2);
    f(0, 0) = 1.0;
    f(1, 1) = 1.0;
    f(2, 0) = 1.0;
    VerificationProtocol p;
    p.genuine = {{0, 2}};
    p.impostor = {{0, 1}};
    auto [gen, imp] = score_pairs(f, p);
    CHECK(gen[0] == Catch::Approx(1.0));
    CHECK(imp[0] == Catch::Approx(0.0).margin(1e-15));

    VerificationProtocol oob;
    oob.genuine = {{0, 9}};
    CHECK_THROWS_AS(score_pairs(f, oob), IndexError);
}

TEST_CASE("tar_at_far frozen cases", "[eval]") {
    Vec imp{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    Vec gen{0.95, 1.0, 0.5};

    // far 0.1 admits exactly one impostor: threshold lands on the largest.
    TarResult r = tar_at_far(gen, imp, 0.1);
    CHECK(r.threshold == Catch::Approx(1.0));
    CHECK(r.tar == Catch::Approx(1.0 / 3.0));

    // far below 1/n admits none; nothing clears an all-tied list either.
    TarResult strict = tar_at_far(gen, imp, 0.05);
    CHECK(std::isinf(strict.threshold));
    CHECK(strict.tar == 0.0);

    Vec tied(10, 0.5);
    TarResult t = tar_at_far(gen, tied, 0.1);
    CHECK(std::isinf(t.threshold));  // any finite cut below 0.5 accepts all ten
    CHECK(t.tar == 0.0);

    // A tie that fits inside the budget is fine.
    Vec half{0.2, 0.2, 0.2, 0.2, 0.8, 0.8};
    TarResult h = tar_at_far(gen, half, 0.5);
    CHECK(h.threshold == Catch::Approx(0.8));

    CHECK_THROWS_AS(tar_at_far(Vec{}, imp, 0.1), InvalidArgument);
    CHECK_THROWS_AS(tar_at_far(gen, Vec{}, 0.1), InvalidArgument);
    CHECK_THROWS_AS(tar_at_far(gen, imp, 0.0), InvalidArgument);
    CHECK_THROWS_AS(tar_at_far(gen, imp, 1.0), InvalidArgument);
}

TEST_CASE("tar_at_far agrees with the exhaustive oracle", "[eval]") {
    Rng rng(314);
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t ng = 1 + rng.index(40);
        std::size_t ni = 1 + rng.index(80);
        bool gridded = rng.uniform() < 0.5;  // force heavy ties half the time
        auto draw = [&]() {
            double x = rng.uniform(-1.0, 1.0);
            if (gridded) x = std::round(x * 5.0) / 5.0;
            return x;
        };
        Vec gen(ng), imp(ni);
        for (double& x : gen) x = draw();
        for (double& x : imp) x = draw();
        double far = std::exp(rng.uniform(std::log(1e-3), std::log(0.5)));

        TarResult got = tar_at_far(gen, imp, far);
        TarResult want = tar_oracle(gen, imp, far);
        REQUIRE(got.threshold == want.threshold);  // bitwise, oracle values are copies
        REQUIRE(got.tar == want.tar);

        // The FAR constraint itself.
        std::size_t acc = 0;
        for (double s : imp) {
            if (s >= got.threshold) ++acc;
        }
        REQUIRE(static_cast<double>(acc) / static_cast<double>(ni) <= far);
    }
}

TEST_CASE("center sparsity on hand geometries", "[eval]") {
    Mat ortho(2, 2);
    ortho(0, 0) = 1.0;
    ortho(1, 1) = 1.0;
    CHECK(center_sparsity(ortho) == Catch::Approx(1.0));

    Mat same(2, 3);
    same(0, 0) = 1.0;
    same(1, 0) = 2.0;  // same direction, different norm
    CHECK(center_sparsity(same) == Catch::Approx(0.0).margin(1e-12));

    Mat mixed(3, 2);
    mixed(0, 0) = 1.0;   // e_x
    mixed(1, 1) = 1.0;   // e_y
    mixed(2, 0) = -1.0;  // -e_x
    CHECK(center_sparsity(mixed) == Catch::Approx(4.0 / 3.0));

    CHECK_THROWS_AS(center_sparsity(Mat(1, 4)), InvalidArgument);
}

TEST_CASE("activation stats use a strict below count", "[eval]") {
    EmbeddingModel m;
    DenseLayer l;
    l.weight = Mat(4, 4);
    for (std::size_t i = 0; i < 4; ++i) l.weight(i, i) = 1.0;
    l.bias.assign(4, 0.0);
    l.activation = Activation::none;
    m.layers.push_back(l);
    m.head = Mat(4, 4);
    for (std::size_t r = 0; r < 4; ++r) m.head(r, r) = 1.0;

    SampleSet s;
    s.inputs = Mat(2, 4);
    s.inputs(0, 0) = 1.0;  // max activation ~ 1
    for (std::size_t c = 0; c < 4; ++c) s.inputs(1, c) = 0.5;  // exactly 0.25

    ActivationStats st = activation_stats(m, s, {0.25, 0.5, 0.999}, 64.0);
    REQUIRE(st.cdf.size() == 3);
    CHECK(st.cdf[0].second == 0.0);  // 0.25 is not strictly below 0.25
    CHECK(st.cdf[1].second == 0.5);
    CHECK(st.cdf[2].second == 0.5);
    CHECK(st.mean == Catch::Approx((1.0 + 0.25) / 2.0).margin(1e-6));

    CHECK_THROWS_AS(activation_stats(m, s, {}, 64.0), InvalidArgument);
    CHECK_THROWS_AS(activation_stats(m, s, {0.5, 0.5}, 64.0), InvalidArgument);
    CHECK_THROWS_AS(activation_stats(m, s, {0.0, 0.5}, 64.0), InvalidArgument);
    CHECK_THROWS_AS(activation_stats(m, s, {0.5, 1.0}, 64.0), InvalidArgument);
    SampleSet empty;
    empty.inputs = Mat(0, 4);
    CHECK_THROWS_AS(activation_stats(m, empty, {0.5}, 64.0), InvalidArgument);

    // Default grid is strictly increasing inside (0, 1).
    auto grid = default_activation_thresholds();
    CHECK(grid.size() == 9);
    CHECK(std::is_sorted(grid.begin(), grid.end()));
}
