#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "uir/numerics.hpp"
#include "uir/rng.hpp"

using namespace uir;

TEST_CASE("dot and norms", "[numerics]") {
    Vec u{1.0, 2.0, 3.0};
    Vec v{4.0, -5.0, 6.0};
    CHECK(dot(u, v) == Catch::Approx(12.0));
    CHECK(squared_norm(u) == Catch::Approx(14.0));
    CHECK(norm(Vec{3.0, 4.0}) == Catch::Approx(5.0));
    CHECK_THROWS_AS(dot(u, Vec{1.0}), DimensionError);
}

TEST_CASE("l2_normalize", "[numerics]") {
    Vec v = l2_normalize(Vec{3.0, 0.0, 4.0});
    CHECK(v[0] == Catch::Approx(0.6));
    CHECK(v[2] == Catch::Approx(0.8));
    CHECK(norm(v) == Catch::Approx(1.0));
    CHECK_THROWS_AS(l2_normalize(Vec{0.0, 0.0}), DegenerateInputError);
    CHECK_THROWS_AS(l2_normalize(Vec{1e-13, 0.0}), DegenerateInputError);
}

TEST_CASE("cosine distance and similarity", "[numerics]") {
    Vec ex{1.0, 0.0};
    Vec ey{0.0, 1.0};
    CHECK(cosine_distance(ex, ey) == Catch::Approx(1.0));
    CHECK(cosine_distance(ex, ex) == Catch::Approx(0.0));
    CHECK(cosine_distance(ex, Vec{-2.0, 0.0}) == Catch::Approx(2.0));
    CHECK(cosine_similarity(ex, Vec{5.0, 0.0}) == Catch::Approx(1.0));
    // Scale invariance.
    CHECK(cosine_distance(Vec{1.0, 2.0}, Vec{10.0, 20.0}) == Catch::Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(cosine_distance(ex, Vec{0.0, 0.0}), DegenerateInputError);
    CHECK_THROWS_AS(cosine_distance(ex, Vec{1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("logsumexp agrees with the naive sum and survives large offsets", "[numerics]") {
    Vec z{0.1, -0.4, 0.9};
    double naive = std::log(std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]));
    CHECK(logsumexp(z) == Catch::Approx(naive).epsilon(1e-12));

    // exp(1000) overflows a double; the shifted form must not.
    Vec big{1000.0, 1000.0};
    CHECK(logsumexp(big) == Catch::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
    CHECK(std::isfinite(logsumexp(Vec{-1e4, 1e4})));
    CHECK_THROWS_AS(logsumexp(Vec{}), DimensionError);
}

TEST_CASE("softmax matches a frozen oracle and normalizes", "[numerics]") {
    Vec p = softmax(Vec{1.0, 2.0, 3.0});
    // Reference values computed once with 80-bit arithmetic.
    CHECK(p[0] == Catch::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(p[1] == Catch::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(p[2] == Catch::Approx(0.66524095577482186).epsilon(1e-12));
    CHECK(sum_is_one(p));

    Vec q = softmax(Vec{0.0, 0.0});
    CHECK(q[0] == Catch::Approx(0.5));
    CHECK(q[1] == Catch::Approx(0.5));

    // Shift invariance: softmax(z + c) == softmax(z).
    Vec r1 = softmax(Vec{0.3, -0.2, 0.7});
    Vec r2 = softmax(Vec{100.3, 99.8, 100.7});
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == Catch::Approx(r2[i]).epsilon(1e-12));

    Vec huge = softmax(Vec{1e3, -1e3, 0.0});
    CHECK(all_finite(huge));
    CHECK(sum_is_one(huge));
    CHECK_THROWS_AS(softmax(Vec{}), DimensionError);
}

TEST_CASE("softmax_vjp equals the Jacobian product", "[numerics]") {
    Vec z{0.2, -1.0, 0.5, 0.0};
    Vec p = softmax(z);
    Vec g{1.0, -2.0, 0.5, 3.0};
    Vec out = softmax_vjp(p, g);
    // J_ij = p_i (delta_ij - p_j); multiply by hand.
    for (std::size_t i = 0; i < p.size(); ++i) {
        double want = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            double jac = p[i] * ((i == j ? 1.0 : 0.0) - p[j]);
            want += jac * g[j];
        }
        CHECK(out[i] == Catch::Approx(want).epsilon(1e-12));
    }
    // Jacobian rows sum to zero, so the output does too for g = const.
    Vec ones(4, 1.0);
    Vec zero = softmax_vjp(p, ones);
    for (double x : zero) CHECK(std::abs(x) < 1e-15);
    CHECK_THROWS_AS(softmax_vjp(p, Vec{1.0}), DimensionError);
}

TEST_CASE("softmax_vjp matches finite differences of softmax", "[numerics]") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.index(6);
        Vec z(n), g(n);
        for (double& x : z) x = rng.uniform(-3.0, 3.0);
        for (double& x : g) x = rng.uniform(-2.0, 2.0);
        Vec p = softmax(z);
        Vec got = softmax_vjp(p, g);
        double h = 1e-6;
        for (std::size_t j = 0; j < n; ++j) {
            Vec zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            Vec pp = softmax(zp), pm = softmax(zm);
            double fd = 0.0;
            for (std::size_t i = 0; i < n; ++i) fd += g[i] * (pp[i] - pm[i]) / (2.0 * h);
            CHECK(got[j] == Catch::Approx(fd).margin(1e-8));
        }
    }
}

TEST_CASE("Mat storage and row views", "[numerics]") {
    Mat m(2, 3);
    CHECK(m.a.size() == 6);
    m(0, 1) = 7.0;
    m(1, 2) = -1.0;
    CHECK(m.row(0)[1] == 7.0);
    CHECK(m.row(1)[2] == -1.0);
    CHECK(m.row(0).size() == 3);
    Mat copy = m;
    CHECK(copy == m);
    copy(0, 0) = 9.0;
    CHECK_FALSE(copy == m);
}

TEST_CASE("matvec and its transpose", "[numerics]") {
    Mat m(2, 3);
    // [[1 2 3], [4 5 6]]
    for (std::size_t i = 0; i < 6; ++i) m.a[i] = static_cast<double>(i + 1);
    Vec y = matvec(m, Vec{1.0, 0.0, -1.0});
    CHECK(y[0] == Catch::Approx(-2.0));
    CHECK(y[1] == Catch::Approx(-2.0));

    Vec yt = matvec_transposed(m, Vec{1.0, -1.0});
    CHECK(yt[0] == Catch::Approx(-3.0));
    CHECK(yt[1] == Catch::Approx(-3.0));
    CHECK(yt[2] == Catch::Approx(-3.0));

    CHECK_THROWS_AS(matvec(m, Vec{1.0}), DimensionError);
    CHECK_THROWS_AS(matvec_transposed(m, Vec{1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("finiteness helpers", "[numerics]") {
    CHECK(all_finite(Vec{1.0, -2.0, 0.0}));
    CHECK_FALSE(all_finite(Vec{1.0, std::numeric_limits<double>::infinity()}));
    CHECK_FALSE(all_finite(Vec{std::nan("")}));
    CHECK(sum_is_one(Vec{0.25, 0.25, 0.5}));
    CHECK_FALSE(sum_is_one(Vec{0.3, 0.3}));
    CHECK_THROWS_AS(require_finite(Vec{1.0, std::nan("")}, "x"), InvalidArgument);
}

TEST_CASE("rng determinism and ranges", "[numerics]") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) {
        double xa = a.uniform();
        CHECK(xa == b.uniform());
        CHECK(xa >= 0.0);
        CHECK(xa < 1.0);
    }
    // A different seed diverges immediately in practice.
    Rng a2(123);
    bool differs = false;
    for (int i = 0; i < 10 && !differs; ++i) differs = a2.raw() != c.raw();
    CHECK(differs);

    Rng d(7);
    for (int i = 0; i < 200; ++i) {
        std::size_t k = d.index(13);
        CHECK(k < 13);
    }
    // Gaussian moments are roughly right (loose sanity bound, fixed seed).
    Rng g(99);
    double sum = 0.0, sq = 0.0;
    int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = g.gaussian();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(sq / n == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("derive_seed decorrelates tags", "[numerics]") {
    CHECK(derive_seed(1, 0x2a) == derive_seed(1, 0x2a));
    CHECK(derive_seed(1, 0x2a) != derive_seed(1, 0x2b));
    CHECK(derive_seed(1, 0x2a) != derive_seed(2, 0x2a));
}
