#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cats/matrix.hpp"
#include "cats/rng.hpp"

using namespace cats;

TEST_CASE("matmul 2x2 hand value") {
    Matf a(2, 2), b(2, 2);
    a.data = {1, 2, 3, 4};
    b.data = {5, 6, 7, 8};
    const Matf c = matmul(a, b);
    CHECK(c.at(0, 0) == 19.0f);
    CHECK(c.at(0, 1) == 22.0f);
    CHECK(c.at(1, 0) == 43.0f);
    CHECK(c.at(1, 1) == 50.0f);
}

TEST_CASE("matmul shape mismatch rejected") {
    Matf a(2, 3), b(2, 2);
    CHECK_THROWS_AS(matmul(a, b), invalid_input);
    CHECK_THROWS_AS(matmul_nt(Matf(2, 3), Matf(4, 2)), invalid_input);
    CHECK_THROWS_AS(matmul_tn(Matf(3, 2), Matf(4, 2)), invalid_input);
}

TEST_CASE("matmul transposed variants agree with explicit transpose") {
    Rng rng(7);
    Matf a(5, 3), b(4, 3), c(5, 4);
    for (auto &x : a.data) x = static_cast<float>(rng.gauss());
    for (auto &x : b.data) x = static_cast<float>(rng.gauss());
    for (auto &x : c.data) x = static_cast<float>(rng.gauss());
    CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-6);
    CHECK(max_abs_diff(matmul_tn(c, a), matmul(transpose(c), a)) < 1e-6);
}

TEST_CASE("row-wise matmul equals batched matmul bitwise") {
    // the decode engine relies on this: one row at a time through the same
    // weights must reproduce the batched product exactly
    Rng rng(3);
    Matf a(6, 16), w(16, 16);
    for (auto &x : a.data) x = static_cast<float>(rng.gauss());
    for (auto &x : w.data) x = static_cast<float>(rng.gauss());
    const Matf full = matmul(a, w);
    for (int i = 0; i < a.rows; ++i) {
        Matf one(1, a.cols);
        for (int j = 0; j < a.cols; ++j) one.at(0, j) = a.at(i, j);
        const Matf r = matmul(one, w);
        for (int j = 0; j < w.cols; ++j) CHECK(r.at(0, j) == full.at(i, j));
    }
}

TEST_CASE("softmax hand values") {
    Matf l(1, 2);
    l.data = {std::log(2.0f), 0.0f};
    const Matf p = softmax_rows(l, 1.0f);
    CHECK(p.at(0, 0) == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(p.at(0, 1) == Catch::Approx(1.0 / 3.0).epsilon(1e-6));

    // temperature 2 halves the log-odds: logits (ln 4, 0) -> (2/3, 1/3)
    Matf l2(1, 2);
    l2.data = {std::log(4.0f), 0.0f};
    const Matf p2 = softmax_rows(l2, 2.0f);
    CHECK(p2.at(0, 0) == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    Matf l(8, 256);
    for (auto &x : l.data) x = static_cast<float>(rng.gauss() * 5.0);
    const Matf p = softmax_rows(l, 0.7f);
    for (int i = 0; i < p.rows; ++i) CHECK(normalized_within(p.row_span(i), 1e-6));
}

TEST_CASE("softmax shift invariance is bitwise for exact shifts") {
    // max is subtracted before anything else, so softmax only sees the
    // differences; when x + c rounds to nothing (dyadic values), the shifted
    // row produces bit-identical probabilities
    Rng rng(5);
    Matf a(1, 64);
    for (auto &x : a.data)
        x = static_cast<float>(std::round(rng.gauss() * 3.0 * 64.0) / 64.0);
    Matf b = a;
    for (auto &x : b.data) x += 17.25f;
    const Matf pa = softmax_rows(a, 1.0f);
    const Matf pb = softmax_rows(b, 1.0f);
    for (size_t i = 0; i < pa.data.size(); ++i) CHECK(pa.data[i] == pb.data[i]);
}

TEST_CASE("softmax input validation") {
    Matf l(1, 4);
    CHECK_THROWS_AS(softmax_rows(l, 0.0f), invalid_input);
    CHECK_THROWS_AS(softmax_rows(l, -1.0f), invalid_input);
}

TEST_CASE("rms_norm hand value") {
    Matf x(1, 2);
    x.data = {3.0f, 4.0f};
    const std::vector<float> gain = {1.0f, 1.0f};
    const Matf y = rms_norm_rows(x, std::span<const float>(gain));
    const double r = std::sqrt(12.5);  // sqrt((9+16)/2)
    CHECK(y.at(0, 0) == Catch::Approx(3.0 / r).epsilon(1e-5));
    CHECK(y.at(0, 1) == Catch::Approx(4.0 / r).epsilon(1e-5));

    const std::vector<float> g2 = {2.0f, 0.5f};
    const Matf y2 = rms_norm_rows(x, std::span<const float>(g2));
    CHECK(y2.at(0, 0) == Catch::Approx(6.0 / r).epsilon(1e-5));
    CHECK(y2.at(0, 1) == Catch::Approx(2.0 / r).epsilon(1e-5));
}

TEST_CASE("rms_norm zero row stays finite") {
    Matf x(1, 4);
    const std::vector<float> gain(4, 1.0f);
    const Matf y = rms_norm_rows(x, std::span<const float>(gain));
    for (const float v : y.data) {
        CHECK(std::isfinite(v));
        CHECK(v == 0.0f);
    }
}

TEST_CASE("argmax tiebreak picks lowest index") {
    const std::vector<float> x = {0.25f, 0.25f, 0.25f, 0.25f};
    CHECK(argmax_tiebreak(std::span<const float>(x)) == 0);
    const std::vector<float> y = {0.1f, 0.4f, 0.4f, 0.1f};
    CHECK(argmax_tiebreak(std::span<const float>(y)) == 1);
    const std::vector<float> z = {-1.0f, -0.5f};
    CHECK(argmax_tiebreak(std::span<const float>(z)) == 1);
}

TEST_CASE("entropy hand values") {
    const std::vector<double> u(4, 0.25);
    CHECK(entropy(std::span<const double>(u)) == Catch::Approx(std::log(4.0)).epsilon(1e-9));
    const std::vector<double> d = {1.0, 0.0, 0.0};
    CHECK(entropy(std::span<const double>(d)) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("rng determinism and gaussian sanity") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.gauss() == b.gauss());

    Rng r(1);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    std::vector<double> xs(n);
    for (auto &x : xs) x = r.gauss();
    for (const double x : xs) mean += x;
    mean /= n;
    for (const double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng categorical respects mass") {
    Rng r(9);
    const std::vector<float> w = {0.0f, 1.0f, 0.0f};
    for (int i = 0; i < 50; ++i) CHECK(r.categorical(std::span<const float>(w)) == 1);
    const std::vector<float> bad = {0.0f, 0.0f};
    CHECK_THROWS_AS(r.categorical(std::span<const float>(bad)), invalid_input);
}
