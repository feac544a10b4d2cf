#include "catch_amalgamated.hpp"

#include "ttsa/noise.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using Catch::Approx;
using ttsa::NoiseModel;
using ttsa::RngStream;

TEST_CASE("zero scale produces the zero vector", "[noise]") {
    const auto m = NoiseModel::laplace(0.0, 3);
    RngStream rng(5, 0);
    for (int i = 0; i < 100; ++i) REQUIRE(m.sample(rng).norm() == 0.0);
    REQUIRE(std::isinf(m.constants().c2));
    REQUIRE(m.constants().bound(0.1) == 0.0);
}

TEST_CASE("laplace mean is within the CLT band", "[noise]") {
    const auto m = NoiseModel::laplace(1.0, 1);
    RngStream rng(11, 0);
    const std::size_t draws = 1'000'000;
    double sum = 0.0;
    for (std::size_t i = 0; i < draws; ++i) sum += m.draw_coordinate(rng);
    // sigma = sqrt(2), 3 sigma / sqrt(N)
    REQUIRE(std::abs(sum / static_cast<double>(draws)) <= 0.005);
}

TEST_CASE("per-coordinate means within 4 sigma", "[noise]") {
    const std::size_t draws = 100'000;
    struct Case {
        NoiseModel m;
        double sigma;
    };
    const std::vector<Case> cases{{NoiseModel::laplace(0.7, 3), 0.7 * std::sqrt(2.0)},
                                  {NoiseModel::bounded_uniform(2.0, 2), 2.0 / std::sqrt(3.0)},
                                  {NoiseModel::gaussian_clipped(1.5, 4), 1.5}};
    for (const auto& c : cases) {
        RngStream rng(3, 9);
        std::vector<double> sums(static_cast<std::size_t>(c.m.dim()), 0.0);
        for (std::size_t i = 0; i < draws; ++i) {
            const auto v = c.m.sample(rng);
            for (int j = 0; j < c.m.dim(); ++j) sums[static_cast<std::size_t>(j)] += v(j);
        }
        for (double s : sums) REQUIRE(std::abs(s / draws) <= 4.0 * c.sigma / std::sqrt(static_cast<double>(draws)));
    }
}

TEST_CASE("bounded-uniform stays inside its support", "[noise]") {
    const auto m = NoiseModel::bounded_uniform(1.0, 3);
    RngStream rng(2, 4);
    for (int i = 0; i < 100000; ++i) REQUIRE(m.sample(rng).lpNorm<Eigen::Infinity>() <= 1.0);
}

TEST_CASE("certified tail constants", "[noise]") {
    const auto l11 = NoiseModel::laplace(1.0, 1).constants();
    REQUIRE(l11.c1 == 1.0);
    REQUIRE(l11.c2 == 1.0);
    REQUIRE(l11.u_L == 0.0);
    const auto l14 = NoiseModel::laplace(1.0, 4).constants();
    REQUIRE(l14.c1 == 4.0);
    REQUIRE(l14.c2 == 0.5);
    REQUIRE(l14.u_L == 0.0);
    const auto u = NoiseModel::bounded_uniform(1.0, 1).constants();
    REQUIRE(u.c1 == Approx(std::numbers::e));
    REQUIRE(u.c2 == 1.0);
    REQUIRE(u.u_L == 1.0);
}

TEST_CASE("laplace(1, 4) tail stays below its certificate", "[noise]") {
    const auto m = NoiseModel::laplace(1.0, 4);
    const std::vector<double> grid{2.0, 4.0, 6.0};
    const auto r = ttsa::verify_tail(m, 200000, grid, 21, 0.0);
    REQUIRE(r.pass());
}

TEST_CASE("laplace(1, 1) passes with the margin at shifted u", "[noise]") {
    const auto m = NoiseModel::laplace(1.0, 1);
    const std::vector<double> grid{2.05};
    const auto r = ttsa::verify_tail(m, 1'000'000, grid, 1);
    REQUIRE(r.rows[0].p_hat == Approx(std::exp(-2.05)).epsilon(0.02));
    REQUIRE(r.pass());
}

TEST_CASE("bounded-uniform tail beyond its support is empty", "[noise]") {
    const std::vector<double> grid{2.0};
    const auto r = ttsa::verify_tail(NoiseModel::bounded_uniform(1.0, 1), 100000, grid, 1);
    REQUIRE(r.rows[0].exceedances == 0);
    REQUIRE(r.pass());
}

TEST_CASE("mis-declared gaussian tail fails", "[noise]") {
    // scale 2: P(|M| > 4) = 2 Phi^c(2) = 0.0455 against a doubled-c2 bound of 0.0302
    const auto honest = NoiseModel::gaussian_clipped(2.0, 1);
    auto declared = honest.certified();
    declared.c2 *= 2.0;
    const auto liar = honest.with_declared(declared);
    const std::vector<double> grid{4.0};
    REQUIRE(ttsa::verify_tail(honest, 1'000'000, grid, 3).pass());
    REQUIRE_FALSE(ttsa::verify_tail(liar, 1'000'000, grid, 3).pass());
}

TEST_CASE("verify_tail needs enough draws", "[noise]") {
    const std::vector<double> grid{1.0};
    REQUIRE_THROWS_AS(ttsa::verify_tail(NoiseModel::laplace(1.0, 1), 100, grid, 1), ttsa::Error);
}

TEST_CASE("streams are reproducible and distinct", "[noise]") {
    RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    std::vector<std::uint64_t> va, vb, vc, vd;
    for (int i = 0; i < 1000; ++i) {
        va.push_back(a.next_u64());
        vb.push_back(b.next_u64());
        vc.push_back(c.next_u64());
        vd.push_back(d.next_u64());
    }
    REQUIRE(va == vb);
    REQUIRE(va != vc);
    REQUIRE(va != vd);
    std::size_t same = 0;
    for (int i = 0; i < 1000; ++i) same += va[i] == vc[i];
    REQUIRE(same == 0);
}

TEST_CASE("distinct streams are uncorrelated", "[noise]") {
    RngStream a(1, 0), b(1, 1);
    const std::size_t n = 200000;
    double sab = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.uniform_open() - 0.5, y = b.uniform_open() - 0.5;
        sab += x * y;
        sa += x;
        sb += y;
    }
    const double cov = sab / n - (sa / n) * (sb / n);
    // var of a centred uniform is 1/12; 5 sigma band on the correlation
    REQUIRE(std::abs(cov * 12.0) <= 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("invalid models are rejected", "[noise]") {
    REQUIRE_THROWS_AS(NoiseModel::laplace(-1.0, 1), ttsa::Error);
    REQUIRE_THROWS_AS(NoiseModel::laplace(1.0, 0), ttsa::Error);
    REQUIRE_THROWS_AS(NoiseModel::laplace(1.0, 9), ttsa::Error);
    REQUIRE_THROWS_AS(ttsa::parse_noise_kind("cauchy"), ttsa::Error);
}
