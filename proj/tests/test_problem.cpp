#include "catch_amalgamated.hpp"

#include "ttsa/problem.hpp"

#include <cmath>

using Catch::Approx;
using ttsa::make_vec;
using ttsa::scalar_vec;
using ttsa::Vec;

TEST_CASE("LINEAR1D fast field", "[problem]") {
    const auto p = ttsa::make_linear1d();
    REQUIRE(ttsa::eval_h(p, scalar_vec(2.0), scalar_vec(2.0))(0) == 0.0);
    REQUIRE(ttsa::eval_h(p, scalar_vec(3.0), scalar_vec(1.0))(0) == -2.0);
    REQUIRE(ttsa::eval_jac_h_x(p, scalar_vec(0.3), scalar_vec(-4.0))(0, 0) == -1.0);
    REQUIRE(ttsa::eval_grad_lambda(p, scalar_vec(7.0))(0, 0) == 1.0);
}

TEST_CASE("LINEAR1D slow field and saturation", "[problem]") {
    const auto p = ttsa::make_linear1d();
    REQUIRE(ttsa::eval_g(p, scalar_vec(0.0), scalar_vec(0.0))(0) == 0.0);
    const double raw = -std::tanh(10.0) + 0.5 * (0.0 - 10.0);
    const double clipped = raw * std::min(1.0, p.B_g / std::abs(raw));
    REQUIRE(ttsa::eval_g(p, scalar_vec(0.0), scalar_vec(10.0))(0) == Approx(clipped).epsilon(1e-15));
    REQUIRE(clipped == Approx(-2.0));
}

TEST_CASE("non-finite inputs are rejected", "[problem]") {
    const auto p = ttsa::make_linear1d();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(ttsa::eval_h(p, scalar_vec(nan), scalar_vec(0.0)), ttsa::Error);
    REQUIRE_THROWS_AS(ttsa::eval_lambda(p, scalar_vec(INFINITY)), ttsa::Error);
}

TEST_CASE("ROT2D equilibrium and Jacobians", "[problem]") {
    const auto p = ttsa::make_rot2d();
    for (double y : {-3.0, -0.2, 0.0, 0.7, 2.5}) {
        const Vec yy = scalar_vec(y);
        const Vec lam = ttsa::eval_lambda(p, yy);
        REQUIRE(ttsa::eval_h(p, lam, yy).norm() <= 1e-12);
    }
    // finite differences against the closed forms
    ttsa::ProblemInstance fd = p;
    fd.jac_h_x = nullptr;
    fd.grad_lambda = nullptr;
    fd.jac_g_reduced = nullptr;
    for (double y : {-1.5, 0.3, 1.1}) {
        const Vec yy = scalar_vec(y);
        const Vec x = make_vec({0.4, -0.9});
        REQUIRE((ttsa::eval_jac_h_x(fd, x, yy) - ttsa::eval_jac_h_x(p, x, yy)).norm() <= 1e-6);
        REQUIRE((ttsa::eval_grad_lambda(fd, yy) - ttsa::eval_grad_lambda(p, yy)).norm() <= 1e-6);
        REQUIRE((ttsa::eval_jac_g_reduced(fd, yy) - ttsa::eval_jac_g_reduced(p, yy)).norm() <= 1e-6);
    }
}

TEST_CASE("built-in instances pass every instance check", "[problem]") {
    for (const auto& name : ttsa::builtin_names()) {
        const auto p = ttsa::builtin_problem(name);
        const auto r = ttsa::check_instance(p, 10000, 7);
        INFO(name);
        REQUIRE(r.all_pass());
        REQUIRE(r.max_fast_equilibrium_residual <= 1e-10);
        REQUIRE(r.slow_equilibrium_residual <= 1e-10);
        REQUIRE(r.max_g_norm <= p.B_g);
        REQUIRE(r.spectral_margin > 0.0);
        REQUIRE(r.lyapunov_rate > 0.0);
    }
    REQUIRE(ttsa::check_instance(ttsa::make_linear1d(), 10000, 7).spectral_margin == Approx(1.0));
    REQUIRE(ttsa::check_instance(ttsa::make_rot2d(), 1000, 7).spectral_margin == Approx(1.0));
    REQUIRE(ttsa::check_instance(ttsa::make_stiff(), 1000, 7).spectral_margin == Approx(10.0));
}

TEST_CASE("wrong equilibrium map is flagged", "[problem]") {
    auto p = ttsa::make_linear1d();
    p.lambda = [](const Vec& y) { return Vec(2.0 * y); };
    p.L_lambda = 2.0;
    const auto r = ttsa::check_instance(p, 1000, 7);
    REQUIRE_FALSE(r.equilibrium_ok);
    REQUIRE(r.max_fast_equilibrium_residual > 1.0);
}

TEST_CASE("understated bound on g is flagged", "[problem]") {
    auto p = ttsa::make_linear1d();
    p.B_g = 1.0;
    const auto r = ttsa::check_instance(p, 1000, 7);
    REQUIRE_FALSE(r.bound_ok);
    REQUIRE(r.max_g_norm == Approx(2.0));
}

TEST_CASE("understated Lipschitz constant is flagged", "[problem]") {
    auto p = ttsa::make_rot2d();
    p.L_h = 1.0;
    REQUIRE_FALSE(ttsa::check_instance(p, 1000, 7).lipschitz_ok);
}

TEST_CASE("unknown built-in name", "[problem]") {
    REQUIRE_THROWS_AS(ttsa::builtin_problem("NOPE"), ttsa::Error);
}

TEST_CASE("check_instance needs at least one probe", "[problem]") {
    REQUIRE_THROWS_AS(ttsa::check_instance(ttsa::make_linear1d(), 0, 1), ttsa::Error);
}
