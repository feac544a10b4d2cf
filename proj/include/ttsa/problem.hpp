#pragma once

#include "ttsa/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ttsa {

using JointField = std::function<Vec(const Vec& x, const Vec& y)>;
using SlowMap = std::function<Vec(const Vec& y)>;

/// Two-time-scale problem: fast drift h(x, y), slow drift g(x, y), the
/// equilibrium map lambda(y) of the fast system and the slow equilibrium y*.
///
/// Jacobian members are optional; when empty the eval_* functions fall back
/// to central differences. Lyapunov members default to ||y - y*||^2.
struct ProblemInstance {
    std::string name;
    int d = 1;
    int s = 1;
    JointField h;
    JointField g;
    SlowMap lambda;
    Vec y_star;

    std::function<Mat(const Vec& x, const Vec& y)> jac_h_x;
    std::function<Mat(const Vec& y)> jac_g_reduced;
    std::function<Mat(const Vec& y)> grad_lambda;

    double L_h = 1.0;
    double L_g = 1.0;
    double L_lambda = 1.0;
    double B_g = 1.0;

    std::function<double(const Vec& y)> lyapunov;
    std::function<Vec(const Vec& y)> lyapunov_grad;
    double level_r = 4.0;
    double level_r0 = 1.0;

    /// sup of ||D^2 lambda|| / 2, when known in closed form.
    std::optional<double> lambda_curvature;
};

/// sat_B(v) = v * min(1, B / ||v||)
inline Vec saturate(const Vec& v, double bound) {
    const double norm = v.norm();
    if (norm <= bound) return v;
    return v * (bound / norm);
}

namespace detail {

inline void require_finite(const Vec& v, const char* what) {
    if (!v.allFinite()) throw Error(ErrorCode::NonFiniteInput, std::string("non-finite ") + what);
}

inline double fd_step(const Vec& at) { return 1e-6 * (1.0 + at.norm()); }

template <typename F>
Mat central_difference(F&& f, const Vec& at, Eigen::Index out_dim) {
    const double step = fd_step(at);
    Mat jac(out_dim, at.size());
    for (Eigen::Index j = 0; j < at.size(); ++j) {
        Vec plus = at, minus = at;
        plus(j) += step;
        minus(j) -= step;
        jac.col(j) = (f(plus) - f(minus)) / (2.0 * step);
    }
    return jac;
}

}  // namespace detail

inline Vec eval_h(const ProblemInstance& p, const Vec& x, const Vec& y) {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    return p.h(x, y);
}

inline Vec eval_g(const ProblemInstance& p, const Vec& x, const Vec& y) {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    return p.g(x, y);
}

inline Vec eval_lambda(const ProblemInstance& p, const Vec& y) {
    detail::require_finite(y, "y");
    return p.lambda(y);
}

inline Mat eval_jac_h_x(const ProblemInstance& p, const Vec& x, const Vec& y) {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    if (p.jac_h_x) return p.jac_h_x(x, y);
    return detail::central_difference([&](const Vec& xx) { return p.h(xx, y); }, x, p.d);
}

/// Jacobian of y -> g(lambda(y), y).
inline Mat eval_jac_g_reduced(const ProblemInstance& p, const Vec& y) {
    detail::require_finite(y, "y");
    if (p.jac_g_reduced) return p.jac_g_reduced(y);
    return detail::central_difference([&](const Vec& yy) { return p.g(p.lambda(yy), yy); }, y, p.s);
}

inline Mat eval_grad_lambda(const ProblemInstance& p, const Vec& y) {
    detail::require_finite(y, "y");
    if (p.grad_lambda) return p.grad_lambda(y);
    return detail::central_difference([&](const Vec& yy) { return p.lambda(yy); }, y, p.d);
}

inline double lyapunov_slow(const ProblemInstance& p, const Vec& y) {
    if (p.lyapunov) return p.lyapunov(y);
    return (y - p.y_star).squaredNorm();
}

inline Vec lyapunov_slow_grad(const ProblemInstance& p, const Vec& y) {
    if (p.lyapunov_grad) return p.lyapunov_grad(y);
    return 2.0 * (y - p.y_star);
}

/// Fast analogue V(x) = ||x - lambda(y)||^2 for frozen y.
inline double lyapunov_fast(const ProblemInstance& p, const Vec& x, const Vec& y) {
    return (x - p.lambda(y)).squaredNorm();
}

// ---------------------------------------------------------------------------
// Built-in catalog

inline ProblemInstance make_linear1d(double fast_gain = 1.0, std::string name = "LINEAR1D") {
    ProblemInstance p;
    p.name = std::move(name);
    p.d = 1;
    p.s = 1;
    p.B_g = 2.0;
    const double bound = p.B_g;
    p.h = [fast_gain](const Vec& x, const Vec& y) { return scalar_vec(-fast_gain * (x(0) - y(0))); };
    p.g = [bound](const Vec& x, const Vec& y) {
        return saturate(scalar_vec(-std::tanh(y(0)) + 0.5 * (x(0) - y(0))), bound);
    };
    p.lambda = [](const Vec& y) { return y; };
    p.y_star = scalar_vec(0.0);
    p.jac_h_x = [fast_gain](const Vec&, const Vec&) { return Mat::Constant(1, 1, -fast_gain); };
    p.jac_g_reduced = [bound](const Vec& y) {
        // g(lambda(y), y) = sat(-tanh y) = -tanh y since |tanh| < 1 < B_g
        (void)bound;
        const double c = std::cosh(y(0));
        return Mat::Constant(1, 1, -1.0 / (c * c));
    };
    p.grad_lambda = [](const Vec&) { return Mat::Identity(1, 1); };
    // ||grad h|| = sqrt(2) * gain, ||grad g|| <= sqrt(0.25 + 1.5^2)
    p.L_h = std::sqrt(2.0) * fast_gain * (1.0 + 1e-9);
    p.L_g = 1.6;
    p.L_lambda = 1.0;
    p.lambda_curvature = 0.0;
    return p;
}

inline ProblemInstance make_stiff() { return make_linear1d(10.0, "STIFF"); }

inline ProblemInstance make_rot2d() {
    ProblemInstance p;
    p.name = "ROT2D";
    p.d = 2;
    p.s = 1;
    p.B_g = 2.0;
    const double bound = p.B_g;
    Mat A(2, 2);
    A << -1.0, 2.0, -2.0, -1.0;
    p.lambda = [](const Vec& y) { return make_vec({y(0), std::tanh(y(0))}); };
    p.h = [A](const Vec& x, const Vec& y) -> Vec {
        const Vec target = make_vec({y(0), std::tanh(y(0))});
        return A * (x - target);
    };
    p.g = [bound](const Vec& x, const Vec& y) { return saturate(scalar_vec(-y(0) + 0.3 * (x(0) - y(0))), bound); };
    p.y_star = scalar_vec(0.0);
    p.jac_h_x = [A](const Vec&, const Vec&) { return A; };
    p.jac_g_reduced = [bound](const Vec& y) {
        // reduced field is sat(-y): slope -1 inside the saturation radius
        return Mat::Constant(1, 1, std::abs(y(0)) < bound ? -1.0 : 0.0);
    };
    p.grad_lambda = [](const Vec& y) {
        const double c = std::cosh(y(0));
        Mat j(2, 1);
        j << 1.0, 1.0 / (c * c);
        return j;
    };
    // ||[A, -A v]|| = sqrt(5) sqrt(1 + ||v||^2) with ||v||^2 <= 2
    p.L_h = std::sqrt(15.0) * (1.0 + 1e-9);
    p.L_g = std::sqrt(0.09 + 1.69) * (1.0 + 1e-9);
    p.L_lambda = std::sqrt(2.0) * (1.0 + 1e-9);
    // max |tanh''| / 2 = 2 / (3 sqrt 3)
    p.lambda_curvature = 2.0 / (3.0 * std::sqrt(3.0));
    return p;
}

inline std::vector<std::string> builtin_names() { return {"LINEAR1D", "ROT2D", "STIFF"}; }

inline ProblemInstance builtin_problem(const std::string& name) {
    if (name == "LINEAR1D") return make_linear1d();
    if (name == "ROT2D") return make_rot2d();
    if (name == "STIFF") return make_stiff();
    throw Error(ErrorCode::ConfigError, "unknown problem '" + name + "'");
}

// ---------------------------------------------------------------------------
// Instance checks

struct InstanceReport {
    std::size_t probes = 0;
    double max_fast_equilibrium_residual = 0.0;  // ||h(lambda(y), y)||
    double slow_equilibrium_residual = 0.0;      // ||g(lambda(y*), y*)||
    double max_g_norm = 0.0;
    double lipschitz_h = 0.0;
    double lipschitz_g = 0.0;
    double lipschitz_lambda = 0.0;
    double spectral_margin = 0.0;  // mu: max real part of eig(jac_h_x) <= -mu
    double lyapunov_rate = 0.0;    // c: <grad V, g(lambda(y), y)> <= -c ||y - y*||^2
    std::size_t lyapunov_probes = 0;

    bool equilibrium_ok = false;
    bool bound_ok = false;
    bool lipschitz_ok = false;
    bool stable_ok = false;
    bool lyapunov_ok = false;

    bool all_pass() const { return equilibrium_ok && bound_ok && lipschitz_ok && stable_ok && lyapunov_ok; }
};

namespace detail {

inline double radical_inverse(std::uint64_t index, std::uint64_t base) {
    double inv = 1.0 / static_cast<double>(base), scale = inv, out = 0.0;
    while (index > 0) {
        out += static_cast<double>(index % base) * scale;
        index /= base;
        scale *= inv;
    }
    return out;
}

inline constexpr std::array<std::uint64_t, 16> kHaltonBases = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

}  // namespace detail

/// Runs the instance invariants on `probes` points of a randomly shifted
/// Halton sequence over [-probe_radius, probe_radius]^(d+s).
inline InstanceReport check_instance(const ProblemInstance& p, std::size_t probes, std::uint64_t seed,
                                     double probe_radius = 4.0, double residual_tol = 1e-10) {
    if (probes < 1) throw Error(ErrorCode::ParameterOutOfRange, "probes must be >= 1");
    const int dim = p.d + p.s;
    if (dim > static_cast<int>(detail::kHaltonBases.size())) {
        throw Error(ErrorCode::ParameterOutOfRange, "instance dimension too large for probe generator");
    }
    std::vector<double> shift(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
        shift[static_cast<std::size_t>(j)] =
            static_cast<double>(mix64(seed * kGolden + static_cast<std::uint64_t>(j) + 1) >> 11) * 0x1.0p-53;
    }
    auto probe = [&](std::size_t i, Vec& x, Vec& y) {
        x.resize(p.d);
        y.resize(p.s);
        for (int j = 0; j < dim; ++j) {
            double u = detail::radical_inverse(i + 1, detail::kHaltonBases[static_cast<std::size_t>(j)]) +
                       shift[static_cast<std::size_t>(j)];
            u -= std::floor(u);
            const double v = (2.0 * u - 1.0) * probe_radius;
            if (j < p.d) x(j) = v; else y(j - p.d) = v;
        }
    };

    InstanceReport r;
    r.probes = probes;
    r.spectral_margin = std::numeric_limits<double>::infinity();
    r.lyapunov_rate = std::numeric_limits<double>::infinity();
    r.slow_equilibrium_residual = p.g(p.lambda(p.y_star), p.y_star).norm();

    const double delta = 1e-3;
    Vec x, y, xq, yq;
    for (std::size_t i = 0; i < probes; ++i) {
        probe(i, x, y);
        const Vec lam = p.lambda(y);
        r.max_fast_equilibrium_residual = std::max(r.max_fast_equilibrium_residual, p.h(lam, y).norm());
        r.max_g_norm = std::max(r.max_g_norm, p.g(x, y).norm());

        // difference quotients against a deterministic nearby point and the next probe
        for (int pass = 0; pass < 2; ++pass) {
            if (pass == 0) {
                xq = x;
                yq = y;
                for (Eigen::Index j = 0; j < xq.size(); ++j) xq(j) += delta * ((i + j) % 2 == 0 ? 1.0 : -1.0);
                for (Eigen::Index j = 0; j < yq.size(); ++j) yq(j) += delta * ((i + j) % 3 == 0 ? -1.0 : 1.0);
            } else {
                probe(i + 1, xq, yq);
            }
            const double joint = std::sqrt((x - xq).squaredNorm() + (y - yq).squaredNorm());
            if (joint > 0.0) {
                r.lipschitz_h = std::max(r.lipschitz_h, (p.h(x, y) - p.h(xq, yq)).norm() / joint);
                r.lipschitz_g = std::max(r.lipschitz_g, (p.g(x, y) - p.g(xq, yq)).norm() / joint);
            }
            const double dy = (y - yq).norm();
            if (dy > 0.0) r.lipschitz_lambda = std::max(r.lipschitz_lambda, (lam - p.lambda(yq)).norm() / dy);
        }

        const Mat jac = eval_jac_h_x(p, lam, y);
        const double abscissa = jac.rows() == 1 ? jac(0, 0) : jac.eigenvalues().real().maxCoeff();
        r.spectral_margin = std::min(r.spectral_margin, -abscissa);

        const double dist2 = (y - p.y_star).squaredNorm();
        if (lyapunov_slow(p, y) <= p.level_r && dist2 > 1e-12) {
            const double descent = lyapunov_slow_grad(p, y).dot(p.g(lam, y));
            r.lyapunov_rate = std::min(r.lyapunov_rate, -descent / dist2);
            ++r.lyapunov_probes;
        }
    }

    const double slack = 1.0 + 1e-6;
    r.equilibrium_ok = r.max_fast_equilibrium_residual <= residual_tol && r.slow_equilibrium_residual <= residual_tol;
    r.bound_ok = r.max_g_norm <= p.B_g * slack;
    r.lipschitz_ok = r.lipschitz_h <= p.L_h * slack && r.lipschitz_g <= p.L_g * slack &&
                     r.lipschitz_lambda <= p.L_lambda * slack;
    r.stable_ok = r.spectral_margin > 0.0;
    r.lyapunov_ok = r.lyapunov_probes > 0 && r.lyapunov_rate > 0.0;
    return r;
}

}  // namespace ttsa
