#pragma once

#include "ttsa/core.hpp"
#include "ttsa/problem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace ttsa {

/// Fixed-step RK4. `dt` is the largest step: an interval of length L is
/// covered by ceil(L / dt) equal sub-steps, so every requested stop time is
/// hit exactly.
struct FlowConfig {
    double dt = 1e-3;
    double abs_tol = 1e-8;
};

enum class Direction { forward, backward };

struct Path {
    std::vector<double> t;
    std::vector<Vec> x;
    const Vec& back() const { return x.back(); }
};

namespace detail {

inline std::size_t substep_count(double length, double dt) {
    if (!(dt > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "flow dt must be positive");
    if (length <= 0.0) return 0;
    const double ratio = length / dt;
    const auto whole = static_cast<std::size_t>(std::ceil(ratio * (1.0 - 1e-12)));
    return std::max<std::size_t>(1, whole);
}

template <typename State, typename Deriv>
State rk4_step(const Deriv& f, double t, const State& x, double h) {
    const State k1 = f(t, x);
    const State k2 = f(t + 0.5 * h, State(x + (0.5 * h) * k1));
    const State k3 = f(t + 0.5 * h, State(x + (0.5 * h) * k2));
    const State k4 = f(t + h, State(x + h * k3));
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Advances x from t0 to t1 in equal sub-steps no longer than dt.
template <typename State, typename Deriv>
State rk4_advance(const Deriv& f, double t0, double t1, State x, double dt) {
    const std::size_t steps = substep_count(t1 - t0, dt);
    if (steps == 0) return x;
    const double h = (t1 - t0) / static_cast<double>(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        x = rk4_step(f, t0 + static_cast<double>(i) * h, x, h);
        if (!x.allFinite()) throw Error(ErrorCode::NonFiniteState, "state left the finite range");
    }
    return x;
}

template <typename Deriv>
Path rk4_path(const Deriv& f, const Vec& x0, double t0, double t1, double dt) {
    if (!x0.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite initial state");
    if (t1 < t0) throw Error(ErrorCode::ParameterOutOfRange, "time span must satisfy t1 >= t0");
    Path path;
    const std::size_t steps = substep_count(t1 - t0, dt);
    path.t.reserve(steps + 1);
    path.x.reserve(steps + 1);
    path.t.push_back(t0);
    path.x.push_back(x0);
    if (steps == 0) return path;
    const double h = (t1 - t0) / static_cast<double>(steps);
    Vec x = x0;
    for (std::size_t i = 0; i < steps; ++i) {
        x = rk4_step(f, t0 + static_cast<double>(i) * h, x, h);
        if (!x.allFinite()) throw Error(ErrorCode::NonFiniteState, "state left the finite range");
        path.t.push_back(i + 1 == steps ? t1 : t0 + static_cast<double>(i + 1) * h);
        path.x.push_back(x);
    }
    return path;
}

// 4-point Gauss-Legendre on [-1, 1]
inline constexpr std::array<double, 4> kGaussNodes = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                                      0.8611363115940526};
inline constexpr std::array<double, 4> kGaussWeights = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                                        0.3478548451374538};

}  // namespace detail

/// Solves x' = h(x, y) with y frozen (backward: x' = -h).
inline Path integrate_fast_ode(const ProblemInstance& p, const Vec& y_frozen, const Vec& x0, double t0, double t1,
                               const FlowConfig& cfg, Direction direction = Direction::forward) {
    const double sign = direction == Direction::forward ? 1.0 : -1.0;
    return detail::rk4_path([&](double, const Vec& x) -> Vec { return sign * p.h(x, y_frozen); }, x0, t0, t1, cfg.dt);
}

/// Solves y' = g(lambda(y), y) (backward: y' = -g(lambda(y), y)).
inline Path integrate_slow_ode(const ProblemInstance& p, const Vec& y0, double t0, double t1, const FlowConfig& cfg,
                               Direction direction = Direction::forward) {
    const double sign = direction == Direction::forward ? 1.0 : -1.0;
    return detail::rk4_path([&](double, const Vec& y) -> Vec { return sign * p.g(p.lambda(y), y); }, y0, t0, t1,
                            cfg.dt);
}

/// Slow ODE solution sampled at the given increasing knot times.
inline std::vector<Vec> integrate_slow_ode_on_grid(const ProblemInstance& p, const Vec& y0,
                                                   std::span<const double> knots, const FlowConfig& cfg) {
    std::vector<Vec> out;
    out.reserve(knots.size());
    if (knots.empty()) return out;
    auto field = [&](double, const Vec& y) -> Vec { return p.g(p.lambda(y), y); };
    Vec y = y0;
    out.push_back(y);
    for (std::size_t k = 1; k < knots.size(); ++k) {
        y = detail::rk4_advance(field, knots[k - 1], knots[k], y, cfg.dt);
        out.push_back(y);
    }
    return out;
}

enum class FlowKind { fast, slow };

/// The constant trajectory a fundamental matrix is linearised along:
/// (lambda(y), y) for the fast flow, y* for the slow flow.
struct FlowAnchor {
    FlowKind kind = FlowKind::fast;
    Vec y;

    static FlowAnchor fast(const Vec& y_frozen) { return {FlowKind::fast, y_frozen}; }
    static FlowAnchor slow() { return {FlowKind::slow, Vec()}; }
};

/// Jacobian D (fast) or D~ (slow) at the anchor.
inline Mat flow_generator(const ProblemInstance& p, const FlowAnchor& anchor) {
    if (anchor.kind == FlowKind::fast) return eval_jac_h_x(p, eval_lambda(p, anchor.y), anchor.y);
    return eval_jac_g_reduced(p, p.y_star);
}

/// Phi(t, s) by step-by-step RK4 of Phi' = D(x(t), y(t)) Phi, Phi(s, s) = I.
inline Mat fundamental_matrix(const ProblemInstance& p, const FlowAnchor& anchor, double s, double t,
                              const FlowConfig& cfg) {
    if (t < s) throw Error(ErrorCode::ParameterOutOfRange, "fundamental matrix needs t >= s");
    const int dim = anchor.kind == FlowKind::fast ? p.d : p.s;
    const Mat identity = Mat::Identity(dim, dim);
    if (t == s) return identity;
    // the anchor trajectory is constant, so D is re-evaluated at the same point every stage
    const Vec y_anchor = anchor.kind == FlowKind::fast ? anchor.y : p.y_star;
    const Vec x_anchor = anchor.kind == FlowKind::fast ? eval_lambda(p, y_anchor) : Vec();
    auto field = [&](double, const Mat& phi) -> Mat {
        const Mat D = anchor.kind == FlowKind::fast ? eval_jac_h_x(p, x_anchor, y_anchor)
                                                    : eval_jac_g_reduced(p, y_anchor);
        return D * phi;
    };
    return detail::rk4_advance(field, s, t, identity, cfg.dt);
}

/// Fundamental matrices of a constant-coefficient variational system.
///
/// phi(t, s) equals ceil((t - s) / dt) RK4 steps of Phi' = D Phi. For a
/// linear autonomous system one RK4 step is the degree-4 Taylor polynomial
/// P(h) of exp(hD), so the m-step product is computed as P(h)^m by repeated
/// squaring.
class FundamentalMatrixProvider {
public:
    FundamentalMatrixProvider() = default;

    FundamentalMatrixProvider(const ProblemInstance& p, const FlowAnchor& anchor, const FlowConfig& cfg)
        : FundamentalMatrixProvider(flow_generator(p, anchor), anchor.kind, cfg) {}

    FundamentalMatrixProvider(Mat generator, FlowKind kind, const FlowConfig& cfg)
        : generator_(std::move(generator)), kind_(kind), cfg_(cfg), available_(true) {
        if (generator_.rows() != generator_.cols() || generator_.rows() == 0) {
            throw Error(ErrorCode::ParameterOutOfRange, "generator must be square");
        }
        if (!generator_.allFinite()) throw Error(ErrorCode::NonFiniteState, "non-finite generator");
        if (!(cfg.dt > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "flow dt must be positive");
    }

    bool available() const { return available_; }
    FlowKind kind() const { return kind_; }
    int dim() const { return static_cast<int>(generator_.rows()); }
    const Mat& generator() const { return generator_; }
    const FlowConfig& config() const { return cfg_; }

    /// Phi(s + tau, s).
    Mat phi_elapsed(double tau) const {
        require();
        if (tau < 0.0) throw Error(ErrorCode::ParameterOutOfRange, "fundamental matrix needs t >= s");
        const Mat identity = Mat::Identity(dim(), dim());
        const std::size_t steps = detail::substep_count(tau, cfg_.dt);
        if (steps == 0) return identity;
        const double h = tau / static_cast<double>(steps);
        const Mat hD = h * generator_;
        const Mat hD2 = hD * hD;
        Mat base = identity + hD + hD2 / 2.0 + (hD2 * hD) / 6.0 + (hD2 * hD2) / 24.0;
        Mat result = identity;
        std::size_t m = steps;
        while (m > 0) {
            if (m & 1U) result = result * base;
            m >>= 1U;
            if (m > 0) base = base * base;
        }
        return result;
    }

    Mat phi(double t, double s) const { return phi_elapsed(t - s); }

    /// int_{t_k}^{t_k1} Phi(t_n, s) ds by 4-point Gauss-Legendre.
    Mat weight(double t_n, double t_k, double t_k1) const {
        require();
        if (t_k1 < t_k || t_k1 > t_n) {
            throw Error(ErrorCode::ParameterOutOfRange, "weight interval must satisfy t_k <= t_k1 <= t_n");
        }
        Mat out = Mat::Zero(dim(), dim());
        if (t_k1 == t_k) return out;
        const double half = 0.5 * (t_k1 - t_k);
        const double mid = 0.5 * (t_k1 + t_k);
        for (std::size_t i = 0; i < 4; ++i) {
            const double s = mid + half * detail::kGaussNodes[i];
            out += detail::kGaussWeights[i] * phi_elapsed(t_n - s);
        }
        return half * out;
    }

private:
    void require() const {
        if (!available_) throw Error(ErrorCode::FlowUnavailable, "no fundamental matrix provider");
    }

    Mat generator_;
    FlowKind kind_ = FlowKind::fast;
    FlowConfig cfg_;
    bool available_ = false;
};

inline Mat integrate_phi_weight(const FundamentalMatrixProvider& flow, double t_n, double t_k, double t_k1) {
    return flow.weight(t_n, t_k, t_k1);
}

inline Mat integrate_phi_weight(const ProblemInstance& p, const FlowAnchor& anchor, double t_n, double t_k,
                                double t_k1, const FlowConfig& cfg) {
    return FundamentalMatrixProvider(p, anchor, cfg).weight(t_n, t_k, t_k1);
}

/// ||Phi(t, s)|| <= K exp(-kappa (t - s)).
struct DecayEnvelope {
    double K = 1.0;
    double kappa = 1.0;
    double fit_residual = 0.0;
    double window_start = 0.0;
    double window_end = 0.0;
    bool dominates = false;
    std::vector<double> t;
    std::vector<double> norm;

    double at(double elapsed) const { return K * std::exp(-kappa * elapsed); }
};

/// Least-squares slope of log||Phi(t, 0)|| over the tail half of the grid;
/// K is the smallest constant dominating every sample, inflated by 1e-6.
inline DecayEnvelope fit_decay_envelope(const FundamentalMatrixProvider& flow, double horizon, std::size_t grid) {
    if (!(horizon > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "horizon must be positive");
    if (grid < 2) throw Error(ErrorCode::ParameterOutOfRange, "decay fit needs at least 2 grid intervals");
    DecayEnvelope env;
    env.t.resize(grid + 1);
    env.norm.resize(grid + 1);
    std::vector<double> logs(grid + 1);
    for (std::size_t i = 0; i <= grid; ++i) {
        env.t[i] = horizon * static_cast<double>(i) / static_cast<double>(grid);
        env.norm[i] = spectral_norm(flow.phi_elapsed(env.t[i]));
        if (!(env.norm[i] > 0.0)) throw Error(ErrorCode::FitFailed, "fundamental matrix collapsed to zero");
        logs[i] = std::log(env.norm[i]);
    }
    const std::size_t first = grid / 2;
    const double count = static_cast<double>(grid + 1 - first);
    double mean_t = 0.0, mean_l = 0.0;
    for (std::size_t i = first; i <= grid; ++i) {
        mean_t += env.t[i];
        mean_l += logs[i];
    }
    mean_t /= count;
    mean_l /= count;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = first; i <= grid; ++i) {
        sxx += (env.t[i] - mean_t) * (env.t[i] - mean_t);
        sxy += (env.t[i] - mean_t) * (logs[i] - mean_l);
    }
    const double slope = sxy / sxx;
    if (!(slope < 0.0)) throw Error(ErrorCode::FitFailed, "no exponential decay on the sampled window");
    env.kappa = -slope;
    double resid2 = 0.0;
    for (std::size_t i = first; i <= grid; ++i) {
        const double r = logs[i] - (mean_l + slope * (env.t[i] - mean_t));
        resid2 += r * r;
    }
    env.fit_residual = std::sqrt(resid2 / count);
    env.window_start = env.t[first];
    env.window_end = horizon;

    double log_k = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= grid; ++i) log_k = std::max(log_k, logs[i] + env.kappa * env.t[i]);
    env.K = std::exp(log_k) * (1.0 + 1e-6);
    env.dominates = true;
    for (std::size_t i = 0; i <= grid; ++i) {
        if (env.norm[i] > env.at(env.t[i])) env.dominates = false;
    }
    return env;
}

inline DecayEnvelope fit_decay_envelope(const ProblemInstance& p, const FlowAnchor& anchor, double horizon,
                                        std::size_t grid, const FlowConfig& cfg) {
    return fit_decay_envelope(FundamentalMatrixProvider(p, anchor, cfg), horizon, grid);
}

// ---------------------------------------------------------------------------
// Variation-of-constants check

using TimeField = std::function<Vec(double t, const Vec& x)>;

struct OdeSystem {
    TimeField f;
    std::function<Mat(double t, const Vec& x)> jacobian;  // optional; central differences otherwise

    Mat jac(double t, const Vec& x) const {
        if (jacobian) return jacobian(t, x);
        return detail::central_difference([&](const Vec& xx) { return f(t, xx); }, x, x.size());
    }
};

struct AlekseevOptions {
    std::size_t output_intervals = 20;
    std::size_t panels_per_interval = 2;
};

struct AlekseevReport {
    std::vector<double> t;
    std::vector<Vec> direct;   // p(t) by integrating the perturbed system
    std::vector<Vec> formula;  // u(t) + Phi(t, t0, p0)(p0 - u0) + int Phi(t, s, p(s)) g(s, p(s)) ds
    std::vector<double> residual;
    double sup_residual = 0.0;
};

/// Compares the perturbed solution p(t) of x' = f + g with the
/// variation-of-constants right-hand side. Phi(t, s, x) is the derivative of
/// the unperturbed flow map along u(., s, x); the integral uses composite
/// 4-point Gauss-Legendre on panels aligned with the output times.
///
/// For nonlinear f the middle term is the linearisation of
/// u(t, t0, p0) - u(t, t0, u0) and is exact only when p0 = u0.
inline AlekseevReport verify_alekseev(const OdeSystem& base, const TimeField& perturbation, const Vec& p0,
                                      const Vec& u0, double t0, double t1, const FlowConfig& cfg,
                                      const AlekseevOptions& opt = {}) {
    if (!(t1 > t0)) throw Error(ErrorCode::ParameterOutOfRange, "alekseev span must satisfy t1 > t0");
    if (opt.output_intervals < 1 || opt.panels_per_interval < 1) {
        throw Error(ErrorCode::ParameterOutOfRange, "alekseev grid must be non-empty");
    }
    if (!p0.allFinite() || !u0.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite initial state");
    const Eigen::Index d = p0.size();
    const std::size_t J = opt.output_intervals;
    const std::size_t panels = J * opt.panels_per_interval;
    const double out_step = (t1 - t0) / static_cast<double>(J);
    const double panel_width = (t1 - t0) / static_cast<double>(panels);

    AlekseevReport rep;
    rep.t.resize(J + 1);
    for (std::size_t j = 0; j <= J; ++j) rep.t[j] = j == J ? t1 : t0 + static_cast<double>(j) * out_step;

    auto perturbed = [&](double t, const Vec& x) -> Vec { return base.f(t, x) + perturbation(t, x); };
    auto unperturbed = [&](double t, const Vec& x) -> Vec { return base.f(t, x); };
    // state (u, w): u' = f(t, u), w' = Df(t, u) w
    auto tangent = [&](double t, const Mat& uw) -> Mat {
        const Vec u = uw.col(0);
        Mat out(d, 2);
        out.col(0) = base.f(t, u);
        out.col(1) = base.jac(t, u) * uw.col(1);
        return out;
    };

    // direct solution and unperturbed solution at the output times
    rep.direct.assign(J + 1, p0);
    std::vector<Vec> u_out(J + 1, u0);
    std::vector<Vec> shift(J + 1, p0 - u0);
    {
        Vec p = p0, u = u0;
        Mat uw(d, 2);
        uw.col(0) = p0;
        uw.col(1) = p0 - u0;
        for (std::size_t j = 1; j <= J; ++j) {
            p = detail::rk4_advance(perturbed, rep.t[j - 1], rep.t[j], p, cfg.dt);
            u = detail::rk4_advance(unperturbed, rep.t[j - 1], rep.t[j], u, cfg.dt);
            uw = detail::rk4_advance(tangent, rep.t[j - 1], rep.t[j], uw, cfg.dt);
            rep.direct[j] = p;
            u_out[j] = u;
            shift[j] = uw.col(1);
        }
    }

    // quadrature nodes (ascending) and p(s) at each node
    struct Node {
        double s;
        double w;
        std::size_t panel;
    };
    std::vector<Node> nodes;
    nodes.reserve(panels * 4);
    for (std::size_t i = 0; i < panels; ++i) {
        const double a = t0 + static_cast<double>(i) * panel_width;
        const double b = i + 1 == panels ? t1 : a + panel_width;
        for (std::size_t q = 0; q < 4; ++q) {
            nodes.push_back({0.5 * (a + b) + 0.5 * (b - a) * detail::kGaussNodes[q],
                             0.5 * (b - a) * detail::kGaussWeights[q], i});
        }
    }

    std::vector<Vec> integral(J + 1, Vec::Zero(d));
    Vec p_node = p0;
    double s_prev = t0;
    for (const Node& node : nodes) {
        p_node = detail::rk4_advance(perturbed, s_prev, node.s, p_node, cfg.dt);
        s_prev = node.s;
        Mat uw(d, 2);
        uw.col(0) = p_node;
        uw.col(1) = perturbation(node.s, p_node);
        // the first output time at or after the end of this node's panel
        const std::size_t first_out = node.panel / opt.panels_per_interval + 1;
        double t_prev = node.s;
        for (std::size_t j = first_out; j <= J; ++j) {
            uw = detail::rk4_advance(tangent, t_prev, rep.t[j], uw, cfg.dt);
            t_prev = rep.t[j];
            integral[j] += node.w * uw.col(1);
        }
    }

    rep.formula.resize(J + 1);
    rep.residual.resize(J + 1);
    for (std::size_t j = 0; j <= J; ++j) {
        rep.formula[j] = u_out[j] + shift[j] + integral[j];
        rep.residual[j] = (rep.direct[j] - rep.formula[j]).norm();
        rep.sup_residual = std::max(rep.sup_residual, rep.residual[j]);
    }
    return rep;
}

}  // namespace ttsa
