#pragma once

#include "ttsa/core.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/odeflow.hpp"
#include "ttsa/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace ttsa {

namespace detail {

inline void check_decay_args(const StepSchedule& s, double kappa, std::size_t n0, std::size_t n) {
    if (!(kappa > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "kappa must be positive");
    if (n > s.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n beyond n_max");
    if (n <= n0) throw Error(ErrorCode::ParameterOutOfRange, "need n0 < n");
}

/// max_{n0 <= k <= m-1} exp(-kappa sum_{i=k+1}^{m-1} steps_i) steps_k for
/// m = n0..n_max, with the empty maximum at m = n0 set to 0. Uses
/// beta_{m+1} = max(steps_m, exp(-kappa steps_m) beta_m).
inline std::vector<double> decayed_max_series(std::span<const double> steps, double kappa, std::size_t n0) {
    std::vector<double> out;
    out.reserve(steps.size() - n0);
    double current = 0.0;
    out.push_back(current);
    for (std::size_t m = n0; m + 1 < steps.size(); ++m) {
        current = std::max(steps[m], std::exp(-kappa * steps[m]) * current);
        out.push_back(current);
    }
    return out;
}

}  // namespace detail

/// beta_n = max_{n0 <= k <= n-1} exp(-kappa_x sum_{i=k+1}^{n-1} a_i) a_k.
inline double compute_beta(const StepSchedule& s, double kappa_x, std::size_t n0, std::size_t n) {
    detail::check_decay_args(s, kappa_x, n0, n);
    double current = 0.0;
    for (std::size_t m = n0; m < n; ++m) current = std::max(s.a(m), std::exp(-kappa_x * s.a(m)) * current);
    return current;
}

/// gamma_n: as compute_beta with b_k and kappa_y.
inline double compute_gamma(const StepSchedule& s, double kappa_y, std::size_t n0, std::size_t n) {
    detail::check_decay_args(s, kappa_y, n0, n);
    double current = 0.0;
    for (std::size_t m = n0; m < n; ++m) current = std::max(s.b(m), std::exp(-kappa_y * s.b(m)) * current);
    return current;
}

/// beta_n for n = n0..n_max (element 0 is the empty maximum, 0).
inline std::vector<double> beta_series(const StepSchedule& s, double kappa_x, std::size_t n0) {
    if (!(kappa_x > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "kappa must be positive");
    if (n0 > s.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n0 beyond n_max");
    return detail::decayed_max_series(s.a_values(), kappa_x, n0);
}

inline std::vector<double> gamma_series(const StepSchedule& s, double kappa_y, std::size_t n0) {
    if (!(kappa_y > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "kappa must be positive");
    if (n0 > s.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n0 beyond n_max");
    return detail::decayed_max_series(s.b_values(), kappa_y, n0);
}

/// Smallest T with exp(-kappa (t_{n0+T} - t_{n0})) H <= epsilon / (8 K_agg).
inline std::size_t settling_time(const DecayEnvelope& envelope, double H_n0, double epsilon, double K_agg,
                                 const StepSchedule& s, std::size_t n0, Clock clock = Clock::fast) {
    if (!(epsilon > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "epsilon must be positive");
    if (!(H_n0 >= 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "H_n0 must be non-negative");
    if (!(K_agg > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "K_agg must be positive");
    if (n0 > s.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n0 beyond n_max");
    if (H_n0 == 0.0) return 0;
    // required clock gap; the slack absorbs rounding in exact-boundary cases
    const double gap = std::log(H_n0 * 8.0 * K_agg / epsilon) / envelope.kappa;
    const double t0 = s.clock(clock, n0);
    const auto clocks = s.clock_values(clock);
    for (std::size_t n = n0; n <= s.n_max(); ++n) {
        const double elapsed = clocks[n] - t0;
        if (elapsed >= gap - 1e-12 * std::max(1.0, std::abs(gap))) return n - n0;
    }
    throw Error(ErrorCode::HorizonExceeded, "initial deviation does not settle before n_max");
}

// ---------------------------------------------------------------------------
// Theorem right-hand sides

struct BoundConstants {
    double C1 = 1.0;
    double C2 = 1.0;
    double K_agg = 1.0;
    bool calibrated = false;
};

/// Calibrated constants. C1 and C2 have no canonical values; this heuristic
/// composes the noise tail constants with the aggregate constant and the
/// decay envelopes:
///   C1 = max(c1, 2 dim)
///   C2 = min(c2 / sqrt(8 K_agg), kappa / (128 K_agg^2 v K_env e^kappa)),  v = 2 / c2^2
/// where (c1, c2) is the weaker of the two channels' certificates.
inline BoundConstants calibrated_constants(const NoiseModel& fast, const NoiseModel& slow, double K_agg,
                                           const DecayEnvelope& env_x, const DecayEnvelope& env_y) {
    const TailConstants tf = fast.constants(), ts = slow.constants();
    const double c1 = std::max(tf.c1, ts.c1);
    const double c2 = std::min(tf.c2, ts.c2);
    const double dim = static_cast<double>(std::max(fast.dim(), slow.dim()));
    const double kappa = std::min(env_x.kappa, env_y.kappa);
    const double K_env = std::max(env_x.K, env_y.K);
    BoundConstants c;
    c.K_agg = K_agg;
    c.calibrated = true;
    c.C1 = std::max(c1, 2.0 * dim);
    if (std::isinf(c2)) {
        c.C2 = std::numeric_limits<double>::infinity();
    } else {
        const double variance = 2.0 / (c2 * c2);
        c.C2 = std::min(c2 / std::sqrt(8.0 * K_agg),
                        kappa / (128.0 * K_agg * K_agg * variance * K_env * std::exp(kappa)));
    }
    return c;
}

struct BoundIngredients {
    std::size_t n0 = 0;
    double kappa_x = 1.0;
    double kappa_y = 1.0;
    double K_x = 1.0;
    double K_y = 1.0;
    BoundConstants constants;
    double H_n0 = 0.0;
    std::size_t T = 0;
    // element i belongs to n = n0 + i
    std::vector<double> beta;
    std::vector<double> gamma;
    std::vector<double> eps;
};

inline BoundIngredients make_ingredients(const StepSchedule& s, const DecayEnvelope& env_x, const DecayEnvelope& env_y,
                                         std::size_t n0, const BoundConstants& constants) {
    BoundIngredients ing;
    ing.n0 = n0;
    ing.kappa_x = env_x.kappa;
    ing.kappa_y = env_y.kappa;
    ing.K_x = env_x.K;
    ing.K_y = env_y.K;
    ing.constants = constants;
    ing.beta = beta_series(s, env_x.kappa, n0);
    ing.gamma = gamma_series(s, env_y.kappa, n0);
    const auto eps = s.eps_values();
    ing.eps.assign(eps.begin() + static_cast<std::ptrdiff_t>(n0), eps.end());
    return ing;
}

inline BoundIngredients make_ingredients(const StepSchedule& s, double kappa_x, double kappa_y, std::size_t n0,
                                         const BoundConstants& constants) {
    DecayEnvelope ex, ey;
    ex.kappa = kappa_x;
    ey.kappa = kappa_y;
    return make_ingredients(s, ex, ey, n0, constants);
}

/// Head (n0..n_max), analytic tail bound (n > n_max) and their sum.
struct SeriesSum {
    double head = 0.0;
    double tail = 0.0;
    bool tail_certified = true;
    double total() const { return head + tail; }
};

struct TheoremRhs {
    SeriesSum a_series;
    SeriesSum eps_series;
    SeriesSum beta_series;
    SeriesSum gamma_series;  // theorem42_rhs only
    bool has_gamma = false;
    double head_only = 1.0;  // 1 minus the heads
    double pre_clamp = 1.0;  // 1 minus heads and tails
    double value = 1.0;      // pre_clamp clamped to [0, 1]
    bool tail_certified = true;
};

namespace detail {

inline double tolerance_power(double epsilon) { return epsilon <= 1.0 ? epsilon * epsilon : epsilon; }

/// Upper bound on C1 int_U^inf exp(-c u^q) du
///   = C1 (1/q) c^(-1/q) Gamma(1/q, c U^q),
/// with Gamma(s, X) <= X^(s-1) e^-X for s < 1 and, for s >= 1, the smaller of
///   X^(s-1) e^-X / (1 - (s-1)/X)                 (X > s - 1)
///   e^-X max(1, 2^(s-2)) (X^(s-1) + Gamma(s))     (any X > 0),
/// the second from (X + u)^(s-1) <= max(1, 2^(s-2)) (X^(s-1) + u^(s-1)).
inline SeriesSum stretched_exp_tail(double C1, double c, double q, double U) {
    SeriesSum out;
    if (std::isinf(c)) return out;
    if (!(c > 0.0) || !(q > 0.0) || !(U > 0.0)) {
        out.tail = std::numeric_limits<double>::infinity();
        out.tail_certified = false;
        return out;
    }
    const double s = 1.0 / q;
    const double log_X = std::log(c) + q * std::log(U);
    const double X = std::exp(log_X);
    double log_gamma = (s - 1.0) * log_X - X;
    if (s >= 1.0) {
        const double hi = std::max((s - 1.0) * log_X, std::lgamma(s));
        const double lo = std::min((s - 1.0) * log_X, std::lgamma(s));
        const double general = -X + std::max(0.0, (s - 2.0) * std::log(2.0)) + hi + std::log1p(std::exp(lo - hi));
        log_gamma = X > s - 1.0 ? std::min(general, log_gamma - std::log1p(-(s - 1.0) / X)) : general;
    }
    const double log_tail = std::log(C1) - std::log(q) - s * std::log(c) + log_gamma;
    out.tail = std::exp(log_tail);
    return out;
}

inline SeriesSum uncertified_tail() {
    SeriesSum out;
    out.tail = std::numeric_limits<double>::infinity();
    out.tail_certified = false;
    return out;
}

inline bool a_unclipped(const PolynomialParams& pp, std::size_t n) {
    return pp.a0 / std::pow(static_cast<double>(n + 1), pp.alpha) < 1.0 - kStepClip;
}

inline bool b_unclipped(const PolynomialParams& pp, std::size_t n) {
    const double b = pp.b0 / std::pow(static_cast<double>(n + 1), pp.beta);
    return a_unclipped(pp, n) && b <= pp.a0 / std::pow(static_cast<double>(n + 1), pp.alpha);
}

/// Tails for n > N = n_max of the a- and eps-series:
///   exp(-C2 sqrt(eps) / sqrt(a_n)) = exp(-c (n+1)^(alpha/2)), c = C2 sqrt(eps / a0),
///   exp(-C2 sqrt(eps) / sqrt(eps_n)) = exp(-c (n+1)^((beta-alpha)/2)), c = C2 sqrt(eps a0 / b0),
/// bounded by the integral from N + 1 (the summands decrease in n).
inline SeriesSum a_tail(const StepSchedule& s, double C1, double C2, double epsilon) {
    const auto& pp = s.polynomial_params();
    const std::size_t N = s.n_max();
    if (!pp || !a_unclipped(*pp, N + 1)) return uncertified_tail();
    return stretched_exp_tail(C1, C2 * std::sqrt(epsilon / pp->a0), pp->alpha / 2.0, static_cast<double>(N + 1));
}

inline SeriesSum eps_tail(const StepSchedule& s, double C1, double C2, double epsilon) {
    const auto& pp = s.polynomial_params();
    const std::size_t N = s.n_max();
    if (!pp || !b_unclipped(*pp, N + 1)) return uncertified_tail();
    return stretched_exp_tail(C1, C2 * std::sqrt(epsilon * pp->a0 / pp->b0), (pp->beta - pp->alpha) / 2.0,
                              static_cast<double>(N + 1));
}

/// Tail of the decayed-max series for steps c0 (n+1)^(-e) past N = n_max.
/// If e (m+1)^e <= kappa c0 m for m >= N, then
/// exp(-kappa step_m) step_{m-1} <= step_m and induction from
/// beta_N <= rho step_{N-1} gives beta_n <= rho step_{n-1} = rho c0 n^(-e)
/// for all n > N, with rho = max(1, beta_N / step_{N-1}). The summand
/// exp(-C2 eps^p / (rho c0) n^e) is then bounded by the integral from N.
inline SeriesSum decayed_max_tail(double C1, double C2, double epsilon, double c0, double exponent, double kappa,
                                  double last_value, double last_step, std::size_t N) {
    const double Nd = static_cast<double>(N);
    if (N < 1) return uncertified_tail();
    const bool absorbing = exponent * std::pow(Nd + 1.0, exponent) <= kappa * c0 * Nd &&
                           kappa * c0 >= exponent * exponent * std::pow(Nd + 1.0, exponent - 1.0);
    if (!absorbing) return uncertified_tail();
    const double rho = std::max(1.0, last_value / last_step);
    return stretched_exp_tail(C1, C2 * tolerance_power(epsilon) / (rho * c0), exponent, Nd);
}

inline SeriesSum beta_tail(const StepSchedule& s, const BoundIngredients& ing, double C1, double C2,
                           double epsilon) {
    const auto& pp = s.polynomial_params();
    const std::size_t N = s.n_max();
    if (!pp || N < 1 || !a_unclipped(*pp, N - 1)) return uncertified_tail();
    return decayed_max_tail(C1, C2, epsilon, pp->a0, pp->alpha, ing.kappa_x, ing.beta.back(), s.a(N - 1), N);
}

inline SeriesSum gamma_tail(const StepSchedule& s, const BoundIngredients& ing, double C1, double C2,
                            double epsilon) {
    const auto& pp = s.polynomial_params();
    const std::size_t N = s.n_max();
    if (!pp || N < 1 || !b_unclipped(*pp, N - 1)) return uncertified_tail();
    return decayed_max_tail(C1, C2, epsilon, pp->b0, pp->beta, ing.kappa_y, ing.gamma.back(), s.b(N - 1), N);
}

inline double safe_exp_term(double C1, double numerator, double denominator) {
    if (denominator <= 0.0) return 0.0;  // empty maximum: exp(-inf)
    if (std::isnan(numerator)) numerator = 0.0;  // C2 = inf at epsilon = 0
    return C1 * std::exp(-numerator / denominator);
}

inline void check_ingredients(const BoundIngredients& ing, const StepSchedule& s, double epsilon, std::size_t n0) {
    if (!(epsilon >= 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "epsilon must be non-negative");
    if (ing.n0 != n0) throw Error(ErrorCode::ParameterOutOfRange, "ingredients were built for another n0");
    if (ing.beta.size() != s.n_max() - n0 + 1 || ing.gamma.size() != ing.beta.size() ||
        ing.eps.size() != ing.beta.size()) {
        throw Error(ErrorCode::ParameterOutOfRange, "ingredients do not match the schedule");
    }
}

inline TheoremRhs theorem_rhs(const BoundIngredients& ing, const StepSchedule& s, double epsilon, std::size_t n0,
                              bool with_gamma) {
    check_ingredients(ing, s, epsilon, n0);
    const double C1 = ing.constants.C1, C2 = ing.constants.C2;
    const double root_eps = std::sqrt(epsilon);
    const double power = tolerance_power(epsilon);
    CompensatedSum sa, se, sb, sg;
    for (std::size_t i = 0; i < ing.beta.size(); ++i) {
        const std::size_t n = n0 + i;
        sa.add(safe_exp_term(C1, C2 * root_eps, std::sqrt(s.a(n))));
        se.add(safe_exp_term(C1, C2 * root_eps, std::sqrt(ing.eps[i])));
        sb.add(safe_exp_term(C1, C2 * power, ing.beta[i]));
        if (with_gamma) sg.add(safe_exp_term(C1, C2 * power, ing.gamma[i]));
    }
    TheoremRhs r;
    r.has_gamma = with_gamma;
    r.a_series = a_tail(s, C1, C2, epsilon);
    r.eps_series = eps_tail(s, C1, C2, epsilon);
    r.beta_series = beta_tail(s, ing, C1, C2, epsilon);
    r.a_series.head = sa.value();
    r.eps_series.head = se.value();
    r.beta_series.head = sb.value();
    double heads = r.a_series.head + r.eps_series.head + r.beta_series.head;
    double totals = r.a_series.total() + r.eps_series.total() + r.beta_series.total();
    r.tail_certified = r.a_series.tail_certified && r.eps_series.tail_certified && r.beta_series.tail_certified;
    if (with_gamma) {
        r.gamma_series = gamma_tail(s, ing, C1, C2, epsilon);
        r.gamma_series.head = sg.value();
        heads += r.gamma_series.head;
        totals += r.gamma_series.total();
        r.tail_certified = r.tail_certified && r.gamma_series.tail_certified;
    }
    r.head_only = 1.0 - heads;
    r.pre_clamp = 1.0 - totals;
    r.value = std::clamp(r.pre_clamp, 0.0, 1.0);
    return r;
}

}  // namespace detail

/// 1 - sum C1 exp(-C2 sqrt(eps)/sqrt(a_n)) - sum C1 exp(-C2 sqrt(eps)/sqrt(eps_n))
///   - sum C1 exp(-C2 eps^p / beta_n), p = 2 for eps <= 1 and 1 otherwise.
inline TheoremRhs theorem41_rhs(const BoundIngredients& ing, const StepSchedule& s, double epsilon, std::size_t n0) {
    return detail::theorem_rhs(ing, s, epsilon, n0, false);
}

/// theorem41_rhs minus the gamma-series sum C1 exp(-C2 eps^p / gamma_n).
inline TheoremRhs theorem42_rhs(const BoundIngredients& ing, const StepSchedule& s, double epsilon, std::size_t n0) {
    return detail::theorem_rhs(ing, s, epsilon, n0, true);
}

/// Running value 1 - (partial heads up to n) for n = n0..n_max.
struct RunningRhs {
    std::vector<double> thm41;
    std::vector<double> thm42;
};

inline RunningRhs running_rhs(const BoundIngredients& ing, const StepSchedule& s, double epsilon) {
    detail::check_ingredients(ing, s, epsilon, ing.n0);
    const double C1 = ing.constants.C1, C2 = ing.constants.C2;
    const double root_eps = std::sqrt(epsilon);
    const double power = detail::tolerance_power(epsilon);
    RunningRhs out;
    out.thm41.reserve(ing.beta.size());
    out.thm42.reserve(ing.beta.size());
    CompensatedSum s41, s42;
    for (std::size_t i = 0; i < ing.beta.size(); ++i) {
        const std::size_t n = ing.n0 + i;
        const double common = detail::safe_exp_term(C1, C2 * root_eps, std::sqrt(s.a(n))) +
                              detail::safe_exp_term(C1, C2 * root_eps, std::sqrt(ing.eps[i])) +
                              detail::safe_exp_term(C1, C2 * power, ing.beta[i]);
        s41.add(common);
        s42.add(common);
        s42.add(detail::safe_exp_term(C1, C2 * power, ing.gamma[i]));
        out.thm41.push_back(1.0 - s41.value());
        out.thm42.push_back(1.0 - s42.value());
    }
    return out;
}

inline void write_bounds_csv(std::ostream& os, const BoundIngredients& ing, const StepSchedule& s, double epsilon) {
    const RunningRhs running = running_rhs(ing, s, epsilon);
    os << "n,beta_n,gamma_n,eps_n,thm41_rhs,thm42_rhs\n";
    const auto old_precision = os.precision(17);
    for (std::size_t i = 0; i < ing.beta.size(); ++i) {
        os << ing.n0 + i << ',' << ing.beta[i] << ',' << ing.gamma[i] << ',' << ing.eps[i] << ','
           << running.thm41[i] << ',' << running.thm42[i] << '\n';
    }
    os.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Pathwise deviation brackets

/// Bracketed terms of the fast and slow deviation bounds along one path,
/// for n = n0..n_max. RHS = K_agg * bracket.
///   fast: ||S_n|| + e^{-kappa_x (t~_n - t~_{n0})} H + sup a_k + sup a_k ||M1||^2
///         + sup eps_k + sup eps_k ||M2||^2
///   slow: ||S^_n|| + sup ||S_k|| + sup a_k + sup a_k ||M1||^2 + sup eps_k
///         + sup eps_k ||M2||^2 + e^{-kappa_y (t^_n - t^_{n0})} D + sup eps_k H
/// with sups over n0 <= k <= n-1 (zero when empty) and D the distance
/// between y_{n0} and the slow reference at t^_{n0}.
struct PathBrackets {
    std::size_t n0 = 0;
    double H_n0 = 0.0;
    std::vector<double> fast;
    std::vector<double> slow;
    std::vector<double> S1_norm;
    std::vector<double> S2_norm;
};

inline PathBrackets path_brackets(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow_x,
                                  const FundamentalMatrixProvider& flow_y, double kappa_x, double kappa_y,
                                  std::size_t n0, double slow_initial_gap = 0.0) {
    if (n0 < tr.full_from || n0 > tr.n_max()) {
        throw Error(ErrorCode::IndexBeyondHorizon, "bracket window must lie in the stored window");
    }
    const std::vector<Vec> S1 = martingale_series_S1(tr, flow_x, n0);
    const std::vector<Vec> S2 = martingale_series_S2(tr, flow_y, n0);
    const StepSchedule& s = tr.schedule;
    PathBrackets out;
    out.n0 = n0;
    out.H_n0 = (tr.x_at(n0) - tr.z_at(n0)).norm();
    const std::size_t count = tr.n_max() - n0 + 1;
    out.fast.resize(count);
    out.slow.resize(count);
    out.S1_norm.resize(count);
    out.S2_norm.resize(count);
    double sup_a = 0.0, sup_a_m = 0.0, sup_e = 0.0, sup_e_m = 0.0, sup_S1 = 0.0;
    const double tf0 = s.clock(Clock::fast, n0), ts0 = s.clock(Clock::slow, n0);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t n = n0 + i;
        if (i > 0) {
            const std::size_t k = n - 1;
            sup_a = std::max(sup_a, s.a(k));
            sup_a_m = std::max(sup_a_m, s.a(k) * tr.noise_fast_at(k).squaredNorm());
            sup_e = std::max(sup_e, s.eps(k));
            sup_e_m = std::max(sup_e_m, s.eps(k) * tr.noise_slow_at(k).squaredNorm());
            sup_S1 = std::max(sup_S1, S1[i - 1].norm());
        }
        out.S1_norm[i] = S1[i].norm();
        out.S2_norm[i] = S2[i].norm();
        const double forget_x = std::exp(-kappa_x * (s.clock(Clock::fast, n) - tf0)) * out.H_n0;
        const double forget_y = std::exp(-kappa_y * (s.clock(Clock::slow, n) - ts0)) * slow_initial_gap;
        const double shared = sup_a + sup_a_m + sup_e + sup_e_m;
        out.fast[i] = out.S1_norm[i] + forget_x + shared;
        out.slow[i] = out.S2_norm[i] + sup_S1 + shared + forget_y + sup_e * out.H_n0;
    }
    return out;
}

/// K_agg times the fast bracket at step n.
inline double deviation_bound_rhs_fast(const BoundIngredients& ing, const TrajectoryRecord& tr,
                                       const FundamentalMatrixProvider& flow_x,
                                       const FundamentalMatrixProvider& flow_y, std::size_t n) {
    if (n < ing.n0 || n > tr.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n outside [n0, n_max]");
    const PathBrackets br = path_brackets(tr, flow_x, flow_y, ing.kappa_x, ing.kappa_y, ing.n0);
    return ing.constants.K_agg * br.fast[n - ing.n0];
}

inline double deviation_bound_rhs_slow(const BoundIngredients& ing, const TrajectoryRecord& tr,
                                       const FundamentalMatrixProvider& flow_x,
                                       const FundamentalMatrixProvider& flow_y, std::size_t n) {
    if (n < ing.n0 || n > tr.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n outside [n0, n_max]");
    const PathBrackets br = path_brackets(tr, flow_x, flow_y, ing.kappa_x, ing.kappa_y, ing.n0);
    return ing.constants.K_agg * br.slow[n - ing.n0];
}

}  // namespace ttsa
