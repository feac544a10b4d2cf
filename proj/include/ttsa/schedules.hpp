#pragma once

#include "ttsa/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ttsa {

enum class ScheduleKind { polynomial, constant, table };

inline const char* to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::polynomial: return "polynomial";
        case ScheduleKind::constant: return "constant";
        case ScheduleKind::table: return "table";
    }
    return "unknown";
}

enum class Clock { fast, slow };

struct PolynomialParams {
    double a0 = 1.0;
    double alpha = 0.6;
    double b0 = 1.0;
    double beta = 0.9;
};

/// Gap kept between a_n and 1 when clipping.
inline constexpr double kStepClip = 1e-9;

/// Step-size sequences {a_n}, {b_n} for n = 0..n_max together with the fast
/// and slow clocks t~_n = sum_{k<n} a_k and t^_n = sum_{k<n} b_k.
///
/// The data is immutable and shared between copies.
class StepSchedule {
public:
    /// Placeholder: constant steps 0.5 on n = 0, 1.
    StepSchedule() : StepSchedule(constant(0.5, 0.5, 1)) {}

    static StepSchedule polynomial(double a0, double alpha, double b0, double beta, std::size_t n_max) {
        if (!(a0 > 0.0) || !(b0 > 0.0) || !std::isfinite(a0) || !std::isfinite(b0)) {
            throw Error(ErrorCode::ParameterOutOfRange, "a0 and b0 must be positive and finite");
        }
        if (!(alpha > 0.5 && alpha <= 1.0)) {
            throw Error(ErrorCode::ParameterOutOfRange, "alpha must lie in (0.5, 1], got " + std::to_string(alpha));
        }
        if (!(beta > alpha && beta <= 1.0)) {
            throw Error(ErrorCode::ParameterOutOfRange,
                        "beta must lie in (alpha, 1], got beta=" + std::to_string(beta) +
                            " alpha=" + std::to_string(alpha));
        }
        if (n_max < 1) throw Error(ErrorCode::ParameterOutOfRange, "n_max must be at least 1");
        std::vector<double> a(n_max + 1), b(n_max + 1);
        for (std::size_t n = 0; n <= n_max; ++n) {
            a[n] = polynomial_a(a0, alpha, n);
            b[n] = std::min(b0 / std::pow(static_cast<double>(n + 1), beta), a[n]);
        }
        return StepSchedule(ScheduleKind::polynomial, PolynomialParams{a0, alpha, b0, beta}, std::move(a),
                            std::move(b));
    }

    /// Constant steps a_n = a, b_n = b. Violates square summability; used for
    /// closed-form checks.
    static StepSchedule constant(double a, double b, std::size_t n_max) {
        if (!(a > 0.0 && a < 1.0) || !(b > 0.0 && b <= a)) {
            throw Error(ErrorCode::ParameterOutOfRange, "constant schedule needs 0 < b <= a < 1");
        }
        if (n_max < 1) throw Error(ErrorCode::ParameterOutOfRange, "n_max must be at least 1");
        return StepSchedule(ScheduleKind::constant, std::nullopt, std::vector<double>(n_max + 1, a),
                            std::vector<double>(n_max + 1, b));
    }

    /// User table, n = 0..size-1. Only positivity and finiteness are enforced
    /// here; validate_schedule reports the remaining conditions.
    static StepSchedule table(std::vector<double> a, std::vector<double> b) {
        if (a.size() != b.size() || a.size() < 2) {
            throw Error(ErrorCode::ParameterOutOfRange, "table needs matching a and b columns with >= 2 rows");
        }
        for (std::size_t n = 0; n < a.size(); ++n) {
            if (!std::isfinite(a[n]) || !std::isfinite(b[n]) || !(a[n] > 0.0) || !(b[n] > 0.0)) {
                throw Error(ErrorCode::ParameterOutOfRange, "table row " + std::to_string(n) + " is not positive");
            }
        }
        return StepSchedule(ScheduleKind::table, std::nullopt, std::move(a), std::move(b));
    }

    ScheduleKind kind() const { return data_->kind; }
    std::size_t n_max() const { return data_->a.size() - 1; }
    const std::optional<PolynomialParams>& polynomial_params() const { return data_->params; }

    double a(std::size_t n) const { return data_->a[check(n)]; }
    double b(std::size_t n) const { return data_->b[check(n)]; }
    double eps(std::size_t n) const { return data_->eps[check(n)]; }
    double step(Clock which, std::size_t n) const { return which == Clock::fast ? a(n) : b(n); }

    /// t~_n (fast) or t^_n (slow).
    double clock(Clock which, std::size_t n) const {
        return which == Clock::fast ? data_->t_fast[check(n)] : data_->t_slow[check(n)];
    }

    std::span<const double> a_values() const { return data_->a; }
    std::span<const double> b_values() const { return data_->b; }
    std::span<const double> eps_values() const { return data_->eps; }
    std::span<const double> clock_values(Clock which) const {
        return which == Clock::fast ? std::span<const double>(data_->t_fast) : std::span<const double>(data_->t_slow);
    }
    std::span<const double> step_values(Clock which) const { return which == Clock::fast ? a_values() : b_values(); }

    static double polynomial_a(double a0, double alpha, std::size_t n) {
        return std::min(a0 / std::pow(static_cast<double>(n + 1), alpha), 1.0 - kStepClip);
    }

private:
    struct Data {
        ScheduleKind kind;
        std::optional<PolynomialParams> params;
        std::vector<double> a, b, eps, t_fast, t_slow;
    };

    StepSchedule(ScheduleKind kind, std::optional<PolynomialParams> params, std::vector<double> a,
                 std::vector<double> b) {
        auto data = std::make_shared<Data>();
        data->kind = kind;
        data->params = params;
        const std::size_t count = a.size();
        data->eps.resize(count);
        data->t_fast.resize(count);
        data->t_slow.resize(count);
        CompensatedSum fast, slow;
        for (std::size_t n = 0; n < count; ++n) {
            data->eps[n] = b[n] / a[n];
            data->t_fast[n] = fast.value();
            data->t_slow[n] = slow.value();
            fast.add(a[n]);
            slow.add(b[n]);
        }
        data->a = std::move(a);
        data->b = std::move(b);
        data_ = std::move(data);
    }

    std::size_t check(std::size_t n) const {
        if (n >= data_->a.size()) {
            throw Error(ErrorCode::IndexBeyondHorizon,
                        "index " + std::to_string(n) + " beyond n_max=" + std::to_string(n_max()));
        }
        return n;
    }

    std::shared_ptr<const Data> data_;
};

inline StepSchedule make_polynomial_schedule(double a0, double alpha, double b0, double beta, std::size_t n_max) {
    return StepSchedule::polynomial(a0, alpha, b0, beta, n_max);
}

/// Exact prefix sum t~_n or t^_n.
inline double clock(const StepSchedule& s, Clock which, std::size_t n) { return s.clock(which, n); }

enum class Verdict { pass, fail, inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::pass: return "PASS";
        case Verdict::fail: return "FAIL";
        case Verdict::inconclusive: return "INCONCLUSIVE";
    }
    return "?";
}

enum class Evidence { analytic, numeric, none };

struct ConditionCheck {
    Verdict verdict = Verdict::inconclusive;
    Evidence evidence = Evidence::none;
    double value = 0.0;  // partial sum, fitted exponent, or tail max of eps_n
    std::string note;
};

struct ValidationReport {
    ConditionCheck steps_diverge;      // sum a_n = sum b_n = inf
    ConditionCheck squares_summable;   // sum (a_n^2 + b_n^2) < inf
    ConditionCheck ratio_vanishes;     // eps_n -> 0
    ConditionCheck ordering;           // 0 < b_n <= a_n < 1

    bool all_pass() const {
        return steps_diverge.verdict == Verdict::pass && squares_summable.verdict == Verdict::pass &&
               ratio_vanishes.verdict == Verdict::pass && ordering.verdict == Verdict::pass;
    }
    bool any_fail() const {
        return steps_diverge.verdict == Verdict::fail || squares_summable.verdict == Verdict::fail ||
               ratio_vanishes.verdict == Verdict::fail || ordering.verdict == Verdict::fail;
    }
};

namespace detail {

// Decay exponent p of x_n ~ n^{-p}, fitted between n_max/2 and n_max.
inline double tail_exponent(std::span<const double> x) {
    const std::size_t hi = x.size() - 1;
    const std::size_t lo = std::max<std::size_t>(1, hi / 2);
    if (lo >= hi) return 0.0;
    return std::log(x[lo] / x[hi]) / std::log(static_cast<double>(hi + 1) / static_cast<double>(lo + 1));
}

}  // namespace detail

/// Checks the two-time-scale step conditions. Divergence of the step sums is
/// only certified analytically; a user table gets the partial sum at n_max and
/// an inconclusive verdict.
inline ValidationReport validate_schedule(const StepSchedule& s, double tol) {
    ValidationReport r;
    const std::size_t n_max = s.n_max();
    const auto a = s.a_values();
    const auto b = s.b_values();
    const auto eps = s.eps_values();

    switch (s.kind()) {
        case ScheduleKind::polynomial: {
            const auto& p = *s.polynomial_params();
            r.steps_diverge = {p.alpha <= 1.0 && p.beta <= 1.0 ? Verdict::pass : Verdict::fail, Evidence::analytic,
                               s.clock(Clock::slow, n_max), "polynomial exponents <= 1"};
            r.squares_summable = {2.0 * p.alpha > 1.0 && 2.0 * p.beta > 1.0 ? Verdict::pass : Verdict::fail,
                                  Evidence::analytic, std::min(p.alpha, p.beta), "polynomial exponents > 1/2"};
            break;
        }
        case ScheduleKind::constant:
            r.steps_diverge = {Verdict::pass, Evidence::analytic, s.clock(Clock::slow, n_max), "constant steps"};
            r.squares_summable = {Verdict::fail, Evidence::analytic, 0.0, "constant steps are not square summable"};
            break;
        case ScheduleKind::table: {
            r.steps_diverge = {Verdict::inconclusive, Evidence::none, s.clock(Clock::slow, n_max),
                               "partial sum at n_max only; divergence cannot be checked numerically"};
            const double p = std::min(detail::tail_exponent(a), detail::tail_exponent(b));
            r.squares_summable = {2.0 * p > 1.0 ? Verdict::pass : Verdict::fail, Evidence::numeric, p,
                                  "log-log decay exponent over [n_max/2, n_max]"};
            break;
        }
    }

    const std::size_t tail_from = n_max / 2;
    const double tail_max = *std::max_element(eps.begin() + static_cast<std::ptrdiff_t>(tail_from), eps.end());
    const bool decreasing_tail = eps[n_max] < eps[tail_from];
    if (s.kind() == ScheduleKind::polynomial) {
        r.ratio_vanishes = {Verdict::pass, Evidence::analytic, tail_max, "beta > alpha; value is the tail max of eps_n"};
    } else if (s.kind() == ScheduleKind::constant) {
        r.ratio_vanishes = {Verdict::fail, Evidence::analytic, tail_max, "constant ratio does not vanish"};
    } else {
        r.ratio_vanishes = {tail_max <= tol && decreasing_tail ? Verdict::pass : Verdict::fail, Evidence::numeric,
                            tail_max, "tail max of eps_n compared with tol"};
    }

    bool ordered = true;
    std::size_t bad = 0;
    for (std::size_t n = 0; n <= n_max && ordered; ++n) {
        if (!(b[n] > 0.0 && b[n] <= a[n] && a[n] < 1.0)) {
            ordered = false;
            bad = n;
        }
    }
    r.ordering = {ordered ? Verdict::pass : Verdict::fail, Evidence::numeric, ordered ? 0.0 : static_cast<double>(bad),
                  ordered ? "0 < b_n <= a_n < 1 for all n" : "violated at n=" + std::to_string(bad)};
    return r;
}

/// Reads a user table with header `n,a,b` and consecutive n starting at 0.
inline StepSchedule load_schedule_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open schedule table " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ConfigError, "empty schedule table " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "n,a,b") throw Error(ErrorCode::ConfigError, "schedule table header must be 'n,a,b'");
    std::vector<double> a, b;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string fn, fa, fb;
        if (!std::getline(row, fn, ',') || !std::getline(row, fa, ',') || !std::getline(row, fb)) {
            throw Error(ErrorCode::ConfigError, "malformed schedule row: " + line);
        }
        try {
            if (std::stoull(fn) != expected) throw Error(ErrorCode::ConfigError, "rows must be consecutive from n=0");
            a.push_back(std::stod(fa));
            b.push_back(std::stod(fb));
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::ConfigError, "malformed schedule row: " + line);
        }
        ++expected;
    }
    return StepSchedule::table(std::move(a), std::move(b));
}

}  // namespace ttsa
