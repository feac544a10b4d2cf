#pragma once

#include "ttsa/core.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/odeflow.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/schedules.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ttsa {

struct InitialState {
    Vec x;
    Vec y;
};

struct RunOptions {
    std::size_t replication = 0;
    /// Seed for the slow noise channel; defaults to the run seed.
    std::optional<std::uint64_t> slow_seed;
    /// Step control for the slow reference ODE y(t^) integrated alongside.
    FlowConfig flow;
    /// Stored doubles per channel before the pre-n0 segment is thinned.
    std::size_t max_stored = 1'000'000;
};

/// Replication r draws M^(1) from stream 2r and M^(2) from stream 2r + 1.
struct NoiseStreams {
    RngStream fast;
    RngStream slow;

    static NoiseStreams for_replication(std::uint64_t seed, std::size_t replication,
                                        std::optional<std::uint64_t> slow_seed = std::nullopt) {
        const auto r = static_cast<std::uint64_t>(replication);
        return {RngStream(seed, 2 * r), RngStream(slow_seed.value_or(seed), 2 * r + 1)};
    }
};

/// Row-major block of equally sized vectors.
class Series {
public:
    Series() = default;
    explicit Series(int dim) : dim_(dim) {}

    int dim() const { return dim_; }
    std::size_t rows() const { return dim_ == 0 ? 0 : data_.size() / static_cast<std::size_t>(dim_); }
    void reserve(std::size_t rows) { data_.reserve(rows * static_cast<std::size_t>(dim_)); }

    void push(const Vec& v) {
        for (int i = 0; i < dim_; ++i) data_.push_back(v(i));
    }

    Vec at(std::size_t row) const {
        Vec v(dim_);
        const double* src = data_.data() + row * static_cast<std::size_t>(dim_);
        for (int i = 0; i < dim_; ++i) v(i) = src[i];
        return v;
    }

    double component(std::size_t row, int i) const { return data_[row * static_cast<std::size_t>(dim_) + i]; }

private:
    int dim_ = 0;
    std::vector<double> data_;
};

/// Output of one run. Step k is stored when k >= full_from or k is a
/// multiple of stride; row r holds step steps[r]. The noise rows hold
/// M_{k+1}, the draw used to go from k to k + 1 (zero at k = n_max).
///
/// G flags follow the running event over [t_{n0}, t_k]: true for k < n0.
struct TrajectoryRecord {
    StepSchedule schedule;
    std::uint64_t seed = 0;
    std::size_t replication = 0;
    std::size_t n0 = 0;
    int d = 1;
    int s = 1;

    std::size_t stride = 1;
    std::size_t full_from = 0;
    std::vector<std::size_t> steps;

    Series x, y, z, noise_fast, noise_slow;
    std::vector<double> dev_fast;
    std::vector<double> dev_slow;
    std::vector<std::uint8_t> g_fast;
    std::vector<std::uint8_t> g_slow;

    /// First step at which each G flag turned false; n_max + 1 if never.
    std::size_t g_fast_break = 0;
    std::size_t g_slow_break = 0;

    std::size_t n_max() const { return schedule.n_max(); }
    bool complete() const { return stride == 1; }

    bool has(std::size_t k) const {
        if (k > n_max()) return false;
        return k >= full_from || k % stride == 0;
    }

    std::size_t row_of(std::size_t k) const {
        if (!has(k)) throw Error(ErrorCode::IndexBeyondHorizon, "step " + std::to_string(k) + " is not stored");
        if (k >= full_from) return (full_from + stride - 1) / stride + (k - full_from);
        return k / stride;
    }

    Vec x_at(std::size_t k) const { return x.at(row_of(k)); }
    Vec y_at(std::size_t k) const { return y.at(row_of(k)); }
    Vec z_at(std::size_t k) const { return z.at(row_of(k)); }
    Vec noise_fast_at(std::size_t k) const { return noise_fast.at(row_of(k)); }
    Vec noise_slow_at(std::size_t k) const { return noise_slow.at(row_of(k)); }
};

namespace detail {

inline std::size_t thinning_stride(std::size_t n_max, std::size_t full_from, int dim, std::size_t max_stored) {
    const auto width = static_cast<std::size_t>(dim);
    if ((n_max + 1) * width <= max_stored) return 1;
    const std::size_t window = (n_max + 1 - full_from) * width;
    const std::size_t budget = max_stored > window ? max_stored - window : width;
    const std::size_t head_rows = std::max<std::size_t>(1, budget / width);
    return std::max<std::size_t>(1, (full_from + head_rows - 1) / head_rows);
}

}  // namespace detail

/// Runs the coupled recursion
///   x_{k+1} = x_k + a_k (h(x_k, y_k) + M^(1)_{k+1})
///   y_{k+1} = y_k + b_k (g(x_k, y_k) + M^(2)_{k+1})
/// for k = 0..n_max-1. dev_slow compares y_k with the slow ODE solution on
/// the t^ clock, started at y_0 and restarted at y_{n0}.
inline TrajectoryRecord run(const ProblemInstance& p, const StepSchedule& sched, const NoiseModel& noise_fast,
                            const NoiseModel& noise_slow, const InitialState& init, std::size_t n0, std::uint64_t seed,
                            const RunOptions& opt = {}) {
    const std::size_t n_max = sched.n_max();
    if (n0 >= n_max) throw Error(ErrorCode::ParameterOutOfRange, "n0 must be below n_max");
    if (init.x.size() != p.d || init.y.size() != p.s) {
        throw Error(ErrorCode::ParameterOutOfRange, "initial state has the wrong dimension");
    }
    if (!init.x.allFinite() || !init.y.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite initial state");
    if (noise_fast.dim() != p.d || noise_slow.dim() != p.s) {
        throw Error(ErrorCode::ParameterOutOfRange, "noise dimension does not match the problem");
    }

    TrajectoryRecord tr;
    tr.schedule = sched;
    tr.seed = seed;
    tr.replication = opt.replication;
    tr.n0 = n0;
    tr.d = p.d;
    tr.s = p.s;
    tr.full_from = n0;
    tr.stride = detail::thinning_stride(n_max, n0, std::max(p.d, p.s), opt.max_stored);
    tr.x = Series(p.d);
    tr.y = Series(p.s);
    tr.z = Series(p.d);
    tr.noise_fast = Series(p.d);
    tr.noise_slow = Series(p.s);
    const std::size_t rows = (n0 + tr.stride - 1) / tr.stride + (n_max + 1 - n0);
    for (Series* series : {&tr.x, &tr.y, &tr.z, &tr.noise_fast, &tr.noise_slow}) series->reserve(rows);
    tr.steps.reserve(rows);
    tr.dev_fast.reserve(rows);
    tr.dev_slow.reserve(rows);
    tr.g_fast.reserve(rows);
    tr.g_slow.reserve(rows);
    tr.g_fast_break = n_max + 1;
    tr.g_slow_break = n_max + 1;

    NoiseStreams streams = NoiseStreams::for_replication(seed, opt.replication, opt.slow_seed);
    auto slow_field = [&p](double, const Vec& v) -> Vec { return p.g(p.lambda(v), v); };
    const double r = p.level_r;

    Vec x = init.x, y = init.y, y_ref = init.y;
    Vec z = p.lambda(y);
    Vec m1 = Vec::Zero(p.d), m2 = Vec::Zero(p.s);
    bool g_fast = true, g_slow = true;
    if (n0 == 0) {
        g_fast = (x - z).squaredNorm() <= r;
        g_slow = lyapunov_slow(p, y) <= r;
        if (!g_fast) tr.g_fast_break = 0;
        if (!g_slow) tr.g_slow_break = 0;
    }

    for (std::size_t k = 0;; ++k) {
        const bool last = k == n_max;
        if (!last) {
            noise_fast.sample_into(streams.fast, std::span<double>(m1.data(), static_cast<std::size_t>(m1.size())));
            noise_slow.sample_into(streams.slow, std::span<double>(m2.data(), static_cast<std::size_t>(m2.size())));
        } else {
            m1.setZero();
            m2.setZero();
        }
        if (tr.has(k)) {
            tr.steps.push_back(k);
            tr.x.push(x);
            tr.y.push(y);
            tr.z.push(z);
            tr.noise_fast.push(m1);
            tr.noise_slow.push(m2);
            tr.dev_fast.push_back((x - z).norm());
            tr.dev_slow.push_back((y - y_ref).norm());
            tr.g_fast.push_back(g_fast ? 1 : 0);
            tr.g_slow.push_back(g_slow ? 1 : 0);
        }
        if (last) break;

        const double a = sched.a(k), b = sched.b(k);
        const Vec x_next = x + a * (p.h(x, y) + m1);
        const Vec y_next = y + b * (p.g(x, y) + m2);
        if (!x_next.allFinite() || !y_next.allFinite()) {
            throw Error(ErrorCode::NonFiniteIterate, "iterate diverged at step " + std::to_string(k + 1), k + 1);
        }
        const Vec z_next = p.lambda(y_next);

        if (k + 1 == n0) {
            y_ref = y_next;
        } else {
            y_ref = detail::rk4_advance(slow_field, sched.clock(Clock::slow, k), sched.clock(Clock::slow, k + 1),
                                        y_ref, opt.flow.dt);
        }

        if (k + 1 >= n0) {
            const bool first = k + 1 == n0;
            const Vec y_mid = 0.5 * (y + y_next);
            const Vec x_mid = 0.5 * (x + x_next);
            if (g_fast) {
                bool inside = (x_next - z_next).squaredNorm() <= r;
                if (!first) inside = inside && (x_mid - p.lambda(y_mid)).squaredNorm() <= r;
                if (!inside) {
                    g_fast = false;
                    tr.g_fast_break = k + 1;
                }
            }
            if (g_slow) {
                bool inside = lyapunov_slow(p, y_next) <= r;
                if (!first) inside = inside && lyapunov_slow(p, y_mid) <= r;
                if (!inside) {
                    g_slow = false;
                    tr.g_slow_break = k + 1;
                }
            }
        }
        x = x_next;
        y = y_next;
        z = z_next;
    }
    return tr;
}

// ---------------------------------------------------------------------------

struct ZResidual {
    std::vector<double> residual;  // ||zeta_{k+1}|| for consecutive stored steps k, k+1
    std::vector<double> ratio;     // ||zeta_{k+1}|| / ||y_{k+1} - y_k||^2 where that is formed
    double K_zeta = 0.0;
};

/// zeta_{k+1} = z_{k+1} - z_k - grad lambda(y_k) (y_{k+1} - y_k), the second
/// order remainder of the z-rewrite. K_zeta is the largest observed ratio.
inline ZResidual z_iteration_residual(const TrajectoryRecord& tr, const ProblemInstance& p) {
    ZResidual out;
    const std::size_t rows = tr.steps.size();
    if (rows < 2) return out;
    out.residual.reserve(rows - 1);
    for (std::size_t i = 0; i + 1 < rows; ++i) {
        if (tr.steps[i + 1] != tr.steps[i] + 1) continue;
        const Vec y0 = tr.y.at(i), y1 = tr.y.at(i + 1);
        const Vec dy = y1 - y0;
        const Vec zeta = tr.z.at(i + 1) - tr.z.at(i) - eval_grad_lambda(p, y0) * dy;
        const double norm = zeta.norm();
        out.residual.push_back(norm);
        const double dy2 = dy.squaredNorm();
        if (dy2 > 1e-10 * std::max(1.0, tr.z.at(i).norm())) {
            const double ratio = norm / dy2;
            out.ratio.push_back(ratio);
            out.K_zeta = std::max(out.K_zeta, ratio);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

enum class SeriesName { x, y, z };

/// Piecewise-linear interpolation through stored knots.
class Interpolant {
public:
    Interpolant(Clock clock, std::vector<double> t, std::vector<Vec> values)
        : clock_(clock), t_(std::move(t)), v_(std::move(values)) {
        if (t_.empty() || t_.size() != v_.size()) throw Error(ErrorCode::ParameterOutOfRange, "empty interpolant");
    }

    Clock clock() const { return clock_; }
    double t_begin() const { return t_.front(); }
    double t_end() const { return t_.back(); }
    std::size_t knots() const { return t_.size(); }

    Vec operator()(double t) const {
        if (!(t >= t_.front() && t <= t_.back())) {
            throw Error(ErrorCode::ClockOutOfRange, "time " + std::to_string(t) + " outside the interpolant");
        }
        auto it = std::upper_bound(t_.begin(), t_.end(), t);
        if (it == t_.end()) return v_.back();
        const auto j = static_cast<std::size_t>(it - t_.begin());
        const std::size_t i = j - 1;
        if (t == t_[i]) return v_[i];
        const double w = (t - t_[i]) / (t_[j] - t_[i]);
        return v_[i] + w * (v_[j] - v_[i]);
    }

private:
    Clock clock_;
    std::vector<double> t_;
    std::vector<Vec> v_;
};

/// x and z on the fast clock, y on the slow clock.
inline Interpolant interpolate(const TrajectoryRecord& tr, SeriesName which) {
    const Clock clock = which == SeriesName::y ? Clock::slow : Clock::fast;
    const Series& series = which == SeriesName::x ? tr.x : which == SeriesName::y ? tr.y : tr.z;
    std::vector<double> t(tr.steps.size());
    std::vector<Vec> v(tr.steps.size());
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        t[i] = tr.schedule.clock(clock, tr.steps[i]);
        v[i] = series.at(i);
    }
    return Interpolant(clock, std::move(t), std::move(v));
}

// ---------------------------------------------------------------------------
// Martingale sums

namespace detail {

inline void require_flow(const FundamentalMatrixProvider& flow, int dim) {
    if (!flow.available()) throw Error(ErrorCode::FlowUnavailable, "no fundamental matrix provider");
    if (flow.dim() != dim) throw Error(ErrorCode::ParameterOutOfRange, "provider dimension does not match");
}

inline Vec martingale_direct(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow, std::size_t n0,
                             std::size_t n, Clock clock) {
    const bool fast = clock == Clock::fast;
    detail::require_flow(flow, fast ? tr.d : tr.s);
    if (n0 > n || n > tr.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "need n0 <= n <= n_max");
    const double t_n = tr.schedule.clock(clock, n);
    Vec sum = Vec::Zero(fast ? tr.d : tr.s);
    for (std::size_t k = n0; k < n; ++k) {
        const Mat w = flow.weight(t_n, tr.schedule.clock(clock, k), tr.schedule.clock(clock, k + 1));
        sum += w * (fast ? tr.noise_fast_at(k) : tr.noise_slow_at(k));
    }
    return sum;
}

/// S_{n+1} = Phi(t_{n+1} - t_n) S_n + W_n M_{n+1}, W_n = int_{t_n}^{t_{n+1}} Phi(t_{n+1}, s) ds.
inline std::vector<Vec> martingale_recursive(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow,
                                             std::size_t n0, Clock clock) {
    const bool fast = clock == Clock::fast;
    detail::require_flow(flow, fast ? tr.d : tr.s);
    if (n0 > tr.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n0 beyond n_max");
    const int dim = fast ? tr.d : tr.s;
    std::vector<Vec> out;
    out.reserve(tr.n_max() - n0 + 1);
    Vec S = Vec::Zero(dim);
    out.push_back(S);
    for (std::size_t k = n0; k < tr.n_max(); ++k) {
        const double t0 = tr.schedule.clock(clock, k), t1 = tr.schedule.clock(clock, k + 1);
        const Vec m = fast ? tr.noise_fast_at(k) : tr.noise_slow_at(k);
        S = flow.phi_elapsed(t1 - t0) * S + flow.weight(t1, t0, t1) * m;
        out.push_back(S);
    }
    return out;
}

}  // namespace detail

/// S_n^(1) = sum_{k=n0}^{n-1} (int_{t~_k}^{t~_{k+1}} Phi_x(t~_n, s) ds) M^(1)_{k+1}.
inline Vec martingale_integral_S1(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow, std::size_t n0,
                                  std::size_t n) {
    return detail::martingale_direct(tr, flow, n0, n, Clock::fast);
}

/// Slow-clock analogue with Phi_y and M^(2).
inline Vec martingale_integral_S2(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow, std::size_t n0,
                                  std::size_t n) {
    return detail::martingale_direct(tr, flow, n0, n, Clock::slow);
}

/// S_n^(1) for every n in [n0, n_max]; element i is S_{n0 + i}.
inline std::vector<Vec> martingale_series_S1(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow,
                                             std::size_t n0) {
    return detail::martingale_recursive(tr, flow, n0, Clock::fast);
}

inline std::vector<Vec> martingale_series_S2(const TrajectoryRecord& tr, const FundamentalMatrixProvider& flow,
                                             std::size_t n0) {
    return detail::martingale_recursive(tr, flow, n0, Clock::slow);
}

/// ||y_n - y(t^_n; t^_{n0}, y_{n0})|| for n in [n0, n_max].
inline std::vector<double> slow_reference_deviation(const TrajectoryRecord& tr, const ProblemInstance& p,
                                                    std::size_t n0, const FlowConfig& cfg) {
    if (n0 > tr.n_max()) throw Error(ErrorCode::IndexBeyondHorizon, "n0 beyond n_max");
    if (n0 == tr.n0) {
        const std::size_t first = tr.row_of(n0);
        return {tr.dev_slow.begin() + static_cast<std::ptrdiff_t>(first), tr.dev_slow.end()};
    }
    auto field = [&p](double, const Vec& v) -> Vec { return p.g(p.lambda(v), v); };
    std::vector<double> out;
    out.reserve(tr.n_max() - n0 + 1);
    Vec ref = tr.y_at(n0);
    out.push_back(0.0);
    for (std::size_t k = n0; k < tr.n_max(); ++k) {
        ref = detail::rk4_advance(field, tr.schedule.clock(Clock::slow, k), tr.schedule.clock(Clock::slow, k + 1),
                                  ref, cfg.dt);
        out.push_back((tr.y_at(k + 1) - ref).norm());
    }
    return out;
}

// ---------------------------------------------------------------------------

inline void write_trajectory_header(std::ostream& os, int d, int s) {
    os << "k,t_fast,t_slow";
    for (int i = 0; i < d; ++i) os << ",x" << i;
    for (int i = 0; i < s; ++i) os << ",y" << i;
    for (int i = 0; i < d; ++i) os << ",z" << i;
    os << ",dev_fast,dev_slow,G\n";
}

/// One row per stored step; G is the fast-event flag.
inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& tr) {
    write_trajectory_header(os, tr.d, tr.s);
    const auto old_precision = os.precision(17);
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
        const std::size_t k = tr.steps[i];
        os << k << ',' << tr.schedule.clock(Clock::fast, k) << ',' << tr.schedule.clock(Clock::slow, k);
        for (int j = 0; j < tr.d; ++j) os << ',' << tr.x.component(i, j);
        for (int j = 0; j < tr.s; ++j) os << ',' << tr.y.component(i, j);
        for (int j = 0; j < tr.d; ++j) os << ',' << tr.z.component(i, j);
        os << ',' << tr.dev_fast[i] << ',' << tr.dev_slow[i] << ',' << static_cast<int>(tr.g_fast[i]) << '\n';
    }
    os.precision(old_precision);
}

}  // namespace ttsa
