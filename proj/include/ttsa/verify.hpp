#pragma once

#include "ttsa/bounds.hpp"
#include "ttsa/core.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/odeflow.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/schedules.hpp"
#include "ttsa/stats.hpp"

#include <algorithm>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace ttsa {

enum class ConstantsMode { calibrated, user };

inline const char* to_string(ConstantsMode mode) { return mode == ConstantsMode::calibrated ? "calibrated" : "user"; }

struct ExperimentPlan {
    ProblemInstance problem = make_linear1d();
    StepSchedule schedule = StepSchedule::polynomial(1.0, 0.6, 1.0, 0.9, 100000);
    NoiseModel noise_fast = NoiseModel::laplace(0.1, 1);
    NoiseModel noise_slow = NoiseModel::laplace(0.1, 1);
    InitialState init{scalar_vec(0.0), scalar_vec(0.0)};
    std::size_t replications = 500;
    std::vector<std::size_t> n0_list{100, 1000, 10000};
    std::vector<double> eps_list{0.5};
    std::uint64_t seed = 1;
    double r_B = 1.0;
    FlowConfig flow;
    double envelope_horizon = 10.0;
    std::size_t envelope_grid = 200;

    ConstantsMode mode = ConstantsMode::calibrated;
    BoundConstants user_constants;
    std::size_t calibration_seeds = 20;

    /// Worker threads; 0 uses the hardware concurrency.
    std::size_t threads = 0;
};

inline void validate_plan(const ExperimentPlan& plan) {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::PlanInvalid, why); };
    if (plan.replications < 1) fail("replications must be >= 1");
    if (plan.n0_list.empty()) fail("n0 list is empty");
    if (plan.eps_list.empty()) fail("eps list is empty");
    for (std::size_t n0 : plan.n0_list) {
        if (n0 + 1 >= plan.schedule.n_max()) fail("n0=" + std::to_string(n0) + " leaves no window before n_max");
    }
    for (double e : plan.eps_list) {
        if (!(e >= 0.0) || !std::isfinite(e)) fail("eps must be finite and >= 0");
    }
    if (!(plan.r_B > 0.0)) fail("r_B must be positive");
    if (plan.init.x.size() != plan.problem.d || plan.init.y.size() != plan.problem.s) fail("initial state dimension");
    if (plan.noise_fast.dim() != plan.problem.d || plan.noise_slow.dim() != plan.problem.s) fail("noise dimension");
    if (plan.mode == ConstantsMode::calibrated && plan.calibration_seeds < 1) fail("calibration needs seeds");
    if (plan.mode == ConstantsMode::user) {
        const auto& c = plan.user_constants;
        if (!(c.C1 > 0.0) || !(c.C2 > 0.0) || !(c.K_agg > 0.0)) fail("user constants must be positive");
    }
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Results must
/// be written by index; the first exception (lowest index) is rethrown.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t i) {
        try {
            body(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) guarded(i);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < count; i += threads) guarded(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct PlanEnvelopes {
    DecayEnvelope x;
    DecayEnvelope y;
};

/// Decay envelopes of Phi_x at (lambda(y*), y*) and Phi_y at y*.
inline PlanEnvelopes plan_envelopes(const ExperimentPlan& plan) {
    const auto& p = plan.problem;
    return {fit_decay_envelope(p, FlowAnchor::fast(p.y_star), plan.envelope_horizon, plan.envelope_grid, plan.flow),
            fit_decay_envelope(p, FlowAnchor::slow(), plan.envelope_horizon, plan.envelope_grid, plan.flow)};
}

/// First step in [n0, n_max] at which the fast or slow G event fails,
/// checking knots and interval midpoints; n_max + 1 if it never fails.
inline std::size_t g_event_break(const TrajectoryRecord& tr, const ProblemInstance& p, std::size_t n0, Clock which) {
    const double r = p.level_r;
    auto inside = [&](const Vec& x, const Vec& y) {
        return which == Clock::fast ? (x - p.lambda(y)).squaredNorm() <= r : lyapunov_slow(p, y) <= r;
    };
    Vec x_prev = tr.x_at(n0), y_prev = tr.y_at(n0);
    if (!inside(x_prev, y_prev)) return n0;
    for (std::size_t k = n0 + 1; k <= tr.n_max(); ++k) {
        const Vec x = tr.x_at(k), y = tr.y_at(k);
        if (!inside(x, y) || !inside(0.5 * (x + x_prev), 0.5 * (y + y_prev))) return k;
        x_prev = x;
        y_prev = y;
    }
    return tr.n_max() + 1;
}

// ---------------------------------------------------------------------------
// Pathwise calibration of K_agg

struct PathRatio {
    double fast = 0.0;  // max ||x_n - z_n|| / bracket_fast over the window while G holds
    double slow = 0.0;  // max ||y_n - y(t^_n)|| / bracket_slow likewise
    std::size_t fast_checked = 0;
    std::size_t slow_checked = 0;
};

/// LHS / bracket maxima over n in [n0 + 1, n_max] for one replication.
inline PathRatio path_ratio(const ExperimentPlan& plan, const PlanEnvelopes& env, std::size_t n0, std::uint64_t seed,
                            std::size_t replication) {
    const auto& p = plan.problem;
    RunOptions opt;
    opt.replication = replication;
    opt.flow = plan.flow;
    const TrajectoryRecord tr = run(p, plan.schedule, plan.noise_fast, plan.noise_slow, plan.init, n0, seed, opt);
    const FundamentalMatrixProvider flow_x(p, FlowAnchor::fast(tr.y_at(n0)), plan.flow);
    const FundamentalMatrixProvider flow_y(p, FlowAnchor::slow(), plan.flow);
    const PathBrackets br = path_brackets(tr, flow_x, flow_y, env.x.kappa, env.y.kappa, n0);
    const std::size_t g_fast = tr.g_fast_break, g_slow = tr.g_slow_break;
    PathRatio out;
    for (std::size_t n = n0 + 1; n <= tr.n_max(); ++n) {
        const std::size_t row = tr.row_of(n), i = n - n0;
        if (n < g_fast && br.fast[i] > 0.0) {
            out.fast = std::max(out.fast, tr.dev_fast[row] / br.fast[i]);
            ++out.fast_checked;
        }
        if (n < g_slow && br.slow[i] > 0.0) {
            out.slow = std::max(out.slow, tr.dev_slow[row] / br.slow[i]);
            ++out.slow_checked;
        }
    }
    return out;
}

struct KCalibration {
    double K_fast = 0.0;
    double K_slow = 0.0;
    double K_agg = 0.0;  // max of the two
    std::vector<PathRatio> per_seed;
};

/// K_agg as the largest LHS / bracket ratio over `count` training
/// replications drawn from `seed`.
inline KCalibration calibrate_k_agg(const ExperimentPlan& plan, std::size_t n0, std::uint64_t seed, std::size_t count) {
    if (count < 1) throw Error(ErrorCode::PlanInvalid, "calibration needs at least one seed");
    const PlanEnvelopes env = plan_envelopes(plan);
    KCalibration out;
    out.per_seed.resize(count);
    parallel_for(count, plan.threads, [&](std::size_t i) { out.per_seed[i] = path_ratio(plan, env, n0, seed, i); });
    for (const auto& r : out.per_seed) {
        out.K_fast = std::max(out.K_fast, r.fast);
        out.K_slow = std::max(out.K_slow, r.slow);
    }
    out.K_agg = std::max(out.K_fast, out.K_slow);
    if (!(out.K_agg > 0.0)) out.K_agg = 1.0;  // noiseless paths at the fixed point give 0 / bracket
    return out;
}

/// Training seed derived from the plan seed.
inline std::uint64_t calibration_seed(std::uint64_t plan_seed) { return mix64(plan_seed ^ 0x6b43a9b5f0e2c1d7ULL); }

// ---------------------------------------------------------------------------
// Concentration experiment

enum class ReportVerdict { consistent, violation, inconclusive };

inline const char* to_string(ReportVerdict v) {
    switch (v) {
        case ReportVerdict::consistent: return "CONSISTENT";
        case ReportVerdict::violation: return "VIOLATION";
        case ReportVerdict::inconclusive: return "INCONCLUSIVE";
    }
    return "?";
}

/// VIOLATION iff the Wilson lower bound exceeds the allowance 1 - RHS;
/// CONSISTENT iff the point estimate is within it; INCONCLUSIVE otherwise.
inline ReportVerdict judge(double p_hat, const Interval& wilson, double allowance) {
    if (wilson.lo > allowance) return ReportVerdict::violation;
    if (p_hat <= allowance) return ReportVerdict::consistent;
    return ReportVerdict::inconclusive;
}

struct ReportRow {
    double eps = 0.0;
    std::size_t n0 = 0;
    std::size_t T = 0;
    std::size_t window_begin = 0;  // n0 + T + 1
    std::size_t window_end = 0;    // n_max (truncation of the infinite horizon)
    std::size_t replications = 0;
    std::size_t conditioned = 0;
    std::size_t exceedances = 0;
    double p_hat = 0.0;
    Interval wilson;
    TheoremRhs rhs;
    double allowance = 1.0;
    double g_survival = 1.0;  // conditioned replications whose G event holds through n_max
    ReportVerdict verdict = ReportVerdict::consistent;
};

/// Per-replication outcome. Cells are indexed [eps_index * n0_count + n0_index].
struct ReplicationOutcome {
    std::vector<std::uint8_t> conditioned_fast;  // per n0: x, z in B
    std::vector<std::uint8_t> conditioned_slow;  // per n0: x, y, z in B
    std::vector<double> sup_fast;                // per cell
    std::vector<double> sup_slow;                // per cell
    std::vector<std::size_t> g_fast_break;       // per n0
    std::vector<std::size_t> g_slow_break;       // per n0
};

struct ConcentrationReport {
    std::string label;  // "consistency check" or "user-constant test"
    BoundConstants constants;
    std::optional<KCalibration> calibration;
    PlanEnvelopes envelopes;
    std::size_t n_max = 0;
    std::vector<std::size_t> n0_list;
    std::vector<double> eps_list;
    std::vector<ReportRow> thm41;
    std::vector<ReportRow> thm42;
    std::vector<ReplicationOutcome> outcomes;

    bool any_violation() const {
        for (const auto* rows : {&thm41, &thm42}) {
            for (const auto& r : *rows) {
                if (r.verdict == ReportVerdict::violation) return true;
            }
        }
        return false;
    }
};

namespace detail {

inline bool in_ball(const Vec& v, const Vec& centre, double radius) { return (v - centre).norm() <= radius; }

inline double window_sup(const std::vector<double>& dev, std::size_t offset, std::size_t begin, std::size_t end) {
    double sup = 0.0;
    for (std::size_t n = begin; n <= end; ++n) sup = std::max(sup, dev[n - offset]);
    return sup;
}

}  // namespace detail

/// Monte-Carlo estimate of the exceedance probabilities
///   P(sup_{window} ||x_n - z_n|| > eps | x_{n0}, z_{n0} in B)
///   P(sup_{window} ||y_n - y(t^_n)|| > eps | x_{n0}, y_{n0}, z_{n0} in B)
/// over the truncated window [n0 + T + 1, n_max], set beside the theorem
/// right-hand sides. One trajectory per replication serves every n0.
inline ConcentrationReport run_experiment(const ExperimentPlan& plan) {
    validate_plan(plan);
    const auto& p = plan.problem;
    const StepSchedule& sched = plan.schedule;
    const std::size_t n_max = sched.n_max();
    const std::size_t n0_count = plan.n0_list.size();
    const std::size_t eps_count = plan.eps_list.size();
    const std::size_t n0_min = *std::min_element(plan.n0_list.begin(), plan.n0_list.end());

    ConcentrationReport rep;
    rep.n_max = n_max;
    rep.n0_list = plan.n0_list;
    rep.eps_list = plan.eps_list;
    rep.envelopes = plan_envelopes(plan);
    if (plan.mode == ConstantsMode::calibrated) {
        rep.label = "consistency check";
        rep.calibration = calibrate_k_agg(plan, n0_min, calibration_seed(plan.seed), plan.calibration_seeds);
        rep.constants = calibrated_constants(plan.noise_fast, plan.noise_slow, rep.calibration->K_agg,
                                             rep.envelopes.x, rep.envelopes.y);
    } else {
        rep.label = "user-constant test";
        rep.constants = plan.user_constants;
    }

    // settling index per cell: worst-case H over the ball is 2 r_B
    std::vector<std::size_t> T(eps_count * n0_count, 0);
    for (std::size_t e = 0; e < eps_count; ++e) {
        for (std::size_t j = 0; j < n0_count; ++j) {
            const double eps = plan.eps_list[e];
            std::size_t t = 0;
            if (eps > 0.0) {
                try {
                    t = settling_time(rep.envelopes.x, 2.0 * plan.r_B, eps, rep.constants.K_agg, sched,
                                      plan.n0_list[j]);
                } catch (const Error& err) {
                    if (err.code() != ErrorCode::HorizonExceeded) throw;
                    throw Error(ErrorCode::PlanInvalid, "no settling index before n_max for eps=" +
                                                            std::to_string(eps) + " n0=" +
                                                            std::to_string(plan.n0_list[j]));
                }
            }
            if (plan.n0_list[j] + t + 1 > n_max) {
                throw Error(ErrorCode::PlanInvalid, "window n0+T+1 exceeds n_max for n0=" +
                                                        std::to_string(plan.n0_list[j]));
            }
            T[e * n0_count + j] = t;
        }
    }

    const Vec x_centre = p.lambda(p.y_star);
    rep.outcomes.resize(plan.replications);
    parallel_for(plan.replications, plan.threads, [&](std::size_t r) {
        RunOptions opt;
        opt.replication = r;
        opt.flow = plan.flow;
        const TrajectoryRecord tr = run(p, sched, plan.noise_fast, plan.noise_slow, plan.init, n0_min, plan.seed, opt);
        ReplicationOutcome out;
        out.conditioned_fast.resize(n0_count);
        out.conditioned_slow.resize(n0_count);
        out.g_fast_break.resize(n0_count);
        out.g_slow_break.resize(n0_count);
        out.sup_fast.resize(eps_count * n0_count);
        out.sup_slow.resize(eps_count * n0_count);
        const auto offset = static_cast<std::ptrdiff_t>(tr.row_of(n0_min));
        const std::vector<double> dev_fast(tr.dev_fast.begin() + offset, tr.dev_fast.end());
        for (std::size_t j = 0; j < n0_count; ++j) {
            const std::size_t n0 = plan.n0_list[j];
            const Vec x = tr.x_at(n0), y = tr.y_at(n0), z = tr.z_at(n0);
            const bool xz = detail::in_ball(x, x_centre, plan.r_B) && detail::in_ball(z, x_centre, plan.r_B);
            out.conditioned_fast[j] = xz ? 1 : 0;
            out.conditioned_slow[j] = xz && detail::in_ball(y, p.y_star, plan.r_B) ? 1 : 0;
            out.g_fast_break[j] = g_event_break(tr, p, n0, Clock::fast);
            out.g_slow_break[j] = g_event_break(tr, p, n0, Clock::slow);
            const std::vector<double> dev_slow = slow_reference_deviation(tr, p, n0, plan.flow);
            for (std::size_t e = 0; e < eps_count; ++e) {
                const std::size_t cell = e * n0_count + j;
                const std::size_t begin = n0 + T[cell] + 1;
                out.sup_fast[cell] = detail::window_sup(dev_fast, n0_min, begin, n_max);
                out.sup_slow[cell] = detail::window_sup(dev_slow, n0, begin, n_max);
            }
        }
        rep.outcomes[r] = std::move(out);
    });

    for (std::size_t e = 0; e < eps_count; ++e) {
        for (std::size_t j = 0; j < n0_count; ++j) {
            const double eps = plan.eps_list[e];
            const std::size_t n0 = plan.n0_list[j];
            const std::size_t cell = e * n0_count + j;
            const BoundIngredients ing = make_ingredients(sched, rep.envelopes.x, rep.envelopes.y, n0, rep.constants);
            for (int which = 0; which < 2; ++which) {
                const bool fast = which == 0;
                ReportRow row;
                row.eps = eps;
                row.n0 = n0;
                row.T = T[cell];
                row.window_begin = n0 + row.T + 1;
                row.window_end = n_max;
                row.replications = plan.replications;
                std::size_t surviving = 0;
                for (const auto& out : rep.outcomes) {
                    const bool cond = fast ? out.conditioned_fast[j] : out.conditioned_slow[j];
                    if (!cond) continue;
                    ++row.conditioned;
                    const double sup = fast ? out.sup_fast[cell] : out.sup_slow[cell];
                    if (sup > eps) ++row.exceedances;
                    const std::size_t brk = fast ? out.g_fast_break[j] : out.g_slow_break[j];
                    if (brk > n_max) ++surviving;
                }
                if (row.conditioned == 0) {
                    throw Error(ErrorCode::NoConditionedReplications,
                                "no replication started inside B at n0=" + std::to_string(n0));
                }
                row.p_hat = static_cast<double>(row.exceedances) / static_cast<double>(row.conditioned);
                row.wilson = wilson_interval(row.exceedances, row.conditioned);
                row.g_survival = static_cast<double>(surviving) / static_cast<double>(row.conditioned);
                row.rhs = fast ? theorem41_rhs(ing, sched, eps, n0) : theorem42_rhs(ing, sched, eps, n0);
                row.allowance = 1.0 - row.rhs.value;
                row.verdict = judge(row.p_hat, row.wilson, row.allowance);
                (fast ? rep.thm41 : rep.thm42).push_back(row);
            }
        }
    }
    return rep;
}

inline void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
    os << "eps,n0,T,replications,conditioned,p_hat,wilson_lo,wilson_hi,thm_rhs,verdict\n";
    const auto old_precision = os.precision(17);
    for (const auto& r : rows) {
        os << r.eps << ',' << r.n0 << ',' << r.T << ',' << r.replications << ',' << r.conditioned << ',' << r.p_hat
           << ',' << r.wilson.lo << ',' << r.wilson.hi << ',' << r.rhs.value << ',' << to_string(r.verdict) << '\n';
    }
    os.precision(old_precision);
}

// ---------------------------------------------------------------------------

struct SurvivalCurve {
    std::size_t n0 = 0;
    std::vector<std::size_t> n;
    std::vector<double> fast;
    std::vector<double> slow;
};

/// Fraction of replications whose G event still holds at each n >= n0
/// (for the smallest n0 of the report).
inline SurvivalCurve g_event_attrition(const ConcentrationReport& rep, std::size_t points = 0) {
    SurvivalCurve curve;
    if (rep.outcomes.empty()) return curve;
    const auto j_min = static_cast<std::size_t>(
        std::min_element(rep.n0_list.begin(), rep.n0_list.end()) - rep.n0_list.begin());
    curve.n0 = rep.n0_list[j_min];
    const std::size_t span = rep.n_max - curve.n0;
    const std::size_t stride = points == 0 ? 1 : std::max<std::size_t>(1, span / points);
    std::vector<std::size_t> breaks_fast, breaks_slow;
    for (const auto& out : rep.outcomes) {
        breaks_fast.push_back(out.g_fast_break[j_min]);
        breaks_slow.push_back(out.g_slow_break[j_min]);
    }
    std::sort(breaks_fast.begin(), breaks_fast.end());
    std::sort(breaks_slow.begin(), breaks_slow.end());
    const double total = static_cast<double>(rep.outcomes.size());
    auto surviving = [&](const std::vector<std::size_t>& sorted, std::size_t n) {
        const auto it = std::upper_bound(sorted.begin(), sorted.end(), n);
        return static_cast<double>(sorted.end() - it) / total;
    };
    for (std::size_t n = curve.n0;; n += stride) {
        if (n > rep.n_max) n = rep.n_max;
        curve.n.push_back(n);
        curve.fast.push_back(surviving(breaks_fast, n));
        curve.slow.push_back(surviving(breaks_slow, n));
        if (n == rep.n_max) break;
    }
    return curve;
}

// ---------------------------------------------------------------------------

struct SweepGrid {
    std::vector<double> eps;
    std::vector<std::size_t> n0;
    std::vector<std::pair<double, double>> exponents;  // (alpha, beta); empty keeps the plan schedule
};

struct SweepCell {
    double alpha = 0.0;
    double beta = 0.0;
    double eps = 0.0;
    std::size_t n0 = 0;
    ConcentrationReport report;
};

/// One experiment per grid cell. Every cell reuses the plan seed, so cells
/// share random numbers and each is reproducible on its own.
inline std::vector<SweepCell> sweep(const ExperimentPlan& plan, const SweepGrid& grid) {
    const std::size_t shapes = std::max<std::size_t>(1, grid.exponents.size());
    const std::size_t cells = grid.eps.size() * grid.n0.size() * shapes;
    if (cells == 0) throw Error(ErrorCode::PlanInvalid, "sweep grid is empty");
    if (cells > 100) throw Error(ErrorCode::PlanInvalid, "sweep grid exceeds 100 cells");
    const auto& pp = plan.schedule.polynomial_params();
    if (!grid.exponents.empty() && !pp) throw Error(ErrorCode::PlanInvalid, "exponent sweep needs a polynomial schedule");
    std::vector<SweepCell> out;
    out.reserve(cells);
    for (std::size_t si = 0; si < shapes; ++si) {
        ExperimentPlan base = plan;
        double alpha = pp ? pp->alpha : 0.0, beta = pp ? pp->beta : 0.0;
        if (!grid.exponents.empty()) {
            std::tie(alpha, beta) = grid.exponents[si];
            base.schedule = StepSchedule::polynomial(pp->a0, alpha, pp->b0, beta, plan.schedule.n_max());
        }
        for (double eps : grid.eps) {
            for (std::size_t n0 : grid.n0) {
                ExperimentPlan cell = base;
                cell.eps_list = {eps};
                cell.n0_list = {n0};
                out.push_back({alpha, beta, eps, n0, run_experiment(cell)});
            }
        }
    }
    return out;
}

}  // namespace ttsa
