#pragma once

#include "ttsa/bounds.hpp"
#include "ttsa/config.hpp"
#include "ttsa/core.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/odeflow.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/schedules.hpp"
#include "ttsa/verify.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace ttsa {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitDivergence = 3,
    kExitFitFailure = 4,
    kExitViolation = 5,
};

inline int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::NonFiniteIterate:
        case ErrorCode::NonFiniteState: return kExitDivergence;
        case ErrorCode::FitFailed: return kExitFitFailure;
        default: return kExitConfig;
    }
}

struct CommandContext {
    Config config;
    std::string out_dir;  // empty: config.output_dir
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;
    /// Replaces the built-in named by `problem` (library-level extension point).
    std::optional<ProblemInstance> problem;

    ProblemInstance instance() const { return problem ? *problem : make_problem(config); }
    std::string directory() const { return out_dir.empty() ? config.output_dir : out_dir; }
};

namespace detail {

/// Writes `name` under the output directory with the config-hash comment line.
inline void write_output(const CommandContext& ctx, const std::string& name,
                         const std::function<void(std::ostream&)>& body) {
    const std::filesystem::path dir(ctx.directory());
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::ConfigError, "cannot write " + (dir / name).string());
    os << "# config_hash=" << config_hash(ctx.config) << '\n';
    body(os);
}

inline int guarded(const CommandContext& ctx, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        *ctx.err << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        *ctx.err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

inline std::string label_number(double v) {
    std::string s = format_double(v);
    for (char& ch : s) {
        if (ch == '.') ch = 'p';
        if (ch == '-') ch = 'm';
    }
    return s;
}

inline std::size_t min_n0(const Config& c) {
    if (c.experiment_n0.empty()) throw Error(ErrorCode::ConfigError, "experiment.n0 is empty");
    return static_cast<std::size_t>(*std::min_element(c.experiment_n0.begin(), c.experiment_n0.end()));
}

}  // namespace detail

/// Runs one trajectory and writes trajectory.csv.
inline int cmd_simulate(const CommandContext& ctx) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        const ProblemInstance p = ctx.instance();
        const StepSchedule sched = make_schedule(c);
        const NoisePair noise = make_noise(c, p);
        const InitialState init = make_initial_state(c, p);
        const std::size_t n0 = std::min(detail::min_n0(c), sched.n_max() - 1);
        RunOptions opt;
        opt.flow = make_flow(c);
        const TrajectoryRecord tr = run(p, sched, noise.fast, noise.slow, init, n0, c.seed, opt);
        detail::write_output(ctx, "trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, tr); });
        auto& out = *ctx.out;
        out << std::setprecision(6);
        out << "simulate: problem=" << p.name << " n_max=" << sched.n_max() << " n0=" << n0 << " seed=" << c.seed
            << '\n';
        out << "  final dev_fast=" << tr.dev_fast.back() << " dev_slow=" << tr.dev_slow.back()
            << " G_fast=" << static_cast<int>(tr.g_fast.back()) << " G_slow=" << static_cast<int>(tr.g_slow.back())
            << '\n';
        return int{kExitOk};
    });
}

struct PhiOptions {
    std::string which = "fast";
    std::optional<double> horizon;
    std::optional<std::size_t> grid;
};

/// Samples ||Phi(t, 0)|| and the fitted envelope; writes phi_<which>.csv.
inline int cmd_phi(const CommandContext& ctx, const PhiOptions& opt = {}) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        const ProblemInstance p = ctx.instance();
        if (opt.which != "fast" && opt.which != "slow") {
            throw Error(ErrorCode::ConfigError, "--which must be 'fast' or 'slow'");
        }
        const FlowAnchor anchor = opt.which == "fast" ? FlowAnchor::fast(p.y_star) : FlowAnchor::slow();
        const double horizon = opt.horizon.value_or(c.flow_horizon);
        const std::size_t grid = opt.grid.value_or(static_cast<std::size_t>(c.flow_grid));
        const DecayEnvelope env = fit_decay_envelope(p, anchor, horizon, grid, make_flow(c));
        detail::write_output(ctx, "phi_" + opt.which + ".csv", [&](std::ostream& os) {
            os << "t,norm_phi,envelope\n" << std::setprecision(17);
            for (std::size_t i = 0; i < env.t.size(); ++i) {
                os << env.t[i] << ',' << env.norm[i] << ',' << env.at(env.t[i]) << '\n';
            }
        });
        *ctx.out << std::setprecision(6) << "phi(" << opt.which << "): K=" << env.K << " kappa=" << env.kappa
                 << " fit_residual=" << env.fit_residual << " window=[" << env.window_start << ", "
                 << env.window_end << "] dominates=" << (env.dominates ? "yes" : "no") << '\n';
        return int{kExitOk};
    });
}

struct BoundOptions {
    std::optional<double> eps;
    std::optional<std::size_t> n0;
};

/// Bound ingredients and theorem right-hand sides per (eps, n0).
inline int cmd_bound(const CommandContext& ctx, const BoundOptions& opt = {}) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        const ProblemInstance p = ctx.instance();
        ExperimentPlan plan = make_plan(c, p);
        if (opt.eps) plan.eps_list = {*opt.eps};
        if (opt.n0) plan.n0_list = {*opt.n0};
        if (plan.eps_list.empty() || plan.n0_list.empty()) throw Error(ErrorCode::ConfigError, "empty eps or n0 list");
        const PlanEnvelopes env = plan_envelopes(plan);
        BoundConstants constants = plan.user_constants;
        std::string label = "user-constant";
        if (plan.mode == ConstantsMode::calibrated) {
            const std::size_t n0_min = *std::min_element(plan.n0_list.begin(), plan.n0_list.end());
            const KCalibration cal = calibrate_k_agg(plan, n0_min, calibration_seed(plan.seed), plan.calibration_seeds);
            constants = calibrated_constants(plan.noise_fast, plan.noise_slow, cal.K_agg, env.x, env.y);
            label = "calibrated";
        }
        std::ostringstream summary;
        summary << "eps,n0,T,a_head,a_tail,eps_head,eps_tail,beta_head,beta_tail,gamma_head,gamma_tail,"
                   "thm41_pre_clamp,thm41_rhs,thm42_pre_clamp,thm42_rhs,tail_certified,constants\n"
                << std::setprecision(17);
        auto& out = *ctx.out;
        out << std::setprecision(6) << "bound: constants=" << label << " C1=" << constants.C1
            << " C2=" << constants.C2 << " K_agg=" << constants.K_agg << " kappa_x=" << env.x.kappa
            << " kappa_y=" << env.y.kappa << '\n';
        for (double eps : plan.eps_list) {
            for (std::size_t n0 : plan.n0_list) {
                BoundIngredients ing = make_ingredients(plan.schedule, env.x, env.y, n0, constants);
                ing.H_n0 = 2.0 * plan.r_B;
                ing.T = eps > 0.0 ? settling_time(env.x, ing.H_n0, eps, constants.K_agg, plan.schedule, n0) : 0;
                const TheoremRhs r41 = theorem41_rhs(ing, plan.schedule, eps, n0);
                const TheoremRhs r42 = theorem42_rhs(ing, plan.schedule, eps, n0);
                const std::string name =
                    "bounds_eps" + detail::label_number(eps) + "_n0" + std::to_string(n0) + ".csv";
                detail::write_output(ctx, name, [&](std::ostream& os) { write_bounds_csv(os, ing, plan.schedule, eps); });
                summary << eps << ',' << n0 << ',' << ing.T << ',' << r42.a_series.head << ',' << r42.a_series.tail
                        << ',' << r42.eps_series.head << ',' << r42.eps_series.tail << ',' << r42.beta_series.head
                        << ',' << r42.beta_series.tail << ',' << r42.gamma_series.head << ','
                        << r42.gamma_series.tail << ',' << r41.pre_clamp << ',' << r41.value << ',' << r42.pre_clamp
                        << ',' << r42.value << ',' << (r42.tail_certified ? 1 : 0) << ',' << label << '\n';
                out << "  eps=" << eps << " n0=" << n0 << " T=" << ing.T << " thm41=" << r41.value
                    << " (pre-clamp " << r41.pre_clamp << ") thm42=" << r42.value << " (pre-clamp "
                    << r42.pre_clamp << ")" << (r42.tail_certified ? "" : " [tail not certified]") << '\n';
            }
        }
        detail::write_output(ctx, "bounds_summary.csv", [&](std::ostream& os) { os << summary.str(); });
        return int{kExitOk};
    });
}

/// Monte-Carlo concentration experiment; exit 5 on any VIOLATION.
inline int cmd_verify(const CommandContext& ctx) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        const ProblemInstance p = ctx.instance();
        const ExperimentPlan plan = make_plan(c, p);
        const ConcentrationReport rep = run_experiment(plan);
        detail::write_output(ctx, "report_thm41.csv", [&](std::ostream& os) { write_report_csv(os, rep.thm41); });
        detail::write_output(ctx, "report_thm42.csv", [&](std::ostream& os) { write_report_csv(os, rep.thm42); });
        const SurvivalCurve curve = g_event_attrition(rep, 1000);
        detail::write_output(ctx, "g_survival.csv", [&](std::ostream& os) {
            os << "n,survival_fast,survival_slow\n" << std::setprecision(17);
            for (std::size_t i = 0; i < curve.n.size(); ++i) {
                os << curve.n[i] << ',' << curve.fast[i] << ',' << curve.slow[i] << '\n';
            }
        });
        auto& out = *ctx.out;
        out << std::setprecision(6) << "verify (" << rep.label << "): problem=" << p.name
            << " replications=" << plan.replications << " window ends at n_max=" << rep.n_max << " (truncated)\n";
        out << "  constants C1=" << rep.constants.C1 << " C2=" << rep.constants.C2 << " K_agg=" << rep.constants.K_agg
            << '\n';
        for (const auto* rows : {&rep.thm41, &rep.thm42}) {
            const char* name = rows == &rep.thm41 ? "fast (x_n - z_n)" : "slow (y_n - y(t_n))";
            for (const auto& r : *rows) {
                out << "  " << name << " eps=" << r.eps << " n0=" << r.n0 << " T=" << r.T << " window=["
                    << r.window_begin << ", " << r.window_end << "] conditioned=" << r.conditioned << "/"
                    << r.replications << " p_hat=" << r.p_hat << " wilson=[" << r.wilson.lo << ", " << r.wilson.hi
                    << "] rhs=" << r.rhs.value << " G_survival=" << r.g_survival << " " << to_string(r.verdict)
                    << '\n';
            }
        }
        return rep.any_violation() ? int{kExitViolation} : int{kExitOk};
    });
}

/// Variation-of-constants residual on the configured test system.
inline int cmd_alekseev(const CommandContext& ctx) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        OdeSystem base;
        if (c.alekseev_case == "linear") {
            base.f = [](double, const Vec& x) -> Vec { return -x; };
            base.jacobian = [](double, const Vec& x) -> Mat { return -Mat::Identity(x.size(), x.size()); };
        } else if (c.alekseev_case == "nonlinear") {
            base.f = [](double, const Vec& x) -> Vec { return scalar_vec(-x(0) * x(0) * x(0) - x(0)); };
            base.jacobian = [](double, const Vec& x) -> Mat { return Mat::Constant(1, 1, -3.0 * x(0) * x(0) - 1.0); };
        } else {
            throw Error(ErrorCode::ConfigError, "alekseev.case must be 'linear' or 'nonlinear'");
        }
        const double pert = c.alekseev_perturbation;
        const TimeField g = [pert](double, const Vec&) -> Vec { return scalar_vec(pert); };
        if (!(c.alekseev_dt > 0.0) || !(c.alekseev_t_end > 0.0)) {
            throw Error(ErrorCode::ConfigError, "alekseev.dt and alekseev.t_end must be positive");
        }
        FlowConfig cfg;
        cfg.dt = c.alekseev_dt;
        const AlekseevReport rep = verify_alekseev(base, g, scalar_vec(c.alekseev_p0), scalar_vec(c.alekseev_u0), 0.0,
                                                   c.alekseev_t_end, cfg);
        detail::write_output(ctx, "alekseev.csv", [&](std::ostream& os) {
            os << "t,direct,formula,residual\n" << std::setprecision(17);
            for (std::size_t j = 0; j < rep.t.size(); ++j) {
                os << rep.t[j] << ',' << rep.direct[j](0) << ',' << rep.formula[j](0) << ',' << rep.residual[j] << '\n';
            }
        });
        *ctx.out << std::setprecision(6) << "alekseev(" << c.alekseev_case << "): sup residual=" << rep.sup_residual
                 << " over [0, " << c.alekseev_t_end << "] dt=" << cfg.dt << '\n';
        return int{kExitOk};
    });
}

/// Problem, schedule and noise validators. Exit 2 when the instance or the
/// schedule fails; tail rows are reported as statistical evidence only.
inline int cmd_check(const CommandContext& ctx) {
    return detail::guarded(ctx, [&] {
        const Config& c = ctx.config;
        const ProblemInstance p = ctx.instance();
        const StepSchedule sched = make_schedule(c);
        const NoisePair noise = make_noise(c, p);
        const InstanceReport inst = check_instance(p, static_cast<std::size_t>(c.check_probes), c.seed);
        const ValidationReport val = validate_schedule(sched, 0.1);
        auto& out = *ctx.out;
        out << std::setprecision(6);
        auto flag = [](bool ok) { return ok ? "PASS" : "FAIL"; };
        out << "instance " << p.name << ": equilibrium " << flag(inst.equilibrium_ok) << " (fast residual "
            << inst.max_fast_equilibrium_residual << ", slow residual " << inst.slow_equilibrium_residual << ")\n"
            << "  bound " << flag(inst.bound_ok) << " (max ||g|| " << inst.max_g_norm << " vs B_g " << p.B_g << ")\n"
            << "  lipschitz " << flag(inst.lipschitz_ok) << " (h " << inst.lipschitz_h << ", g " << inst.lipschitz_g
            << ", lambda " << inst.lipschitz_lambda << ")\n"
            << "  stability " << flag(inst.stable_ok) << " (mu " << inst.spectral_margin << ")\n"
            << "  lyapunov " << flag(inst.lyapunov_ok) << " (c " << inst.lyapunov_rate << ")\n";
        auto line = [&](const char* name, const ConditionCheck& cc) {
            out << "  " << name << ' ' << to_string(cc.verdict) << " (" << cc.note << ", value " << cc.value << ")\n";
        };
        out << "schedule " << to_string(sched.kind()) << ":\n";
        line("sum a_n = sum b_n = inf", val.steps_diverge);
        line("sum a_n^2 + b_n^2 < inf", val.squares_summable);
        line("eps_n -> 0", val.ratio_vanishes);
        line("0 < b_n <= a_n < 1", val.ordering);

        std::ostringstream tails;
        tails << "channel,u,exceedances,p_hat,upper99,bound,applicable,pass\n" << std::setprecision(17);
        for (int ch = 0; ch < 2; ++ch) {
            const NoiseModel& m = ch == 0 ? noise.fast : noise.slow;
            const TailConstants tc = m.constants();
            std::vector<double> grid;
            for (double mult : {1.0, 2.0, 4.0, 8.0}) grid.push_back(std::isinf(tc.c2) ? mult : mult / tc.c2);
            const TailReport tr = verify_tail(m, static_cast<std::size_t>(c.check_tail_draws), grid,
                                              c.seed + static_cast<std::uint64_t>(ch));
            out << "noise " << (ch == 0 ? "fast" : "slow") << " " << to_string(m.kind()) << " (c1 " << tc.c1
                << ", c2 " << tc.c2 << ", u_L " << tc.u_L << "):\n";
            for (const auto& row : tr.rows) {
                out << "  u=" << row.u << " p_hat=" << row.p_hat << " upper99=" << row.upper99 << " bound="
                    << row.bound << " " << (row.applicable ? flag(row.pass) : "n/a") << '\n';
                tails << (ch == 0 ? "fast" : "slow") << ',' << row.u << ',' << row.exceedances << ',' << row.p_hat
                      << ',' << row.upper99 << ',' << row.bound << ',' << (row.applicable ? 1 : 0) << ','
                      << (row.pass ? 1 : 0) << '\n';
            }
        }
        detail::write_output(ctx, "check_tails.csv", [&](std::ostream& os) { os << tails.str(); });
        const bool ok = inst.all_pass() && !val.any_fail();
        return ok ? int{kExitOk} : int{kExitConfig};
    });
}

}  // namespace ttsa
