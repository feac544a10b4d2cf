#include "catch_amalgamated.hpp"

#include "ttsa/verify.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

using Catch::Approx;
using ttsa::ExperimentPlan;
using ttsa::NoiseModel;
using ttsa::ReportVerdict;
using ttsa::StepSchedule;

namespace {

ExperimentPlan small_plan() {
    ExperimentPlan plan;
    plan.schedule = StepSchedule::polynomial(1.0, 0.6, 1.0, 0.9, 5000);
    plan.replications = 40;
    plan.n0_list = {50, 500};
    plan.eps_list = {0.5};
    plan.calibration_seeds = 3;
    plan.threads = 2;
    return plan;
}

ExperimentPlan quiet_plan() {
    auto plan = small_plan();
    plan.noise_fast = NoiseModel::laplace(0.0, 1);
    plan.noise_slow = NoiseModel::laplace(0.0, 1);
    return plan;
}

void require_same_rows(const std::vector<ttsa::ReportRow>& a, const std::vector<ttsa::ReportRow>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].eps == b[i].eps);
        REQUIRE(a[i].n0 == b[i].n0);
        REQUIRE(a[i].T == b[i].T);
        REQUIRE(a[i].conditioned == b[i].conditioned);
        REQUIRE(a[i].exceedances == b[i].exceedances);
        REQUIRE(a[i].rhs.value == b[i].rhs.value);
        REQUIRE(a[i].g_survival == b[i].g_survival);
        REQUIRE(a[i].verdict == b[i].verdict);
    }
}

}  // namespace

TEST_CASE("noiseless runs from the fixed point never exceed", "[verify]") {
    const auto plan = quiet_plan();
    const auto rep = ttsa::run_experiment(plan);
    REQUIRE(rep.label == "consistency check");
    REQUIRE(rep.calibration->K_agg == 1.0);
    for (const auto* rows : {&rep.thm41, &rep.thm42}) {
        REQUIRE(rows->size() == 2);
        for (const auto& r : *rows) {
            REQUIRE(r.conditioned == plan.replications);
            REQUIRE(r.p_hat == 0.0);
            REQUIRE(r.g_survival == 1.0);
            REQUIRE(r.verdict == ReportVerdict::consistent);
        }
    }
    REQUIRE_FALSE(rep.any_violation());
}

TEST_CASE("zero tolerance is always exceeded and always allowed", "[verify]") {
    auto plan = small_plan();
    plan.eps_list = {0.0};
    const auto rep = ttsa::run_experiment(plan);
    for (const auto* rows : {&rep.thm41, &rep.thm42}) {
        for (const auto& r : *rows) {
            REQUIRE(r.T == 0);
            REQUIRE(r.p_hat == 1.0);
            REQUIRE(r.rhs.value == 0.0);
            REQUIRE(r.allowance == 1.0);
            REQUIRE(r.verdict == ReportVerdict::consistent);
        }
    }
}

TEST_CASE("report rows are well formed", "[verify]") {
    auto plan = small_plan();
    plan.eps_list = {0.05, 0.5};
    const auto rep = ttsa::run_experiment(plan);
    REQUIRE(rep.thm41.size() == 4);
    for (const auto* rows : {&rep.thm41, &rep.thm42}) {
        for (const auto& r : *rows) {
            REQUIRE(r.p_hat >= 0.0);
            REQUIRE(r.p_hat <= 1.0);
            REQUIRE(r.wilson.lo <= r.p_hat);
            REQUIRE(r.p_hat <= r.wilson.hi);
            REQUIRE(r.rhs.value >= 0.0);
            REQUIRE(r.rhs.value <= 1.0);
            REQUIRE(r.window_begin == r.n0 + r.T + 1);
            REQUIRE(r.window_end == 5000);
            REQUIRE(r.conditioned <= r.replications);
            REQUIRE(r.g_survival >= 0.0);
            REQUIRE(r.g_survival <= 1.0);
        }
    }
    for (std::size_t i = 0; i < rep.thm41.size(); ++i) REQUIRE(rep.thm42[i].rhs.value <= rep.thm41[i].rhs.value);
}

TEST_CASE("verdict rule", "[verify]") {
    REQUIRE(ttsa::judge(0.3, {0.25, 0.35}, 0.2) == ReportVerdict::violation);
    REQUIRE(ttsa::judge(0.3, {0.15, 0.45}, 0.2) == ReportVerdict::inconclusive);
    REQUIRE(ttsa::judge(0.1, {0.05, 0.3}, 0.2) == ReportVerdict::consistent);
    REQUIRE(ttsa::judge(0.0, {0.0, 0.09}, 0.0) == ReportVerdict::consistent);
    REQUIRE(ttsa::judge(1.0, {0.9, 1.0}, 1.0) == ReportVerdict::consistent);
}

TEST_CASE("Wilson width shrinks like one over root R", "[verify]") {
    for (double p : {0.1, 0.3, 0.5}) {
        const auto R = std::size_t{400};
        const auto k = static_cast<std::size_t>(p * R);
        const double ratio = ttsa::wilson_interval(2 * k, 2 * R).width() / ttsa::wilson_interval(k, R).width();
        REQUIRE(ratio >= 0.6);
        REQUIRE(ratio <= 0.8);
    }
    const auto w = ttsa::wilson_interval(0, 100);
    REQUIRE(w.lo == Approx(0.0).margin(1e-15));
    REQUIRE(w.hi == Approx(3.8415 / (100 + 3.8415)).epsilon(1e-4));
}

TEST_CASE("experiments are deterministic and thread independent", "[verify]") {
    auto plan = small_plan();
    plan.threads = 1;
    const auto a = ttsa::run_experiment(plan);
    plan.threads = 3;
    const auto b = ttsa::run_experiment(plan);
    require_same_rows(a.thm41, b.thm41);
    require_same_rows(a.thm42, b.thm42);
    REQUIRE(a.constants.C2 == b.constants.C2);
    plan.seed = 2;
    const auto c = ttsa::run_experiment(plan);
    bool differs = false;
    for (std::size_t r = 0; r < plan.replications; ++r) differs = differs || c.outcomes[r].sup_fast != a.outcomes[r].sup_fast;
    REQUIRE(differs);
}

TEST_CASE("a one-cell sweep reproduces run_experiment", "[verify]") {
    auto plan = small_plan();
    plan.n0_list = {500};
    const auto direct = ttsa::run_experiment(plan);
    ttsa::SweepGrid grid;
    grid.eps = {0.5};
    grid.n0 = {500};
    const auto cells = ttsa::sweep(plan, grid);
    REQUIRE(cells.size() == 1);
    require_same_rows(cells[0].report.thm41, direct.thm41);
    require_same_rows(cells[0].report.thm42, direct.thm42);
    REQUIRE(cells[0].alpha == 0.6);
    REQUIRE(cells[0].beta == 0.9);
}

TEST_CASE("sweep grid limits", "[verify]") {
    const auto plan = small_plan();
    ttsa::SweepGrid empty;
    REQUIRE_THROWS_AS(ttsa::sweep(plan, empty), ttsa::Error);
    ttsa::SweepGrid big;
    big.eps.assign(11, 0.5);
    big.n0.assign(10, 50);
    REQUIRE_THROWS_AS(ttsa::sweep(plan, big), ttsa::Error);
    ttsa::SweepGrid shapes;
    shapes.eps = {0.5};
    shapes.n0 = {50};
    shapes.exponents = {{0.6, 0.9}, {0.55, 0.8}};
    const auto cells = ttsa::sweep(plan, shapes);
    REQUIRE(cells.size() == 2);
    REQUIRE(cells[1].alpha == 0.55);
}

TEST_CASE("G-event attrition", "[verify]") {
    SECTION("identically one without noise") {
        const auto rep = ttsa::run_experiment(quiet_plan());
        const auto curve = ttsa::g_event_attrition(rep, 50);
        REQUIRE(curve.n0 == 50);
        REQUIRE(curve.n.back() == 5000);
        for (std::size_t i = 0; i < curve.n.size(); ++i) {
            REQUIRE(curve.fast[i] == 1.0);
            REQUIRE(curve.slow[i] == 1.0);
        }
    }
    SECTION("non-increasing with heavy noise") {
        auto plan = small_plan();
        plan.noise_fast = NoiseModel::laplace(3.0, 1);
        plan.noise_slow = NoiseModel::laplace(3.0, 1);
        plan.r_B = 100.0;
        plan.eps_list = {50.0};
        const auto rep = ttsa::run_experiment(plan);
        const auto curve = ttsa::g_event_attrition(rep);
        REQUIRE(curve.n.size() == 5000 - 50 + 1);
        for (std::size_t i = 1; i < curve.n.size(); ++i) {
            REQUIRE(curve.fast[i] <= curve.fast[i - 1]);
            REQUIRE(curve.slow[i] <= curve.slow[i - 1]);
        }
        REQUIRE(curve.fast.back() < 1.0);
    }
}

TEST_CASE("G-event break matches the engine flags", "[verify]") {
    const auto p = ttsa::make_linear1d();
    const auto s = StepSchedule::polynomial(1.0, 0.6, 1.0, 0.9, 3000);
    const auto m = NoiseModel::laplace(3.0, 1);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto tr = ttsa::run(p, s, m, m, {ttsa::scalar_vec(0.0), ttsa::scalar_vec(0.0)}, 30, seed);
        REQUIRE(ttsa::g_event_break(tr, p, 30, ttsa::Clock::fast) == tr.g_fast_break);
        REQUIRE(ttsa::g_event_break(tr, p, 30, ttsa::Clock::slow) == tr.g_slow_break);
    }
}

TEST_CASE("plan validation", "[verify]") {
    auto expect_invalid = [](const ExperimentPlan& plan) {
        try {
            ttsa::validate_plan(plan);
            FAIL("expected PlanInvalid");
        } catch (const ttsa::Error& e) {
            REQUIRE(e.code() == ttsa::ErrorCode::PlanInvalid);
        }
    };
    auto plan = small_plan();
    REQUIRE_NOTHROW(ttsa::validate_plan(plan));
    plan.replications = 0;
    expect_invalid(plan);
    plan = small_plan();
    plan.n0_list = {4999};
    expect_invalid(plan);
    plan = small_plan();
    plan.eps_list = {-0.1};
    expect_invalid(plan);
    plan = small_plan();
    plan.eps_list.clear();
    expect_invalid(plan);
    plan = small_plan();
    plan.noise_fast = NoiseModel::laplace(0.1, 2);
    expect_invalid(plan);
    plan = small_plan();
    plan.mode = ttsa::ConstantsMode::user;
    plan.user_constants.C2 = 0.0;
    expect_invalid(plan);
}

TEST_CASE("no conditioned replication is an error", "[verify]") {
    auto plan = small_plan();
    plan.r_B = 1e-9;
    try {
        ttsa::run_experiment(plan);
        FAIL("expected NoConditionedReplications");
    } catch (const ttsa::Error& e) {
        REQUIRE(e.code() == ttsa::ErrorCode::NoConditionedReplications);
    }
}

TEST_CASE("user constants skip calibration", "[verify]") {
    auto plan = small_plan();
    plan.mode = ttsa::ConstantsMode::user;
    plan.user_constants = {1.0, 1.0, 1.0, false};
    const auto rep = ttsa::run_experiment(plan);
    REQUIRE(rep.label == "user-constant test");
    REQUIRE_FALSE(rep.calibration.has_value());
    REQUIRE(rep.constants.C2 == 1.0);
}

TEST_CASE("path ratios", "[verify]") {
    const auto quiet = quiet_plan();
    const auto env = ttsa::plan_envelopes(quiet);
    const auto r0 = ttsa::path_ratio(quiet, env, 50, 1, 0);
    REQUIRE(r0.fast == 0.0);
    REQUIRE(r0.slow == 0.0);
    REQUIRE(r0.fast_checked == 5000 - 50);

    const auto plan = small_plan();
    const auto cal = ttsa::calibrate_k_agg(plan, 50, 9, 4);
    REQUIRE(cal.per_seed.size() == 4);
    REQUIRE(cal.K_agg == std::max(cal.K_fast, cal.K_slow));
    REQUIRE(cal.K_agg > 0.0);
    REQUIRE(std::isfinite(cal.K_agg));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(cal.per_seed[i].fast == ttsa::path_ratio(plan, env, 50, 9, i).fast);
    REQUIRE(ttsa::calibration_seed(1) != 1);
}

TEST_CASE("parallel_for covers every index and rethrows the first error", "[verify]") {
    std::vector<int> hits(100, 0);
    ttsa::parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) REQUIRE(h == 1);
    try {
        ttsa::parallel_for(20, 3, [](std::size_t i) {
            if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()) == "7");
    }
}

TEST_CASE("report CSV", "[verify]") {
    const auto rep = ttsa::run_experiment(quiet_plan());
    std::ostringstream os;
    ttsa::write_report_csv(os, rep.thm41);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "eps,n0,T,replications,conditioned,p_hat,wilson_lo,wilson_hi,thm_rhs,verdict");
    std::getline(in, line);
    REQUIRE(line.ends_with(",CONSISTENT"));
}
