#include "catch_amalgamated.hpp"

#include "ttsa/commands.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Harness {
    fs::path dir;
    std::ostringstream out;
    std::ostringstream err;
    ttsa::CommandContext ctx;

    explicit Harness(const std::string& name) {
        dir = fs::temp_directory_path() / ("ttsa_test_commands_" + name);
        fs::remove_all(dir);
        ctx.config.schedule_n_max = 3000;
        ctx.config.experiment_n0 = {50, 500};
        ctx.config.experiment_replications = 20;
        ctx.config.bounds_calibration_seeds = 2;
        ctx.config.experiment_threads = 2;
        ctx.config.check_probes = 1000;
        ctx.config.check_tail_draws = 10000;
        ctx.config.alekseev_dt = 1e-3;
        ctx.out_dir = dir.string();
        ctx.out = &out;
        ctx.err = &err;
    }
    ~Harness() { fs::remove_all(dir); }

    std::string first_line(const std::string& file) const {
        std::ifstream in(dir / file);
        std::string line;
        std::getline(in, line);
        return line;
    }
};

}  // namespace

TEST_CASE("every command writes its files with the config hash", "[commands]") {
    Harness h("files");
    const std::string stamp = "# config_hash=" + ttsa::config_hash(h.ctx.config);
    REQUIRE(ttsa::cmd_simulate(h.ctx) == ttsa::kExitOk);
    REQUIRE(ttsa::cmd_phi(h.ctx) == ttsa::kExitOk);
    REQUIRE(ttsa::cmd_phi(h.ctx, {"slow", {}, {}}) == ttsa::kExitOk);
    REQUIRE(ttsa::cmd_bound(h.ctx) == ttsa::kExitOk);
    REQUIRE(ttsa::cmd_alekseev(h.ctx) == ttsa::kExitOk);
    REQUIRE(ttsa::cmd_check(h.ctx) == ttsa::kExitOk);
    INFO(h.err.str());
    for (const char* f : {"trajectory.csv", "phi_fast.csv", "phi_slow.csv", "bounds_summary.csv",
                          "bounds_eps0p5_n050.csv", "bounds_eps0p5_n0500.csv", "alekseev.csv", "check_tails.csv"}) {
        INFO(f);
        REQUIRE(fs::exists(h.dir / f));
        REQUIRE(h.first_line(f) == stamp);
    }
    REQUIRE(h.out.str().find("alekseev(nonlinear): sup residual=") != std::string::npos);
}

TEST_CASE("noiseless verify from the fixed point exits 0", "[commands]") {
    Harness h("quiet");
    h.ctx.config.noise_scale = 0.0;
    h.ctx.config.init_y = {0.0};
    REQUIRE(ttsa::cmd_verify(h.ctx) == ttsa::kExitOk);
    for (const char* f : {"report_thm41.csv", "report_thm42.csv", "g_survival.csv"}) REQUIRE(fs::exists(h.dir / f));
    REQUIRE(h.out.str().find("VIOLATION") == std::string::npos);
    REQUIRE(h.out.str().find("CONSISTENT") != std::string::npos);
}

TEST_CASE("understated user constants produce a violation", "[commands]") {
    Harness h("violation");
    h.ctx.config.bounds_mode = "user";
    h.ctx.config.bounds_C1 = 1e-6;
    h.ctx.config.bounds_C2 = 1e6;
    h.ctx.config.experiment_eps = {0.01};
    h.ctx.config.init_y = {0.0};
    REQUIRE(ttsa::cmd_verify(h.ctx) == ttsa::kExitViolation);
    REQUIRE(h.out.str().find("user-constant test") != std::string::npos);
}

TEST_CASE("invalid schedule exponent exits 2", "[commands]") {
    Harness h("alpha");
    h.ctx.config.schedule_alpha = 0.3;
    REQUIRE(ttsa::cmd_simulate(h.ctx) == ttsa::kExitConfig);
    REQUIRE(h.err.str().rfind("error: ", 0) == 0);
}

TEST_CASE("divergent iterates exit 3", "[commands]") {
    Harness h("diverge");
    h.ctx.problem = ttsa::make_linear1d(-50.0);
    REQUIRE(ttsa::cmd_simulate(h.ctx) == ttsa::kExitDivergence);
}

TEST_CASE("unstable flow cannot be fitted and exits 4", "[commands]") {
    Harness h("unstable");
    h.ctx.problem = ttsa::make_linear1d(-1.0);
    REQUIRE(ttsa::cmd_phi(h.ctx) == ttsa::kExitFitFailure);
}

TEST_CASE("phi grid of zero exits 2", "[commands]") {
    Harness h("grid");
    REQUIRE(ttsa::cmd_phi(h.ctx, {"fast", {}, std::size_t{0}}) == ttsa::kExitConfig);
    REQUIRE(ttsa::cmd_phi(h.ctx, {"sideways", {}, {}}) == ttsa::kExitConfig);
}

TEST_CASE("check exits 2 when the instance fails its validators", "[commands]") {
    Harness h("check");
    auto p = ttsa::make_linear1d();
    p.B_g = 1.0;
    h.ctx.problem = p;
    REQUIRE(ttsa::cmd_check(h.ctx) == ttsa::kExitConfig);
    REQUIRE(h.out.str().find("bound FAIL") != std::string::npos);
}

TEST_CASE("bound honours the eps and n0 overrides", "[commands]") {
    Harness h("override");
    h.ctx.config.bounds_mode = "user";
    REQUIRE(ttsa::cmd_bound(h.ctx, {0.25, std::size_t{100}}) == ttsa::kExitOk);
    REQUIRE(fs::exists(h.dir / "bounds_eps0p25_n0100.csv"));
    REQUIRE_FALSE(fs::exists(h.dir / "bounds_eps0p5_n050.csv"));
}

TEST_CASE("outputs are byte-identical across runs", "[commands]") {
    Harness a("repeat_a"), b("repeat_b");
    REQUIRE(ttsa::cmd_simulate(a.ctx) == 0);
    REQUIRE(ttsa::cmd_simulate(b.ctx) == 0);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    REQUIRE(slurp(a.dir / "trajectory.csv") == slurp(b.dir / "trajectory.csv"));
    REQUIRE(a.out.str() == b.out.str());
}
