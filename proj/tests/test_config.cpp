#include "catch_amalgamated.hpp"

#include "ttsa/config.hpp"

#include <string>

using ttsa::Config;

TEST_CASE("defaults survive a round trip", "[config]") {
    const Config c;
    const std::string text = ttsa::serialize_config(c);
    REQUIRE(ttsa::serialize_config(ttsa::parse_config(text)) == text);
    REQUIRE(ttsa::config_hash(ttsa::parse_config(text)) == ttsa::config_hash(c));
}

TEST_CASE("parsed values round trip exactly", "[config]") {
    const std::string text =
        "# comment line\n"
        "problem = ROT2D\n"
        "schedule.alpha = 0.65   # trailing comment\n"
        "schedule.n_max = 12345\n"
        "noise.kind = gaussian_clipped\n"
        "noise.scale = 0.1\n"
        "init.y = -0.25\n"
        "experiment.n0 = 10, 20, 30\n"
        "experiment.eps = 0.1, 1e-3\n"
        "\n"
        "output.dir = results/run one\n";
    const Config c = ttsa::parse_config(text);
    REQUIRE(c.problem == "ROT2D");
    REQUIRE(c.schedule_alpha == 0.65);
    REQUIRE(c.schedule_n_max == 12345);
    REQUIRE(c.noise_kind == "gaussian_clipped");
    REQUIRE(c.init_y == std::vector<double>{-0.25});
    REQUIRE(c.experiment_n0 == std::vector<std::uint64_t>{10, 20, 30});
    REQUIRE(c.experiment_eps == std::vector<double>{0.1, 1e-3});
    REQUIRE(c.output_dir == "results/run one");
    const Config again = ttsa::parse_config(ttsa::serialize_config(c));
    REQUIRE(ttsa::serialize_config(again) == ttsa::serialize_config(c));
    REQUIRE(again.experiment_eps == c.experiment_eps);
    REQUIRE(again.schedule_alpha == c.schedule_alpha);
}

TEST_CASE("awkward doubles are written losslessly", "[config]") {
    Config c;
    c.noise_scale = 0.1 + 0.2;
    c.flow_dt = 1.0 / 3.0;
    c.experiment_eps = {1e-300, 1.7976931348623157e308};
    const Config back = ttsa::parse_config(ttsa::serialize_config(c));
    REQUIRE(back.noise_scale == c.noise_scale);
    REQUIRE(back.flow_dt == c.flow_dt);
    REQUIRE(back.experiment_eps == c.experiment_eps);
}

TEST_CASE("unknown keys are named in the error", "[config]") {
    try {
        ttsa::parse_config("schedule.alpha = 0.6\nschedule.gamma = 2\n");
        FAIL("expected ConfigError");
    } catch (const ttsa::Error& e) {
        REQUIRE(e.code() == ttsa::ErrorCode::ConfigError);
        REQUIRE(std::string(e.what()).find("schedule.gamma") != std::string::npos);
    }
}

TEST_CASE("malformed values are rejected", "[config]") {
    REQUIRE_THROWS_AS(ttsa::parse_config("schedule.alpha = fast\n"), ttsa::Error);
    REQUIRE_THROWS_AS(ttsa::parse_config("schedule.n_max = -5\n"), ttsa::Error);
    REQUIRE_THROWS_AS(ttsa::parse_config("schedule.alpha 0.6\n"), ttsa::Error);
    REQUIRE_THROWS_AS(ttsa::load_config("/nonexistent/path.conf"), ttsa::Error);
}

TEST_CASE("the hash tracks the content", "[config]") {
    Config a;
    Config b = a;
    REQUIRE(ttsa::config_hash(a) == ttsa::config_hash(b));
    REQUIRE(ttsa::config_hash(a).size() == 16);
    b.seed = 2;
    REQUIRE(ttsa::config_hash(a) != ttsa::config_hash(b));
    // formatting and comments do not change the hash
    const Config c = ttsa::parse_config("seed=2   # same seed\n");
    REQUIRE(ttsa::config_hash(c) == ttsa::config_hash(b));
}

TEST_CASE("builders", "[config]") {
    Config c;
    c.problem = "ROT2D";
    c.init_y = {};
    const auto p = ttsa::make_problem(c);
    const auto init = ttsa::make_initial_state(c, p);
    REQUIRE(init.y == p.y_star);
    REQUIRE((init.x - p.lambda(p.y_star)).norm() == 0.0);

    c.noise_scale_slow = 0.5;
    const auto noise = ttsa::make_noise(c, p);
    REQUIRE(noise.fast.dim() == 2);
    REQUIRE(noise.fast.scale() == 0.1);
    REQUIRE(noise.slow.scale() == 0.5);

    c.noise_dim_fast = 3;
    REQUIRE_THROWS_AS(ttsa::make_noise(c, p), ttsa::Error);
    c.noise_dim_fast = 0;
    c.init_x = {1.0};
    REQUIRE_THROWS_AS(ttsa::make_initial_state(c, p), ttsa::Error);

    c.schedule_kind = "constant";
    c.schedule_n_max = 100;
    REQUIRE(ttsa::make_schedule(c).a(50) == 0.1);
    c.schedule_kind = "table";
    REQUIRE_THROWS_AS(ttsa::make_schedule(c), ttsa::Error);
    c.schedule_kind = "cosine";
    REQUIRE_THROWS_AS(ttsa::make_schedule(c), ttsa::Error);
    c.bounds_mode = "magic";
    c.schedule_kind = "polynomial";
    c.init_x = {};
    REQUIRE_THROWS_AS(ttsa::make_plan(c, p), ttsa::Error);
}

TEST_CASE("plan mirrors the config", "[config]") {
    Config c;
    c.experiment_n0 = {7, 70};
    c.experiment_replications = 9;
    c.bounds_mode = "user";
    c.bounds_C2 = 3.0;
    c.flow_dt = 0.01;
    const auto plan = ttsa::make_plan(c, ttsa::make_problem(c));
    REQUIRE(plan.n0_list == std::vector<std::size_t>{7, 70});
    REQUIRE(plan.replications == 9);
    REQUIRE(plan.mode == ttsa::ConstantsMode::user);
    REQUIRE(plan.user_constants.C2 == 3.0);
    REQUIRE(plan.flow.dt == 0.01);
    REQUIRE(plan.init.y(0) == 0.5);
}
