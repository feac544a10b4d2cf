#include "ttsa/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Two-time-scale stochastic approximation toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value)");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override the config seed");
    };

    auto* simulate = app.add_subcommand("simulate", "run one trajectory");
    auto* phi = app.add_subcommand("phi", "fundamental-matrix norms and decay envelope");
    auto* bound = app.add_subcommand("bound", "bound ingredients and theorem right-hand sides");
    auto* verify = app.add_subcommand("verify", "Monte-Carlo concentration experiment");
    auto* alekseev = app.add_subcommand("alekseev", "variation-of-constants residual");
    auto* check = app.add_subcommand("check", "problem, schedule and noise validators");
    for (auto* sub : {simulate, phi, bound, verify, alekseev, check}) add_common(sub);

    ttsa::PhiOptions phi_opt;
    phi->add_option("--which", phi_opt.which, "fast or slow")->check(CLI::IsMember({"fast", "slow"}));
    phi->add_option("--horizon", phi_opt.horizon, "sampling horizon");
    phi->add_option("--grid", phi_opt.grid, "number of grid intervals");

    ttsa::BoundOptions bound_opt;
    bound->add_option("--eps", bound_opt.eps, "tolerance epsilon");
    bound->add_option("--n0", bound_opt.n0, "start index n0");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ttsa::kExitConfig;
    }

    ttsa::CommandContext ctx;
    try {
        if (!config_path.empty()) ctx.config = ttsa::load_config(config_path);
    } catch (const ttsa::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ttsa::kExitConfig;
    }
    if (seed) ctx.config.seed = *seed;
    ctx.out_dir = out_dir;

    if (simulate->parsed()) return ttsa::cmd_simulate(ctx);
    if (phi->parsed()) return ttsa::cmd_phi(ctx, phi_opt);
    if (bound->parsed()) return ttsa::cmd_bound(ctx, bound_opt);
    if (verify->parsed()) return ttsa::cmd_verify(ctx);
    if (alekseev->parsed()) return ttsa::cmd_alekseev(ctx);
    return ttsa::cmd_check(ctx);
}
