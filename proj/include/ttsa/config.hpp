#pragma once

#include "ttsa/core.hpp"
#include "ttsa/noise.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/schedules.hpp"
#include "ttsa/verify.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace ttsa {

/// Flat configuration. Text form: one `key = value` per line, `#` starts a
/// comment, list values are comma separated.
struct Config {
    std::string problem = "LINEAR1D";

    std::string schedule_kind = "polynomial";
    double schedule_a0 = 1.0;
    double schedule_alpha = 0.6;
    double schedule_b0 = 1.0;
    double schedule_beta = 0.9;
    std::uint64_t schedule_n_max = 100000;
    double schedule_a = 0.1;
    double schedule_b = 0.01;
    std::string schedule_table;

    std::string noise_kind = "laplace";
    double noise_scale = 0.1;
    double noise_scale_slow = -1.0;  // negative: same as noise.scale
    std::uint64_t noise_dim_fast = 0;  // 0: problem dimension
    std::uint64_t noise_dim_slow = 0;

    std::uint64_t seed = 1;
    std::vector<double> init_x;  // empty: lambda(init.y)
    std::vector<double> init_y{0.5};

    double flow_dt = 1e-3;
    double flow_horizon = 10.0;
    std::uint64_t flow_grid = 200;

    std::string bounds_mode = "calibrated";
    double bounds_K = 1.0;
    double bounds_C1 = 1.0;
    double bounds_C2 = 1.0;
    std::uint64_t bounds_calibration_seeds = 20;

    std::uint64_t experiment_replications = 500;
    std::vector<std::uint64_t> experiment_n0{100, 1000, 10000};
    std::vector<double> experiment_eps{0.5};
    double experiment_r_B = 1.0;
    std::uint64_t experiment_threads = 0;

    std::string alekseev_case = "nonlinear";
    double alekseev_perturbation = 0.1;
    double alekseev_p0 = 1.0;
    double alekseev_u0 = 1.0;
    double alekseev_t_end = 2.0;
    double alekseev_dt = 1e-4;

    std::uint64_t check_probes = 10000;
    std::uint64_t check_tail_draws = 1000000;

    std::string output_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw Error(ErrorCode::ConfigError, "key '" + key + "': '" + text + "' is not a number");
    }
    return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw Error(ErrorCode::ConfigError, "key '" + key + "': '" + text + "' is not a non-negative integer");
    }
    return v;
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    if (trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

struct ConfigField {
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

template <typename T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) out += ",";
        if constexpr (std::is_floating_point_v<T>) {
            out += format_double(values[i]);
        } else {
            out += std::to_string(values[i]);
        }
    }
    return out;
}

inline std::vector<ConfigField> config_fields(Config& c) {
    std::vector<ConfigField> f;
    auto text = [&f](std::string key, std::string& ref) {
        f.push_back({key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }});
    };
    auto real = [&f](std::string key, double& ref) {
        f.push_back({key, [&ref, key](const std::string& v) { ref = parse_double(key, v); },
                     [&ref] { return format_double(ref); }});
    };
    auto count = [&f](std::string key, std::uint64_t& ref) {
        f.push_back({key, [&ref, key](const std::string& v) { ref = parse_uint(key, v); },
                     [&ref] { return std::to_string(ref); }});
    };
    auto reals = [&f](std::string key, std::vector<double>& ref) {
        f.push_back({key,
                     [&ref, key](const std::string& v) {
                         ref.clear();
                         for (const auto& item : split_list(v)) ref.push_back(parse_double(key, item));
                     },
                     [&ref] { return join(ref); }});
    };
    auto counts = [&f](std::string key, std::vector<std::uint64_t>& ref) {
        f.push_back({key,
                     [&ref, key](const std::string& v) {
                         ref.clear();
                         for (const auto& item : split_list(v)) ref.push_back(parse_uint(key, item));
                     },
                     [&ref] { return join(ref); }});
    };
    text("problem", c.problem);
    text("schedule.kind", c.schedule_kind);
    real("schedule.a0", c.schedule_a0);
    real("schedule.alpha", c.schedule_alpha);
    real("schedule.b0", c.schedule_b0);
    real("schedule.beta", c.schedule_beta);
    count("schedule.n_max", c.schedule_n_max);
    real("schedule.a", c.schedule_a);
    real("schedule.b", c.schedule_b);
    text("schedule.table", c.schedule_table);
    text("noise.kind", c.noise_kind);
    real("noise.scale", c.noise_scale);
    real("noise.scale_slow", c.noise_scale_slow);
    count("noise.dim_fast", c.noise_dim_fast);
    count("noise.dim_slow", c.noise_dim_slow);
    count("seed", c.seed);
    reals("init.x", c.init_x);
    reals("init.y", c.init_y);
    real("flow.dt", c.flow_dt);
    real("flow.horizon", c.flow_horizon);
    count("flow.grid", c.flow_grid);
    text("bounds.mode", c.bounds_mode);
    real("bounds.K", c.bounds_K);
    real("bounds.C1", c.bounds_C1);
    real("bounds.C2", c.bounds_C2);
    count("bounds.calibration_seeds", c.bounds_calibration_seeds);
    count("experiment.replications", c.experiment_replications);
    counts("experiment.n0", c.experiment_n0);
    reals("experiment.eps", c.experiment_eps);
    real("experiment.r_B", c.experiment_r_B);
    count("experiment.threads", c.experiment_threads);
    text("alekseev.case", c.alekseev_case);
    real("alekseev.perturbation", c.alekseev_perturbation);
    real("alekseev.p0", c.alekseev_p0);
    real("alekseev.u0", c.alekseev_u0);
    real("alekseev.t_end", c.alekseev_t_end);
    real("alekseev.dt", c.alekseev_dt);
    count("check.probes", c.check_probes);
    count("check.tail_draws", c.check_tail_draws);
    text("output.dir", c.output_dir);
    return f;
}

}  // namespace detail

inline Config parse_config(const std::string& text) {
    Config c;
    auto fields = detail::config_fields(c);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
        if (it == fields.end()) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
        it->set(value);
    }
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text form; every key is written, in a fixed order.
inline std::string serialize_config(const Config& config) {
    Config copy = config;
    std::string out;
    for (const auto& f : detail::config_fields(copy)) out += f.key + " = " + f.get() + "\n";
    return out;
}

inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const Config& config) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(serialize_config(config));
    return os.str();
}

// ---------------------------------------------------------------------------
// Builders

inline StepSchedule make_schedule(const Config& c) {
    const auto n_max = static_cast<std::size_t>(c.schedule_n_max);
    if (c.schedule_kind == "polynomial") {
        return StepSchedule::polynomial(c.schedule_a0, c.schedule_alpha, c.schedule_b0, c.schedule_beta, n_max);
    }
    if (c.schedule_kind == "constant") return StepSchedule::constant(c.schedule_a, c.schedule_b, n_max);
    if (c.schedule_kind == "table") {
        if (c.schedule_table.empty()) throw Error(ErrorCode::ConfigError, "schedule.table is required for kind=table");
        return load_schedule_table(c.schedule_table);
    }
    throw Error(ErrorCode::ConfigError, "unknown schedule.kind '" + c.schedule_kind + "'");
}

inline ProblemInstance make_problem(const Config& c) { return builtin_problem(c.problem); }

struct NoisePair {
    NoiseModel fast;
    NoiseModel slow;
};

inline NoisePair make_noise(const Config& c, const ProblemInstance& p) {
    const NoiseKind kind = parse_noise_kind(c.noise_kind);
    const int d = c.noise_dim_fast == 0 ? p.d : static_cast<int>(c.noise_dim_fast);
    const int s = c.noise_dim_slow == 0 ? p.s : static_cast<int>(c.noise_dim_slow);
    if (d != p.d || s != p.s) throw Error(ErrorCode::ConfigError, "noise dimensions must match the problem");
    const double slow_scale = c.noise_scale_slow < 0.0 ? c.noise_scale : c.noise_scale_slow;
    return {NoiseModel(kind, c.noise_scale, d), NoiseModel(kind, slow_scale, s)};
}

inline InitialState make_initial_state(const Config& c, const ProblemInstance& p) {
    auto to_vec = [](const std::vector<double>& v) {
        Vec out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
        return out;
    };
    InitialState init;
    init.y = c.init_y.empty() ? p.y_star : to_vec(c.init_y);
    if (init.y.size() != p.s) throw Error(ErrorCode::ConfigError, "init.y must have " + std::to_string(p.s) + " entries");
    init.x = c.init_x.empty() ? p.lambda(init.y) : to_vec(c.init_x);
    if (init.x.size() != p.d) throw Error(ErrorCode::ConfigError, "init.x must have " + std::to_string(p.d) + " entries");
    return init;
}

inline FlowConfig make_flow(const Config& c) {
    if (!(c.flow_dt > 0.0)) throw Error(ErrorCode::ConfigError, "flow.dt must be positive");
    FlowConfig f;
    f.dt = c.flow_dt;
    return f;
}

inline ConstantsMode parse_constants_mode(const std::string& text) {
    if (text == "calibrated") return ConstantsMode::calibrated;
    if (text == "user") return ConstantsMode::user;
    throw Error(ErrorCode::ConfigError, "bounds.mode must be 'calibrated' or 'user', got '" + text + "'");
}

inline ExperimentPlan make_plan(const Config& c, const ProblemInstance& p) {
    ExperimentPlan plan;
    plan.problem = p;
    plan.schedule = make_schedule(c);
    const NoisePair noise = make_noise(c, p);
    plan.noise_fast = noise.fast;
    plan.noise_slow = noise.slow;
    plan.init = make_initial_state(c, p);
    plan.replications = static_cast<std::size_t>(c.experiment_replications);
    plan.n0_list.assign(c.experiment_n0.begin(), c.experiment_n0.end());
    plan.eps_list = c.experiment_eps;
    plan.seed = c.seed;
    plan.r_B = c.experiment_r_B;
    plan.flow = make_flow(c);
    plan.envelope_horizon = c.flow_horizon;
    plan.envelope_grid = static_cast<std::size_t>(c.flow_grid);
    plan.mode = parse_constants_mode(c.bounds_mode);
    plan.user_constants = BoundConstants{c.bounds_C1, c.bounds_C2, c.bounds_K, false};
    plan.calibration_seeds = static_cast<std::size_t>(c.bounds_calibration_seeds);
    plan.threads = static_cast<std::size_t>(c.experiment_threads);
    return plan;
}

}  // namespace ttsa
