#pragma once

#include "ttsa/core.hpp"
#include "ttsa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ttsa {

/// Counter-based stream: output j of stream (seed, id) is
/// mix64(key + (j + 1) * golden) with key = mix64(seed ^ mix64(id)).
/// Any (seed, id, j) triple can be addressed without touching other streams.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + kGolden))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(key_ + counter_ * kGolden);
    }

    /// Uniform on the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal by Box-Muller; the second variate is cached.
    double normal() {
        if (cached_) {
            cached_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        cached_ = true;
        return radius * std::cos(angle);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool cached_ = false;
};

enum class NoiseKind { laplace, bounded_uniform, gaussian_clipped };

inline const char* to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::laplace: return "laplace";
        case NoiseKind::bounded_uniform: return "bounded-uniform";
        case NoiseKind::gaussian_clipped: return "gaussian-clipped";
    }
    return "?";
}

inline NoiseKind parse_noise_kind(const std::string& text) {
    if (text == "laplace") return NoiseKind::laplace;
    if (text == "bounded-uniform") return NoiseKind::bounded_uniform;
    if (text == "gaussian-clipped") return NoiseKind::gaussian_clipped;
    throw Error(ErrorCode::ConfigError, "unknown noise kind '" + text + "'");
}

/// Tail certificate P(||M|| > u) <= c1 exp(-c2 u) for u > u_L.
struct TailConstants {
    double c1 = 1.0;
    double c2 = 1.0;
    double u_L = 0.0;

    double bound(double u) const { return std::isinf(c2) ? 0.0 : c1 * std::exp(-c2 * u); }
};

/// I.i.d. zero-mean noise with independent coordinates.
class NoiseModel {
public:
    NoiseModel() = default;
    NoiseModel(NoiseKind kind, double scale, int dim, double clip = 6.0) : kind_(kind), scale_(scale), dim_(dim), clip_(clip) {
        if (!(scale >= 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::ParameterOutOfRange, "noise scale must be >= 0");
        if (dim < 1 || dim > kMaxDim) throw Error(ErrorCode::ParameterOutOfRange, "noise dim out of range");
        if (!(clip > 0.0)) throw Error(ErrorCode::ParameterOutOfRange, "clip must be positive");
    }

    static NoiseModel laplace(double scale, int dim) { return {NoiseKind::laplace, scale, dim}; }
    static NoiseModel bounded_uniform(double scale, int dim) { return {NoiseKind::bounded_uniform, scale, dim}; }
    static NoiseModel gaussian_clipped(double scale, int dim, double clip = 6.0) {
        return {NoiseKind::gaussian_clipped, scale, dim, clip};
    }

    /// Same sampler, but verify_tail and tail_constants use `declared`.
    NoiseModel with_declared(TailConstants declared) const {
        NoiseModel copy = *this;
        copy.declared_ = declared;
        return copy;
    }

    NoiseKind kind() const { return kind_; }
    double scale() const { return scale_; }
    int dim() const { return dim_; }
    double clip() const { return clip_; }

    double draw_coordinate(RngStream& rng) const {
        switch (kind_) {
            case NoiseKind::laplace: {
                const double u = rng.uniform_open() - 0.5;
                const double magnitude = -scale_ * std::log1p(-2.0 * std::abs(u));
                return u < 0.0 ? -magnitude : magnitude;
            }
            case NoiseKind::bounded_uniform:
                return scale_ * (2.0 * rng.uniform_open() - 1.0);
            case NoiseKind::gaussian_clipped: {
                const double z = std::clamp(rng.normal(), -clip_, clip_);
                return scale_ * z;
            }
        }
        return 0.0;
    }

    void sample_into(RngStream& rng, std::span<double> out) const {
        for (double& value : out) value = draw_coordinate(rng);
    }

    Vec sample(RngStream& rng) const {
        Vec v(dim_);
        for (int i = 0; i < dim_; ++i) v(i) = draw_coordinate(rng);
        return v;
    }

    /// Closed-form coordinate union bound: P(||M||_2 > u) <= d max_i P(|M_i| > u / sqrt d).
    TailConstants certified() const {
        const double d = static_cast<double>(dim_);
        const double root_d = std::sqrt(d);
        if (scale_ == 0.0) return {1.0, std::numeric_limits<double>::infinity(), 0.0};
        switch (kind_) {
            case NoiseKind::laplace:
                // P(|M_i| > v) = exp(-v / scale)
                return {d, 1.0 / (scale_ * root_d), 0.0};
            case NoiseKind::bounded_uniform: {
                // ||M|| <= scale sqrt d surely; any constants work beyond that radius
                const double radius = scale_ * root_d;
                return {std::numbers::e, 1.0 / radius, radius};
            }
            case NoiseKind::gaussian_clipped:
                // 2 Phi^c(v) <= exp(-v^2 / 2) <= exp(1/2 - v); clipping only lowers the tail
                return {d * std::exp(0.5), 1.0 / (scale_ * root_d), 0.0};
        }
        return {};
    }

    TailConstants constants() const { return declared_.value_or(certified()); }

private:
    NoiseKind kind_ = NoiseKind::laplace;
    double scale_ = 0.0;
    int dim_ = 1;
    double clip_ = 6.0;
    std::optional<TailConstants> declared_;
};

inline Vec sample(const NoiseModel& m, RngStream& rng) { return m.sample(rng); }

inline TailConstants tail_constants(const NoiseModel& m) { return m.constants(); }

struct TailRow {
    double u = 0.0;
    bool applicable = false;  // u > u_L
    std::size_t exceedances = 0;
    double p_hat = 0.0;
    double upper99 = 0.0;
    double bound = 0.0;
    bool pass = true;
};

struct TailReport {
    std::size_t draws = 0;
    double margin = 0.0;
    TailConstants constants;
    std::vector<TailRow> rows;

    bool pass() const {
        for (const auto& r : rows) {
            if (!r.pass) return false;
        }
        return true;
    }
};

/// Empirical tail check: the 99% upper confidence bound of P(||M|| > u) must
/// not exceed (1 + margin) c1 exp(-c2 u) at every u > u_L.
inline TailReport verify_tail(const NoiseModel& m, std::size_t draws, std::span<const double> u_grid,
                              std::uint64_t seed, double margin = 0.05) {
    if (draws < 10000) throw Error(ErrorCode::ParameterOutOfRange, "verify_tail needs at least 1e4 draws");
    TailReport report;
    report.draws = draws;
    report.margin = margin;
    report.constants = m.constants();
    report.rows.resize(u_grid.size());
    for (std::size_t i = 0; i < u_grid.size(); ++i) report.rows[i].u = u_grid[i];

    RngStream rng(seed, 0);
    for (std::size_t k = 0; k < draws; ++k) {
        const double norm = m.sample(rng).norm();
        for (auto& row : report.rows) {
            if (norm > row.u) ++row.exceedances;
        }
    }
    for (auto& row : report.rows) {
        row.applicable = row.u > report.constants.u_L;
        row.p_hat = static_cast<double>(row.exceedances) / static_cast<double>(draws);
        row.upper99 = upper_confidence_99(row.exceedances, draws);
        row.bound = report.constants.bound(row.u);
        if (!row.applicable) {
            row.pass = true;
        } else if (row.bound == 0.0) {
            row.pass = row.exceedances == 0;  // certified impossible
        } else {
            row.pass = row.upper99 <= (1.0 + margin) * row.bound;
        }
    }
    return report;
}

}  // namespace ttsa
