#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace ttsa {

/// Largest fast or slow dimension supported. Small vectors and matrices live
/// on the stack so that the inner recursion does not allocate.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

enum class ErrorCode {
    ParameterOutOfRange,
    IndexBeyondHorizon,
    NonFiniteInput,
    NonFiniteIterate,
    NonFiniteState,
    ClockOutOfRange,
    FlowUnavailable,
    FitFailed,
    HorizonExceeded,
    NoConditionedReplications,
    PlanInvalid,
    ConfigError,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ParameterOutOfRange: return "ParameterOutOfRange";
        case ErrorCode::IndexBeyondHorizon: return "IndexBeyondHorizon";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::NonFiniteIterate: return "NonFiniteIterate";
        case ErrorCode::NonFiniteState: return "NonFiniteState";
        case ErrorCode::ClockOutOfRange: return "ClockOutOfRange";
        case ErrorCode::FlowUnavailable: return "FlowUnavailable";
        case ErrorCode::FitFailed: return "FitFailed";
        case ErrorCode::HorizonExceeded: return "HorizonExceeded";
        case ErrorCode::NoConditionedReplications: return "NoConditionedReplications";
        case ErrorCode::PlanInvalid: return "PlanInvalid";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Library error. `index()` carries the step index for NonFiniteIterate and
/// is `npos` otherwise.
class Error : public std::runtime_error {
public:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    Error(ErrorCode code, const std::string& message, std::size_t index = npos)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), index_(index) {}

    ErrorCode code() const noexcept { return code_; }
    std::size_t index() const noexcept { return index_; }

private:
    ErrorCode code_;
    std::size_t index_;
};

inline Vec make_vec(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double value : values) v(i++) = value;
    return v;
}

inline Vec scalar_vec(double value) {
    Vec v(1);
    v(0) = value;
    return v;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
public:
    void add(double value) {
        const double t = sum_ + value;
        if (std::abs(sum_) >= std::abs(value)) {
            compensation_ += (sum_ - t) + value;
        } else {
            compensation_ += (value - t) + sum_;
        }
        sum_ = t;
    }

    double value() const { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

/// Spectral (operator 2-) norm by power iteration on M^T M.
inline double spectral_norm(const Mat& m, int max_iterations = 50, double tolerance = 1e-10) {
    if (m.size() == 0) return 0.0;
    if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
    const Mat gram = m.transpose() * m;
    // Start away from any symmetric subspace.
    Vec v(gram.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.618033988749895 * static_cast<double>(i + 1);
    v.normalize();
    double eigen_estimate = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
        Vec w = gram * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        w /= norm;
        const double next = w.dot(gram * w);
        v = w;
        if (std::abs(next - eigen_estimate) <= tolerance * std::abs(next)) {
            eigen_estimate = next;
            break;
        }
        eigen_estimate = next;
    }
    return std::sqrt(std::max(0.0, eigen_estimate));
}

/// SplitMix64 finaliser; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace ttsa
