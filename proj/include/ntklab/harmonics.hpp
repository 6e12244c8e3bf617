#pragma once

// Gegenbauer polynomials, axis-symmetric hyperspherical harmonics and the
// filter coefficients of the ReLU NTK kernel h(t) = t (pi - arccos t) / (2 pi).
//
// All integrals over S^{d-1} of axis-symmetric integrands reduce to the
// colatitude marginal with density proportional to sin^{d-2}(theta). Harmonics
// are normalized to unit L2 norm under the uniform probability measure, so the
// filter coefficients agree with the classical ones up to a positive constant.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <shared_mutex>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"
#include "ntklab/sphere_geometry.hpp"

namespace ntklab {

struct HarmonicIndex {
    int l = 0;  // degree
    int d = 3;  // ambient dimension
};

/// Coefficients smaller than this in magnitude are classified as zero.
inline constexpr double kZeroCoefficientThreshold = 1e-8;

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int count) {
    if (count < 1) throw DomainError("gauss_legendre: need at least one node");
    std::vector<double> nodes(count), weights(count);
    const int half = (count + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (count + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= count; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = count * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = -x;
        nodes[count - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[count - 1 - i] = w;
    }
    return {nodes, weights};
}

/// Quadrature for the colatitude marginal of the uniform probability measure on
/// S^{d-1}: nodes theta in [0, pi], weights proportional to sin^{d-2}(theta),
/// summing to one.
class QuadratureRule {
public:
    static constexpr int kDefaultNodes = 512;
    static constexpr int kMinNodes = 64;

    static QuadratureRule colatitude(int d, int node_count = kDefaultNodes) {
        if (d < 2) throw DimensionError("QuadratureRule: d must be >= 2");
        if (node_count < kMinNodes) throw DomainError("QuadratureRule: need at least 64 nodes");
        auto [u, w] = gauss_legendre(node_count);
        QuadratureRule rule;
        rule.dim_ = d;
        rule.theta_.resize(node_count);
        rule.cos_theta_.resize(node_count);
        rule.weights_.resize(node_count);
        double total = 0.0;
        for (int i = 0; i < node_count; ++i) {
            const double theta = 0.5 * std::numbers::pi * (u[i] + 1.0);
            rule.theta_[i] = theta;
            rule.cos_theta_[i] = std::cos(theta);
            rule.weights_[i] = w[i] * std::pow(std::sin(theta), d - 2);
            total += rule.weights_[i];
        }
        for (double& wi : rule.weights_) wi /= total;
        return rule;
    }

    int dim() const { return dim_; }
    std::size_t size() const { return theta_.size(); }
    const std::vector<double>& theta() const { return theta_; }
    const std::vector<double>& cos_theta() const { return cos_theta_; }
    const std::vector<double>& weights() const { return weights_; }

    /// Integrates f(theta) against the normalized colatitude marginal.
    template <typename F>
    double integrate(F&& f) const {
        double sum = 0.0;
        for (std::size_t i = 0; i < theta_.size(); ++i) sum += weights_[i] * f(theta_[i]);
        return sum;
    }

    void validate() const {
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw DomainError("QuadratureRule: negative weight");
            total += w;
        }
        if (theta_.size() < kMinNodes || std::abs(total - 1.0) > 1e-12)
            throw DomainError("QuadratureRule: rule is not a normalized colatitude rule");
    }

private:
    int dim_ = 0;
    std::vector<double> theta_, cos_theta_, weights_;
};

/// C_i^lambda(t) by forward three-term recursion.
inline double gegenbauer(int i, double lambda, double t) {
    if (!(lambda > 0.0)) throw DomainError("gegenbauer: lambda must be positive");
    if (i < 0) throw DomainError("gegenbauer: degree must be non-negative");
    if (i == 0) return 1.0;
    double c0 = 1.0, c1 = 2.0 * lambda * t;
    for (int k = 0; k + 2 <= i; ++k) {
        const double c2 = (2.0 * (lambda + k + 1) * t * c1 - (2.0 * lambda + k) * c0) / (k + 2);
        c0 = c1;
        c1 = c2;
    }
    return c1;
}

/// C_i^lambda(t) from the explicit alternating sum
///   sum_k (-1)^k Gamma(i-k+lambda) / (Gamma(lambda) k! (i-2k)!) (2t)^{i-2k}.
inline double gegenbauer_series(int i, double lambda, double t) {
    if (!(lambda > 0.0)) throw DomainError("gegenbauer_series: lambda must be positive");
    // c_0 = Gamma(i + lambda) / (Gamma(lambda) i!); c_k / c_{k-1} = -(i-2k+2)(i-2k+1) / (k (i-k+lambda)).
    const long double lam = lambda, x2 = 2.0L * t;
    long double c = 1.0L;
    for (int j = 0; j < i; ++j) c *= (lam + j) / (j + 1.0L);
    long double sum = 0.0L;
    for (int k = 0; 2 * k <= i; ++k) {
        if (k > 0) c *= -static_cast<long double>((i - 2 * k + 2) * (i - 2 * k + 1)) / (k * (i - k + lam));
        sum += c * std::pow(x2, i - 2 * k);
    }
    return static_cast<double>(sum);
}

namespace detail {

class HarmonicNormCache {
public:
    double get(int l, int d) {
        const auto key = std::make_pair(l, d);
        {
            std::shared_lock read(mutex_);
            if (auto it = norms_.find(key); it != norms_.end()) return it->second;
        }
        std::unique_lock write(mutex_);
        if (auto it = norms_.find(key); it != norms_.end()) return it->second;
        const QuadratureRule& rule = rule_for(d);
        const double lambda = 0.5 * (d - 2);
        double sq = 0.0;
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const double c = gegenbauer(l, lambda, rule.cos_theta()[i]);
            sq += rule.weights()[i] * c * c;
        }
        const double factor = 1.0 / std::sqrt(sq);
        norms_.emplace(key, factor);
        return factor;
    }

private:
    const QuadratureRule& rule_for(int d) {
        auto it = rules_.find(d);
        if (it == rules_.end())
            it = rules_.emplace(d, std::make_unique<QuadratureRule>(QuadratureRule::colatitude(d)))
                     .first;
        return *it->second;
    }

    std::shared_mutex mutex_;
    std::map<std::pair<int, int>, double> norms_;
    std::map<int, std::unique_ptr<QuadratureRule>> rules_;
};

inline HarmonicNormCache& harmonic_norm_cache() {
    static HarmonicNormCache cache;
    return cache;
}

}  // namespace detail

/// Positive factor N_l making N_l C_l^{(d-2)/2}(cos theta) orthonormal on S^{d-1}.
inline double harmonic_normalization(const HarmonicIndex& idx) {
    if (idx.d < 3)
        throw DimensionError("harmonics: d must be >= 3 (use fourier_ch_closed for d = 2)");
    if (idx.l < 0) throw DomainError("harmonics: degree must be non-negative");
    return detail::harmonic_norm_cache().get(idx.l, idx.d);
}

/// Axis-symmetric harmonic Xi_0^l evaluated at cos(theta) = x^T axis.
inline double harmonic_axis(const HarmonicIndex& idx, double cos_theta) {
    const double norm = harmonic_normalization(idx);
    return norm * gegenbauer(idx.l, 0.5 * (idx.d - 2), clamp_unit(cos_theta));
}

/// The NTK kernel profile as a function of the angle between x and z.
inline double kernel_profile_angle(double theta) {
    return std::cos(theta) * (std::numbers::pi - theta) / (2.0 * std::numbers::pi);
}

/// Degree-l filter coefficient of h, up to a fixed positive constant.
inline double c_h_coefficient(int l, int d, const QuadratureRule& rule) {
    rule.validate();
    if (rule.dim() != d) throw DimensionError("c_h_coefficient: rule built for another dimension");
    const HarmonicIndex idx{l, d};
    const double norm = harmonic_normalization(idx);
    const double lambda = 0.5 * (d - 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i)
        sum += rule.weights()[i] * kernel_profile_angle(rule.theta()[i]) *
               gegenbauer(l, lambda, rule.cos_theta()[i]);
    return norm * sum;
}

inline bool classified_zero(double coefficient) {
    return std::abs(coefficient) < kZeroCoefficientThreshold;
}

/// Closed-form complex Fourier coefficient c_h(k) of h on the circle (d = 2).
inline double fourier_ch_closed(int k) {
    const int a = k < 0 ? -k : k;
    if (a == 1) return 0.125;
    if (a % 2 == 1) return 0.0;
    const double kp = k + 1.0, km = k - 1.0;
    return (1.0 / (2.0 * std::numbers::pi * std::numbers::pi)) * (1.0 / (kp * kp) + 1.0 / (km * km));
}

/// (1/2pi) * integral over [-pi, pi] of h(theta) e^{-ik theta}, by Gauss-Legendre
/// on [0, pi] (h is even, so the coefficient is real).
inline double fourier_ch_quadrature(int k, int node_count = QuadratureRule::kDefaultNodes) {
    auto [u, w] = gauss_legendre(node_count);
    double sum = 0.0;
    for (int i = 0; i < node_count; ++i) {
        const double theta = 0.5 * std::numbers::pi * (u[i] + 1.0);
        sum += 0.5 * std::numbers::pi * w[i] * kernel_profile_angle(theta) * std::cos(k * theta);
    }
    return sum / std::numbers::pi;
}

/// Q(a, b) = integral of cos^a(theta) Xi_0^b over the sphere.
inline double q_moment(int a, int b, int d, const QuadratureRule& rule) {
    rule.validate();
    if (a < 0 || b < 0) throw DomainError("q_moment: a and b must be non-negative");
    if (rule.dim() != d) throw DimensionError("q_moment: rule built for another dimension");
    const double norm = harmonic_normalization({b, d});
    const double lambda = 0.5 * (d - 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double t = rule.cos_theta()[i];
        sum += rule.weights()[i] * std::pow(t, a) * gegenbauer(b, lambda, t);
    }
    return norm * sum;
}

/// Upper bound on the number of distinct sign patterns of k hyperplanes through
/// the origin in R^d restricted to the sphere.
inline std::uint64_t sign_pattern_bound(int d, int k) {
    if (d < 2 || k < 1) throw DomainError("sign_pattern_bound: need d >= 2 and k >= 1");
    if (k <= d) {
        if (k >= 64) throw DomainError("sign_pattern_bound: result overflows 64 bits");
        return std::uint64_t{1} << k;
    }
    // 2 * sum_{i<d} C(k-1, i)
    std::uint64_t total = 0, binom = 1;
    for (int i = 0; i < d; ++i) {
        total += binom;
        binom = binom * static_cast<std::uint64_t>(k - 1 - i) / static_cast<std::uint64_t>(i + 1);
    }
    return 2 * total;
}

}  // namespace ntklab
