#pragma once

// Uniform sampling on S^{d-1} and closed-form cap / hemisphere quantities.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "ntklab/common.hpp"

namespace ntklab {

/// A point on the unit sphere S^{d-1}, d >= 2.
class UnitVector {
public:
    static constexpr double kNormTolerance = 1e-12;

    /// Normalizes `v`. Throws on a zero vector or d < 2.
    static UnitVector normalized(const Eigen::VectorXd& v) {
        check_dim(v.size());
        const double norm = v.norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw DomainError("UnitVector: cannot normalize a zero or non-finite vector");
        UnitVector u;
        u.coords_ = v / norm;
        return u;
    }

    /// Wraps an already-normalized vector; the norm must be 1 within 1e-12.
    static UnitVector from_unit(const Eigen::VectorXd& v) {
        check_dim(v.size());
        if (std::abs(v.norm() - 1.0) > kNormTolerance)
            throw DomainError("UnitVector: norm deviates from 1 by more than 1e-12");
        UnitVector u;
        u.coords_ = v;
        return u;
    }

    /// Standard basis vector e_k (0-based) in R^d.
    static UnitVector basis(int d, int k) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
        v(k) = 1.0;
        return from_unit(v);
    }

    /// Point on the unit circle at angle theta.
    static UnitVector from_angle(double theta) {
        Eigen::Vector2d v(std::cos(theta), std::sin(theta));
        return normalized(v);
    }

    int dim() const { return static_cast<int>(coords_.size()); }
    const Eigen::VectorXd& coords() const { return coords_; }
    double operator[](int i) const { return coords_(i); }
    double dot(const UnitVector& other) const {
        require_same_dim(other);
        return coords_.dot(other.coords_);
    }
    void require_same_dim(const UnitVector& other) const {
        if (other.dim() != dim())
            throw DimensionError("dimension mismatch: " + std::to_string(dim()) + " vs " +
                                 std::to_string(other.dim()));
    }

private:
    UnitVector() = default;
    static void check_dim(Eigen::Index d) {
        if (d < 2) throw DimensionError("unit vectors need dimension d >= 2");
    }
    Eigen::VectorXd coords_;
};

inline double clamp_unit(double t) { return std::clamp(t, -1.0, 1.0); }

/// Uniform direction on S^{d-1} via a normalized standard-normal vector.
inline UnitVector sample_unit(int d, RandomSource& source) {
    if (d < 2) throw DimensionError("sample_unit: d must be >= 2");
    Eigen::VectorXd v(d);
    for (;;) {
        for (int i = 0; i < d; ++i) v(i) = source.gaussian();
        if (v.squaredNorm() > 0.0) break;
    }
    return UnitVector::normalized(v);
}

/// d x count matrix whose columns are i.i.d. uniform on S^{d-1}.
inline Eigen::MatrixXd sample_unit_columns(int d, std::size_t count, RandomSource& source) {
    if (d < 2) throw DimensionError("sample_unit_columns: d must be >= 2");
    Eigen::MatrixXd m(d, static_cast<Eigen::Index>(count));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double sq = 0.0;
        do {
            for (int i = 0; i < d; ++i) m(i, j) = source.gaussian();
            sq = m.col(j).squaredNorm();
        } while (!(sq > 0.0));
        m.col(j) /= std::sqrt(sq);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

inline double log_beta(double x, double y) {
    return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
}

/// B(x, y) = Gamma(x) Gamma(y) / Gamma(x + y).
inline double beta_fn(double x, double y) {
    if (!(x > 0.0) || !(y > 0.0)) throw DomainError("beta_fn: arguments must be positive");
    return std::exp(log_beta(x, y));
}

namespace detail {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
inline double inc_beta_fraction(double x, double a, double b) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw ConvergenceError("reg_inc_beta: continued fraction did not converge", h);
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("reg_inc_beta: x must lie in [0, 1]");
    if (!(a > 0.0) || !(b > 0.0)) throw DomainError("reg_inc_beta: a and b must be positive");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
    // Use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) where the fraction converges faster.
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::clamp(std::exp(log_front) * detail::inc_beta_fraction(x, a, b) / a, 0.0, 1.0);
    return std::clamp(1.0 - std::exp(log_front) * detail::inc_beta_fraction(1.0 - x, b, a) / b,
                      0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Caps and hemispheres
// ---------------------------------------------------------------------------

/// Fraction of S^{d-1} covered by a cap of chordal radius r (r <= sqrt 2).
inline double cap_fraction_radius(double r, int d) {
    if (d < 2) throw DimensionError("cap_fraction_radius: d must be >= 2");
    if (!(r >= 0.0 && r <= std::numbers::sqrt2))
        throw DomainError("cap_fraction_radius: r must lie in [0, sqrt(2)]");
    const double x = std::clamp(r * r * (1.0 - r * r / 4.0), 0.0, 1.0);
    return 0.5 * reg_inc_beta(x, 0.5 * (d - 1), 0.5);
}

/// Fraction of S^{d-1} covered by a cap of colatitude angle phi (phi <= pi/2).
inline double cap_fraction_angle(double phi, int d) {
    if (d < 2) throw DimensionError("cap_fraction_angle: d must be >= 2");
    if (!(phi >= 0.0 && phi <= std::numbers::pi / 2))
        throw DomainError("cap_fraction_angle: phi must lie in [0, pi/2]");
    const double s = std::sin(phi);
    return 0.5 * reg_inc_beta(std::clamp(s * s, 0.0, 1.0), 0.5 * (d - 1), 0.5);
}

/// Probability that a uniform direction has positive inner product with both x and z.
inline double hemispheres_overlap_fraction(double cos_angle) {
    return (std::numbers::pi - std::acos(clamp_unit(cos_angle))) / (2.0 * std::numbers::pi);
}

inline double hemispheres_overlap_fraction(const UnitVector& x, const UnitVector& z) {
    return hemispheres_overlap_fraction(x.dot(z));
}

}  // namespace ntklab
