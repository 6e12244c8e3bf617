#pragma once

// Closed-form bound quantities for min-l2 NTK interpolation: J_m(n, d), C_d,
// D(n, d, delta), the seven terms of the generalization bound, lower and upper
// bounds on min eig(H H^T) / p, the variance cap and the leading term of the
// kernel-regression comparison bound. Everything large is evaluated in log space.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include "ntklab/common.hpp"
#include "ntklab/ground_truth.hpp"
#include "ntklab/ntk_core.hpp"
#include "ntklab/sphere_geometry.hpp"

namespace ntklab {

/// Largest admissible m for a given n: ln n / ln(pi / 2).
inline double m_upper(std::size_t n) {
    return std::log(static_cast<double>(n)) / std::log(std::numbers::pi / 2.0);
}

inline double default_m(std::size_t n) { return std::min(2.0, m_upper(n)); }
inline constexpr double kDefaultQ = 4.0;

namespace detail {

inline void check_m(std::size_t n, double m) {
    if (n < 2) throw DomainError("bounds: n must be >= 2");
    const double hi = m_upper(n);
    if (!(m >= 1.0 && m <= hi * (1.0 + 1e-12)))
        throw DomainError("bounds: m = " + std::to_string(m) + " outside the valid interval [1, " +
                          std::to_string(hi) + "] (ln n / ln(pi/2))");
}

// log(1 + e^a)
inline double log1p_exp(double a) { return a > 30.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

}  // namespace detail

/// ln J_m(n, d) = (1.5d + 5.5) ln 2 + 0.5 d ln d + (2 + 1/m)(d - 1) ln n.
inline double log_j_m(std::size_t n, int d, double m) {
    detail::check_m(n, m);
    if (d < 2) throw DimensionError("j_m: d must be >= 2");
    const double dd = d;
    return (1.5 * dd + 5.5) * std::numbers::ln2 + 0.5 * dd * std::log(dd) +
           (2.0 + 1.0 / m) * (dd - 1.0) * std::log(static_cast<double>(n));
}

inline double j_m(std::size_t n, int d, double m) { return std::exp(log_j_m(n, d, m)); }

/// C_d = 2 sqrt 2 / B((d-1)/2, 1/2).
inline double c_d(int d) {
    if (d < 2) throw DimensionError("c_d: d must be >= 2");
    return 2.0 * std::numbers::sqrt2 / beta_fn(0.5 * (d - 1), 0.5);
}

struct DnddResult {
    double value = 0.0;
    double lower_bound = 0.0;  // 2^{-1.5d-5.5} d^{-0.5d} n^{-2d+1} delta^{d-1}
    double c_d = 0.0;
    bool lower_bound_holds = false;
};

/// D(n, d, delta) = 1/(16n) I_x((d-1)/2, 1/2) with
/// x = delta^2 / (n^4 C_d^2) (1 - delta^2 / (4 n^4 C_d^2)).
inline DnddResult d_ndd(std::size_t n, int d, double delta) {
    if (n < 1) throw DomainError("d_ndd: n must be >= 1");
    if (d < 2) throw DimensionError("d_ndd: d must be >= 2");
    if (!(delta > 0.0 && delta <= 2.0 / std::numbers::pi))
        throw DomainError("d_ndd: delta must lie in (0, 2/pi]");
    const double nn = static_cast<double>(n);
    DnddResult r;
    r.c_d = c_d(d);
    const double s = delta * delta / (nn * nn * nn * nn * r.c_d * r.c_d);
    const double x = s * (1.0 - s / 4.0);
    r.value = reg_inc_beta(std::clamp(x, 0.0, 1.0), 0.5 * (d - 1), 0.5) / (16.0 * nn);
    const double dd = d;
    r.lower_bound = std::exp(-(1.5 * dd + 5.5) * std::numbers::ln2 - 0.5 * dd * std::log(dd) +
                             (1.0 - 2.0 * dd) * std::log(nn) + (dd - 1.0) * std::log(delta));
    r.lower_bound_holds = r.value >= r.lower_bound * (1.0 - 1e-12);
    return r;
}

/// The seven terms of the generalization bound and its side condition.
struct TheoremTerms {
    std::array<double, 7> terms{};
    double log_p_threshold = 0.0;  // ln(6 J_m ln(4 n^{1+1/m}))
    bool side_condition = false;   // p >= 6 J_m ln(4 n^{1+1/m})
};

inline TheoremTerms theorem1_terms(std::size_t n, double p, int d, double m, double q, double g_inf,
                                   double g_l1, double eps_norm) {
    detail::check_m(n, m);
    if (d < 2) throw DimensionError("theorem terms: d must be >= 2");
    const double nn = static_cast<double>(n);
    if (static_cast<double>(d) > nn * nn * nn * nn) throw DomainError("theorem terms: requires d <= n^4");
    if (!(q >= 1.0)) throw DomainError("theorem terms: requires q >= 1");
    if (!(p >= 1.0)) throw DomainError("theorem terms: requires p >= 1");
    if (!(g_inf > 0.0) || !(g_l1 > 0.0)) throw DomainError("theorem terms: ||g||_inf and ||g||_1 must be positive");
    if (!(eps_norm >= 0.0)) throw DomainError("theorem terms: noise norm must be non-negative");

    const double lj = log_j_m(n, d, m);
    const double log_sqrt_jn = 0.5 * (lj + std::log(nn));
    const double e = 0.5 * (1.0 - 1.0 / q);
    const double lp = std::log(p);

    TheoremTerms t;
    t.terms[0] = std::exp(-e * std::log(nn));
    t.terms[1] = std::exp(detail::log1p_exp(log_sqrt_jn) - e * lp);
    t.terms[2] = eps_norm == 0.0 ? 0.0 : std::exp(log_sqrt_jn + std::log(eps_norm));
    t.terms[3] = std::exp(-std::exp(std::log(nn) / q) / (8.0 * g_inf * g_inf));
    t.terms[4] = std::exp(-std::exp(lp / q) / (8.0 * g_l1 * g_l1));
    t.terms[5] = std::exp(-std::exp(lp / q) / (8.0 * nn * g_l1 * g_l1));
    t.terms[6] = 4.0 / std::exp(std::log(nn) / m);
    t.log_p_threshold =
        std::log(6.0) + lj + std::log(std::log(4.0) + (1.0 + 1.0 / m) * std::log(nn));
    t.side_condition = lp >= t.log_p_threshold;
    return t;
}

/// 1 / (J_m(n, d) n).
inline double mineig_lower(std::size_t n, int d, double m) {
    return std::exp(-log_j_m(n, d, m) - std::log(static_cast<double>(n)));
}

/// (3 pi^2 / 8) ((d-1) B)^{2/(d-1)} n^{-2/(d-1)} + (3/4) ((d-1) B)^{1/(d-1)} n^{-1/(d-1)},
/// B = B((d-1)/2, 1/2); valid for n >= pi (d - 1).
inline double mineig_upper(std::size_t n, int d) {
    if (d < 2) throw DimensionError("mineig_upper: d must be >= 2");
    const double nn = static_cast<double>(n);
    if (nn < std::numbers::pi * (d - 1)) throw DomainError("mineig_upper: requires n >= pi (d - 1)");
    const double k = d - 1.0;
    const double base = k * beta_fn(0.5 * k, 0.5) / nn;
    return 3.0 * std::numbers::pi * std::numbers::pi / 8.0 * std::pow(base, 2.0 / k) +
           0.75 * std::pow(base, 1.0 / k);
}

/// sqrt(p) ||eps|| / sqrt(mineig).
inline double variance_cap(double p, double mineig, double eps_norm) {
    if (!(mineig > 0.0)) throw DomainError("variance_cap: minimum eigenvalue must be positive");
    return std::sqrt(p) * eps_norm / std::sqrt(mineig);
}

/// sqrt(2 y^T (H^infinity)^{-1} y / n).
inline double arora_leading_term(const Dataset& data) {
    const InfiniteWidthModel model(data);
    return std::sqrt(2.0 * model.quadratic_form() / static_cast<double>(data.size()));
}

struct BoundReport {
    std::size_t n = 0;
    double p = 0.0;
    int d = 0;
    double m = 0.0, q = 0.0;
    double log_j_m = 0.0;
    double j_m = 0.0;
    double c_d = 0.0;
    double d_ndd = 0.0;
    std::array<double, 7> terms{};
    double mineig_lower = 0.0;
    std::optional<double> mineig_upper;  // absent when n < pi (d - 1)
    double variance_cap = 0.0;           // cap at mineig = p * mineig_lower
    double p_threshold = 0.0;
    bool side_condition = false;
};

/// Evaluates every bound quantity at one hypothesis point. D uses delta = n^{-1/m}.
inline BoundReport make_bound_report(std::size_t n, double p, int d, double m, double q, double g_inf,
                                     double g_l1, double eps_norm) {
    BoundReport r;
    r.n = n;
    r.p = p;
    r.d = d;
    r.m = m;
    r.q = q;
    const TheoremTerms t = theorem1_terms(n, p, d, m, q, g_inf, g_l1, eps_norm);
    r.terms = t.terms;
    r.log_j_m = log_j_m(n, d, m);
    r.j_m = std::exp(r.log_j_m);
    r.c_d = c_d(d);
    const double delta = std::min(2.0 / std::numbers::pi, std::pow(static_cast<double>(n), -1.0 / m));
    r.d_ndd = d_ndd(n, d, delta).value;
    r.mineig_lower = mineig_lower(n, d, m);
    if (static_cast<double>(n) >= std::numbers::pi * (d - 1)) r.mineig_upper = mineig_upper(n, d);
    r.variance_cap = variance_cap(p, p * r.mineig_lower, eps_norm);
    r.p_threshold = std::exp(t.log_p_threshold);
    r.side_condition = t.side_condition;
    return r;
}

inline std::string summarize(const BoundReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << "n=" << r.n << " p=" << r.p << " d=" << r.d << " m=" << r.m << " q=" << r.q << "\n"
       << "  J_m=" << r.j_m << "  C_d=" << r.c_d << "  D=" << r.d_ndd << "\n"
       << "  terms:";
    for (std::size_t i = 0; i < r.terms.size(); ++i) os << " T" << (i + 1) << "=" << r.terms[i];
    os << "\n  mineig/p lower=" << r.mineig_lower << " upper=";
    if (r.mineig_upper) os << *r.mineig_upper;
    else os << "NA";
    os << "\n  variance cap=" << r.variance_cap << "  required p >= " << r.p_threshold
       << (r.side_condition ? " (satisfied)" : " (NOT satisfied)") << "\n";
    return os.str();
}

}  // namespace ntklab
