#pragma once

// Target functions: Fourier mixtures on the circle, axis polynomials and axis
// harmonics, convolved functions f_g(x) = E_z[k(x, z) g(z)], pseudo ground
// truths f^g_{V0} and their parameterization dV*, the infinite-width limit
// predictor and the biased-ReLU cube decomposition.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/common.hpp"
#include "ntklab/harmonics.hpp"
#include "ntklab/ntk_core.hpp"
#include "ntklab/sphere_geometry.hpp"

namespace ntklab {

/// A point estimate with its Monte-Carlo standard error (0 when exact).
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

inline constexpr std::size_t kDefaultMcSamples = 200000;
inline constexpr std::size_t kMcChunk = 4096;

// ---------------------------------------------------------------------------
// g functions
// ---------------------------------------------------------------------------

struct ConstantG {
    double c = 0.0;
};

struct DiracAtom {
    UnitVector z;
    double weight;
};

struct DiracMixtureG {
    std::vector<DiracAtom> atoms;
    double total_weight() const {
        double s = 0.0;
        for (const auto& a : atoms) s += std::abs(a.weight);
        return s;
    }
};

struct CallableG {
    std::function<double(const UnitVector&)> evaluator;
    double sup_bound = 0.0;
};

using GFunction = std::variant<ConstantG, DiracMixtureG, CallableG>;

// ---------------------------------------------------------------------------
// Target specs
// ---------------------------------------------------------------------------

struct FourierTerm {
    int k = 0;
    double sin_coef = 0.0;
    double cos_coef = 0.0;
};

/// sum_k sin_coef sin(k theta) + cos_coef cos(k theta) on the circle.
struct FourierMixture {
    std::vector<FourierTerm> terms;

    /// sum over k of (sin k theta + cos k theta).
    static FourierMixture unit_sum(const std::vector<int>& ks) {
        FourierMixture m;
        for (int k : ks) m.terms.push_back({k, 1.0, 1.0});
        return m;
    }
};

struct AxisPolynomial {
    UnitVector a;
    int l = 0;
};

struct HarmonicAxisTarget {
    int l = 0;
    UnitVector axis;
};

struct ConvolvedG {
    GFunction g;
    int d = 2;
};

struct PseudoGT {
    GFunction g;
    const NeuronBank* bank = nullptr;
};

using GroundTruthSpec =
    std::variant<FourierMixture, AxisPolynomial, HarmonicAxisTarget, ConvolvedG, PseudoGT>;

inline FourierMixture figure1a_target() { return FourierMixture::unit_sum({0, 1, 2, 4}); }
inline FourierMixture figure1b_target() { return FourierMixture::unit_sum({3, 5, 7, 9}); }

namespace detail {

inline void require_dim(int expected, int got, const char* what) {
    if (expected != got)
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                             ", got " + std::to_string(got));
}

/// E[(z^T v)_+] for z uniform on S^{d-1} and any unit v.
inline double positive_part_mean(int d) {
    return std::exp(std::lgamma(0.5 * d) - std::lgamma(0.5 * (d + 1))) /
           (2.0 * std::sqrt(std::numbers::pi));
}

/// Chunked Monte-Carlo mean of fn(z) over uniform z. Chunk c draws from its
/// own sub-seed and partial sums are reduced in chunk order, so the result does
/// not depend on `threads`.
template <typename F>
Estimate monte_carlo(int d, std::size_t samples, std::uint64_t seed, std::size_t threads, F&& fn) {
    if (samples < 1) throw DomainError("Monte-Carlo estimate needs at least one sample");
    const std::size_t chunks = (samples + kMcChunk - 1) / kMcChunk;
    std::vector<double> sum(chunks, 0.0), sum_sq(chunks, 0.0);
    parallel_for(chunks, threads, [&](std::size_t c) {
        RandomSource src(derive_seed(seed, stream::monte_carlo, c));
        const std::size_t len = std::min(kMcChunk, samples - c * kMcChunk);
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double v = fn(sample_unit(d, src));
            s += v;
            s2 += v * v;
        }
        sum[c] = s;
        sum_sq[c] = s2;
    });
    double s = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        s += sum[c];
        s2 += sum_sq[c];
    }
    const double m = static_cast<double>(samples);
    const double mean = s / m;
    const double var = samples > 1 ? std::max(0.0, (s2 - m * mean * mean) / (m - 1.0)) : 0.0;
    return {mean, std::sqrt(var / m)};
}

inline int g_dimension(const GFunction& g, int fallback) {
    if (const auto* dm = std::get_if<DiracMixtureG>(&g); dm && !dm->atoms.empty())
        return dm->atoms.front().z.dim();
    return fallback;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// f_g, dV*, f^g_{V0}
// ---------------------------------------------------------------------------

/// f_g(x) = E_z[x^T z (pi - arccos x^T z) / (2 pi) g(z)].
/// Dirac mixtures and constants are exact (constants by colatitude quadrature);
/// callables use Monte-Carlo.
inline Estimate eval_f_g(const GFunction& g, const UnitVector& x,
                         std::size_t mc_samples = kDefaultMcSamples, std::uint64_t seed = 0,
                         std::size_t threads = 1) {
    return std::visit(
        [&](const auto& gg) -> Estimate {
            using T = std::decay_t<decltype(gg)>;
            if constexpr (std::is_same_v<T, DiracMixtureG>) {
                double s = 0.0;
                for (const auto& a : gg.atoms) s += a.weight * kernel_inf(x, a.z);
                return {s, 0.0};
            } else if constexpr (std::is_same_v<T, ConstantG>) {
                if (gg.c == 0.0) return {0.0, 0.0};
                const QuadratureRule rule = QuadratureRule::colatitude(x.dim());
                return {gg.c * rule.integrate([](double t) { return kernel_profile_angle(t); }), 0.0};
            } else {
                return detail::monte_carlo(x.dim(), mc_samples, seed, threads, [&](const UnitVector& z) {
                    return kernel_inf(x, z) * gg.evaluator(z);
                });
            }
        },
        g);
}

/// Parameterization of the pseudo ground truth:
///   block j = E_z[1{z^T V0[j] > 0} z g(z)] / p, returned as a d x p matrix.
struct DvStar {
    Eigen::MatrixXd blocks;
    double std_error = 0.0;  // largest per-entry standard error (0 when exact)
};

inline DvStar dv_star(const GFunction& g, const NeuronBank& bank,
                      std::size_t mc_samples = kDefaultMcSamples, std::uint64_t seed = 0) {
    const int d = bank.dim();
    const auto p = static_cast<double>(bank.size());
    DvStar out;
    out.blocks = Eigen::MatrixXd::Zero(d, bank.directions.cols());
    std::visit(
        [&](const auto& gg) {
            using T = std::decay_t<decltype(gg)>;
            if constexpr (std::is_same_v<T, DiracMixtureG>) {
                for (const auto& a : gg.atoms) {
                    detail::require_dim(d, a.z.dim(), "dv_star");
                    const Eigen::RowVectorXd dots = a.z.coords().transpose() * bank.directions;
                    for (Eigen::Index j = 0; j < dots.size(); ++j)
                        if (dots(j) > 0.0) out.blocks.col(j) += (a.weight / p) * a.z.coords();
                }
            } else if constexpr (std::is_same_v<T, ConstantG>) {
                // E[1{z^T v > 0} z] = v E[(z^T v)_+] for a unit v.
                out.blocks = (gg.c * detail::positive_part_mean(d) / p) * bank.directions;
            } else {
                if (mc_samples < 1) throw DomainError("dv_star: need at least one sample");
                Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(d, bank.directions.cols());
                const std::size_t chunks = (mc_samples + kMcChunk - 1) / kMcChunk;
                for (std::size_t c = 0; c < chunks; ++c) {
                    RandomSource src(derive_seed(seed, stream::monte_carlo, c));
                    const std::size_t len = std::min(kMcChunk, mc_samples - c * kMcChunk);
                    for (std::size_t s = 0; s < len; ++s) {
                        const UnitVector z = sample_unit(d, src);
                        const double gz = gg.evaluator(z);
                        const Eigen::RowVectorXd dots = z.coords().transpose() * bank.directions;
                        for (Eigen::Index j = 0; j < dots.size(); ++j) {
                            if (dots(j) > 0.0) {
                                const Eigen::VectorXd v = gz * z.coords();
                                out.blocks.col(j) += v;
                                sum_sq.col(j) += v.cwiseProduct(v);
                            }
                        }
                    }
                }
                const double m = static_cast<double>(mc_samples);
                out.blocks /= m;
                const Eigen::MatrixXd var =
                    ((sum_sq / m - out.blocks.cwiseProduct(out.blocks)).cwiseMax(0.0)) / m;
                out.std_error = std::sqrt(var.maxCoeff()) / p;
                out.blocks /= p;
            }
        },
        g);
    return out;
}

/// f^g_{V0}(x) = E_z[x^T z |C_{z,x}| / p g(z)].
inline Estimate eval_pseudo_gt(const GFunction& g, const NeuronBank& bank, const UnitVector& x,
                               std::size_t mc_samples = kDefaultMcSamples, std::uint64_t seed = 0,
                               std::size_t threads = 1) {
    detail::require_dim(bank.dim(), x.dim(), "eval_pseudo_gt");
    const auto p = static_cast<double>(bank.size());
    return std::visit(
        [&](const auto& gg) -> Estimate {
            using T = std::decay_t<decltype(gg)>;
            if constexpr (std::is_same_v<T, DiracMixtureG>) {
                double s = 0.0;
                for (const auto& a : gg.atoms)
                    s += a.weight * x.dot(a.z) * static_cast<double>(activation_count(bank, a.z, x)) / p;
                return {s, 0.0};
            } else if constexpr (std::is_same_v<T, ConstantG>) {
                const Eigen::RowVectorXd dots = x.coords().transpose() * bank.directions;
                const double relu_sum = dots.cwiseMax(0.0).sum();
                return {gg.c * detail::positive_part_mean(x.dim()) * relu_sum / p, 0.0};
            } else {
                const Eigen::RowVectorXd gate_x = x.coords().transpose() * bank.directions;
                return detail::monte_carlo(x.dim(), mc_samples, seed, threads, [&](const UnitVector& z) {
                    const Eigen::RowVectorXd gate_z = z.coords().transpose() * bank.directions;
                    const auto both = ((gate_x.array() > 0.0) && (gate_z.array() > 0.0)).count();
                    return x.dot(z) * static_cast<double>(both) / p * gg.evaluator(z);
                });
            }
        },
        g);
}

// ---------------------------------------------------------------------------
// Target evaluation
// ---------------------------------------------------------------------------

inline double eval_fourier(const FourierMixture& f, double theta) {
    double s = 0.0;
    for (const auto& t : f.terms) s += t.sin_coef * std::sin(t.k * theta) + t.cos_coef * std::cos(t.k * theta);
    return s;
}

/// Exact for every spec except callable g inside ConvolvedG / PseudoGT, which
/// use the default Monte-Carlo budget.
inline double eval_target(const GroundTruthSpec& spec, const UnitVector& x) {
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, FourierMixture>) {
                detail::require_dim(2, x.dim(), "Fourier mixture target");
                return eval_fourier(s, std::atan2(x[1], x[0]));
            } else if constexpr (std::is_same_v<T, AxisPolynomial>) {
                return std::pow(x.dot(s.a), s.l);
            } else if constexpr (std::is_same_v<T, HarmonicAxisTarget>) {
                if (x.dim() < 3) throw DimensionError("harmonic target: d must be >= 3");
                return harmonic_axis({s.l, x.dim()}, x.dot(s.axis));
            } else if constexpr (std::is_same_v<T, ConvolvedG>) {
                detail::require_dim(s.d, x.dim(), "convolved-g target");
                return eval_f_g(s.g, x).value;
            } else {
                if (s.bank == nullptr) throw DomainError("pseudo ground truth: no bank attached");
                return eval_pseudo_gt(s.g, *s.bank, x).value;
            }
        },
        spec);
}

/// Target values at every column of `points`.
inline Eigen::VectorXd eval_target_many(const GroundTruthSpec& spec, const Eigen::MatrixXd& points) {
    Eigen::VectorXd out(points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i)
        out(i) = eval_target(spec, UnitVector::from_unit(points.col(i)));
    return out;
}

/// sin/cos coefficients merged per frequency.
inline std::map<int, std::pair<double, double>> fourier_coefficients(const FourierMixture& f) {
    std::map<int, std::pair<double, double>> merged;
    for (const auto& t : f.terms) {
        if (t.k < 0) throw DomainError("Fourier mixture: frequencies must be non-negative");
        auto& c = merged[t.k];
        c.first += t.sin_coef;
        c.second += t.cos_coef;
    }
    return merged;
}

/// A frequency is learnable iff the kernel's Fourier coefficient there is nonzero.
inline bool fourier_frequency_learnable(int k) { return !classified_zero(fourier_ch_closed(k)); }

/// E_x[f^2] restricted to the non-learnable frequencies (odd k >= 3).
inline double fourier_nonlearnable_energy(const FourierMixture& f) {
    double e = 0.0;
    for (const auto& [k, c] : fourier_coefficients(f))
        if (!fourier_frequency_learnable(k)) e += 0.5 * (c.first * c.first + c.second * c.second);
    return e;
}

/// E[(x^T a)^{2l}] for x uniform on S^{d-1}.
inline double axis_even_moment(int l, int d) {
    return beta_fn(l + 0.5, 0.5 * (d - 1)) / beta_fn(0.5, 0.5 * (d - 1));
}

/// E_x[f(x)^2] under the uniform measure.
inline Estimate null_risk(const GroundTruthSpec& spec, int d = 2,
                          std::size_t mc_samples = kDefaultMcSamples, std::uint64_t seed = 0) {
    if (const auto* f = std::get_if<FourierMixture>(&spec)) {
        double s = 0.0;
        for (const auto& [k, c] : fourier_coefficients(*f)) {
            if (k == 0) s += c.second * c.second;
            else s += 0.5 * (c.first * c.first + c.second * c.second);
        }
        return {s, 0.0};
    }
    if (std::get_if<HarmonicAxisTarget>(&spec)) return {1.0, 0.0};
    if (const auto* a = std::get_if<AxisPolynomial>(&spec)) return {axis_even_moment(a->l, a->a.dim()), 0.0};
    if (const auto* c = std::get_if<ConvolvedG>(&spec)) d = c->d;
    if (const auto* pg = std::get_if<PseudoGT>(&spec); pg && pg->bank) d = pg->bank->dim();
    return detail::monte_carlo(d, mc_samples, seed, 1, [&](const UnitVector& x) {
        const double v = eval_target(spec, x);
        return v * v;
    });
}

// ---------------------------------------------------------------------------
// Infinite-width limit
// ---------------------------------------------------------------------------

/// Interpolator in the H^infinity kernel: f(x) = (1/n) sum_i k(x, X_i) g_i with
/// g = n (H^infinity)^{-1} y.
class InfiniteWidthModel {
public:
    InfiniteWidthModel(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels) : inputs_(inputs) {
        if (labels.size() != inputs.cols()) throw DimensionError("infinite-width model: label count mismatch");
        Eigen::MatrixXd k = kernel_inf_matrix(inputs, inputs);
        k.diagonal().setConstant(0.5);
        llt_.compute(k);
        const Eigen::VectorXd d = llt_.matrixLLT().diagonal();
        if (llt_.info() != Eigen::Success || !(d.minCoeff() > 1e-7 * d.maxCoeff()))
            throw RankDeficiencyError("infinite-width Gram matrix is numerically singular",
                                      static_cast<std::size_t>((d.array() > 1e-7 * d.maxCoeff()).count()),
                                      static_cast<std::size_t>(inputs.cols()));
        const double n = static_cast<double>(inputs.cols());
        Eigen::VectorXd w = llt_.solve(labels);
        for (int step = 0; step < 2; ++step) w += llt_.solve(labels - k * w);  // iterative refinement
        g_ = n * w;
        quad_ = labels.dot(w);
    }

    explicit InfiniteWidthModel(const Dataset& data) : InfiniteWidthModel(data.inputs, data.labels) {}

    /// g_{i, infinity}.
    const Eigen::VectorXd& weights() const { return g_; }
    /// y^T (H^infinity)^{-1} y.
    double quadratic_form() const { return quad_; }

    Eigen::VectorXd predict_many(const Eigen::MatrixXd& points) const {
        const double n = static_cast<double>(inputs_.cols());
        return kernel_inf_matrix(points, inputs_) * g_ / n;
    }

    double predict(const UnitVector& x) const { return predict_many(x.coords())(0); }

private:
    Eigen::MatrixXd inputs_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd g_;
    double quad_ = 0.0;
};

inline double f_inf_limit(const Dataset& data, const UnitVector& x) {
    return InfiniteWidthModel(data).predict(x);
}

// ---------------------------------------------------------------------------
// Biased-ReLU cube decomposition
// ---------------------------------------------------------------------------

struct PowerComponent {
    Eigen::VectorXd b;
    int power;
    double coef;
};

/// For x = [x_tilde; 1/sqrt(d)] and a = [a_tilde; a0]:
///   (x^T a)^3 = 1/4 (x^T b1)^4 - 1/4 (x^T b2)^4 + (3c - 3/2)(x^T b2)^2
///               + (3c^2 - 1)(x^T b2) + (c^3 - 1/4),
/// with b1 = [a_tilde; sqrt(d)], b2 = [a_tilde; 0], c = a0 / sqrt(d).
inline std::array<PowerComponent, 5> cube_decomposition(const Eigen::VectorXd& a_tilde, double a0, int d) {
    if (d < 2) throw DimensionError("cube_decomposition: d must be >= 2");
    if (a_tilde.size() != d - 1) throw DimensionError("cube_decomposition: a_tilde must have d - 1 entries");
    const double sd = std::sqrt(static_cast<double>(d));
    const double c = a0 / sd;
    Eigen::VectorXd b1(d), b2(d);
    b1 << a_tilde, sd;
    b2 << a_tilde, 0.0;
    return {{{b1, 4, 0.25},
             {b2, 4, -0.25},
             {b2, 2, 3.0 * c - 1.5},
             {b2, 1, 3.0 * c * c - 1.0},
             {b2, 0, c * c * c - 0.25}}};
}

inline double eval_components(const std::array<PowerComponent, 5>& parts, const Eigen::VectorXd& x) {
    double s = 0.0;
    for (const auto& part : parts) s += part.coef * std::pow(x.dot(part.b), part.power);
    return s;
}

}  // namespace ntklab
