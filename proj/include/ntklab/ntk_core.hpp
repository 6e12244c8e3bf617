#pragma once

// The linearized two-layer ReLU model (no bias):
//
//   h_{V0,x}[j] = 1{x^T V0[j] > 0} x^T,        f(x) = h_{V0,x} dV,
//
// its Gram matrix H H^T, the minimum-norm interpolator H^T (H H^T)^{-1} y and
// the infinite-width kernel x^T z (pi - arccos x^T z) / (2 pi).
//
// H (n x dp) is never formed. Activation patterns are stored as bitsets, so
// Gram entries are X_i^T X_k times an exact popcount, and primal vectors are
// stored as d x p matrices whose column j is block j.

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/common.hpp"
#include "ntklab/sphere_geometry.hpp"

namespace ntklab {

// ---------------------------------------------------------------------------
// Neuron bank and dataset
// ---------------------------------------------------------------------------

/// p unit-norm bottom-layer directions (columns) and fixed top-layer signs.
struct NeuronBank {
    Eigen::MatrixXd directions;      // d x p
    std::vector<int> top_signs;      // +1 / -1, length p
    std::uint64_t seed = 0;

    std::size_t size() const { return static_cast<std::size_t>(directions.cols()); }
    int dim() const { return static_cast<int>(directions.rows()); }
};

/// p i.i.d. uniform directions and i.i.d. uniform signs; deterministic in seed.
inline NeuronBank build_bank(std::size_t p, int d, std::uint64_t seed) {
    if (p < 1) throw DomainError("build_bank: p must be >= 1");
    if (d < 2) throw DimensionError("build_bank: d must be >= 2");
    NeuronBank bank;
    bank.seed = seed;
    RandomSource dir_rng(derive_seed(seed, stream::bank_directions));
    bank.directions = sample_unit_columns(d, p, dir_rng);

    // Exact duplicates are redrawn; they have probability zero but would make
    // two neurons parallel.
    std::set<std::vector<double>> seen;
    for (Eigen::Index j = 0; j < bank.directions.cols(); ++j) {
        for (;;) {
            std::vector<double> key(bank.directions.col(j).data(),
                                    bank.directions.col(j).data() + d);
            if (seen.insert(std::move(key)).second) break;
            bank.directions.col(j) = sample_unit(d, dir_rng).coords();
        }
    }

    RandomSource sign_rng(derive_seed(seed, stream::bank_signs));
    bank.top_signs.resize(p);
    for (auto& s : bank.top_signs) s = sign_rng.coin() ? 1 : -1;
    return bank;
}

/// Training set y = F(X) + eps with unit-norm inputs stored as columns.
struct Dataset {
    Eigen::MatrixXd inputs;  // d x n
    Eigen::VectorXd truth;
    Eigen::VectorXd noise;
    Eigen::VectorXd labels;

    static Dataset make(Eigen::MatrixXd inputs, Eigen::VectorXd truth, Eigen::VectorXd noise) {
        if (inputs.cols() < 1) throw DomainError("Dataset: need at least one sample");
        if (inputs.rows() < 2) throw DimensionError("Dataset: d must be >= 2");
        if (truth.size() != inputs.cols() || noise.size() != inputs.cols())
            throw DimensionError("Dataset: truth/noise length must equal the number of inputs");
        for (Eigen::Index i = 0; i < inputs.cols(); ++i)
            if (std::abs(inputs.col(i).norm() - 1.0) > UnitVector::kNormTolerance)
                throw DomainError("Dataset: inputs must be unit vectors");
        Dataset data;
        data.inputs = std::move(inputs);
        data.truth = std::move(truth);
        data.noise = std::move(noise);
        data.labels = data.truth + data.noise;
        return data;
    }

    static Dataset noiseless(Eigen::MatrixXd inputs, Eigen::VectorXd truth) {
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(truth.size());
        return make(std::move(inputs), std::move(truth), std::move(zero));
    }

    std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
    int dim() const { return static_cast<int>(inputs.rows()); }
    UnitVector input(std::size_t i) const {
        return UnitVector::from_unit(inputs.col(static_cast<Eigen::Index>(i)));
    }

    /// Same inputs with the labels replaced.
    Dataset with_noise(const Eigen::VectorXd& new_noise) const {
        return make(inputs, truth, new_noise);
    }
};

// ---------------------------------------------------------------------------
// Activation patterns
// ---------------------------------------------------------------------------

/// Row i holds the bits 1{X_i^T V0[j] > 0} over neurons j.
class ActivationMatrix {
public:
    static constexpr Eigen::Index kChunk = 4096;

    ActivationMatrix(const NeuronBank& bank, const Eigen::MatrixXd& inputs)
        : rows_(static_cast<std::size_t>(inputs.cols())),
          neurons_(bank.size()),
          words_((neurons_ + 63) / 64),
          bits_(rows_ * words_, 0) {
        if (inputs.rows() != bank.dim())
            throw DimensionError("activation: input dimension does not match the bank");
        const Eigen::Index p = bank.directions.cols();
        for (Eigen::Index start = 0; start < p; start += kChunk) {
            const Eigen::Index len = std::min(kChunk, p - start);
            const Eigen::MatrixXd dots =
                inputs.transpose() * bank.directions.middleCols(start, len);
            for (Eigen::Index j = 0; j < len; ++j) {
                const std::size_t neuron = static_cast<std::size_t>(start + j);
                const std::uint64_t mask = std::uint64_t{1} << (neuron % 64);
                for (std::size_t i = 0; i < rows_; ++i)
                    if (dots(static_cast<Eigen::Index>(i), j) > 0.0)
                        bits_[i * words_ + neuron / 64] |= mask;
            }
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t neurons() const { return neurons_; }

    bool active(std::size_t i, std::size_t j) const {
        return (bits_[i * words_ + j / 64] >> (j % 64)) & 1U;
    }

    /// Number of neurons active on both rows i and k.
    std::int64_t overlap(std::size_t i, std::size_t k) const {
        const std::uint64_t* a = &bits_[i * words_];
        const std::uint64_t* b = &bits_[k * words_];
        std::int64_t count = 0;
        for (std::size_t w = 0; w < words_; ++w) count += std::popcount(a[w] & b[w]);
        return count;
    }

    /// Calls fn(j) for every neuron active on row i, in increasing j.
    template <typename F>
    void for_each_active(std::size_t i, F&& fn) const {
        const std::uint64_t* row = &bits_[i * words_];
        for (std::size_t w = 0; w < words_; ++w) {
            std::uint64_t word = row[w];
            while (word != 0) {
                const int bit = std::countr_zero(word);
                fn(w * 64 + static_cast<std::size_t>(bit));
                word &= word - 1;
            }
        }
    }

private:
    std::size_t rows_, neurons_, words_;
    std::vector<std::uint64_t> bits_;
};

/// |{j : z^T V0[j] > 0 and x^T V0[j] > 0}|.
inline std::int64_t activation_count(const NeuronBank& bank, const UnitVector& z,
                                     const UnitVector& x) {
    z.require_same_dim(x);
    if (z.dim() != bank.dim()) throw DimensionError("activation_count: bank dimension mismatch");
    const Eigen::VectorXd dz = bank.directions.transpose() * z.coords();
    const Eigen::VectorXd dx = bank.directions.transpose() * x.coords();
    std::int64_t count = 0;
    for (Eigen::Index j = 0; j < dz.size(); ++j) count += (dz(j) > 0.0 && dx(j) > 0.0);
    return count;
}

// ---------------------------------------------------------------------------
// Gram matrices
// ---------------------------------------------------------------------------

struct GramMatrix {
    Eigen::MatrixXd entries;  // n x n, symmetric PSD
    std::size_t p = 0;
};

inline GramMatrix gram(const ActivationMatrix& act, const Eigen::MatrixXd& inputs) {
    const std::size_t n = act.rows();
    GramMatrix g;
    g.p = act.neurons();
    g.entries = inputs.transpose() * inputs;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            const double c = static_cast<double>(act.overlap(i, k));
            const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(k);
            const double v = (i == k ? 1.0 : g.entries(a, b)) * c;
            g.entries(a, b) = v;
            g.entries(b, a) = v;
        }
    }
    return g;
}

/// H H^T with entries X_i^T X_k |C_{X_i, X_k}|.
inline GramMatrix gram(const NeuronBank& bank, const Dataset& data) {
    return gram(ActivationMatrix(bank, data.inputs), data.inputs);
}

/// Infinite-width kernel as a function of the cosine between x and z.
inline double kernel_inf(double cos_angle) {
    const double t = clamp_unit(cos_angle);
    return t * (std::numbers::pi - std::acos(t)) / (2.0 * std::numbers::pi);
}

namespace detail {

// Angle between unit vectors; near-parallel pairs use the chord length.
inline double unit_angle(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& z,
                         double t) {
    if (t > 0.9) return 2.0 * std::asin(std::min(1.0, 0.5 * (x - z).norm()));
    if (t < -0.9) return std::numbers::pi - 2.0 * std::asin(std::min(1.0, 0.5 * (x + z).norm()));
    return std::acos(clamp_unit(t));
}

inline double kernel_from(double t, double angle) {
    return clamp_unit(t) * (std::numbers::pi - angle) / (2.0 * std::numbers::pi);
}

}  // namespace detail

inline double kernel_inf(const UnitVector& x, const UnitVector& z) {
    x.require_same_dim(z);
    const double t = x.dot(z);
    return detail::kernel_from(t, detail::unit_angle(x.coords(), z.coords(), t));
}

/// Kernel matrix between the columns of a (d x m) and b (d x k).
inline Eigen::MatrixXd kernel_inf_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd k = a.transpose() * b;
    for (Eigen::Index c = 0; c < k.cols(); ++c)
        for (Eigen::Index r = 0; r < k.rows(); ++r)
            k(r, c) = detail::kernel_from(k(r, c), detail::unit_angle(a.col(r), b.col(c), k(r, c)));
    return k;
}

/// H^infinity for the training inputs.
inline Eigen::MatrixXd gram_inf(const Dataset& data) {
    Eigen::MatrixXd k = kernel_inf_matrix(data.inputs, data.inputs);
    k.diagonal().setConstant(0.5);
    return k;
}

// ---------------------------------------------------------------------------
// Feature-space operators
// ---------------------------------------------------------------------------

/// H^T a as a d x p matrix: block j = sum_i a_i 1{X_i^T V0[j] > 0} X_i.
inline Eigen::MatrixXd features_transpose_apply(const ActivationMatrix& act,
                                                const Eigen::MatrixXd& inputs,
                                                const Eigen::VectorXd& coeffs) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(inputs.rows(), static_cast<Eigen::Index>(act.neurons()));
    for (std::size_t i = 0; i < act.rows(); ++i) {
        const double a = coeffs(static_cast<Eigen::Index>(i));
        if (a == 0.0) continue;
        const Eigen::VectorXd scaled = a * inputs.col(static_cast<Eigen::Index>(i));
        act.for_each_active(i, [&](std::size_t j) { out.col(static_cast<Eigen::Index>(j)) += scaled; });
    }
    return out;
}

/// H dv for a primal vector stored as d x p blocks.
inline Eigen::VectorXd features_apply(const ActivationMatrix& act, const Eigen::MatrixXd& inputs,
                                      const Eigen::MatrixXd& primal) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(act.rows()));
    for (std::size_t i = 0; i < act.rows(); ++i) {
        Eigen::VectorXd block_sum = Eigen::VectorXd::Zero(inputs.rows());
        act.for_each_active(i, [&](std::size_t j) { block_sum += primal.col(static_cast<Eigen::Index>(j)); });
        out(static_cast<Eigen::Index>(i)) = inputs.col(static_cast<Eigen::Index>(i)).dot(block_sum);
    }
    return out;
}

/// h_{V0,x} dv for every column x of `points`.
inline Eigen::VectorXd linear_model_outputs(const NeuronBank& bank, const Eigen::MatrixXd& primal,
                                            const Eigen::MatrixXd& points) {
    if (points.rows() != bank.dim() || primal.rows() != bank.dim() ||
        primal.cols() != bank.directions.cols())
        throw DimensionError("linear model evaluation: dimension mismatch");
    constexpr Eigen::Index kChunk = 2048;
    const Eigen::Index p = bank.directions.cols();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(points.cols());
    for (Eigen::Index start = 0; start < p; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, p - start);
        const Eigen::MatrixXd gate = points.transpose() * bank.directions.middleCols(start, len);
        const Eigen::MatrixXd value = points.transpose() * primal.middleCols(start, len);
        out += (gate.array() > 0.0).select(value, 0.0).rowwise().sum();
    }
    return out;
}

/// Largest eigenvalue estimate of a symmetric PSD matrix by power iteration.
inline double power_iteration(const Eigen::MatrixXd& m, int iterations = 20) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()).normalized();
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        const Eigen::VectorXd w = m * v;
        lambda = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
    }
    return std::max(lambda, (m * v).norm());
}

// ---------------------------------------------------------------------------
// Minimum-norm interpolation
// ---------------------------------------------------------------------------

/// Dual and primal form of the minimum-norm interpolator.
class DualModel {
public:
    DualModel(const NeuronBank& bank, Eigen::VectorXd alpha, Eigen::MatrixXd primal, double gram_cond)
        : bank_(&bank), alpha_(std::move(alpha)), primal_(std::move(primal)), gram_cond_(gram_cond) {}

    const Eigen::VectorXd& alpha() const { return alpha_; }
    /// d x p; column j is block j of dV.
    const Eigen::MatrixXd& primal() const { return primal_; }
    const NeuronBank& bank() const { return *bank_; }
    double gram_condition() const { return gram_cond_; }

    double predict(const UnitVector& x) const {
        if (x.dim() != bank_->dim()) throw DimensionError("predict: dimension mismatch");
        return linear_model_outputs(*bank_, primal_, x.coords())(0);
    }

    Eigen::VectorXd predict_many(const Eigen::MatrixXd& points) const {
        return linear_model_outputs(*bank_, primal_, points);
    }

private:
    const NeuronBank* bank_;
    Eigen::VectorXd alpha_;
    Eigen::MatrixXd primal_;
    double gram_cond_;
};

/// Factorized Gram context for one (bank, inputs) pair. Solves for any label
/// vector reuse the factorization. The bank must outlive the solver and any
/// model it returns.
class MinNormSolver {
public:
    static constexpr double kRelativePivot = 1e-10;

    /// With `pseudo_inverse_fallback`, a singular Gram matrix is inverted on its
    /// numerical range instead of raising RankDeficiencyError; the result is then
    /// the minimum-norm least-squares solution (the limit of GD from zero).
    MinNormSolver(const NeuronBank& bank, const Dataset& data, bool pseudo_inverse_fallback = false)
        : MinNormSolver(bank, data.inputs, pseudo_inverse_fallback) {}

    MinNormSolver(const NeuronBank& bank, const Eigen::MatrixXd& inputs, bool pseudo_inverse_fallback = false)
        : bank_(&bank), inputs_(inputs), act_(bank, inputs), gram_(ntklab::gram(act_, inputs)) {
        factorize(pseudo_inverse_fallback);
    }

    const GramMatrix& gram() const { return gram_; }
    const ActivationMatrix& activations() const { return act_; }
    const Eigen::MatrixXd& inputs() const { return inputs_; }
    std::size_t n() const { return static_cast<std::size_t>(inputs_.cols()); }
    bool jittered() const { return jittered_; }
    /// True when the pseudo-inverse fallback was used.
    bool rank_deficient() const { return pinv_.has_value(); }
    std::size_t rank() const { return rank_; }

    /// Ratio of extreme LDL^T pivots; a cheap condition diagnostic.
    double condition_estimate() const { return cond_; }

    Eigen::VectorXd dual(const Eigen::VectorXd& y) const {
        if (static_cast<std::size_t>(y.size()) != n())
            throw DimensionError("solve: label vector length does not match the dataset");
        return solve_gram(y);
    }

    DualModel solve(const Eigen::VectorXd& y) const {
        Eigen::VectorXd alpha = dual(y);
        Eigen::MatrixXd primal = features_transpose_apply(act_, inputs_, alpha);
        return DualModel(*bank_, std::move(alpha), std::move(primal), cond_);
    }

    /// h_{V0,x} H^T (H H^T)^{-1} eps.
    double variance_term(const UnitVector& x, const Eigen::VectorXd& eps) const {
        return solve(eps).predict(x);
    }

    /// ||(P - I) dv||_2 with P the orthogonal projector onto the row space of H.
    double projection_residual(const Eigen::MatrixXd& dv_star) const {
        if (dv_star.rows() != bank_->dim() || dv_star.cols() != bank_->directions.cols())
            throw DimensionError("projection_residual: dv* must be d x p");
        const Eigen::VectorXd beta = solve_gram(features_apply(act_, inputs_, dv_star));
        return (features_transpose_apply(act_, inputs_, beta) - dv_star).norm();
    }

    /// Smallest eigenvalue of H H^T (dense symmetric eigensolver).
    double min_eigenvalue() const {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_.entries, Eigen::EigenvaluesOnly);
        return es.eigenvalues()(0);
    }

private:
    static std::size_t estimate_rank(const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
        std::size_t rank = 0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
            rank += es.eigenvalues()(i) > kRelativePivot * top;
        return rank;
    }

    bool try_factorize(const Eigen::MatrixXd& m) {
        ldlt_.compute(m);
        if (ldlt_.info() != Eigen::Success) return false;
        const Eigen::VectorXd d = ldlt_.vectorD();
        const double dmax = d.maxCoeff();
        const double dmin = d.minCoeff();
        if (!(dmax > 0.0) || !(dmin > kRelativePivot * dmax)) return false;
        cond_ = dmax / dmin;
        return true;
    }

    void factorize(bool pseudo_inverse_fallback) {
        rank_ = static_cast<std::size_t>(gram_.entries.rows());
        if (try_factorize(gram_.entries)) return;
        const double n = static_cast<double>(gram_.entries.rows());
        Eigen::MatrixXd jittered = gram_.entries;
        jittered.diagonal().array() += 1e-12 * gram_.entries.trace() / n;
        if (try_factorize(jittered)) {
            jittered_ = true;
            return;
        }
        if (!pseudo_inverse_fallback)
            throw RankDeficiencyError("Gram matrix H H^T is numerically singular",
                                      estimate_rank(gram_.entries),
                                      static_cast<std::size_t>(gram_.entries.rows()));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_.entries);
        const Eigen::VectorXd& ev = es.eigenvalues();
        const double cut = kRelativePivot * ev.cwiseAbs().maxCoeff();
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
        rank_ = 0;
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            if (ev(i) > cut) {
                inv(i) = 1.0 / ev(i);
                ++rank_;
            }
        pinv_ = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
        cond_ = std::numeric_limits<double>::infinity();
    }

    Eigen::VectorXd solve_gram(const Eigen::VectorXd& rhs) const {
        if (pinv_) return *pinv_ * rhs;
        return ldlt_.solve(rhs);
    }

    const NeuronBank* bank_;
    Eigen::MatrixXd inputs_;
    ActivationMatrix act_;
    GramMatrix gram_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    std::optional<Eigen::MatrixXd> pinv_;
    std::size_t rank_ = 0;
    double cond_ = std::numeric_limits<double>::infinity();
    bool jittered_ = false;
};

/// Delta V^{l2} = H^T (H H^T)^{-1} y.
inline DualModel solve_min_norm(const NeuronBank& bank, const Dataset& data) {
    return MinNormSolver(bank, data).solve(data.labels);
}

inline double variance_term(const NeuronBank& bank, const Dataset& data, const UnitVector& x,
                            const Eigen::VectorXd& eps) {
    return MinNormSolver(bank, data).variance_term(x, eps);
}

inline double projection_residual(const NeuronBank& bank, const Dataset& data,
                                  const Eigen::MatrixXd& dv_star) {
    return MinNormSolver(bank, data).projection_residual(dv_star);
}

// ---------------------------------------------------------------------------
// Gradient descent on the linear model
// ---------------------------------------------------------------------------

struct GdResult {
    Eigen::MatrixXd primal;  // d x p
    Eigen::VectorXd dual;    // primal = H^T dual
    std::size_t steps = 0;
    double step_size = 0.0;
    double residual_norm = 0.0;
};

/// Default GD step: reciprocal of a 20-step power-iteration estimate of the
/// largest Gram eigenvalue.
inline double default_gd_step(const GramMatrix& g) {
    const double top = power_iteration(g.entries, 20);
    if (!(top > 0.0)) throw DomainError("default_gd_step: Gram matrix is zero");
    return 1.0 / top;
}

/// Full-batch GD on the training MSE of the linear model from dV = 0:
///   dV_{k+1} = dV_k - gamma sum_i (H_i dV_k - y_i) H_i^T.
/// Iterates stay in the row space, so the recursion runs on dual coefficients
/// (dV_k = H^T a_k, a_{k+1} = a_k - gamma (G a_k - y)) and the primal is
/// materialized once at the end. Stops early when the residual norm drops to
/// `tolerance`.
inline GdResult gd_train_ntk(const NeuronBank& bank, const Dataset& data, std::size_t steps,
                             std::optional<double> step_size = std::nullopt,
                             double tolerance = 0.0) {
    const ActivationMatrix act(bank, data.inputs);
    const GramMatrix g = gram(act, data.inputs);
    const double gamma = step_size.value_or(default_gd_step(g));
    if (!(gamma > 0.0)) throw DomainError("gd_train_ntk: step size must be positive");

    const Eigen::VectorXd& y = data.labels;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(y.size());
    Eigen::VectorXd r = -y;  // G a - y
    double last = r.norm();
    int increases = 0;
    std::size_t k = 0;
    for (; k < steps && last > tolerance; ++k) {
        a -= gamma * r;
        r = g.entries * a - y;
        const double now = r.norm();
        if (!std::isfinite(now)) throw DivergenceError("gd_train_ntk: residual is not finite");
        increases = now > last ? increases + 1 : 0;
        if (increases >= 10)
            throw DivergenceError("gd_train_ntk: residual increased for 10 consecutive steps at step size " +
                                  std::to_string(gamma));
        last = now;
    }
    GdResult out;
    out.dual = a;
    out.primal = features_transpose_apply(act, data.inputs, a);
    out.steps = k;
    out.step_size = gamma;
    out.residual_norm = last;
    return out;
}

}  // namespace ntklab
