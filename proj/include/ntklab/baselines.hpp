#pragma once

// Comparison models on the circle: min-l2 and min-l1 interpolation with
// Fourier features, and the closed-form test MSE of min-norm overfitting with
// Gaussian features.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/common.hpp"

namespace ntklab {

/// Feature matrix with columns [1, cos t, sin t, cos 2t, sin 2t, ...] truncated to p.
class FourierDesign {
public:
    FourierDesign(std::vector<double> angles, std::size_t num_features)
        : angles_(std::move(angles)), p_(num_features) {
        if (p_ < 1) throw DomainError("FourierDesign: need at least one feature");
        if (angles_.empty()) throw DomainError("FourierDesign: need at least one angle");
    }

    std::size_t rows() const { return angles_.size(); }
    std::size_t cols() const { return p_; }
    const std::vector<double>& angles() const { return angles_; }

    /// Frequency of column c.
    static std::size_t frequency(std::size_t c) { return (c + 1) / 2; }

    static Eigen::MatrixXd features(const std::vector<double>& angles, std::size_t p) {
        Eigen::MatrixXd a(static_cast<Eigen::Index>(angles.size()), static_cast<Eigen::Index>(p));
        for (std::size_t i = 0; i < angles.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            a(r, 0) = 1.0;
            for (std::size_t c = 1; c < p; ++c) {
                const double arg = static_cast<double>(frequency(c)) * angles[i];
                a(r, static_cast<Eigen::Index>(c)) = (c % 2 == 1) ? std::cos(arg) : std::sin(arg);
            }
        }
        return a;
    }

    Eigen::MatrixXd matrix() const { return features(angles_, p_); }

    /// Model output at new angles for coefficient vector beta.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& beta, const std::vector<double>& at) const {
        if (static_cast<std::size_t>(beta.size()) != p_) throw DimensionError("FourierDesign: coefficient length");
        return features(at, p_) * beta;
    }

private:
    std::vector<double> angles_;
    std::size_t p_;
};

namespace detail {

inline std::size_t numerical_rank(const Eigen::MatrixXd& a) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    return static_cast<std::size_t>(qr.rank());
}

// Column-pivoted QR of A^T = Q R P^T with thin Q (p x n). Avoids forming A A^T.
class RowSpace {
public:
    RowSpace(const Eigen::MatrixXd& a, const char* who) : n_(a.rows()) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a.transpose());
        qr.setThreshold(1e-10);
        if (qr.rank() < n_)
            throw RankDeficiencyError(std::string(who) + ": design rows are linearly dependent",
                                      static_cast<std::size_t>(qr.rank()), static_cast<std::size_t>(n_));
        q_ = qr.householderQ() * Eigen::MatrixXd::Identity(a.cols(), n_);
        r_ = qr.matrixR().topLeftCorner(n_, n_).template triangularView<Eigen::Upper>();
        perm_ = qr.colsPermutation();
    }

    /// Minimum-norm solution of A b = y.
    Eigen::VectorXd min_norm(const Eigen::VectorXd& y) const {
        const Eigen::VectorXd py = perm_.transpose() * y;
        return q_ * r_.transpose().triangularView<Eigen::Lower>().solve(py);
    }

    /// Orthogonal projection onto the row space of A.
    Eigen::VectorXd project_rows(const Eigen::VectorXd& v) const { return q_ * (q_.transpose() * v); }

    /// argmin_lambda ||A^T lambda - v||.
    Eigen::VectorXd dual_least_squares(const Eigen::VectorXd& v) const {
        return perm_ * r_.triangularView<Eigen::Upper>().solve(q_.transpose() * v);
    }

private:
    Eigen::Index n_;
    Eigen::MatrixXd q_;
    Eigen::MatrixXd r_;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> perm_;
};

}  // namespace detail

/// Minimum-norm interpolator A^T (A A^T)^{-1} y for p >= n; least squares
/// with full column rank otherwise.
inline Eigen::VectorXd fourier_min_l2(const FourierDesign& design, const Eigen::VectorXd& y) {
    if (static_cast<std::size_t>(y.size()) != design.rows()) throw DimensionError("fourier_min_l2: label length");
    const Eigen::MatrixXd a = design.matrix();
    if (design.cols() >= design.rows()) {
        return detail::RowSpace(a, "fourier_min_l2").min_norm(y);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (static_cast<std::size_t>(qr.rank()) < design.cols())
        throw RankDeficiencyError("fourier_min_l2: design is column rank deficient",
                                  static_cast<std::size_t>(qr.rank()), design.cols());
    return qr.solve(y);
}

struct L1Result {
    Eigen::VectorXd beta;
    std::size_t iterations = 0;
    double feasibility = 0.0;  // ||A beta - y||_2
    double objective = 0.0;    // ||beta||_1
    bool certified = false;    // optimality proven by a dual certificate
};

struct L1Options {
    double tol = 1e-6;
    std::size_t max_iter = 100000;
    double rho = 1.0;
    // ADMM iterations before switching to the exact simplex crossover; 0 disables it.
    std::size_t crossover_after = 500;
};

namespace detail {

// Solves on the support of z and checks optimality with a dual certificate:
// A_S^T lambda = sign(beta_S), ||A^T lambda||_inf <= 1 + tol. `dual_guess` is
// the ADMM estimate of A^T lambda.
inline std::optional<Eigen::VectorXd> polish_support(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                                     const Eigen::VectorXd& z, const Eigen::VectorXd& dual_guess,
                                                     const RowSpace& rows, double tol) {
    const Eigen::Index n = a.rows(), p = a.cols();
    const double zmax = z.lpNorm<Eigen::Infinity>();
    if (!(zmax > 0.0)) return std::nullopt;
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < p; ++j)
        if (std::abs(z(j)) > 1e-9 * zmax) idx.push_back(j);
    if (idx.empty() || static_cast<Eigen::Index>(idx.size()) > n) return std::nullopt;

    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd as(n, k);
    for (Eigen::Index c = 0; c < k; ++c) as.col(c) = a.col(idx[static_cast<std::size_t>(c)]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(as);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) return std::nullopt;
    const Eigen::VectorXd bs = qr.solve(y);
    if ((as * bs - y).norm() > tol * std::max(1.0, y.norm())) return std::nullopt;

    Eigen::VectorXd sgn(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        if (bs(c) == 0.0 || (bs(c) > 0.0) != (z(idx[static_cast<std::size_t>(c)]) > 0.0)) return std::nullopt;
        sgn(c) = bs(c) > 0.0 ? 1.0 : -1.0;
    }
    // lambda0 from the dual guess, then the nearest lambda with A_S^T lambda = sgn.
    const Eigen::VectorXd lambda0 = rows.dual_least_squares(dual_guess);
    const Eigen::MatrixXd ast = as.transpose();
    const Eigen::LLT<Eigen::MatrixXd> small(ast * as);
    if (small.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd lambda = lambda0 + as * small.solve(sgn - ast * lambda0);
    if ((ast * lambda - sgn).lpNorm<Eigen::Infinity>() > 1e-8) return std::nullopt;
    if ((a.transpose() * lambda).lpNorm<Eigen::Infinity>() > 1.0 + tol) return std::nullopt;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (Eigen::Index c = 0; c < k; ++c) beta(idx[static_cast<std::size_t>(c)]) = bs(c);
    return beta;
}


// Two-phase revised simplex on min 1^T (b+ + b-) s.t. [A, -A] (b+, b-) = y,
// b+, b- >= 0. Returns beta and the dual lambda; nullopt if the pivot budget runs out.
struct SimplexOutcome {
    Eigen::VectorXd beta;
    Eigen::VectorXd lambda;
};

inline std::optional<SimplexOutcome> simplex_basis_pursuit(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                                           std::size_t max_pivots) {
    const Eigen::Index n = a.rows(), p = a.cols();
    auto column = [&](Eigen::Index j) -> Eigen::VectorXd {
        if (j < p) return a.col(j);
        if (j < 2 * p) return -a.col(j - p);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e(j - 2 * p) = y(j - 2 * p) >= 0.0 ? 1.0 : -1.0;
        return e;
    };
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) basis[static_cast<std::size_t>(i)] = 2 * p + i;
    Eigen::MatrixXd binv = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) binv(i, i) = y(i) >= 0.0 ? 1.0 : -1.0;
    Eigen::VectorXd xb = binv * y;
    const double ytol = 1e-11 * std::max(1.0, y.lpNorm<Eigen::Infinity>());
    const double amax = a.cwiseAbs().maxCoeff();

    auto refactor = [&] {
        Eigen::MatrixXd b(n, n);
        for (Eigen::Index i = 0; i < n; ++i) b.col(i) = column(basis[static_cast<std::size_t>(i)]);
        binv = b.partialPivLu().inverse();
        xb = binv * y;
        for (Eigen::Index i = 0; i < n; ++i)
            if (xb(i) < 0.0 && xb(i) > -ytol) xb(i) = 0.0;
    };

    std::size_t pivots = 0;
    for (int phase = 1; phase <= 2; ++phase) {
        auto cost = [&](Eigen::Index j) { return phase == 1 ? (j >= 2 * p ? 1.0 : 0.0) : (j < 2 * p ? 1.0 : 0.0); };
        std::size_t since_refactor = 0;
        std::size_t degenerate_run = 0;
        for (;;) {
            if (pivots++ > max_pivots) return std::nullopt;
            Eigen::VectorXd cb(n);
            for (Eigen::Index i = 0; i < n; ++i) cb(i) = cost(basis[static_cast<std::size_t>(i)]);
            const Eigen::VectorXd pi = binv.transpose() * cb;
            const Eigen::VectorXd g = a.transpose() * pi;
            // Pricing: Dantzig, Bland after a long degenerate run.
            const bool bland = degenerate_run > 50;
            Eigen::Index enter = -1;
            // Pricing tolerance covers the rounding in g = A^T pi.
            double best_rc = -std::max(1e-9 * std::max(1.0, g.lpNorm<Eigen::Infinity>()),
                                       8.0 * std::numeric_limits<double>::epsilon() * pi.lpNorm<1>() * amax);
            for (Eigen::Index j = 0; j < 2 * p; ++j) {
                const double rc = cost(j) - (j < p ? g(j) : -g(j - p));
                if (rc < best_rc) {
                    best_rc = rc;
                    enter = j;
                    if (bland) break;
                }
            }
            if (enter < 0) break;
            const Eigen::VectorXd dcol = binv * column(enter);
            Eigen::Index leave = -1;
            double ratio = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < n; ++i) {
                if (dcol(i) > 1e-11) {
                    const double r = std::max(0.0, xb(i)) / dcol(i);
                    if (r < ratio - 1e-14 ||
                        (r <= ratio + 1e-14 && leave >= 0 &&
                         basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                        ratio = r;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return std::nullopt;  // unbounded: impossible for a bounded-below objective
            degenerate_run = ratio <= 1e-14 ? degenerate_run + 1 : 0;
            xb -= ratio * dcol;
            xb(leave) = ratio;
            const double piv = dcol(leave);
            const Eigen::RowVectorXd prow = binv.row(leave) / piv;
            binv -= dcol * prow;
            binv.row(leave) = prow;
            basis[static_cast<std::size_t>(leave)] = enter;
            if (++since_refactor >= 50) {
                refactor();
                since_refactor = 0;
            }
        }
        refactor();
        if (phase == 1) {
            if (xb.minCoeff() < -1e-9 * std::max(1.0, y.lpNorm<Eigen::Infinity>())) return std::nullopt;
            // Drive zero-level artificials out of the basis.
            for (Eigen::Index i = 0; i < n; ++i) {
                if (basis[static_cast<std::size_t>(i)] < 2 * p) continue;
                const Eigen::VectorXd row = a.transpose() * binv.row(i).transpose();
                Eigen::Index k;
                if (row.cwiseAbs().maxCoeff(&k) < 1e-9) return std::nullopt;
                basis[static_cast<std::size_t>(i)] = k;
                refactor();
            }
        }
    }

    SimplexOutcome out;
    out.beta = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = basis[static_cast<std::size_t>(i)];
        if (j < p) out.beta(j) += xb(i);
        else if (j < 2 * p) out.beta(j - p) -= xb(i);
    }
    Eigen::VectorXd cb(n);
    for (Eigen::Index i = 0; i < n; ++i) cb(i) = basis[static_cast<std::size_t>(i)] < 2 * p ? 1.0 : 0.0;
    out.lambda = binv.transpose() * cb;
    return out;
}
}  // namespace detail

/// Basis pursuit min ||b||_1 s.t. A b = y by ADMM with an exact affine
/// projection. Every 50 iterations the support of the iterate is polished and
/// accepted when a dual certificate proves optimality. On ADMM convergence,
/// or after `crossover_after` iterations, an exact simplex solve is tried.
/// Otherwise returns the projected iterate on convergence.
inline L1Result basis_pursuit(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const L1Options& opt = {}) {
    if (a.rows() != y.size()) throw DimensionError("basis_pursuit: label length");
    if (a.cols() < a.rows()) throw DomainError("basis_pursuit: need at least as many features as samples");
    const detail::RowSpace rows(a, "basis_pursuit");
    const Eigen::VectorXd x_ls = rows.min_norm(y);
    auto project = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v - rows.project_rows(v) + x_ls; };

    const Eigen::Index p = a.cols();
    const double scale = std::max(1.0, x_ls.lpNorm<Eigen::Infinity>());
    double rho = opt.rho / scale;
    Eigen::VectorXd x = x_ls, z = x_ls, u = Eigen::VectorXd::Zero(p);
    L1Result best;
    best.beta = x_ls;
    best.objective = x_ls.lpNorm<1>();
    const double sqrt_p = std::sqrt(static_cast<double>(p));

    auto certified = [&](Eigen::VectorXd beta) {
        best.beta = std::move(beta);
        best.objective = best.beta.lpNorm<1>();
        best.feasibility = (a * best.beta - y).norm();
        best.certified = true;
        return best;
    };
    auto simplex = [&]() -> std::optional<L1Result> {
        auto sx = detail::simplex_basis_pursuit(a, y, 50 * static_cast<std::size_t>(p + a.rows()));
        if (!sx) return std::nullopt;
        const double dual_inf = (a.transpose() * sx->lambda).lpNorm<Eigen::Infinity>();
        if (dual_inf > 1.0 + opt.tol || (a * sx->beta - y).norm() > opt.tol * std::max(1.0, y.norm()))
            return std::nullopt;
        return certified(std::move(sx->beta));
    };

    for (std::size_t it = 1; it <= opt.max_iter; ++it) {
        x = project(z - u);
        const Eigen::VectorXd z_old = z;
        const Eigen::VectorXd v = x + u;
        const double thr = 1.0 / rho;
        z = v.array().sign() * (v.array().abs() - thr).cwiseMax(0.0);
        u += x - z;

        const double obj = x.lpNorm<1>();
        if (obj < best.objective) {
            best.objective = obj;
            best.beta = x;
        }
        const double r_norm = (x - z).norm();
        const double s_norm = rho * (z - z_old).norm();
        const double eps_pri = opt.tol * (sqrt_p * 1e-3 * scale + std::max(x.norm(), z.norm()));
        const double eps_dual = opt.tol * (sqrt_p * 1e-3 + rho * u.norm());
        best.iterations = it;
        const bool converged = r_norm <= eps_pri && s_norm <= eps_dual;
        if (it % 50 == 0 || converged) {
            if (auto polished = detail::polish_support(a, y, z, rho * u, rows, opt.tol)) return certified(*polished);
        }
        if (opt.crossover_after > 0 && (it == opt.crossover_after || (converged && it < opt.crossover_after))) {
            if (auto sx = simplex()) return *sx;
        }
        if (converged) {
            if (obj <= best.objective + opt.tol * std::max(1.0, best.objective)) {
                best.beta = x;
                best.objective = obj;
            }
            best.feasibility = (a * best.beta - y).norm();
            return best;
        }
        // Residual balancing.
        if (it % 20 == 0) {
            if (r_norm > 10.0 * s_norm) {
                rho *= 2.0;
                u /= 2.0;
            } else if (s_norm > 10.0 * r_norm) {
                rho /= 2.0;
                u *= 2.0;
            }
        }
    }
    throw ConvergenceError("basis_pursuit: iteration cap reached", (x - z).norm());
}

inline L1Result fourier_min_l1(const FourierDesign& design, const Eigen::VectorXd& y, const L1Options& opt = {}) {
    if (static_cast<std::size_t>(y.size()) != design.rows()) throw DimensionError("fourier_min_l1: label length");
    return basis_pursuit(design.matrix(), y, opt);
}

/// ||f||^2 (1 - n/p) + sigma^2 n / (p - n - 1).
inline double gaussian_mse_formula(double norm_f_sq, std::size_t n, std::size_t p, double sigma_sq) {
    if (p < n + 2) throw DomainError("gaussian_mse_formula: requires p >= n + 2");
    if (norm_f_sq < 0.0 || sigma_sq < 0.0) throw DomainError("gaussian_mse_formula: negative input");
    const double nn = static_cast<double>(n), pp = static_cast<double>(p);
    return norm_f_sq * (1.0 - nn / pp) + sigma_sq * nn / (pp - nn - 1.0);
}

}  // namespace ntklab
