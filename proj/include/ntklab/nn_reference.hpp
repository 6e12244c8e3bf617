#pragma once

// Two-layer bias-free ReLU network with fixed top layer, bottom layer trained
// by full-batch gradient descent:
//
//   out(x) = sum_j w_j 1{x^T V[j] > 0} V[j]^T x,   w_j = s_j / sqrt(p), s_j = +-1.
//
// With `centered` training (the default) the model fitted to the labels is
// out(x) - out_0(x), the change from initialization, which is the quantity the
// linearized model describes.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/common.hpp"
#include "ntklab/ntk_core.hpp"
#include "ntklab/sphere_geometry.hpp"

namespace ntklab {

struct NNOptions {
    std::size_t epochs = 2000;
    std::optional<double> step_size;  // default 1/sqrt(p)
    bool centered = true;
};

struct NNState {
    Eigen::MatrixXd bottom;   // d x p, current V
    Eigen::MatrixXd initial;  // d x p, V0
    Eigen::VectorXd top;      // w
    const NeuronBank* bank = nullptr;
    std::size_t epoch = 0;
    bool centered = true;
    std::vector<double> loss_trajectory;  // training MSE before each epoch, then final

    std::size_t width() const { return static_cast<std::size_t>(bottom.cols()); }
};

/// Top-layer weights s_j / sqrt(p).
inline Eigen::VectorXd nn_top_weights(const NeuronBank& bank) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(bank.size()));
    Eigen::VectorXd w(static_cast<Eigen::Index>(bank.size()));
    for (std::size_t j = 0; j < bank.size(); ++j) w(static_cast<Eigen::Index>(j)) = scale * bank.top_signs[j];
    return w;
}

inline NNState nn_initial_state(const NeuronBank& bank, bool centered = true) {
    NNState s;
    s.bottom = bank.directions;
    s.initial = bank.directions;
    s.top = nn_top_weights(bank);
    s.bank = &bank;
    s.centered = centered;
    return s;
}

/// Raw network output at every column of `points` for bottom weights V.
inline Eigen::VectorXd nn_forward(const Eigen::MatrixXd& bottom, const Eigen::VectorXd& top,
                                  const Eigen::MatrixXd& points) {
    if (points.rows() != bottom.rows()) throw DimensionError("nn_forward: dimension mismatch");
    const Eigen::MatrixXd pre = points.transpose() * bottom;
    return pre.cwiseMax(0.0) * top;
}

/// Exact network output at the current weights.
inline double predict_nn(const NNState& state, const UnitVector& x) {
    return nn_forward(state.bottom, state.top, x.coords())(0);
}

/// Output of the fitted model: raw output, minus the initial output when centered.
inline Eigen::VectorXd predict_nn_model(const NNState& state, const Eigen::MatrixXd& points) {
    Eigen::VectorXd out = nn_forward(state.bottom, state.top, points);
    if (state.centered) out -= nn_forward(state.initial, state.top, points);
    return out;
}

namespace detail {

// One full-batch step on L = 1/2 sum_i r_i^2. Returns the residual before the step.
inline Eigen::VectorXd nn_step(NNState& s, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& target,
                               double gamma) {
    const Eigen::MatrixXd pre = inputs.transpose() * s.bottom;  // n x p
    const Eigen::VectorXd r = pre.cwiseMax(0.0) * s.top - target;
    // dL/dV[j] = sum_i r_i w_j 1{X_i^T V[j] > 0} X_i
    const Eigen::MatrixXd coeff =
        (pre.array() > 0.0).select((r * s.top.transpose()).array(), 0.0).matrix();
    s.bottom.noalias() -= gamma * (inputs * coeff);
    return r;
}

}  // namespace detail

/// Full-batch GD on the bottom layer. Stops with DivergenceError on a
/// non-finite loss.
inline NNState train_nn(const NeuronBank& bank, const Dataset& data, const NNOptions& opts = {}) {
    if (data.dim() != bank.dim()) throw DimensionError("train_nn: dataset and bank dimensions differ");
    const double gamma = opts.step_size.value_or(1.0 / std::sqrt(static_cast<double>(bank.size())));
    if (!(gamma > 0.0)) throw DomainError("train_nn: step size must be positive");

    NNState s = nn_initial_state(bank, opts.centered);
    Eigen::VectorXd target = data.labels;
    if (opts.centered) target += nn_forward(s.initial, s.top, data.inputs);

    const double n = static_cast<double>(data.size());
    s.loss_trajectory.reserve(opts.epochs + 1);
    for (std::size_t e = 0; e < opts.epochs; ++e) {
        const Eigen::VectorXd r = detail::nn_step(s, data.inputs, target, gamma);
        const double mse = r.squaredNorm() / n;
        if (!std::isfinite(mse))
            throw DivergenceError("train_nn: loss became non-finite at epoch " + std::to_string(e) +
                                  " with step size " + std::to_string(gamma));
        s.loss_trajectory.push_back(mse);
        s.epoch = e + 1;
    }
    const Eigen::VectorXd r = nn_forward(s.bottom, s.top, data.inputs) - target;
    const double final_mse = r.squaredNorm() / n;
    if (!std::isfinite(final_mse)) throw DivergenceError("train_nn: final loss is non-finite");
    s.loss_trajectory.push_back(final_mse);
    return s;
}

/// Training MSE of the fitted model.
inline double nn_train_mse(const NNState& s, const Dataset& data) {
    return (predict_nn_model(s, data.inputs) - data.labels).squaredNorm() / static_cast<double>(data.size());
}

}  // namespace ntklab
