#pragma once

#include <map>
#include <optional>
#include <vector>

#include "gtddp/curvature.hpp"
#include "gtddp/network.hpp"

namespace gtddp::trainer {

// Textbook first-order updates on one flat parameter vector; g already includes any
// weight-decay term.
Vector sgd_update(const Vector& w, const Vector& g, double lr);

struct MomentState {
    Vector m;
    Vector v;
    long t = 0;
};

/// v = b2 v + (1 - b2) g^2;  w - lr g / (sqrt(v) + eps)
Vector rmsprop_update(const Vector& w, const Vector& g, MomentState& s, double lr, double beta2, double eps);
/// Bias-corrected Adam.
Vector adam_update(const Vector& w, const Vector& g, MomentState& s, double lr, double beta1, double beta2,
                   double eps);

struct EkfacState {
    std::optional<KronFactors> factors;
};

/// EMA the factors, then w - scale (A (x) B + damping I)^-1 g solved in the factor eigenbases.
Matrix ekfac_update(const Matrix& w, const Matrix& g, EkfacState& s, const std::vector<const Matrix*>& patches,
                    const std::vector<Matrix>& cotangents, double scale, double damping, double decay);

/// @brief Baseline optimizer over all parameter groups of a network, fed by plain backprop.
class BaselineOptimizer {
public:
    /// Uses kind, lr, damping, eps, betas, kron_decay, weight_decay and scale_by_lr; the
    /// kGaussNewton kind is rejected.
    explicit BaselineOptimizer(CurvatureSettings s);

    /// `grads` are of the batch-mean loss (terminal gradients scaled by 1/batch).
    void step(const NetworkSpec& spec, ParamSet& params, const Trajectory& traj, const Gradients& grads);

private:
    Matrix update_group(GroupKey key, const Matrix& w, const Matrix& grad, const std::vector<const Matrix*>& patches,
                        const std::vector<Matrix>& cotangents);

    CurvatureSettings s_;
    std::map<GroupKey, MomentState> moments_;
    std::map<GroupKey, EkfacState> kron_;
};

}  // namespace gtddp::trainer
