#pragma once

#include <cstddef>
#include <vector>

#include "gtddp/curvature.hpp"
#include "gtddp/loss.hpp"
#include "gtddp/network.hpp"
#include "gtddp/value.hpp"

namespace gtddp {

/// @brief Everything needed to expand one stage for one sample. `proj` is set when the
/// block's shortcut projection is decided at this stage (a cooperative stage).
struct StageInputs {
    const LayerSpec* layer = nullptr;
    const Matrix* w = nullptr;
    const LayerCache* cache = nullptr;
    const LayerSpec* proj = nullptr;
    const Matrix* pw = nullptr;
    const LayerCache* pcache = nullptr;
    bool gauss_newton = false;  // also form the exact f_u^T V_xx f_u blocks
};

/// @brief Gauss-Newton expansion of the stage objective around the cached point.
/// Residual terms appear when `next` carries them; dense or rank-1 follows `next`.
/// q_u and q_v exclude the regularizer.
QExpansion expand_stage(const StageInputs& in, const ValueState& next);

/// Single-sample plain stage with l = 0.5 * weight_decay * ||w||^2 folded into q_u and gn_uu.
QExpansion expand_q(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const ValueState& next,
                    double weight_decay, bool gauss_newton = true);

/// @brief Gains of a non-cooperative stage. q_u_total is the batch gradient including l_u.
/// With `drop_feedback` the cross terms Q_ux, Q_ur are treated as zero.
StageGains solve_gains(const std::vector<QExpansion>& q, const Vector& q_u_total, const Preconditioner& quu,
                       bool drop_feedback = false);

/// Gains of a cooperative stage, both players solved jointly.
StageGains solve_coop_gains(const std::vector<QExpansion>& q, const Vector& q_u_total, const Vector& q_v_total,
                            const JointPreconditioner& joint, bool drop_feedback = false);

/// @brief Value derivatives of sample i after substituting the stage policy.
/// Keeps the residual terms when the expansion has them; `clipped` reports a rank-1
/// coefficient clipped at zero.
ValueState value_recursion(const QExpansion& q, const StageGains& gains, std::size_t sample,
                           bool drop_feedback = false, bool* clipped = nullptr);

struct DdpOptions {
    LossKind loss = LossKind::kCrossEntropy;
    bool gn_terminal = false;
    bool outer_product = false;  // requires gn_terminal
    bool force_qux_zero = false;
    double weight_decay = 0.0;
    bool keep_values = false;
};

struct BackwardResult {
    std::vector<StageGains> gains;   // [t]
    std::vector<BatchValue> values;  // [t], t = 0..T, filled with keep_values
    std::size_t peak_bytes = 0;
    int clipped = 0;
    double loss = 0.0;
};

/// @brief Backward sweep over all stages. Per-sample terminal values are those of the
/// batch-mean loss. Throws NumericalError carrying the failing stage.
BackwardResult backward_pass(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                             const std::vector<Vector>& targets, CurvatureModel& curvature,
                             const DdpOptions& opt);

/// @brief Replays the network, applying each stage's policy to the state differentials
/// x_hat - x (and the shortcut differentials inside blocks). Returns the updated weights.
ParamSet forward_update(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                        const std::vector<StageGains>& gains);

/// Batch-mean loss of the trajectory's outputs.
double batch_loss(LossKind kind, const Trajectory& traj, const std::vector<Vector>& targets);

}  // namespace gtddp
