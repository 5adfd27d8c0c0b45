#pragma once

#include "gtddp/curvature.hpp"
#include "gtddp/value.hpp"

namespace gtddp {

/// @brief Value at the merge boundary seen from inside the block. The state after the
/// merge is x + r, so V_r = V_x and V_xr = V_rr = V_xx.
ValueState enter_block(const ValueState& after_merge);

/// G = -(Q_uu + damping)^-1 Q_ur for one sample (dense expansion).
Matrix residual_gain(const QExpansion& q, const Preconditioner& quu);

/// @brief Folds the shortcut state back into x at the split stage, where r = x:
/// V_x + V_r and V_xx + V_xr + V_xr^T + V_rr. Returns a plain value.
ValueState split_merge(const ValueState& at_split);

}  // namespace gtddp
