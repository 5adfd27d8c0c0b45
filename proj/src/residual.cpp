#include "gtddp/residual.hpp"

#include "gtddp/errors.hpp"

namespace gtddp {

ValueState enter_block(const ValueState& after_merge) {
    if (after_merge.has_residual) throw ConfigError("enter_block: value already carries residual terms");
    ValueState v = after_merge;
    v.has_residual = true;
    v.v_r = after_merge.v_x;
    if (after_merge.outer) {
        v.outer->z_r = after_merge.outer->z_x;
    } else {
        v.v_xr = after_merge.v_xx;
        v.v_rr = after_merge.v_xx;
    }
    return v;
}

Matrix residual_gain(const QExpansion& q, const Preconditioner& quu) {
    if (!q.has_residual) throw ConfigError("residual_gain: stage has no residual terms");
    if (q.outer) {
        const Vector a = quu.solve(q.outer->u);
        return -q.outer->c * a * q.outer->r.transpose();
    }
    return -quu.solve_columns(q.q_ur);
}

ValueState split_merge(const ValueState& at_split) {
    if (!at_split.has_residual) throw ConfigError("split_merge: value carries no residual terms");
    ValueState v;
    v.v_x = at_split.v_x + at_split.v_r;
    if (at_split.outer) {
        v.outer = OuterProductValue{at_split.outer->z_x + at_split.outer->z_r, Vector(), at_split.outer->c};
    } else {
        v.v_xx = linalg::symmetrize(at_split.v_xx + at_split.v_xr + at_split.v_xr.transpose() + at_split.v_rr);
    }
    return v;
}

}  // namespace gtddp
