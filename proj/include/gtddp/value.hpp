#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "gtddp/linalg.hpp"

namespace gtddp {

/// @brief Rank-1 value Hessian: V_xx = c z_x z_x^T, and inside a residual block
/// V_xr = c z_x z_r^T, V_rr = c z_r z_r^T with the same coefficient.
struct OuterProductValue {
    Vector z_x;
    Vector z_r;
    double c = 1.0;
};

/// @brief Value derivatives of one sample at one stage.
///
/// Outside residual blocks only (v_x, v_xx) are meaningful. Between the split and merge
/// stages of a block the value also depends on the shortcut state r, giving v_r, v_xr and
/// v_rr. When `outer` is set the second-order terms live there and the dense matrices
/// are left empty.
struct ValueState {
    Vector v_x;
    Matrix v_xx;
    bool has_residual = false;
    Vector v_r;
    Matrix v_xr;
    Matrix v_rr;
    std::optional<OuterProductValue> outer;

    Matrix xx() const;
    Matrix xr() const;
    Matrix rr() const;
    std::size_t bytes() const;
};

/// The block-diagonal batch approximation: one independent ValueState per sample.
using BatchValue = std::vector<ValueState>;

BatchValue blockdiag_batch(std::vector<ValueState> per_sample);

/// @brief Linear map from a state differential to a parameter differential,
/// stored densely or as the outer product left * right^T.
class Feedback {
public:
    Feedback() = default;
    static Feedback dense(Matrix m);
    static Feedback rank1(Vector left, Vector right);

    bool empty() const { return !dense_ && left_.size() == 0; }
    bool is_dense() const { return dense_.has_value(); }
    Eigen::Index rows() const;
    Eigen::Index cols() const;
    Vector apply(const Vector& d) const;
    Matrix materialize() const;
    /// Factors of a rank-1 gain (empty for dense gains).
    const Vector& left() const { return left_; }
    const Vector& right() const { return right_; }
    std::size_t bytes() const;

private:
    std::optional<Matrix> dense_;
    Vector left_;
    Vector right_;
};

/// @brief Gains of one stage. Player u is the stage's layer; player v is the block's
/// shortcut projection when it is evaluated at this stage.
///
/// du = k + sum_i (K[i] dx_i + G[i] dr_i), dv = kv + sum_i (Kv[i] dx_i + Gv[i] dr_i).
/// Per-sample value derivatives are those of the batch-mean loss, so summing over
/// samples is the batch average of per-sample-loss contributions.
struct StageGains {
    Vector k;
    std::vector<Feedback> K;
    std::vector<Feedback> G;
    bool coop = false;
    Vector kv;
    std::vector<Feedback> Kv;
    std::vector<Feedback> Gv;

    std::size_t bytes() const;
};

/// @brief Second-order expansion of the stage objective for one sample.
///
/// Gradients q_u/q_v exclude the regularizer; ℓ_u is added once at batch level.
/// Dense mode fills the matrices. Outer-product mode fills `outer` instead, where every
/// second-order block is c a b^T over a, b in {q_x, q_r, q_u, q_v}.
struct QExpansion {
    Vector q_x;
    Vector q_u;
    Matrix q_xx;
    Matrix q_ux;

    bool has_residual = false;
    Vector q_r;
    Matrix q_xr;
    Matrix q_rr;
    Matrix q_ur;

    bool has_coop = false;
    Vector q_v;
    Matrix q_vx;
    Matrix q_vr;

    struct Outer {
        double c = 0.0;
        Vector x;
        Vector r;
        Vector u;
        Vector v;
    };
    std::optional<Outer> outer;

    // Exact Gauss-Newton curvature contributions, filled only when requested.
    Matrix gn_uu;
    Matrix gn_vv;
    Matrix gn_uv;

    std::size_t bytes() const;
};

std::size_t matrix_bytes(const Matrix& m);
std::size_t vector_bytes(const Vector& v);

}  // namespace gtddp
