#pragma once

#include <utility>

#include "gtddp/linalg.hpp"

namespace gtddp {

/// @brief Dense second-order expansion of a stage with two players, u (branch layer)
/// and v (shortcut projection), for one sample. q_ur / q_vr are empty when the stage
/// has no separate shortcut state.
struct CoopExpansion {
    Vector q_u;
    Vector q_v;
    Matrix q_uu;
    Matrix q_vv;
    Matrix q_uv;
    Matrix q_ux;
    Matrix q_vx;
    Matrix q_ur;
    Matrix q_vr;
};

/// Player u: du = k + K dx + G dr. Player v: dv = kv + Kv dx + Gv dr.
struct CoopGains {
    Vector k;
    Matrix K;
    Matrix G;
    Vector kv;
    Matrix Kv;
    Matrix Gv;
};

/// @brief Six gains from the Schur complements of the joint (u, v) curvature, with
/// damping added to both diagonal blocks. Throws NumericalError when indefinite.
CoopGains coop_solve_dense(const CoopExpansion& c, double damping);

/// @brief Kronecker factors of the cooperative curvature: Q_uu ~ A_uu (x) B_uu,
/// Q_vv ~ A_vv (x) B_vv, Q_uv ~ -A_uv (x) B_uv. A are input covariances, B cotangent
/// covariances; a_uv is (patch_u x patch_v), b_uv is (out_u x out_v).
struct KronBlocks {
    Matrix a_uu;
    Matrix b_uu;
    Matrix a_vv;
    Matrix b_vv;
    Matrix a_uv;
    Matrix b_uv;
};

/// @brief Precomputed factor inverses for repeated cooperative Kronecker solves.
/// Each factor block gets sqrt(damping) on its diagonal, so the solve is the (u, v)
/// part of the inverse of (A_w + sqrt(g) I) (x) (B_w + sqrt(g) I) over the joint weight.
class CoopKronSolver {
public:
    CoopKronSolver(const KronBlocks& f, double damping);

    /// Returns (x_u, x_v) as weight-shaped matrices for weight-shaped inputs (a, b).
    std::pair<Matrix, Matrix> apply(const Matrix& a, const Matrix& b) const;

private:
    Matrix a_uv_;
    Matrix b_uv_;
    Matrix a_uu_inv_;
    Matrix b_uu_inv_;
    Matrix a_vv_inv_;
    Matrix b_vv_inv_;
    Matrix a_schur_u_inv_;
    Matrix b_schur_u_inv_;
    Matrix a_schur_v_inv_;
    Matrix b_schur_v_inv_;
};

/// @brief Cooperative open gains (k, kv) from Kronecker factors and the weight-shaped
/// gradients (grad_u, grad_v). Reduces to the plain Kronecker-preconditioned step when
/// the cross factors vanish.
std::pair<Matrix, Matrix> coop_kron_precondition(const KronBlocks& f, const Matrix& grad_u,
                                                 const Matrix& grad_v, double damping);

/// @brief Cooperative curvature for shared factors (A_uu = A_uv = A_vv and likewise B):
/// with Q_uu = Q_vv = A (x) B + g I and Q_uv = -A (x) B, the Schur complement is
/// U (diag(rescaled) + g I) U^T, rescaled_i = g l_i / (g + l_i).
struct RescaledCurvature {
    linalg::SymEig eig;
    Vector rescaled;
    double damping = 0.0;

    Matrix matrix() const;
    Vector solve(const Vector& g) const;
};

/// Throws ConfigError when damping <= 0.
RescaledCurvature eigen_rescale(const linalg::SymEig& eig, double damping);

/// Eigendecomposition of A (x) B assembled from the factor decompositions.
linalg::SymEig kron_eig(const linalg::SymEig& a, const linalg::SymEig& b);

}  // namespace gtddp
