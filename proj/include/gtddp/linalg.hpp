#pragma once

#include <Eigen/Dense>

namespace gtddp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

/// @brief Solves M X = rhs for symmetric positive definite M.
/// Throws NumericalError("indefinite curvature") when the Cholesky factorization fails.
/// Damping is the caller's job.
Matrix solve_spd(const Matrix& m, const Matrix& rhs);
Vector solve_spd(const Matrix& m, const Vector& rhs);

/// @brief Returns B X A^T, i.e. the matrix whose column-major vec is (A kron B) vec(X).
Matrix kron_apply(const Matrix& a, const Matrix& b, const Matrix& x);

/// Explicit Kronecker product (tests and tiny problems only).
Matrix kron(const Matrix& a, const Matrix& b);

/// Column-major vectorization and its inverse.
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

Matrix symmetrize(const Matrix& m);

/// @brief 2x2 block partition of a symmetric matrix over (u, v).
struct Block2x2 {
    Matrix uu;
    Matrix uv;
    Matrix vu;
    Matrix vv;

    Matrix assemble() const;
    static Block2x2 split(const Matrix& full, Eigen::Index nu);
};

/// @brief Inverse of [[uu + g I, uv], [vu, vv + g I]] via the two Schur complements.
/// Throws NumericalError("cooperative curvature indefinite") if either complement is not PD.
Block2x2 schur_block_inverse(const Block2x2& h, double damping);

/// @brief Symmetric eigendecomposition, eigenvalues in descending order.
struct SymEig {
    Matrix basis;
    Vector values;

    Matrix reconstruct() const;
};

/// Cyclic Jacobi. Throws NumericalError("eigendecomposition failed") after 100 sweeps.
SymEig sym_eig(const Matrix& m);

}  // namespace linalg
}  // namespace gtddp
