#include "gtddp/coop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtddp/errors.hpp"

namespace gtddp {

namespace {

constexpr const char* kIndefinite = "cooperative curvature indefinite";

Matrix spd_inverse(const Matrix& m) {
    try {
        return linalg::solve_spd(m, Matrix(Matrix::Identity(m.rows(), m.cols())));
    } catch (const NumericalError&) {
        throw NumericalError(kIndefinite);
    }
}

Matrix solve_or_throw(const Matrix& m, const Matrix& rhs) {
    if (rhs.cols() == 0) return Matrix(m.rows(), 0);
    try {
        return linalg::solve_spd(m, rhs);
    } catch (const NumericalError&) {
        throw NumericalError(kIndefinite);
    }
}

Matrix with_ridge(const Matrix& m, double ridge) {
    return m + ridge * Matrix::Identity(m.rows(), m.cols());
}

}  // namespace

CoopGains coop_solve_dense(const CoopExpansion& c, double damping) {
    const Eigen::Index nu = c.q_u.size();
    const Eigen::Index nv = c.q_v.size();
    if (c.q_uu.rows() != nu || c.q_vv.rows() != nv || c.q_uv.rows() != nu || c.q_uv.cols() != nv) {
        throw ConfigError("coop_solve_dense: block shape mismatch");
    }
    const Matrix quu = with_ridge(c.q_uu, damping);
    const Matrix qvv = with_ridge(c.q_vv, damping);
    const Matrix q_vu = c.q_uv.transpose();
    const Matrix schur_u = linalg::symmetrize(quu - c.q_uv * solve_or_throw(qvv, q_vu));
    const Matrix schur_v = linalg::symmetrize(qvv - q_vu * solve_or_throw(quu, c.q_uv));

    // Player u sees v's terms through Q_uv Q_vv^-1, and symmetrically.
    auto eliminate_v = [&](const Matrix& own, const Matrix& other) -> Matrix {
        if (own.cols() == 0) return Matrix(nu, 0);
        return -solve_or_throw(schur_u, own - c.q_uv * solve_or_throw(qvv, other));
    };
    auto eliminate_u = [&](const Matrix& own, const Matrix& other) -> Matrix {
        if (own.cols() == 0) return Matrix(nv, 0);
        return -solve_or_throw(schur_v, own - q_vu * solve_or_throw(quu, other));
    };

    CoopGains g;
    g.k = eliminate_v(c.q_u, c.q_v).col(0);
    g.K = eliminate_v(c.q_ux, c.q_vx);
    g.G = eliminate_v(c.q_ur, c.q_vr);
    g.kv = eliminate_u(c.q_v, c.q_u).col(0);
    g.Kv = eliminate_u(c.q_vx, c.q_ux);
    g.Gv = eliminate_u(c.q_vr, c.q_ur);
    return g;
}

CoopKronSolver::CoopKronSolver(const KronBlocks& f, double damping) {
    if (damping < 0.0) throw ConfigError("damping must be non-negative");
    if (f.a_uv.rows() != f.a_uu.rows() || f.a_uv.cols() != f.a_vv.rows() ||
        f.b_uv.rows() != f.b_uu.rows() || f.b_uv.cols() != f.b_vv.rows()) {
        throw ConfigError("cooperative Kronecker factor shapes do not match");
    }
    const double ridge = std::sqrt(damping);
    const Matrix a_uu = with_ridge(f.a_uu, ridge);
    const Matrix a_vv = with_ridge(f.a_vv, ridge);
    const Matrix b_uu = with_ridge(f.b_uu, ridge);
    const Matrix b_vv = with_ridge(f.b_vv, ridge);
    a_uv_ = f.a_uv;
    b_uv_ = f.b_uv;
    a_uu_inv_ = spd_inverse(a_uu);
    a_vv_inv_ = spd_inverse(a_vv);
    b_uu_inv_ = spd_inverse(b_uu);
    b_vv_inv_ = spd_inverse(b_vv);
    a_schur_u_inv_ = spd_inverse(linalg::symmetrize(a_uu - a_uv_ * a_vv_inv_ * a_uv_.transpose()));
    b_schur_u_inv_ = spd_inverse(linalg::symmetrize(b_uu - b_uv_ * b_vv_inv_ * b_uv_.transpose()));
    a_schur_v_inv_ = spd_inverse(linalg::symmetrize(a_vv - a_uv_.transpose() * a_uu_inv_ * a_uv_));
    b_schur_v_inv_ = spd_inverse(linalg::symmetrize(b_vv - b_uv_.transpose() * b_uu_inv_ * b_uv_));
}

std::pair<Matrix, Matrix> CoopKronSolver::apply(const Matrix& a, const Matrix& b) const {
    const Matrix mixed_u = a + b_uv_ * b_vv_inv_ * b * a_vv_inv_ * a_uv_.transpose();
    const Matrix mixed_v = b + b_uv_.transpose() * b_uu_inv_ * a * a_uu_inv_ * a_uv_;
    return {b_schur_u_inv_ * mixed_u * a_schur_u_inv_, b_schur_v_inv_ * mixed_v * a_schur_v_inv_};
}

std::pair<Matrix, Matrix> coop_kron_precondition(const KronBlocks& f, const Matrix& grad_u,
                                                 const Matrix& grad_v, double damping) {
    auto [xu, xv] = CoopKronSolver(f, damping).apply(grad_u, grad_v);
    return {-xu, -xv};
}

Matrix RescaledCurvature::matrix() const {
    Vector d = rescaled.array() + damping;
    return eig.basis * d.asDiagonal() * eig.basis.transpose();
}

Vector RescaledCurvature::solve(const Vector& g) const {
    Vector coords = eig.basis.transpose() * g;
    coords.array() /= rescaled.array() + damping;
    return eig.basis * coords;
}

RescaledCurvature eigen_rescale(const linalg::SymEig& eig, double damping) {
    if (!(damping > 0.0)) throw ConfigError("eigen rescaling needs positive damping");
    RescaledCurvature r{eig, Vector(eig.values.size()), damping};
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        const double l = std::max(0.0, eig.values(i));
        r.rescaled(i) = damping * l / (damping + l);
    }
    return r;
}

linalg::SymEig kron_eig(const linalg::SymEig& a, const linalg::SymEig& b) {
    const Eigen::Index na = a.values.size();
    const Eigen::Index nb = b.values.size();
    const Eigen::Index n = na * nb;
    Vector values(n);
    Matrix basis(n, n);
    for (Eigen::Index i = 0; i < na; ++i) {
        for (Eigen::Index j = 0; j < nb; ++j) {
            values(i * nb + j) = a.values(i) * b.values(j);
            basis.col(i * nb + j) = linalg::kron(a.basis.col(i), b.basis.col(j));
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return values(x) > values(y); });
    linalg::SymEig out{Matrix(n, n), Vector(n)};
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = values(order[k]);
        out.basis.col(k) = basis.col(order[k]);
    }
    return out;
}

}  // namespace gtddp
