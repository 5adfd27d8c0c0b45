#include "gtddp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtddp/errors.hpp"

namespace gtddp::linalg {

namespace {

Eigen::LLT<Matrix> factor_spd(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw ConfigError("solve_spd: matrix is not square");
    }
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NumericalError(what);
    }
    return llt;
}

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (i != j) s += a(i, j) * a(i, j);
        }
    }
    return std::sqrt(s);
}

}  // namespace

Matrix solve_spd(const Matrix& m, const Matrix& rhs) {
    if (rhs.rows() != m.rows()) throw ConfigError("solve_spd: rhs row mismatch");
    return factor_spd(m, "indefinite curvature").solve(rhs);
}

Vector solve_spd(const Matrix& m, const Vector& rhs) {
    if (rhs.size() != m.rows()) throw ConfigError("solve_spd: rhs size mismatch");
    return factor_spd(m, "indefinite curvature").solve(rhs);
}

Matrix kron_apply(const Matrix& a, const Matrix& b, const Matrix& x) {
    if (b.cols() != x.rows() || a.cols() != x.cols()) {
        throw ConfigError("kron_apply: dimension mismatch");
    }
    return b * x * a.transpose();
}

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != v.size()) throw ConfigError("unvec: size mismatch");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Matrix symmetrize(const Matrix& m) {
    return 0.5 * (m + m.transpose());
}

Matrix Block2x2::assemble() const {
    const Eigen::Index nu = uu.rows();
    const Eigen::Index nv = vv.rows();
    Matrix full(nu + nv, nu + nv);
    full.topLeftCorner(nu, nu) = uu;
    full.topRightCorner(nu, nv) = uv;
    full.bottomLeftCorner(nv, nu) = vu;
    full.bottomRightCorner(nv, nv) = vv;
    return full;
}

Block2x2 Block2x2::split(const Matrix& full, Eigen::Index nu) {
    const Eigen::Index nv = full.rows() - nu;
    return {full.topLeftCorner(nu, nu), full.topRightCorner(nu, nv),
            full.bottomLeftCorner(nv, nu), full.bottomRightCorner(nv, nv)};
}

Block2x2 schur_block_inverse(const Block2x2& h, double damping) {
    const Eigen::Index nu = h.uu.rows();
    const Eigen::Index nv = h.vv.rows();
    if (h.uu.cols() != nu || h.vv.cols() != nv || h.uv.rows() != nu || h.uv.cols() != nv ||
        h.vu.rows() != nv || h.vu.cols() != nu) {
        throw ConfigError("schur_block_inverse: block shape mismatch");
    }
    const char* what = "cooperative curvature indefinite";
    const Matrix quu = h.uu + damping * Matrix::Identity(nu, nu);
    const Matrix qvv = h.vv + damping * Matrix::Identity(nv, nv);

    const auto quu_f = factor_spd(quu, what);
    const auto qvv_f = factor_spd(qvv, what);
    const Matrix qvv_inv_vu = qvv_f.solve(h.vu);  // Qvv^-1 Qvu
    const Matrix quu_inv_uv = quu_f.solve(h.uv);  // Quu^-1 Quv

    const Matrix schur_u = symmetrize(quu - h.uv * qvv_inv_vu);
    const Matrix schur_v = symmetrize(qvv - h.vu * quu_inv_uv);
    const auto su = factor_spd(schur_u, what);
    const auto sv = factor_spd(schur_v, what);

    Block2x2 inv;
    inv.uu = su.solve(Matrix::Identity(nu, nu));
    inv.vv = sv.solve(Matrix::Identity(nv, nv));
    inv.uv = -inv.uu * qvv_inv_vu.transpose();  // -S_u^-1 Quv Qvv^-1
    inv.vu = -inv.vv * quu_inv_uv.transpose();  // -S_v^-1 Qvu Quu^-1
    return inv;
}

Matrix SymEig::reconstruct() const {
    return basis * values.asDiagonal() * basis.transpose();
}

SymEig sym_eig(const Matrix& m) {
    if (m.rows() != m.cols()) throw ConfigError("sym_eig: matrix is not square");
    const Eigen::Index n = m.rows();
    Matrix a = symmetrize(m);
    Matrix v = Matrix::Identity(n, n);

    const double scale = std::max(1.0, a.norm());
    const double threshold = 1e-12 * scale;
    bool converged = off_diagonal_norm(a) <= threshold;
    for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal_norm(a) <= threshold;
    }
    if (!converged) throw NumericalError("eigendecomposition failed");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
    SymEig out{Matrix(n, n), Vector(n)};
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = a(order[k], order[k]);
        out.basis.col(k) = v.col(order[k]);
    }
    return out;
}

}  // namespace gtddp::linalg
