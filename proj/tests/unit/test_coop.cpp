#include <random>

#include "doctest.h"
#include "gtddp/coop.hpp"
#include "gtddp/curvature.hpp"
#include "gtddp/errors.hpp"
#include "oracles.hpp"

using namespace gtddp;
using oracle::random_matrix;
using oracle::random_spd;
using oracle::random_vector;
using oracle::rel_err;

using oracle::random_game;
using oracle::stack_coop_gains;
using oracle::stacked_kkt;

TEST_CASE("cooperative gains equal the stacked joint solve") {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 10; ++trial) {
        const int nu = 2 + trial % 4;
        const int nv = 1 + trial % 3;
        const CoopExpansion c = random_game(rng, nu, nv, 3, 2);
        const double gamma = trial % 2 ? 0.1 : 0.0;
        CHECK(rel_err(stack_coop_gains(coop_solve_dense(c, gamma)), stacked_kkt(c, gamma)) < 1e-10);
    }
}

TEST_CASE("decoupled players solve independently") {
    std::mt19937_64 rng(52);
    CoopExpansion c = random_game(rng, 3, 2, 2, 2);
    c.q_uv.setZero();
    const CoopGains g = coop_solve_dense(c, 0.0);
    CHECK(rel_err(g.k, -c.q_uu.inverse() * c.q_u) < 1e-12);
    CHECK(rel_err(g.K, -c.q_uu.inverse() * c.q_ux) < 1e-12);
    CHECK(rel_err(g.kv, -c.q_vv.inverse() * c.q_v) < 1e-12);
    CHECK(rel_err(g.Kv, -c.q_vv.inverse() * c.q_vx) < 1e-12);
}

TEST_CASE("scalar cooperative game by hand") {
    CoopExpansion c;
    c.q_u = Vector::Ones(1);
    c.q_v = Vector::Ones(1);
    c.q_uu = Matrix::Constant(1, 1, 2.0);
    c.q_vv = Matrix::Constant(1, 1, 2.0);
    c.q_uv = Matrix::Constant(1, 1, 1.0);
    c.q_ux = Matrix::Zero(1, 1);
    c.q_vx = Matrix::Zero(1, 1);
    const CoopGains g = coop_solve_dense(c, 0.0);
    CHECK(g.k(0) == doctest::Approx(-1.0 / 3.0));
    CHECK(g.kv(0) == doctest::Approx(-1.0 / 3.0));
    CHECK(g.G.cols() == 0);
}

TEST_CASE("relabeling the players swaps their gains") {
    std::mt19937_64 rng(53);
    const CoopExpansion c = random_game(rng, 3, 2, 2, 2);
    CoopExpansion s{c.q_v, c.q_u, c.q_vv, c.q_uu, c.q_uv.transpose(), c.q_vr, c.q_ur, c.q_vx, c.q_ux};
    const CoopGains a = coop_solve_dense(c, 0.05);
    const CoopGains b = coop_solve_dense(s, 0.05);
    CHECK(b.k == a.kv);
    CHECK(b.K == a.Gv);
    CHECK(b.G == a.Kv);
    CHECK(b.kv == a.k);
    CHECK(b.Kv == a.G);
    CHECK(b.Gv == a.K);
}

TEST_CASE("indefinite cooperative curvature is reported") {
    CoopExpansion c;
    c.q_u = Vector::Ones(1);
    c.q_v = Vector::Ones(1);
    c.q_uu = Matrix::Constant(1, 1, 1.0);
    c.q_vv = Matrix::Constant(1, 1, 1.0);
    c.q_uv = Matrix::Constant(1, 1, 2.0);
    CHECK_THROWS_AS(coop_solve_dense(c, 0.0), NumericalError);
}

TEST_CASE("Kronecker cooperative step without cross factors is the plain Kronecker step") {
    std::mt19937_64 rng(54);
    KronBlocks f{random_spd(rng, 3), random_spd(rng, 2), random_spd(rng, 2), random_spd(rng, 2), Matrix::Zero(3, 2),
                 Matrix::Zero(2, 2)};
    const Matrix gu = random_matrix(rng, 2, 3);
    const Matrix gv = random_matrix(rng, 2, 2);
    auto [ku, kv] = coop_kron_precondition(f, gu, gv, 0.0);
    CHECK(rel_err(ku, -f.b_uu.inverse() * gu * f.a_uu.inverse()) < 1e-12);
    CHECK(rel_err(kv, -f.b_vv.inverse() * gv * f.a_vv.inverse()) < 1e-12);
}

TEST_CASE("Kronecker cooperative step on scalar factors matches the scalar game") {
    KronBlocks f{Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.5), Matrix::Constant(1, 1, 3.0),
                 Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.4)};
    const Matrix gu = Matrix::Constant(1, 1, 0.7);
    const Matrix gv = Matrix::Constant(1, 1, -0.2);
    auto [ku, kv] = coop_kron_precondition(f, gu, gv, 0.0);
    // Scalar joint Kronecker product restricted to (u, v): entries of A_w^-1 * B_w^-1.
    Matrix aw(2, 2), bw(2, 2);
    aw << 2.0, 1.0, 1.0, 3.0;
    bw << 1.5, 0.4, 0.4, 0.5;
    const Matrix inv = aw.inverse().cwiseProduct(bw.inverse());
    const Matrix h = inv.inverse();
    CoopExpansion c{gu.col(0), gv.col(0), h.block(0, 0, 1, 1), h.block(1, 1, 1, 1), h.block(0, 1, 1, 1),
                    Matrix(1, 0), Matrix(1, 0), Matrix(1, 0), Matrix(1, 0)};
    const CoopGains g = coop_solve_dense(c, 0.0);
    CHECK(std::abs(ku(0, 0) - g.k(0)) < 1e-12);
    CHECK(std::abs(kv(0, 0) - g.kv(0)) < 1e-12);
}

TEST_CASE("Kronecker cooperative solve equals the dense solve of the materialized joint product") {
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index pu = 2 + trial % 2, pv = 1 + trial % 3, ou = 2, ov = 1 + trial % 2;
        const Matrix aw = random_spd(rng, pu + pv, 0.3);
        const Matrix bw = random_spd(rng, ou + ov, 0.3);
        const double gamma = trial % 2 ? 1e-2 : 0.0;
        const KronBlocks f{aw.topLeftCorner(pu, pu),  bw.topLeftCorner(ou, ou),  aw.bottomRightCorner(pv, pv),
                           bw.bottomRightCorner(ov, ov), aw.topRightCorner(pu, pv), bw.topRightCorner(ou, ov)};
        const double r = std::sqrt(gamma);
        const Matrix m = linalg::kron(aw + r * Matrix::Identity(pu + pv, pu + pv),
                                      bw + r * Matrix::Identity(ou + ov, ou + ov));
        const Matrix minv = m.inverse();
        const auto idx = oracle::joint_kron_indices(ou, pu, ov, pv);
        const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
        Matrix sub(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) sub(i, j) = minv(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        const Matrix gu = random_matrix(rng, ou, pu);
        const Matrix gv = random_matrix(rng, ov, pv);
        Vector g(n);
        g << linalg::vec(gu), linalg::vec(gv);

        const Matrix h = sub.inverse();
        const Eigen::Index nu = ou * pu;
        CoopExpansion c{linalg::vec(gu), linalg::vec(gv), h.topLeftCorner(nu, nu), h.bottomRightCorner(n - nu, n - nu),
                        h.topRightCorner(nu, n - nu), Matrix(nu, 0), Matrix(n - nu, 0), Matrix(nu, 0), Matrix(n - nu, 0)};
        const CoopGains dense = coop_solve_dense(c, 0.0);
        auto [ku, kv] = coop_kron_precondition(f, gu, gv, gamma);
        CHECK(rel_err(linalg::vec(ku), dense.k) < 1e-8);
        CHECK(rel_err(linalg::vec(kv), dense.kv) < 1e-8);
        CHECK(rel_err(linalg::vec(ku), Vector(-(sub * g).head(nu))) < 1e-8);
    }
}

TEST_CASE("eigen rescaling pointwise") {
    linalg::SymEig e{Matrix::Identity(3, 3), Vector(3)};
    e.values << 1.0, 0.0, 4.0;
    const RescaledCurvature r = eigen_rescale(e, 1.0);
    CHECK(r.rescaled(0) == doctest::Approx(0.5));
    CHECK(r.rescaled(1) == 0.0);
    CHECK(std::abs(r.rescaled(2) - 0.8) < 1e-12);
    CHECK_THROWS_AS(eigen_rescale(e, 0.0), ConfigError);
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(r.rescaled(i) <= e.values(i));
}

TEST_CASE("eigen-rescaled curvature equals the dense Schur complement on shared factors") {
    std::mt19937_64 rng(56);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix a = random_spd(rng, 2 + trial % 2, 0.1);
        const Matrix b = random_spd(rng, 2, 0.1);
        const double gamma = 0.05 + 0.1 * trial;
        const Matrix k = linalg::kron(a, b);
        const Matrix id = Matrix::Identity(k.rows(), k.cols());
        const Matrix quu = k + gamma * id;
        const Matrix quv = -k;
        const Matrix schur = quu - quv * quu.inverse() * quv.transpose();

        const linalg::SymEig e = kron_eig(linalg::sym_eig(a), linalg::sym_eig(b));
        const RescaledCurvature r = eigen_rescale(e, gamma);
        CHECK(rel_err(r.matrix(), schur) < 1e-8);
        for (Eigen::Index i = 0; i < e.values.size(); ++i) {
            const double l = e.values(i);
            CHECK(std::abs(r.rescaled(i) - gamma * l / (gamma + l)) < 1e-12);
            CHECK(1.0 / (r.rescaled(i) + gamma) >= 1.0 / (l + gamma));
        }
        const Vector g = random_vector(rng, k.rows());
        CHECK(rel_err(r.solve(g), schur.inverse() * g) < 1e-8);
    }
}

TEST_CASE("joint eigen-rescaled preconditioner inverts the shared-factor game") {
    std::mt19937_64 rng(57);
    std::vector<Matrix> patches;
    std::vector<Matrix> cot;
    for (int i = 0; i < 4; ++i) {
        patches.push_back(random_matrix(rng, 3, 2));
        cot.push_back(random_matrix(rng, 2, 2));
    }
    std::vector<const Matrix*> pp;
    for (const Matrix& p : patches) pp.push_back(&p);
    CurvatureSettings s;
    s.kind = CurvatureKind::kKronecker;
    s.lr = 1.0;
    s.damping = 0.2;
    s.eigen_rescale = true;
    CurvatureModel m(s);
    const LayerStatistics st{2, 3, random_vector(rng, 6), pp, cot, {}};
    auto joint = m.substitute_joint(0, st, -1, st, Matrix());

    const KronFactors f = batch_kron_factors(pp, cot);
    const Matrix k = linalg::kron(f.a, f.b);
    const Eigen::Index n = k.rows();
    Matrix h(2 * n, 2 * n);
    h << k, -k, -k, k;
    h += s.damping * Matrix::Identity(2 * n, 2 * n);
    const Vector a = random_vector(rng, n);
    const Vector b = random_vector(rng, n);
    Vector ab(2 * n);
    ab << a, b;
    const Vector want = h.inverse() * ab;
    auto [xa, xb] = joint->solve(a, b);
    CHECK(rel_err(xa, want.head(n)) < 1e-8);
    CHECK(rel_err(xb, want.tail(n)) < 1e-8);
}
