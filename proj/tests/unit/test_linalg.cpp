#include <random>

#include "doctest.h"
#include "gtddp/errors.hpp"
#include "gtddp/linalg.hpp"
#include "oracles.hpp"

using namespace gtddp;
using oracle::random_matrix;
using oracle::random_spd;

TEST_CASE("solve_spd on identity, diagonal and random SPD systems") {
    const Vector b = Vector::LinSpaced(3, 1.0, 3.0);
    CHECK(linalg::solve_spd(Matrix::Identity(3, 3), b).isApprox(b, 1e-14));

    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 2.0, 4.0;
    CHECK(linalg::solve_spd(d, Vector(d.diagonal())).isApprox(Vector::Ones(2), 1e-14));

    std::mt19937_64 rng(7);
    const Matrix m = random_spd(rng, 5);
    const Matrix rhs = random_matrix(rng, 5, 3);
    const Matrix x = linalg::solve_spd(m, rhs);
    CHECK((m * x - rhs).norm() / rhs.norm() < 1e-10);
}

TEST_CASE("solve_spd rejects indefinite matrices") {
    Matrix m = Matrix::Identity(2, 2);
    m(1, 1) = -1.0;
    CHECK_THROWS_AS(linalg::solve_spd(m, Vector(Vector::Ones(2))), NumericalError);
}

TEST_CASE("kron_apply matches the materialized Kronecker product") {
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(rng, 2, 2);
    CHECK(linalg::kron_apply(Matrix::Identity(2, 2), Matrix::Identity(2, 2), x).isApprox(x));
    CHECK(linalg::kron_apply(Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 1.0))(
              0, 0) == doctest::Approx(6.0));

    for (int trial = 0; trial < 5; ++trial) {
        const Matrix a = random_matrix(rng, 3, 2);
        const Matrix b = random_matrix(rng, 2, 3);
        const Matrix y = random_matrix(rng, 3, 2);
        const Vector dense = linalg::kron(a, b) * linalg::vec(y);
        CHECK((linalg::vec(linalg::kron_apply(a, b, y)) - dense).norm() < 1e-12);
    }
    CHECK_THROWS_AS(linalg::kron_apply(Matrix::Identity(2, 2), Matrix::Identity(3, 3), x), ConfigError);
}

TEST_CASE("Kronecker inverse and transpose identities") {
    std::mt19937_64 rng(2);
    for (int n : {2, 3}) {
        const Matrix a = random_spd(rng, n);
        const Matrix b = random_spd(rng, n);
        const Matrix c = random_matrix(rng, n, n);
        const Matrix e = random_matrix(rng, n, n);
        const Matrix x = random_matrix(rng, n, n);
        const Matrix forward = linalg::kron_apply(a, b, x);
        const Matrix back = linalg::kron_apply(a.inverse(), b.inverse(), forward);
        CHECK((back - x).norm() < 1e-10);
        CHECK((linalg::kron(c, e).transpose() - linalg::kron(c.transpose(), e.transpose())).norm() < 1e-12);
        CHECK((linalg::kron(a, b).inverse() - linalg::kron(a.inverse(), b.inverse())).norm() < 1e-10);
    }
}

TEST_CASE("vec and unvec are column-major inverses") {
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const Vector v = linalg::vec(m);
    CHECK(v(1) == 4.0);
    CHECK(v(2) == 2.0);
    CHECK(linalg::unvec(v, 2, 3) == m);
}

TEST_CASE("schur_block_inverse") {
    SUBCASE("decoupled players give the block-diagonal inverse") {
        std::mt19937_64 rng(3);
        linalg::Block2x2 h{random_spd(rng, 3), Matrix::Zero(3, 2), Matrix::Zero(2, 3), random_spd(rng, 2)};
        const auto inv = linalg::schur_block_inverse(h, 0.0);
        CHECK((inv.uu - h.uu.inverse()).norm() < 1e-12);
        CHECK((inv.vv - h.vv.inverse()).norm() < 1e-12);
        CHECK(inv.uv.norm() < 1e-15);
    }
    SUBCASE("scalar blocks invert by hand") {
        linalg::Block2x2 h{Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0),
                           Matrix::Constant(1, 1, 2.0)};
        const Matrix inv = linalg::schur_block_inverse(h, 0.0).assemble();
        Matrix want(2, 2);
        want << 2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0;
        CHECK((inv - want).norm() < 1e-14);
    }
    SUBCASE("random SPD up to 12x12 against dense inversion") {
        std::mt19937_64 rng(4);
        for (int n = 2; n <= 12; ++n) {
            const Matrix full = random_spd(rng, n, 0.1);
            const Eigen::Index nu = n / 2 + 1 > n - 1 ? 1 : n / 2 + 1;
            const auto h = linalg::Block2x2::split(full, nu);
            const Matrix inv = linalg::schur_block_inverse(h, 0.0).assemble();
            CHECK((inv - full.inverse()).norm() / full.inverse().norm() < 1e-10);
            CHECK((inv * full - Matrix::Identity(n, n)).norm() < 1e-8);
        }
        const Matrix full = random_spd(rng, 6);
        const Matrix damped = full + 0.3 * Matrix::Identity(6, 6);
        const Matrix inv = linalg::schur_block_inverse(linalg::Block2x2::split(full, 4), 0.3).assemble();
        CHECK((inv - damped.inverse()).norm() < 1e-10);
    }
    SUBCASE("indefinite complement is reported") {
        linalg::Block2x2 h{Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 2.0),
                           Matrix::Constant(1, 1, 1.0)};
        CHECK_THROWS_AS(linalg::schur_block_inverse(h, 0.0), NumericalError);
    }
}

TEST_CASE("sym_eig") {
    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 1.0, 3.0;
    auto e = linalg::sym_eig(d);
    CHECK(e.values(0) == doctest::Approx(3.0));
    CHECK(e.values(1) == doctest::Approx(1.0));
    CHECK(e.basis.cwiseAbs().isApprox(Matrix(Matrix::Identity(2, 2).rowwise().reverse())));

    Matrix flip(2, 2);
    flip << 0, 1, 1, 0;
    e = linalg::sym_eig(flip);
    CHECK(e.values(0) == doctest::Approx(1.0));
    CHECK(e.values(1) == doctest::Approx(-1.0));

    std::mt19937_64 rng(5);
    for (int n : {1, 3, 8, 20}) {
        const Matrix a = random_matrix(rng, n, n);
        const Matrix m = a + a.transpose();
        e = linalg::sym_eig(m);
        CHECK((e.basis.transpose() * e.basis - Matrix::Identity(n, n)).norm() < 1e-10);
        CHECK((e.reconstruct() - m).norm() / m.norm() < 1e-8);
        for (int i = 1; i < n; ++i) CHECK(e.values(i - 1) >= e.values(i));
    }
}
