#include <random>

#include "doctest.h"
#include "gtddp/ddp_core.hpp"
#include "gtddp/errors.hpp"
#include "oracles.hpp"

using namespace gtddp;
using oracle::random_vector;
using oracle::rel_err;

namespace {

// f(x, u) = u x with x0 = 1, u = 2, phi = 0.5 x^2.
struct ScalarSystem {
    LayerSpec layer;
    Matrix w = Matrix::Constant(1, 1, 2.0);
    LayerCache cache;
    ValueState next;

    ScalarSystem() {
        layer.kind = LayerKind::kDense;
        layer.out_channels = 1;
        layer.bias = false;
        layer.input = {1, 1, 1};
        const Vector x1 = layer_forward(layer, w, Vector::Ones(1), &cache);
        next = terminal_expand(LossKind::kMeanSquared, x1, Vector::Zero(1), false);
    }
};

CurvatureModel gauss_newton(double damping, double weight_decay = 0.0) {
    CurvatureSettings s;
    s.kind = CurvatureKind::kGaussNewton;
    s.lr = 1.0;
    s.damping = damping;
    s.weight_decay = weight_decay;
    return CurvatureModel(s);
}

std::vector<Vector> random_inputs(std::mt19937_64& rng, int n, int dim) {
    std::vector<Vector> xs;
    for (int i = 0; i < n; ++i) xs.push_back(random_vector(rng, dim));
    return xs;
}

std::vector<Vector> random_labels(std::mt19937_64& rng, int n, int classes) {
    std::vector<Vector> ys;
    for (int i = 0; i < n; ++i) ys.push_back(one_hot(std::uniform_int_distribution<int>(0, classes - 1)(rng), classes));
    return ys;
}

// Batch-mean loss with sample i's state at stage t replaced by x.
double loss_from(const NetworkSpec& spec, const ParamSet& p, const Trajectory& tr, const std::vector<Vector>& ys,
                 int t, std::size_t i, const Vector& x) {
    double total = 0.0;
    for (std::size_t j = 0; j < ys.size(); ++j) {
        Vector s = j == i ? x : tr.states[static_cast<std::size_t>(t)][j];
        for (int k = t; k < spec.stages(); ++k) {
            const auto sk = static_cast<std::size_t>(k);
            s = layer_forward(spec.layers[sk], p.layers[sk], s, nullptr);
        }
        total += loss_value(LossKind::kCrossEntropy, s, ys[j]);
    }
    return total / static_cast<double>(ys.size());
}

}  // namespace

TEST_CASE("scalar system expansion, gains and value by hand") {
    ScalarSystem sys;
    CHECK(sys.next.v_x(0) == doctest::Approx(2.0));
    CHECK(sys.next.v_xx(0, 0) == doctest::Approx(1.0));
    const QExpansion q = expand_q(sys.layer, sys.w, sys.cache, sys.next, 0.0);
    CHECK(q.q_u(0) == doctest::Approx(2.0));
    CHECK(q.q_x(0) == doctest::Approx(4.0));
    CHECK(q.gn_uu(0, 0) == doctest::Approx(1.0));
    CHECK(q.q_ux(0, 0) == doctest::Approx(2.0));
    CHECK(q.q_xx(0, 0) == doctest::Approx(4.0));

    const auto quu = dense_preconditioner(q.gn_uu);
    const StageGains g = solve_gains({q}, q.q_u, *quu);
    CHECK(g.k(0) == doctest::Approx(-2.0));
    CHECK(g.K[0].materialize()(0, 0) == doctest::Approx(-2.0));

    const ValueState v = value_recursion(q, g, 0);
    CHECK(std::abs(v.v_x(0)) < 1e-14);
    CHECK(std::abs(v.v_xx(0, 0)) < 1e-14);
}

TEST_CASE("stage without terminal cost keeps only the regularizer") {
    ScalarSystem sys;
    ValueState zero;
    zero.v_x = Vector::Zero(1);
    zero.v_xx = Matrix::Zero(1, 1);
    const double lambda = 0.3;
    const QExpansion q = expand_q(sys.layer, sys.w, sys.cache, zero, lambda);
    CHECK(q.q_u(0) == doctest::Approx(lambda * 2.0));
    CHECK(q.gn_uu(0, 0) == doctest::Approx(lambda));
    CHECK(q.q_ux.isZero());
}

TEST_CASE("identity layer transports the value unchanged") {
    LayerSpec l;
    l.kind = LayerKind::kDense;
    l.out_channels = 3;
    l.bias = false;
    l.input = {3, 1, 1};
    std::mt19937_64 rng(31);
    LayerCache c;
    layer_forward(l, Matrix::Identity(3, 3), random_vector(rng, 3), &c);
    ValueState next;
    next.v_x = random_vector(rng, 3);
    next.v_xx = oracle::random_spd(rng, 3);
    const QExpansion q = expand_q(l, Matrix::Identity(3, 3), c, next, 0.0);
    CHECK(q.q_x.isApprox(next.v_x));
    CHECK(q.q_xx.isApprox(next.v_xx));
}

TEST_CASE("spherical curvature without feedback is a gradient step") {
    QExpansion q;
    q.q_u = Vector::LinSpaced(2, 1.0, 2.0);
    q.q_x = Vector::Zero(2);
    q.q_xx = Matrix::Zero(2, 2);
    q.q_ux = Matrix::Zero(2, 2);
    CurvatureSettings s;
    s.lr = 0.1;
    CurvatureModel m(s);
    LayerStatistics st{2, 1, q.q_u, {}, {}, {}};
    const auto quu = m.substitute_quu(0, st);
    CHECK(quu->solve(q.q_u).isApprox(Vector::LinSpaced(2, 0.1, 0.2)));
    StageGains g = solve_gains({q}, q.q_u, *quu);
    CHECK(g.k.isApprox(-0.1 * q.q_u));
    CHECK(g.K[0].materialize().isZero());

    q.q_u.setZero();
    g = solve_gains({q}, q.q_u, *quu);
    CHECK(g.k.isZero());
    CHECK(g.K[0].materialize().isZero());
}

TEST_CASE("without feedback the value gradient is the back-propagated gradient") {
    std::mt19937_64 rng(32);
    for (bool residual : {false, true}) {
        const NetworkSpec spec = residual ? oracle::residual_spec(rng, true, false)
                                          : oracle::mlp_spec({3, 4, 4, 3}, Activation::kTanh);
        const ParamSet p = init_params(spec, 2);
        const int B = 3;
        const auto xs = random_inputs(rng, B, spec.input.size());
        const auto ys = random_labels(rng, B, spec.layers.back().out_channels);
        const Trajectory tr = forward(spec, p, xs);
        CurvatureSettings s;
        CurvatureModel m(s);
        DdpOptions opt;
        opt.force_qux_zero = true;
        opt.keep_values = true;
        const BackwardResult res = backward_pass(spec, p, tr, ys, m, opt);

        std::vector<Vector> grads;
        for (int i = 0; i < B; ++i) {
            const auto si = static_cast<std::size_t>(i);
            grads.push_back(loss_gradient(LossKind::kCrossEntropy, tr.outputs()[si], ys[si]) / B);
        }
        const Gradients bp = backprop(spec, p, tr, grads);
        for (int t = 0; t <= spec.stages(); ++t) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(B); ++i) {
                const ValueState& v = res.values[static_cast<std::size_t>(t)][i];
                CHECK((v.v_x - bp.states[static_cast<std::size_t>(t)][i]).norm() < 1e-10);
            }
        }
        if (!residual) {
            for (int t = 0; t < spec.stages(); ++t) {
                const auto st = static_cast<std::size_t>(t);
                auto f = [&](const Vector& x) { return loss_from(spec, p, tr, ys, t, 1, x); };
                CHECK(rel_err(res.values[st][1].v_x, oracle::fd_gradient(f, tr.states[st][1])) < 1e-5);
            }
        }
    }
}

TEST_CASE("first-stage gains minimize the stacked quadratic model") {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        const NetworkSpec spec = oracle::mlp_spec({3, 3, 2}, Activation::kTanh);
        const ParamSet p = init_params(spec, static_cast<std::uint64_t>(trial));
        const auto xs = random_inputs(rng, 1, 3);
        const auto ys = random_labels(rng, 1, 2);
        const Trajectory tr = forward(spec, p, xs);
        const double gamma = 0.05;
        CurvatureModel m = gauss_newton(gamma);
        const BackwardResult res = backward_pass(spec, p, tr, ys, m, DdpOptions{});

        std::vector<oracle::LinearStage> fd;
        for (std::size_t t = 0; t < 2; ++t) fd.push_back(oracle::fd_layer(spec.layers[t], p.layers[t], tr.states[t][0]));
        const ValueState term = terminal_expand(LossKind::kCrossEntropy, tr.outputs()[0], ys[0], false);
        const auto [k0, K0] = oracle::stacked_first_stage(fd, term.v_x, term.v_xx, gamma);
        CHECK(rel_err(res.gains[0].k, k0) < 1e-6);
        CHECK(rel_err(res.gains[0].K[0].materialize(), K0) < 1e-6);
    }
}

TEST_CASE("backward pass matches dense DDP on the explicit stages") {
    std::mt19937_64 rng(34);
    const NetworkSpec spec = oracle::mlp_spec({4, 3, 3, 2}, Activation::kTanh);
    const ParamSet p = init_params(spec, 1);
    const auto xs = random_inputs(rng, 1, 4);
    const auto ys = random_labels(rng, 1, 2);
    const Trajectory tr = forward(spec, p, xs);
    const double gamma = 1e-2;
    const double lambda = 1e-3;
    CurvatureModel m = gauss_newton(gamma, lambda);
    DdpOptions opt;
    opt.weight_decay = lambda;
    opt.keep_values = true;
    const BackwardResult res = backward_pass(spec, p, tr, ys, m, opt);

    const ValueState term = terminal_expand(LossKind::kCrossEntropy, tr.outputs()[0], ys[0], false);
    std::vector<Vector> reg;
    for (const Matrix& w : p.layers) reg.push_back(lambda * linalg::vec(w));
    const auto want = oracle::dense_ddp(oracle::augmented_stages(spec, p, tr), term.v_x, term.v_xx, gamma, reg, lambda);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(rel_err(res.gains[t].k, want.k[t]) < 1e-10);
        CHECK(rel_err(res.gains[t].K[0].materialize(), want.K[t]) < 1e-10);
        CHECK(rel_err(res.values[t][0].v_x, want.vx[t]) < 1e-10);
        CHECK(rel_err(res.values[t][0].v_xx, want.vxx[t]) < 1e-10);
    }
}

TEST_CASE("zero terminal gradient gives zero open gains") {
    const NetworkSpec spec = oracle::mlp_spec({3, 4, 2}, Activation::kTanh);
    const ParamSet p = init_params(spec, 4);
    const Trajectory tr = forward(spec, p, {Vector::Ones(3), -Vector::Ones(3)});
    for (CurvatureKind k : {CurvatureKind::kSpherical, CurvatureKind::kGaussNewton}) {
        CurvatureSettings s;
        s.kind = k;
        s.damping = 1e-3;
        CurvatureModel m(s);
        DdpOptions opt;
        opt.loss = LossKind::kMeanSquared;
        const BackwardResult res = backward_pass(spec, p, tr, tr.outputs(), m, opt);
        for (const StageGains& g : res.gains) CHECK(g.k.isZero());
    }
}

TEST_CASE("forward update") {
    std::mt19937_64 rng(35);
    const NetworkSpec spec = oracle::mlp_spec({3, 4, 2}, Activation::kTanh);
    const ParamSet p = init_params(spec, 6);
    const auto xs = random_inputs(rng, 2, 3);
    const auto ys = random_labels(rng, 2, 2);
    const Trajectory tr = forward(spec, p, xs);
    CurvatureModel m = gauss_newton(1e-2);
    const BackwardResult res = backward_pass(spec, p, tr, ys, m, DdpOptions{});

    SUBCASE("zero gains leave the weights unchanged") {
        std::vector<StageGains> zero = res.gains;
        for (StageGains& g : zero) {
            g.k.setZero();
            for (Feedback& k : g.K) k = Feedback::dense(Matrix::Zero(k.rows(), k.cols()));
        }
        CHECK(forward_update(spec, p, tr, zero).flatten() == p.flatten());
    }
    SUBCASE("without feedback the open gains are a plain step") {
        std::vector<StageGains> open = res.gains;
        for (StageGains& g : open) g.K.assign(g.K.size(), Feedback());
        const ParamSet q = forward_update(spec, p, tr, open);
        for (std::size_t t = 0; t < 2; ++t) {
            CHECK(q.layers[t] == Matrix(p.layers[t] + linalg::unvec(res.gains[t].k, p.layers[t].rows(),
                                                                     p.layers[t].cols())));
        }
    }
    SUBCASE("first layer moves exactly by its open gain") {
        const ParamSet q = forward_update(spec, p, tr, res.gains);
        CHECK(q.layers[0] == Matrix(p.layers[0] + linalg::unvec(res.gains[0].k, p.layers[0].rows(),
                                                                 p.layers[0].cols())));
        CHECK(q.layers[1] != Matrix(p.layers[1] + linalg::unvec(res.gains[1].k, p.layers[1].rows(),
                                                                 p.layers[1].cols())));
    }
    SUBCASE("feedback acts on the replayed state differential") {
        const ParamSet q = forward_update(spec, p, tr, res.gains);
        Vector du = res.gains[1].k;
        for (std::size_t i = 0; i < 2; ++i) {
            const Vector x1 = layer_forward(spec.layers[0], q.layers[0], xs[i], nullptr);
            du += res.gains[1].K[i].apply(x1 - tr.states[1][i]);
        }
        CHECK((linalg::vec(q.layers[1] - p.layers[1]) - du).norm() < 1e-14);
    }
}

TEST_CASE("backward pass errors") {
    const NetworkSpec spec = oracle::mlp_spec({3, 4, 2}, Activation::kTanh);
    const ParamSet p = init_params(spec, 4);
    const Trajectory tr = forward(spec, p, {Vector::Ones(3)});
    SUBCASE("outer-product path needs the Gauss-Newton terminal") {
        CurvatureModel m{CurvatureSettings{}};
        DdpOptions opt;
        opt.outer_product = true;
        CHECK_THROWS_AS(backward_pass(spec, p, tr, {one_hot(0, 2)}, m, opt), ConfigError);
    }
    SUBCASE("singular curvature reports its stage") {
        CurvatureSettings s;
        s.kind = CurvatureKind::kKronecker;
        s.damping = 0.0;
        CurvatureModel m(s);
        DdpOptions opt;
        opt.loss = LossKind::kMeanSquared;
        try {
            backward_pass(spec, p, tr, tr.outputs(), m, opt);
            FAIL("expected a numerical error");
        } catch (const NumericalError& e) {
            CHECK(e.stage() == 1);
        }
    }
    SUBCASE("target count must match the batch") {
        CurvatureModel m{CurvatureSettings{}};
        CHECK_THROWS_AS(backward_pass(spec, p, tr, {}, m, DdpOptions{}), ConfigError);
    }
}
