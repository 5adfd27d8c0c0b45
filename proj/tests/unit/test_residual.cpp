#include <random>

#include "doctest.h"
#include "gtddp/ddp_core.hpp"
#include "gtddp/errors.hpp"
#include "gtddp/residual.hpp"
#include "oracles.hpp"

using namespace gtddp;
using oracle::random_vector;
using oracle::rel_err;

namespace {

struct Run {
    NetworkSpec spec;
    ParamSet params;
    Trajectory traj;
    std::vector<Vector> targets;
    BackwardResult res;
    oracle::DenseDdp want;
};

Run run_block(std::mt19937_64& rng, bool projection, bool conv, double gamma, std::uint64_t seed) {
    Run r;
    r.spec = oracle::residual_spec(rng, projection, conv);
    r.params = init_params(r.spec, seed);
    r.traj = forward(r.spec, r.params, {random_vector(rng, r.spec.input.size())});
    const int classes = r.spec.layers.back().out_channels;
    r.targets = {one_hot(std::uniform_int_distribution<int>(0, classes - 1)(rng), classes)};
    CurvatureSettings s;
    s.kind = CurvatureKind::kGaussNewton;
    s.lr = 1.0;
    s.damping = gamma;
    CurvatureModel m(s);
    DdpOptions opt;
    opt.keep_values = true;
    r.res = backward_pass(r.spec, r.params, r.traj, r.targets, m, opt);
    const ValueState term = terminal_expand(LossKind::kCrossEntropy, r.traj.outputs()[0], r.targets[0], false);
    r.want = oracle::dense_ddp(oracle::augmented_stages(r.spec, r.params, r.traj), term.v_x, term.v_xx, gamma);
    return r;
}

double worst_mismatch(const Run& r) {
    double worst = 0.0;
    for (int t = 0; t < r.spec.stages(); ++t) {
        const auto st = static_cast<std::size_t>(t);
        worst = std::max(worst, rel_err(oracle::augmented_open(r.res.gains[st]), r.want.k[st]));
        worst = std::max(worst, rel_err(oracle::augmented_feedback(r.spec, r.res.gains[st], t, 0), r.want.K[st]));
        worst = std::max(worst, rel_err(oracle::augmented_vx(r.res.values[st][0]), r.want.vx[st]));
        worst = std::max(worst, rel_err(oracle::augmented_vxx(r.res.values[st][0]), r.want.vxx[st]));
    }
    return worst;
}

StageInputs inputs_at(const Run& r, int t) {
    const auto st = static_cast<std::size_t>(t);
    StageInputs in;
    in.layer = &r.spec.layers[st];
    in.w = &r.params.layers[st];
    in.cache = &r.traj.caches[st][0];
    return in;
}

}  // namespace

TEST_CASE("entering a block sets the merge boundary conditions exactly") {
    std::mt19937_64 rng(41);
    ValueState v;
    v.v_x = random_vector(rng, 3);
    v.v_xx = oracle::random_spd(rng, 3);
    const ValueState in = enter_block(v);
    CHECK(in.v_r == v.v_x);
    CHECK(in.v_xr == v.v_xx);
    CHECK(in.v_rr == v.v_xx);
    CHECK_THROWS_AS(enter_block(in), ConfigError);

    ValueState o;
    o.v_x = v.v_x;
    o.outer = OuterProductValue{random_vector(rng, 3), {}, 0.7};
    const ValueState oi = enter_block(o);
    CHECK(oi.xr() == o.xx());
    CHECK(oi.rr() == o.xx());
}

TEST_CASE("residual gain boundary cases") {
    std::mt19937_64 rng(42);
    const NetworkSpec spec = oracle::mlp_spec({3, 3}, Activation::kTanh);
    const ParamSet p = init_params(spec, 1);
    const Trajectory tr = forward(spec, p, {random_vector(rng, 3)});
    ValueState next;
    next.v_x = random_vector(rng, 3);
    next.v_xx = oracle::random_spd(rng, 3);
    next = enter_block(next);

    const QExpansion q = expand_q(spec.layers[0], p.layers[0], tr.caches[0][0], next, 0.0);
    const auto quu = dense_preconditioner(q.gn_uu, 0.1);
    // V_xr = V_xx at the merge stage: G is K's formula with the residual channel in place of f_x
    const Matrix fu = jacobian_param(spec.layers[0], tr.caches[0][0]);
    CHECK((residual_gain(q, *quu) - (-quu->solve_columns(fu.transpose() * next.v_xx))).norm() < 1e-12);

    ValueState zero = next;
    zero.v_xr.setZero();
    const QExpansion qz = expand_q(spec.layers[0], p.layers[0], tr.caches[0][0], zero, 0.0);
    CHECK(residual_gain(qz, *quu).isZero());
}

TEST_CASE("zero residual gain leaves the shortcut terms to pure transport") {
    std::mt19937_64 rng(43);
    const NetworkSpec spec = oracle::mlp_spec({3, 3}, Activation::kTanh);
    const ParamSet p = init_params(spec, 1);
    const Trajectory tr = forward(spec, p, {random_vector(rng, 3)});
    ValueState next;
    next.has_residual = true;
    next.v_x = random_vector(rng, 3);
    next.v_xx = oracle::random_spd(rng, 3);
    next.v_r = random_vector(rng, 3);
    next.v_xr = Matrix::Zero(3, 3);
    next.v_rr = oracle::random_spd(rng, 3);
    const QExpansion q = expand_q(spec.layers[0], p.layers[0], tr.caches[0][0], next, 0.0);
    const auto quu = dense_preconditioner(q.gn_uu, 0.1);
    const StageGains g = solve_gains({q}, q.q_u, *quu);
    CHECK(g.G[0].materialize().isZero());
    const ValueState v = value_recursion(q, g, 0);
    CHECK(v.v_r == next.v_r);
    CHECK(v.v_rr == next.v_rr);
    CHECK(v.v_xr.isZero());

    const ValueState none = value_recursion(q, g, 0, true);
    CHECK(none.v_xr == jacobian_state(spec.layers[0], p.layers[0], tr.caches[0][0]).transpose() * next.v_xr);
}

TEST_CASE("without feedback the split merge adds the shortcut gradient") {
    ValueState at_split;
    at_split.has_residual = true;
    at_split.v_x = Vector::LinSpaced(2, 1.0, 2.0);
    at_split.v_r = Vector::LinSpaced(2, 10.0, 20.0);
    at_split.v_xx = Matrix::Identity(2, 2);
    at_split.v_xr = Matrix::Constant(2, 2, 0.5);
    at_split.v_rr = 3.0 * Matrix::Identity(2, 2);
    const ValueState v = split_merge(at_split);
    CHECK(!v.has_residual);
    CHECK(v.v_x == at_split.v_x + at_split.v_r);
    CHECK(v.v_xx == Matrix(4.0 * Matrix::Identity(2, 2) + Matrix::Constant(2, 2, 1.0)));
}

TEST_CASE("block recursion matches DDP on the explicitly augmented system") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 12; ++trial) {
        const bool projection = trial % 3 != 0;
        const bool conv = trial >= 9;
        const Run r = run_block(rng, projection, conv, 1e-2, static_cast<std::uint64_t>(trial));
        CAPTURE(trial);
        CHECK(worst_mismatch(r) < 1e-8);
    }
}

TEST_CASE("degenerate single-stage block equals the doubled path") {
    NetworkSpec spec = oracle::mlp_spec({3, 3, 3, 2}, Activation::kTanh);
    spec.blocks.push_back({1, 1, std::nullopt, -1});
    spec.resolve();
    std::mt19937_64 rng(45);
    const ParamSet p = init_params(spec, 3);
    const Trajectory tr = forward(spec, p, {random_vector(rng, 3)});
    CHECK(tr.states[2][0] == Vector(layer_forward(spec.layers[1], p.layers[1], tr.states[1][0], nullptr) +
                                    tr.states[1][0]));
    CurvatureSettings s;
    s.kind = CurvatureKind::kGaussNewton;
    s.lr = 1.0;
    s.damping = 1e-2;
    CurvatureModel m(s);
    DdpOptions opt;
    opt.keep_values = true;
    const BackwardResult res = backward_pass(spec, p, tr, {one_hot(1, 2)}, m, opt);

    // f(x) + x as one feedforward stage
    auto stages = oracle::augmented_stages(spec, p, tr);
    const Matrix fx = jacobian_state(spec.layers[1], p.layers[1], tr.caches[1][0]);
    CHECK((stages[1].fx - (fx + Matrix::Identity(3, 3))).norm() == 0.0);
    const ValueState term = terminal_expand(LossKind::kCrossEntropy, tr.outputs()[0], one_hot(1, 2), false);
    const auto want = oracle::dense_ddp(stages, term.v_x, term.v_xx, 1e-2);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(rel_err(res.gains[t].k, want.k[t]) < 1e-10);
        CHECK(rel_err(res.values[t][0].v_xx, want.vxx[t]) < 1e-10);
    }
}

TEST_CASE("shortcut value terms telescope over the block") {
    std::mt19937_64 rng(46);
    for (int trial = 0; trial < 5; ++trial) {
        const double gamma = 1e-2;
        const Run r = run_block(rng, false, false, gamma, static_cast<std::uint64_t>(trial));
        const ResidualBlock& b = r.spec.blocks[0];
        const ValueState& after = r.res.values[static_cast<std::size_t>(b.merge + 1)][0];
        Vector sum_k = Vector::Zero(after.v_x.size());
        Matrix sum_g = Matrix::Zero(after.v_x.size(), after.v_x.size());
        for (int t = b.split; t <= b.merge; ++t) {
            const auto st = static_cast<std::size_t>(t);
            const Matrix& quu = r.want.quu[st];
            const Matrix g = r.res.gains[st].G[0].materialize();
            sum_k += g.transpose() * quu * r.res.gains[st].k;
            sum_g += g.transpose() * quu * g;
        }
        // Unfolded value at the split stage.
        const auto ss = static_cast<std::size_t>(b.split);
        const ValueState& next = r.res.values[ss + 1][0];
        const ValueState nb = b.split == b.merge ? enter_block(next) : next;
        const QExpansion q = expand_stage(inputs_at(r, b.split), nb);
        const ValueState v = value_recursion(q, r.res.gains[ss], 0);
        CHECK(rel_err(v.v_r, after.v_x - sum_k) < 1e-10);
        CHECK(rel_err(v.v_rr, after.v_xx - sum_g) < 1e-10);
    }
}
