#include "gtddp/trainer/optimizers.hpp"

#include <cmath>

#include "gtddp/errors.hpp"

namespace gtddp::trainer {

Vector sgd_update(const Vector& w, const Vector& g, double lr) { return w - lr * g; }

Vector rmsprop_update(const Vector& w, const Vector& g, MomentState& s, double lr, double beta2, double eps) {
    if (s.v.size() != g.size()) s.v = Vector::Zero(g.size());
    s.v = beta2 * s.v + (1.0 - beta2) * g.cwiseAbs2();
    ++s.t;
    return w - lr * g.cwiseQuotient((s.v.cwiseSqrt().array() + eps).matrix());
}

Vector adam_update(const Vector& w, const Vector& g, MomentState& s, double lr, double beta1, double beta2,
                   double eps) {
    if (s.v.size() != g.size()) {
        s.m = Vector::Zero(g.size());
        s.v = Vector::Zero(g.size());
    }
    ++s.t;
    s.m = beta1 * s.m + (1.0 - beta1) * g;
    s.v = beta2 * s.v + (1.0 - beta2) * g.cwiseAbs2();
    const Vector m_hat = s.m / (1.0 - std::pow(beta1, static_cast<double>(s.t)));
    const Vector v_hat = s.v / (1.0 - std::pow(beta2, static_cast<double>(s.t)));
    return w - lr * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + eps).matrix());
}

Matrix ekfac_update(const Matrix& w, const Matrix& g, EkfacState& s, const std::vector<const Matrix*>& patches,
                    const std::vector<Matrix>& cotangents, double scale, double damping, double decay) {
    s.factors = update_kron_stats(s.factors, patches, cotangents, decay);
    const linalg::SymEig ea = linalg::sym_eig(s.factors->a);
    const linalg::SymEig eb = linalg::sym_eig(s.factors->b);
    // Rows of g follow B (outputs), columns follow A (inputs).
    Matrix rotated = eb.basis.transpose() * g * ea.basis;
    for (Eigen::Index j = 0; j < rotated.cols(); ++j) {
        for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
            const double d = std::max(eb.values[i], 0.0) * std::max(ea.values[j], 0.0) + damping;
            if (!(d > 0.0)) throw NumericalError("singular Kronecker curvature");
            rotated(i, j) /= d;
        }
    }
    return w - scale * (eb.basis * rotated * ea.basis.transpose());
}

BaselineOptimizer::BaselineOptimizer(CurvatureSettings s) : s_(s) {
    if (s_.kind == CurvatureKind::kGaussNewton) throw ConfigError("no first-order baseline for gauss-newton");
    if (!(s_.lr > 0.0)) throw ConfigError("learning rate must be positive");
}

Matrix BaselineOptimizer::update_group(GroupKey key, const Matrix& w, const Matrix& grad,
                                       const std::vector<const Matrix*>& patches,
                                       const std::vector<Matrix>& cotangents) {
    const Matrix g = grad + s_.weight_decay * w;
    const Vector wv = linalg::vec(w);
    const Vector gv = linalg::vec(g);
    switch (s_.kind) {
        case CurvatureKind::kSpherical:
            return linalg::unvec(sgd_update(wv, gv, s_.lr), w.rows(), w.cols());
        case CurvatureKind::kRmsprop:
            return linalg::unvec(rmsprop_update(wv, gv, moments_[key], s_.lr, s_.beta2, s_.eps), w.rows(), w.cols());
        case CurvatureKind::kAdam:
            return linalg::unvec(adam_update(wv, gv, moments_[key], s_.lr, s_.beta1, s_.beta2, s_.eps), w.rows(),
                                 w.cols());
        case CurvatureKind::kKronecker:
            return ekfac_update(w, g, kron_[key], patches, cotangents, s_.scale_by_lr ? s_.lr : 1.0, s_.damping,
                                s_.kron_decay);
        case CurvatureKind::kGaussNewton: break;
    }
    throw ConfigError("unhandled baseline kind");
}

void BaselineOptimizer::step(const NetworkSpec& spec, ParamSet& params, const Trajectory& traj,
                             const Gradients& grads) {
    const auto batch = static_cast<double>(traj.batch);
    const bool kron = s_.kind == CurvatureKind::kKronecker;
    auto gather = [&](const std::vector<LayerCache>& caches, const std::vector<Matrix>& cot,
                      std::vector<const Matrix*>& patches, std::vector<Matrix>& scaled) {
        if (!kron) return;
        for (std::size_t i = 0; i < caches.size(); ++i) {
            patches.push_back(&caches[i].patches);
            // Per-sample cotangents at the scale of one sample's loss.
            scaled.push_back(batch * cot[i]);
        }
    };
    for (int t = 0; t < spec.stages(); ++t) {
        const auto st = static_cast<std::size_t>(t);
        std::vector<const Matrix*> patches;
        std::vector<Matrix> cot;
        gather(traj.caches[st], grads.layer_cotangents[st], patches, cot);
        params.layers[st] = update_group(layer_group(t), params.layers[st], grads.layers[st], patches, cot);
    }
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        if (!spec.blocks[b].projection) continue;
        std::vector<const Matrix*> patches;
        std::vector<Matrix> cot;
        gather(traj.projection_caches[b], grads.projection_cotangents[b], patches, cot);
        params.projections[b] = update_group(projection_group(static_cast<int>(b)), params.projections[b],
                                             grads.projections[b], patches, cot);
    }
}

}  // namespace gtddp::trainer
