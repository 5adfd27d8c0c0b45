#include "gtddp/loss.hpp"

#include <cmath>

#include "gtddp/errors.hpp"

namespace gtddp {

LossKind parse_loss(const std::string& name) {
    if (name == "cross_entropy" || name == "ce") return LossKind::kCrossEntropy;
    if (name == "mse" || name == "mean_squared") return LossKind::kMeanSquared;
    throw ConfigError("unknown loss '" + name + "'");
}

Vector softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    return e / e.sum();
}

double loss_value(LossKind kind, const Vector& pred, const Vector& target) {
    if (pred.size() != target.size()) throw ConfigError("prediction and target sizes differ");
    if (kind == LossKind::kMeanSquared) return 0.5 * (pred - target).squaredNorm();
    const double m = pred.maxCoeff();
    const double lse = m + std::log((pred.array() - m).exp().sum());
    return -(target.array() * (pred.array() - lse)).sum();
}

Vector loss_gradient(LossKind kind, const Vector& pred, const Vector& target) {
    if (pred.size() != target.size()) throw ConfigError("prediction and target sizes differ");
    if (kind == LossKind::kMeanSquared) return pred - target;
    return target.sum() * softmax(pred) - target;
}

Matrix loss_hessian(LossKind kind, const Vector& pred, const Vector& target) {
    if (kind == LossKind::kMeanSquared) return Matrix::Identity(pred.size(), pred.size());
    const Vector p = softmax(pred);
    return target.sum() * (Matrix(p.asDiagonal()) - p * p.transpose());
}

ValueState terminal_expand(LossKind kind, const Vector& pred, const Vector& target, bool gauss_newton,
                           double weight) {
    ValueState v;
    const Vector g = loss_gradient(kind, pred, target);
    v.v_x = weight * g;
    if (gauss_newton) {
        v.outer = OuterProductValue{g, Vector(), weight};
    } else {
        v.v_xx = weight * loss_hessian(kind, pred, target);
    }
    return v;
}

Vector one_hot(int label, int classes) {
    if (label < 0 || label >= classes) {
        throw ConfigError("label " + std::to_string(label) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
    Vector v = Vector::Zero(classes);
    v(label) = 1.0;
    return v;
}

}  // namespace gtddp
