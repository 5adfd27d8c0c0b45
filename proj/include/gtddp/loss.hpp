#pragma once

#include <string>

#include "gtddp/linalg.hpp"
#include "gtddp/value.hpp"

namespace gtddp {

/// Cross-entropy is softmax-cross-entropy on logits; mean-squared is 0.5 * ||pred - target||^2.
enum class LossKind { kCrossEntropy, kMeanSquared };

LossKind parse_loss(const std::string& name);

double loss_value(LossKind kind, const Vector& pred, const Vector& target);
Vector loss_gradient(LossKind kind, const Vector& pred, const Vector& target);
Matrix loss_hessian(LossKind kind, const Vector& pred, const Vector& target);
Vector softmax(const Vector& logits);

/// @brief Terminal value derivatives of weight * loss.
/// With `gauss_newton` the Hessian is the rank-1 outer product of the loss gradient,
/// returned in factored form (z = grad, c = weight).
ValueState terminal_expand(LossKind kind, const Vector& pred, const Vector& target, bool gauss_newton,
                           double weight = 1.0);

Vector one_hot(int label, int classes);

}  // namespace gtddp
