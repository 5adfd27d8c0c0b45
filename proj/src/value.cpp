#include "gtddp/value.hpp"

#include "gtddp/errors.hpp"

namespace gtddp {

std::size_t matrix_bytes(const Matrix& m) { return static_cast<std::size_t>(m.size()) * sizeof(double); }
std::size_t vector_bytes(const Vector& v) { return static_cast<std::size_t>(v.size()) * sizeof(double); }

Matrix ValueState::xx() const {
    if (outer) return outer->c * outer->z_x * outer->z_x.transpose();
    return v_xx;
}

Matrix ValueState::xr() const {
    if (outer) return outer->c * outer->z_x * outer->z_r.transpose();
    return v_xr;
}

Matrix ValueState::rr() const {
    if (outer) return outer->c * outer->z_r * outer->z_r.transpose();
    return v_rr;
}

std::size_t ValueState::bytes() const {
    std::size_t n = vector_bytes(v_x) + matrix_bytes(v_xx) + vector_bytes(v_r) + matrix_bytes(v_xr) +
                    matrix_bytes(v_rr);
    if (outer) n += vector_bytes(outer->z_x) + vector_bytes(outer->z_r) + sizeof(double);
    return n;
}

BatchValue blockdiag_batch(std::vector<ValueState> per_sample) { return per_sample; }

Feedback Feedback::dense(Matrix m) {
    Feedback f;
    f.dense_ = std::move(m);
    return f;
}

Feedback Feedback::rank1(Vector left, Vector right) {
    Feedback f;
    f.left_ = std::move(left);
    f.right_ = std::move(right);
    return f;
}

Eigen::Index Feedback::rows() const { return dense_ ? dense_->rows() : left_.size(); }
Eigen::Index Feedback::cols() const { return dense_ ? dense_->cols() : right_.size(); }

Vector Feedback::apply(const Vector& d) const {
    if (d.size() != cols()) throw ConfigError("feedback gain applied to a differential of the wrong size");
    if (dense_) return *dense_ * d;
    return left_ * right_.dot(d);
}

Matrix Feedback::materialize() const {
    if (dense_) return *dense_;
    return left_ * right_.transpose();
}

std::size_t Feedback::bytes() const {
    return dense_ ? matrix_bytes(*dense_) : vector_bytes(left_) + vector_bytes(right_);
}

std::size_t StageGains::bytes() const {
    std::size_t n = vector_bytes(k) + vector_bytes(kv);
    for (const auto* list : {&K, &G, &Kv, &Gv}) {
        for (const auto& f : *list) n += f.bytes();
    }
    return n;
}

std::size_t QExpansion::bytes() const {
    std::size_t n = 0;
    for (const auto* v : {&q_x, &q_u, &q_r, &q_v}) n += vector_bytes(*v);
    for (const auto* m : {&q_xx, &q_ux, &q_xr, &q_rr, &q_ur, &q_vx, &q_vr, &gn_uu, &gn_vv, &gn_uv}) {
        n += matrix_bytes(*m);
    }
    if (outer) {
        n += vector_bytes(outer->x) + vector_bytes(outer->r) + vector_bytes(outer->u) + vector_bytes(outer->v);
    }
    return n;
}

}  // namespace gtddp
