#include "gtddp/curvature.hpp"

#include <algorithm>
#include <cmath>

#include "gtddp/errors.hpp"

namespace gtddp {

namespace {

class DiagonalPreconditioner final : public Preconditioner {
public:
    DiagonalPreconditioner(Vector diag, std::optional<Vector> momentum)
        : diag_(std::move(diag)), momentum_(std::move(momentum)) {}

    Vector solve(const Vector& g) const override { return g.cwiseQuotient(diag_); }
    Vector open_direction(const Vector& q_u) const override {
        return momentum_ ? solve(*momentum_) : solve(q_u);
    }
    Matrix matrix() const override { return diag_.asDiagonal(); }

private:
    Vector diag_;
    std::optional<Vector> momentum_;
};

class DensePreconditioner final : public Preconditioner {
public:
    explicit DensePreconditioner(Matrix m) : m_(std::move(m)), llt_(m_) {
        if (llt_.info() != Eigen::Success) throw NumericalError("indefinite curvature");
    }

    Vector solve(const Vector& g) const override { return llt_.solve(g); }
    Matrix matrix() const override { return m_; }

private:
    Matrix m_;
    Eigen::LLT<Matrix> llt_;
};

/// (A (x) B + damping I) / scale, solved in the factor eigenbases.
class KroneckerPreconditioner final : public Preconditioner {
public:
    KroneckerPreconditioner(const KronFactors& f, double damping, double scale)
        : ea_(linalg::sym_eig(f.a)), eb_(linalg::sym_eig(f.b)), damping_(damping), scale_(scale) {
        min_eig_ = std::min(ea_.values.minCoeff(), eb_.values.minCoeff());
        ea_.values = ea_.values.cwiseMax(0.0);
        eb_.values = eb_.values.cwiseMax(0.0);
        denom_ = eb_.values * ea_.values.transpose();
        denom_.array() += damping_;
        if ((denom_.array() <= 0.0).any()) throw NumericalError("indefinite curvature");
    }

    Vector solve(const Vector& g) const override {
        const Matrix x = linalg::unvec(g, eb_.values.size(), ea_.values.size());
        Matrix y = eb_.basis.transpose() * x * ea_.basis;
        y.array() /= denom_.array();
        return scale_ * linalg::vec(eb_.basis * y * ea_.basis.transpose());
    }

    Matrix matrix() const override {
        const Matrix k = linalg::kron(ea_.reconstruct(), eb_.reconstruct());
        return (k + damping_ * Matrix::Identity(k.rows(), k.cols())) / scale_;
    }

    double min_eig() const { return min_eig_; }

private:
    double min_eig_ = 0.0;
    linalg::SymEig ea_;
    linalg::SymEig eb_;
    Matrix denom_;
    double damping_;
    double scale_;
};

class BlockDiagonalJoint final : public JointPreconditioner {
public:
    BlockDiagonalJoint(std::unique_ptr<Preconditioner> u, std::unique_ptr<Preconditioner> v)
        : u_(std::move(u)), v_(std::move(v)) {}

    std::pair<Vector, Vector> solve(const Vector& a, const Vector& b) const override {
        return {u_->solve(a), v_->solve(b)};
    }
    std::pair<Vector, Vector> open_direction(const Vector& q_u, const Vector& q_v) const override {
        return {u_->open_direction(q_u), v_->open_direction(q_v)};
    }

private:
    std::unique_ptr<Preconditioner> u_;
    std::unique_ptr<Preconditioner> v_;
};

class KroneckerJoint final : public JointPreconditioner {
public:
    KroneckerJoint(const KronBlocks& f, double damping, double scale)
        : solver_(f, damping), ru_(f.b_uu.rows()), cu_(f.a_uu.rows()), rv_(f.b_vv.rows()),
          cv_(f.a_vv.rows()), scale_(scale) {}

    std::pair<Vector, Vector> solve(const Vector& a, const Vector& b) const override {
        auto [xu, xv] = solver_.apply(linalg::unvec(a, ru_, cu_), linalg::unvec(b, rv_, cv_));
        return {scale_ * linalg::vec(xu), scale_ * linalg::vec(xv)};
    }

private:
    CoopKronSolver solver_;
    Eigen::Index ru_, cu_, rv_, cv_;
    double scale_;
};

/// Shared factors: per eigendirection the joint curvature is [[l+g, -l], [-l, l+g]].
class EigenRescaleJoint final : public JointPreconditioner {
public:
    EigenRescaleJoint(const KronFactors& f, double damping, double scale)
        : ea_(linalg::sym_eig(f.a)), eb_(linalg::sym_eig(f.b)), damping_(damping), scale_(scale) {
        if (!(damping > 0.0)) throw ConfigError("eigen rescaling needs positive damping");
        lambda_ = eb_.values.cwiseMax(0.0) * ea_.values.cwiseMax(0.0).transpose();
    }

    std::pair<Vector, Vector> solve(const Vector& a, const Vector& b) const override {
        const Eigen::Index r = eb_.values.size();
        const Eigen::Index c = ea_.values.size();
        const Matrix pa = eb_.basis.transpose() * linalg::unvec(a, r, c) * ea_.basis;
        const Matrix pb = eb_.basis.transpose() * linalg::unvec(b, r, c) * ea_.basis;
        const Eigen::ArrayXXd l = lambda_.array();
        const Eigen::ArrayXXd det = damping_ * (2.0 * l + damping_);
        const Matrix xa = (((l + damping_) * pa.array() + l * pb.array()) / det).matrix();
        const Matrix xb = ((l * pa.array() + (l + damping_) * pb.array()) / det).matrix();
        return {scale_ * linalg::vec(eb_.basis * xa * ea_.basis.transpose()),
                scale_ * linalg::vec(eb_.basis * xb * ea_.basis.transpose())};
    }

private:
    linalg::SymEig ea_;
    linalg::SymEig eb_;
    Matrix lambda_;
    double damping_;
    double scale_;
};

class DenseJoint final : public JointPreconditioner {
public:
    DenseJoint(const linalg::Block2x2& h, double damping)
        : nu_(h.uu.rows()), inv_(linalg::schur_block_inverse(h, damping).assemble()) {}

    std::pair<Vector, Vector> solve(const Vector& a, const Vector& b) const override {
        Vector ab(a.size() + b.size());
        ab << a, b;
        const Vector x = inv_ * ab;
        return {x.head(nu_), x.tail(x.size() - nu_)};
    }

private:
    Eigen::Index nu_;
    Matrix inv_;
};

void check_stats(const LayerStatistics& s) {
    if (s.grad.size() != s.rows * s.cols) throw ConfigError("curvature statistics: gradient size mismatch");
}

}  // namespace

std::unique_ptr<Preconditioner> dense_preconditioner(const Matrix& m, double damping) {
    return std::make_unique<DensePreconditioner>(m + damping * Matrix::Identity(m.rows(), m.cols()));
}

std::unique_ptr<JointPreconditioner> dense_joint_preconditioner(const linalg::Block2x2& h, double damping) {
    return std::make_unique<DenseJoint>(h, damping);
}

CurvatureKind parse_curvature(const std::string& name) {
    if (name == "spherical" || name == "sgd") return CurvatureKind::kSpherical;
    if (name == "rmsprop") return CurvatureKind::kRmsprop;
    if (name == "adam") return CurvatureKind::kAdam;
    if (name == "kronecker" || name == "ekfac") return CurvatureKind::kKronecker;
    if (name == "gauss_newton" || name == "gn") return CurvatureKind::kGaussNewton;
    throw ConfigError("unknown curvature '" + name + "'");
}

std::string to_string(CurvatureKind k) {
    switch (k) {
        case CurvatureKind::kRmsprop: return "rmsprop";
        case CurvatureKind::kAdam: return "adam";
        case CurvatureKind::kKronecker: return "kronecker";
        case CurvatureKind::kGaussNewton: return "gauss_newton";
        case CurvatureKind::kSpherical: break;
    }
    return "spherical";
}

Matrix Preconditioner::solve_columns(const Matrix& m) const {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = solve(m.col(j));
    return out;
}

KronFactors batch_kron_factors(const std::vector<const Matrix*>& patches, const std::vector<Matrix>& cotangents) {
    if (patches.empty() || patches.size() != cotangents.size()) {
        throw ConfigError("Kronecker statistics need one patch matrix and one cotangent per sample");
    }
    const double n = static_cast<double>(patches.size());
    const double positions = static_cast<double>(patches.front()->cols());
    KronFactors f{Matrix::Zero(patches.front()->rows(), patches.front()->rows()),
                  Matrix::Zero(cotangents.front().rows(), cotangents.front().rows())};
    for (std::size_t i = 0; i < patches.size(); ++i) {
        f.a.noalias() += *patches[i] * patches[i]->transpose();
        f.b.noalias() += cotangents[i] * cotangents[i].transpose();
    }
    f.a /= n * positions;
    f.b /= n;
    return f;
}

KronFactors cross_kron_factors(const std::vector<const Matrix*>& patches_u,
                               const std::vector<const Matrix*>& patches_v,
                               const std::vector<Matrix>& cot_u, const std::vector<Matrix>& cot_v) {
    if (patches_u.empty() || patches_u.size() != patches_v.size() || cot_u.size() != patches_u.size() ||
        cot_v.size() != patches_u.size()) {
        throw ConfigError("cross Kronecker statistics need matching per-sample inputs");
    }
    if (patches_u.front()->cols() != patches_v.front()->cols()) {
        throw ConfigError("cooperative Kronecker factors need both players on the same spatial grid");
    }
    const double n = static_cast<double>(patches_u.size());
    const double positions = static_cast<double>(patches_u.front()->cols());
    KronFactors f{Matrix::Zero(patches_u.front()->rows(), patches_v.front()->rows()),
                  Matrix::Zero(cot_u.front().rows(), cot_v.front().rows())};
    for (std::size_t i = 0; i < patches_u.size(); ++i) {
        f.a.noalias() += *patches_u[i] * patches_v[i]->transpose();
        f.b.noalias() += cot_u[i] * cot_v[i].transpose();
    }
    f.a /= n * positions;
    f.b /= n;
    return f;
}

KronFactors update_kron_stats(const std::optional<KronFactors>& running, const std::vector<const Matrix*>& patches,
                              const std::vector<Matrix>& cotangents, double decay) {
    KronFactors batch = batch_kron_factors(patches, cotangents);
    if (!running) return batch;
    return {decay * running->a + (1.0 - decay) * batch.a, decay * running->b + (1.0 - decay) * batch.b};
}

CurvatureModel::CurvatureModel(CurvatureSettings s) : s_(s) {
    if (!(s_.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (s_.damping < 0.0) throw ConfigError("damping must be non-negative");
    if (s_.kron_decay < 0.0 || s_.kron_decay >= 1.0) throw ConfigError("Kronecker decay must be in [0, 1)");
}

std::unique_ptr<Preconditioner> CurvatureModel::build(GroupState& st, const LayerStatistics& stats) {
    check_stats(stats);
    const Eigen::Index n = stats.grad.size();
    const double scale = s_.scale_by_lr ? s_.lr : 1.0;
    switch (s_.kind) {
        case CurvatureKind::kSpherical:
            return std::make_unique<DiagonalPreconditioner>(Vector::Constant(n, 1.0 / s_.lr + s_.damping),
                                                            std::nullopt);
        case CurvatureKind::kRmsprop: {
            if (st.v.size() != n) st.v = Vector::Zero(n);
            st.v = s_.beta2 * st.v + (1.0 - s_.beta2) * stats.grad.cwiseAbs2();
            Vector d = (st.v.cwiseSqrt().array() + s_.eps) / s_.lr + s_.damping;
            return std::make_unique<DiagonalPreconditioner>(std::move(d), std::nullopt);
        }
        case CurvatureKind::kAdam: {
            if (st.v.size() != n) {
                st.v = Vector::Zero(n);
                st.m = Vector::Zero(n);
            }
            ++st.step;
            st.m = s_.beta1 * st.m + (1.0 - s_.beta1) * stats.grad;
            st.v = s_.beta2 * st.v + (1.0 - s_.beta2) * stats.grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(st.step));
            const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(st.step));
            Vector d = ((st.v / c2).cwiseSqrt().array() + s_.eps) / s_.lr + s_.damping;
            return std::make_unique<DiagonalPreconditioner>(std::move(d), Vector(st.m / c1));
        }
        case CurvatureKind::kKronecker: {
            st.kron = update_kron_stats(st.kron, stats.patches, stats.cotangents, s_.kron_decay);
            if (st.kron->a.rows() != stats.cols || st.kron->b.rows() != stats.rows) {
                throw ConfigError("Kronecker factor shapes do not match the weight");
            }
            auto p = std::make_unique<KroneckerPreconditioner>(*st.kron, s_.damping, scale);
            min_factor_eig_ = p->min_eig();
            return p;
        }
        case CurvatureKind::kGaussNewton: {
            if (stats.gauss_newton.rows() != n) throw ConfigError("exact Gauss-Newton block missing");
            Matrix m = stats.gauss_newton + (s_.weight_decay + s_.damping) * Matrix::Identity(n, n);
            return std::make_unique<DensePreconditioner>(linalg::symmetrize(m) / scale);
        }
    }
    throw ConfigError("unhandled curvature kind");
}

std::unique_ptr<Preconditioner> CurvatureModel::substitute_quu(GroupKey g, const LayerStatistics& stats) {
    return build(groups_[g], stats);
}

std::unique_ptr<JointPreconditioner> CurvatureModel::substitute_joint(GroupKey u, const LayerStatistics& su,
                                                                      GroupKey v, const LayerStatistics& sv,
                                                                      const Matrix& gn_uv) {
    const double scale = s_.scale_by_lr ? s_.lr : 1.0;
    if (s_.kind == CurvatureKind::kGaussNewton) {
        check_stats(su);
        check_stats(sv);
        const Eigen::Index nu = su.grad.size();
        const Eigen::Index nv = sv.grad.size();
        if (su.gauss_newton.rows() != nu || sv.gauss_newton.rows() != nv || gn_uv.rows() != nu ||
            gn_uv.cols() != nv) {
            throw ConfigError("exact Gauss-Newton cooperative blocks missing");
        }
        linalg::Block2x2 h{(su.gauss_newton + s_.weight_decay * Matrix::Identity(nu, nu)) / scale, gn_uv / scale,
                           gn_uv.transpose() / scale,
                           (sv.gauss_newton + s_.weight_decay * Matrix::Identity(nv, nv)) / scale};
        return std::make_unique<DenseJoint>(h, s_.damping / scale);
    }
    if (s_.kind != CurvatureKind::kKronecker || (!s_.coop_kron && !s_.eigen_rescale)) {
        auto pu = build(groups_[u], su);
        auto pv = build(groups_[v], sv);
        return std::make_unique<BlockDiagonalJoint>(std::move(pu), std::move(pv));
    }

    GroupState& gu = groups_[u];
    GroupState& gv = groups_[v];
    gu.kron = update_kron_stats(gu.kron, su.patches, su.cotangents, s_.kron_decay);
    gv.kron = update_kron_stats(gv.kron, sv.patches, sv.cotangents, s_.kron_decay);
    if (s_.eigen_rescale) {
        if (su.rows != sv.rows || su.cols != sv.cols) {
            throw ConfigError("eigen rescaling needs both players to share weight shapes");
        }
        return std::make_unique<EigenRescaleJoint>(*gu.kron, s_.damping, scale);
    }
    const KronFactors batch_cross = cross_kron_factors(su.patches, sv.patches, su.cotangents, sv.cotangents);
    auto it = cross_.find({u, v});
    if (it == cross_.end()) {
        it = cross_.emplace(std::make_pair(u, v), batch_cross).first;
    } else {
        it->second.a = s_.kron_decay * it->second.a + (1.0 - s_.kron_decay) * batch_cross.a;
        it->second.b = s_.kron_decay * it->second.b + (1.0 - s_.kron_decay) * batch_cross.b;
    }
    const KronBlocks blocks{gu.kron->a, gu.kron->b, gv.kron->a, gv.kron->b, it->second.a, it->second.b};
    return std::make_unique<KroneckerJoint>(blocks, s_.damping, scale);
}

double outer_coefficient(double c_next, double s, bool* clipped) {
    double c = c_next * (1.0 - c_next * s);
    const bool clip = c < 0.0;
    if (clipped) *clipped = clip;
    return clip ? 0.0 : c;
}

OuterProductValue outer_propagate(const LayerSpec& layer, const Matrix& w, const LayerCache& cache,
                                  const OuterProductValue& next, const Preconditioner& quu) {
    const Vector q_x = vjp_state(layer, w, cache, next.z_x);
    const Vector q_u = linalg::vec(vjp_param(layer, cache, next.z_x));
    const double s = q_u.dot(quu.solve(q_u));
    return {q_x, Vector(), outer_coefficient(next.c, s)};
}

}  // namespace gtddp
