#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gtddp/coop.hpp"
#include "gtddp/linalg.hpp"
#include "gtddp/network.hpp"
#include "gtddp/value.hpp"

namespace gtddp {

/// Substitutes for the weight curvature Q_uu.
/// kGaussNewton is the exact f_u^T V_xx f_u + l_uu and is meant for small problems and oracles.
enum class CurvatureKind { kSpherical, kRmsprop, kAdam, kKronecker, kGaussNewton };

CurvatureKind parse_curvature(const std::string& name);
std::string to_string(CurvatureKind k);

struct CurvatureSettings {
    CurvatureKind kind = CurvatureKind::kSpherical;
    double lr = 0.1;
    double damping = 0.0;
    double eps = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double kron_decay = 0.95;
    double weight_decay = 0.0;   // l_uu for the exact Gauss-Newton variant
    bool scale_by_lr = true;     // Kronecker and Gauss-Newton: effective curvature divided by lr
    bool coop_kron = true;       // cooperative stages couple the players through cross factors
    bool eigen_rescale = false;  // cooperative stages with shared factors use the rescaled eigenbasis
};

/// @brief Applies (Q_uu + damping I)^-1 for one parameter group.
class Preconditioner {
public:
    virtual ~Preconditioner() = default;
    virtual Vector solve(const Vector& g) const = 0;
    /// Direction whose negative is the open gain; moment-based variants substitute their
    /// running first moment for q_u.
    virtual Vector open_direction(const Vector& q_u) const { return solve(q_u); }
    /// Dense Q_uu + damping I, for small problems.
    virtual Matrix matrix() const = 0;
    Matrix solve_columns(const Matrix& m) const;
};

/// @brief Applies the inverse of the joint (u, v) curvature of a cooperative stage.
class JointPreconditioner {
public:
    virtual ~JointPreconditioner() = default;
    virtual std::pair<Vector, Vector> solve(const Vector& a, const Vector& b) const = 0;
    virtual std::pair<Vector, Vector> open_direction(const Vector& q_u, const Vector& q_v) const {
        return solve(q_u, q_v);
    }
};

/// (m + damping I) for a caller holding an explicit curvature matrix.
std::unique_ptr<Preconditioner> dense_preconditioner(const Matrix& m, double damping = 0.0);
/// Joint inverse of [[uu + g I, uv], [vu, vv + g I]].
std::unique_ptr<JointPreconditioner> dense_joint_preconditioner(const linalg::Block2x2& h, double damping = 0.0);

/// Per-group statistics gathered during one backward stage.
struct LayerStatistics {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Vector grad;                          // batch Q_u including l_u, column-major over the weight
    std::vector<const Matrix*> patches;   // per sample, patch_dim x positions
    std::vector<Matrix> cotangents;       // per sample dV/dh at per-sample-loss scale
    Matrix gauss_newton;                  // summed exact f_u^T V_xx f_u, kGaussNewton only
};

struct KronFactors {
    Matrix a;
    Matrix b;
};

/// Batch factors: a averages p p^T over samples and positions, b averages over samples
/// the position-summed g g^T.
KronFactors batch_kron_factors(const std::vector<const Matrix*>& patches, const std::vector<Matrix>& cotangents);
/// Cross factors E[p_u p_v^T] and E[g_u g_v^T]; both players must share the position count.
KronFactors cross_kron_factors(const std::vector<const Matrix*>& patches_u,
                               const std::vector<const Matrix*>& patches_v,
                               const std::vector<Matrix>& cot_u, const std::vector<Matrix>& cot_v);
/// EMA update running = decay * running + (1 - decay) * batch; the first batch replaces.
KronFactors update_kron_stats(const std::optional<KronFactors>& running, const std::vector<const Matrix*>& patches,
                              const std::vector<Matrix>& cotangents, double decay);

using GroupKey = int;
inline GroupKey layer_group(int t) { return t; }
inline GroupKey projection_group(int block) { return -1 - block; }

/// @brief Stateful curvature substitute. Buffers persist across iterations, one per group.
class CurvatureModel {
public:
    explicit CurvatureModel(CurvatureSettings s);

    const CurvatureSettings& settings() const { return s_; }

    /// Folds the stage statistics into the group's buffers and returns a snapshot solver.
    std::unique_ptr<Preconditioner> substitute_quu(GroupKey g, const LayerStatistics& stats);

    /// Joint solver for a cooperative stage. Updates both groups' buffers.
    /// gn_uv is the exact cross block, used by kGaussNewton only.
    std::unique_ptr<JointPreconditioner> substitute_joint(GroupKey u, const LayerStatistics& su, GroupKey v,
                                                          const LayerStatistics& sv, const Matrix& gn_uv);

    /// Smallest eigenvalue seen in any Kronecker factor after the last update.
    double min_factor_eigenvalue() const { return min_factor_eig_; }

private:
    struct GroupState {
        Vector m;
        Vector v;
        long step = 0;
        std::optional<KronFactors> kron;
    };

    std::unique_ptr<Preconditioner> build(GroupState& st, const LayerStatistics& stats);

    CurvatureSettings s_;
    std::map<GroupKey, GroupState> groups_;
    std::map<std::pair<GroupKey, GroupKey>, KronFactors> cross_;
    double min_factor_eig_ = 0.0;
};

/// c_next (1 - c_next s) clipped at zero, the coefficient of the propagated rank-1 value Hessian
/// when s = q^T (Q + damping)^-1 q for the stage's control sensitivities q.
double outer_coefficient(double c_next, double s, bool* clipped = nullptr);

/// @brief Rank-1 propagation through one plain stage: q_x = f_x^T z, q_u = f_u^T z and
/// the new coefficient. Returns the propagated value (z_x = q_x).
OuterProductValue outer_propagate(const LayerSpec& layer, const Matrix& w, const LayerCache& cache,
                                  const OuterProductValue& next, const Preconditioner& quu);

}  // namespace gtddp
