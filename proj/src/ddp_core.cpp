#include "gtddp/ddp_core.hpp"

#include <algorithm>

#include "gtddp/errors.hpp"
#include "gtddp/residual.hpp"

namespace gtddp {

namespace {

Vector param_grad(const LayerSpec& layer, const LayerCache& cache, const Vector& v) {
    return linalg::vec(vjp_param(layer, cache, v));
}

Matrix to_cotangent(const LayerSpec& layer, const LayerCache& cache, const Vector& v, double scale) {
    return scale * activation_derivative(layer, cache)
                       .cwiseProduct(unflatten_channels(v, cache.pre.rows(), cache.pre.cols()));
}

// Sum of the cross-term contributions q_w^T left over both players of a rank-1 stage.
double rank1_feedback_dot(const QExpansion::Outer& o, const Feedback& ku, const Feedback* kv) {
    double d = 0.0;
    if (!ku.empty()) d += o.u.dot(ku.left());
    if (kv && !kv->empty()) d += o.v.dot(kv->left());
    return d;
}

}  // namespace

QExpansion expand_stage(const StageInputs& in, const ValueState& next) {
    const LayerSpec& layer = *in.layer;
    const Matrix& w = *in.w;
    const LayerCache& cache = *in.cache;
    const bool coop = in.proj != nullptr;
    if (coop && !next.has_residual) throw ConfigError("cooperative stage needs residual value terms");

    auto transport_r = [&](const Vector& v) -> Vector {
        return coop ? vjp_state(*in.proj, *in.pw, *in.pcache, v) : v;
    };

    QExpansion q;
    q.q_x = vjp_state(layer, w, cache, next.v_x);
    q.q_u = param_grad(layer, cache, next.v_x);
    q.has_residual = next.has_residual;
    q.has_coop = coop;
    if (next.has_residual) {
        q.q_r = transport_r(next.v_r);
        if (coop) q.q_v = param_grad(*in.proj, *in.pcache, next.v_r);
    }

    if (next.outer) {
        const OuterProductValue& o = *next.outer;
        QExpansion::Outer f;
        f.c = o.c;
        f.x = vjp_state(layer, w, cache, o.z_x);
        f.u = param_grad(layer, cache, o.z_x);
        if (next.has_residual) {
            f.r = transport_r(o.z_r);
            if (coop) f.v = param_grad(*in.proj, *in.pcache, o.z_r);
        }
        if (in.gauss_newton) {
            q.gn_uu = f.c * f.u * f.u.transpose();
            if (coop) {
                q.gn_vv = f.c * f.v * f.v.transpose();
                q.gn_uv = f.c * f.u * f.v.transpose();
            }
        }
        q.outer = std::move(f);
        return q;
    }

    const Matrix fx = jacobian_state(layer, w, cache);
    const Matrix m = next.v_xx * fx;
    q.q_xx = linalg::symmetrize(fx.transpose() * m);
    q.q_ux = vjp_param_columns(layer, cache, m);
    Matrix tr;
    if (coop) tr = jacobian_state(*in.proj, *in.pw, *in.pcache);
    if (next.has_residual) {
        const Matrix n = coop ? Matrix(next.v_xr * tr) : next.v_xr;
        q.q_xr = fx.transpose() * n;
        q.q_ur = vjp_param_columns(layer, cache, n);
        q.q_rr = coop ? linalg::symmetrize(tr.transpose() * next.v_rr * tr) : next.v_rr;
        if (coop) {
            q.q_vx = vjp_param_columns(*in.proj, *in.pcache, next.v_xr.transpose() * fx);
            q.q_vr = vjp_param_columns(*in.proj, *in.pcache, next.v_rr * tr);
        }
    }
    if (in.gauss_newton) {
        const Matrix fu = jacobian_param(layer, cache);
        q.gn_uu = linalg::symmetrize(fu.transpose() * next.v_xx * fu);
        if (coop) {
            const Matrix hv = jacobian_param(*in.proj, *in.pcache);
            q.gn_vv = linalg::symmetrize(hv.transpose() * next.v_rr * hv);
            q.gn_uv = fu.transpose() * next.v_xr * hv;
        }
    }
    return q;
}

QExpansion expand_q(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const ValueState& next,
                    double weight_decay, bool gauss_newton) {
    StageInputs in;
    in.layer = &layer;
    in.w = &w;
    in.cache = &cache;
    in.gauss_newton = gauss_newton;
    QExpansion q = expand_stage(in, next);
    q.q_u += weight_decay * linalg::vec(w);
    if (gauss_newton) q.gn_uu += weight_decay * Matrix::Identity(q.q_u.size(), q.q_u.size());
    return q;
}

StageGains solve_gains(const std::vector<QExpansion>& q, const Vector& q_u_total, const Preconditioner& quu,
                       bool drop_feedback) {
    StageGains g;
    g.k = -quu.open_direction(q_u_total);
    g.K.resize(q.size());
    g.G.resize(q.size());
    if (drop_feedback) return g;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const QExpansion& e = q[i];
        if (e.outer) {
            const Vector left = -e.outer->c * quu.solve(e.outer->u);
            g.K[i] = Feedback::rank1(left, e.outer->x);
            if (e.has_residual) g.G[i] = Feedback::rank1(left, e.outer->r);
        } else {
            g.K[i] = Feedback::dense(-quu.solve_columns(e.q_ux));
            if (e.has_residual) g.G[i] = Feedback::dense(-quu.solve_columns(e.q_ur));
        }
    }
    return g;
}

StageGains solve_coop_gains(const std::vector<QExpansion>& q, const Vector& q_u_total, const Vector& q_v_total,
                            const JointPreconditioner& joint, bool drop_feedback) {
    StageGains g;
    g.coop = true;
    auto [du, dv] = joint.open_direction(q_u_total, q_v_total);
    g.k = -du;
    g.kv = -dv;
    g.K.resize(q.size());
    g.G.resize(q.size());
    g.Kv.resize(q.size());
    g.Gv.resize(q.size());
    if (drop_feedback) return g;

    auto solve_cols = [&](const Matrix& a, const Matrix& b, Matrix& xa, Matrix& xb) {
        xa.resize(a.rows(), a.cols());
        xb.resize(b.rows(), b.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            auto [sa, sb] = joint.solve(a.col(j), b.col(j));
            xa.col(j) = -sa;
            xb.col(j) = -sb;
        }
    };
    for (std::size_t i = 0; i < q.size(); ++i) {
        const QExpansion& e = q[i];
        if (!e.has_coop) throw ConfigError("cooperative gains need cooperative expansions");
        if (e.outer) {
            auto [au, av] = joint.solve(e.outer->u, e.outer->v);
            const Vector lu = -e.outer->c * au;
            const Vector lv = -e.outer->c * av;
            g.K[i] = Feedback::rank1(lu, e.outer->x);
            g.G[i] = Feedback::rank1(lu, e.outer->r);
            g.Kv[i] = Feedback::rank1(lv, e.outer->x);
            g.Gv[i] = Feedback::rank1(lv, e.outer->r);
        } else {
            Matrix k_u, k_v, g_u, g_v;
            solve_cols(e.q_ux, e.q_vx, k_u, k_v);
            solve_cols(e.q_ur, e.q_vr, g_u, g_v);
            g.K[i] = Feedback::dense(std::move(k_u));
            g.Kv[i] = Feedback::dense(std::move(k_v));
            g.G[i] = Feedback::dense(std::move(g_u));
            g.Gv[i] = Feedback::dense(std::move(g_v));
        }
    }
    return g;
}

ValueState value_recursion(const QExpansion& q, const StageGains& gains, std::size_t i, bool drop_feedback,
                           bool* clipped) {
    if (clipped) *clipped = false;
    ValueState v;
    v.has_residual = q.has_residual;
    v.v_x = q.q_x;
    if (q.has_residual) v.v_r = q.q_r;

    if (q.outer) {
        const QExpansion::Outer& o = *q.outer;
        double c = o.c;
        if (!drop_feedback) {
            double open = o.u.dot(gains.k);
            if (gains.coop) open += o.v.dot(gains.kv);
            v.v_x += o.c * open * o.x;
            if (q.has_residual) v.v_r += o.c * open * o.r;
            const double d = rank1_feedback_dot(o, gains.K[i], gains.coop ? &gains.Kv[i] : nullptr);
            c = o.c * (1.0 + d);
            if (c < 0.0) {
                if (clipped) *clipped = true;
                c = 0.0;
            }
        }
        v.outer = OuterProductValue{o.x, q.has_residual ? o.r : Vector(), c};
        return v;
    }

    v.v_xx = q.q_xx;
    if (q.has_residual) {
        v.v_xr = q.q_xr;
        v.v_rr = q.q_rr;
    }
    if (drop_feedback) return v;

    v.v_x += q.q_ux.transpose() * gains.k;
    v.v_xx += q.q_ux.transpose() * gains.K[i].materialize();
    if (q.has_residual) {
        v.v_r += q.q_ur.transpose() * gains.k;
        v.v_xr += q.q_ux.transpose() * gains.G[i].materialize();
        v.v_rr += q.q_ur.transpose() * gains.G[i].materialize();
    }
    if (gains.coop) {
        v.v_x += q.q_vx.transpose() * gains.kv;
        v.v_xx += q.q_vx.transpose() * gains.Kv[i].materialize();
        v.v_r += q.q_vr.transpose() * gains.kv;
        v.v_xr += q.q_vx.transpose() * gains.Gv[i].materialize();
        v.v_rr += q.q_vr.transpose() * gains.Gv[i].materialize();
    }
    v.v_xx = linalg::symmetrize(v.v_xx);
    if (q.has_residual) v.v_rr = linalg::symmetrize(v.v_rr);
    return v;
}

double batch_loss(LossKind kind, const Trajectory& traj, const std::vector<Vector>& targets) {
    double s = 0.0;
    for (int i = 0; i < traj.batch; ++i) {
        s += loss_value(kind, traj.outputs()[static_cast<std::size_t>(i)], targets[static_cast<std::size_t>(i)]);
    }
    return traj.batch > 0 ? s / traj.batch : 0.0;
}

BackwardResult backward_pass(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                             const std::vector<Vector>& targets, CurvatureModel& curvature,
                             const DdpOptions& opt) {
    if (opt.outer_product && !opt.gn_terminal) {
        throw ConfigError("the outer-product path needs the Gauss-Newton terminal Hessian");
    }
    const int T = spec.stages();
    const int B = traj.batch;
    if (B <= 0 || static_cast<int>(targets.size()) != B) throw ConfigError("targets do not match the batch");
    const auto nb = static_cast<std::size_t>(B);
    const double inv_b = 1.0 / B;
    const CurvatureKind kind = curvature.settings().kind;
    const bool want_gn = kind == CurvatureKind::kGaussNewton;
    const bool want_kron = kind == CurvatureKind::kKronecker;

    BackwardResult res;
    res.gains.resize(static_cast<std::size_t>(T));
    if (opt.keep_values) res.values.resize(static_cast<std::size_t>(T + 1));
    res.loss = batch_loss(opt.loss, traj, targets);

    BatchValue next(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        next[i] = terminal_expand(opt.loss, traj.outputs()[i], targets[i], opt.gn_terminal, inv_b);
        if (next[i].outer && !opt.outer_product) {
            next[i].v_xx = next[i].xx();
            next[i].outer.reset();
        }
    }
    next = blockdiag_batch(std::move(next));
    if (opt.keep_values) res.values[static_cast<std::size_t>(T)] = next;

    std::size_t stored_gain_bytes = 0;
    for (int t = T - 1; t >= 0; --t) {
        const auto st = static_cast<std::size_t>(t);
        const int b = spec.block_at(t);
        const ResidualBlock* blk = b >= 0 ? &spec.blocks[static_cast<std::size_t>(b)] : nullptr;
        if (blk && t == blk->merge) {
            for (auto& v : next) v = enter_block(v);
        }
        const bool coop = blk && blk->projection && blk->projection_at == t;
        const LayerSpec& layer = spec.layers[st];
        const Matrix& w = params.layers[st];

        std::vector<QExpansion> qs(nb);
        StageInputs in;
        in.layer = &layer;
        in.w = &w;
        in.gauss_newton = want_gn;
        if (coop) {
            in.proj = &*blk->projection;
            in.pw = &params.projections[static_cast<std::size_t>(b)];
        }
        LayerStatistics su{layer.weight_rows(), layer.weight_cols(), opt.weight_decay * linalg::vec(w), {}, {}, {}};
        LayerStatistics sv;
        Matrix gn_uv;
        if (coop) {
            sv = LayerStatistics{in.proj->weight_rows(), in.proj->weight_cols(), opt.weight_decay * linalg::vec(*in.pw),
                                 {}, {}, {}};
        }
        for (std::size_t i = 0; i < nb; ++i) {
            in.cache = &traj.caches[st][i];
            if (coop) in.pcache = &traj.projection_caches[static_cast<std::size_t>(b)][i];
            qs[i] = expand_stage(in, next[i]);
            su.grad += qs[i].q_u;
            if (want_kron) {
                su.patches.push_back(&in.cache->patches);
                su.cotangents.push_back(to_cotangent(layer, *in.cache, next[i].v_x, B));
            }
            if (want_gn) su.gauss_newton = i == 0 ? qs[i].gn_uu : Matrix(su.gauss_newton + qs[i].gn_uu);
            if (coop) {
                sv.grad += qs[i].q_v;
                if (want_kron) {
                    sv.patches.push_back(&in.pcache->patches);
                    sv.cotangents.push_back(to_cotangent(*in.proj, *in.pcache, next[i].v_r, B));
                }
                if (want_gn) {
                    sv.gauss_newton = i == 0 ? qs[i].gn_vv : Matrix(sv.gauss_newton + qs[i].gn_vv);
                    gn_uv = i == 0 ? qs[i].gn_uv : Matrix(gn_uv + qs[i].gn_uv);
                }
            }
        }

        StageGains gains;
        BatchValue cur(nb);
        try {
            if (coop) {
                auto joint = curvature.substitute_joint(layer_group(t), su, projection_group(b), sv, gn_uv);
                gains = solve_coop_gains(qs, su.grad, sv.grad, *joint, opt.force_qux_zero);
            } else {
                auto quu = curvature.substitute_quu(layer_group(t), su);
                gains = solve_gains(qs, su.grad, *quu, opt.force_qux_zero);
            }
            for (std::size_t i = 0; i < nb; ++i) {
                bool clipped = false;
                cur[i] = value_recursion(qs[i], gains, i, opt.force_qux_zero, &clipped);
                if (clipped) ++res.clipped;
                if (blk && t == blk->split) cur[i] = split_merge(cur[i]);
            }
        } catch (const NumericalError& e) {
            throw NumericalError(e.what(), t);
        }

        std::size_t live = stored_gain_bytes + gains.bytes();
        for (std::size_t i = 0; i < nb; ++i) live += next[i].bytes() + qs[i].bytes() + cur[i].bytes();
        res.peak_bytes = std::max(res.peak_bytes, live);
        stored_gain_bytes += gains.bytes();

        res.gains[st] = std::move(gains);
        next = std::move(cur);
        if (opt.keep_values) res.values[st] = next;
    }
    return res;
}

ParamSet forward_update(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                        const std::vector<StageGains>& gains) {
    const int T = spec.stages();
    if (static_cast<int>(gains.size()) != T) throw ConfigError("forward_update: one gain set per stage required");
    const auto nb = static_cast<std::size_t>(traj.batch);
    ParamSet out = params;

    std::vector<Vector> x_hat = traj.states[0];
    std::vector<std::vector<Vector>> r_in(spec.blocks.size(), std::vector<Vector>(nb));
    std::vector<std::vector<Vector>> r_out(spec.blocks.size(), std::vector<Vector>(nb));

    for (int t = 0; t < T; ++t) {
        const auto st = static_cast<std::size_t>(t);
        const int b = spec.block_at(t);
        const auto sb = static_cast<std::size_t>(std::max(b, 0));
        const ResidualBlock* blk = b >= 0 ? &spec.blocks[sb] : nullptr;
        if (blk && t == blk->split) {
            r_in[sb] = x_hat;
            if (!blk->projection) r_out[sb] = x_hat;
        }
        const bool coop = blk && blk->projection && blk->projection_at == t;
        const bool projected = blk && blk->projection && t > blk->projection_at;
        const StageGains& g = gains[st];

        Vector du = g.k;
        Vector dv = g.coop ? g.kv : Vector();
        for (std::size_t i = 0; i < nb; ++i) {
            const Vector dx = x_hat[i] - traj.states[st][i];
            if (!g.K.empty() && !g.K[i].empty()) du += g.K[i].apply(dx);
            if (g.coop && !g.Kv[i].empty()) dv += g.Kv[i].apply(dx);
            if (blk) {
                const Vector dr = projected ? Vector(r_out[sb][i] - traj.shortcut_out[sb][i])
                                            : Vector(r_in[sb][i] - traj.shortcut_in[sb][i]);
                if (!g.G.empty() && !g.G[i].empty()) du += g.G[i].apply(dr);
                if (g.coop && !g.Gv[i].empty()) dv += g.Gv[i].apply(dr);
            }
        }
        Matrix& w = out.layers[st];
        w += linalg::unvec(du, w.rows(), w.cols());
        if (coop) {
            Matrix& pw = out.projections[sb];
            pw += linalg::unvec(dv, pw.rows(), pw.cols());
            for (std::size_t i = 0; i < nb; ++i) r_out[sb][i] = layer_forward(*blk->projection, pw, r_in[sb][i], nullptr);
        }
        for (std::size_t i = 0; i < nb; ++i) {
            Vector y = layer_forward(spec.layers[st], w, x_hat[i], nullptr);
            if (blk && t == blk->merge) y += r_out[sb][i];
            x_hat[i] = std::move(y);
        }
    }
    return out;
}

}  // namespace gtddp
