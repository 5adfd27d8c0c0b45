#include "gtddp/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gtddp/errors.hpp"

namespace gtddp {

namespace {

std::string stage_name(int t) { return "stage " + std::to_string(t); }

Matrix patches_impl(const LayerSpec& layer, const Vector& x, double bias_value) {
    if (x.size() != layer.input.size()) {
        throw ConfigError("layer input size " + std::to_string(x.size()) + " does not match " +
                          to_string(layer.input));
    }
    const int pd = layer.patch_dim();
    if (layer.kind == LayerKind::kDense) {
        Matrix p(pd, 1);
        p.col(0).head(x.size()) = x;
        if (layer.bias) p(pd - 1, 0) = bias_value;
        return p;
    }
    const Shape in = layer.input;
    const Shape out = layer.output();
    const int k = layer.kernel;
    Matrix p = Matrix::Zero(pd, out.height * out.width);
    for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
            const int l = oy * out.width + ox;
            for (int c = 0; c < in.channels; ++c) {
                for (int ki = 0; ki < k; ++ki) {
                    const int iy = oy * layer.stride + ki - layer.padding;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int kj = 0; kj < k; ++kj) {
                        const int ix = ox * layer.stride + kj - layer.padding;
                        if (ix < 0 || ix >= in.width) continue;
                        p((c * k + ki) * k + kj, l) = x((c * in.height + iy) * in.width + ix);
                    }
                }
            }
            if (layer.bias) p(pd - 1, l) = bias_value;
        }
    }
    return p;
}

double act(Activation a, double h) {
    switch (a) {
        case Activation::kRelu: return h > 0.0 ? h : 0.0;
        case Activation::kTanh: return std::tanh(h);
        case Activation::kIdentity: break;
    }
    return h;
}

double act_grad(Activation a, double h) {
    switch (a) {
        case Activation::kRelu: return h > 0.0 ? 1.0 : 0.0;
        case Activation::kTanh: {
            const double y = std::tanh(h);
            return 1.0 - y * y;
        }
        case Activation::kIdentity: break;
    }
    return 1.0;
}

void check_weight(const LayerSpec& layer, const Matrix& w, const std::string& where) {
    if (w.rows() != layer.weight_rows() || w.cols() != layer.weight_cols()) {
        throw ConfigError(where + ": weight shape " + std::to_string(w.rows()) + "x" +
                          std::to_string(w.cols()) + ", expected " +
                          std::to_string(layer.weight_rows()) + "x" +
                          std::to_string(layer.weight_cols()));
    }
}

}  // namespace

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::kRelu;
    if (name == "tanh") return Activation::kTanh;
    if (name == "identity" || name == "linear") return Activation::kIdentity;
    throw ConfigError("unknown activation '" + name + "'");
}

LayerKind parse_layer_kind(const std::string& name) {
    if (name == "dense" || name == "fc") return LayerKind::kDense;
    if (name == "conv") return LayerKind::kConv;
    if (name == "projection" || name == "conv1x1") return LayerKind::kProjection;
    throw ConfigError("unknown layer kind '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::kRelu: return "relu";
        case Activation::kTanh: return "tanh";
        case Activation::kIdentity: break;
    }
    return "identity";
}

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::kConv: return "conv";
        case LayerKind::kProjection: return "projection";
        case LayerKind::kDense: break;
    }
    return "dense";
}

std::string to_string(const Shape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
           std::to_string(s.width);
}

Shape LayerSpec::output() const {
    if (kind == LayerKind::kDense) return {out_channels, 1, 1};
    const int k = kind == LayerKind::kProjection ? 1 : kernel;
    const int pad = kind == LayerKind::kProjection ? 0 : padding;
    return {out_channels, (input.height + 2 * pad - k) / stride + 1,
            (input.width + 2 * pad - k) / stride + 1};
}

int LayerSpec::positions() const {
    const Shape o = output();
    return o.height * o.width;
}

int LayerSpec::patch_dim() const {
    const int b = bias ? 1 : 0;
    if (kind == LayerKind::kDense) return input.size() + b;
    return input.channels * kernel * kernel + b;
}

void NetworkSpec::resolve() {
    if (input.size() <= 0) throw ConfigError("network input shape must be positive");
    if (layers.empty()) throw ConfigError("network has no layers");
    Shape cur = input;
    for (int t = 0; t < stages(); ++t) {
        LayerSpec& l = layers[static_cast<std::size_t>(t)];
        if (l.kind == LayerKind::kProjection) {
            throw ConfigError(stage_name(t) + ": projection layers belong on residual shortcuts");
        }
        if (l.out_channels <= 0 || l.stride <= 0 || l.kernel <= 0 || l.padding < 0) {
            throw ConfigError(stage_name(t) + ": invalid layer dimensions");
        }
        l.input = cur;
        const Shape o = l.output();
        if (o.height <= 0 || o.width <= 0) {
            throw ConfigError(stage_name(t) + ": kernel larger than padded input " +
                              to_string(cur));
        }
        cur = o;
    }

    std::vector<ResidualBlock*> order;
    for (auto& b : blocks) order.push_back(&b);
    std::sort(order.begin(), order.end(),
              [](const ResidualBlock* a, const ResidualBlock* b) { return a->split < b->split; });
    for (std::size_t i = 0; i < order.size(); ++i) {
        ResidualBlock& b = *order[i];
        if (b.split < 0 || b.merge >= stages() || b.split > b.merge) {
            throw ConfigError("residual block [" + std::to_string(b.split) + ", " +
                              std::to_string(b.merge) + "] is out of range");
        }
        if (i > 0 && b.split <= order[i - 1]->merge) {
            throw ConfigError("residual blocks overlap at " + stage_name(b.split));
        }
        if (b.projection_at < 0) b.projection_at = b.split;
        Shape shortcut = state_shape(b.split);
        if (b.projection) {
            if (b.projection_at < b.split || b.projection_at > b.merge) {
                throw ConfigError("projection position outside its block at " +
                                  stage_name(b.projection_at));
            }
            LayerSpec& p = *b.projection;
            p.kind = LayerKind::kProjection;
            p.kernel = 1;
            p.padding = 0;
            if (p.out_channels <= 0 || p.stride <= 0) {
                throw ConfigError("invalid projection at " + stage_name(b.projection_at));
            }
            p.input = shortcut;
            shortcut = p.output();
        }
        const Shape branch = layers[static_cast<std::size_t>(b.merge)].output();
        if (!(shortcut == branch)) {
            throw ConfigError(stage_name(b.merge) + ": shortcut shape " + to_string(shortcut) +
                              " does not match branch output " + to_string(branch));
        }
    }
}

Shape NetworkSpec::state_shape(int t) const {
    if (t == 0) return input;
    return layers[static_cast<std::size_t>(t - 1)].output();
}

int NetworkSpec::block_at(int t) const {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].split <= t && t <= blocks[b].merge) return static_cast<int>(b);
    }
    return -1;
}

Eigen::Index ParamSet::size() const {
    Eigen::Index n = 0;
    for (const auto& w : layers) n += w.size();
    for (const auto& w : projections) n += w.size();
    return n;
}

Vector ParamSet::flatten() const {
    Vector out(size());
    Eigen::Index off = 0;
    for (const auto* group : {&layers, &projections}) {
        for (const auto& w : *group) {
            out.segment(off, w.size()) = linalg::vec(w);
            off += w.size();
        }
    }
    return out;
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto draw = [&](const LayerSpec& l) {
        const int fan_in = l.patch_dim() - (l.bias ? 1 : 0);
        const double gain = l.activation == Activation::kRelu ? 2.0 : 1.0;
        const double bound = std::sqrt(3.0 * gain / std::max(1, fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix w(l.weight_rows(), l.weight_cols());
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
        }
        if (l.bias) w.col(w.cols() - 1).setZero();
        return w;
    };
    ParamSet p;
    for (const auto& l : spec.layers) p.layers.push_back(draw(l));
    for (const auto& b : spec.blocks) {
        p.projections.push_back(b.projection ? draw(*b.projection) : Matrix());
    }
    return p;
}

ParamSet zeros_like(const ParamSet& p) {
    ParamSet z;
    for (const auto& w : p.layers) z.layers.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& w : p.projections) z.projections.push_back(Matrix::Zero(w.rows(), w.cols()));
    return z;
}

Matrix extract_patches(const LayerSpec& layer, const Vector& x) {
    return patches_impl(layer, x, 1.0);
}

Vector fold_patches(const LayerSpec& layer, const Matrix& patches) {
    const Shape in = layer.input;
    Vector x = Vector::Zero(in.size());
    if (layer.kind == LayerKind::kDense) {
        x = patches.col(0).head(in.size());
        return x;
    }
    const Shape out = layer.output();
    const int k = layer.kernel;
    for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
            const int l = oy * out.width + ox;
            for (int c = 0; c < in.channels; ++c) {
                for (int ki = 0; ki < k; ++ki) {
                    const int iy = oy * layer.stride + ki - layer.padding;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int kj = 0; kj < k; ++kj) {
                        const int ix = ox * layer.stride + kj - layer.padding;
                        if (ix < 0 || ix >= in.width) continue;
                        x((c * in.height + iy) * in.width + ix) += patches((c * k + ki) * k + kj, l);
                    }
                }
            }
        }
    }
    return x;
}

Vector flatten_channels(const Matrix& m) {
    Vector v(m.size());
    for (Eigen::Index c = 0; c < m.rows(); ++c) v.segment(c * m.cols(), m.cols()) = m.row(c).transpose();
    return v;
}

Matrix unflatten_channels(const Vector& v, Eigen::Index channels, Eigen::Index positions) {
    if (v.size() != channels * positions) throw ConfigError("state size does not match layer output");
    Matrix m(channels, positions);
    for (Eigen::Index c = 0; c < channels; ++c) m.row(c) = v.segment(c * positions, positions).transpose();
    return m;
}

Vector layer_forward(const LayerSpec& layer, const Matrix& w, const Vector& x, LayerCache* cache) {
    check_weight(layer, w, "layer_forward");
    Matrix p = extract_patches(layer, x);
    Matrix h = w * p;
    Matrix y = h.unaryExpr([&](double v) { return act(layer.activation, v); });
    if (cache) {
        cache->patches = std::move(p);
        cache->pre = std::move(h);
    }
    return flatten_channels(y);
}

Matrix activation_derivative(const LayerSpec& layer, const LayerCache& cache) {
    return cache.pre.unaryExpr([&](double v) { return act_grad(layer.activation, v); });
}

Vector vjp_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const Vector& v) {
    if (cache.pre.size() == 0) throw ConfigError("vjp_state: missing forward cache");
    const Matrix g = activation_derivative(layer, cache).cwiseProduct(
        unflatten_channels(v, cache.pre.rows(), cache.pre.cols()));
    return fold_patches(layer, w.transpose() * g);
}

Matrix vjp_param(const LayerSpec& layer, const LayerCache& cache, const Vector& v) {
    if (cache.pre.size() == 0) throw ConfigError("vjp_param: missing forward cache");
    const Matrix g = activation_derivative(layer, cache).cwiseProduct(
        unflatten_channels(v, cache.pre.rows(), cache.pre.cols()));
    return g * cache.patches.transpose();
}

Vector jvp_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const Vector& d) {
    if (cache.pre.size() == 0) throw ConfigError("jvp_state: missing forward cache");
    const Matrix dh = w * patches_impl(layer, d, 0.0);
    return flatten_channels(activation_derivative(layer, cache).cwiseProduct(dh));
}

Vector jvp_param(const LayerSpec& layer, const LayerCache& cache, const Matrix& d) {
    if (cache.pre.size() == 0) throw ConfigError("jvp_param: missing forward cache");
    const Matrix dh = d * cache.patches;
    return flatten_channels(activation_derivative(layer, cache).cwiseProduct(dh));
}

Matrix jacobian_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache) {
    if (cache.pre.size() == 0) throw ConfigError("jacobian_state: missing forward cache");
    const Matrix d = activation_derivative(layer, cache);
    const Eigen::Index channels = cache.pre.rows();
    const Eigen::Index positions = cache.pre.cols();
    const Eigen::Index n_in = layer.input.size();
    // Unfolding 1..n marks which input each patch entry reads; padding and bias read 0.
    const Matrix source = patches_impl(layer, Vector::LinSpaced(n_in, 1.0, static_cast<double>(n_in)), 0.0);
    Matrix j = Matrix::Zero(channels * positions, n_in);
    for (Eigen::Index p = 0; p < positions; ++p) {
        for (Eigen::Index r = 0; r < source.rows(); ++r) {
            if (source(r, p) == 0.0) continue;
            const auto in = static_cast<Eigen::Index>(source(r, p)) - 1;
            for (Eigen::Index c = 0; c < channels; ++c) j(c * positions + p, in) += d(c, p) * w(c, r);
        }
    }
    return j;
}

Matrix jacobian_param(const LayerSpec& layer, const LayerCache& cache) {
    if (cache.pre.size() == 0) throw ConfigError("jacobian_param: missing forward cache");
    const Matrix d = activation_derivative(layer, cache);
    const Eigen::Index channels = cache.pre.rows();
    const Eigen::Index positions = cache.pre.cols();
    Matrix j = Matrix::Zero(channels * positions, layer.param_count());
    for (Eigen::Index p = 0; p < positions; ++p) {
        for (Eigen::Index r = 0; r < cache.patches.rows(); ++r) {
            for (Eigen::Index c = 0; c < channels; ++c) {
                j(c * positions + p, r * channels + c) = d(c, p) * cache.patches(r, p);
            }
        }
    }
    return j;
}

Matrix vjp_param_columns(const LayerSpec& layer, const LayerCache& cache, const Matrix& m) {
    if (cache.pre.size() == 0) throw ConfigError("vjp_param_columns: missing forward cache");
    const Matrix d = activation_derivative(layer, cache);
    Matrix out(layer.param_count(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const Matrix g = d.cwiseProduct(unflatten_channels(m.col(j), cache.pre.rows(), cache.pre.cols()));
        out.col(j) = linalg::vec(g * cache.patches.transpose());
    }
    return out;
}

Trajectory forward(const NetworkSpec& spec, const ParamSet& params, const std::vector<Vector>& inputs) {
    const int T = spec.stages();
    if (static_cast<int>(params.layers.size()) != T ||
        params.projections.size() != spec.blocks.size()) {
        throw ConfigError("parameter set does not match network");
    }
    const int batch = static_cast<int>(inputs.size());
    const auto nb = spec.blocks.size();
    Trajectory tr;
    tr.batch = batch;
    tr.states.assign(static_cast<std::size_t>(T + 1), std::vector<Vector>(static_cast<std::size_t>(batch)));
    tr.caches.assign(static_cast<std::size_t>(T), std::vector<LayerCache>(static_cast<std::size_t>(batch)));
    tr.shortcut_in.assign(nb, std::vector<Vector>(static_cast<std::size_t>(batch)));
    tr.shortcut_out.assign(nb, std::vector<Vector>(static_cast<std::size_t>(batch)));
    tr.projection_caches.assign(nb, std::vector<LayerCache>());
    for (std::size_t b = 0; b < nb; ++b) {
        if (spec.blocks[b].projection) tr.projection_caches[b].resize(static_cast<std::size_t>(batch));
    }

    for (int i = 0; i < batch; ++i) {
        const auto si = static_cast<std::size_t>(i);
        if (inputs[si].size() != spec.input.size()) {
            throw ConfigError("input sample " + std::to_string(i) + " has size " +
                              std::to_string(inputs[si].size()) + ", expected " +
                              std::to_string(spec.input.size()));
        }
        tr.states[0][si] = inputs[si];
        for (int t = 0; t < T; ++t) {
            const auto st = static_cast<std::size_t>(t);
            const Vector& x = tr.states[st][si];
            for (std::size_t b = 0; b < nb; ++b) {
                const ResidualBlock& blk = spec.blocks[b];
                if (blk.split == t) {
                    tr.shortcut_in[b][si] = x;
                    if (!blk.projection) tr.shortcut_out[b][si] = x;
                }
                if (blk.projection && blk.projection_at == t) {
                    try {
                        tr.shortcut_out[b][si] = layer_forward(*blk.projection, params.projections[b],
                                                               tr.shortcut_in[b][si],
                                                               &tr.projection_caches[b][si]);
                    } catch (const ConfigError& e) {
                        throw ConfigError(stage_name(t) + " projection: " + e.what());
                    }
                }
            }
            Vector y;
            try {
                y = layer_forward(spec.layers[st], params.layers[st], x, &tr.caches[st][si]);
            } catch (const ConfigError& e) {
                throw ConfigError(stage_name(t) + ": " + e.what());
            }
            for (std::size_t b = 0; b < nb; ++b) {
                if (spec.blocks[b].merge == t) y += tr.shortcut_out[b][si];
            }
            tr.states[st + 1][si] = std::move(y);
        }
    }
    return tr;
}

Gradients backprop(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                   const std::vector<Vector>& terminal_grads) {
    const int T = spec.stages();
    const int batch = traj.batch;
    const auto nb = spec.blocks.size();
    Gradients g;
    for (const auto& w : params.layers) g.layers.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& w : params.projections) g.projections.push_back(Matrix::Zero(w.rows(), w.cols()));
    g.states.assign(static_cast<std::size_t>(T + 1), std::vector<Vector>(static_cast<std::size_t>(batch)));
    g.layer_cotangents.assign(static_cast<std::size_t>(T), std::vector<Matrix>(static_cast<std::size_t>(batch)));
    g.projection_cotangents.assign(nb, std::vector<Matrix>());

    for (int i = 0; i < batch; ++i) {
        const auto si = static_cast<std::size_t>(i);
        Vector cur = terminal_grads[si];
        std::vector<Vector> shortcut_out_grad(nb);
        std::vector<Vector> shortcut_in_grad(nb);
        g.states[static_cast<std::size_t>(T)][si] = cur;
        for (int t = T - 1; t >= 0; --t) {
            const auto st = static_cast<std::size_t>(t);
            const LayerSpec& layer = spec.layers[st];
            const LayerCache& cache = traj.caches[st][si];
            for (std::size_t b = 0; b < nb; ++b) {
                if (spec.blocks[b].merge == t) shortcut_out_grad[b] = cur;
            }
            const Matrix gh = activation_derivative(layer, cache)
                                  .cwiseProduct(unflatten_channels(cur, cache.pre.rows(), cache.pre.cols()));
            g.layers[st] += gh * cache.patches.transpose();
            g.layer_cotangents[st][si] = gh;
            Vector prev = fold_patches(layer, params.layers[st].transpose() * gh);

            for (std::size_t b = 0; b < nb; ++b) {
                const ResidualBlock& blk = spec.blocks[b];
                if (blk.projection && blk.projection_at == t) {
                    const LayerCache& pc = traj.projection_caches[b][si];
                    const Matrix gp = activation_derivative(*blk.projection, pc)
                                          .cwiseProduct(unflatten_channels(shortcut_out_grad[b], pc.pre.rows(), pc.pre.cols()));
                    g.projections[b] += gp * pc.patches.transpose();
                    if (g.projection_cotangents[b].empty()) {
                        g.projection_cotangents[b].resize(static_cast<std::size_t>(batch));
                    }
                    g.projection_cotangents[b][si] = gp;
                    shortcut_in_grad[b] = fold_patches(*blk.projection, params.projections[b].transpose() * gp);
                }
                if (blk.split == t) {
                    prev += blk.projection ? shortcut_in_grad[b] : shortcut_out_grad[b];
                }
            }
            g.states[st][si] = prev;
            cur = std::move(prev);
        }
    }
    return g;
}

}  // namespace gtddp
