#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gtddp/linalg.hpp"

namespace gtddp {

enum class Activation { kIdentity, kRelu, kTanh };
enum class LayerKind { kDense, kConv, kProjection };

Activation parse_activation(const std::string& name);
LayerKind parse_layer_kind(const std::string& name);
std::string to_string(Activation a);
std::string to_string(LayerKind k);

/// Channel-major tensor shape. Dense layers read their input flattened and emit (n, 1, 1).
struct Shape {
    int channels = 1;
    int height = 1;
    int width = 1;

    int size() const { return channels * height * width; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// @brief One stage f_t(x, W) = act(W * patches(x)).
///
/// Every kind reduces to the same algebra: the input is unfolded into a patch matrix P
/// (patch_dim x positions, with a trailing row of ones when the layer has a bias), the
/// pre-activation is h = W P with W of shape (out_channels x patch_dim), and the output is h
/// passed through the activation, flattened channel-major. A dense layer is a single patch
/// holding the whole flattened input. A projection is a 1x1 convolution with identity
/// activation, used on residual shortcuts.
struct LayerSpec {
    LayerKind kind = LayerKind::kDense;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    Activation activation = Activation::kIdentity;
    bool bias = true;
    Shape input;

    Shape output() const;
    int positions() const;
    int patch_dim() const;
    Eigen::Index weight_rows() const { return out_channels; }
    Eigen::Index weight_cols() const { return patch_dim(); }
    Eigen::Index param_count() const { return weight_rows() * weight_cols(); }
};

/// @brief Shortcut from the input of stage `split` to the output of stage `merge`:
/// x_{merge+1} = f_merge(...) + r, where r = x_split or r = projection(x_split).
/// The projection is evaluated as a decision stage alongside layer `projection_at`.
struct ResidualBlock {
    int split = 0;
    int merge = 0;
    std::optional<LayerSpec> projection;
    int projection_at = -1;  // -1 resolves to split
};

struct NetworkSpec {
    Shape input;
    std::vector<LayerSpec> layers;
    std::vector<ResidualBlock> blocks;

    /// Fills in layer input shapes and validates the block layout. Throws ConfigError.
    void resolve();

    int stages() const { return static_cast<int>(layers.size()); }
    Shape state_shape(int t) const;
    /// Index of the block with split <= t <= merge, or -1.
    int block_at(int t) const;
};

/// Weight matrices, one per layer, plus one per block projection (empty when absent).
struct ParamSet {
    std::vector<Matrix> layers;
    std::vector<Matrix> projections;

    Eigen::Index size() const;
    Vector flatten() const;
};

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);
ParamSet zeros_like(const ParamSet& p);

struct LayerCache {
    Matrix patches;  // patch_dim x positions
    Matrix pre;      // out_channels x positions
};

Matrix extract_patches(const LayerSpec& layer, const Vector& x);
/// Adjoint of extract_patches with respect to x (the bias row is dropped).
Vector fold_patches(const LayerSpec& layer, const Matrix& patches);

/// Row-major flattening of a (channels x positions) matrix, the network's state layout.
Vector flatten_channels(const Matrix& m);
Matrix unflatten_channels(const Vector& v, Eigen::Index channels, Eigen::Index positions);

Vector layer_forward(const LayerSpec& layer, const Matrix& w, const Vector& x, LayerCache* cache);
Matrix activation_derivative(const LayerSpec& layer, const LayerCache& cache);

/// f_x^T v
Vector vjp_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const Vector& v);
/// f_u^T v, shaped like w
Matrix vjp_param(const LayerSpec& layer, const LayerCache& cache, const Vector& v);
/// f_x d
Vector jvp_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache, const Vector& d);
/// f_u d, with d shaped like w
Vector jvp_param(const LayerSpec& layer, const LayerCache& cache, const Matrix& d);

/// Dense Jacobians; parameter columns follow column-major vec(w).
Matrix jacobian_state(const LayerSpec& layer, const Matrix& w, const LayerCache& cache);
Matrix jacobian_param(const LayerSpec& layer, const LayerCache& cache);
/// f_u^T M applied column by column; returns param_count x M.cols().
Matrix vjp_param_columns(const LayerSpec& layer, const LayerCache& cache, const Matrix& m);

struct Trajectory {
    int batch = 0;
    std::vector<std::vector<Vector>> states;               // [t][i], t = 0..T
    std::vector<std::vector<LayerCache>> caches;           // [t][i]
    std::vector<std::vector<Vector>> shortcut_in;          // [block][i]
    std::vector<std::vector<Vector>> shortcut_out;         // [block][i]
    std::vector<std::vector<LayerCache>> projection_caches;  // [block][i], empty without projection

    const std::vector<Vector>& outputs() const { return states.back(); }
};

Trajectory forward(const NetworkSpec& spec, const ParamSet& params, const std::vector<Vector>& inputs);

/// Reverse accumulation of sum_i <terminal_grads[i], x_T^i>.
struct Gradients {
    std::vector<Matrix> layers;
    std::vector<Matrix> projections;
    std::vector<std::vector<Vector>> states;                   // [t][i] dJ/dx_t
    std::vector<std::vector<Matrix>> layer_cotangents;         // [t][i] dJ/dh_t
    std::vector<std::vector<Matrix>> projection_cotangents;    // [block][i]
};

Gradients backprop(const NetworkSpec& spec, const ParamSet& params, const Trajectory& traj,
                   const std::vector<Vector>& terminal_grads);

}  // namespace gtddp
