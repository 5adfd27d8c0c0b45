#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gtddp/curvature.hpp"
#include "gtddp/ddp_core.hpp"
#include "gtddp/network.hpp"

namespace gtddp::trainer {

enum class OptimizerKind { kSgd, kRmsprop, kAdam, kEkfac };
enum class DatasetKind { kDigitsCsv, kMnistIdx, kSynthetic };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind k);
DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind k);

/// Ordered key=value pairs; later entries override earlier ones.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct ExperimentConfig {
    OptimizerKind base = OptimizerKind::kSgd;
    bool gtddp = false;  // "gtddp-<base>" runs the DDP update with the base curvature

    DatasetKind dataset = DatasetKind::kSynthetic;
    std::string data_path;
    std::string labels_path;
    int synthetic_count = 1000;
    double val_fraction = 0.2;
    std::uint64_t split_seed = 0;

    NetworkSpec net;

    double lr = 0.1;
    std::optional<double> damping;  // unset: 0 for first-order arms, 1e-3 for ekfac
    double eps = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double kron_decay = 0.95;
    double weight_decay = 0.0;
    int epochs = 1;
    int batch_size = 32;
    LossKind loss = LossKind::kCrossEntropy;

    bool gn_terminal = false;
    bool outer_product = false;
    bool coop_kron = true;
    bool eigen_rescale = false;
    bool force_qux_zero = false;
    bool scale_by_lr = true;

    std::vector<std::uint64_t> seeds{0};
    std::string out_dir = "out";

    std::string optimizer_name() const;
    double effective_damping() const;
    CurvatureSettings curvature_settings() const;
    DdpOptions ddp_options() const;
    /// Throws ConfigError.
    void validate() const;
};

/// Parses "key=value" lines; '#' starts a comment. Throws ConfigError naming the line.
KeyValues parse_key_values(const std::string& text);

/// Builds and validates a config from pairs. Unknown keys are rejected.
ExperimentConfig build_config(const KeyValues& kv);

/// Reads the file at `path`, then applies `overrides` on top. Relative data paths in the
/// file are taken relative to its directory.
ExperimentConfig load_config(const std::string& path, const KeyValues& overrides = {});

/// Every key accepted by build_config apart from the indexed net.layer.N / net.block.N.
const std::vector<std::string>& scalar_keys();

/// "conv out=4 k=3 stride=1 pad=1 act=relu" or "dense out=10 act=identity [bias=0]".
LayerSpec parse_layer(const std::string& text);
/// "split=1 merge=3 [proj=8 proj_stride=2 proj_bias=0 proj_at=2]", proj giving the projection width.
ResidualBlock parse_block(const std::string& text);

}  // namespace gtddp::trainer
