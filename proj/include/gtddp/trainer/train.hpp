#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gtddp/curvature.hpp"
#include "gtddp/network.hpp"
#include "gtddp/trainer/config.hpp"
#include "gtddp/trainer/dataset.hpp"
#include "gtddp/trainer/metrics.hpp"
#include "gtddp/trainer/optimizers.hpp"

namespace gtddp::trainer {

/// @brief One optimizer arm's per-iteration update. Baselines take the backprop gradient;
/// gtddp arms run backward_pass then forward_update. State persists across calls.
class Stepper {
public:
    explicit Stepper(const ExperimentConfig& c);

    /// Updates `params` on one batch and returns the batch loss before the update.
    /// Throws NumericalError from the DDP sweep.
    double step(ParamSet& params, const std::vector<Vector>& inputs, const std::vector<Vector>& targets);

    std::size_t peak_bytes() const { return peak_bytes_; }
    int clipped() const { return clipped_; }

private:
    ExperimentConfig c_;
    std::optional<BaselineOptimizer> baseline_;
    std::unique_ptr<CurvatureModel> curvature_;
    std::size_t peak_bytes_ = 0;
    int clipped_ = 0;
};

struct SeedFailure {
    std::uint64_t seed = 0;
    int epoch = 0;
    long iteration = 0;
    std::string message;
};

struct TrainResult {
    std::vector<MetricsRecord> records;
    std::vector<SeedFailure> failures;
    std::vector<ParamSet> final_params;  // per seed, in config order
    int clipped = 0;
};

/// Mean loss over the set, without the weight-decay term.
double dataset_loss(const NetworkSpec& spec, const ParamSet& params, LossKind loss, const Dataset& d);
double dataset_accuracy(const NetworkSpec& spec, const ParamSet& params, const Dataset& d);
std::vector<Vector> targets_of(const Dataset& d, const std::vector<std::size_t>& idx);

/// One record per (seed, epoch). A seed whose loss turns non-finite or whose sweep throws
/// NumericalError stops there and is listed in `failures`.
TrainResult train(const ExperimentConfig& c, const Dataset& train_set, const Dataset& val_set);
TrainResult train(const ExperimentConfig& c);

}  // namespace gtddp::trainer
