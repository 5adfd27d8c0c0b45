#include "gtddp/trainer/train.hpp"

#include <chrono>
#include <cmath>

#include "gtddp/ddp_core.hpp"
#include "gtddp/errors.hpp"
#include "gtddp/loss.hpp"

namespace gtddp::trainer {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::size_t gradient_bytes(const Gradients& g) {
    std::size_t b = 0;
    for (const auto& m : g.layers) b += matrix_bytes(m);
    for (const auto& m : g.projections) b += matrix_bytes(m);
    for (const auto& t : g.states) {
        for (const auto& v : t) b += vector_bytes(v);
    }
    for (const auto& t : g.layer_cotangents) {
        for (const auto& m : t) b += matrix_bytes(m);
    }
    return b;
}

bool finite(const ParamSet& p) {
    for (const auto& m : p.layers) {
        if (!m.allFinite()) return false;
    }
    for (const auto& m : p.projections) {
        if (!m.allFinite()) return false;
    }
    return true;
}

template <typename F>
void for_chunks(const Dataset& d, F&& f) {
    for (std::size_t s = 0; s < d.size(); s += kEvalChunk) {
        const std::size_t e = std::min(d.size(), s + kEvalChunk);
        f(std::vector<Vector>(d.x.begin() + static_cast<std::ptrdiff_t>(s), d.x.begin() + static_cast<std::ptrdiff_t>(e)),
          s);
    }
}

}  // namespace

Stepper::Stepper(const ExperimentConfig& c) : c_(c) {
    c_.validate();
    if (c_.gtddp) {
        curvature_ = std::make_unique<CurvatureModel>(c_.curvature_settings());
    } else {
        baseline_.emplace(c_.curvature_settings());
    }
}

double Stepper::step(ParamSet& params, const std::vector<Vector>& inputs, const std::vector<Vector>& targets) {
    const Trajectory traj = forward(c_.net, params, inputs);
    if (curvature_) {
        const BackwardResult res = backward_pass(c_.net, params, traj, targets, *curvature_, c_.ddp_options());
        peak_bytes_ = std::max(peak_bytes_, res.peak_bytes);
        clipped_ += res.clipped;
        params = forward_update(c_.net, params, traj, res.gains);
        return res.loss;
    }
    const auto b = static_cast<double>(traj.batch);
    std::vector<Vector> tg;
    for (std::size_t i = 0; i < targets.size(); ++i) tg.push_back(loss_gradient(c_.loss, traj.outputs()[i], targets[i]) / b);
    const Gradients g = backprop(c_.net, params, traj, tg);
    peak_bytes_ = std::max(peak_bytes_, gradient_bytes(g));
    baseline_->step(c_.net, params, traj, g);
    return batch_loss(c_.loss, traj, targets);
}

std::vector<Vector> targets_of(const Dataset& d, const std::vector<std::size_t>& idx) {
    std::vector<Vector> t;
    t.reserve(idx.size());
    for (std::size_t i : idx) t.push_back(one_hot(d.y[i], d.classes));
    return t;
}

double dataset_loss(const NetworkSpec& spec, const ParamSet& params, LossKind loss, const Dataset& d) {
    double total = 0.0;
    for_chunks(d, [&](const std::vector<Vector>& xs, std::size_t start) {
        const Trajectory tr = forward(spec, params, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            total += loss_value(loss, tr.outputs()[i], one_hot(d.y[start + i], d.classes));
        }
    });
    return total / static_cast<double>(d.size());
}

double dataset_accuracy(const NetworkSpec& spec, const ParamSet& params, const Dataset& d) {
    if (d.size() == 0) return 0.0;
    std::size_t hits = 0;
    for_chunks(d, [&](const std::vector<Vector>& xs, std::size_t start) {
        const Trajectory tr = forward(spec, params, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            Eigen::Index arg = 0;
            tr.outputs()[i].maxCoeff(&arg);
            if (arg == d.y[start + i]) ++hits;
        }
    });
    return static_cast<double>(hits) / static_cast<double>(d.size());
}

TrainResult train(const ExperimentConfig& c, const Dataset& train_set, const Dataset& val_set) {
    c.validate();
    if (train_set.size() == 0) throw ConfigError("empty training set");
    if (train_set.shape.size() != c.net.input.size()) throw ConfigError("dataset does not match net.input");
    if (train_set.classes != c.net.layers.back().output().size()) {
        throw ConfigError("network output size differs from the class count");
    }
    TrainResult out;
    for (const std::uint64_t seed : c.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        ParamSet params = init_params(c.net, seed);
        Stepper stepper(c);
        std::mt19937_64 order_rng(seed ^ 0x5eedf00dULL);
        long iteration = 0;
        std::optional<SeedFailure> failure;
        for (int epoch = 1; epoch <= c.epochs && !failure; ++epoch) {
            const auto idx = shuffled_indices(train_set.size(), order_rng);
            const auto bs = static_cast<std::size_t>(c.batch_size);
            for (std::size_t s = 0; s < idx.size() && !failure; s += bs) {
                const std::vector<std::size_t> batch(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + bs)));
                std::vector<Vector> xs;
                for (std::size_t i : batch) xs.push_back(train_set.x[i]);
                try {
                    const double l = stepper.step(params, xs, targets_of(train_set, batch));
                    if (!std::isfinite(l) || !finite(params)) {
                        failure = SeedFailure{seed, epoch, iteration, "loss diverged to " + std::to_string(l)};
                    }
                } catch (const NumericalError& e) {
                    failure = SeedFailure{seed, epoch, iteration, e.what()};
                }
                ++iteration;
            }
            if (failure) break;
            MetricsRecord r;
            r.seed = seed;
            r.epoch = epoch;
            r.train_loss = dataset_loss(c.net, params, c.loss, train_set);
            r.val_acc = dataset_accuracy(c.net, params, val_set);
            r.peak_bytes = stepper.peak_bytes();
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (!std::isfinite(r.train_loss)) {
                failure = SeedFailure{seed, epoch, iteration, "train loss is not finite"};
                break;
            }
            out.records.push_back(r);
        }
        if (failure) out.failures.push_back(*failure);
        out.clipped += stepper.clipped();
        out.final_params.push_back(std::move(params));
    }
    return out;
}

TrainResult train(const ExperimentConfig& c) {
    const auto [tr, val] = load_dataset(c);
    return train(c, tr, val);
}

}  // namespace gtddp::trainer
