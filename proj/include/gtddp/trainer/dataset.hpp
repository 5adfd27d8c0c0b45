#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gtddp/linalg.hpp"
#include "gtddp/network.hpp"
#include "gtddp/trainer/config.hpp"

namespace gtddp::trainer {

/// Features normalized to [0, 1], flattened channel-major.
struct Dataset {
    Shape shape;
    int classes = 0;
    std::vector<Vector> x;
    std::vector<int> y;

    std::size_t size() const { return x.size(); }
};

/// Rows of 64 integer pixels in [0, 16] followed by a label in [0, 9]. Throws ParseError.
Dataset parse_digits_csv(std::string_view text);
Dataset load_digits_csv(const std::string& path);

/// IDX image (magic 0x00000803) and label (magic 0x00000801) files. Throws ParseError.
Dataset parse_mnist_idx(std::string_view images, std::string_view labels);
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// 8x8 images of two Gaussian blobs whose centres depend on the class, plus pixel noise.
Dataset synthetic_blobs(std::uint64_t seed, int count, int classes = 10);

/// Shuffles with `seed` and moves the last round(fraction * n) samples to validation.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double val_fraction, std::uint64_t seed);

/// Dataset selected by the config, already split.
std::pair<Dataset, Dataset> load_dataset(const ExperimentConfig& c);

std::string read_file(const std::string& path);

/// Fisher-Yates permutation of 0..n-1 drawn from `rng`; identical across standard libraries.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

}  // namespace gtddp::trainer
