#include "gtddp/trainer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gtddp/errors.hpp"

namespace gtddp::trainer {

namespace {

constexpr int kDigitsFeatures = 64;

std::uint32_t read_be32(std::string_view s, std::size_t off) {
    if (off + 4 > s.size()) throw ParseError("truncated IDX header", s.size());
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
    return v;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Dataset parse_digits_csv(std::string_view text) {
    Dataset d;
    d.shape = {1, 8, 8};
    d.classes = 10;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t line_start = pos;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (line.empty()) continue;

        Vector x(kDigitsFeatures);
        int field = 0;
        std::size_t fpos = 0;
        while (true) {
            std::size_t comma = line.find(',', fpos);
            const std::string_view tok = line.substr(fpos, comma == std::string_view::npos ? line.size() - fpos
                                                                                      : comma - fpos);
            const std::size_t at = line_start + fpos;
            if (field > kDigitsFeatures) throw ParseError("too many fields", at);
            int v = 0;
            const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (tok.empty() || r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
                throw ParseError("expected an integer", at);
            }
            if (field < kDigitsFeatures) {
                if (v < 0 || v > 16) throw ParseError("pixel outside [0, 16]", at);
                x[field] = v / 16.0;
            } else {
                if (v < 0 || v >= d.classes) throw ParseError("label out of range", at);
                d.y.push_back(v);
            }
            ++field;
            if (comma == std::string_view::npos) break;
            fpos = comma + 1;
        }
        if (field != kDigitsFeatures + 1) throw ParseError("expected 65 fields", line_start + line.size());
        d.x.push_back(std::move(x));
    }
    if (d.x.empty()) throw ParseError("no rows", 0);
    return d;
}

Dataset load_digits_csv(const std::string& path) { return parse_digits_csv(read_file(path)); }

Dataset parse_mnist_idx(std::string_view images, std::string_view labels) {
    if (read_be32(images, 0) != 0x00000803) throw ParseError("bad IDX image magic", 0);
    if (read_be32(labels, 0) != 0x00000801) throw ParseError("bad IDX label magic", 0);
    const std::uint32_t n = read_be32(images, 4);
    const std::uint32_t rows = read_be32(images, 8);
    const std::uint32_t cols = read_be32(images, 12);
    const std::uint32_t nl = read_be32(labels, 4);
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) throw ParseError("implausible image size", 8);
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    const std::size_t want = 16 + static_cast<std::size_t>(n) * pixels;
    if (images.size() != want) {
        throw ParseError("image count " + std::to_string(n) + " disagrees with file length",
                         std::min(images.size(), want));
    }
    if (nl != n) throw ParseError("label count differs from image count", 4);
    if (labels.size() != 8 + static_cast<std::size_t>(nl)) {
        throw ParseError("label count disagrees with file length", std::min<std::size_t>(labels.size(), 8 + nl));
    }
    Dataset d;
    d.shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
    d.classes = 10;
    d.x.reserve(n);
    d.y.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector x(static_cast<Eigen::Index>(pixels));
        for (std::size_t p = 0; p < pixels; ++p) {
            x[static_cast<Eigen::Index>(p)] = static_cast<unsigned char>(images[16 + i * pixels + p]) / 255.0;
        }
        const int label = static_cast<unsigned char>(labels[8 + i]);
        if (label >= d.classes) throw ParseError("label out of range", 8 + i);
        d.x.push_back(std::move(x));
        d.y.push_back(label);
    }
    return d;
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    return parse_mnist_idx(read_file(images_path), read_file(labels_path));
}

Dataset synthetic_blobs(std::uint64_t seed, int count, int classes) {
    if (count < 1 || classes < 1) throw ConfigError("synthetic dataset needs samples and classes");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> centre(1.0, 6.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, classes - 1);
    struct Blobs {
        double r0, c0, r1, c1;
    };
    std::vector<Blobs> blobs;
    for (int k = 0; k < classes; ++k) blobs.push_back({centre(rng), centre(rng), centre(rng), centre(rng)});

    Dataset d;
    d.shape = {1, 8, 8};
    d.classes = classes;
    for (int n = 0; n < count; ++n) {
        const int label = pick(rng);
        const Blobs& b = blobs[static_cast<std::size_t>(label)];
        const double jr = 0.5 * noise(rng);
        const double jc = 0.5 * noise(rng);
        Vector x(64);
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const double d0 = std::pow(r - b.r0 - jr, 2) + std::pow(c - b.c0 - jc, 2);
                const double d1 = std::pow(r - b.r1 - jr, 2) + std::pow(c - b.c1 - jc, 2);
                const double v = std::exp(-d0 / 2.0) + std::exp(-d1 / 2.0) + 0.1 * noise(rng);
                x[r * 8 + c] = std::clamp(v, 0.0, 1.0);
            }
        }
        d.x.push_back(std::move(x));
        d.y.push_back(label);
    }
    return d;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // std::shuffle order is implementation-defined, so shuffle by hand.
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("validation fraction must be in [0, 1)");
    std::mt19937_64 rng(seed);
    const std::vector<std::size_t> idx = shuffled_indices(d.size(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(d.size())));
    if (n_val >= d.size()) throw ConfigError("validation split leaves no training data");
    Dataset train{d.shape, d.classes, {}, {}};
    Dataset val{d.shape, d.classes, {}, {}};
    for (std::size_t k = 0; k < idx.size(); ++k) {
        Dataset& dst = k < idx.size() - n_val ? train : val;
        dst.x.push_back(d.x[idx[k]]);
        dst.y.push_back(d.y[idx[k]]);
    }
    return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> load_dataset(const ExperimentConfig& c) {
    Dataset d;
    switch (c.dataset) {
        case DatasetKind::kDigitsCsv: d = load_digits_csv(c.data_path); break;
        case DatasetKind::kMnistIdx: d = load_mnist_idx(c.data_path, c.labels_path); break;
        case DatasetKind::kSynthetic: d = synthetic_blobs(c.split_seed, c.synthetic_count); break;
    }
    if (d.shape.size() != c.net.input.size()) {
        throw ConfigError("dataset features " + to_string(d.shape) + " do not match net.input " +
                          to_string(c.net.input));
    }
    return split_dataset(d, c.val_fraction, c.split_seed);
}

}  // namespace gtddp::trainer
