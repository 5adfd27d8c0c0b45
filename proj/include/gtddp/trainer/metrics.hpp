#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gtddp::trainer {

struct MetricsRecord {
    std::uint64_t seed = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double seconds = 0.0;
    std::size_t peak_bytes = 0;

    bool operator==(const MetricsRecord&) const = default;
};

inline constexpr const char* kMetricsHeader = "seed,epoch,train_loss,val_acc,seconds,peak_bytes";

/// Doubles are written with 17 significant digits so parsing gives the same records back.
std::string format_metrics_csv(const std::vector<MetricsRecord>& records);
/// Throws ParseError with the byte offset of the bad field.
std::vector<MetricsRecord> parse_metrics_csv(std::string_view text);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

/// Unbiased sample variance; needs at least two values.
double sample_variance(const std::vector<double>& v);

/// (var_b - var_a) / var_a, or nothing when var_a is zero.
std::optional<double> relative_variance_delta(double var_a, double var_b);

struct VarianceRow {
    int epoch = 0;
    std::string metric;  // "train_loss" or "val_acc"
    double var_a = 0.0;
    double var_b = 0.0;
    std::optional<double> delta;
};

struct VarianceReport {
    std::vector<VarianceRow> rows;
    /// Mean of the defined deltas per metric; nothing when none are defined.
    std::optional<double> mean_delta_loss;
    std::optional<double> mean_delta_acc;
};

/// Across-seed variance per epoch of arm b relative to arm a. Each epoch present in both
/// arms needs at least three seeds per arm. Throws ConfigError.
VarianceReport variance_report(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b);
/// CSV with header epoch,metric,var_a,var_b,delta; undefined deltas print as "undefined".
std::string format_variance_csv(const VarianceReport& r);

}  // namespace gtddp::trainer
