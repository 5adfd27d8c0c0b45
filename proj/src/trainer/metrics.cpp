#include "gtddp/trainer/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "gtddp/errors.hpp"
#include "gtddp/trainer/dataset.hpp"

namespace gtddp::trainer {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_field(std::string_view tok, std::size_t at) {
    T v{};
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
        throw ParseError("bad metrics field '" + std::string(tok) + "'", at);
    }
    return v;
}

}  // namespace

std::string format_metrics_csv(const std::vector<MetricsRecord>& records) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : records) {
        out += std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," +
               fmt(r.val_acc) + "," + fmt(r.seconds) + "," + std::to_string(r.peak_bytes) + "\n";
    }
    return out;
}

std::vector<MetricsRecord> parse_metrics_csv(std::string_view text) {
    std::vector<MetricsRecord> out;
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        const std::size_t start = pos;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (header) {
            if (line != kMetricsHeader) throw ParseError("unexpected metrics header", start);
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::pair<std::string_view, std::size_t>> fields;
        std::size_t f = 0;
        while (true) {
            const std::size_t comma = line.find(',', f);
            const std::size_t stop = comma == std::string_view::npos ? line.size() : comma;
            fields.emplace_back(line.substr(f, stop - f), start + f);
            if (comma == std::string_view::npos) break;
            f = comma + 1;
        }
        if (fields.size() != 6) throw ParseError("expected 6 metrics fields", start);
        MetricsRecord r;
        r.seed = parse_field<std::uint64_t>(fields[0].first, fields[0].second);
        r.epoch = parse_field<int>(fields[1].first, fields[1].second);
        r.train_loss = parse_field<double>(fields[2].first, fields[2].second);
        r.val_acc = parse_field<double>(fields[3].first, fields[3].second);
        r.seconds = parse_field<double>(fields[4].first, fields[4].second);
        r.peak_bytes = parse_field<std::size_t>(fields[5].first, fields[5].second);
        out.push_back(r);
    }
    if (header) throw ParseError("missing metrics header", 0);
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << format_metrics_csv(records);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) { return parse_metrics_csv(read_file(path)); }

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw ConfigError("variance needs at least two values");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

std::optional<double> relative_variance_delta(double var_a, double var_b) {
    if (var_a == 0.0) return std::nullopt;
    return (var_b - var_a) / var_a;
}

VarianceReport variance_report(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
    using ByEpoch = std::map<int, std::vector<const MetricsRecord*>>;
    auto group = [](const std::vector<MetricsRecord>& rs) {
        ByEpoch g;
        for (const auto& r : rs) g[r.epoch].push_back(&r);
        return g;
    };
    const ByEpoch ga = group(a);
    const ByEpoch gb = group(b);
    VarianceReport rep;
    std::vector<double> dl;
    std::vector<double> da;
    for (const auto& [epoch, ra] : ga) {
        const auto it = gb.find(epoch);
        if (it == gb.end()) continue;
        const auto& rb = it->second;
        if (ra.size() < 3 || rb.size() < 3) {
            throw ConfigError("epoch " + std::to_string(epoch) + " has fewer than three seeds in an arm");
        }
        for (const char* metric : {"train_loss", "val_acc"}) {
            const bool loss = std::string(metric) == "train_loss";
            std::vector<double> va;
            std::vector<double> vb;
            for (const auto* r : ra) va.push_back(loss ? r->train_loss : r->val_acc);
            for (const auto* r : rb) vb.push_back(loss ? r->train_loss : r->val_acc);
            VarianceRow row{epoch, metric, sample_variance(va), sample_variance(vb), std::nullopt};
            row.delta = relative_variance_delta(row.var_a, row.var_b);
            if (row.delta) (loss ? dl : da).push_back(*row.delta);
            rep.rows.push_back(row);
        }
    }
    if (rep.rows.empty()) throw ConfigError("the arms share no epochs");
    auto mean = [](const std::vector<double>& v) -> std::optional<double> {
        if (v.empty()) return std::nullopt;
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    rep.mean_delta_loss = mean(dl);
    rep.mean_delta_acc = mean(da);
    return rep;
}

std::string format_variance_csv(const VarianceReport& r) {
    std::string out = "epoch,metric,var_a,var_b,delta\n";
    for (const auto& row : r.rows) {
        out += std::to_string(row.epoch) + "," + row.metric + "," + fmt(row.var_a) + "," + fmt(row.var_b) + "," +
               (row.delta ? fmt(*row.delta) : std::string("undefined")) + "\n";
    }
    return out;
}

}  // namespace gtddp::trainer
