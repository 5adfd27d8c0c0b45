#include "gtddp/trainer/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gtddp/errors.hpp"

namespace gtddp::trainer {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double d = 0.0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, d);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return d;
}

long long to_int(const std::string& key, const std::string& v) {
    long long n = 0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, n);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return n;
}

int to_small_int(const std::string& key, const std::string& v) {
    const long long n = to_int(key, v);
    if (n < -1'000'000'000 || n > 1'000'000'000) throw ConfigError(key + ": value out of range");
    return static_cast<int>(n);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
    std::uint64_t n = 0;
    const auto* end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, n);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": expected a seed, got '" + v + "'");
    return n;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

Shape parse_shape(const std::string& key, const std::string& v) {
    const auto parts = split(v, 'x');
    if (parts.size() != 3) throw ConfigError(key + ": expected CxHxW, got '" + v + "'");
    return {to_small_int(key, parts[0]), to_small_int(key, parts[1]), to_small_int(key, parts[2])};
}

// "kind a=1 b=2" into the kind and its attributes.
std::pair<std::string, std::map<std::string, std::string>> parse_attrs(const std::string& text, bool has_kind) {
    const auto words = split(text, ' ');
    std::pair<std::string, std::map<std::string, std::string>> out;
    std::size_t i = 0;
    if (has_kind) {
        if (words.empty()) throw ConfigError("empty layer description");
        out.first = words[0];
        i = 1;
    }
    for (; i < words.size(); ++i) {
        const auto eq = words[i].find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("expected attr=value, got '" + words[i] + "'");
        if (!out.second.emplace(words[i].substr(0, eq), words[i].substr(eq + 1)).second) {
            throw ConfigError("duplicate attribute '" + words[i].substr(0, eq) + "'");
        }
    }
    return out;
}

int index_suffix(const std::string& key, const std::string& prefix) {
    const int n = to_small_int(key, key.substr(prefix.size()));
    if (n < 0) throw ConfigError(key + ": negative index");
    return n;
}

}  // namespace

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") return OptimizerKind::kSgd;
    if (name == "rmsprop") return OptimizerKind::kRmsprop;
    if (name == "adam") return OptimizerKind::kAdam;
    if (name == "ekfac") return OptimizerKind::kEkfac;
    throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::kSgd: return "sgd";
        case OptimizerKind::kRmsprop: return "rmsprop";
        case OptimizerKind::kAdam: return "adam";
        case OptimizerKind::kEkfac: return "ekfac";
    }
    return "?";
}

DatasetKind parse_dataset_kind(const std::string& name) {
    if (name == "digits-csv") return DatasetKind::kDigitsCsv;
    if (name == "mnist-idx") return DatasetKind::kMnistIdx;
    if (name == "synthetic") return DatasetKind::kSynthetic;
    throw ConfigError("unknown dataset '" + name + "'");
}

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::kDigitsCsv: return "digits-csv";
        case DatasetKind::kMnistIdx: return "mnist-idx";
        case DatasetKind::kSynthetic: return "synthetic";
    }
    return "?";
}

std::string ExperimentConfig::optimizer_name() const {
    return (gtddp ? "gtddp-" : "") + to_string(base);
}

double ExperimentConfig::effective_damping() const {
    if (damping) return *damping;
    return base == OptimizerKind::kEkfac ? 1e-3 : 0.0;
}

CurvatureSettings ExperimentConfig::curvature_settings() const {
    CurvatureSettings s;
    switch (base) {
        case OptimizerKind::kSgd: s.kind = CurvatureKind::kSpherical; break;
        case OptimizerKind::kRmsprop: s.kind = CurvatureKind::kRmsprop; break;
        case OptimizerKind::kAdam: s.kind = CurvatureKind::kAdam; break;
        case OptimizerKind::kEkfac: s.kind = CurvatureKind::kKronecker; break;
    }
    s.lr = lr;
    s.damping = effective_damping();
    s.eps = eps;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.kron_decay = kron_decay;
    s.weight_decay = weight_decay;
    s.scale_by_lr = scale_by_lr;
    s.coop_kron = coop_kron;
    s.eigen_rescale = eigen_rescale;
    return s;
}

DdpOptions ExperimentConfig::ddp_options() const {
    DdpOptions o;
    o.loss = loss;
    o.gn_terminal = gn_terminal;
    o.outer_product = outer_product;
    o.force_qux_zero = force_qux_zero;
    o.weight_decay = weight_decay;
    return o;
}

void ExperimentConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("opt.lr must be positive");
    if (effective_damping() < 0.0) throw ConfigError("opt.damping must be non-negative");
    if (!(eps >= 0.0)) throw ConfigError("opt.eps must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("opt.beta1/beta2 must be in [0, 1)");
    if (kron_decay < 0.0 || kron_decay >= 1.0) throw ConfigError("opt.kron_decay must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("opt.weight_decay must be non-negative");
    if (epochs < 0) throw ConfigError("opt.epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("opt.batch_size must be at least 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("data.val_fraction must be in [0, 1)");
    if (synthetic_count < 1) throw ConfigError("data.count must be at least 1");
    if (outer_product && !gn_terminal) throw ConfigError("opt.outer_product requires opt.gn_terminal");
    if (dataset != DatasetKind::kSynthetic && data_path.empty()) throw ConfigError("data.path is required");
    if (dataset == DatasetKind::kMnistIdx && labels_path.empty()) throw ConfigError("data.labels_path is required");
}

const std::vector<std::string>& scalar_keys() {
    static const std::vector<std::string> keys{
        "net.input",        "opt.optimizer",      "opt.lr",           "opt.damping",       "opt.eps",
        "opt.beta1",        "opt.beta2",          "opt.kron_decay",   "opt.weight_decay",  "opt.epochs",
        "opt.batch_size",   "opt.loss",           "opt.gn_terminal",  "opt.outer_product", "opt.coop_kron",
        "opt.eigen_rescale", "opt.force_qux_zero", "opt.scale_by_lr", "data.dataset",      "data.path",
        "data.labels_path", "data.count",         "data.val_fraction", "data.split_seed",  "seeds",
        "out.dir"};
    return keys;
}

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
}

LayerSpec parse_layer(const std::string& text) {
    auto [kind, attrs] = parse_attrs(text, true);
    LayerSpec l;
    l.kind = parse_layer_kind(kind);
    for (const auto& [k, v] : attrs) {
        if (k == "out") l.out_channels = to_small_int(k, v);
        else if (k == "k") l.kernel = to_small_int(k, v);
        else if (k == "stride") l.stride = to_small_int(k, v);
        else if (k == "pad") l.padding = to_small_int(k, v);
        else if (k == "act") l.activation = parse_activation(v);
        else if (k == "bias") l.bias = to_bool(k, v);
        else throw ConfigError("unknown layer attribute '" + k + "'");
    }
    if (l.kind == LayerKind::kDense && (l.kernel != 1 || l.stride != 1 || l.padding != 0)) {
        throw ConfigError("dense layers take no kernel, stride or padding");
    }
    return l;
}

ResidualBlock parse_block(const std::string& text) {
    auto attrs = parse_attrs(text, false).second;
    ResidualBlock b;
    bool has_split = false;
    bool has_merge = false;
    LayerSpec p;
    p.kind = LayerKind::kProjection;
    bool proj = false;
    bool proj_attr = false;
    for (const auto& [k, v] : attrs) {
        if (k == "split") b.split = to_small_int(k, v), has_split = true;
        else if (k == "merge") b.merge = to_small_int(k, v), has_merge = true;
        else if (k == "proj") p.out_channels = to_small_int(k, v), proj = true;
        else if (k == "proj_stride") p.stride = to_small_int(k, v), proj_attr = true;
        else if (k == "proj_bias") p.bias = to_bool(k, v), proj_attr = true;
        else if (k == "proj_at") b.projection_at = to_small_int(k, v), proj_attr = true;
        else throw ConfigError("unknown block attribute '" + k + "'");
    }
    if (!has_split || !has_merge) throw ConfigError("residual block needs split and merge");
    if (proj_attr && !proj) throw ConfigError("projection attributes without proj=<channels>");
    if (proj) b.projection = p;
    return b;
}

ExperimentConfig build_config(const KeyValues& kv) {
    ExperimentConfig c;
    std::map<int, LayerSpec> layers;
    std::map<int, ResidualBlock> blocks;
    bool has_input = false;
    for (const auto& [key, v] : kv) {
        try {
            if (key == "net.input") c.net.input = parse_shape(key, v), has_input = true;
            else if (key.rfind("net.layer.", 0) == 0) layers[index_suffix(key, "net.layer.")] = parse_layer(v);
            else if (key.rfind("net.block.", 0) == 0) blocks[index_suffix(key, "net.block.")] = parse_block(v);
            else if (key == "opt.optimizer") {
                const bool g = v.rfind("gtddp-", 0) == 0;
                c.base = parse_optimizer_kind(g ? v.substr(6) : v);
                c.gtddp = g;
            } else if (key == "opt.lr") c.lr = to_double(key, v);
            else if (key == "opt.damping") c.damping = to_double(key, v);
            else if (key == "opt.eps") c.eps = to_double(key, v);
            else if (key == "opt.beta1") c.beta1 = to_double(key, v);
            else if (key == "opt.beta2") c.beta2 = to_double(key, v);
            else if (key == "opt.kron_decay") c.kron_decay = to_double(key, v);
            else if (key == "opt.weight_decay") c.weight_decay = to_double(key, v);
            else if (key == "opt.epochs") c.epochs = to_small_int(key, v);
            else if (key == "opt.batch_size") c.batch_size = to_small_int(key, v);
            else if (key == "opt.loss") c.loss = parse_loss(v);
            else if (key == "opt.gn_terminal") c.gn_terminal = to_bool(key, v);
            else if (key == "opt.outer_product") c.outer_product = to_bool(key, v);
            else if (key == "opt.coop_kron") c.coop_kron = to_bool(key, v);
            else if (key == "opt.eigen_rescale") c.eigen_rescale = to_bool(key, v);
            else if (key == "opt.force_qux_zero") c.force_qux_zero = to_bool(key, v);
            else if (key == "opt.scale_by_lr") c.scale_by_lr = to_bool(key, v);
            else if (key == "data.dataset") c.dataset = parse_dataset_kind(v);
            else if (key == "data.path") c.data_path = v;
            else if (key == "data.labels_path") c.labels_path = v;
            else if (key == "data.count") c.synthetic_count = to_small_int(key, v);
            else if (key == "data.val_fraction") c.val_fraction = to_double(key, v);
            else if (key == "data.split_seed") c.split_seed = to_seed(key, v);
            else if (key == "seeds") {
                c.seeds.clear();
                for (const auto& s : split(v, ',')) c.seeds.push_back(to_seed(key, s));
            } else if (key == "out.dir") c.out_dir = v;
            else throw ConfigError("unknown config key");
        } catch (const ConfigError& e) {
            throw ConfigError(key + ": " + e.what());
        }
    }
    if (!has_input) throw ConfigError("net.input is required");
    int expect = 0;
    for (auto& [i, l] : layers) {
        if (i != expect++) throw ConfigError("net.layer indices must be contiguous from 0");
        c.net.layers.push_back(l);
    }
    for (auto& [i, b] : blocks) c.net.blocks.push_back(b);
    c.net.resolve();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path, const KeyValues& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    KeyValues kv = parse_key_values(ss.str());
    // Data paths in a config file are relative to the file; overrides stay relative to the caller.
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    for (auto& [k, v] : kv) {
        if ((k == "data.path" || k == "data.labels_path") && !v.empty() && std::filesystem::path(v).is_relative()) {
            v = (dir / v).lexically_normal().string();
        }
    }
    kv.insert(kv.end(), overrides.begin(), overrides.end());
    return build_config(kv);
}

}  // namespace gtddp::trainer
