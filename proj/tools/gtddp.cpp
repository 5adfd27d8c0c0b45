#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "criteria.hpp"
#include "gtddp/errors.hpp"
#include "gtddp/trainer/config.hpp"
#include "gtddp/trainer/metrics.hpp"
#include "gtddp/trainer/train.hpp"

using namespace gtddp;
using namespace gtddp::trainer;

namespace {

int run_train(const std::string& config_path, const KeyValues& overrides) {
    const ExperimentConfig c = load_config(config_path, overrides);
    std::filesystem::create_directories(c.out_dir);
    const std::string stem = (std::filesystem::path(c.out_dir) / c.optimizer_name()).string();
    std::cerr << "training " << c.optimizer_name() << " on " << to_string(c.dataset) << " for " << c.epochs
              << " epochs, " << c.seeds.size() << " seed(s)\n";
    const TrainResult r = train(c);
    for (const auto& rec : r.records) {
        std::cerr << "  seed " << rec.seed << " epoch " << rec.epoch << " loss " << rec.train_loss << " val_acc "
                  << rec.val_acc << " (" << rec.seconds << " s)\n";
    }
    write_metrics_csv(stem + ".csv", r.records);
    std::cout << stem << ".csv\n";
    if (r.clipped > 0) std::cerr << r.clipped << " rank-1 coefficient(s) clipped at zero\n";
    if (r.failures.empty()) return 0;
    std::ofstream diag(stem + ".failures.txt");
    for (const auto& f : r.failures) {
        const std::string line = "seed " + std::to_string(f.seed) + " aborted in epoch " + std::to_string(f.epoch) +
                                 " at iteration " + std::to_string(f.iteration) + ": " + f.message;
        std::cerr << line << "\n";
        diag << line << "\n";
    }
    return 2;
}

int run_report(const std::string& a, const std::string& b, const std::string& out) {
    const VarianceReport r = variance_report(read_metrics_csv(a), read_metrics_csv(b));
    const std::string csv = format_variance_csv(r);
    if (out.empty()) {
        std::cout << csv;
    } else {
        std::ofstream f(out);
        if (!f) throw ConfigError("cannot write " + out);
        f << csv;
    }
    auto show = [](const std::optional<double>& d) { return d ? std::to_string(*d) : std::string("undefined"); };
    std::cerr << "mean variance delta: train_loss " << show(r.mean_delta_loss) << ", val_acc "
              << show(r.mean_delta_acc) << "\n";
    return 0;
}

int run_verify(const acceptance::Options& o) {
    bool ok = true;
    for (const auto& r : acceptance::run_all(o)) {
        std::cout << acceptance::format_line(r) << std::endl;
        ok = ok && r.pass;
    }
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise DDP optimizers for residual networks"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train one optimizer arm over all configured seeds");
    std::string config_path;
    train_cmd->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
    std::map<std::string, std::string> flag_values;
    for (const auto& key : scalar_keys()) train_cmd->add_option("--" + key, flag_values[key], "override " + key);
    std::vector<std::string> sets;
    train_cmd->add_option("--set", sets, "extra key=value overrides, e.g. net.layer.0=...");

    auto* report_cmd = app.add_subcommand("report-variance", "relative across-seed variance of arm b against arm a");
    std::string arm_a;
    std::string arm_b;
    std::string report_out;
    report_cmd->add_option("--arm-a", arm_a, "baseline metrics CSV")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--arm-b", arm_b, "compared metrics CSV")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--out", report_out, "write the report here instead of stdout");

    auto* verify_cmd = app.add_subcommand("verify", "run the acceptance checks");
    acceptance::Options vo;
    verify_cmd->add_flag("--skip-training", vo.skip_training, "skip the DIGITS training checks");
    verify_cmd->add_option("--digits-config", vo.digits_config, "config for the DIGITS comparison");
    verify_cmd->add_option("--out", vo.out_dir, "directory for the DIGITS metrics and variance report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) {
            KeyValues kv;
            for (const auto& key : scalar_keys()) {
                if (train_cmd->count("--" + key) > 0) kv.emplace_back(key, flag_values[key]);
            }
            for (const auto& s : sets) {
                const auto parsed = parse_key_values(s);
                kv.insert(kv.end(), parsed.begin(), parsed.end());
            }
            return run_train(config_path, kv);
        }
        if (*report_cmd) return run_report(arm_a, arm_b, report_out);
        return run_verify(vo);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    }
}
