// Command-line front end. Every subcommand is a pure function of the config
// file plus the flag overrides, so runs are reproducible from one artifact.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kvprefill/kvprefill.hpp"

namespace {

struct FlagOverrides {
    std::string config_path;
    std::string out_path;
    std::string table_path;
    std::string format;
    int64_t seed = -1;
};

kvprefill::ExperimentConfig resolve_config(const FlagOverrides& flags) {
    kvprefill::ExperimentConfig config;
    if (!flags.config_path.empty()) config = kvprefill::load_experiment_config(flags.config_path);
    if (flags.seed >= 0) config.seed = static_cast<uint64_t>(flags.seed);
    if (!flags.out_path.empty()) config.out_path = flags.out_path;
    if (!flags.table_path.empty()) config.table_path = flags.table_path;
    if (!flags.format.empty()) {
        if (flags.format != "csv" && flags.format != "json")
            throw kvprefill::ConfigError("format must be csv or json");
        config.format = flags.format;
    }
    return config;
}

void add_common_flags(CLI::App* cmd, FlagOverrides& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config file (JSON)");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out", flags.out_path, "output file (default: stdout)");
    cmd->add_option("--table", flags.table_path, "partition lookup-table file");
    cmd->add_option("--format", flags.format, "output format: csv or json");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parallel prompt-phase engine: equivalence checks, sweeps, partition search"};
    app.require_subcommand(1);

    FlagOverrides flags;
    int64_t predict_length = 0;

    CLI::App* verify = app.add_subcommand("verify", "equivalence and accounting checks");
    CLI::App* sweep = app.add_subcommand("sweep", "scalability table over (C, p, strategy)");
    CLI::App* search = app.add_subcommand("search", "build a partition lookup table");
    CLI::App* predict = app.add_subcommand("predict", "partition for C from a lookup table");
    CLI::App* noise = app.add_subcommand("noise", "degradation under a slowed link");
    for (CLI::App* cmd : {verify, sweep, search, predict, noise}) add_common_flags(cmd, flags);
    predict->add_option("C", predict_length, "context length to predict for")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const kvprefill::ExperimentConfig config = resolve_config(flags);
        if (verify->parsed()) return kvprefill::cmd_verify(config);
        if (sweep->parsed()) return kvprefill::cmd_sweep(config);
        if (search->parsed()) return kvprefill::cmd_search(config);
        if (predict->parsed()) return kvprefill::cmd_predict(config, predict_length);
        if (noise->parsed()) return kvprefill::cmd_noise(config);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const kvprefill::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const kvprefill::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
