#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "bnnshift/errors.hpp"
#include "bnnshift/experiment.hpp"

namespace {

int cmd_list() {
    const auto& registry = bnnshift::experiment_registry();
    std::printf("%-22s %-10s %s\n", "name", "criterion", "description");
    for (const auto& e : registry)
        std::printf("%-22s %-10d %s\n", e.name.c_str(), e.criterion,
                    e.description.c_str());
    std::printf("\nconfig dir: %s\n", bnnshift::default_config_dir().c_str());
    return 0;
}

std::string resolve_config(const std::string& arg) {
    namespace fs = std::filesystem;
    if (fs::exists(arg)) return arg;
    // bundled name, with or without .json
    for (const auto& e : bnnshift::experiment_registry()) {
        if (e.name == arg || e.config_file == arg) {
            fs::path p = fs::path(bnnshift::default_config_dir()) / e.config_file;
            if (fs::exists(p)) return p.string();
        }
    }
    return arg;  // let the runner report the open failure
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bnnlab: config-driven posterior-contraction experiments"};
    app.require_subcommand(1);

    auto* list = app.add_subcommand("list", "list bundled experiment configs");

    std::string config_arg;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 0;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_arg, "config path or bundled experiment name")
        ->required();
    run->add_option("--out", out_dir, "override the output directory");
    run->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    run->add_option("--threads", threads, "worker threads for ensembles");

    CLI11_PARSE(app, argc, argv);

    if (list->parsed()) return cmd_list();

    bnnshift::RunOverrides ov;
    if (!out_dir.empty()) ov.output_dir = out_dir;
    if (seed_set) ov.seed = seed;
    if (threads > 0) ov.threads = threads;

    try {
        bnnshift::RunReport report =
            bnnshift::run_experiment_file(resolve_config(config_arg), ov);
        std::printf("ok %s (%.2fs) -> %s\n", report.config_hash.c_str(),
                    report.wall_clock_seconds, report.output_dir.c_str());
        return 0;
    } catch (const bnnshift::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return 1;
    }
}
