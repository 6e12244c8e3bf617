#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include "ntklab/experiment.hpp"

namespace {

std::size_t resolve_threads(std::size_t requested) {
    if (const char* env = std::getenv("NTKLAB_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return v;
        std::cerr << "ntklab: ignoring invalid NTKLAB_THREADS='" << env << "'\n";
    }
    return requested == 0 ? 1 : requested;
}

int run(const std::string& sub, const std::string& config_path, std::string out, std::uint64_t seed_offset,
        std::size_t threads) {
    ntklab::ExperimentConfig cfg;
    try {
        cfg = ntklab::load_config(config_path, sub);
    } catch (const ntklab::ConfigError& e) {
        std::cerr << "ntklab: config error in " << config_path << ": " << e.what() << "\n";
        return 2;
    }
    ntklab::offset_seeds(cfg, seed_offset);
    if (out.empty()) out = cfg.output_path;

    ntklab::ExperimentResult result;
    try {
        result = ntklab::run_experiment(cfg, resolve_threads(threads));
    } catch (const ntklab::ConfigError& e) {
        std::cerr << "ntklab: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ntklab: " << e.what() << "\n";
        return 1;
    }

    const std::string csv = result.table_csv ? *result.table_csv : ntklab::records_to_csv(result.records);
    try {
        if (out.empty() || out == "-") std::cout << csv;
        else ntklab::write_text(csv, out);
    } catch (const std::exception& e) {
        std::cerr << "ntklab: " << e.what() << "\n";
        return 1;
    }

    if (!result.summary.empty()) std::cerr << result.summary;
    for (const auto& w : result.warnings)
        std::cerr << "warning: " << w.experiment << " seed=" << w.seed << " n=" << w.n << " p=" << w.p << ": "
                  << w.message << "\n";
    for (const auto& f : result.failures)
        std::cerr << "failed: " << f.experiment << " seed=" << f.seed << " n=" << f.n << " p=" << f.p << " d=" << f.d
                  << ": " << f.message << "\n";
    return result.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NTK overfitting experiments"};
    app.require_subcommand(1);

    std::string config_path, out;
    std::uint64_t seed_offset = 0;
    std::size_t threads = 1;
    for (const auto& name : ntklab::experiment_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output CSV path (default: config 'output' or stdout)");
        sub->add_option("--seed-offset", seed_offset, "added to every seed");
        sub->add_option("--threads", threads, "worker threads (NTKLAB_THREADS overrides)")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return run(app.get_subcommands().front()->get_name(), config_path, out, seed_offset, threads);
}
