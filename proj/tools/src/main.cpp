// moerlab CLI. Exit codes are a contract:
//   0 success, 1 property failure, 2 usage/config error, 3 runtime abort.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moerlab/config.hpp"
#include "moerlab/report.hpp"
#include "moerlab/router.hpp"
#include "moerlab/svgplot.hpp"
#include "moerlab/trainer.hpp"
#include "moerlab/verify.hpp"

namespace {

using namespace moerlab;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string item =
            text.substr(start, comma == std::string::npos ? comma : comma - start);
        std::size_t used = 0;
        std::uint64_t value = 0;
        try {
            value = std::stoull(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("--seed: '" + item + "' is not a seed");
        }
        if (used != item.size())
            throw ConfigError("--seed: '" + item + "' is not a seed");
        seeds.push_back(value);
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    if (seeds.empty())
        throw ConfigError("--seed: empty seed list");
    return seeds;
}

int cmd_train(const std::string& config_path, const std::string& seed_list,
              const std::string& out_dir) {
    TrainConfig config = load_config_file(config_path);
    if (!seed_list.empty())
        config.seeds = parse_seed_list(seed_list);
    const ExperimentResult result = run_experiment(config, out_dir);
    for (const RunResult& run : result.runs)
        std::cout << config.name << " seed " << run.seed << ": final eval loss "
                  << run.final_eval_loss << " (" << run.wall_clock_seconds << "s)\n";
    for (const std::string& path : result.files_written)
        std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_sweep(const std::vector<std::string>& config_paths, const std::string& out_dir) {
    std::vector<TrainConfig> configs;
    configs.reserve(config_paths.size());
    for (const std::string& path : config_paths)
        configs.push_back(load_config_file(path));
    const std::size_t threads = sweep_threads_from_env();
    std::cout << "sweep: " << configs.size() << " configs, " << threads << " worker(s)\n";
    const std::vector<ExperimentResult> results = run_sweep(configs, out_dir, threads);
    for (const ExperimentResult& result : results)
        std::cout << result.config.name << ": mean final eval loss "
                  << result.row.mean_final_eval_loss << "\n";
    std::cout << "wrote " << (std::filesystem::path(out_dir) / "sweep_comparison.csv").string()
              << "\n";
    return 0;
}

int cmd_verify(const std::string& suite, std::size_t instances, std::uint64_t seed,
               bool inject_kern_sign_error) {
    testhooks::kern_backward_sign_flip = inject_kern_sign_error;

    VerifyOptions options;
    options.instances = instances;
    options.seed = seed;

    struct Property {
        const char* name;
        VerifyReport (*fn)(const VerifyOptions&);
    };
    std::vector<Property> properties;
    if (suite == "gradients" || suite == "all") {
        properties.push_back({"gradients: finite differences", verify_gradients});
        properties.push_back({"gradients: unselected-logit structure", verify_unselected_gradients});
    }
    if (suite == "invariants" || suite == "all") {
        properties.push_back({"invariants: gate norm and zero fraction", verify_gate_properties});
        properties.push_back({"invariants: monte carlo init", verify_mc_init});
        properties.push_back({"invariants: param and flop parity", verify_param_flop_parity});
    }
    if (suite == "oracle" || suite == "all") {
        properties.push_back({"oracle: kernel-regression equivalence", verify_nw_equivalence});
    }
    if (properties.empty())
        throw ConfigError("--suite must be one of gradients, invariants, oracle, all");

    bool all_ok = true;
    for (const Property& property : properties) {
        const VerifyReport report = property.fn(options);
        all_ok = all_ok && report.ok;
        std::cout << (report.ok ? "[PASS] " : "[FAIL] ") << property.name << " ("
                  << report.checked << " checks)\n";
        std::istringstream lines(report.detail);
        for (std::string line; std::getline(lines, line);)
            std::cout << "    " << line << "\n";
    }
    return all_ok ? 0 : 1;
}

int cmd_plot(const std::vector<std::string>& csv_paths, const std::string& out_path) {
    const std::vector<PlotSeries> series = load_plot_series(csv_paths);
    std::ofstream out(out_path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot open output file: " + out_path);
    write_loss_svg(series, out);
    if (!out.good())
        throw ConfigError("failed writing " + out_path);
    std::cout << "wrote " << out_path << " (" << series.size() << " series)\n";
    return 0;
}

int cmd_mc_init(std::size_t d, std::size_t k, std::size_t samples, std::uint64_t seed) {
    if (d == 0 || k == 0 || k > d)
        throw ConfigError("mc-init requires 1 <= k <= d");
    if (samples == 0)
        throw ConfigError("mc-init requires samples >= 1");
    Rng rng(seed);
    const double scale = monte_carlo_scale_init(d, k, samples, rng);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", scale);
    std::cout << buf << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moerlab: a desk-scale mixture-of-experts routing laboratory"};
    app.require_subcommand(1);

    std::string config_path, seed_list, out_dir = "out";
    CLI::App* train = app.add_subcommand("train", "Train one config across its seeds");
    train->add_option("config", config_path, "INI config file")->required();
    train->add_option("--seed", seed_list, "Comma-separated seed override, e.g. 1,2,3");
    train->add_option("--out", out_dir, "Output directory")->capture_default_str();

    std::vector<std::string> sweep_paths;
    std::string sweep_out = "out";
    CLI::App* sweep = app.add_subcommand("sweep", "Train several configs and compare them");
    sweep->add_option("configs", sweep_paths, "INI config files")->required()->expected(-1);
    sweep->add_option("--out", sweep_out, "Output directory")->capture_default_str();

    std::string suite = "all";
    std::size_t instances = 100;
    std::uint64_t verify_seed = 20240611;
    bool inject = false;
    CLI::App* verify = app.add_subcommand("verify", "Run property-check suites");
    verify->add_option("--suite", suite, "gradients | invariants | oracle | all")
        ->capture_default_str();
    verify->add_option("--instances", instances, "Instances per gradient check")
        ->capture_default_str();
    verify->add_option("--seed", verify_seed, "Suite RNG seed")->capture_default_str();
    verify->add_flag("--inject-kern-sign-error", inject)->group("");

    std::vector<std::string> csv_paths;
    std::string svg_out;
    CLI::App* plot = app.add_subcommand("plot", "Render eval-loss curves from CSVs to SVG");
    plot->add_option("csvs", csv_paths, "Run or aggregate CSV files")->required()->expected(-1);
    plot->add_option("--out", svg_out, "Output SVG path")->required();

    std::size_t mc_d = 0, mc_k = 0, mc_samples = 100000;
    std::uint64_t mc_seed = 0;
    CLI::App* mc = app.add_subcommand("mc-init", "Print the Monte Carlo gate-scale estimate");
    mc->add_option("--d", mc_d, "Gate dimension (expert count)")->required();
    mc->add_option("--k", mc_k, "Top-k")->required();
    mc->add_option("--samples", mc_samples, "Sample count")->capture_default_str();
    mc->add_option("--seed", mc_seed, "RNG seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train->parsed())
            return cmd_train(config_path, seed_list, out_dir);
        if (sweep->parsed())
            return cmd_sweep(sweep_paths, sweep_out);
        if (verify->parsed())
            return cmd_verify(suite, instances, verify_seed, inject);
        if (plot->parsed())
            return cmd_plot(csv_paths, svg_out);
        if (mc->parsed())
            return cmd_mc_init(mc_d, mc_k, mc_samples, mc_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingAborted& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
