#include "moerlab/report.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "fmt_detail.hpp"
#include "moerlab/moe.hpp"

namespace moerlab {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void write_run_csv(const RunResult& run, std::ostream& out) {
    out << "step,train_loss,eval_loss\n";
    for (const TrainRecord& r : run.records)
        out << r.step << "," << detail::g17(r.train_loss) << "," << detail::g17(r.eval_loss)
            << "\n";
}

void write_aggregate_csv(const std::vector<AggregatePoint>& points, std::ostream& out) {
    out << "step,mean_train_loss,var_train_loss,mean_eval_loss,var_eval_loss\n";
    for (const AggregatePoint& p : points)
        out << p.step << "," << detail::g17(p.mean_train_loss) << ","
            << detail::g17(p.var_train_loss) << "," << detail::g17(p.mean_eval_loss) << ","
            << detail::g17(p.var_eval_loss) << "\n";
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "name,kind,M,k,h_e,total_params,active_params,mean_final_eval_loss,"
           "var_final_eval_loss,mean_zero_gate_fraction\n";
    for (const ComparisonRow& r : rows)
        out << r.name << "," << to_string(r.kind) << "," << r.experts << "," << r.k << ","
            << r.h_e << "," << r.total_params << "," << r.active_params << ","
            << detail::g17(r.mean_final_eval_loss) << "," << detail::g17(r.var_final_eval_loss)
            << "," << detail::g17(r.mean_zero_gate_fraction) << "\n";
}

namespace {

ComparisonRow make_comparison_row(const TrainConfig& config, const std::vector<RunResult>& runs) {
    ComparisonRow row;
    row.name = config.name;
    row.kind = config.kind;
    row.experts = config.experts;
    row.k = config.k;
    row.h_e = config.h_e;
    const auto [total, active] = moe_active_param_count(runs[0].moe);
    row.total_params = total;
    row.active_params = active;

    Vector finals(runs.size()), zeros(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        finals[i] = runs[i].final_eval_loss;
        zeros[i] = runs[i].zero_gate_fraction;
    }
    const auto [mean_final, var_final] = mean_and_population_variance(finals);
    row.mean_final_eval_loss = mean_final;
    row.var_final_eval_loss = var_final;
    row.mean_zero_gate_fraction = mean_and_population_variance(zeros).first;
    return row;
}

}  // namespace

void write_summary_json(const TrainConfig& config, const std::vector<RunResult>& runs,
                        std::ostream& out) {
    require(!runs.empty(), "write_summary_json: no runs");

    ordered_json j;
    j["name"] = config.name;
    j["config_hash"] = config_hash(config);

    ordered_json cfg;
    cfg["task"] = to_string(config.task);
    cfg["d"] = config.d;
    cfg["h_e"] = config.h_e;
    cfg["window"] = config.window;
    cfg["expert_activation"] = to_string(config.expert_activation);
    cfg["kind"] = to_string(config.kind);
    cfg["M"] = config.experts;
    cfg["k"] = config.k;
    cfg["eps"] = config.eps;
    cfg["init_method"] = to_string(config.init_method);
    cfg["renormalize_after_topk"] = config.renormalize_after_topk;
    cfg["batch_size"] = config.batch_size;
    cfg["steps"] = config.steps;
    cfg["eval_every"] = config.eval_every;
    cfg["lr"] = config.lr;
    cfg["betas"] = {config.betas[0], config.betas[1]};
    cfg["seeds"] = config.seeds;
    cfg["corpus"] = config.corpus;
    j["config"] = cfg;

    const auto [total, active] = moe_active_param_count(runs[0].moe);
    j["total_params"] = total;
    j["active_params"] = active;
    j["scale_initial"] = runs[0].moe.router.scale_initial;

    ordered_json per_seed = ordered_json::array();
    double wall_total = 0.0;
    for (const RunResult& run : runs) {
        ordered_json r;
        r["seed"] = run.seed;
        r["final_eval_loss"] = run.final_eval_loss;
        r["zero_gate_fraction"] = run.zero_gate_fraction;
        per_seed.push_back(std::move(r));
        wall_total += run.wall_clock_seconds;
    }
    j["runs"] = std::move(per_seed);

    Vector finals(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i)
        finals[i] = runs[i].final_eval_loss;
    const auto [mean_final, var_final] = mean_and_population_variance(finals);
    j["mean_final_eval_loss"] = mean_final;
    j["var_final_eval_loss"] = var_final;

    // The single field allowed to differ between reruns of one config.
    j["wall_clock_seconds"] = wall_total;

    out << j.dump(2) << "\n";
}

namespace {

std::string seed_stem(const TrainConfig& config, std::uint64_t seed) {
    return config.name + "_seed" + std::to_string(seed);
}

ExperimentResult write_experiment_files(const TrainConfig& config,
                                        std::vector<RunResult> runs, const std::string& out_dir) {
    fs::create_directories(out_dir);
    ExperimentResult result;
    result.config = config;

    for (const RunResult& run : runs) {
        const fs::path csv_path = fs::path(out_dir) / (seed_stem(config, run.seed) + ".csv");
        std::ofstream csv(csv_path);
        if (!csv)
            throw std::runtime_error("cannot write " + csv_path.string());
        write_run_csv(run, csv);
        result.files_written.push_back(csv_path.string());

        const fs::path ckpt_path = fs::path(out_dir) / (seed_stem(config, run.seed) + ".ckpt");
        save_checkpoint(run.moe, ckpt_path);
        result.files_written.push_back(ckpt_path.string());
    }

    if (runs.size() > 1) {
        const fs::path agg_path = fs::path(out_dir) / (config.name + "_aggregate.csv");
        std::ofstream agg(agg_path);
        if (!agg)
            throw std::runtime_error("cannot write " + agg_path.string());
        write_aggregate_csv(aggregate_runs(runs), agg);
        result.files_written.push_back(agg_path.string());
    }

    const fs::path summary_path = fs::path(out_dir) / (config.name + "_summary.json");
    std::ofstream summary(summary_path);
    if (!summary)
        throw std::runtime_error("cannot write " + summary_path.string());
    write_summary_json(config, runs, summary);
    result.files_written.push_back(summary_path.string());

    result.row = make_comparison_row(config, runs);
    result.runs = std::move(runs);
    return result;
}

}  // namespace

ExperimentResult run_experiment(const TrainConfig& config, const std::string& out_dir) {
    config.validate();
    const std::string corpus =
        config.task == Task::CharLm ? load_corpus(config.corpus) : std::string{};
    std::vector<RunResult> runs;
    runs.reserve(config.seeds.size());
    for (std::uint64_t seed : config.seeds)
        runs.push_back(train_single(config, seed, corpus));
    return write_experiment_files(config, std::move(runs), out_dir);
}

std::size_t sweep_threads_from_env() {
    const char* raw = std::getenv("MOERLAB_THREADS");
    if (!raw)
        return 1;
    char* end = nullptr;
    const long n = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || n < 1)
        return 1;
    return static_cast<std::size_t>(n);
}

std::vector<ExperimentResult> run_sweep(const std::vector<TrainConfig>& configs,
                                        const std::string& out_dir, std::size_t threads) {
    require(!configs.empty(), "run_sweep: no configs");
    for (const TrainConfig& config : configs)
        config.validate();

    // Corpus text per config, loaded up front so workers stay IO-free.
    std::vector<std::string> corpora(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c)
        if (configs[c].task == Task::CharLm)
            corpora[c] = load_corpus(configs[c].corpus);

    struct Job {
        std::size_t config_index;
        std::size_t seed_index;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < configs.size(); ++c)
        for (std::size_t s = 0; s < configs[c].seeds.size(); ++s)
            jobs.push_back({c, s});

    std::vector<std::vector<RunResult>> runs(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c)
        runs[c].resize(configs[c].seeds.size());

    auto run_job = [&](const Job& job) {
        const TrainConfig& config = configs[job.config_index];
        runs[job.config_index][job.seed_index] =
            train_single(config, config.seeds[job.seed_index], corpora[job.config_index]);
    };

    if (threads <= 1 || jobs.size() <= 1) {
        for (const Job& job : jobs)
            run_job(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs.size())
                    return;
                try {
                    run_job(jobs[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error)
                        first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const std::size_t n_workers = std::min(threads, jobs.size());
        pool.reserve(n_workers);
        for (std::size_t t = 0; t < n_workers; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
        if (first_error)
            std::rethrow_exception(first_error);
    }

    std::vector<ExperimentResult> results;
    results.reserve(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c)
        results.push_back(write_experiment_files(configs[c], std::move(runs[c]), out_dir));

    std::vector<ComparisonRow> rows;
    rows.reserve(results.size());
    for (const ExperimentResult& r : results)
        rows.push_back(r.row);
    std::sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        if (a.experts != b.experts)
            return a.experts < b.experts;
        if (a.k != b.k)
            return a.k < b.k;
        if (a.h_e != b.h_e)
            return a.h_e < b.h_e;
        if (a.kind != b.kind)
            return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        return a.name < b.name;
    });
    const fs::path cmp_path = fs::path(out_dir) / "sweep_comparison.csv";
    std::ofstream cmp(cmp_path);
    if (!cmp)
        throw std::runtime_error("cannot write " + cmp_path.string());
    write_comparison_csv(rows, cmp);

    return results;
}

}  // namespace moerlab
