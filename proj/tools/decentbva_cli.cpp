#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <decentbva/decentbva.hpp>

namespace {

using namespace decentbva;

struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t threads = 1;
    bool quiet = false;
};

ExperimentConfig load_with_overrides(const std::string& path, const CommonFlags& flags) {
    ExperimentConfig cfg = load_config(path);
    if (flags.seed) cfg.master_seed = *flags.seed;
    if (flags.out_dir) cfg.output.dir = *flags.out_dir;
    cfg.plan.threads = flags.threads;
    return cfg;
}

int cmd_run(const std::string& config_path, const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(config_path, flags);
    RunResult result = run_experiment(cfg, flags.quiet);
    if (!flags.quiet) {
        const RoundRecord& last = result.records.back();
        std::printf("done: %zu rounds, final clean %.4f", result.server.round, last.clean_acc);
        for (const auto& [name, acc] : last.robust_acc) std::printf(" %s %.4f", name.c_str(), acc);
        std::printf("\nwrote %s\n", result.dir.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(config_path, flags);
    Checkpoint ckpt = load_checkpoint(checkpoint_path, cfg.arch);
    BuiltData data = build_datasets(cfg);
    EvalResult result = evaluate(ckpt.model, data.test, cfg.eval.attacks, cfg.plan.threads,
                                 derive_seed(cfg.master_seed, 0x6576616cu, ckpt.round));
    std::printf("checkpoint round %u\n", ckpt.round);
    std::printf("clean %s\n", format_double(result.clean_acc).c_str());
    for (const auto& [name, acc] : result.robust_acc)
        std::printf("%s %s\n", name.c_str(), format_double(acc).c_str());
    return 0;
}

int cmd_sweep(const std::string& config_path, const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(config_path, flags);
    std::vector<SweepRow> rows = bv_sweep(cfg, flags.quiet);
    if (!flags.quiet) std::printf("wrote %s/sweep.csv\n", cfg.output.dir.c_str());
    return 0;
}

int cmd_partition_inspect(const std::string& config_path, const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(config_path, flags);
    PartitionReport report = partition_inspect(cfg);
    auto print_hist = [](const char* label, const std::vector<std::size_t>& hist) {
        std::size_t total = 0, distinct = 0;
        for (std::size_t c : hist) {
            total += c;
            distinct += c > 0;
        }
        std::printf("%s:", label);
        for (std::size_t c : hist) std::printf(" %zu", c);
        std::printf("  (total %zu, %zu distinct labels)\n", total, distinct);
    };
    print_hist("server", report.server_hist);
    for (std::size_t k = 0; k < report.client_hists.size(); ++k) {
        const std::string label = "client " + std::to_string(k);
        print_hist(label.c_str(), report.client_hists[k]);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust decentralized learning simulator"};
    app.require_subcommand(1);

    CommonFlags flags;
    app.add_option("--seed", flags.seed, "Override the config's master seed")
        ->expected(1);
    app.add_option("--out-dir", flags.out_dir, "Override the config's output directory");
    app.add_option("--threads", flags.threads, "Worker threads for clients/attacks/eval")
        ->check(CLI::PositiveNumber);
    app.add_flag("--quiet", flags.quiet, "Suppress progress output");
    app.fallthrough();

    std::string run_config, eval_checkpoint, eval_config, sweep_config, inspect_config;
    CLI::App* run_cmd = app.add_subcommand("run", "Run a federated experiment");
    run_cmd->add_option("config", run_config, "Experiment config (JSON)")->required();
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test set");
    eval_cmd->add_option("checkpoint", eval_checkpoint, "Checkpoint blob")->required();
    eval_cmd->add_option("config", eval_config, "Experiment config (JSON)")->required();
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "Bias/variance across model widths");
    sweep_cmd->add_option("config", sweep_config, "Experiment config (JSON)")->required();
    CLI::App* inspect_cmd =
        app.add_subcommand("partition-inspect", "Print per-client class histograms");
    inspect_cmd->add_option("config", inspect_config, "Experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(run_config, flags);
        if (eval_cmd->parsed()) return cmd_eval(eval_checkpoint, eval_config, flags);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_config, flags);
        if (inspect_cmd->parsed()) return cmd_partition_inspect(inspect_config, flags);
    } catch (const decentbva::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
