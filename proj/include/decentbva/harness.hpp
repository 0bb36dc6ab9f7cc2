#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "decentbva/attack.hpp"
#include "decentbva/bias_variance.hpp"
#include "decentbva/config.hpp"
#include "decentbva/dataset.hpp"
#include "decentbva/federation.hpp"
#include "decentbva/metrics.hpp"
#include "decentbva/model.hpp"
#include "decentbva/network.hpp"
#include "decentbva/parallel.hpp"

namespace decentbva {

struct BuiltData {
    LabeledSet test;
    Partition parts; // server holdout + per-client training shards
};

inline std::size_t argmax_class(const std::vector<double>& probs) {
    return std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

inline BuiltData build_datasets(const ExperimentConfig& cfg) {
    const DatasetConfig& d = cfg.dataset;
    LabeledSet train, test;
    switch (d.source) {
        case DataSource::synth_blobs:
            train = synth_blobs(d.classes * d.per_class, d.dims, d.classes, d.spread,
                                derive_seed(cfg.master_seed, 0x7472u)); // "tr"
            test = synth_blobs(d.classes * d.test_per_class, d.dims, d.classes, d.spread,
                               derive_seed(cfg.master_seed, 0x7465u)); // "te"
            break;
        case DataSource::idx:
            train = load_idx(d.train_images, d.train_labels, d.class_count);
            test = load_idx(d.test_images, d.test_labels, d.class_count);
            break;
        case DataSource::csv:
            train = load_csv(d.train_csv, d.class_count);
            test = load_csv(d.test_csv, d.class_count);
            break;
    }
    if (!train.empty() && train.features[0].shape != cfg.arch.input_shape)
        train = reshape_features(std::move(train), cfg.arch.input_shape);
    if (!test.empty() && test.features[0].shape != cfg.arch.input_shape)
        test = reshape_features(std::move(test), cfg.arch.input_shape);
    validate_set(train);
    validate_set(test);
    if (train.class_count != cfg.arch.class_count)
        throw ConfigError("dataset has " + std::to_string(train.class_count) +
                          " classes but the model outputs " +
                          std::to_string(cfg.arch.class_count));

    PartitionSpec spec;
    spec.client_count = cfg.plan.total_clients;
    spec.server_count = d.server_count;
    spec.scheme = d.scheme;
    spec.shards_per_client = d.shards_per_client;
    spec.seed = derive_seed(cfg.master_seed, 0x70617274u); // "part"
    BuiltData built;
    built.test = std::move(test);
    built.parts = partition(train, spec);
    return built;
}

struct EvalResult {
    double clean_acc = 0.0;
    std::vector<std::pair<std::string, double>> robust_acc;
};

// Clean accuracy plus one robust accuracy per configured attack, computed on
// the same examples. Per-example work parallelizes; reductions run in index
// order so results are thread-count independent.
inline EvalResult evaluate(const ModelState& model, const LabeledSet& test,
                           const std::vector<NamedAttack>& attacks, std::size_t threads = 1,
                           std::uint64_t seed = 0) {
    validate_set(test);
    if (test.empty()) throw Error("evaluate: empty test set");
    const std::size_t n = test.size();
    // slot[i] holds 1+attacks correctness flags for example i
    std::vector<std::vector<char>> correct(n);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<char>& row = correct[i];
        row.resize(1 + attacks.size(), 0);
        const Tensor& x = test.features[i];
        const std::size_t y = test.labels[i];
        row[0] = argmax_class(forward(model, x).probs) == y;
        for (std::size_t a = 0; a < attacks.size(); ++a) {
            const AttackConfig& cfg = attacks[a].cfg;
            Tensor adv;
            if (cfg.steps == 1 && !cfg.random_start) {
                adv = fgsm(model, x, y, cfg.epsilon, cfg.loss, cfg.clip_to_unit);
            } else {
                RngStream rng = derive_stream(seed, 0x6576616cu, a, i); // "eval"
                adv = pgd(model, x, y, cfg.epsilon, cfg.steps, effective_step(cfg), cfg.loss,
                          cfg.clip_to_unit, cfg.random_start, &rng);
            }
            row[1 + a] = argmax_class(forward(model, adv).probs) == y;
        }
    });
    EvalResult result;
    std::vector<std::size_t> counts(1 + attacks.size(), 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += std::size_t(correct[i][c]);
    result.clean_acc = double(counts[0]) / double(n);
    for (std::size_t a = 0; a < attacks.size(); ++a)
        result.robust_acc.emplace_back(attacks[a].name, double(counts[1 + a]) / double(n));
    return result;
}

struct RunResult {
    ServerState server;
    std::vector<ClientState> clients;
    std::vector<RoundRecord> records;
    std::string dir;
};

namespace detail {

inline RoundRecord make_record(std::size_t round, const EvalResult& eval, double train_loss,
                               double bias, double variance, double wall_ms) {
    RoundRecord rec;
    rec.round = round;
    rec.clean_acc = eval.clean_acc;
    rec.robust_acc = eval.robust_acc;
    rec.mean_train_loss = train_loss;
    rec.mean_bias = bias;
    rec.mean_variance = variance;
    rec.wall_ms = wall_ms;
    return rec;
}

inline void warn_robust_above_clean(const RoundRecord& rec, const std::vector<NamedAttack>& attacks,
                                    bool quiet) {
    if (quiet) return;
    for (std::size_t a = 0; a < attacks.size(); ++a)
        if (!attacks[a].cfg.random_start &&
            rec.robust_acc[a].second > rec.clean_acc + 1e-9)
            std::fprintf(stderr,
                         "warning: round %zu: %s robust accuracy %.4f exceeds clean %.4f\n",
                         rec.round, rec.robust_acc[a].first.c_str(), rec.robust_acc[a].second,
                         rec.clean_acc);
}

} // namespace detail

// The full experiment: partition data, run the configured number of rounds,
// evaluate the aggregated model at the configured cadence (round 0 and the
// final round always), stream records to disk, and checkpoint the final
// parameters.
inline RunResult run_experiment(const ExperimentConfig& cfg, bool quiet = true) {
    using clock = std::chrono::steady_clock;
    BuiltData data = build_datasets(cfg);

    RunResult run;
    run.dir = cfg.output.dir;
    run.server.global = init_params(cfg.arch, derive_seed(cfg.master_seed, 0x696e6974u));
    run.server.server_set = data.parts.server;
    run.server.perturbed_set.class_count = cfg.dataset.class_count;
    run.clients.resize(cfg.plan.total_clients);
    for (std::size_t k = 0; k < run.clients.size(); ++k) {
        run.clients[k].id = k;
        run.clients[k].local_set = std::move(data.parts.clients[k]);
    }

    std::vector<std::string> attack_names;
    for (const NamedAttack& a : cfg.eval.attacks) attack_names.push_back(a.name);
    MetricsWriter writer(cfg.output.dir, cfg.output.csv, cfg.output.jsonl, attack_names);

    auto emit = [&](const RoundRecord& rec) {
        writer.append(rec);
        run.records.push_back(rec);
        detail::warn_robust_above_clean(rec, cfg.eval.attacks, quiet);
        if (!quiet) {
            std::printf("round %zu clean %.4f", rec.round, rec.clean_acc);
            for (const auto& [name, acc] : rec.robust_acc)
                std::printf(" %s %.4f", name.c_str(), acc);
            std::printf(" loss %.4f\n", rec.mean_train_loss);
            std::fflush(stdout);
        }
    };

    const auto t0 = clock::now();
    EvalResult ev = evaluate(run.server.global, data.test, cfg.eval.attacks, cfg.plan.threads,
                             derive_seed(cfg.master_seed, 0x6576616cu, 0));
    double wall = cfg.output.timing
                      ? std::chrono::duration<double, std::milli>(clock::now() - t0).count()
                      : 0.0;
    emit(detail::make_record(0, ev, 0.0, 0.0, 0.0, wall));

    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        const auto r0 = clock::now();
        RoundStats stats = run_round(run.server, run.clients, cfg.plan, cfg.master_seed);
        if (r % cfg.eval.cadence == 0 || r == cfg.rounds) {
            EvalResult re = evaluate(run.server.global, data.test, cfg.eval.attacks,
                                     cfg.plan.threads, derive_seed(cfg.master_seed, 0x6576616cu, r));
            const double ms =
                cfg.output.timing
                    ? std::chrono::duration<double, std::milli>(clock::now() - r0).count()
                    : 0.0;
            emit(detail::make_record(r, re, stats.mean_train_loss, stats.mean_bias,
                                     stats.mean_variance, ms));
        }
    }

    save_checkpoint(cfg.output.dir + "/checkpoint.bin", run.server.global,
                    std::uint32_t(run.server.round));
    return run;
}

// ---- complexity sweep ---------------------------------------------------------

struct SweepRow {
    std::size_t width = 0;
    std::size_t param_count = 0;
    double mean_bias = 0.0;
    double mean_variance = 0.0;
};

// For each width, run the protocol with a one-hidden-layer model of that
// width and measure the log-loss decomposition of the final round's client
// ensemble over a fixed probe set.
inline std::vector<SweepRow> bv_sweep(const ExperimentConfig& cfg, bool quiet = true,
                                      bool write_table = true) {
    if (cfg.sweep_widths.empty())
        throw ConfigError("sweep requires a 'sweep.widths' list in the config");
    const std::size_t input_dim = Tensor::numel_of(cfg.arch.input_shape);

    std::vector<SweepRow> rows;
    for (std::size_t width : cfg.sweep_widths) {
        ExperimentConfig variant = cfg;
        variant.arch = make_mlp(input_dim, {width}, cfg.arch.class_count);

        BuiltData data = build_datasets(variant);
        ServerState server;
        server.global = init_params(variant.arch, derive_seed(variant.master_seed, 0x696e6974u));
        server.server_set = data.parts.server;
        server.perturbed_set.class_count = variant.dataset.class_count;
        std::vector<ClientState> clients(variant.plan.total_clients);
        for (std::size_t k = 0; k < clients.size(); ++k) {
            clients[k].id = k;
            clients[k].local_set = std::move(data.parts.clients[k]);
        }
        RoundStats last;
        for (std::size_t r = 1; r <= variant.rounds; ++r)
            last = run_round(server, clients, variant.plan, variant.master_seed);

        std::vector<const ModelState*> members;
        for (std::size_t id : last.sampled) members.push_back(&clients[id].model);
        EnsembleView ens{members};
        validate_ensemble(ens);

        const std::size_t probe_n = std::min<std::size_t>(256, data.test.size());
        std::vector<double> biases(probe_n, 0.0), variances(probe_n, 0.0);
        parallel_for(probe_n, variant.plan.threads, [&](std::size_t i) {
            const Tensor& x = data.test.features[i];
            biases[i] =
                bias_ce(ens, x, one_hot(data.test.labels[i], data.test.class_count));
            variances[i] = variance_ce(ens, x);
        });
        SweepRow row;
        row.width = width;
        row.param_count = compile_arch(variant.arch).param_count;
        for (std::size_t i = 0; i < probe_n; ++i) {
            row.mean_bias += biases[i];
            row.mean_variance += variances[i];
        }
        row.mean_bias /= double(probe_n);
        row.mean_variance /= double(probe_n);
        rows.push_back(row);
        if (!quiet)
            std::printf("width %zu params %zu bias %.6f variance %.6f\n", row.width,
                        row.param_count, row.mean_bias, row.mean_variance);
    }

    if (write_table) {
        std::filesystem::create_directories(cfg.output.dir);
        const std::string path = cfg.output.dir + "/sweep.csv";
        std::ofstream out(path);
        if (!out) throw Error(path + ": cannot open for writing");
        out << "width,param_count,mean_bias,mean_variance\n";
        for (const SweepRow& row : rows)
            out << row.width << ',' << row.param_count << ',' << format_double(row.mean_bias)
                << ',' << format_double(row.mean_variance) << '\n';
        if (!out.good()) throw Error(path + ": write failed");
    }
    return rows;
}

// Per-client label histograms (plus the server holdout's), for inspecting a
// partition without running anything.
struct PartitionReport {
    std::vector<std::size_t> server_hist;
    std::vector<std::vector<std::size_t>> client_hists;
};

inline PartitionReport partition_inspect(const ExperimentConfig& cfg) {
    BuiltData data = build_datasets(cfg);
    PartitionReport report;
    report.server_hist = data.parts.server.empty()
                             ? std::vector<std::size_t>(cfg.dataset.class_count, 0)
                             : class_histogram(data.parts.server);
    for (const LabeledSet& client : data.parts.clients)
        report.client_hists.push_back(class_histogram(client));
    return report;
}

} // namespace decentbva
