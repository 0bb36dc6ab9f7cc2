#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "decentbva/attack.hpp"
#include "decentbva/bias_variance.hpp"
#include "decentbva/dataset.hpp"
#include "decentbva/error.hpp"
#include "decentbva/model.hpp"
#include "decentbva/network.hpp"
#include "decentbva/parallel.hpp"
#include "decentbva/rng.hpp"

namespace decentbva {

enum class Mode {
    fedavg,
    decent_baseline,
    decent_bias,
    decent_variance,
    decent_bva,
    fedavg_robust_local,
    decent_bva_local,
};

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::fedavg: return "fedavg";
        case Mode::decent_baseline: return "decent_baseline";
        case Mode::decent_bias: return "decent_bias";
        case Mode::decent_variance: return "decent_variance";
        case Mode::decent_bva: return "decent_bva";
        case Mode::fedavg_robust_local: return "fedavg_robust_local";
        case Mode::decent_bva_local: return "decent_bva_local";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    for (Mode m : {Mode::fedavg, Mode::decent_baseline, Mode::decent_bias, Mode::decent_variance,
                   Mode::decent_bva, Mode::fedavg_robust_local, Mode::decent_bva_local})
        if (s == mode_name(m)) return m;
    throw ConfigError("unknown mode '" + s + "'");
}

inline bool mode_uses_robust_local(Mode m) {
    return m == Mode::fedavg_robust_local || m == Mode::decent_bva_local;
}

inline bool mode_runs_server_attack(Mode m) {
    return m == Mode::decent_baseline || m == Mode::decent_bias || m == Mode::decent_variance ||
           m == Mode::decent_bva || m == Mode::decent_bva_local;
}

struct RoundPlan {
    double fraction = 0.1;          // F: sampled share of clients per round
    std::size_t total_clients = 0;  // K
    std::size_t local_epochs = 1;   // E
    std::size_t batch_size = 64;    // B
    double lr = 0.01;
    double momentum = 0.9;
    LossKind loss = LossKind::cross_entropy;
    Mode mode = Mode::fedavg;
    AttackConfig attack;            // server-side generation settings (and the
                                    // epsilon used by the robust-local updater)
    bool persist_momentum = false;  // keep client velocity across rounds
    std::size_t threads = 1;
};

inline void validate_plan(const RoundPlan& plan) {
    if (!(plan.fraction > 0.0) || plan.fraction > 1.0)
        throw ConfigError("plan: fraction must be in (0,1]");
    if (plan.total_clients == 0) throw ConfigError("plan: total_clients must be positive");
    if (plan.batch_size == 0) throw ConfigError("plan: batch_size must be positive");
    if (!(plan.lr > 0.0) || !std::isfinite(plan.lr))
        throw ConfigError("plan: lr must be positive and finite");
    if (!(plan.momentum >= 0.0) || plan.momentum >= 1.0)
        throw ConfigError("plan: momentum must be in [0,1)");
    validate_attack(plan.attack);
}

struct ClientState {
    std::size_t id = 0;
    LabeledSet local_set;
    ModelState model;
    std::vector<double> velocity;
};

struct ServerState {
    ModelState global;
    LabeledSet server_set;    // clean pool the attack re-perturbs each round
    LabeledSet perturbed_set; // empty until the first server attack has run
    std::size_t round = 0;
};

// What actually crosses the simulated wire: parameters plus perturbed
// examples downstream, parameters only upstream. Client raw data never
// appears in either.
struct Downlink {
    ModelState global;
    LabeledSet perturbed;
};

struct Uplink {
    ModelState update;
};

inline std::size_t sampled_count(const RoundPlan& plan) {
    // floor with a hair of slack so exact fractions survive IEEE rounding
    // (0.3 * 10 would otherwise floor to 2)
    const double raw = plan.fraction * double(plan.total_clients);
    const auto m = std::size_t(std::floor(raw + 1e-9));
    return std::max<std::size_t>(m, 1);
}

inline std::vector<std::size_t> sample_clients(const RoundPlan& plan, std::size_t round,
                                               std::uint64_t master_seed) {
    validate_plan(plan);
    RngStream rng = derive_stream(master_seed, 0x73616d70u, round); // "samp"
    std::vector<std::size_t> ids =
        rng.sample_without_replacement(plan.total_clients, sampled_count(plan));
    std::sort(ids.begin(), ids.end());
    return ids;
}

struct ClientUpdateResult {
    ModelState model;
    double mean_loss = 0.0; // per-example mean over every batch of every epoch
};

namespace detail {

struct BatchPlan {
    std::vector<std::size_t> order;          // shuffled example indices
    std::vector<std::pair<std::size_t, std::size_t>> bounds; // [lo,hi) into order
};

inline BatchPlan split_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
    BatchPlan plan;
    plan.order.resize(n);
    std::iota(plan.order.begin(), plan.order.end(), 0);
    rng.shuffle(plan.order);
    for (std::size_t lo = 0; lo < n; lo += batch_size)
        plan.bounds.emplace_back(lo, std::min(n, lo + batch_size));
    return plan;
}

} // namespace detail

// One client's local training pass: start from the broadcast parameters,
// shuffle D_k plus the received perturbed set into fixed batches, then run E
// epochs of momentum SGD over them.
inline ClientUpdateResult client_update(const ClientState& client, const Downlink& down,
                                        const RoundPlan& plan, RngStream rng,
                                        std::vector<double>* velocity_io = nullptr) {
    if (client.local_set.empty() && down.perturbed.empty())
        throw Error("client_update: client " + std::to_string(client.id) +
                    " has no training examples");
    ModelState model = down.global;
    if (plan.local_epochs == 0) return {std::move(model), 0.0};

    LabeledSet pool = client.local_set;
    if (!down.perturbed.empty()) append(pool, down.perturbed);

    detail::BatchPlan batches = detail::split_batches(pool.size(), plan.batch_size, rng);
    std::vector<double> velocity =
        velocity_io && !velocity_io->empty() ? *velocity_io
                                             : std::vector<double>(model.params.size(), 0.0);
    double loss_sum = 0.0;
    std::size_t example_steps = 0;
    for (std::size_t epoch = 0; epoch < plan.local_epochs; ++epoch) {
        for (const auto& [lo, hi] : batches.bounds) {
            std::vector<const Tensor*> xs;
            std::vector<std::size_t> ys;
            xs.reserve(hi - lo);
            ys.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                xs.push_back(&pool.features[batches.order[i]]);
                ys.push_back(pool.labels[batches.order[i]]);
            }
            GradientReport g = grad_params(model, xs, ys, plan.loss, &rng);
            loss_sum += g.loss_value * double(xs.size());
            example_steps += xs.size();
            model = sgd_step(model, g.wrt_params, plan.lr, plan.momentum, velocity);
        }
    }
    if (velocity_io) *velocity_io = std::move(velocity);
    return {std::move(model), loss_sum / double(example_steps)};
}

// Adversarial-training variant: before each gradient step, every example the
// client owns is replaced by its single-step sign perturbation against the
// *current* local parameters. Examples received from the server are already
// perturbed and pass through untouched.
inline ClientUpdateResult client_update_robust_local(const ClientState& client,
                                                     const Downlink& down, const RoundPlan& plan,
                                                     RngStream rng,
                                                     std::vector<double>* velocity_io = nullptr) {
    if (client.local_set.empty() && down.perturbed.empty())
        throw Error("client_update: client " + std::to_string(client.id) +
                    " has no training examples");
    ModelState model = down.global;
    if (plan.local_epochs == 0) return {std::move(model), 0.0};

    LabeledSet pool = client.local_set;
    std::vector<char> is_local(pool.size(), 1);
    if (!down.perturbed.empty()) {
        append(pool, down.perturbed);
        is_local.resize(pool.size(), 0);
    }

    detail::BatchPlan batches = detail::split_batches(pool.size(), plan.batch_size, rng);
    std::vector<double> velocity =
        velocity_io && !velocity_io->empty() ? *velocity_io
                                             : std::vector<double>(model.params.size(), 0.0);
    double loss_sum = 0.0;
    std::size_t example_steps = 0;
    for (std::size_t epoch = 0; epoch < plan.local_epochs; ++epoch) {
        for (const auto& [lo, hi] : batches.bounds) {
            std::vector<Tensor> perturbed;
            std::vector<const Tensor*> xs;
            std::vector<std::size_t> ys;
            perturbed.reserve(hi - lo);
            xs.reserve(hi - lo);
            ys.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const std::size_t idx = batches.order[i];
                if (is_local[idx])
                    perturbed.push_back(fgsm(model, pool.features[idx], pool.labels[idx],
                                             plan.attack.epsilon, plan.loss,
                                             plan.attack.clip_to_unit));
                else
                    perturbed.push_back(pool.features[idx]);
                ys.push_back(pool.labels[idx]);
            }
            for (const Tensor& t : perturbed) xs.push_back(&t);
            GradientReport g = grad_params(model, xs, ys, plan.loss, &rng);
            loss_sum += g.loss_value * double(xs.size());
            example_steps += xs.size();
            model = sgd_step(model, g.wrt_params, plan.lr, plan.momentum, velocity);
        }
    }
    if (velocity_io) *velocity_io = std::move(velocity);
    return {std::move(model), loss_sum / double(example_steps)};
}

// FedAvg: parameter-wise mean weighted by each client's example count.
inline ModelState aggregate(const std::vector<std::pair<const ModelState*, std::size_t>>& updates) {
    if (updates.empty()) throw Error("aggregate: no updates");
    const ModelState* first = updates.front().first;
    double total = 0.0;
    for (const auto& [m, n_k] : updates) {
        if (!m) throw Error("aggregate: null update");
        if (!same_arch(m->arch, first->arch) || m->params.size() != first->params.size())
            throw ShapeError("aggregate: mismatched architectures");
        if (n_k == 0) throw Error("aggregate: zero-weight update");
        total += double(n_k);
    }
    ModelState out = *first;
    std::fill(out.params.begin(), out.params.end(), 0.0);
    for (const auto& [m, n_k] : updates) {
        const double w = double(n_k) / total;
        for (std::size_t i = 0; i < out.params.size(); ++i) out.params[i] += w * m->params[i];
    }
    return out;
}

inline ModelState aggregate(const std::vector<ModelState>& models,
                            const std::vector<std::size_t>& counts) {
    if (models.size() != counts.size()) throw Error("aggregate: models/counts length mismatch");
    std::vector<std::pair<const ModelState*, std::size_t>> updates;
    updates.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) updates.emplace_back(&models[i], counts[i]);
    return aggregate(updates);
}

// Protocol-side slice of a round's metrics; the harness adds evaluation
// columns on top.
struct RoundStats {
    std::size_t round = 0;
    std::vector<std::size_t> sampled;
    double mean_train_loss = 0.0;
    double mean_bias = 0.0;     // of this round's client ensemble on the server pool
    double mean_variance = 0.0;
};

// One communication round. Order of effects: sample, broadcast the previous
// round's perturbed set with the current parameters, local training, server
// attack on the freshly returned models, aggregation. fedavg* modes skip the
// server attack; decent_baseline attacks the aggregated model instead of the
// ensemble (so for that mode alone the attack follows aggregation).
inline RoundStats run_round(ServerState& server, std::vector<ClientState>& clients,
                            const RoundPlan& plan, std::uint64_t master_seed,
                            std::vector<std::string>* event_log = nullptr) {
    validate_plan(plan);
    if (clients.size() != plan.total_clients)
        throw ConfigError("run_round: plan expects " + std::to_string(plan.total_clients) +
                          " clients, got " + std::to_string(clients.size()));
    const std::size_t round = server.round + 1;
    auto log = [&](const std::string& ev) {
        if (event_log) event_log->push_back(ev);
    };

    RoundStats stats;
    stats.round = round;
    stats.sampled = sample_clients(plan, round, master_seed);
    log("sample");

    const Downlink down{server.global, server.perturbed_set};
    log("broadcast");

    std::vector<Uplink> uplinks(stats.sampled.size());
    std::vector<double> losses(stats.sampled.size(), 0.0);
    parallel_for(stats.sampled.size(), plan.threads, [&](std::size_t s) {
        ClientState& client = clients[stats.sampled[s]];
        RngStream rng = derive_stream(master_seed, 0x636c6e74u, round, client.id); // "clnt"
        std::vector<double>* vel = plan.persist_momentum ? &client.velocity : nullptr;
        ClientUpdateResult result =
            mode_uses_robust_local(plan.mode)
                ? client_update_robust_local(client, down, plan, std::move(rng), vel)
                : client_update(client, down, plan, std::move(rng), vel);
        losses[s] = result.mean_loss;
        client.model = result.model;
        uplinks[s] = Uplink{std::move(result.model)};
    });
    for (std::size_t s = 0; s < stats.sampled.size(); ++s) {
        log("client_update " + std::to_string(stats.sampled[s]));
        stats.mean_train_loss += losses[s];
    }
    stats.mean_train_loss /= double(stats.sampled.size());

    EnsembleView ensemble;
    for (const Uplink& up : uplinks) ensemble.members.push_back(&up.update);

    LabeledSet next_perturbed;
    next_perturbed.class_count = server.server_set.class_count;
    const std::uint64_t attack_seed = derive_seed(master_seed, 0x73727661u, round); // "srva"
    if (mode_runs_server_attack(plan.mode) && plan.mode != Mode::decent_baseline &&
        !server.server_set.empty()) {
        AttackConfig cfg = plan.attack;
        if (plan.mode == Mode::decent_bias) {
            cfg.lambda = 0.0;
            cfg.variance_only = false;
        } else if (plan.mode == Mode::decent_variance) {
            cfg.variance_only = true;
        }
        next_perturbed = attack_set(ensemble, server.server_set, cfg, plan.threads, attack_seed);
        log("bv_attack");
    }

    std::vector<std::pair<const ModelState*, std::size_t>> updates;
    updates.reserve(uplinks.size());
    for (std::size_t s = 0; s < uplinks.size(); ++s)
        updates.emplace_back(&uplinks[s].update, clients[stats.sampled[s]].local_set.size());
    ModelState aggregated = aggregate(updates);
    log("aggregate");

    if (plan.mode == Mode::decent_baseline && !server.server_set.empty()) {
        AttackConfig cfg = plan.attack;
        cfg.steps = 1; // the baseline is defined as a single-step sign attack
        cfg.random_start = false;
        next_perturbed = attack_set(aggregated, server.server_set, cfg, plan.threads, attack_seed);
        log("baseline_attack");
    }

    // Per-round decomposition diagnostics over the server pool, measured on
    // the same ensemble the attack saw.
    if (!server.server_set.empty()) {
        const std::size_t n = server.server_set.size();
        std::vector<double> biases(n, 0.0), variances(n, 0.0);
        const bool variance_ok = plan.loss == LossKind::cross_entropy || ensemble.size() >= 2;
        parallel_for(n, plan.threads, [&](std::size_t i) {
            const Tensor& x = server.server_set.features[i];
            const std::size_t y = server.server_set.labels[i];
            if (plan.loss == LossKind::cross_entropy) {
                biases[i] = bias_ce(ensemble, x, one_hot(y, server.server_set.class_count));
                variances[i] = variance_ce(ensemble, x);
            } else {
                biases[i] = bias_mse(ensemble, x, one_hot(y, server.server_set.class_count));
                if (variance_ok) variances[i] = variance_mse(ensemble, x);
            }
        });
        for (std::size_t i = 0; i < n; ++i) {
            stats.mean_bias += biases[i];
            stats.mean_variance += variances[i];
        }
        stats.mean_bias /= double(n);
        stats.mean_variance /= double(n);
    }

    server.global = std::move(aggregated);
    server.perturbed_set = std::move(next_perturbed);
    server.round = round;
    return stats;
}

} // namespace decentbva
