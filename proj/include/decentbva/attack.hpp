#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "decentbva/bias_variance.hpp"
#include "decentbva/dataset.hpp"
#include "decentbva/error.hpp"
#include "decentbva/model.hpp"
#include "decentbva/network.hpp"
#include "decentbva/parallel.hpp"
#include "decentbva/rng.hpp"
#include "decentbva/tensor.hpp"

namespace decentbva {

struct AttackConfig {
    double epsilon = 0.3;
    std::size_t steps = 1;      // 1 = single sign step; >1 = projected iteration
    double step_size = 0.0;     // <=0 picks epsilon/4 for multi-step attacks
    double lambda = 1.0;        // variance weight in the ensemble objective
    bool variance_only = false;
    bool clip_to_unit = true;   // keep perturbed pixels inside [0,1]
    bool random_start = false;  // uniform start inside the epsilon ball
    LossKind loss = LossKind::cross_entropy;
};

inline void validate_attack(const AttackConfig& cfg) {
    if (!(cfg.epsilon >= 0.0) || !std::isfinite(cfg.epsilon))
        throw ConfigError("attack: epsilon must be finite and non-negative");
    if (cfg.steps == 0) throw ConfigError("attack: steps must be at least 1");
    if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda))
        throw ConfigError("attack: lambda must be finite and non-negative");
}

inline double effective_step(const AttackConfig& cfg) {
    return cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 4.0;
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Project x onto the l-inf ball of radius eps around origin_x, optionally
// intersected with the unit box.
inline Tensor project_linf(const Tensor& x, const Tensor& origin, double eps, bool clip_to_unit) {
    require_same_shape(x, origin, "project_linf");
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = std::clamp(out[i], origin[i] - eps, origin[i] + eps);
        if (clip_to_unit) out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

namespace detail {

inline Tensor start_point(const Tensor& x, double eps, bool clip_to_unit, bool random_start,
                          RngStream* rng) {
    if (!random_start || eps == 0.0) return x;
    if (!rng) throw Error("attack: random_start requires an rng stream");
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += rng->uniform(-eps, eps);
    return project_linf(out, x, eps, clip_to_unit);
}

inline void check_grad(const Tensor& g) {
    if (!all_finite(g)) throw NumericError("attack: non-finite objective gradient");
}

} // namespace detail

// ---- single-model attacks (robustness evaluation, local robust training) ----

// One step in the direction that increases the loss: x + eps * sign(dL/dx).
inline Tensor fgsm(const ModelState& model, const Tensor& x, const std::vector<double>& target,
                   double eps, LossKind kind, bool clip_to_unit = true) {
    Tensor g = grad_input(model, x, target, kind).wrt_input;
    detail::check_grad(g);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] += eps * sign0(g[i]);
        if (clip_to_unit) out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

inline Tensor fgsm(const ModelState& model, const Tensor& x, std::size_t cls, double eps,
                   LossKind kind, bool clip_to_unit = true) {
    return fgsm(model, x, one_hot(cls, model.arch.class_count), eps, kind, clip_to_unit);
}

// Iterated sign ascent, each step projected back into the eps ball around the
// clean input (and into [0,1] when clipping).
inline Tensor pgd(const ModelState& model, const Tensor& x, const std::vector<double>& target,
                  double eps, std::size_t steps, double step_size, LossKind kind,
                  bool clip_to_unit = true, bool random_start = false, RngStream* rng = nullptr) {
    if (steps == 0) throw ConfigError("pgd: steps must be at least 1");
    if (!(step_size > 0.0)) throw ConfigError("pgd: step_size must be positive");
    Tensor cur = detail::start_point(x, eps, clip_to_unit, random_start, rng);
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor g = grad_input(model, cur, target, kind).wrt_input;
        detail::check_grad(g);
        for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] += step_size * sign0(g[i]);
        cur = project_linf(cur, x, eps, clip_to_unit);
    }
    return cur;
}

inline Tensor pgd(const ModelState& model, const Tensor& x, std::size_t cls, double eps,
                  std::size_t steps, double step_size, LossKind kind, bool clip_to_unit = true,
                  bool random_start = false, RngStream* rng = nullptr) {
    return pgd(model, x, one_hot(cls, model.arch.class_count), eps, steps, step_size, kind,
               clip_to_unit, random_start, rng);
}

// ---- ensemble attacks (server-side generation from client models) ----------

// Single sign step along d/dx (bias + lambda * variance) over the ensemble.
inline Tensor bv_fgsm(const EnsembleView& ens, const Tensor& x, const std::vector<double>& target,
                      double eps, double lambda, LossKind kind, bool variance_only = false,
                      bool clip_to_unit = true) {
    Tensor g = bv_objective_grad(ens, x, target, kind, lambda, variance_only);
    detail::check_grad(g);
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] += eps * sign0(g[i]);
        if (clip_to_unit) out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

inline Tensor bv_pgd(const EnsembleView& ens, const Tensor& x, const std::vector<double>& target,
                     double eps, std::size_t steps, double step_size, double lambda, LossKind kind,
                     bool variance_only = false, bool clip_to_unit = true,
                     bool random_start = false, RngStream* rng = nullptr) {
    if (steps == 0) throw ConfigError("bv_pgd: steps must be at least 1");
    if (!(step_size > 0.0)) throw ConfigError("bv_pgd: step_size must be positive");
    Tensor cur = detail::start_point(x, eps, clip_to_unit, random_start, rng);
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor g = bv_objective_grad(ens, cur, target, kind, lambda, variance_only);
        detail::check_grad(g);
        for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] += step_size * sign0(g[i]);
        cur = project_linf(cur, x, eps, clip_to_unit);
    }
    return cur;
}

// ---- whole-set helpers -------------------------------------------------------

// Perturb every example in the set against a single model. Labels carry over.
// Per-example RNG streams keyed on (seed, index) keep the output identical at
// any thread count.
inline LabeledSet attack_set(const ModelState& model, const LabeledSet& set,
                             const AttackConfig& cfg, std::size_t threads = 1,
                             std::uint64_t seed = 0) {
    validate_attack(cfg);
    LabeledSet out;
    out.class_count = set.class_count;
    out.features.resize(set.size());
    out.labels = set.labels;
    parallel_for(set.size(), threads, [&](std::size_t i) {
        std::vector<double> target = one_hot(set.labels[i], model.arch.class_count);
        if (cfg.steps == 1 && !cfg.random_start) {
            out.features[i] =
                fgsm(model, set.features[i], target, cfg.epsilon, cfg.loss, cfg.clip_to_unit);
        } else {
            RngStream rng = derive_stream(seed, 0x6174746bu, i); // "attk"
            out.features[i] = pgd(model, set.features[i], target, cfg.epsilon, cfg.steps,
                                  effective_step(cfg), cfg.loss, cfg.clip_to_unit,
                                  cfg.random_start, &rng);
        }
    });
    return out;
}

// Perturb every example against an ensemble objective (the server-side
// generation step).
inline LabeledSet attack_set(const EnsembleView& ens, const LabeledSet& set,
                             const AttackConfig& cfg, std::size_t threads = 1,
                             std::uint64_t seed = 0) {
    validate_attack(cfg);
    validate_ensemble(ens);
    const std::size_t classes = ens.members[0]->arch.class_count;
    LabeledSet out;
    out.class_count = set.class_count;
    out.features.resize(set.size());
    out.labels = set.labels;
    parallel_for(set.size(), threads, [&](std::size_t i) {
        std::vector<double> target = one_hot(set.labels[i], classes);
        if (cfg.steps == 1 && !cfg.random_start) {
            out.features[i] = bv_fgsm(ens, set.features[i], target, cfg.epsilon, cfg.lambda,
                                      cfg.loss, cfg.variance_only, cfg.clip_to_unit);
        } else {
            RngStream rng = derive_stream(seed, 0x6174746bu, i);
            out.features[i] = bv_pgd(ens, set.features[i], target, cfg.epsilon, cfg.steps,
                                     effective_step(cfg), cfg.lambda, cfg.loss,
                                     cfg.variance_only, cfg.clip_to_unit, cfg.random_start, &rng);
        }
    });
    return out;
}

} // namespace decentbva
