#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "decentbva/error.hpp"
#include "decentbva/model.hpp"
#include "decentbva/network.hpp"
#include "decentbva/tensor.hpp"

namespace decentbva {

// Non-owning view over ensemble members (e.g. the client models collected in
// one round). All members must share an architecture.
struct EnsembleView {
    std::vector<const ModelState*> members;

    std::size_t size() const { return members.size(); }
};

inline EnsembleView make_ensemble(const std::vector<ModelState>& models) {
    EnsembleView view;
    view.members.reserve(models.size());
    for (const ModelState& m : models) view.members.push_back(&m);
    return view;
}

inline void validate_ensemble(const EnsembleView& ens) {
    if (ens.members.empty()) throw DegenerateEnsembleError("ensemble has no members");
    for (const ModelState* m : ens.members) {
        if (!m) throw DegenerateEnsembleError("ensemble contains a null member");
        if (!same_arch(m->arch, ens.members[0]->arch))
            throw DegenerateEnsembleError("ensemble members disagree on architecture");
    }
}

struct BVReport {
    double bias = 0.0;
    double variance = 0.0;
    std::vector<double> main_pred;
};

namespace detail {

inline std::vector<std::vector<double>> member_probs(const EnsembleView& ens, const Tensor& x) {
    std::vector<std::vector<double>> probs;
    probs.reserve(ens.size());
    for (const ModelState* m : ens.members) probs.push_back(forward(*m, x).probs);
    return probs;
}

inline std::vector<double> mean_probs(const std::vector<std::vector<double>>& probs) {
    std::vector<double> mean(probs[0].size(), 0.0);
    for (const auto& p : probs)
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += p[j];
    for (double& v : mean) v /= double(probs.size());
    return mean;
}

} // namespace detail

// The ensemble's main prediction: the per-class arithmetic mean of member
// outputs. For log loss this is the minimizer over candidates q of the
// averaged cross-entropy  -(1/K) sum_k sum_j f_k^j ln q_j.
inline std::vector<double> main_prediction(const EnsembleView& ens, const Tensor& x) {
    validate_ensemble(ens);
    return detail::mean_probs(detail::member_probs(ens, x));
}

// ---- log-loss decomposition ------------------------------------------------

// Mean member cross-entropy against the label.
inline double bias_ce(const EnsembleView& ens, const Tensor& x, const std::vector<double>& target) {
    validate_ensemble(ens);
    double b = 0.0;
    for (const ModelState* m : ens.members) b += loss(forward(*m, x), target, LossKind::cross_entropy);
    return b / double(ens.size());
}

// Entropy of the main prediction: zero when all members agree on a vertex,
// larger the more the averaged prediction is smeared out.
inline double variance_ce(const EnsembleView& ens, const Tensor& x) {
    validate_ensemble(ens);
    return entropy(main_prediction(ens, x));
}

inline Tensor grad_bias_ce(const EnsembleView& ens, const Tensor& x,
                           const std::vector<double>& target) {
    validate_ensemble(ens);
    Tensor g;
    for (const ModelState* m : ens.members) {
        Tensor gi = grad_input(*m, x, target, LossKind::cross_entropy).wrt_input;
        if (g.data.empty())
            g = std::move(gi);
        else {
            require_same_shape(g, gi, "grad_bias_ce");
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gi[i];
        }
    }
    for (double& v : g.data) v /= double(ens.size());
    return g;
}

// d/dx of H(mean_k f_k(x)) = -(1/K) sum_k sum_j (ln m_j + 1) d f_k^j / dx.
inline Tensor grad_variance_ce(const EnsembleView& ens, const Tensor& x) {
    validate_ensemble(ens);
    const std::vector<double> mean = main_prediction(ens, x);
    std::vector<double> weight(mean.size());
    for (std::size_t j = 0; j < mean.size(); ++j)
        weight[j] = std::log(std::max(mean[j], kLogFloor)) + 1.0;

    Tensor g(x.shape);
    for (const ModelState* m : ens.members) {
        std::vector<Tensor> per_class = grad_input_prediction(*m, x);
        for (std::size_t j = 0; j < per_class.size(); ++j)
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= weight[j] * per_class[j][i];
    }
    for (double& v : g.data) v /= double(ens.size());
    return g;
}

// ---- squared-loss decomposition ---------------------------------------------

// Squared distance between the main prediction and the label vector.
inline double bias_mse(const EnsembleView& ens, const Tensor& x, const std::vector<double>& target) {
    validate_ensemble(ens);
    const std::vector<double> mean = main_prediction(ens, x);
    if (mean.size() != target.size())
        throw ShapeError("bias_mse: target length " + std::to_string(target.size()) +
                         " vs " + std::to_string(mean.size()) + " classes");
    double b = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
        double d = mean[j] - target[j];
        b += d * d;
    }
    return b;
}

// Unbiased sample variance of member outputs around the main prediction.
inline double variance_mse(const EnsembleView& ens, const Tensor& x) {
    validate_ensemble(ens);
    if (ens.size() < 2)
        throw DegenerateEnsembleError("squared-loss variance needs at least 2 members, got " +
                                      std::to_string(ens.size()));
    const auto probs = detail::member_probs(ens, x);
    const std::vector<double> mean = detail::mean_probs(probs);
    double v = 0.0;
    for (const auto& p : probs)
        for (std::size_t j = 0; j < mean.size(); ++j) {
            double d = p[j] - mean[j];
            v += d * d;
        }
    return v / double(ens.size() - 1);
}

inline Tensor grad_bias_mse(const EnsembleView& ens, const Tensor& x,
                            const std::vector<double>& target) {
    validate_ensemble(ens);
    const auto probs = detail::member_probs(ens, x);
    const std::vector<double> mean = detail::mean_probs(probs);
    if (mean.size() != target.size())
        throw ShapeError("grad_bias_mse: target length mismatch");
    // d/dx ||m - t||^2 = 2 sum_j (m_j - t_j) * (1/K) sum_k d f_k^j / dx
    Tensor g(x.shape);
    for (const ModelState* m : ens.members) {
        std::vector<Tensor> per_class = grad_input_prediction(*m, x);
        for (std::size_t j = 0; j < mean.size(); ++j) {
            const double w = 2.0 * (mean[j] - target[j]);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += w * per_class[j][i];
        }
    }
    for (double& v : g.data) v /= double(ens.size());
    return g;
}

// d/dx of the sample variance. The mean-gradient terms cancel exactly
// (sum_k (f_k - m) = 0), leaving 2/(K-1) sum_k sum_j (f_k^j - m_j) df_k^j/dx.
inline Tensor grad_variance_mse(const EnsembleView& ens, const Tensor& x) {
    validate_ensemble(ens);
    if (ens.size() < 2)
        throw DegenerateEnsembleError("squared-loss variance gradient needs at least 2 members");
    const auto probs = detail::member_probs(ens, x);
    const std::vector<double> mean = detail::mean_probs(probs);
    Tensor g(x.shape);
    for (std::size_t k = 0; k < ens.size(); ++k) {
        std::vector<Tensor> per_class = grad_input_prediction(*ens.members[k], x);
        for (std::size_t j = 0; j < mean.size(); ++j) {
            const double w = 2.0 * (probs[k][j] - mean[j]);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += w * per_class[j][i];
        }
    }
    for (double& v : g.data) v /= double(ens.size() - 1);
    return g;
}

// ---- combined objective ------------------------------------------------------

inline BVReport bv_decompose(const EnsembleView& ens, const Tensor& x,
                             const std::vector<double>& target, LossKind kind) {
    validate_ensemble(ens);
    BVReport report;
    report.main_pred = main_prediction(ens, x);
    if (kind == LossKind::cross_entropy) {
        report.bias = bias_ce(ens, x, target);
        report.variance = variance_ce(ens, x);
    } else {
        report.bias = bias_mse(ens, x, target);
        report.variance = variance_mse(ens, x);
    }
    return report;
}

inline BVReport bv_decompose(const EnsembleView& ens, const Tensor& x, std::size_t cls,
                             LossKind kind) {
    validate_ensemble(ens);
    return bv_decompose(ens, x, one_hot(cls, ens.members[0]->arch.class_count), kind);
}

// Gradient of the attack objective: d/dx (bias + lambda * variance), or of
// the variance alone when variance_only is set.
inline Tensor bv_objective_grad(const EnsembleView& ens, const Tensor& x,
                                const std::vector<double>& target, LossKind kind, double lambda,
                                bool variance_only = false) {
    validate_ensemble(ens);
    const bool ce = kind == LossKind::cross_entropy;
    if (variance_only) return ce ? grad_variance_ce(ens, x) : grad_variance_mse(ens, x);
    Tensor gb = ce ? grad_bias_ce(ens, x, target) : grad_bias_mse(ens, x, target);
    if (lambda == 0.0) return gb; // pure-bias attack: skip the K*C variance passes
    Tensor gv = ce ? grad_variance_ce(ens, x) : grad_variance_mse(ens, x);
    require_same_shape(gb, gv, "bv_objective_grad");
    for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += lambda * gv[i];
    return gb;
}

inline Tensor bv_objective_grad(const EnsembleView& ens, const Tensor& x, std::size_t cls,
                                LossKind kind, double lambda, bool variance_only = false) {
    validate_ensemble(ens);
    return bv_objective_grad(ens, x, one_hot(cls, ens.members[0]->arch.class_count), kind, lambda,
                             variance_only);
}

} // namespace decentbva
