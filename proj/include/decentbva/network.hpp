#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "decentbva/arch.hpp"
#include "decentbva/error.hpp"
#include "decentbva/model.hpp"
#include "decentbva/rng.hpp"
#include "decentbva/tensor.hpp"

namespace decentbva {

enum class LossKind { cross_entropy, mse };

// Floor inside every log so saturated predictions keep losses and attack
// gradients finite.
constexpr double kLogFloor = 1e-12;

struct Prediction {
    std::vector<double> probs;
};

struct GradientReport {
    std::vector<double> wrt_params; // empty unless a parameter gradient was requested
    Tensor wrt_input;               // empty unless an input gradient was requested
    double loss_value = 0.0;
};

inline std::vector<double> one_hot(std::size_t cls, std::size_t class_count) {
    if (cls >= class_count)
        throw ShapeError("one_hot: class " + std::to_string(cls) + " out of range " +
                         std::to_string(class_count));
    std::vector<double> t(class_count, 0.0);
    t[cls] = 1.0;
    return t;
}

inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(std::max(v, kLogFloor));
    return h;
}

inline double loss(const Prediction& pred, const std::vector<double>& target, LossKind kind) {
    if (pred.probs.size() != target.size())
        throw ShapeError("loss: prediction length " + std::to_string(pred.probs.size()) +
                         " vs target length " + std::to_string(target.size()));
    double l = 0.0;
    if (kind == LossKind::cross_entropy) {
        for (std::size_t j = 0; j < target.size(); ++j)
            if (target[j] != 0.0) l -= target[j] * std::log(std::max(pred.probs[j], kLogFloor));
    } else {
        for (std::size_t j = 0; j < target.size(); ++j) {
            double d = pred.probs[j] - target[j];
            l += d * d;
        }
    }
    return l;
}

inline double loss(const Prediction& pred, std::size_t cls, LossKind kind) {
    return loss(pred, one_hot(cls, pred.probs.size()), kind);
}

namespace detail {

// Activations captured during a forward pass, consumed by the reverse walk.
struct ForwardTrace {
    std::vector<Tensor> inputs;                    // input of every layer
    std::vector<std::vector<std::size_t>> argmax;  // maxpool: flat winner index per output
    std::vector<std::vector<double>> mask;         // dropout: per-element keep scale
    std::vector<double> probs;                     // softmax output
};

inline void check_finite_activation(const Tensor& t, std::size_t layer_index) {
    if (!all_finite(t))
        throw NumericError("non-finite activation after layer " + std::to_string(layer_index));
}

inline ForwardTrace run_forward(const ModelState& model, const ArchPlan& plan, const Tensor& x,
                                bool train_mode, RngStream* rng) {
    const ArchSpec& arch = model.arch;
    if (x.shape != arch.input_shape)
        throw ShapeError("forward: input shape " + Tensor::shape_string(x.shape) +
                         " does not match arch input " + Tensor::shape_string(arch.input_shape));
    if (model.params.size() != plan.param_count)
        throw ShapeError("forward: param vector length " + std::to_string(model.params.size()) +
                         " != arch param count " + std::to_string(plan.param_count));

    ForwardTrace trace;
    trace.inputs.reserve(arch.layers.size());
    trace.argmax.resize(arch.layers.size());
    trace.mask.resize(arch.layers.size());

    Tensor cur = x;
    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const LayerSpec& layer = arch.layers[li];
        const auto& slot = plan.slots[li];
        trace.inputs.push_back(cur);
        const Tensor& in = trace.inputs.back();

        if (const auto* d = std::get_if<Dense>(&layer)) {
            Tensor out({d->out});
            const double* W = model.params.data() + slot.param_offset;
            const double* b = W + slot.weight_count;
            for (std::size_t o = 0; o < d->out; ++o) {
                double acc = b[o];
                const double* row = W + o * d->in;
                for (std::size_t i = 0; i < d->in; ++i) acc += row[i] * in[i];
                out[o] = acc;
            }
            check_finite_activation(out, li);
            cur = std::move(out);
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            const std::size_t ih = in.shape[1], iw = in.shape[2];
            const std::size_t oh = slot.out_shape[1], ow = slot.out_shape[2];
            const std::size_t k = c->kernel, s = c->stride;
            Tensor out(slot.out_shape);
            const double* W = model.params.data() + slot.param_offset;
            const double* b = W + slot.weight_count;
            for (std::size_t oc = 0; oc < c->out_ch; ++oc) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        double acc = b[oc];
                        for (std::size_t ic = 0; ic < c->in_ch; ++ic) {
                            const double* wbase = W + ((oc * c->in_ch + ic) * k) * k;
                            const double* ibase = in.data.data() + ic * ih * iw;
                            for (std::size_t ky = 0; ky < k; ++ky)
                                for (std::size_t kx = 0; kx < k; ++kx)
                                    acc += wbase[ky * k + kx] *
                                           ibase[(oy * s + ky) * iw + (ox * s + kx)];
                        }
                        out[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            check_finite_activation(out, li);
            cur = std::move(out);
        } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
            const std::size_t ch = in.shape[0], ih = in.shape[1], iw = in.shape[2];
            const std::size_t oh = slot.out_shape[1], ow = slot.out_shape[2];
            Tensor out(slot.out_shape);
            auto& arg = trace.argmax[li];
            arg.resize(out.numel());
            for (std::size_t ic = 0; ic < ch; ++ic) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        std::size_t best = (ic * ih + oy * p->stride) * iw + ox * p->stride;
                        double bv = in[best];
                        for (std::size_t ky = 0; ky < p->size; ++ky) {
                            for (std::size_t kx = 0; kx < p->size; ++kx) {
                                std::size_t idx = (ic * ih + oy * p->stride + ky) * iw +
                                                  ox * p->stride + kx;
                                if (in[idx] > bv) {
                                    bv = in[idx];
                                    best = idx;
                                }
                            }
                        }
                        std::size_t oidx = (ic * oh + oy) * ow + ox;
                        out[oidx] = bv;
                        arg[oidx] = best;
                    }
                }
            }
            cur = std::move(out);
        } else if (std::get_if<Relu>(&layer)) {
            Tensor out = in;
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
            cur = std::move(out);
        } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
            Tensor out = in;
            if (train_mode && dr->rate > 0.0) {
                if (!rng) throw Error("dropout in train mode requires an rng stream");
                auto& m = trace.mask[li];
                m.resize(in.numel());
                const double keep_scale = 1.0 / (1.0 - dr->rate);
                for (std::size_t i = 0; i < out.numel(); ++i) {
                    m[i] = rng->bernoulli(dr->rate) ? 0.0 : keep_scale;
                    out[i] *= m[i];
                }
            }
            cur = std::move(out);
        } else if (std::get_if<Flatten>(&layer)) {
            cur = Tensor({in.numel()}, in.data);
        } else { // Softmax
            double m = *std::max_element(in.data.begin(), in.data.end());
            Tensor out = in;
            double sum = 0.0;
            for (double& v : out.data) {
                v = std::exp(v - m);
                sum += v;
            }
            for (double& v : out.data) v /= sum;
            trace.probs = out.data;
            cur = std::move(out);
        }
    }
    return trace;
}

// Reverse walk from a gradient seed at the softmax *output* (d loss / d probs).
// Accumulates parameter gradients into param_grad (same layout as
// ModelState.params) when non-null; returns the input gradient when
// want_input is set.
inline Tensor run_backward(const ModelState& model, const ArchPlan& plan,
                           const ForwardTrace& trace, const std::vector<double>& dprobs,
                           std::vector<double>* param_grad, bool want_input) {
    const ArchSpec& arch = model.arch;
    Tensor g({arch.class_count}, dprobs);

    for (std::size_t li = arch.layers.size(); li-- > 0;) {
        const LayerSpec& layer = arch.layers[li];
        const auto& slot = plan.slots[li];
        const Tensor& in = trace.inputs[li];
        const bool need_lower = want_input || li > 0;

        if (const auto* d = std::get_if<Dense>(&layer)) {
            if (param_grad) {
                double* dW = param_grad->data() + slot.param_offset;
                double* db = dW + slot.weight_count;
                for (std::size_t o = 0; o < d->out; ++o) {
                    db[o] += g[o];
                    double* row = dW + o * d->in;
                    for (std::size_t i = 0; i < d->in; ++i) row[i] += g[o] * in[i];
                }
            }
            if (need_lower) {
                const double* W = model.params.data() + slot.param_offset;
                Tensor gin({d->in});
                for (std::size_t o = 0; o < d->out; ++o) {
                    const double* row = W + o * d->in;
                    for (std::size_t i = 0; i < d->in; ++i) gin[i] += row[i] * g[o];
                }
                g = std::move(gin);
            }
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            const std::size_t ih = in.shape[1], iw = in.shape[2];
            const std::size_t oh = slot.out_shape[1], ow = slot.out_shape[2];
            const std::size_t k = c->kernel, s = c->stride;
            const double* W = model.params.data() + slot.param_offset;
            Tensor gin(in.shape);
            double* dW = nullptr;
            double* db = nullptr;
            if (param_grad) {
                dW = param_grad->data() + slot.param_offset;
                db = dW + slot.weight_count;
            }
            for (std::size_t oc = 0; oc < c->out_ch; ++oc) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        double go = g[(oc * oh + oy) * ow + ox];
                        if (db) db[oc] += go;
                        for (std::size_t ic = 0; ic < c->in_ch; ++ic) {
                            const std::size_t woff = ((oc * c->in_ch + ic) * k) * k;
                            const std::size_t ioff = ic * ih * iw;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    std::size_t iidx = ioff + (oy * s + ky) * iw + ox * s + kx;
                                    if (dW) dW[woff + ky * k + kx] += go * in[iidx];
                                    if (need_lower) gin[iidx] += go * W[woff + ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
            g = std::move(gin);
        } else if (std::get_if<MaxPool>(&layer)) {
            Tensor gin(in.shape);
            const auto& arg = trace.argmax[li];
            for (std::size_t oidx = 0; oidx < g.numel(); ++oidx) gin[arg[oidx]] += g[oidx];
            g = std::move(gin);
        } else if (std::get_if<Relu>(&layer)) {
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (!(in[i] > 0.0)) g[i] = 0.0;
        } else if (std::get_if<Dropout>(&layer)) {
            const auto& m = trace.mask[li];
            if (!m.empty())
                for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= m[i];
        } else if (std::get_if<Flatten>(&layer)) {
            g = Tensor(in.shape, std::move(g.data));
        } else { // Softmax: dz_i = p_i * (g_i - sum_j g_j p_j)
            const std::vector<double>& p = trace.probs;
            double dot = 0.0;
            for (std::size_t j = 0; j < p.size(); ++j) dot += g[j] * p[j];
            for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (g[j] - dot);
        }
    }
    return want_input ? g : Tensor{};
}

// d loss / d probs for the supported loss kinds, floor rules included.
inline std::vector<double> loss_seed(const std::vector<double>& probs,
                                     const std::vector<double>& target, LossKind kind) {
    if (probs.size() != target.size())
        throw ShapeError("loss gradient: prediction/target length mismatch");
    std::vector<double> seed(probs.size(), 0.0);
    if (kind == LossKind::cross_entropy) {
        for (std::size_t j = 0; j < probs.size(); ++j)
            if (target[j] != 0.0 && probs[j] > kLogFloor) seed[j] = -target[j] / probs[j];
    } else {
        for (std::size_t j = 0; j < probs.size(); ++j) seed[j] = 2.0 * (probs[j] - target[j]);
    }
    return seed;
}

} // namespace detail

// Forward inference. Dropout is active only in train mode (inverted dropout,
// so eval mode needs no rescaling); eval mode is deterministic.
inline Prediction forward(const ModelState& model, const Tensor& x, bool train_mode = false,
                          RngStream* rng = nullptr) {
    ArchPlan plan = compile_arch(model.arch);
    detail::ForwardTrace trace = detail::run_forward(model, plan, x, train_mode, rng);
    return Prediction{std::move(trace.probs)};
}

// Mean-batch loss gradient w.r.t. parameters. A non-null rng enables train
// mode (dropout); pass nullptr for deterministic eval-mode gradients.
inline GradientReport grad_params(const ModelState& model, const std::vector<const Tensor*>& xs,
                                  const std::vector<std::size_t>& ys, LossKind kind,
                                  RngStream* rng = nullptr) {
    if (xs.empty() || xs.size() != ys.size())
        throw Error("grad_params: batch must be non-empty with matching labels");
    ArchPlan plan = compile_arch(model.arch);
    GradientReport report;
    report.wrt_params.assign(plan.param_count, 0.0);
    const double inv_n = 1.0 / static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        detail::ForwardTrace trace =
            detail::run_forward(model, plan, *xs[i], rng != nullptr, rng);
        std::vector<double> target = one_hot(ys[i], model.arch.class_count);
        report.loss_value += loss(Prediction{trace.probs}, target, kind);
        std::vector<double> seed = detail::loss_seed(trace.probs, target, kind);
        detail::run_backward(model, plan, trace, seed, &report.wrt_params, false);
    }
    report.loss_value *= inv_n;
    for (double& v : report.wrt_params) v *= inv_n;
    return report;
}

// Loss gradient w.r.t. the input, eval mode (attacks operate on trained
// snapshots with dropout disabled).
inline GradientReport grad_input(const ModelState& model, const Tensor& x,
                                 const std::vector<double>& target, LossKind kind) {
    ArchPlan plan = compile_arch(model.arch);
    detail::ForwardTrace trace = detail::run_forward(model, plan, x, false, nullptr);
    GradientReport report;
    report.loss_value = loss(Prediction{trace.probs}, target, kind);
    std::vector<double> seed = detail::loss_seed(trace.probs, target, kind);
    report.wrt_input = detail::run_backward(model, plan, trace, seed, nullptr, true);
    return report;
}

inline GradientReport grad_input(const ModelState& model, const Tensor& x, std::size_t cls,
                                 LossKind kind) {
    return grad_input(model, x, one_hot(cls, model.arch.class_count), kind);
}

// Per-class input gradients: one tensor per output probability component,
// d f^(j)(x) / d x. Eval mode.
inline std::vector<Tensor> grad_input_prediction(const ModelState& model, const Tensor& x) {
    ArchPlan plan = compile_arch(model.arch);
    detail::ForwardTrace trace = detail::run_forward(model, plan, x, false, nullptr);
    const std::size_t C = model.arch.class_count;
    std::vector<Tensor> grads;
    grads.reserve(C);
    for (std::size_t j = 0; j < C; ++j) {
        std::vector<double> seed(C, 0.0);
        seed[j] = 1.0;
        grads.push_back(detail::run_backward(model, plan, trace, seed, nullptr, true));
    }
    return grads;
}

// Momentum SGD: v <- momentum*v + grad; w <- w - lr*v. Returns the updated
// state; the velocity buffer is updated in place.
inline ModelState sgd_step(const ModelState& model, const std::vector<double>& grad, double lr,
                           double momentum, std::vector<double>& velocity) {
    if (grad.size() != model.params.size())
        throw ShapeError("sgd_step: gradient length " + std::to_string(grad.size()) +
                         " != param length " + std::to_string(model.params.size()));
    if (velocity.empty()) velocity.assign(model.params.size(), 0.0);
    if (velocity.size() != model.params.size())
        throw ShapeError("sgd_step: velocity length mismatch");
    ModelState next = model;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        next.params[i] -= lr * velocity[i];
    }
    return next;
}

} // namespace decentbva
