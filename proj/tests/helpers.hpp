#pragma once

// Shared test utilities: finite-difference oracles and model constructors
// with known outputs.

#include <cmath>
#include <functional>
#include <vector>

#include <decentbva/decentbva.hpp>

namespace testutil {

using decentbva::ArchSpec;
using decentbva::ModelState;
using decentbva::Tensor;

// Central finite differences of a scalar function w.r.t. the input tensor.
inline Tensor fd_grad_input(const Tensor& x, const std::function<double(const Tensor&)>& f,
                            double h = 1e-4) {
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(probe);
        probe[i] = saved - h;
        const double down = f(probe);
        probe[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Central finite differences w.r.t. the parameter vector.
inline std::vector<double> fd_grad_params(const ModelState& model,
                                          const std::function<double(const ModelState&)>& f,
                                          double h = 1e-4) {
    std::vector<double> g(model.params.size());
    ModelState probe = model;
    for (std::size_t i = 0; i < probe.params.size(); ++i) {
        const double saved = probe.params[i];
        probe.params[i] = saved + h;
        const double up = f(probe);
        probe.params[i] = saved - h;
        const double down = f(probe);
        probe.params[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Fraction of coordinates where analytic and numeric gradients agree within
// rtol, counting only coordinates with magnitude above floor.
inline double grad_agreement(const std::vector<double>& analytic,
                             const std::vector<double>& numeric, double rtol = 1e-3,
                             double floor = 1e-6) {
    std::size_t counted = 0, agreed = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
        if (scale <= floor) continue;
        ++counted;
        if (std::abs(analytic[i] - numeric[i]) <= rtol * scale) ++agreed;
    }
    return counted == 0 ? 1.0 : double(agreed) / double(counted);
}

// A model that ignores its input and always outputs exactly `probs`:
// a single dense layer with zero weights and bias = ln(probs), so
// softmax(bias) == probs.
inline ModelState constant_model(std::size_t input_dim, const std::vector<double>& probs) {
    ArchSpec arch;
    arch.input_shape = {input_dim};
    arch.class_count = probs.size();
    arch.layers.push_back(decentbva::Dense{input_dim, probs.size()});
    arch.layers.push_back(decentbva::Softmax{});
    ModelState model;
    model.arch = arch;
    const auto plan = decentbva::compile_arch(arch);
    model.params.assign(plan.param_count, 0.0);
    const std::size_t bias_off = plan.slots[0].param_offset + plan.slots[0].weight_count;
    for (std::size_t j = 0; j < probs.size(); ++j)
        model.params[bias_off + j] = std::log(probs[j]);
    return model;
}

// A small randomly initialized MLP.
inline ModelState random_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             std::size_t classes, std::uint64_t seed) {
    return decentbva::init_params(decentbva::make_mlp(input_dim, hidden, classes), seed);
}

inline Tensor random_input(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    decentbva::RngStream rng(seed);
    Tensor t(shape);
    for (double& v : t.data) v = rng.uniform();
    return t;
}

} // namespace testutil
