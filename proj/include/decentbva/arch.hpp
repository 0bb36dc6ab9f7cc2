#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "decentbva/error.hpp"
#include "decentbva/tensor.hpp"

namespace decentbva {

// Layer descriptors. A network is a flat list of these; shapes must compose
// and the terminal layer must be Softmax over class_count entries.

struct Dense {
    std::size_t in = 0, out = 0;
};
struct Conv2d {
    std::size_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1;
};
struct MaxPool {
    std::size_t size = 0, stride = 0;
};
struct Relu {};
struct Dropout {
    double rate = 0.0;
};
struct Flatten {};
struct Softmax {};

using LayerSpec = std::variant<Dense, Conv2d, MaxPool, Relu, Dropout, Flatten, Softmax>;

struct ArchSpec {
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> input_shape;
    std::size_t class_count = 0;
};

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s,
                                const char* what) {
    if (in < k)
        throw ShapeError(std::string(what) + ": window " + std::to_string(k) +
                         " exceeds input dim " + std::to_string(in));
    return (in - k) / s + 1;
}

} // namespace detail

// Per-layer placement of parameters inside the flat vector, plus the shape
// every layer produces. Computed once per ArchSpec use; validation lives here.
struct ArchPlan {
    struct LayerSlot {
        std::size_t param_offset = 0; // start of this layer's params (0 if none)
        std::size_t weight_count = 0; // weights first, then biases
        std::size_t bias_count = 0;
        std::vector<std::size_t> in_shape;
        std::vector<std::size_t> out_shape;
    };
    std::vector<LayerSlot> slots;
    std::size_t param_count = 0;
};

inline ArchPlan compile_arch(const ArchSpec& arch) {
    if (arch.class_count < 2) throw ShapeError("class_count must be >= 2");
    if (arch.input_shape.empty()) throw ShapeError("input_shape must be non-empty");
    if (arch.layers.empty()) throw ShapeError("arch has no layers");

    ArchPlan plan;
    std::vector<std::size_t> shape = arch.input_shape;
    std::size_t offset = 0;

    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const LayerSpec& layer = arch.layers[li];
        ArchPlan::LayerSlot slot;
        slot.in_shape = shape;
        slot.param_offset = offset;
        bool terminal = std::holds_alternative<Softmax>(layer);
        if (terminal && li + 1 != arch.layers.size())
            throw ShapeError("softmax must be the terminal layer");

        if (const auto* d = std::get_if<Dense>(&layer)) {
            if (d->in == 0 || d->out == 0) throw ShapeError("dense dims must be positive");
            if (shape.size() != 1 || shape[0] != d->in)
                throw ShapeError("dense layer " + std::to_string(li) + " expects flat input of " +
                                 std::to_string(d->in) + ", got " + Tensor::shape_string(shape));
            slot.weight_count = d->in * d->out;
            slot.bias_count = d->out;
            shape = {d->out};
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            if (c->in_ch == 0 || c->out_ch == 0 || c->kernel == 0 || c->stride == 0)
                throw ShapeError("conv2d dims must be positive");
            if (shape.size() != 3 || shape[0] != c->in_ch)
                throw ShapeError("conv2d layer " + std::to_string(li) +
                                 " expects (C,H,W) input with C=" + std::to_string(c->in_ch) +
                                 ", got " + Tensor::shape_string(shape));
            std::size_t oh = detail::conv_out_dim(shape[1], c->kernel, c->stride, "conv2d");
            std::size_t ow = detail::conv_out_dim(shape[2], c->kernel, c->stride, "conv2d");
            slot.weight_count = c->out_ch * c->in_ch * c->kernel * c->kernel;
            slot.bias_count = c->out_ch;
            shape = {c->out_ch, oh, ow};
        } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
            if (p->size == 0 || p->stride == 0) throw ShapeError("maxpool dims must be positive");
            if (shape.size() != 3)
                throw ShapeError("maxpool expects (C,H,W) input, got " +
                                 Tensor::shape_string(shape));
            std::size_t oh = detail::conv_out_dim(shape[1], p->size, p->stride, "maxpool");
            std::size_t ow = detail::conv_out_dim(shape[2], p->size, p->stride, "maxpool");
            shape = {shape[0], oh, ow};
        } else if (std::get_if<Relu>(&layer)) {
            // shape preserved
        } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
            if (!(dr->rate >= 0.0 && dr->rate < 1.0))
                throw ShapeError("dropout rate must be in [0,1)");
        } else if (std::get_if<Flatten>(&layer)) {
            shape = {Tensor::numel_of(shape)};
        } else if (std::get_if<Softmax>(&layer)) {
            if (shape.size() != 1 || shape[0] != arch.class_count)
                throw ShapeError("softmax expects flat input of class_count=" +
                                 std::to_string(arch.class_count) + ", got " +
                                 Tensor::shape_string(shape));
        }

        offset += slot.weight_count + slot.bias_count;
        slot.out_shape = shape;
        plan.slots.push_back(std::move(slot));
    }

    if (!std::holds_alternative<Softmax>(arch.layers.back()))
        throw ShapeError("arch must end in a softmax output layer");
    plan.param_count = offset;
    return plan;
}

inline std::size_t param_count(const ArchSpec& arch) { return compile_arch(arch).param_count; }

// Canonical textual encoding, used for the checkpoint header hash. Stable
// across serialization round trips.
inline std::string arch_signature(const ArchSpec& arch) {
    std::string s = "in" + Tensor::shape_string(arch.input_shape) + ";C" +
                    std::to_string(arch.class_count) + ";";
    for (const LayerSpec& l : arch.layers) {
        if (const auto* d = std::get_if<Dense>(&l))
            s += "dense(" + std::to_string(d->in) + "," + std::to_string(d->out) + ");";
        else if (const auto* c = std::get_if<Conv2d>(&l))
            s += "conv2d(" + std::to_string(c->in_ch) + "," + std::to_string(c->out_ch) + "," +
                 std::to_string(c->kernel) + "," + std::to_string(c->stride) + ");";
        else if (const auto* p = std::get_if<MaxPool>(&l))
            s += "maxpool(" + std::to_string(p->size) + "," + std::to_string(p->stride) + ");";
        else if (std::get_if<Relu>(&l))
            s += "relu;";
        else if (const auto* dr = std::get_if<Dropout>(&l)) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "dropout(%.17g);", dr->rate);
            s += buf;
        } else if (std::get_if<Flatten>(&l))
            s += "flatten;";
        else
            s += "softmax;";
    }
    return s;
}

inline std::uint64_t arch_hash(const ArchSpec& arch) {
    // FNV-1a over the canonical signature.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : arch_signature(arch)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline bool same_arch(const ArchSpec& a, const ArchSpec& b) {
    return arch_signature(a) == arch_signature(b);
}

// Fully-connected classifier: input_dim -> hidden... (relu) -> classes.
inline ArchSpec make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t classes) {
    ArchSpec arch;
    arch.input_shape = {input_dim};
    arch.class_count = classes;
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        arch.layers.push_back(Dense{prev, h});
        arch.layers.push_back(Relu{});
        prev = h;
    }
    arch.layers.push_back(Dense{prev, classes});
    arch.layers.push_back(Softmax{});
    return arch;
}

} // namespace decentbva
