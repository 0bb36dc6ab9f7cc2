#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "decentbva/arch.hpp"
#include "decentbva/rng.hpp"

namespace decentbva {

// One network's flat parameter vector plus its architecture. Immutable after
// build by convention: training and aggregation produce fresh states, so a
// ModelState can be shared read-only across concurrent clients.
struct ModelState {
    ArchSpec arch;
    std::vector<double> params;
};

// Glorot-uniform weights, zero biases. Deterministic for a fixed seed: one
// derived stream per model, draws consumed in layer order.
inline ModelState init_params(const ArchSpec& arch, std::uint64_t seed) {
    ArchPlan plan = compile_arch(arch);
    ModelState model;
    model.arch = arch;
    model.params.assign(plan.param_count, 0.0);
    RngStream rng = derive_stream(seed, 0x1417u);

    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const auto& slot = plan.slots[li];
        if (slot.weight_count == 0) continue;
        std::size_t fan_in = 0, fan_out = 0;
        if (const auto* d = std::get_if<Dense>(&arch.layers[li])) {
            fan_in = d->in;
            fan_out = d->out;
        } else if (const auto* c = std::get_if<Conv2d>(&arch.layers[li])) {
            fan_in = c->in_ch * c->kernel * c->kernel;
            fan_out = c->out_ch * c->kernel * c->kernel;
        }
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < slot.weight_count; ++i)
            model.params[slot.param_offset + i] = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoint blob: little-endian, f32 parameters.
//   u32 magic 'DBVA' | u32 version | u64 arch_hash | u64 param_count |
//   u32 round | f32 params[param_count]
// The round field carries the server round counter; 0 for bare model saves.

namespace detail {

constexpr std::uint32_t kBlobMagic = 0x41564244u; // "DBVA"
constexpr std::uint32_t kBlobVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace detail

inline std::string encode_checkpoint(const ModelState& model, std::uint32_t round = 0) {
    std::string out;
    out.reserve(28 + 4 * model.params.size());
    detail::put_u32(out, detail::kBlobMagic);
    detail::put_u32(out, detail::kBlobVersion);
    detail::put_u64(out, arch_hash(model.arch));
    detail::put_u64(out, static_cast<std::uint64_t>(model.params.size()));
    detail::put_u32(out, round);
    for (double p : model.params) {
        float f = static_cast<float>(p);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
    return out;
}

struct Checkpoint {
    ModelState model;
    std::uint32_t round = 0;
};

// Decodes against the expected architecture; the blob stores only the arch
// hash, so the caller supplies the ArchSpec (normally from the run config).
inline Checkpoint decode_checkpoint(const std::string& blob, const ArchSpec& arch) {
    if (blob.size() < 28) throw ParseError("checkpoint: truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    if (detail::get_u32(p) != detail::kBlobMagic) throw ParseError("checkpoint: bad magic");
    std::uint32_t version = detail::get_u32(p + 4);
    if (version != detail::kBlobVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t hash = detail::get_u64(p + 8);
    if (hash != arch_hash(arch))
        throw ParseError("checkpoint: arch hash mismatch (blob was saved for a different arch)");
    std::uint64_t count = detail::get_u64(p + 16);
    ArchPlan plan = compile_arch(arch);
    if (count != plan.param_count)
        throw ParseError("checkpoint: param count " + std::to_string(count) + " != arch's " +
                         std::to_string(plan.param_count));
    if (blob.size() != 28 + 4 * count) throw ParseError("checkpoint: truncated payload");

    Checkpoint ck;
    ck.round = detail::get_u32(p + 24);
    ck.model.arch = arch;
    ck.model.params.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t bits = detail::get_u32(p + 28 + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        ck.model.params[i] = static_cast<double>(f);
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelState& model,
                            std::uint32_t round = 0) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    std::string blob = encode_checkpoint(model, round);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw Error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, const ArchSpec& arch) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(blob, arch);
}

} // namespace decentbva
