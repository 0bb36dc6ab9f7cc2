#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "decentbva/error.hpp"
#include "decentbva/rng.hpp"
#include "decentbva/tensor.hpp"

namespace decentbva {

struct LabeledSet {
    std::vector<Tensor> features;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return features.size(); }
    bool empty() const { return features.empty(); }
};

inline void validate_set(const LabeledSet& set) {
    if (set.features.size() != set.labels.size())
        throw ShapeError("labeled set: " + std::to_string(set.features.size()) +
                         " features vs " + std::to_string(set.labels.size()) + " labels");
    if (set.class_count == 0) throw ShapeError("labeled set: class_count must be positive");
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.features[i].shape.empty() && set.features[i].shape != set.features[0].shape)
            throw ShapeError("labeled set: inconsistent feature shape at index " +
                             std::to_string(i));
        if (set.labels[i] >= set.class_count)
            throw ShapeError("labeled set: label " + std::to_string(set.labels[i]) +
                             " out of range at index " + std::to_string(i));
    }
}

inline LabeledSet subset(const LabeledSet& set, const std::vector<std::size_t>& indices) {
    LabeledSet out;
    out.class_count = set.class_count;
    out.features.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= set.size())
            throw ShapeError("subset: index " + std::to_string(idx) + " out of range");
        out.features.push_back(set.features[idx]);
        out.labels.push_back(set.labels[idx]);
    }
    return out;
}

inline void append(LabeledSet& dst, const LabeledSet& src) {
    if (dst.class_count != src.class_count)
        throw ShapeError("append: class_count mismatch");
    if (!dst.empty() && !src.empty() && dst.features[0].shape != src.features[0].shape)
        throw ShapeError("append: feature shape mismatch");
    dst.features.insert(dst.features.end(), src.features.begin(), src.features.end());
    dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

// Reinterpret every feature tensor with a new shape of identical element count
// (e.g. {1,28,28} image grids as {784} vectors for dense stacks).
inline LabeledSet reshape_features(LabeledSet set, const std::vector<std::size_t>& shape) {
    const std::size_t want = Tensor::numel_of(shape);
    for (Tensor& t : set.features) {
        if (t.numel() != want)
            throw ShapeError("reshape_features: cannot reshape " +
                             Tensor::shape_string(t.shape) + " to " +
                             Tensor::shape_string(shape));
        t.shape = shape;
    }
    return set;
}

inline std::vector<std::size_t> class_histogram(const LabeledSet& set) {
    std::vector<std::size_t> hist(set.class_count, 0);
    for (std::size_t y : set.labels) {
        if (y >= set.class_count) throw ShapeError("class_histogram: label out of range");
        ++hist[y];
    }
    return hist;
}

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(path + ": truncated header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace detail

// IDX image/label pair (the MNIST container format): big-endian headers,
// unsigned-byte payload. Pixels are scaled to [0,1]; images come out shaped
// {1, rows, cols}.
inline LabeledSet load_idx(const std::string& images_path, const std::string& labels_path,
                           std::size_t class_count) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError(images_path + ": cannot open");
    if (detail::read_be_u32(img, images_path) != 0x00000803u)
        throw ParseError(images_path + ": bad magic (expected idx3 unsigned-byte images)");
    const std::uint32_t n = detail::read_be_u32(img, images_path);
    const std::uint32_t rows = detail::read_be_u32(img, images_path);
    const std::uint32_t cols = detail::read_be_u32(img, images_path);
    if (rows == 0 || cols == 0) throw ParseError(images_path + ": zero image dimensions");

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError(labels_path + ": cannot open");
    if (detail::read_be_u32(lab, labels_path) != 0x00000801u)
        throw ParseError(labels_path + ": bad magic (expected idx1 unsigned-byte labels)");
    const std::uint32_t n_lab = detail::read_be_u32(lab, labels_path);
    if (n != n_lab)
        throw ParseError(images_path + "/" + labels_path + ": image count " +
                         std::to_string(n) + " != label count " + std::to_string(n_lab));

    LabeledSet set;
    set.class_count = class_count;
    set.features.reserve(n);
    set.labels.reserve(n);
    const std::size_t pixels = std::size_t(rows) * cols;
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pixels)))
            throw ParseError(images_path + ": truncated pixel data at image " +
                             std::to_string(i));
        Tensor t({1, rows, cols});
        for (std::size_t p = 0; p < pixels; ++p) t[p] = double(buf[p]) / 255.0;
        set.features.push_back(std::move(t));

        unsigned char y;
        if (!lab.read(reinterpret_cast<char*>(&y), 1))
            throw ParseError(labels_path + ": truncated label data at index " +
                             std::to_string(i));
        if (y >= class_count)
            throw ParseError(labels_path + ": label " + std::to_string(int(y)) +
                             " out of range for " + std::to_string(class_count) + " classes");
        set.labels.push_back(y);
    }
    return set;
}

// Plain numeric CSV, one example per row: label, then feature values.
inline LabeledSet load_csv(const std::string& path, std::size_t class_count) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    LabeledSet set;
    set.class_count = class_count;
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
                values.push_back(v);
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": non-numeric cell '" +
                                 cell + "'");
            }
        }
        if (values.size() < 2)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": row needs a label and at least one feature");
        double label_raw = values[0];
        if (label_raw < 0 || label_raw != std::floor(label_raw) ||
            label_raw >= double(class_count))
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad label " +
                             std::to_string(label_raw));
        if (dim == 0)
            dim = values.size() - 1;
        else if (values.size() - 1 != dim)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(dim) + " features, got " +
                             std::to_string(values.size() - 1));
        Tensor t({dim});
        std::copy(values.begin() + 1, values.end(), t.data.begin());
        set.features.push_back(std::move(t));
        set.labels.push_back(std::size_t(label_raw));
    }
    if (set.empty()) throw ParseError(path + ": no data rows");
    return set;
}

// Synthetic Gaussian blobs. Class c's center sits at the hypercube corner
// encoded by the low bits of c (coordinate 0.25 + 0.5*bit), so any two
// centers are at least 0.5 apart in some coordinate. Labels cycle 0..C-1 so
// the set is as balanced as n allows. Features are clipped to [0,1].
inline LabeledSet synth_blobs(std::size_t n, std::size_t dim, std::size_t class_count,
                              double spread, std::uint64_t seed) {
    if (n == 0 || dim == 0 || class_count == 0)
        throw ConfigError("synth_blobs: n, dim and class_count must be positive");
    if (dim < 64 && class_count > (std::size_t(1) << dim))
        throw ConfigError("synth_blobs: " + std::to_string(class_count) +
                          " classes need at least log2(C) dimensions, got " +
                          std::to_string(dim));
    if (!(spread >= 0.0)) throw ConfigError("synth_blobs: spread must be non-negative");

    RngStream rng = derive_stream(seed, 0x626c6f62u); // "blob"
    LabeledSet set;
    set.class_count = class_count;
    set.features.reserve(n);
    set.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % class_count;
        Tensor t({dim});
        for (std::size_t d = 0; d < dim; ++d) {
            const double center = 0.25 + 0.5 * double((c >> d) & 1u);
            t[d] = std::clamp(center + spread * rng.normal(), 0.0, 1.0);
        }
        set.features.push_back(std::move(t));
        set.labels.push_back(c);
    }
    return set;
}

enum class PartitionScheme { iid, noniid };

struct PartitionSpec {
    std::size_t client_count = 0;
    std::size_t server_count = 0;      // examples held out for the server pool
    PartitionScheme scheme = PartitionScheme::iid;
    std::size_t shards_per_client = 2; // non-iid only
    std::uint64_t seed = 0;
};

struct Partition {
    LabeledSet server;
    std::vector<LabeledSet> clients;
};

// Splits a dataset into a server holdout plus per-client shards.
//
// The server pool is drawn first from a seeded shuffle. The remainder is
// split iid (near-equal contiguous chunks of the shuffle) or non-iid: sort by
// label (ties broken by original position), cut into client_count *
// shards_per_client near-equal shards, and deal shuffled shards so each
// client sees only a few label regions.
inline Partition partition(const LabeledSet& set, const PartitionSpec& spec) {
    validate_set(set);
    if (spec.client_count == 0) throw ConfigError("partition: client_count must be positive");
    if (spec.server_count >= set.size())
        throw ConfigError("partition: server_count " + std::to_string(spec.server_count) +
                          " must leave at least one client example of " +
                          std::to_string(set.size()));
    const std::size_t remaining = set.size() - spec.server_count;
    if (remaining < spec.client_count)
        throw ConfigError("partition: only " + std::to_string(remaining) +
                          " examples for " + std::to_string(spec.client_count) + " clients");

    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = derive_stream(spec.seed, 0x70617274u); // "part"
    rng.shuffle(order);

    Partition out;
    out.server = subset(set, {order.begin(), order.begin() + std::ptrdiff_t(spec.server_count)});
    std::vector<std::size_t> rest(order.begin() + std::ptrdiff_t(spec.server_count), order.end());

    out.clients.reserve(spec.client_count);
    if (spec.scheme == PartitionScheme::iid) {
        const std::size_t base = remaining / spec.client_count;
        const std::size_t extra = remaining % spec.client_count;
        std::size_t pos = 0;
        for (std::size_t k = 0; k < spec.client_count; ++k) {
            const std::size_t take = base + (k < extra ? 1 : 0);
            out.clients.push_back(subset(
                set, {rest.begin() + std::ptrdiff_t(pos), rest.begin() + std::ptrdiff_t(pos + take)}));
            pos += take;
        }
    } else {
        if (spec.shards_per_client == 0)
            throw ConfigError("partition: shards_per_client must be positive");
        const std::size_t shard_count = spec.client_count * spec.shards_per_client;
        if (shard_count > remaining)
            throw ConfigError("partition: " + std::to_string(shard_count) +
                              " shards need at least as many examples, have " +
                              std::to_string(remaining));
        std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
            if (set.labels[a] != set.labels[b]) return set.labels[a] < set.labels[b];
            return a < b;
        });
        const std::size_t base = remaining / shard_count;
        const std::size_t extra = remaining % shard_count;
        std::vector<std::pair<std::size_t, std::size_t>> shard_bounds;
        shard_bounds.reserve(shard_count);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < shard_count; ++s) {
            const std::size_t take = base + (s < extra ? 1 : 0);
            shard_bounds.emplace_back(pos, pos + take);
            pos += take;
        }
        std::vector<std::size_t> shard_order(shard_count);
        std::iota(shard_order.begin(), shard_order.end(), 0);
        rng.shuffle(shard_order);
        for (std::size_t k = 0; k < spec.client_count; ++k) {
            std::vector<std::size_t> picks;
            for (std::size_t s = 0; s < spec.shards_per_client; ++s) {
                const auto [lo, hi] = shard_bounds[shard_order[k * spec.shards_per_client + s]];
                picks.insert(picks.end(), rest.begin() + std::ptrdiff_t(lo),
                             rest.begin() + std::ptrdiff_t(hi));
            }
            out.clients.push_back(subset(set, picks));
        }
    }
    return out;
}

} // namespace decentbva
