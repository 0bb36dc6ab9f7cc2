#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "decentbva/arch.hpp"
#include "decentbva/attack.hpp"
#include "decentbva/dataset.hpp"
#include "decentbva/error.hpp"
#include "decentbva/federation.hpp"
#include "decentbva/network.hpp"

namespace decentbva {

using json = nlohmann::json;

enum class DataSource { synth_blobs, idx, csv };

struct DatasetConfig {
    DataSource source = DataSource::synth_blobs;
    // synth_blobs
    std::size_t classes = 2;
    std::size_t per_class = 100;
    std::size_t test_per_class = 50;
    std::size_t dims = 2;
    double spread = 0.08;
    // idx / csv
    std::string train_images, train_labels, test_images, test_labels;
    std::string train_csv, test_csv;
    std::size_t class_count = 0; // resolved for every source
    // partitioning
    PartitionScheme scheme = PartitionScheme::iid;
    std::size_t shards_per_client = 2;
    std::size_t server_count = 64; // n_s
};

struct NamedAttack {
    std::string name;
    AttackConfig cfg;
};

struct EvalConfig {
    std::size_t cadence = 1; // evaluate every this many rounds (round 0 and the last always)
    std::vector<NamedAttack> attacks;
};

struct OutputConfig {
    std::string dir = "out";
    bool csv = true;
    bool jsonl = true;
    bool timing = false; // real wall_ms breaks byte-identical reruns, so it is opt-in
};

struct ExperimentConfig {
    std::uint64_t master_seed = 1;
    DatasetConfig dataset;
    ArchSpec arch;
    RoundPlan plan;
    std::size_t rounds = 1;
    EvalConfig eval;
    OutputConfig output;
    std::vector<std::size_t> sweep_widths; // sweep verb only
};

namespace detail {

inline void check_keys(const json& obj, const std::string& section,
                       const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("section '" + section + "' must be an object");
    for (const auto& item : obj.items())
        if (!allowed.count(item.key()))
            throw ConfigError("unknown key '" + (section.empty() ? "" : section + ".") +
                              item.key() + "'");
}

inline std::string key_path(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

inline double get_num(const json& obj, const std::string& section, const std::string& key,
                      double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number())
        throw ConfigError("'" + key_path(section, key) + "' must be a number");
    return obj[key].get<double>();
}

inline std::int64_t get_int(const json& obj, const std::string& section, const std::string& key,
                            std::int64_t fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer())
        throw ConfigError("'" + key_path(section, key) + "' must be an integer");
    return obj[key].get<std::int64_t>();
}

inline std::size_t get_count(const json& obj, const std::string& section, const std::string& key,
                             std::int64_t fallback, std::int64_t min_value = 0) {
    std::int64_t v = get_int(obj, section, key, fallback);
    if (v < min_value)
        throw ConfigError("'" + key_path(section, key) + "' must be >= " +
                          std::to_string(min_value));
    return std::size_t(v);
}

inline bool get_bool(const json& obj, const std::string& section, const std::string& key,
                     bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean())
        throw ConfigError("'" + key_path(section, key) + "' must be a boolean");
    return obj[key].get<bool>();
}

inline std::string get_str(const json& obj, const std::string& section, const std::string& key,
                           const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string())
        throw ConfigError("'" + key_path(section, key) + "' must be a string");
    return obj[key].get<std::string>();
}

inline std::string require_str(const json& obj, const std::string& section,
                               const std::string& key) {
    if (!obj.contains(key))
        throw ConfigError("missing required key '" + key_path(section, key) + "'");
    return get_str(obj, section, key, "");
}

inline void require_file(const std::string& path, const std::string& key) {
    if (!std::filesystem::exists(path))
        throw ConfigError("'" + key + "': file does not exist: " + path);
}

inline LossKind parse_loss(const std::string& s, const std::string& key) {
    if (s == "ce" || s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "mse") return LossKind::mse;
    throw ConfigError("'" + key + "' must be 'ce' or 'mse', got '" + s + "'");
}

inline AttackConfig parse_attack(const json& obj, const std::string& section,
                                 const AttackConfig& defaults) {
    check_keys(obj, section,
               {"epsilon", "steps", "step_size", "lambda", "clip", "random_start", "loss",
                "name"});
    AttackConfig cfg = defaults;
    cfg.epsilon = get_num(obj, section, "epsilon", defaults.epsilon);
    cfg.steps = get_count(obj, section, "steps", std::int64_t(defaults.steps), 1);
    cfg.step_size = get_num(obj, section, "step_size", defaults.step_size);
    cfg.lambda = get_num(obj, section, "lambda", defaults.lambda);
    cfg.clip_to_unit = get_bool(obj, section, "clip", defaults.clip_to_unit);
    cfg.random_start = get_bool(obj, section, "random_start", defaults.random_start);
    if (obj.contains("loss")) cfg.loss = parse_loss(get_str(obj, section, "loss", "ce"),
                                                    key_path(section, "loss"));
    validate_attack(cfg);
    return cfg;
}

inline void validate_attack_name(const std::string& name) {
    if (name.empty()) throw ConfigError("eval attack name must be non-empty");
    for (char c : name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
            throw ConfigError("eval attack name '" + name +
                              "' may only contain letters, digits and underscores");
}

inline ArchSpec parse_arch(const json& model, const DatasetConfig& data) {
    const std::string type = get_str(model, "model", "type", "mlp");
    if (type == "mlp") {
        check_keys(model, "model", {"type", "hidden", "input_dim", "dropout"});
        std::size_t input_dim = get_count(model, "model", "input_dim", 0);
        if (input_dim == 0) {
            if (data.source == DataSource::synth_blobs)
                input_dim = data.dims;
            else
                throw ConfigError("'model.input_dim' is required for non-synthetic datasets");
        }
        std::vector<std::size_t> hidden;
        if (model.contains("hidden")) {
            if (!model["hidden"].is_array())
                throw ConfigError("'model.hidden' must be an array of widths");
            for (const auto& h : model["hidden"]) {
                if (!h.is_number_integer() || h.get<std::int64_t>() < 1)
                    throw ConfigError("'model.hidden' entries must be positive integers");
                hidden.push_back(h.get<std::size_t>());
            }
        }
        ArchSpec arch = make_mlp(input_dim, hidden, data.class_count);
        const double dropout = get_num(model, "model", "dropout", 0.0);
        if (dropout != 0.0) {
            // insert after each hidden relu
            ArchSpec with_drop;
            with_drop.input_shape = arch.input_shape;
            with_drop.class_count = arch.class_count;
            for (const LayerSpec& layer : arch.layers) {
                with_drop.layers.push_back(layer);
                if (std::holds_alternative<Relu>(layer))
                    with_drop.layers.push_back(Dropout{dropout});
            }
            arch = std::move(with_drop);
        }
        compile_arch(arch);
        return arch;
    }
    if (type == "layers") {
        check_keys(model, "model", {"type", "input_shape", "layers"});
        ArchSpec arch;
        arch.class_count = data.class_count;
        if (!model.contains("input_shape") || !model["input_shape"].is_array())
            throw ConfigError("'model.input_shape' must be an array of dimensions");
        for (const auto& d : model["input_shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 1)
                throw ConfigError("'model.input_shape' entries must be positive integers");
            arch.input_shape.push_back(d.get<std::size_t>());
        }
        if (!model.contains("layers") || !model["layers"].is_array())
            throw ConfigError("'model.layers' must be an array of layer objects");
        for (const auto& lj : model["layers"]) {
            const std::string kind = require_str(lj, "model.layers[]", "kind");
            if (kind == "dense") {
                check_keys(lj, "model.layers[dense]", {"kind", "in", "out"});
                arch.layers.push_back(Dense{get_count(lj, "model.layers[dense]", "in", 0, 1),
                                            get_count(lj, "model.layers[dense]", "out", 0, 1)});
            } else if (kind == "conv2d") {
                check_keys(lj, "model.layers[conv2d]",
                           {"kind", "in_ch", "out_ch", "kernel", "stride"});
                arch.layers.push_back(
                    Conv2d{get_count(lj, "model.layers[conv2d]", "in_ch", 0, 1),
                           get_count(lj, "model.layers[conv2d]", "out_ch", 0, 1),
                           get_count(lj, "model.layers[conv2d]", "kernel", 0, 1),
                           get_count(lj, "model.layers[conv2d]", "stride", 1, 1)});
            } else if (kind == "maxpool") {
                check_keys(lj, "model.layers[maxpool]", {"kind", "size", "stride"});
                const std::size_t size = get_count(lj, "model.layers[maxpool]", "size", 0, 1);
                arch.layers.push_back(MaxPool{
                    size, get_count(lj, "model.layers[maxpool]", "stride", std::int64_t(size), 1)});
            } else if (kind == "relu") {
                check_keys(lj, "model.layers[relu]", {"kind"});
                arch.layers.push_back(Relu{});
            } else if (kind == "dropout") {
                check_keys(lj, "model.layers[dropout]", {"kind", "rate"});
                arch.layers.push_back(Dropout{get_num(lj, "model.layers[dropout]", "rate", 0.5)});
            } else if (kind == "flatten") {
                check_keys(lj, "model.layers[flatten]", {"kind"});
                arch.layers.push_back(Flatten{});
            } else if (kind == "softmax") {
                check_keys(lj, "model.layers[softmax]", {"kind"});
                arch.layers.push_back(Softmax{});
            } else {
                throw ConfigError("unknown layer kind '" + kind + "'");
            }
        }
        compile_arch(arch);
        return arch;
    }
    throw ConfigError("'model.type' must be 'mlp' or 'layers', got '" + type + "'");
}

} // namespace detail

inline ExperimentConfig validate_config(const json& doc) {
    using namespace detail;
    check_keys(doc, "",
               {"master_seed", "dataset", "model", "protocol", "attack", "eval", "output",
                "sweep"});
    ExperimentConfig cfg;
    if (doc.contains("master_seed")) {
        if (!doc["master_seed"].is_number_integer() || doc["master_seed"].get<std::int64_t>() < 0)
            throw ConfigError("'master_seed' must be a non-negative integer");
        cfg.master_seed = doc["master_seed"].get<std::uint64_t>();
    }

    // dataset ----------------------------------------------------------------
    const json data_j = doc.contains("dataset") ? doc["dataset"] : json::object();
    check_keys(data_j, "dataset",
               {"source", "classes", "per_class", "test_per_class", "dims", "spread",
                "train_images", "train_labels", "test_images", "test_labels", "train_csv",
                "test_csv", "class_count", "partition", "server_count"});
    DatasetConfig& data = cfg.dataset;
    const std::string source = get_str(data_j, "dataset", "source", "synth_blobs");
    if (source == "synth_blobs") {
        data.source = DataSource::synth_blobs;
        data.classes = get_count(data_j, "dataset", "classes", 2, 2);
        data.per_class = get_count(data_j, "dataset", "per_class", 100, 1);
        data.test_per_class = get_count(data_j, "dataset", "test_per_class", 50, 1);
        data.dims = get_count(data_j, "dataset", "dims", 2, 1);
        data.spread = get_num(data_j, "dataset", "spread", 0.08);
        if (!(data.spread >= 0.0)) throw ConfigError("'dataset.spread' must be non-negative");
        data.class_count = data.classes;
    } else if (source == "idx") {
        data.source = DataSource::idx;
        data.train_images = require_str(data_j, "dataset", "train_images");
        data.train_labels = require_str(data_j, "dataset", "train_labels");
        data.test_images = require_str(data_j, "dataset", "test_images");
        data.test_labels = require_str(data_j, "dataset", "test_labels");
        data.class_count = get_count(data_j, "dataset", "class_count", 10, 2);
        require_file(data.train_images, "dataset.train_images");
        require_file(data.train_labels, "dataset.train_labels");
        require_file(data.test_images, "dataset.test_images");
        require_file(data.test_labels, "dataset.test_labels");
    } else if (source == "csv") {
        data.source = DataSource::csv;
        data.train_csv = require_str(data_j, "dataset", "train_csv");
        data.test_csv = require_str(data_j, "dataset", "test_csv");
        data.class_count = get_count(data_j, "dataset", "class_count", 0, 2);
        require_file(data.train_csv, "dataset.train_csv");
        require_file(data.test_csv, "dataset.test_csv");
    } else {
        throw ConfigError("'dataset.source' must be synth_blobs, idx or csv; got '" + source +
                          "'");
    }
    data.server_count = get_count(data_j, "dataset", "server_count", 64);
    if (data_j.contains("partition")) {
        const json part_j = data_j["partition"];
        check_keys(part_j, "dataset.partition", {"scheme", "shards_per_client"});
        const std::string scheme = get_str(part_j, "dataset.partition", "scheme", "iid");
        if (scheme == "iid")
            data.scheme = PartitionScheme::iid;
        else if (scheme == "noniid")
            data.scheme = PartitionScheme::noniid;
        else
            throw ConfigError("'dataset.partition.scheme' must be 'iid' or 'noniid'");
        data.shards_per_client =
            get_count(part_j, "dataset.partition", "shards_per_client", 2, 1);
    }

    // protocol ----------------------------------------------------------------
    const json proto_j = doc.contains("protocol") ? doc["protocol"] : json::object();
    check_keys(proto_j, "protocol",
               {"mode", "rounds", "clients", "fraction", "local_epochs", "batch_size", "lr",
                "momentum", "loss", "lambda", "persist_momentum"});
    RoundPlan& plan = cfg.plan;
    plan.mode = mode_from_string(get_str(proto_j, "protocol", "mode", "fedavg"));
    cfg.rounds = get_count(proto_j, "protocol", "rounds", 10);
    plan.total_clients = get_count(proto_j, "protocol", "clients", 4, 1);
    plan.fraction = get_num(proto_j, "protocol", "fraction", 0.1);
    plan.local_epochs = get_count(proto_j, "protocol", "local_epochs", 1);
    plan.batch_size = get_count(proto_j, "protocol", "batch_size", 64, 1);
    plan.lr = get_num(proto_j, "protocol", "lr", 0.01);
    plan.momentum = get_num(proto_j, "protocol", "momentum", 0.9);
    plan.loss = parse_loss(get_str(proto_j, "protocol", "loss", "ce"), "protocol.loss");
    plan.persist_momentum = get_bool(proto_j, "protocol", "persist_momentum", false);

    // attack (server-side generation) -----------------------------------------
    AttackConfig attack_defaults;
    attack_defaults.epsilon = 0.3;
    attack_defaults.lambda = get_num(proto_j, "protocol", "lambda", 1.0);
    attack_defaults.loss = plan.loss;
    const json attack_j = doc.contains("attack") ? doc["attack"] : json::object();
    plan.attack = parse_attack(attack_j, "attack", attack_defaults);
    if (attack_j.contains("name")) throw ConfigError("unknown key 'attack.name'");
    if (attack_j.contains("lambda") && proto_j.contains("lambda") &&
        attack_j["lambda"].get<double>() != proto_j["lambda"].get<double>())
        throw ConfigError("'attack.lambda' conflicts with 'protocol.lambda'");

    // model --------------------------------------------------------------------
    const json model_j = doc.contains("model") ? doc["model"] : json::object();
    cfg.arch = parse_arch(model_j, data);

    // eval ----------------------------------------------------------------------
    const json eval_j = doc.contains("eval") ? doc["eval"] : json::object();
    check_keys(eval_j, "eval", {"cadence", "attacks"});
    cfg.eval.cadence = get_count(eval_j, "eval", "cadence", 1, 1);
    if (eval_j.contains("attacks")) {
        if (!eval_j["attacks"].is_array())
            throw ConfigError("'eval.attacks' must be an array");
        for (const auto& aj : eval_j["attacks"]) {
            AttackConfig base;
            base.epsilon = plan.attack.epsilon;
            base.loss = plan.loss;
            NamedAttack named;
            named.cfg = parse_attack(aj, "eval.attacks[]", base);
            named.name = get_str(aj, "eval.attacks[]", "name",
                                 named.cfg.steps == 1
                                     ? "fgsm"
                                     : "pgd" + std::to_string(named.cfg.steps));
            validate_attack_name(named.name);
            cfg.eval.attacks.push_back(std::move(named));
        }
    } else {
        // the standard evaluation battery: one-step sign, then 10- and 20-step
        // projected ascent at the same budget
        for (std::size_t steps : {std::size_t(1), std::size_t(10), std::size_t(20)}) {
            NamedAttack named;
            named.cfg.epsilon = plan.attack.epsilon;
            named.cfg.steps = steps;
            named.cfg.loss = plan.loss;
            named.name = steps == 1 ? "fgsm" : "pgd" + std::to_string(steps);
            cfg.eval.attacks.push_back(std::move(named));
        }
    }
    {
        std::set<std::string> seen;
        for (const NamedAttack& a : cfg.eval.attacks)
            if (!seen.insert(a.name).second)
                throw ConfigError("duplicate eval attack name '" + a.name + "'");
    }

    // output --------------------------------------------------------------------
    const json out_j = doc.contains("output") ? doc["output"] : json::object();
    check_keys(out_j, "output", {"dir", "formats", "timing"});
    cfg.output.dir = get_str(out_j, "output", "dir", "out");
    cfg.output.timing = get_bool(out_j, "output", "timing", false);
    if (out_j.contains("formats")) {
        if (!out_j["formats"].is_array())
            throw ConfigError("'output.formats' must be an array");
        cfg.output.csv = cfg.output.jsonl = false;
        for (const auto& f : out_j["formats"]) {
            if (!f.is_string()) throw ConfigError("'output.formats' entries must be strings");
            const std::string s = f.get<std::string>();
            if (s == "csv")
                cfg.output.csv = true;
            else if (s == "jsonl" || s == "json-lines")
                cfg.output.jsonl = true;
            else
                throw ConfigError("'output.formats' entry must be 'csv' or 'jsonl', got '" + s +
                                  "'");
        }
        if (!cfg.output.csv && !cfg.output.jsonl)
            throw ConfigError("'output.formats' must name at least one format");
    }

    // sweep ----------------------------------------------------------------------
    if (doc.contains("sweep")) {
        const json sweep_j = doc["sweep"];
        check_keys(sweep_j, "sweep", {"widths"});
        if (!sweep_j.contains("widths") || !sweep_j["widths"].is_array())
            throw ConfigError("'sweep.widths' must be an array of positive integers");
        for (const auto& w : sweep_j["widths"]) {
            if (!w.is_number_integer() || w.get<std::int64_t>() < 1)
                throw ConfigError("'sweep.widths' entries must be positive integers");
            cfg.sweep_widths.push_back(w.get<std::size_t>());
        }
        if (cfg.sweep_widths.empty())
            throw ConfigError("'sweep.widths' must not be empty");
    }

    validate_plan(plan);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return validate_config(doc);
}

} // namespace decentbva
