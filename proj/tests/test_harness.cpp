#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <decentbva/decentbva.hpp>

#include "helpers.hpp"

using namespace decentbva;
using njson = nlohmann::json;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* tag) {
        path = std::filesystem::temp_directory_path() / tag;
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// small world: 40 train / 20 test examples, 4 clients, logistic-size models
njson micro_doc(const std::string& out_dir) {
    njson doc = njson::parse(R"({
        "dataset": {"classes": 2, "per_class": 20, "test_per_class": 10,
                     "dims": 2, "spread": 0.05, "server_count": 8},
        "model": {"hidden": [8]},
        "protocol": {"clients": 4, "fraction": 1.0, "rounds": 2,
                      "local_epochs": 1, "batch_size": 16, "lr": 0.1},
        "attack": {"epsilon": 0.1},
        "output": {}
    })");
    doc["output"]["dir"] = out_dir;
    return doc;
}

} // namespace

TEST_CASE("dataset building honours the experiment layout") {
    TempDir dir("harness_build_test");
    ExperimentConfig cfg = validate_config(micro_doc(dir.str()));
    BuiltData data = build_datasets(cfg);
    REQUIRE(data.test.size() == 20);
    REQUIRE(data.parts.server.size() == 8);
    REQUIRE(data.parts.clients.size() == 4);
    for (const LabeledSet& c : data.parts.clients) REQUIRE(c.size() == 8);

    BuiltData again = build_datasets(cfg);
    REQUIRE(again.parts.server.labels == data.parts.server.labels);
    REQUIRE(again.test.labels == data.test.labels);
}

TEST_CASE("evaluation scores clean and attacked accuracy per name") {
    // a model that always answers class 1, against a test set labelled 1
    ModelState oracle = testutil::constant_model(2, {0.2, 0.8});
    LabeledSet test;
    test.class_count = 2;
    for (int i = 0; i < 6; ++i) {
        Tensor x({2});
        x[0] = 0.3 + 0.05 * i;
        x[1] = 0.5;
        test.features.push_back(x);
        test.labels.push_back(1);
    }
    NamedAttack fg;
    fg.name = "fgsm";
    fg.cfg.epsilon = 0.25;

    EvalResult clean_only = evaluate(oracle, test, {});
    REQUIRE(clean_only.clean_acc == 1.0);
    REQUIRE(clean_only.robust_acc.empty());

    // constant output means no attack can flip the answer
    EvalResult attacked = evaluate(oracle, test, {fg});
    REQUIRE(attacked.robust_acc.size() == 1);
    REQUIRE(attacked.robust_acc[0].first == "fgsm");
    REQUIRE(attacked.robust_acc[0].second == 1.0);

    LabeledSet empty;
    empty.class_count = 2;
    REQUIRE_THROWS_AS(evaluate(oracle, empty, {fg}), Error);
}

TEST_CASE("evaluation is thread-count independent with stochastic attacks") {
    ModelState model = testutil::random_mlp(2, {8}, 2, 31);
    LabeledSet test = synth_blobs(24, 2, 2, 0.1, 33);
    NamedAttack stoch;
    stoch.name = "pgdr";
    stoch.cfg.epsilon = 0.1;
    stoch.cfg.steps = 3;
    stoch.cfg.random_start = true;
    NamedAttack fg;
    fg.name = "fgsm";
    fg.cfg.epsilon = 0.1;

    EvalResult one = evaluate(model, test, {fg, stoch}, 1, 77);
    EvalResult four = evaluate(model, test, {fg, stoch}, 4, 77);
    REQUIRE(one.clean_acc == four.clean_acc);
    REQUIRE(one.robust_acc == four.robust_acc);
}

TEST_CASE("a zero-round experiment still evaluates the initial model") {
    TempDir dir("harness_r0_test");
    njson doc = micro_doc(dir.str());
    doc["protocol"]["rounds"] = 0;
    RunResult run = run_experiment(validate_config(doc));
    REQUIRE(run.records.size() == 1);
    REQUIRE(run.records[0].round == 0);
    REQUIRE(run.records[0].mean_train_loss == 0.0);
    REQUIRE(std::filesystem::exists(dir.path / "checkpoint.bin"));
}

TEST_CASE("every mode completes a small experiment end to end") {
    for (const char* name :
         {"fedavg", "decent_baseline", "decent_bias", "decent_variance", "decent_bva",
          "fedavg_robust_local", "decent_bva_local"}) {
        TempDir dir((std::string("harness_mode_") + name).c_str());
        njson doc = micro_doc(dir.str());
        doc["protocol"]["mode"] = name;
        ExperimentConfig cfg = validate_config(doc);
        RunResult run = run_experiment(cfg);
        INFO(name);
        REQUIRE(run.records.size() == 3); // rounds 0, 1, 2
        for (const RoundRecord& rec : run.records) {
            REQUIRE(rec.clean_acc >= 0.0);
            REQUIRE(rec.clean_acc <= 1.0);
            for (const auto& [attack, acc] : rec.robust_acc) {
                REQUIRE(acc >= 0.0);
                REQUIRE(acc <= 1.0);
            }
        }
        REQUIRE(run.server.round == 2);

        Checkpoint ck = load_checkpoint(dir.str() + "/checkpoint.bin", cfg.arch);
        REQUIRE(ck.round == 2);
        for (std::size_t i = 0; i < ck.model.params.size(); ++i)
            REQUIRE(ck.model.params[i] ==
                    Catch::Approx(run.server.global.params[i]).margin(1e-6));
    }
}

TEST_CASE("evaluation cadence skips interior rounds but keeps the last") {
    TempDir dir("harness_cadence_test");
    njson doc = micro_doc(dir.str());
    doc["protocol"]["rounds"] = 5;
    doc["eval"] = njson::object();
    doc["eval"]["cadence"] = 2;
    RunResult run = run_experiment(validate_config(doc));
    std::vector<std::size_t> rounds;
    for (const RoundRecord& rec : run.records) rounds.push_back(rec.round);
    REQUIRE(rounds == std::vector<std::size_t>{0, 2, 4, 5});
}

TEST_CASE("identical experiments produce byte-identical metrics files") {
    TempDir dir_a("harness_repro_a");
    TempDir dir_b("harness_repro_b");
    njson doc_a = micro_doc(dir_a.str());
    doc_a["protocol"]["mode"] = "decent_bva";
    njson doc_b = micro_doc(dir_b.str());
    doc_b["protocol"]["mode"] = "decent_bva";
    run_experiment(validate_config(doc_a));
    run_experiment(validate_config(doc_b));
    const std::string csv_a = slurp(dir_a.str() + "/metrics.csv");
    REQUIRE(!csv_a.empty());
    REQUIRE(csv_a == slurp(dir_b.str() + "/metrics.csv"));
    REQUIRE(slurp(dir_a.str() + "/metrics.jsonl") == slurp(dir_b.str() + "/metrics.jsonl"));
}

TEST_CASE("the width sweep reports one decomposition row per width") {
    TempDir dir("harness_sweep_test");
    njson doc = micro_doc(dir.str());
    doc["sweep"] = njson::object();
    doc["sweep"]["widths"] = njson::array({2, 4});
    std::vector<SweepRow> rows = bv_sweep(validate_config(doc));
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].width == 2);
    REQUIRE(rows[1].width == 4);
    REQUIRE(rows[0].param_count < rows[1].param_count);
    for (const SweepRow& row : rows) {
        REQUIRE(std::isfinite(row.mean_bias));
        REQUIRE(row.mean_bias >= 0.0);
        REQUIRE(row.mean_variance >= 0.0);
    }
    const std::string table = slurp(dir.str() + "/sweep.csv");
    REQUIRE(table.find("width,param_count,mean_bias,mean_variance\n") == 0);
    REQUIRE(std::count(table.begin(), table.end(), '\n') == 3);
}

TEST_CASE("partition inspection summarises label spread per client") {
    TempDir dir("harness_inspect_test");
    njson doc = micro_doc(dir.str());
    doc["dataset"]["classes"] = 4;
    doc["dataset"]["per_class"] = 50;
    doc["dataset"]["server_count"] = 0;
    SECTION("iid spreads every label") {
        PartitionReport report = partition_inspect(validate_config(doc));
        REQUIRE(report.client_hists.size() == 4);
        std::size_t total = 0;
        for (const auto& hist : report.client_hists) {
            REQUIRE(hist.size() == 4);
            for (std::size_t c : hist) total += c;
        }
        REQUIRE(total == 200);
    }
    SECTION("shard partitioning confines labels") {
        doc["dataset"]["partition"] = njson::object();
        doc["dataset"]["partition"]["scheme"] = "noniid";
        doc["dataset"]["partition"]["shards_per_client"] = 2;
        PartitionReport report = partition_inspect(validate_config(doc));
        for (const auto& hist : report.client_hists) {
            std::size_t distinct = 0;
            for (std::size_t c : hist) distinct += c > 0;
            REQUIRE(distinct <= 2);
        }
    }
}
