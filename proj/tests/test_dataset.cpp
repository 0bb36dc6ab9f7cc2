#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <decentbva/dataset.hpp>

using namespace decentbva;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

struct TempIdx {
    std::string images;
    std::string labels;

    TempIdx(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
            std::uint32_t label_n, bool corrupt_magic = false) {
        const auto dir = std::filesystem::temp_directory_path();
        static int counter = 0;
        const std::string tag = "idx_test_" + std::to_string(counter++);
        images = (dir / (tag + "_img")).string();
        labels = (dir / (tag + "_lab")).string();
        {
            std::ofstream img(images, std::ios::binary);
            put_be32(img, corrupt_magic ? 0xdeadbeefu : 0x00000803u);
            put_be32(img, n);
            put_be32(img, rows);
            put_be32(img, cols);
            for (std::uint32_t i = 0; i < n * rows * cols; ++i) {
                unsigned char px = static_cast<unsigned char>(i % 256);
                img.write(reinterpret_cast<char*>(&px), 1);
            }
        }
        {
            std::ofstream lab(labels, std::ios::binary);
            put_be32(lab, 0x00000801u);
            put_be32(lab, label_n);
            for (std::uint32_t i = 0; i < label_n; ++i) {
                unsigned char y = static_cast<unsigned char>(i % 3);
                lab.write(reinterpret_cast<char*>(&y), 1);
            }
        }
    }

    ~TempIdx() {
        std::remove(images.c_str());
        std::remove(labels.c_str());
    }
};

} // namespace

TEST_CASE("idx loader round-trips counts, shape and scaling") {
    TempIdx files(4, 16, 16, 4);
    LabeledSet set = load_idx(files.images, files.labels, 3);
    REQUIRE(set.size() == 4);
    REQUIRE(set.features[0].shape == std::vector<std::size_t>{1, 16, 16});
    // pixel bytes are i % 256 in write order; byte 255 must land at 1.0
    REQUIRE(set.features[0][0] == 0.0);
    REQUIRE(set.features[0][1] == Catch::Approx(1.0 / 255.0));
    bool found_one = false;
    for (const Tensor& t : set.features)
        for (double v : t.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            found_one = found_one || v == 1.0;
        }
    REQUIRE(found_one); // byte 255 appears within the first image
    REQUIRE(set.labels == std::vector<std::size_t>{0, 1, 2, 0});
}

TEST_CASE("idx loader rejects bad magic") {
    TempIdx files(2, 2, 2, 2, true);
    REQUIRE_THROWS_AS(load_idx(files.images, files.labels, 3), ParseError);
}

TEST_CASE("idx loader rejects count mismatch") {
    TempIdx files(3, 2, 2, 2);
    REQUIRE_THROWS_AS(load_idx(files.images, files.labels, 3), ParseError);
}

TEST_CASE("idx loader rejects truncated pixel data") {
    TempIdx files(2, 2, 2, 2);
    // chop the image file short
    std::filesystem::resize_file(files.images, 16 + 5);
    REQUIRE_THROWS_AS(load_idx(files.images, files.labels, 3), ParseError);
}

TEST_CASE("csv loader parses label-first rows") {
    const auto path =
        (std::filesystem::temp_directory_path() / "csv_test_rows.csv").string();
    {
        std::ofstream out(path);
        out << "0,0.1,0.2\n1,0.5,0.6\n2,0.9,1.0\n";
    }
    LabeledSet set = load_csv(path, 3);
    std::remove(path.c_str());
    REQUIRE(set.size() == 3);
    REQUIRE(set.features[0].shape == std::vector<std::size_t>{2});
    REQUIRE(set.features[1][1] == Catch::Approx(0.6));
    REQUIRE(set.labels == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("csv loader rejects bad cells, bad labels and ragged rows") {
    const auto dir = std::filesystem::temp_directory_path();
    auto write = [&](const char* name, const char* content) {
        const auto path = (dir / name).string();
        std::ofstream out(path);
        out << content;
        return path;
    };
    auto p1 = write("csv_bad_cell.csv", "0,0.1,abc\n");
    REQUIRE_THROWS_AS(load_csv(p1, 2), ParseError);
    auto p2 = write("csv_bad_label.csv", "5,0.1,0.2\n");
    REQUIRE_THROWS_AS(load_csv(p2, 3), ParseError);
    auto p3 = write("csv_ragged.csv", "0,0.1,0.2\n1,0.3\n");
    REQUIRE_THROWS_AS(load_csv(p3, 2), ParseError);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("synthetic blobs: balance, determinism, range") {
    LabeledSet a = synth_blobs(40, 2, 4, 0.05, 7);
    LabeledSet b = synth_blobs(40, 2, 4, 0.05, 7);
    LabeledSet c = synth_blobs(40, 2, 4, 0.05, 8);
    REQUIRE(a.size() == 40);
    auto hist = class_histogram(a);
    for (std::size_t count : hist) REQUIRE(count == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.features[i].data == b.features[i].data);
        for (double v : a.features[i].data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i)
        differs = a.features[i].data != c.features[i].data;
    REQUIRE(differs);
}

TEST_CASE("zero-spread blobs sit exactly on their class centers") {
    LabeledSet set = synth_blobs(8, 2, 4, 0.0, 3);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::size_t cls = set.labels[i];
        REQUIRE(set.features[i][0] == Catch::Approx(0.25 + 0.5 * double(cls & 1)));
        REQUIRE(set.features[i][1] == Catch::Approx(0.25 + 0.5 * double((cls >> 1) & 1)));
    }
}

TEST_CASE("blobs reject more classes than corners") {
    REQUIRE_THROWS_AS(synth_blobs(10, 2, 5, 0.1, 1), ConfigError);
}

TEST_CASE("iid partition: sizes, disjointness, coverage") {
    LabeledSet set = synth_blobs(103, 2, 4, 0.1, 11);
    PartitionSpec spec;
    spec.client_count = 4;
    spec.server_count = 3;
    spec.scheme = PartitionScheme::iid;
    spec.seed = 5;
    Partition parts = partition(set, spec);
    REQUIRE(parts.server.size() == 3);
    REQUIRE(parts.clients.size() == 4);
    // 100 remaining over 4 clients
    for (const LabeledSet& c : parts.clients) REQUIRE(c.size() == 25);

    // coverage as a multiset of feature vectors
    std::multiset<std::vector<double>> original, recovered;
    for (const Tensor& t : set.features) original.insert(t.data);
    for (const Tensor& t : parts.server.features) recovered.insert(t.data);
    for (const LabeledSet& c : parts.clients)
        for (const Tensor& t : c.features) recovered.insert(t.data);
    REQUIRE(original == recovered);
}

TEST_CASE("iid remainder goes to the lowest-indexed clients") {
    LabeledSet set = synth_blobs(10, 2, 2, 0.1, 13);
    PartitionSpec spec;
    spec.client_count = 3;
    spec.server_count = 0;
    Partition parts = partition(set, spec);
    REQUIRE(parts.clients[0].size() == 4);
    REQUIRE(parts.clients[1].size() == 3);
    REQUIRE(parts.clients[2].size() == 3);
}

TEST_CASE("non-iid partition bounds distinct labels per client") {
    // 10 classes x 40 examples, aligned so every shard is label-pure
    LabeledSet set = synth_blobs(400, 4, 10, 0.05, 17);
    PartitionSpec spec;
    spec.client_count = 100;
    spec.server_count = 0;
    spec.scheme = PartitionScheme::noniid;
    spec.shards_per_client = 2;
    spec.seed = 23;
    Partition parts = partition(set, spec);
    REQUIRE(parts.clients.size() == 100);
    for (const LabeledSet& client : parts.clients) {
        REQUIRE(client.size() == 4);
        std::set<std::size_t> labels(client.labels.begin(), client.labels.end());
        REQUIRE(labels.size() <= 2);
    }
}

TEST_CASE("partitions are deterministic per seed") {
    LabeledSet set = synth_blobs(60, 2, 4, 0.1, 19);
    PartitionSpec spec;
    spec.client_count = 5;
    spec.server_count = 10;
    spec.seed = 77;
    Partition a = partition(set, spec);
    Partition b = partition(set, spec);
    for (std::size_t k = 0; k < 5; ++k) {
        REQUIRE(a.clients[k].labels == b.clients[k].labels);
        for (std::size_t i = 0; i < a.clients[k].size(); ++i)
            REQUIRE(a.clients[k].features[i].data == b.clients[k].features[i].data);
    }
}

TEST_CASE("partition validation errors") {
    LabeledSet set = synth_blobs(10, 2, 2, 0.1, 29);
    PartitionSpec spec;
    spec.client_count = 0;
    REQUIRE_THROWS_AS(partition(set, spec), ConfigError);
    spec.client_count = 11;
    spec.server_count = 0;
    REQUIRE_THROWS_AS(partition(set, spec), ConfigError);
    spec.client_count = 2;
    spec.server_count = 10;
    REQUIRE_THROWS_AS(partition(set, spec), ConfigError);
    spec.server_count = 0;
    spec.scheme = PartitionScheme::noniid;
    spec.shards_per_client = 6; // 12 shards > 10 examples
    REQUIRE_THROWS_AS(partition(set, spec), ConfigError);
}

TEST_CASE("reshape_features changes shape only") {
    LabeledSet set = synth_blobs(4, 4, 2, 0.1, 31);
    LabeledSet reshaped = reshape_features(set, {2, 2});
    REQUIRE(reshaped.features[0].shape == std::vector<std::size_t>{2, 2});
    REQUIRE(reshaped.features[0].data == set.features[0].data);
    REQUIRE_THROWS_AS(reshape_features(set, {3}), ShapeError);
}

TEST_CASE("labeled set validation catches inconsistencies") {
    LabeledSet set = synth_blobs(4, 2, 2, 0.1, 37);
    set.labels[2] = 9;
    REQUIRE_THROWS_AS(validate_set(set), ShapeError);
    set.labels[2] = 1;
    set.labels.pop_back();
    REQUIRE_THROWS_AS(validate_set(set), ShapeError);
}
