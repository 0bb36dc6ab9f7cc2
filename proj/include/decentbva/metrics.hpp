#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "decentbva/error.hpp"

namespace decentbva {

struct RoundRecord {
    std::size_t round = 0;
    double clean_acc = 0.0;
    std::vector<std::pair<std::string, double>> robust_acc; // attack name -> accuracy
    double mean_train_loss = 0.0;
    double mean_bias = 0.0;
    double mean_variance = 0.0;
    double wall_ms = 0.0;
};

// Shortest round-trip decimal form; identical doubles always print
// identically, which is what makes metrics files byte-comparable.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("cannot format double");
    return std::string(buf, ptr);
}

enum class MetricsFormat { csv, json_lines };

// Streams records to disk as they arrive: a CSV and/or JSON-lines file that
// grow one row per record. Reopening an existing non-empty file appends
// without repeating the header.
class MetricsWriter {
  public:
    MetricsWriter(const std::string& dir, bool write_csv, bool write_jsonl,
                  std::vector<std::string> attack_names)
        : attack_names_(std::move(attack_names)) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw Error(dir + ": cannot create output directory: " + ec.message());
        if (write_csv) open(csv_, dir + "/metrics.csv", &need_header_);
        if (write_jsonl) {
            bool ignore = false;
            open(jsonl_, dir + "/metrics.jsonl", &ignore);
        }
    }

    void append(const RoundRecord& rec) {
        if (has_last_ && rec.round <= last_round_)
            throw Error("metrics: round " + std::to_string(rec.round) +
                        " not greater than previous " + std::to_string(last_round_));
        if (rec.robust_acc.size() != attack_names_.size())
            throw Error("metrics: record has " + std::to_string(rec.robust_acc.size()) +
                        " robust columns, writer expects " +
                        std::to_string(attack_names_.size()));
        for (std::size_t i = 0; i < attack_names_.size(); ++i)
            if (rec.robust_acc[i].first != attack_names_[i])
                throw Error("metrics: attack column '" + rec.robust_acc[i].first +
                            "' does not match header '" + attack_names_[i] + "'");
        last_round_ = rec.round;
        has_last_ = true;
        if (csv_.is_open()) write_csv_row(rec);
        if (jsonl_.is_open()) write_jsonl_row(rec);
    }

  private:
    static void open(std::ofstream& out, const std::string& path, bool* fresh) {
        namespace fs = std::filesystem;
        std::error_code ec;
        *fresh = !fs::exists(path, ec) || fs::file_size(path, ec) == 0;
        out.open(path, std::ios::app);
        if (!out) throw Error(path + ": cannot open for writing");
        out_path_check(out, path);
    }

    static void out_path_check(std::ofstream& out, const std::string& path) {
        if (!out.good()) throw Error(path + ": stream error");
    }

    void write_csv_row(const RoundRecord& rec) {
        if (need_header_) {
            csv_ << "round,clean_acc";
            for (const std::string& name : attack_names_) csv_ << ',' << name;
            csv_ << ",mean_train_loss,mean_bias,mean_variance,wall_ms\n";
            need_header_ = false;
        }
        csv_ << rec.round << ',' << format_double(rec.clean_acc);
        for (const auto& [name, acc] : rec.robust_acc) csv_ << ',' << format_double(acc);
        csv_ << ',' << format_double(rec.mean_train_loss) << ',' << format_double(rec.mean_bias)
             << ',' << format_double(rec.mean_variance) << ',' << format_double(rec.wall_ms)
             << '\n';
        csv_.flush();
        if (!csv_.good()) throw Error("metrics.csv: write failed");
    }

    void write_jsonl_row(const RoundRecord& rec) {
        jsonl_ << "{\"round\":" << rec.round << ",\"clean_acc\":" << format_double(rec.clean_acc);
        for (const auto& [name, acc] : rec.robust_acc)
            jsonl_ << ",\"" << name << "\":" << format_double(acc);
        jsonl_ << ",\"mean_train_loss\":" << format_double(rec.mean_train_loss)
               << ",\"mean_bias\":" << format_double(rec.mean_bias)
               << ",\"mean_variance\":" << format_double(rec.mean_variance)
               << ",\"wall_ms\":" << format_double(rec.wall_ms) << "}\n";
        jsonl_.flush();
        if (!jsonl_.good()) throw Error("metrics.jsonl: write failed");
    }

    std::vector<std::string> attack_names_;
    std::ofstream csv_;
    std::ofstream jsonl_;
    bool need_header_ = true;
    std::size_t last_round_ = 0;
    bool has_last_ = false;
};

inline void emit_metrics(const std::vector<RoundRecord>& records, MetricsFormat format,
                         const std::string& dir) {
    std::vector<std::string> names;
    if (!records.empty())
        for (const auto& [name, acc] : records.front().robust_acc) names.push_back(name);
    MetricsWriter writer(dir, format == MetricsFormat::csv, format == MetricsFormat::json_lines,
                         names);
    for (const RoundRecord& rec : records) writer.append(rec);
}

} // namespace decentbva
