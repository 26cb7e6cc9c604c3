// pesentry - static PE malware/ransomware detection toolkit
// Metrics, reports and experiment runs.
//
// Run directory layout:
//   spec.json      dataset spec, model settings, cache digest
//   splits.json    sha256 lists per split
//   <model dirs>   bundle(s): "model/" for single tasks, "bilayer/" + "benchmark/" for bilayer_eval
//   report.json    {"reports": {name: report, ...}}
//   report.txt     rendered tables
//   confusion.csv  report,true,<predicted classes...>

#pragma once

#include "pesentry/corpus.hpp"
#include "pesentry/model.hpp"
#include "pesentry/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pesentry {

struct ConfusionMatrix {
    std::vector<std::string> class_names;
    std::vector<std::vector<std::uint64_t>> counts; ///< [true][predicted]

    std::uint64_t total() const;
    bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
    bool operator==(const ClassMetrics&) const = default;
};

struct EvalReport {
    double accuracy = 0.0;
    double f1_macro = 0.0;
    std::vector<ClassMetrics> per_class;
    std::optional<std::string> positive_class;
    std::optional<double> fnr;            ///< FN / (FN + TP) for the positive class
    std::optional<std::uint64_t> missed;  ///< FN count for the positive class
    ConfusionMatrix confusion;
    nlohmann::json metadata = nlohmann::json::object();

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    bool operator==(const EvalReport&) const = default;
};

/// Labels are indices into class_names. Throws LengthMismatch for unequal or
/// empty inputs, UnknownPositiveClass when the positive class is not a class
/// name, std::out_of_range for a label outside the schema.
EvalReport compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                           const std::vector<std::string>& class_names,
                           std::optional<std::string> positive_class = std::nullopt);

struct RenderedReport {
    std::string text;
    nlohmann::json document;
};

RenderedReport render_report(const EvalReport& report, std::string_view title = {});
/// Side-by-side accuracy/F1 table for named reports over the same split.
std::string render_comparison(const std::vector<std::pair<std::string, EvalReport>>& reports);
/// One header row, then one row per (report, true class). Throws SchemaMismatch if the class lists differ.
std::string confusion_csv(const std::vector<std::pair<std::string, EvalReport>>& reports);

/// Index of the largest value, ties to the earliest.
int argmax(std::span<const double> row);
std::vector<int> predict_labels(const TrainedModel& model, const Matrix& features);

LabeledData to_labeled(const DataSplit& split);
ThreeWayData to_three_way(const DataSplit& split);

/// Positive class for the binary tasks ("malicious", "ransomware"); nullopt otherwise.
std::optional<std::string> task_positive_class(Task task);

EvalReport evaluate_model(const TrainedModel& model, const DataSplit& split,
                          const std::vector<std::string>& class_names, std::optional<std::string> positive);
EvalReport evaluate_bilayer(const BiLayeredModel& model, const DataSplit& split, PredictProbe* probe = nullptr);
EvalReport evaluate_benchmark(const BenchmarkModel& model, const DataSplit& split);

std::string spec_digest(const DatasetSpec& spec);
nlohmann::json split_digests(const Dataset& ds);

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSettings settings;
    double threshold1 = 0.5;
    double threshold2 = 0.5;
    /// Monitor validation loss during training (used for early stopping when the config has patience).
    bool use_validation = true;
};

struct ExperimentResult {
    Dataset dataset;
    std::vector<std::pair<std::string, EvalReport>> reports;
};

/// Builds the dataset, trains on train (validation monitored), reports on test
/// only, and writes the run directory.
ExperimentResult run_experiment(const Manifest& manifest, const FeatureCache& cache, const ExperimentConfig& config,
                                const std::filesystem::path& run_dir);

/// Writes report.json, report.txt and confusion.csv into `dir`.
void write_reports(const std::vector<std::pair<std::string, EvalReport>>& reports, const std::filesystem::path& dir);

} // namespace pesentry
