// pesentry - static PE malware/ransomware detection toolkit
// Two detection topologies sharing one three-way verdict:
//
//   bi-layered:  stage 1 (benign vs malicious) gates stage 2 (other malware vs
//                ransomware); stage 2 only runs when P(malicious) >= threshold1.
//   benchmark:   one flat 3-class model over {benign, malware_other, ransomware}.
//
// Bundle document (bundle.json, format "pesentry-bundle", version 1):
//   { "format": "pesentry-bundle", "version": 1,
//     "kind": "bilayer" | "benchmark" | "single",
//     "feature_width": D, "feature_schema_version": 1,
//     "thresholds": {"stage1": 0.5, "stage2": 0.5},          (bilayer only)
//     "models": [ {"role": "stage1", "path": "stage1.model.json", "sha256": "<hex>"}, ... ],
//     "metadata": { ... free-form, e.g. task and dataset spec ... } }
// Model paths are relative to the bundle directory.

#pragma once

#include "pesentry/features.hpp"
#include "pesentry/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pesentry {

enum class VerdictLabel { benign = 0, malware_other = 1, ransomware = 2 };

inline const std::vector<std::string>& verdict_schema() {
    static const std::vector<std::string> schema{"benign", "malware_other", "ransomware"};
    return schema;
}
std::string_view to_string(VerdictLabel label);

struct Verdict {
    VerdictLabel label = VerdictLabel::benign;
    double malware_score = 0.0;
    /// 0 whenever stage 2 did not run.
    double ransomware_score = 0.0;
    bool operator==(const Verdict&) const = default;
};

/// Counts model evaluations (rows) per stage.
struct PredictProbe {
    std::size_t stage1_rows = 0;
    std::size_t stage2_rows = 0;
};

struct BiLayeredModel {
    TrainedModel stage1; ///< labels {benign, malicious}
    TrainedModel stage2; ///< labels {malware_other, ransomware}
    double threshold1 = 0.5;
    double threshold2 = 0.5;

    /// Throws SchemaMismatch when the stages disagree on feature width/schema.
    void validate() const;
    std::size_t input_width() const { return stage1.input_width; }
};

struct BenchmarkModel {
    TrainedModel model; ///< labels exactly verdict_schema()

    void validate() const;
    std::size_t input_width() const { return model.input_width; }
};

/// Throws SchemaMismatch if the row width differs from the model input width.
Verdict bilayer_predict(const BiLayeredModel& m, std::span<const double> features, PredictProbe* probe = nullptr);
inline Verdict bilayer_predict(const BiLayeredModel& m, const FeatureVector& fv, PredictProbe* probe = nullptr) {
    return bilayer_predict(m, fv.values, probe);
}
std::vector<Verdict> bilayer_predict_batch(const BiLayeredModel& m, const Matrix& features,
                                           PredictProbe* probe = nullptr);

Verdict benchmark_predict(const BenchmarkModel& m, std::span<const double> features);
inline Verdict benchmark_predict(const BenchmarkModel& m, const FeatureVector& fv) {
    return benchmark_predict(m, fv.values);
}
std::vector<Verdict> benchmark_predict_batch(const BenchmarkModel& m, const Matrix& features);
/// Argmax over a probability row in verdict order, ties to the earlier class.
Verdict verdict_from_probabilities(std::span<const double> probs);

/// Labeled feature set in the three-way label space (indices into verdict_schema()).
struct ThreeWayData {
    Matrix features;
    std::vector<int> labels;
};

struct BilayerTrainOptions {
    ModelSettings settings;
    double threshold1 = 0.5;
    double threshold2 = 0.5;
    /// Use these instead of training the corresponding stage.
    std::optional<TrainedModel> stage1_pretrained;
    std::optional<TrainedModel> stage2_pretrained;
    const ThreeWayData* validation = nullptr;
};

struct BilayerTrainResult {
    BiLayeredModel model;
    TrainLog stage1_log;
    TrainLog stage2_log;
};

/// Stage 1 sees every row relabeled benign/malicious; stage 2 sees only the
/// malicious rows relabeled malware_other/ransomware. Throws DegenerateLabels
/// when a stage's label view lacks a class.
BilayerTrainResult train_bilayer(const ThreeWayData& data, const BilayerTrainOptions& options);

/// Throws DegenerateLabels unless all three classes are present.
ModelFitResult train_benchmark(const ThreeWayData& data, const ModelSettings& settings,
                               const ThreeWayData* validation = nullptr);

/// Stage-1 and stage-2 label views.
LabeledData stage1_view(const ThreeWayData& data);
LabeledData stage2_view(const ThreeWayData& data);

// --- bundles -------------------------------------------------------------

enum class BundleKind { bilayer, benchmark, single };
std::string_view to_string(BundleKind kind);

struct ModelRef {
    std::string role;
    std::string path; ///< relative to the bundle directory
    std::string sha256;
};

struct Bundle {
    BundleKind kind = BundleKind::single;
    std::size_t feature_width = 0;
    int feature_schema_version = kFeatureSchemaVersion;
    double threshold1 = 0.5;
    double threshold2 = 0.5;
    std::vector<ModelRef> models;
    nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::string_view kBundleFile = "bundle.json";

/// Writes <dir>/bundle.json plus one model file per role.
Bundle save_bilayer_bundle(const BiLayeredModel& m, const std::filesystem::path& dir,
                           nlohmann::json metadata = nlohmann::json::object());
Bundle save_benchmark_bundle(const BenchmarkModel& m, const std::filesystem::path& dir,
                             nlohmann::json metadata = nlohmann::json::object());
Bundle save_single_bundle(const TrainedModel& m, const std::filesystem::path& dir,
                          nlohmann::json metadata = nlohmann::json::object());

/// Rewrites only the stage-2 model file and the bundle manifest.
Bundle replace_stage2(const std::filesystem::path& dir, const TrainedModel& stage2);

/// Reads and validates bundle.json (not the model files). `dir_or_file` may be
/// the bundle directory or the bundle.json path.
Bundle read_bundle(const std::filesystem::path& dir_or_file);
std::filesystem::path bundle_dir(const std::filesystem::path& dir_or_file);

/// Loads the referenced model file after checking its digest; throws FormatError on mismatch.
TrainedModel load_bundle_model(const std::filesystem::path& dir, const Bundle& bundle, std::string_view role);
BiLayeredModel load_bilayer(const std::filesystem::path& dir_or_file);
BenchmarkModel load_benchmark(const std::filesystem::path& dir_or_file);

} // namespace pesentry
