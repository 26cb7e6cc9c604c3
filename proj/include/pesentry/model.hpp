// pesentry - static PE malware/ransomware detection toolkit
// Trained-model wrapper over the two learner families, with versioned JSON
// serialization.
//
// Model document (format "pesentry-model", version 1):
//   {
//     "format": "pesentry-model", "version": 1,
//     "family": "xgb-like" | "lgbm-like" | "mlp",
//     "feature_schema_version": 1, "input_width": D,
//     "label_schema": ["benign", "malicious"],
//     "gbdt": { "config": {...}, "base_score": [...],
//               "trees": [ [ [[feature, threshold, left, right, value], ...], ... ], ... ] }
//     -- or --
//     "mlp":  { "config": {...}, "layers": [ {"inputs": I, "outputs": O,
//               "weights": <base64 f64le>, "biases": <base64 f64le>}, ... ],
//               "standardizer": {"mean": <base64 f64le>, "stddev": <base64 f64le>} }
//   }
// trees[round][k] holds the node list of one tree, nodes[0] being the root and
// leaves carrying feature -1.

#pragma once

#include "pesentry/gbdt.hpp"
#include "pesentry/mlp.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pesentry {

enum class ModelFamily { gbdt_xgb_like, gbdt_lgbm_like, mlp };

std::string_view to_string(ModelFamily family);
/// Accepts "xgb-like", "lgbm-like", "mlp"; throws std::invalid_argument otherwise.
ModelFamily parse_model_family(std::string_view name);

struct TrainedModel {
    ModelFamily family = ModelFamily::gbdt_xgb_like;
    std::variant<GbdtModel, MlpModel> model;
    std::vector<std::string> label_schema;
    int feature_schema_version = 1;
    std::size_t input_width = 0;

    /// Throws ShapeMismatch on width mismatch.
    Matrix predict_proba(const Matrix& features) const;
    std::size_t num_classes() const { return label_schema.size(); }
    bool operator==(const TrainedModel&) const = default;
};

/// Hyperparameters for one model fit. Overrides replace the family preset
/// wholesale; num_classes and seed are always taken from the fit itself.
struct ModelSettings {
    ModelFamily family = ModelFamily::gbdt_xgb_like;
    std::uint64_t seed = 0;
    std::optional<GbdtConfig> gbdt;
    std::optional<MlpConfig> mlp;
};

struct ModelFitResult {
    TrainedModel model;
    TrainLog log;
};

ModelFitResult train_model(const Matrix& features, std::span<const int> labels,
                           const std::vector<std::string>& label_schema, const ModelSettings& settings,
                           const LabeledData* validation = nullptr);

nlohmann::json model_to_json(const TrainedModel& model);
/// Throws FormatError on a malformed or unsupported document.
TrainedModel model_from_json(const nlohmann::json& doc);

/// Canonical serialized text; byte-identical for equal models.
std::string serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::string_view text);

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

nlohmann::json train_log_to_json(const TrainLog& log);

} // namespace pesentry
