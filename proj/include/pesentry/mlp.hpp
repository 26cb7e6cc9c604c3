// pesentry - static PE malware/ransomware detection toolkit
// Dense ReLU network with a softmax head, trained with Adam.

#pragma once

#include "pesentry/training.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pesentry {

struct MlpConfig {
    std::vector<std::size_t> hidden_layers{512, 128};
    std::string activation = "relu";
    double learning_rate = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t batch_size = 128;
    int epochs = 30;
    int num_classes = 2;
    std::uint64_t seed = 0;
    /// Stop after this many epochs without validation-loss improvement; 0 disables.
    int patience = 0;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
    /// Full layer widths: input, hidden..., classes.
    std::vector<std::size_t> layer_sizes(std::size_t input_width) const;
    bool operator==(const MlpConfig&) const = default;
};

/// Per-feature affine standardization fitted on training data.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev; ///< zero-variance features get 1

    static Standardizer fit(const Matrix& features);
    static Standardizer identity(std::size_t width);
    Matrix apply(const Matrix& features) const;
    bool operator==(const Standardizer&) const = default;
};

struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights; ///< outputs x inputs, row-major
    std::vector<double> biases;  ///< outputs
    bool operator==(const DenseLayer&) const = default;
};

struct MlpModel {
    std::vector<DenseLayer> layers;
    Standardizer standardizer;
    MlpConfig config;
    std::vector<std::string> label_schema;

    std::size_t input_width() const { return layers.empty() ? 0 : layers.front().inputs; }
    std::size_t num_outputs() const { return layers.empty() ? 0 : layers.back().outputs; }
    std::size_t parameter_count() const;
    bool operator==(const MlpModel&) const = default;
};

/// He-uniform weights, zero biases, identity standardizer.
MlpModel mlp_initialize(std::size_t input_width, const MlpConfig& config);

struct MlpGradients {
    std::vector<std::vector<double>> weights; ///< per layer, same layout as DenseLayer::weights
    std::vector<std::vector<double>> biases;
};

struct LossAndGradients {
    double loss = 0.0;
    MlpGradients gradients;
};

/// Mean softmax cross-entropy over the batch (probabilities clamped to
/// [1e-12, 1 - 1e-12]) and its analytic gradient for every weight and bias.
/// Features are standardized with the model's standardizer first.
LossAndGradients mlp_loss_and_gradients(const MlpModel& model, const Matrix& batch_features,
                                        std::span<const int> batch_labels);

struct MlpTrainResult {
    MlpModel model;
    TrainLog log;
};

/// Throws DegenerateLabels / ShapeMismatch like gbdt_train.
MlpTrainResult mlp_train(const Matrix& features, std::span<const int> labels, const MlpConfig& config,
                         const LabeledData* validation = nullptr);

/// Throws ShapeMismatch on width mismatch.
Matrix mlp_predict_proba(const MlpModel& model, const Matrix& features);

} // namespace pesentry
