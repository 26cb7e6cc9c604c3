// pesentry - static PE malware/ransomware detection toolkit
// Second-order gradient-boosted decision trees with exact greedy splits.
//
// Binary problems fit one logit tree per round (logistic loss); multiclass
// problems fit one tree per class per round against the softmax cross-entropy.
// Leaf weight is -sum(g) / (sum(h) + lambda) times the learning rate, and a
// split maximizes
//   GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda).
// Samples with x < threshold go left.

#pragma once

#include "pesentry/training.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pesentry {

struct GbdtConfig {
    int num_rounds = 200;
    double learning_rate = 0.1;
    int max_depth = 6;
    int min_samples_leaf = 20;
    double lambda_l2 = 1.0;
    double feature_subsample = 1.0;
    int num_classes = 2;
    std::uint64_t seed = 0;
    /// Stop after this many rounds without validation-loss improvement; 0 disables.
    int patience = 0;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
    bool operator==(const GbdtConfig&) const = default;

    static GbdtConfig xgboost_like(int num_classes, std::uint64_t seed = 0);
    static GbdtConfig lightgbm_like(int num_classes, std::uint64_t seed = 0);
};

struct TreeNode {
    int feature = -1; ///< -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

struct RegressionTree {
    std::vector<TreeNode> nodes; ///< nodes[0] is the root

    double predict(std::span<const double> x) const;
    int depth() const;
    bool operator==(const RegressionTree&) const = default;
};

struct GbdtModel {
    /// trees[round][k]: one tree per round for binary, num_classes per round otherwise.
    std::vector<std::vector<RegressionTree>> trees;
    std::vector<double> base_score;
    GbdtConfig config;
    std::vector<std::string> label_schema;
    std::size_t input_width = 0;

    /// Raw additive scores, one per tree slot.
    std::vector<double> margins(std::span<const double> x) const;
    bool operator==(const GbdtModel&) const = default;
};

struct SplitCandidate {
    double threshold = 0.0;
    double gain = 0.0;
};

/// Exact greedy search over one feature column. Returns nullopt (no split) when
/// the column has fewer than 2*min_samples_leaf rows, is constant, or no
/// admissible split has positive gain. Ties go to the smallest threshold.
std::optional<SplitCandidate> find_best_split(std::span<const double> gradients,
                                              std::span<const double> hessians,
                                              std::span<const double> column, const GbdtConfig& config);

enum class SplitSearch {
    /// Presorted columns, one pass per tree level, OpenMP over features.
    presorted_parallel,
    /// Per-node find_best_split over every feature; serial reference.
    per_node_serial,
};

struct GbdtTrainResult {
    GbdtModel model;
    TrainLog log;
};

/// Throws DegenerateLabels when any class in [0, num_classes) has no sample,
/// ShapeMismatch when labels and rows disagree.
GbdtTrainResult gbdt_train(const Matrix& features, std::span<const int> labels, const GbdtConfig& config,
                           const LabeledData* validation = nullptr,
                           SplitSearch search = SplitSearch::presorted_parallel);

/// Rows are class probabilities in label order. Throws ShapeMismatch on width mismatch.
Matrix gbdt_predict_proba(const GbdtModel& model, const Matrix& features);

/// Mean logistic (binary) or softmax cross-entropy loss of the model's margins.
double gbdt_loss(const GbdtModel& model, const Matrix& features, std::span<const int> labels);

} // namespace pesentry
