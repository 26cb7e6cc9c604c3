// pesentry - static PE malware/ransomware detection toolkit
// Types shared by the tree and neural-network trainers.

#pragma once

#include "pesentry/matrix.hpp"

#include <span>
#include <vector>

namespace pesentry {

struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    bool operator==(const TrainLog&) const = default;
};

struct LabeledData {
    Matrix features;
    std::vector<int> labels;
};

/// Throws ShapeMismatch when labels and rows disagree, there are fewer than two
/// rows, or a label is outside [0, num_classes); DegenerateLabels when a class
/// has no sample.
void validate_training_set(const Matrix& features, std::span<const int> labels, int num_classes);

} // namespace pesentry
