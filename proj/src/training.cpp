// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/training.hpp"

#include "pesentry/error.hpp"

#include <string>

namespace pesentry {

void validate_training_set(const Matrix& features, std::span<const int> labels, int num_classes) {
    if (labels.size() != features.rows) {
        throw ShapeMismatch("labels (" + std::to_string(labels.size()) + ") and feature rows (" +
                            std::to_string(features.rows) + ") disagree");
    }
    if (features.rows < 2) throw ShapeMismatch("need at least 2 training rows");
    if (features.cols < 1) throw ShapeMismatch("need at least 1 feature column");
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ShapeMismatch("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) throw DegenerateLabels("class " + std::to_string(c) + " has no samples");
    }
}

} // namespace pesentry
