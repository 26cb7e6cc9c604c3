// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/mlp.hpp"

#include "pesentry/error.hpp"
#include "pesentry/kernels.hpp"
#include "pesentry/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pesentry {

namespace {

constexpr double kProbClamp = 1e-12;

/// Activations of one forward pass; pre[l] and act[l] are batch x layer-width.
struct ForwardPass {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> act; ///< act[0] is the standardized input
};

ForwardPass forward(const MlpModel& model, const Matrix& standardized) {
    const std::size_t batch = standardized.rows;
    ForwardPass fp;
    fp.act.push_back(standardized.data);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        std::vector<double> z(batch * layer.outputs);
        kernels::matmul_abt(fp.act.back(), layer.weights, z, batch, layer.inputs, layer.outputs);
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t j = 0; j < layer.outputs; ++j) z[i * layer.outputs + j] += layer.biases[j];
        }
        std::vector<double> a(z.size());
        if (l + 1 < model.layers.size()) {
            std::transform(z.begin(), z.end(), a.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
        } else {
            for (std::size_t i = 0; i < batch; ++i) {
                const double* zi = z.data() + i * layer.outputs;
                double* ai = a.data() + i * layer.outputs;
                const double mx = *std::max_element(zi, zi + layer.outputs);
                double sum = 0.0;
                for (std::size_t j = 0; j < layer.outputs; ++j) sum += (ai[j] = std::exp(zi[j] - mx));
                for (std::size_t j = 0; j < layer.outputs; ++j) ai[j] /= sum;
            }
        }
        fp.pre.push_back(std::move(z));
        fp.act.push_back(std::move(a));
    }
    return fp;
}

double cross_entropy(const std::vector<double>& probs, std::span<const int> labels, std::size_t classes) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::clamp(probs[i * classes + static_cast<std::size_t>(labels[i])], kProbClamp,
                                    1.0 - kProbClamp);
        total -= std::log(p);
    }
    return total / static_cast<double>(labels.size());
}

LossAndGradients backward(const MlpModel& model, const ForwardPass& fp, std::span<const int> labels) {
    const std::size_t batch = labels.size();
    const std::size_t nlayers = model.layers.size();
    const std::size_t classes = model.num_outputs();
    LossAndGradients out;
    out.loss = cross_entropy(fp.act.back(), labels, classes);
    out.gradients.weights.resize(nlayers);
    out.gradients.biases.resize(nlayers);

    // dL/dz of the softmax head for mean cross-entropy.
    std::vector<double> delta = fp.act.back();
    for (std::size_t i = 0; i < batch; ++i) delta[i * classes + static_cast<std::size_t>(labels[i])] -= 1.0;
    for (double& d : delta) d /= static_cast<double>(batch);

    for (std::size_t l = nlayers; l-- > 0;) {
        const auto& layer = model.layers[l];
        auto& gw = out.gradients.weights[l];
        auto& gb = out.gradients.biases[l];
        gw.assign(layer.outputs * layer.inputs, 0.0);
        gb.assign(layer.outputs, 0.0);
        kernels::matmul_atb(delta, fp.act[l], gw, layer.outputs, batch, layer.inputs);
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t j = 0; j < layer.outputs; ++j) gb[j] += delta[i * layer.outputs + j];
        }
        if (l == 0) break;
        std::vector<double> prev(batch * layer.inputs);
        kernels::matmul_ab(delta, layer.weights, prev, batch, layer.outputs, layer.inputs);
        const auto& z = fp.pre[l - 1];
        for (std::size_t k = 0; k < prev.size(); ++k) {
            if (z[k] <= 0.0) prev[k] = 0.0;
        }
        delta = std::move(prev);
    }
    return out;
}

void check_width(const MlpModel& model, const Matrix& features) {
    if (features.cols != model.input_width()) {
        throw ShapeMismatch("model expects width " + std::to_string(model.input_width()) + ", got " +
                            std::to_string(features.cols));
    }
}

/// Adam moment buffers for one parameter array.
struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamSlot(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad, const MlpConfig& c,
              double correction1, double correction2) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * grad[i];
            v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.adam_epsilon);
        }
    }
};

} // namespace

void MlpConfig::validate() const {
    if (hidden_layers.empty()) throw std::invalid_argument("need at least one hidden layer");
    for (auto w : hidden_layers) {
        if (w == 0) throw std::invalid_argument("hidden layer width must be positive");
    }
    if (activation != "relu") throw std::invalid_argument("unsupported activation: " + activation);
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
    if (patience < 0) throw std::invalid_argument("patience must be non-negative");
}

std::vector<std::size_t> MlpConfig::layer_sizes(std::size_t input_width) const {
    std::vector<std::size_t> sizes{input_width};
    sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
    sizes.push_back(static_cast<std::size_t>(num_classes));
    return sizes;
}

Standardizer Standardizer::fit(const Matrix& features) {
    Standardizer s;
    s.mean.assign(features.cols, 0.0);
    s.stddev.assign(features.cols, 0.0);
    if (features.rows == 0) {
        s.stddev.assign(features.cols, 1.0);
        return s;
    }
    const double n = static_cast<double>(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        for (std::size_t f = 0; f < features.cols; ++f) s.mean[f] += features(i, f);
    }
    for (double& m : s.mean) m /= n;
    for (std::size_t i = 0; i < features.rows; ++i) {
        for (std::size_t f = 0; f < features.cols; ++f) {
            const double d = features(i, f) - s.mean[f];
            s.stddev[f] += d * d;
        }
    }
    for (double& sd : s.stddev) {
        sd = std::sqrt(sd / n);
        if (!(sd > 0.0)) sd = 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(std::size_t width) {
    return Standardizer{std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)};
}

Matrix Standardizer::apply(const Matrix& features) const {
    if (features.cols != mean.size()) throw ShapeMismatch("standardizer width mismatch");
    Matrix out(features.rows, features.cols);
    for (std::size_t i = 0; i < features.rows; ++i) {
        for (std::size_t f = 0; f < features.cols; ++f) {
            out(i, f) = (features(i, f) - mean[f]) / stddev[f];
        }
    }
    return out;
}

std::size_t MlpModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
}

MlpModel mlp_initialize(std::size_t input_width, const MlpConfig& config) {
    config.validate();
    if (input_width == 0) throw ShapeMismatch("input width must be positive");
    MlpModel model;
    model.config = config;
    model.standardizer = Standardizer::identity(input_width);
    Rng rng(config.seed);
    const auto sizes = config.layer_sizes(input_width);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        DenseLayer layer;
        layer.inputs = sizes[l];
        layer.outputs = sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs));
        layer.weights.resize(layer.inputs * layer.outputs);
        for (double& w : layer.weights) w = (2.0 * uniform_real(rng) - 1.0) * limit;
        layer.biases.assign(layer.outputs, 0.0);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

LossAndGradients mlp_loss_and_gradients(const MlpModel& model, const Matrix& batch_features,
                                        std::span<const int> batch_labels) {
    check_width(model, batch_features);
    if (batch_features.rows == 0) throw ShapeMismatch("batch must be non-empty");
    if (batch_labels.size() != batch_features.rows) throw ShapeMismatch("labels and rows disagree");
    for (int y : batch_labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= model.num_outputs()) {
            throw ShapeMismatch("label outside model outputs");
        }
    }
    const auto fp = forward(model, model.standardizer.apply(batch_features));
    return backward(model, fp, batch_labels);
}

MlpTrainResult mlp_train(const Matrix& features, std::span<const int> labels, const MlpConfig& config,
                         const LabeledData* validation) {
    config.validate();
    validate_training_set(features, labels, config.num_classes);
    if (validation && validation->features.cols != features.cols) {
        throw ShapeMismatch("validation width differs from training width");
    }

    MlpTrainResult result;
    MlpModel& model = result.model;
    model = mlp_initialize(features.cols, config);
    model.standardizer = Standardizer::fit(features);
    const Matrix x = model.standardizer.apply(features);
    const Matrix val_x = validation ? model.standardizer.apply(validation->features) : Matrix{};

    std::vector<AdamSlot> w_slots, b_slots;
    for (const auto& layer : model.layers) {
        w_slots.emplace_back(layer.weights.size());
        b_slots.emplace_back(layer.biases.size());
    }

    // Parameter init consumed the first draws of this stream in mlp_initialize;
    // shuffling uses a stream derived from the same seed.
    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(features.rows);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::uint64_t step = 0;
    double best_val = INFINITY;
    int since_best = 0;
    MlpModel best_model;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_in_place(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix bx = take_rows(x, idx);
            std::vector<int> by(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) by[i] = labels[idx[i]];

            const auto lg = backward(model, forward(model, bx), by);
            epoch_loss += lg.loss * static_cast<double>(idx.size());
            ++step;
            const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                w_slots[l].step(model.layers[l].weights, lg.gradients.weights[l], config, c1, c2);
                b_slots[l].step(model.layers[l].biases, lg.gradients.biases[l], config, c1, c2);
            }
        }
        result.log.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        if (validation && validation->features.rows > 0) {
            const auto fp = forward(model, val_x);
            const double vl = cross_entropy(fp.act.back(), validation->labels, model.num_outputs());
            result.log.validation_loss.push_back(vl);
            if (vl < best_val) {
                best_val = vl;
                since_best = 0;
                if (config.patience > 0) best_model = model;
            } else if (config.patience > 0 && ++since_best >= config.patience) {
                model = std::move(best_model);
                break;
            }
        }
    }
    return result;
}

Matrix mlp_predict_proba(const MlpModel& model, const Matrix& features) {
    check_width(model, features);
    Matrix out(features.rows, model.num_outputs());
    if (features.rows == 0) return out;
    auto fp = forward(model, model.standardizer.apply(features));
    out.data = std::move(fp.act.back());
    return out;
}

} // namespace pesentry
