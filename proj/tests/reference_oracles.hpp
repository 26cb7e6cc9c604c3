// pesentry - static PE malware/ransomware detection toolkit
// Brute-force and finite-difference references used by the unit and acceptance tests.

#pragma once

#include "pesentry/gbdt.hpp"
#include "pesentry/mlp.hpp"
#include "pesentry/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

namespace oracle {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

/// Root split of a binary first-round tree found by trying every feature and
/// every midpoint between consecutive distinct values, summing each side
/// from scratch. Base score 0 gives g = 0.5 - y and h = 0.25 for every row.
inline Split brute_force_first_split(const pesentry::Matrix& x, const std::vector<int>& y, double lambda,
                                     std::size_t min_leaf) {
    const std::size_t n = x.rows;
    std::vector<double> g(n), h(n, 0.25);
    for (std::size_t i = 0; i < n; ++i) g[i] = 0.5 - y[i];
    double gt = 0, ht = 0;
    for (std::size_t i = 0; i < n; ++i) {
        gt += g[i];
        ht += h[i];
    }
    Split best;
    for (std::size_t f = 0; f < x.cols; ++f) {
        std::set<double> values;
        for (std::size_t i = 0; i < n; ++i) values.insert(x(i, f));
        std::vector<double> v(values.begin(), values.end());
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
            const double t = v[k] + (v[k + 1] - v[k]) / 2.0;
            double gl = 0, hl = 0, gr = 0, hr = 0;
            std::size_t nl = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (x(i, f) < t) {
                    gl += g[i];
                    hl += h[i];
                    ++nl;
                } else {
                    gr += g[i];
                    hr += h[i];
                }
            }
            if (nl < min_leaf || n - nl < min_leaf) continue;
            const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - gt * gt / (ht + lambda);
            if (gain > best.gain) best = {static_cast<int>(f), t, gain};
        }
    }
    return best;
}

/// Two Gaussian-ish blobs in 2-D, well separated; labels 0/1 alternate.
inline void blobs(std::size_t n, std::uint64_t seed, pesentry::Matrix& x, std::vector<int>& y) {
    pesentry::Rng rng(seed);
    x = pesentry::Matrix(n, 2);
    y.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double cx = label ? 3.0 : -3.0;
        const double cy = label ? 2.0 : -2.0;
        // sum of uniforms, roughly normal with unit spread
        auto noise = [&] {
            double s = 0;
            for (int k = 0; k < 4; ++k) s += pesentry::uniform_real(rng) - 0.5;
            return s;
        };
        x(i, 0) = cx + noise();
        x(i, 1) = cy + noise();
        y[i] = label;
    }
}

struct GradCheck {
    double max_relative_error = 0.0;
    std::size_t parameters = 0;
};

/// Central differences with step h on every weight and bias. Relative error is
/// |a - n| / max(|a|, |n|, floor) so parameters whose true gradient is ~0 are
/// judged on absolute error.
inline GradCheck finite_difference_check(const pesentry::MlpModel& model, const pesentry::Matrix& x,
                                         const std::vector<int>& y, double step = 1e-5, double floor = 1e-6) {
    const auto analytic = pesentry::mlp_loss_and_gradients(model, x, y).gradients;
    GradCheck out;
    pesentry::MlpModel probe = model;
    auto loss = [&] { return pesentry::mlp_loss_and_gradients(probe, x, y).loss; };
    auto visit = [&](double& param, double a) {
        const double saved = param;
        param = saved + step;
        const double up = loss();
        param = saved - step;
        const double down = loss();
        param = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        out.max_relative_error = std::max(out.max_relative_error, std::abs(a - numeric) / denom);
        ++out.parameters;
    };
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        for (std::size_t w = 0; w < probe.layers[l].weights.size(); ++w) visit(probe.layers[l].weights[w], analytic.weights[l][w]);
        for (std::size_t b = 0; b < probe.layers[l].biases.size(); ++b) visit(probe.layers[l].biases[b], analytic.biases[l][b]);
    }
    return out;
}

/// Small random network with random inputs, for the gradient check. Biases are
/// randomized too so no unit sits exactly on a ReLU kink.
inline void toy_network(std::uint64_t seed, pesentry::MlpModel& model, pesentry::Matrix& x, std::vector<int>& y) {
    pesentry::Rng rng(seed);
    pesentry::MlpConfig cfg;
    const std::size_t in = 2 + static_cast<std::size_t>(pesentry::uniform_index(rng, 4));
    cfg.hidden_layers = {3 + static_cast<std::size_t>(pesentry::uniform_index(rng, 5)),
                         2 + static_cast<std::size_t>(pesentry::uniform_index(rng, 4))};
    cfg.num_classes = 2 + static_cast<int>(pesentry::uniform_index(rng, 3));
    cfg.seed = seed;
    model = pesentry::mlp_initialize(in, cfg);
    for (auto& layer : model.layers) {
        for (auto& b : layer.biases) b = pesentry::uniform_real(rng) * 0.2 - 0.1;
    }
    const std::size_t n = 6 + static_cast<std::size_t>(pesentry::uniform_index(rng, 6));
    x = pesentry::Matrix(n, in);
    y.assign(n, 0);
    for (auto& v : x.data) v = pesentry::uniform_real(rng) * 4.0 - 2.0;
    for (auto& label : y) label = static_cast<int>(pesentry::uniform_index(rng, static_cast<std::uint64_t>(cfg.num_classes)));
}

inline void xor_data(pesentry::Matrix& x, std::vector<int>& y) {
    x = pesentry::Matrix::from_rows({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    y = {0, 1, 1, 0};
}

} // namespace oracle
