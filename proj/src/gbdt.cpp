// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/gbdt.hpp"

#include "pesentry/error.hpp"
#include "pesentry/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pesentry {

namespace {

constexpr double kMinHessian = 1e-16;

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double split_gain(double gl, double hl, double gr, double hr, double g, double h, double lambda) {
    return gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda);
}

/// Threshold strictly above `lo` and at most `hi`.
double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return mid > lo ? mid : hi;
}

int tree_slots(int num_classes) { return num_classes == 2 ? 1 : num_classes; }

/// Per-sample loss from margins; binary uses one margin, multiclass one per class.
double sample_loss(std::span<const double> margin, int label, int num_classes) {
    if (num_classes == 2) return softplus(margin[0]) - (label == 1 ? margin[0] : 0.0);
    const double mx = *std::max_element(margin.begin(), margin.end());
    double z = 0.0;
    for (double m : margin) z += std::exp(m - mx);
    return mx + std::log(z) - margin[static_cast<std::size_t>(label)];
}

double mean_loss(const std::vector<double>& margins, std::span<const int> labels, int num_classes) {
    const std::size_t k = static_cast<std::size_t>(tree_slots(num_classes));
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        total += sample_loss(std::span<const double>(margins.data() + i * k, k), labels[i], num_classes);
    }
    return total / static_cast<double>(labels.size());
}

struct NodeStats {
    double g = 0.0;
    double h = 0.0;
    std::size_t count = 0;
};

struct BestSplit {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

/// Builds one regression tree level by level over the samples.
class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& columns,
                const std::vector<std::vector<std::uint32_t>>& sorted, const GbdtConfig& config,
                SplitSearch search)
        : columns_(columns), sorted_(sorted), config_(config), search_(search) {}

    RegressionTree build(std::span<const double> g, std::span<const double> h,
                         const std::vector<int>& features) {
        const std::size_t n = g.size();
        node_of_.assign(n, 0);
        RegressionTree tree;
        tree.nodes.emplace_back();
        std::vector<NodeStats> stats(1);
        for (std::size_t i = 0; i < n; ++i) {
            stats[0].g += g[i];
            stats[0].h += h[i];
            ++stats[0].count;
        }

        std::vector<int> frontier{0};
        for (int depth = 0; depth < config_.max_depth && !frontier.empty(); ++depth) {
            std::vector<int> slot_of(tree.nodes.size(), -1);
            std::vector<int> slots;
            for (int node : frontier) {
                if (stats[static_cast<std::size_t>(node)].count >=
                    2 * static_cast<std::size_t>(config_.min_samples_leaf)) {
                    slot_of[static_cast<std::size_t>(node)] = static_cast<int>(slots.size());
                    slots.push_back(node);
                }
            }
            if (slots.empty()) break;

            const auto best = search_ == SplitSearch::presorted_parallel
                                  ? level_splits_presorted(g, h, features, slot_of, slots, stats)
                                  : level_splits_per_node(g, h, features, slots);

            std::vector<int> split_left(tree.nodes.size(), -1);
            std::vector<int> next;
            for (std::size_t s = 0; s < slots.size(); ++s) {
                if (best[s].feature < 0) continue;
                const auto node = static_cast<std::size_t>(slots[s]);
                const int left = static_cast<int>(tree.nodes.size());
                tree.nodes[node].feature = best[s].feature;
                tree.nodes[node].threshold = best[s].threshold;
                tree.nodes[node].left = left;
                tree.nodes[node].right = left + 1;
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                stats.emplace_back();
                stats.emplace_back();
                split_left[node] = left;
                next.push_back(left);
                next.push_back(left + 1);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const auto node = static_cast<std::size_t>(node_of_[i]);
                if (node >= split_left.size() || split_left[node] < 0) continue;
                const auto& split = tree.nodes[node];
                const int child =
                    columns_[static_cast<std::size_t>(split.feature)][i] < split.threshold ? split.left
                                                                                          : split.right;
                node_of_[i] = child;
                auto& st = stats[static_cast<std::size_t>(child)];
                st.g += g[i];
                st.h += h[i];
                ++st.count;
            }
            frontier = std::move(next);
        }

        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            if (!tree.nodes[k].is_leaf()) continue;
            tree.nodes[k].value =
                -stats[k].g / (stats[k].h + config_.lambda_l2) * config_.learning_rate;
        }
        return tree;
    }

private:
    /// One sweep per feature over the presorted order, accumulating every
    /// splittable node of the level at once.
    std::vector<BestSplit> level_splits_presorted(std::span<const double> g, std::span<const double> h,
                                                  const std::vector<int>& features,
                                                  const std::vector<int>& slot_of,
                                                  const std::vector<int>& slots,
                                                  const std::vector<NodeStats>& stats) const {
        const std::size_t nslots = slots.size();
        const auto min_leaf = static_cast<std::size_t>(config_.min_samples_leaf);
        const double lambda = config_.lambda_l2;
        std::vector<std::vector<BestSplit>> per_feature(features.size(), std::vector<BestSplit>(nslots));

        const auto nfeatures = static_cast<std::int64_t>(features.size());
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t fi = 0; fi < nfeatures; ++fi) {
            const auto f = static_cast<std::size_t>(features[static_cast<std::size_t>(fi)]);
            const auto& col = columns_[f];
            std::vector<double> gl(nslots, 0.0), hl(nslots, 0.0), last(nslots, 0.0);
            std::vector<std::size_t> nl(nslots, 0);
            auto& out = per_feature[static_cast<std::size_t>(fi)];
            for (std::uint32_t i : sorted_[f]) {
                const int s = slot_of[static_cast<std::size_t>(node_of_[i])];
                if (s < 0) continue;
                const auto su = static_cast<std::size_t>(s);
                const double v = col[i];
                if (nl[su] > 0 && v != last[su]) {
                    const auto& st = stats[static_cast<std::size_t>(slots[su])];
                    if (nl[su] >= min_leaf && st.count - nl[su] >= min_leaf) {
                        const double gain = split_gain(gl[su], hl[su], st.g - gl[su], st.h - hl[su],
                                                       st.g, st.h, lambda);
                        if (gain > out[su].gain) {
                            out[su] = {gain, static_cast<int>(f), midpoint(last[su], v)};
                        }
                    }
                }
                gl[su] += g[i];
                hl[su] += h[i];
                ++nl[su];
                last[su] = v;
            }
        }

        std::vector<BestSplit> best(nslots);
        for (const auto& candidates : per_feature) {
            for (std::size_t s = 0; s < nslots; ++s) {
                if (candidates[s].gain > best[s].gain) best[s] = candidates[s];
            }
        }
        return best;
    }

    std::vector<BestSplit> level_splits_per_node(std::span<const double> g, std::span<const double> h,
                                                 const std::vector<int>& features,
                                                 const std::vector<int>& slots) const {
        std::vector<BestSplit> best(slots.size());
        for (std::size_t s = 0; s < slots.size(); ++s) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < node_of_.size(); ++i) {
                if (node_of_[i] == slots[s]) members.push_back(i);
            }
            std::vector<double> gs, hs, xs;
            for (std::size_t i : members) {
                gs.push_back(g[i]);
                hs.push_back(h[i]);
            }
            for (int f : features) {
                xs.clear();
                for (std::size_t i : members) xs.push_back(columns_[static_cast<std::size_t>(f)][i]);
                auto cand = find_best_split(gs, hs, xs, config_);
                if (cand && cand->gain > best[s].gain) best[s] = {cand->gain, f, cand->threshold};
            }
        }
        return best;
    }

    const std::vector<std::vector<double>>& columns_;
    const std::vector<std::vector<std::uint32_t>>& sorted_;
    const GbdtConfig& config_;
    SplitSearch search_;
    std::vector<int> node_of_;
};

std::vector<int> draw_features(const std::vector<int>& candidates, std::size_t total_width,
                               double fraction, Rng& rng) {
    if (fraction >= 1.0) return candidates;
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total_width))));
    // Partial Fisher-Yates over all columns, then keep the non-constant ones.
    std::vector<int> all(total_width);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < want && i < total_width; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, total_width - i));
        std::swap(all[i], all[j]);
    }
    all.resize(std::min(want, total_width));
    std::sort(all.begin(), all.end());
    std::vector<int> out;
    std::set_intersection(all.begin(), all.end(), candidates.begin(), candidates.end(),
                          std::back_inserter(out));
    return out;
}

} // namespace

void GbdtConfig::validate() const {
    if (num_rounds < 0) throw std::invalid_argument("num_rounds must be non-negative");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (max_depth < 1) throw std::invalid_argument("max_depth must be positive");
    if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be positive");
    if (!(lambda_l2 >= 0.0)) throw std::invalid_argument("lambda_l2 must be non-negative");
    if (!(feature_subsample > 0.0 && feature_subsample <= 1.0)) {
        throw std::invalid_argument("feature_subsample must be in (0, 1]");
    }
    if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
    if (patience < 0) throw std::invalid_argument("patience must be non-negative");
}

GbdtConfig GbdtConfig::xgboost_like(int num_classes, std::uint64_t seed) {
    GbdtConfig c;
    c.num_classes = num_classes;
    c.seed = seed;
    return c;
}

GbdtConfig GbdtConfig::lightgbm_like(int num_classes, std::uint64_t seed) {
    GbdtConfig c;
    c.max_depth = 8;
    c.min_samples_leaf = 20;
    c.feature_subsample = 0.8;
    c.num_classes = num_classes;
    c.seed = seed;
    return c;
}

double RegressionTree::predict(std::span<const double> x) const {
    std::size_t k = 0;
    while (!nodes[k].is_leaf()) {
        const auto& n = nodes[k];
        k = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
    }
    return nodes[k].value;
}

int RegressionTree::depth() const {
    if (nodes.empty()) return 0;
    std::vector<int> level(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k].is_leaf()) continue;
        for (int child : {nodes[k].left, nodes[k].right}) {
            level[static_cast<std::size_t>(child)] = level[k] + 1;
            deepest = std::max(deepest, level[k] + 1);
        }
    }
    return deepest;
}

std::vector<double> GbdtModel::margins(std::span<const double> x) const {
    std::vector<double> m = base_score;
    for (const auto& round : trees) {
        for (std::size_t k = 0; k < round.size(); ++k) m[k] += round[k].predict(x);
    }
    return m;
}

std::optional<SplitCandidate> find_best_split(std::span<const double> gradients,
                                              std::span<const double> hessians,
                                              std::span<const double> column, const GbdtConfig& config) {
    const std::size_t n = column.size();
    if (gradients.size() != n || hessians.size() != n) {
        throw ShapeMismatch("gradients, hessians and column must have equal length");
    }
    const auto min_leaf = static_cast<std::size_t>(config.min_samples_leaf);
    if (n < 2 * min_leaf || n < 2) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });

    double g = 0.0, h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        g += gradients[i];
        h += hessians[i];
    }

    std::optional<SplitCandidate> best;
    double best_gain = 0.0;
    double gl = 0.0, hl = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = order[r];
        if (r > 0 && column[i] != column[order[r - 1]] && r >= min_leaf && n - r >= min_leaf) {
            const double gain = split_gain(gl, hl, g - gl, h - hl, g, h, config.lambda_l2);
            if (gain > best_gain) {
                best_gain = gain;
                best = SplitCandidate{midpoint(column[order[r - 1]], column[i]), gain};
            }
        }
        gl += gradients[i];
        hl += hessians[i];
    }
    return best;
}

GbdtTrainResult gbdt_train(const Matrix& features, std::span<const int> labels, const GbdtConfig& config,
                           const LabeledData* validation, SplitSearch search) {
    config.validate();
    validate_training_set(features, labels, config.num_classes);
    if (validation) {
        if (validation->features.cols != features.cols) {
            throw ShapeMismatch("validation width differs from training width");
        }
        if (validation->labels.size() != validation->features.rows) {
            throw ShapeMismatch("validation labels and rows disagree");
        }
    }

    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    const int nclass = config.num_classes;
    const auto k = static_cast<std::size_t>(tree_slots(nclass));

    std::vector<std::vector<double>> columns(d, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < d; ++f) columns[f][i] = features(i, f);
    }
    std::vector<std::vector<std::uint32_t>> sorted(d);
    std::vector<int> splittable;
    for (std::size_t f = 0; f < d; ++f) {
        const auto& col = columns[f];
        if (std::all_of(col.begin(), col.end(), [&](double v) { return v == col[0]; })) continue;
        auto& order = sorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
        splittable.push_back(static_cast<int>(f));
    }

    GbdtTrainResult result;
    auto& model = result.model;
    model.config = config;
    model.input_width = d;
    model.base_score.assign(k, 0.0);

    std::vector<double> margin(n * k, 0.0);
    std::vector<double> val_margin(validation ? validation->features.rows * k : 0, 0.0);
    std::vector<double> g(n), h(n), prob(n * k);
    TreeBuilder builder(columns, sorted, config, search);
    Rng rng(config.seed);

    double best_val = INFINITY;
    std::size_t best_round = 0;
    for (int round = 0; round < config.num_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            double* p = prob.data() + i * k;
            const double* m = margin.data() + i * k;
            if (nclass == 2) {
                p[0] = sigmoid(m[0]);
            } else {
                const double mx = *std::max_element(m, m + k);
                double z = 0.0;
                for (std::size_t c = 0; c < k; ++c) z += (p[c] = std::exp(m[c] - mx));
                for (std::size_t c = 0; c < k; ++c) p[c] /= z;
            }
        }

        std::vector<RegressionTree> round_trees;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                const double p = prob[i * k + c];
                const int target = nclass == 2 ? labels[i] : (labels[i] == static_cast<int>(c) ? 1 : 0);
                g[i] = p - target;
                h[i] = std::max(p * (1.0 - p), kMinHessian);
            }
            const auto feats = draw_features(splittable, d, config.feature_subsample, rng);
            round_trees.push_back(builder.build(g, h, feats));
        }

        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) margin[i * k + c] += round_trees[c].predict(features.row(i));
        }
        result.log.train_loss.push_back(mean_loss(margin, labels, nclass));
        if (validation) {
            for (std::size_t i = 0; i < validation->features.rows; ++i) {
                for (std::size_t c = 0; c < k; ++c) {
                    val_margin[i * k + c] += round_trees[c].predict(validation->features.row(i));
                }
            }
            const double vl = mean_loss(val_margin, validation->labels, nclass);
            result.log.validation_loss.push_back(vl);
            if (vl < best_val) {
                best_val = vl;
                best_round = static_cast<std::size_t>(round);
            }
        }
        model.trees.push_back(std::move(round_trees));
        if (validation && config.patience > 0 &&
            static_cast<std::size_t>(round) - best_round >= static_cast<std::size_t>(config.patience)) {
            model.trees.resize(best_round + 1);
            break;
        }
    }
    return result;
}

Matrix gbdt_predict_proba(const GbdtModel& model, const Matrix& features) {
    if (features.cols != model.input_width) {
        throw ShapeMismatch("model expects width " + std::to_string(model.input_width) + ", got " +
                            std::to_string(features.cols));
    }
    const int nclass = model.config.num_classes;
    const auto c = static_cast<std::size_t>(nclass);
    Matrix out(features.rows, c);
    const auto rows = static_cast<std::int64_t>(features.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(r);
        const auto m = model.margins(features.row(i));
        if (nclass == 2) {
            const double p = sigmoid(m[0]);
            out(i, 0) = 1.0 - p;
            out(i, 1) = p;
        } else {
            const double mx = *std::max_element(m.begin(), m.end());
            double z = 0.0;
            for (std::size_t k = 0; k < c; ++k) z += (out(i, k) = std::exp(m[k] - mx));
            for (std::size_t k = 0; k < c; ++k) out(i, k) /= z;
        }
    }
    return out;
}

double gbdt_loss(const GbdtModel& model, const Matrix& features, std::span<const int> labels) {
    if (labels.size() != features.rows) throw ShapeMismatch("labels and rows disagree");
    std::vector<double> margins;
    margins.reserve(features.rows * model.base_score.size());
    for (std::size_t i = 0; i < features.rows; ++i) {
        const auto m = model.margins(features.row(i));
        margins.insert(margins.end(), m.begin(), m.end());
    }
    return mean_loss(margins, labels, model.config.num_classes);
}

} // namespace pesentry
