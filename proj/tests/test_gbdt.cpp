// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/error.hpp"
#include "pesentry/gbdt.hpp"

#include "reference_oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace pesentry;

namespace {

GbdtConfig stump_config(double lambda) {
    GbdtConfig c;
    c.num_rounds = 1;
    c.max_depth = 1;
    c.min_samples_leaf = 1;
    c.lambda_l2 = lambda;
    c.learning_rate = 0.1;
    return c;
}

std::vector<int> predicted(const GbdtModel& m, const Matrix& x) {
    const Matrix p = gbdt_predict_proba(m, x);
    std::vector<int> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        auto r = p.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

} // namespace

TEST_CASE("two-point stump") {
    const Matrix x = Matrix::from_rows({{0}, {1}});
    const std::vector<int> y{0, 1};
    for (double lambda : {0.0, 1.0}) {
        const auto cfg = stump_config(lambda);
        const auto m = gbdt_train(x, y, cfg).model;
        REQUIRE(m.trees.size() == 1);
        REQUIRE(m.trees[0].size() == 1);
        const auto& t = m.trees[0][0];
        REQUIRE(t.nodes.size() == 3);
        CHECK(t.nodes[0].feature == 0);
        CHECK(t.nodes[0].threshold == 0.5);
        const double leaf = cfg.learning_rate * 0.5 / (0.25 + lambda);
        CHECK(t.nodes[static_cast<std::size_t>(t.nodes[0].left)].value == doctest::Approx(-leaf).epsilon(1e-15));
        CHECK(t.nodes[static_cast<std::size_t>(t.nodes[0].right)].value == doctest::Approx(leaf).epsilon(1e-15));

        const Matrix p = gbdt_predict_proba(m, x);
        CHECK(p(0, 1) < 0.5);
        CHECK(p(1, 1) > 0.5);
    }
}

TEST_CASE("find_best_split examples") {
    GbdtConfig cfg;
    cfg.lambda_l2 = 0.0;
    cfg.min_samples_leaf = 1;
    const std::vector<double> h(4, 1.0);

    auto s = find_best_split(std::vector<double>{-1, -1, 1, 1}, h, std::vector<double>{1, 2, 3, 4}, cfg);
    REQUIRE(s);
    CHECK(s->threshold == 2.5);
    CHECK(s->gain == doctest::Approx(4.0));

    CHECK_FALSE(find_best_split(std::vector<double>{-1, -1, 1, 1}, h, std::vector<double>{7, 7, 7, 7}, cfg));

    // splits at 1.5 and 3.5 have equal gain; the smaller wins
    auto tie = find_best_split(std::vector<double>{1, -1, -1, 1}, h, std::vector<double>{1, 2, 3, 4}, cfg);
    REQUIRE(tie);
    CHECK(tie->threshold == 1.5);

    cfg.min_samples_leaf = 3;
    CHECK_FALSE(find_best_split(std::vector<double>{-1, -1, 1, 1}, h, std::vector<double>{1, 2, 3, 4}, cfg));
}

TEST_CASE("first split agrees with the brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 63);
        const std::size_t d = 1 + uniform_index(rng, 4);
        const bool grid = trial % 3 == 0; // many duplicate values
        Matrix x(n, d);
        for (auto& v : x.data) v = grid ? static_cast<double>(uniform_index(rng, 5)) : uniform_real(rng) * 10 - 5;
        std::vector<int> y(n);
        for (auto& l : y) l = static_cast<int>(uniform_index(rng, 2));
        y[0] = 0;
        y[1] = 1;

        GbdtConfig cfg = stump_config(static_cast<double>(uniform_index(rng, 3)));
        cfg.min_samples_leaf = 1 + static_cast<int>(uniform_index(rng, 3));
        const auto want = oracle::brute_force_first_split(x, y, cfg.lambda_l2, static_cast<std::size_t>(cfg.min_samples_leaf));
        for (auto search : {SplitSearch::presorted_parallel, SplitSearch::per_node_serial}) {
            const auto trained = gbdt_train(x, y, cfg, nullptr, search);
            const auto& root = trained.model.trees[0][0].nodes[0];
            CAPTURE(trial);
            CHECK(root.feature == want.feature);
            if (want.feature >= 0) CHECK(root.threshold == want.threshold);
        }
    }
}

TEST_CASE("blob dataset: separable, loss non-increasing, searches agree") {
    Matrix x;
    std::vector<int> y;
    oracle::blobs(200, 3, x, y);
    GbdtConfig cfg = GbdtConfig::xgboost_like(2, 1);
    cfg.num_rounds = 50;
    const auto fast = gbdt_train(x, y, cfg, nullptr, SplitSearch::presorted_parallel);
    const auto slow = gbdt_train(x, y, cfg, nullptr, SplitSearch::per_node_serial);
    CHECK(fast.model == slow.model);
    CHECK(predicted(fast.model, x) == y);
    REQUIRE(fast.log.train_loss.size() == 50);
    for (std::size_t r = 1; r < fast.log.train_loss.size(); ++r) {
        CAPTURE(r);
        CHECK(fast.log.train_loss[r] <= fast.log.train_loss[r - 1] + 1e-12);
    }
    CHECK(gbdt_loss(fast.model, x, y) == doctest::Approx(fast.log.train_loss.back()).epsilon(1e-12));
}

TEST_CASE("multiclass with feature subsampling matches between searches") {
    Rng rng(8);
    const std::size_t n = 150, d = 6;
    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 3);
        for (std::size_t f = 0; f < d; ++f) x(i, f) = uniform_real(rng) + (f == static_cast<std::size_t>(y[i]) ? 1.0 : 0.0);
    }
    GbdtConfig cfg = GbdtConfig::lightgbm_like(3, 5);
    cfg.num_rounds = 10;
    const auto a = gbdt_train(x, y, cfg, nullptr, SplitSearch::presorted_parallel);
    const auto b = gbdt_train(x, y, cfg, nullptr, SplitSearch::per_node_serial);
    CHECK(a.model == b.model);
    CHECK(a.model.trees.size() == 10);
    CHECK(a.model.trees[0].size() == 3);
    const Matrix p = gbdt_predict_proba(a.model, x);
    for (std::size_t i = 0; i < p.rows; ++i) {
        double s = 0;
        for (double v : p.row(i)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (const auto& round : a.model.trees) {
        for (const auto& t : round) CHECK(t.depth() <= cfg.max_depth);
    }
}

TEST_CASE("zero-round models predict uniform probabilities") {
    GbdtModel m;
    m.base_score = {0.0};
    m.input_width = 3;
    m.config.num_classes = 2;
    const Matrix x(4, 3, 1.0);
    const Matrix p = gbdt_predict_proba(m, x);
    for (double v : p.data) CHECK(v == 0.5);

    GbdtModel m3;
    m3.base_score = {0.0, 0.0, 0.0};
    m3.input_width = 3;
    m3.config.num_classes = 3;
    const Matrix p3 = gbdt_predict_proba(m3, x);
    for (double v : p3.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("errors") {
    const Matrix x = Matrix::from_rows({{0}, {1}, {2}});
    CHECK_THROWS_AS(gbdt_train(x, std::vector<int>{1, 1, 1}, stump_config(1)), DegenerateLabels);
    CHECK_THROWS_AS(gbdt_train(x, std::vector<int>{0, 1}, stump_config(1)), ShapeMismatch);
    const auto m = gbdt_train(x, std::vector<int>{0, 1, 1}, stump_config(1)).model;
    CHECK_THROWS_AS(gbdt_predict_proba(m, Matrix(1, 2)), ShapeMismatch);
    GbdtConfig bad;
    bad.max_depth = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("deterministic and invariant under monotone transforms") {
    Matrix x;
    std::vector<int> y;
    oracle::blobs(200, 9, x, y);
    // overlap the blobs a little so the trees have work to do
    for (std::size_t i = 0; i < x.rows; i += 7) y[i] = 1 - y[i];
    for (auto cfg : {GbdtConfig::xgboost_like(2, 4), GbdtConfig::lightgbm_like(2, 4)}) {
        cfg.num_rounds = 20;
        const auto a = gbdt_train(x, y, cfg).model;
        CHECK(a == gbdt_train(x, y, cfg).model);

        Matrix cubed = x;
        for (auto& v : cubed.data) v = v * v * v;
        const auto b = gbdt_train(cubed, y, cfg).model;
        CHECK(predicted(a, x) == predicted(b, cubed));
    }
}

TEST_CASE("early stopping on validation loss") {
    Matrix x;
    std::vector<int> y;
    oracle::blobs(120, 4, x, y);
    for (std::size_t i = 0; i < x.rows; i += 3) y[i] = 1 - y[i];
    LabeledData val;
    oracle::blobs(60, 5, val.features, val.labels);
    GbdtConfig cfg = GbdtConfig::xgboost_like(2);
    cfg.num_rounds = 200;
    cfg.min_samples_leaf = 1;
    cfg.patience = 3;
    const auto r = gbdt_train(x, y, cfg, &val);
    CHECK(r.log.validation_loss.size() == r.log.train_loss.size());
    CHECK(r.model.trees.size() < 200);
}
