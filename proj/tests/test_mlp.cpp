// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/error.hpp"
#include "pesentry/mlp.hpp"

#include "reference_oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace pesentry;

namespace {

std::vector<int> argmax_rows(const Matrix& p) {
    std::vector<int> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        auto r = p.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

MlpConfig xor_config() {
    MlpConfig cfg;
    cfg.hidden_layers = {8};
    cfg.epochs = 2000;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.01;
    cfg.seed = 1;
    return cfg;
}

} // namespace

TEST_CASE("layer sizes and parameter count") {
    MlpConfig cfg;
    cfg.num_classes = 3;
    CHECK(cfg.layer_sizes(2381) == std::vector<std::size_t>{2381, 512, 128, 3});
    const auto m = mlp_initialize(10, cfg);
    CHECK(m.parameter_count() == 10 * 512 + 512 + 512 * 128 + 128 + 128 * 3 + 3);
    CHECK(m.input_width() == 10);
    CHECK(m.num_outputs() == 3);
}

TEST_CASE("initialization is He-uniform with zero biases") {
    MlpConfig cfg;
    cfg.hidden_layers = {64};
    cfg.seed = 3;
    const auto m = mlp_initialize(50, cfg);
    for (const auto& layer : m.layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs));
        for (double w : layer.weights) CHECK(std::abs(w) <= limit);
        for (double b : layer.biases) CHECK(b == 0.0);
    }
    CHECK(m == mlp_initialize(50, cfg));
    cfg.seed = 4;
    CHECK_FALSE(m == mlp_initialize(50, cfg));
}

TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        MlpModel model;
        Matrix x;
        std::vector<int> y;
        oracle::toy_network(seed, model, x, y);
        const auto check = oracle::finite_difference_check(model, x, y);
        CAPTURE(seed);
        CHECK(check.parameters == model.parameter_count());
        CHECK(check.max_relative_error < 1e-4);
    }
}

TEST_CASE("gradient check on a six-parameter network") {
    // 1 input -> 2 hidden -> 2 outputs would be 10 params; 1 -> 1 -> 2 has 2 + 4 = 6
    MlpConfig cfg;
    cfg.hidden_layers = {1};
    cfg.seed = 21;
    auto model = mlp_initialize(1, cfg);
    model.layers[0].biases[0] = 0.3;
    REQUIRE(model.parameter_count() == 6);
    const Matrix x = Matrix::from_rows({{0.5}, {1.5}, {-0.2}});
    const std::vector<int> y{0, 1, 1};
    model.layers[0].weights[0] = 0.8; // keep the unit active on all three rows
    CHECK(oracle::finite_difference_check(model, x, y).max_relative_error < 1e-4);
}

TEST_CASE("dead ReLU unit gets zero incoming gradient") {
    MlpConfig cfg;
    cfg.hidden_layers = {3};
    cfg.seed = 2;
    auto model = mlp_initialize(2, cfg);
    // unit 1 has a large negative bias and zero weights: pre-activation < 0 everywhere
    model.layers[0].weights[2] = 0.0;
    model.layers[0].weights[3] = 0.0;
    model.layers[0].biases[1] = -5.0;
    const Matrix x = Matrix::from_rows({{1, 2}, {-1, 0.5}, {0.3, -0.7}});
    const auto lg = mlp_loss_and_gradients(model, x, std::vector<int>{0, 1, 0});
    CHECK(lg.gradients.weights[0][2] == 0.0);
    CHECK(lg.gradients.weights[0][3] == 0.0);
    CHECK(lg.gradients.biases[0][1] == 0.0);
}

TEST_CASE("perfect prediction has ~zero loss") {
    MlpConfig cfg;
    cfg.hidden_layers = {2};
    auto model = mlp_initialize(1, cfg);
    for (auto& layer : model.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
    }
    model.layers.back().biases = {100.0, -100.0};
    const Matrix x = Matrix::from_rows({{1.0}, {2.0}});
    CHECK(mlp_loss_and_gradients(model, x, std::vector<int>{0, 0}).loss <= 1e-9);
}

TEST_CASE("all-zero network predicts uniform") {
    MlpConfig cfg;
    cfg.hidden_layers = {4};
    auto model = mlp_initialize(3, cfg);
    for (auto& layer : model.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
    }
    const Matrix p = mlp_predict_proba(model, Matrix(5, 3, 0.7));
    for (double v : p.data) CHECK(v == 0.5);
}

TEST_CASE("XOR is learned") {
    Matrix x;
    std::vector<int> y;
    oracle::xor_data(x, y);
    const auto r = mlp_train(x, y, xor_config());
    CHECK(argmax_rows(mlp_predict_proba(r.model, x)) == y);
    CHECK(r.log.train_loss.size() == 2000);
}

TEST_CASE("zero epochs and zero learning rate leave the initialization") {
    Matrix x;
    std::vector<int> y;
    oracle::xor_data(x, y);
    auto cfg = xor_config();
    const auto init = mlp_initialize(2, cfg);

    cfg.epochs = 0;
    const auto none = mlp_train(x, y, cfg).model;
    CHECK(none.layers == init.layers);
    const Matrix p = mlp_predict_proba(none, x);
    for (double v : p.data) CHECK(std::abs(v - 0.5) < 0.5);

    cfg.epochs = 5;
    cfg.learning_rate = 0.0;
    CHECK(mlp_train(x, y, cfg).model.layers == init.layers);
}

TEST_CASE("rows are independent and probabilities normalized") {
    Matrix x;
    std::vector<int> y;
    oracle::blobs(40, 2, x, y);
    MlpConfig cfg;
    cfg.hidden_layers = {16, 8};
    cfg.epochs = 5;
    cfg.num_classes = 2;
    const auto m = mlp_train(x, y, cfg).model;
    const Matrix dup = Matrix::from_rows({{0.3, -0.2}, {0.3, -0.2}, {5, 5}});
    const Matrix p = mlp_predict_proba(m, dup);
    CHECK(p(0, 0) == p(1, 0));
    CHECK(p(0, 1) == p(1, 1));
    for (std::size_t i = 0; i < p.rows; ++i) CHECK(p(i, 0) + p(i, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("deterministic training") {
    Matrix x;
    std::vector<int> y;
    oracle::blobs(64, 6, x, y);
    MlpConfig cfg;
    cfg.hidden_layers = {32, 16};
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 77;
    CHECK(mlp_train(x, y, cfg).model == mlp_train(x, y, cfg).model);
}

TEST_CASE("standardizer") {
    Matrix x = Matrix::from_rows({{1, 5, 3}, {2, 5, 4}, {3, 5, 8}, {6, 5, 1}});
    const auto s = Standardizer::fit(x);
    CHECK(s.stddev[1] == 1.0); // constant column
    const Matrix z = s.apply(x);
    for (std::size_t f = 0; f < 3; ++f) {
        double mean = 0;
        for (std::size_t i = 0; i < z.rows; ++i) mean += z(i, f);
        CHECK(std::abs(mean / 4.0) < 1e-12);
    }
    const auto again = Standardizer::fit(z);
    const Matrix z2 = again.apply(z);
    for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(std::abs(z2.data[i] - z.data[i]) < 1e-9);
    CHECK(Standardizer::identity(3).apply(x) == x);
}

TEST_CASE("errors") {
    MlpConfig cfg;
    cfg.hidden_layers = {4};
    const Matrix x = Matrix::from_rows({{0}, {1}});
    CHECK_THROWS_AS(mlp_train(x, std::vector<int>{0, 0}, cfg), DegenerateLabels);
    CHECK_THROWS_AS(mlp_train(x, std::vector<int>{0}, cfg), ShapeMismatch);
    const auto m = mlp_initialize(1, cfg);
    CHECK_THROWS_AS(mlp_predict_proba(m, Matrix(1, 2)), ShapeMismatch);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
