// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/model.hpp"

#include "pesentry/digest.hpp"
#include "pesentry/error.hpp"

#include <bit>
#include <stdexcept>

namespace pesentry {

using nlohmann::json;

namespace {

constexpr std::string_view kModelFormat = "pesentry-model";
constexpr int kModelVersion = 1;

std::string encode_f64(std::span<const double> values) {
    Bytes bytes;
    bytes.reserve(values.size() * 8);
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return base64_encode(bytes);
}

std::vector<double> decode_f64(const json& j, std::size_t expected) {
    const Bytes bytes = base64_decode(j.get<std::string>());
    if (bytes.size() != expected * 8) {
        throw FormatError("weight blob holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected * 8));
    }
    std::vector<double> out(expected);
    for (std::size_t k = 0; k < expected; ++k) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[k * 8 + static_cast<std::size_t>(i)]) << (8 * i);
        out[k] = std::bit_cast<double>(bits);
    }
    return out;
}

json gbdt_config_json(const GbdtConfig& c) {
    return {{"num_rounds", c.num_rounds},           {"learning_rate", c.learning_rate},
            {"max_depth", c.max_depth},             {"min_samples_leaf", c.min_samples_leaf},
            {"lambda_l2", c.lambda_l2},             {"feature_subsample", c.feature_subsample},
            {"num_classes", c.num_classes},         {"seed", c.seed},
            {"patience", c.patience}};
}

GbdtConfig gbdt_config_from(const json& j) {
    GbdtConfig c;
    c.num_rounds = j.at("num_rounds").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.max_depth = j.at("max_depth").get<int>();
    c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    c.lambda_l2 = j.at("lambda_l2").get<double>();
    c.feature_subsample = j.at("feature_subsample").get<double>();
    c.num_classes = j.at("num_classes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.patience = j.value("patience", 0);
    return c;
}

json mlp_config_json(const MlpConfig& c) {
    return {{"hidden_layers", c.hidden_layers}, {"activation", c.activation},
            {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},       {"adam_epsilon", c.adam_epsilon},
            {"batch_size", c.batch_size},       {"epochs", c.epochs},
            {"num_classes", c.num_classes},     {"seed", c.seed},
            {"patience", c.patience}};
}

MlpConfig mlp_config_from(const json& j) {
    MlpConfig c;
    c.hidden_layers = j.at("hidden_layers").get<std::vector<std::size_t>>();
    c.activation = j.at("activation").get<std::string>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.patience = j.value("patience", 0);
    return c;
}

json gbdt_json(const GbdtModel& m) {
    json rounds = json::array();
    for (const auto& round : m.trees) {
        json per_class = json::array();
        for (const auto& tree : round) {
            json nodes = json::array();
            for (const auto& n : tree.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
            per_class.push_back(std::move(nodes));
        }
        rounds.push_back(std::move(per_class));
    }
    return {{"config", gbdt_config_json(m.config)}, {"base_score", m.base_score}, {"trees", std::move(rounds)}};
}

GbdtModel gbdt_from(const json& j, std::size_t input_width) {
    GbdtModel m;
    m.config = gbdt_config_from(j.at("config"));
    m.base_score = j.at("base_score").get<std::vector<double>>();
    m.input_width = input_width;
    for (const auto& round : j.at("trees")) {
        std::vector<RegressionTree> trees;
        for (const auto& nodes : round) {
            RegressionTree tree;
            for (const auto& n : nodes) {
                TreeNode node{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                              n.at(4).get<double>()};
                tree.nodes.push_back(node);
            }
            const auto count = static_cast<int>(tree.nodes.size());
            if (count == 0) throw FormatError("empty tree");
            for (const auto& node : tree.nodes) {
                if (node.is_leaf()) continue;
                if (static_cast<std::size_t>(node.feature) >= input_width || node.left <= 0 || node.right <= 0 ||
                    node.left >= count || node.right >= count) {
                    throw FormatError("tree node references out of range");
                }
            }
            trees.push_back(std::move(tree));
        }
        if (trees.size() != m.base_score.size()) throw FormatError("round has wrong number of trees");
        m.trees.push_back(std::move(trees));
    }
    return m;
}

json mlp_json(const MlpModel& m) {
    json layers = json::array();
    for (const auto& l : m.layers) {
        layers.push_back({{"inputs", l.inputs},
                          {"outputs", l.outputs},
                          {"weights", encode_f64(l.weights)},
                          {"biases", encode_f64(l.biases)}});
    }
    return {{"config", mlp_config_json(m.config)},
            {"layers", std::move(layers)},
            {"standardizer",
             {{"mean", encode_f64(m.standardizer.mean)}, {"stddev", encode_f64(m.standardizer.stddev)}}}};
}

MlpModel mlp_from(const json& j, std::size_t input_width) {
    MlpModel m;
    m.config = mlp_config_from(j.at("config"));
    std::size_t expect_in = input_width;
    for (const auto& jl : j.at("layers")) {
        DenseLayer l;
        l.inputs = jl.at("inputs").get<std::size_t>();
        l.outputs = jl.at("outputs").get<std::size_t>();
        if (l.inputs != expect_in) throw FormatError("layer dimensions do not chain");
        l.weights = decode_f64(jl.at("weights"), l.inputs * l.outputs);
        l.biases = decode_f64(jl.at("biases"), l.outputs);
        expect_in = l.outputs;
        m.layers.push_back(std::move(l));
    }
    if (m.layers.empty()) throw FormatError("mlp has no layers");
    const auto& s = j.at("standardizer");
    m.standardizer.mean = decode_f64(s.at("mean"), input_width);
    m.standardizer.stddev = decode_f64(s.at("stddev"), input_width);
    return m;
}

} // namespace

std::string_view to_string(ModelFamily family) {
    switch (family) {
    case ModelFamily::gbdt_xgb_like: return "xgb-like";
    case ModelFamily::gbdt_lgbm_like: return "lgbm-like";
    case ModelFamily::mlp: return "mlp";
    }
    return "unknown";
}

ModelFamily parse_model_family(std::string_view name) {
    if (name == "xgb-like" || name == "gbdt_xgb_like") return ModelFamily::gbdt_xgb_like;
    if (name == "lgbm-like" || name == "gbdt_lgbm_like") return ModelFamily::gbdt_lgbm_like;
    if (name == "mlp") return ModelFamily::mlp;
    throw std::invalid_argument("unknown model family: " + std::string(name));
}

Matrix TrainedModel::predict_proba(const Matrix& features) const {
    if (features.cols != input_width) {
        throw ShapeMismatch("model expects width " + std::to_string(input_width) + ", got " +
                            std::to_string(features.cols));
    }
    if (const auto* g = std::get_if<GbdtModel>(&model)) return gbdt_predict_proba(*g, features);
    return mlp_predict_proba(std::get<MlpModel>(model), features);
}

ModelFitResult train_model(const Matrix& features, std::span<const int> labels,
                           const std::vector<std::string>& label_schema, const ModelSettings& settings,
                           const LabeledData* validation) {
    const int classes = static_cast<int>(label_schema.size());
    ModelFitResult out;
    out.model.family = settings.family;
    out.model.label_schema = label_schema;
    out.model.input_width = features.cols;
    if (settings.family == ModelFamily::mlp) {
        MlpConfig cfg = settings.mlp.value_or(MlpConfig{});
        cfg.num_classes = classes;
        cfg.seed = settings.seed;
        auto r = mlp_train(features, labels, cfg, validation);
        r.model.label_schema = label_schema;
        out.model.model = std::move(r.model);
        out.log = std::move(r.log);
    } else {
        GbdtConfig cfg = settings.gbdt.value_or(settings.family == ModelFamily::gbdt_lgbm_like
                                                    ? GbdtConfig::lightgbm_like(classes)
                                                    : GbdtConfig::xgboost_like(classes));
        cfg.num_classes = classes;
        cfg.seed = settings.seed;
        auto r = gbdt_train(features, labels, cfg, validation);
        r.model.label_schema = label_schema;
        out.model.model = std::move(r.model);
        out.log = std::move(r.log);
    }
    return out;
}

json model_to_json(const TrainedModel& model) {
    json doc = {{"format", kModelFormat},
                {"version", kModelVersion},
                {"family", to_string(model.family)},
                {"feature_schema_version", model.feature_schema_version},
                {"input_width", model.input_width},
                {"label_schema", model.label_schema}};
    if (const auto* g = std::get_if<GbdtModel>(&model.model)) {
        doc["gbdt"] = gbdt_json(*g);
    } else {
        doc["mlp"] = mlp_json(std::get<MlpModel>(model.model));
    }
    return doc;
}

TrainedModel model_from_json(const json& doc) {
    try {
        if (doc.at("format").get<std::string>() != kModelFormat) throw FormatError("not a pesentry model");
        const int version = doc.at("version").get<int>();
        if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version));
        TrainedModel m;
        m.family = parse_model_family(doc.at("family").get<std::string>());
        m.feature_schema_version = doc.at("feature_schema_version").get<int>();
        m.input_width = doc.at("input_width").get<std::size_t>();
        m.label_schema = doc.at("label_schema").get<std::vector<std::string>>();
        if (m.label_schema.size() < 2) throw FormatError("label schema needs at least two classes");
        if (m.family == ModelFamily::mlp) {
            auto mlp = mlp_from(doc.at("mlp"), m.input_width);
            mlp.label_schema = m.label_schema;
            if (mlp.num_outputs() != m.label_schema.size()) throw FormatError("output width != label count");
            m.model = std::move(mlp);
        } else {
            auto g = gbdt_from(doc.at("gbdt"), m.input_width);
            g.label_schema = m.label_schema;
            if (static_cast<std::size_t>(g.config.num_classes) != m.label_schema.size()) {
                throw FormatError("num_classes != label count");
            }
            m.model = std::move(g);
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model document: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
}

std::string serialize_model(const TrainedModel& model) { return model_to_json(model).dump() + "\n"; }

TrainedModel deserialize_model(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model is not valid JSON: ") + e.what());
    }
    return model_from_json(doc);
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
    write_file(path, serialize_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    return deserialize_model(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

json train_log_to_json(const TrainLog& log) {
    return {{"train_loss", log.train_loss}, {"validation_loss", log.validation_loss}};
}

} // namespace pesentry
