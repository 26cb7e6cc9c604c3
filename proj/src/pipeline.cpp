// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/pipeline.hpp"

#include "pesentry/digest.hpp"
#include "pesentry/error.hpp"

#include <algorithm>

namespace pesentry {

using nlohmann::json;

namespace {

constexpr std::string_view kBundleFormat = "pesentry-bundle";
constexpr int kBundleVersion = 1;

const std::vector<std::string> kStage1Schema{"benign", "malicious"};
const std::vector<std::string> kStage2Schema{"malware_other", "ransomware"};

void check_width(std::size_t expected, std::size_t got) {
    if (expected != got) {
        throw SchemaMismatch("feature width " + std::to_string(got) + " does not match model input width " +
                             std::to_string(expected));
    }
}

Matrix single_row(std::span<const double> features) {
    Matrix m(1, features.size());
    std::copy(features.begin(), features.end(), m.data.begin());
    return m;
}

std::string model_file_for(std::string_view role) { return std::string(role) + ".model.json"; }

ModelRef write_model(const TrainedModel& m, const std::filesystem::path& dir, std::string_view role) {
    const std::string text = serialize_model(m);
    const std::string file = model_file_for(role);
    write_file(dir / file, text);
    return ModelRef{std::string(role), file, to_hex(sha256(text))};
}

json bundle_json(const Bundle& b) {
    json models = json::array();
    for (const auto& r : b.models) models.push_back({{"role", r.role}, {"path", r.path}, {"sha256", r.sha256}});
    json doc = {{"format", kBundleFormat},
                {"version", kBundleVersion},
                {"kind", to_string(b.kind)},
                {"feature_width", b.feature_width},
                {"feature_schema_version", b.feature_schema_version},
                {"models", std::move(models)},
                {"metadata", b.metadata}};
    if (b.kind == BundleKind::bilayer) doc["thresholds"] = {{"stage1", b.threshold1}, {"stage2", b.threshold2}};
    return doc;
}

void write_bundle(const Bundle& b, const std::filesystem::path& dir) {
    write_file(dir / kBundleFile, bundle_json(b).dump(2) + "\n");
}

BundleKind parse_bundle_kind(std::string_view s) {
    if (s == "bilayer") return BundleKind::bilayer;
    if (s == "benchmark") return BundleKind::benchmark;
    if (s == "single") return BundleKind::single;
    throw FormatError("unknown bundle kind: " + std::string(s));
}

} // namespace

std::string_view to_string(VerdictLabel label) {
    switch (label) {
    case VerdictLabel::benign: return "benign";
    case VerdictLabel::malware_other: return "malware_other";
    case VerdictLabel::ransomware: return "ransomware";
    }
    return "unknown";
}

std::string_view to_string(BundleKind kind) {
    switch (kind) {
    case BundleKind::bilayer: return "bilayer";
    case BundleKind::benchmark: return "benchmark";
    case BundleKind::single: return "single";
    }
    return "unknown";
}

void BiLayeredModel::validate() const {
    if (stage1.label_schema != kStage1Schema) throw SchemaMismatch("stage 1 must be labeled {benign, malicious}");
    if (stage2.label_schema != kStage2Schema) {
        throw SchemaMismatch("stage 2 must be labeled {malware_other, ransomware}");
    }
    if (stage1.input_width != stage2.input_width ||
        stage1.feature_schema_version != stage2.feature_schema_version) {
        throw SchemaMismatch("stages disagree on feature schema");
    }
}

void BenchmarkModel::validate() const {
    if (model.label_schema != verdict_schema()) {
        throw SchemaMismatch("benchmark model must be labeled {benign, malware_other, ransomware}");
    }
}

Verdict verdict_from_probabilities(std::span<const double> probs) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k) {
        if (probs[k] > probs[best]) best = k;
    }
    Verdict v;
    v.label = static_cast<VerdictLabel>(best);
    v.malware_score = std::clamp(1.0 - probs[0], 0.0, 1.0);
    v.ransomware_score = v.label == VerdictLabel::benign ? 0.0 : probs[2];
    return v;
}

std::vector<Verdict> bilayer_predict_batch(const BiLayeredModel& m, const Matrix& features, PredictProbe* probe) {
    check_width(m.input_width(), features.cols);
    std::vector<Verdict> out(features.rows);
    if (features.rows == 0) return out;

    const Matrix p1 = m.stage1.predict_proba(features);
    if (probe) probe->stage1_rows += features.rows;
    std::vector<std::size_t> gated;
    for (std::size_t i = 0; i < features.rows; ++i) {
        out[i].malware_score = p1(i, 1);
        if (p1(i, 1) >= m.threshold1) gated.push_back(i);
    }
    if (gated.empty()) return out;

    const Matrix p2 = m.stage2.predict_proba(take_rows(features, gated));
    if (probe) probe->stage2_rows += gated.size();
    for (std::size_t k = 0; k < gated.size(); ++k) {
        auto& v = out[gated[k]];
        v.ransomware_score = p2(k, 1);
        v.label = p2(k, 1) >= m.threshold2 ? VerdictLabel::ransomware : VerdictLabel::malware_other;
    }
    return out;
}

Verdict bilayer_predict(const BiLayeredModel& m, std::span<const double> features, PredictProbe* probe) {
    check_width(m.input_width(), features.size());
    return bilayer_predict_batch(m, single_row(features), probe).front();
}

std::vector<Verdict> benchmark_predict_batch(const BenchmarkModel& m, const Matrix& features) {
    check_width(m.input_width(), features.cols);
    const Matrix p = m.model.predict_proba(features);
    std::vector<Verdict> out;
    out.reserve(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) out.push_back(verdict_from_probabilities(p.row(i)));
    return out;
}

Verdict benchmark_predict(const BenchmarkModel& m, std::span<const double> features) {
    check_width(m.input_width(), features.size());
    return benchmark_predict_batch(m, single_row(features)).front();
}

LabeledData stage1_view(const ThreeWayData& data) {
    LabeledData out{data.features, {}};
    out.labels.reserve(data.labels.size());
    for (int y : data.labels) out.labels.push_back(y == static_cast<int>(VerdictLabel::benign) ? 0 : 1);
    return out;
}

LabeledData stage2_view(const ThreeWayData& data) {
    std::vector<std::size_t> rows;
    LabeledData out;
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        if (data.labels[i] == static_cast<int>(VerdictLabel::benign)) continue;
        rows.push_back(i);
        out.labels.push_back(data.labels[i] == static_cast<int>(VerdictLabel::ransomware) ? 1 : 0);
    }
    out.features = take_rows(data.features, rows);
    return out;
}

BilayerTrainResult train_bilayer(const ThreeWayData& data, const BilayerTrainOptions& options) {
    if (data.labels.size() != data.features.rows) throw ShapeMismatch("labels and rows disagree");
    BilayerTrainResult out;
    out.model.threshold1 = options.threshold1;
    out.model.threshold2 = options.threshold2;

    std::optional<LabeledData> val1, val2;
    if (options.validation) {
        val1 = stage1_view(*options.validation);
        val2 = stage2_view(*options.validation);
    }

    if (options.stage1_pretrained) {
        out.model.stage1 = *options.stage1_pretrained;
    } else {
        const auto view = stage1_view(data);
        try {
            auto fit = train_model(view.features, view.labels, kStage1Schema, options.settings,
                                   val1 ? &*val1 : nullptr);
            out.model.stage1 = std::move(fit.model);
            out.stage1_log = std::move(fit.log);
        } catch (const DegenerateLabels& e) {
            throw DegenerateLabels(std::string("stage 1: ") + e.what());
        }
    }

    if (options.stage2_pretrained) {
        out.model.stage2 = *options.stage2_pretrained;
    } else {
        const auto view = stage2_view(data);
        const bool has_both = std::count(view.labels.begin(), view.labels.end(), 1) > 0 &&
                              std::count(view.labels.begin(), view.labels.end(), 0) > 0;
        if (!has_both) throw DegenerateLabels("stage 2: need both ransomware and other malware");
        try {
            auto fit = train_model(view.features, view.labels, kStage2Schema, options.settings,
                                   val2 && !val2->labels.empty() ? &*val2 : nullptr);
            out.model.stage2 = std::move(fit.model);
            out.stage2_log = std::move(fit.log);
        } catch (const DegenerateLabels& e) {
            throw DegenerateLabels(std::string("stage 2: ") + e.what());
        }
    }
    out.model.validate();
    return out;
}

ModelFitResult train_benchmark(const ThreeWayData& data, const ModelSettings& settings,
                               const ThreeWayData* validation) {
    std::optional<LabeledData> val;
    if (validation) val = LabeledData{validation->features, validation->labels};
    return train_model(data.features, data.labels, verdict_schema(), settings, val ? &*val : nullptr);
}

Bundle save_bilayer_bundle(const BiLayeredModel& m, const std::filesystem::path& dir, json metadata) {
    m.validate();
    Bundle b;
    b.kind = BundleKind::bilayer;
    b.feature_width = m.input_width();
    b.feature_schema_version = m.stage1.feature_schema_version;
    b.threshold1 = m.threshold1;
    b.threshold2 = m.threshold2;
    b.metadata = std::move(metadata);
    b.models.push_back(write_model(m.stage1, dir, "stage1"));
    b.models.push_back(write_model(m.stage2, dir, "stage2"));
    write_bundle(b, dir);
    return b;
}

Bundle save_benchmark_bundle(const BenchmarkModel& m, const std::filesystem::path& dir, json metadata) {
    m.validate();
    Bundle b;
    b.kind = BundleKind::benchmark;
    b.feature_width = m.input_width();
    b.feature_schema_version = m.model.feature_schema_version;
    b.metadata = std::move(metadata);
    b.models.push_back(write_model(m.model, dir, "benchmark"));
    write_bundle(b, dir);
    return b;
}

Bundle save_single_bundle(const TrainedModel& m, const std::filesystem::path& dir, json metadata) {
    Bundle b;
    b.kind = BundleKind::single;
    b.feature_width = m.input_width;
    b.feature_schema_version = m.feature_schema_version;
    b.metadata = std::move(metadata);
    b.models.push_back(write_model(m, dir, "model"));
    write_bundle(b, dir);
    return b;
}

Bundle replace_stage2(const std::filesystem::path& dir, const TrainedModel& stage2) {
    Bundle b = read_bundle(dir);
    if (b.kind != BundleKind::bilayer) throw FormatError("not a bi-layered bundle");
    const TrainedModel stage1 = load_bundle_model(dir, b, "stage1");
    BiLayeredModel check{stage1, stage2, b.threshold1, b.threshold2};
    check.validate();
    for (auto& ref : b.models) {
        if (ref.role == "stage2") ref = write_model(stage2, dir, "stage2");
    }
    write_bundle(b, dir);
    return b;
}

std::filesystem::path bundle_dir(const std::filesystem::path& dir_or_file) {
    if (std::filesystem::is_directory(dir_or_file)) return dir_or_file;
    return dir_or_file.parent_path();
}

Bundle read_bundle(const std::filesystem::path& dir_or_file) {
    const auto path = std::filesystem::is_directory(dir_or_file) ? dir_or_file / kBundleFile : dir_or_file;
    const Bytes bytes = read_file(path);
    try {
        const json doc = json::parse(bytes.begin(), bytes.end());
        if (doc.at("format").get<std::string>() != kBundleFormat) throw FormatError("not a pesentry bundle");
        if (doc.at("version").get<int>() != kBundleVersion) throw FormatError("unsupported bundle version");
        Bundle b;
        b.kind = parse_bundle_kind(doc.at("kind").get<std::string>());
        b.feature_width = doc.at("feature_width").get<std::size_t>();
        b.feature_schema_version = doc.at("feature_schema_version").get<int>();
        if (b.kind == BundleKind::bilayer) {
            b.threshold1 = doc.at("thresholds").at("stage1").get<double>();
            b.threshold2 = doc.at("thresholds").at("stage2").get<double>();
        }
        for (const auto& r : doc.at("models")) {
            b.models.push_back({r.at("role").get<std::string>(), r.at("path").get<std::string>(),
                                r.at("sha256").get<std::string>()});
        }
        b.metadata = doc.value("metadata", json::object());
        return b;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed bundle: ") + e.what());
    }
}

TrainedModel load_bundle_model(const std::filesystem::path& dir, const Bundle& bundle, std::string_view role) {
    for (const auto& ref : bundle.models) {
        if (ref.role != role) continue;
        const Bytes bytes = read_file(dir / ref.path);
        if (to_hex(sha256(bytes)) != ref.sha256) {
            throw FormatError("digest mismatch for " + ref.path);
        }
        auto model = deserialize_model(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        if (model.input_width != bundle.feature_width) throw SchemaMismatch("model width differs from bundle width");
        return model;
    }
    throw FormatError("bundle has no model with role " + std::string(role));
}

BiLayeredModel load_bilayer(const std::filesystem::path& dir_or_file) {
    const auto dir = bundle_dir(dir_or_file);
    const Bundle b = read_bundle(dir);
    if (b.kind != BundleKind::bilayer) throw FormatError("not a bi-layered bundle");
    BiLayeredModel m{load_bundle_model(dir, b, "stage1"), load_bundle_model(dir, b, "stage2"), b.threshold1,
                     b.threshold2};
    m.validate();
    return m;
}

BenchmarkModel load_benchmark(const std::filesystem::path& dir_or_file) {
    const auto dir = bundle_dir(dir_or_file);
    const Bundle b = read_bundle(dir);
    if (b.kind != BundleKind::benchmark) throw FormatError("not a benchmark bundle");
    BenchmarkModel m{load_bundle_model(dir, b, "benchmark")};
    m.validate();
    return m;
}

} // namespace pesentry
