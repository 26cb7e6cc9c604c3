// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/eval.hpp"

#include "pesentry/error.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace pesentry {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
        for (auto c : row) t += c;
    return t;
}

EvalReport compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                           const std::vector<std::string>& class_names, std::optional<std::string> positive_class) {
    if (truth.size() != predicted.size())
        throw LengthMismatch("truth has " + std::to_string(truth.size()) + " labels, predictions " +
                             std::to_string(predicted.size()));
    if (truth.empty()) throw LengthMismatch("no labels to evaluate");
    const std::size_t k = class_names.size();

    std::optional<std::size_t> pos;
    if (positive_class) {
        auto it = std::find(class_names.begin(), class_names.end(), *positive_class);
        if (it == class_names.end()) throw UnknownPositiveClass("positive class '" + *positive_class + "' not in schema");
        pos = static_cast<std::size_t>(it - class_names.begin());
    }

    EvalReport r;
    r.confusion.class_names = class_names;
    r.confusion.counts.assign(k, std::vector<std::uint64_t>(k, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || static_cast<std::size_t>(t) >= k || p < 0 || static_cast<std::size_t>(p) >= k)
            throw std::out_of_range("label outside the class schema at index " + std::to_string(i));
        ++r.confusion.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }

    std::uint64_t correct = 0;
    double f1_sum = 0.0;
    r.per_class.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::uint64_t tp = r.confusion.counts[c][c];
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += r.confusion.counts[c][j];
            col += r.confusion.counts[j][c];
        }
        auto& m = r.per_class[c];
        m.support = row;
        m.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        m.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        correct += tp;
        f1_sum += m.f1;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    r.f1_macro = f1_sum / static_cast<double>(k);

    if (pos) {
        const std::uint64_t tp = r.confusion.counts[*pos][*pos];
        const std::uint64_t fn = r.per_class[*pos].support - tp;
        r.positive_class = positive_class;
        r.missed = fn;
        r.fnr = (fn + tp) ? static_cast<double>(fn) / static_cast<double>(fn + tp) : 0.0;
    }
    return r;
}

json EvalReport::to_json() const {
    json per = json::array();
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const auto& m = per_class[c];
        per.push_back({{"class", confusion.class_names.at(c)},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support}});
    }
    json j{{"accuracy", accuracy},
           {"f1_macro", f1_macro},
           {"per_class", per},
           {"confusion", {{"classes", confusion.class_names}, {"counts", confusion.counts}}},
           {"metadata", metadata}};
    j["positive_class"] = positive_class ? json(*positive_class) : json(nullptr);
    j["fnr"] = fnr ? json(*fnr) : json(nullptr);
    j["missed"] = missed ? json(*missed) : json(nullptr);
    return j;
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        r.accuracy = j.at("accuracy").get<double>();
        r.f1_macro = j.at("f1_macro").get<double>();
        r.confusion.class_names = j.at("confusion").at("classes").get<std::vector<std::string>>();
        r.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::vector<std::uint64_t>>>();
        for (const auto& m : j.at("per_class"))
            r.per_class.push_back({m.at("precision").get<double>(), m.at("recall").get<double>(),
                                   m.at("f1").get<double>(), m.at("support").get<std::uint64_t>()});
        if (!j.at("positive_class").is_null()) r.positive_class = j["positive_class"].get<std::string>();
        if (!j.at("fnr").is_null()) r.fnr = j["fnr"].get<double>();
        if (!j.at("missed").is_null()) r.missed = j["missed"].get<std::uint64_t>();
        r.metadata = j.at("metadata");
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad report document: ") + e.what());
    }
    return r;
}

namespace {

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

std::string lpad(std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
}

std::size_t name_width(const std::vector<std::string>& names, std::size_t floor) {
    std::size_t w = floor;
    for (const auto& n : names) w = std::max(w, n.size());
    return w + 2;
}

} // namespace

RenderedReport render_report(const EvalReport& r, std::string_view title) {
    std::ostringstream os;
    if (!title.empty()) os << "== " << title << " ==\n";
    if (!r.metadata.empty()) {
        for (const char* key : {"task", "model_family", "topology", "seed"})
            if (r.metadata.contains(key)) os << key << ": " << r.metadata[key].dump() << "\n";
    }
    os << "accuracy   " << fmt4(r.accuracy) << "\n";
    os << "f1_macro   " << fmt4(r.f1_macro) << "\n";
    if (r.fnr) {
        os << "fnr        " << fmt4(*r.fnr) << "  (positive class " << *r.positive_class << ", " << *r.missed
           << " missed)\n";
    }

    const auto& names = r.confusion.class_names;
    const std::size_t nw = name_width(names, 5);
    os << "\n" << pad("class", nw) << lpad("precision", 10) << lpad("recall", 10) << lpad("f1", 10)
       << lpad("support", 10) << "\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        os << pad(names[c], nw) << lpad(fmt4(m.precision), 10) << lpad(fmt4(m.recall), 10) << lpad(fmt4(m.f1), 10)
           << lpad(std::to_string(m.support), 10) << "\n";
    }

    std::size_t cw = 8;
    for (const auto& n : names) cw = std::max(cw, n.size() + 2);
    os << "\nconfusion (rows = true, columns = predicted)\n" << pad("", nw);
    for (const auto& n : names) os << lpad(n, cw);
    os << "\n";
    for (std::size_t t = 0; t < names.size(); ++t) {
        os << pad(names[t], nw);
        for (auto v : r.confusion.counts[t]) os << lpad(std::to_string(v), cw);
        os << "\n";
    }
    return {os.str(), r.to_json()};
}

std::string render_comparison(const std::vector<std::pair<std::string, EvalReport>>& reports) {
    std::vector<std::string> names;
    for (const auto& [n, r] : reports) names.push_back(n);
    const std::size_t cw = name_width(names, 10);
    std::ostringstream os;
    os << pad("metric", 10);
    for (const auto& n : names) os << lpad(n, cw);
    os << "\n" << pad("accuracy", 10);
    for (const auto& [n, r] : reports) os << lpad(fmt4(r.accuracy), cw);
    os << "\n" << pad("f1_macro", 10);
    for (const auto& [n, r] : reports) os << lpad(fmt4(r.f1_macro), cw);
    os << "\n" << pad("samples", 10);
    for (const auto& [n, r] : reports) os << lpad(std::to_string(r.confusion.total()), cw);
    os << "\n";
    return os.str();
}

std::string confusion_csv(const std::vector<std::pair<std::string, EvalReport>>& reports) {
    std::ostringstream os;
    if (!reports.empty()) {
        os << "report,true";
        for (const auto& c : reports.front().second.confusion.class_names) os << "," << c;
        os << "\n";
    }
    for (const auto& [name, r] : reports) {
        if (r.confusion.class_names != reports.front().second.confusion.class_names) {
            throw SchemaMismatch("confusion_csv: reports use different class schemas");
        }
        for (std::size_t t = 0; t < r.confusion.class_names.size(); ++t) {
            os << name << "," << r.confusion.class_names[t];
            for (auto v : r.confusion.counts[t]) os << "," << v;
            os << "\n";
        }
    }
    return os.str();
}

int argmax(std::span<const double> row) {
    int best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

std::vector<int> predict_labels(const TrainedModel& model, const Matrix& features) {
    Matrix p = model.predict_proba(features);
    std::vector<int> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) out[i] = argmax(p.row(i));
    return out;
}

LabeledData to_labeled(const DataSplit& split) { return {split.features, split.labels}; }
ThreeWayData to_three_way(const DataSplit& split) { return {split.features, split.labels}; }

std::optional<std::string> task_positive_class(Task task) {
    switch (task) {
    case Task::malware_detection: return "malicious";
    case Task::ransomware_detection: return "ransomware";
    default: return std::nullopt;
    }
}

EvalReport evaluate_model(const TrainedModel& model, const DataSplit& split,
                          const std::vector<std::string>& class_names, std::optional<std::string> positive) {
    if (model.label_schema != class_names) throw SchemaMismatch("model label schema differs from the dataset classes");
    return compute_metrics(split.labels, predict_labels(model, split.features), class_names, std::move(positive));
}

namespace {

std::vector<int> verdict_labels(const std::vector<Verdict>& verdicts) {
    std::vector<int> out;
    out.reserve(verdicts.size());
    for (const auto& v : verdicts) out.push_back(static_cast<int>(v.label));
    return out;
}

} // namespace

EvalReport evaluate_bilayer(const BiLayeredModel& model, const DataSplit& split, PredictProbe* probe) {
    auto v = bilayer_predict_batch(model, split.features, probe);
    return compute_metrics(split.labels, verdict_labels(v), verdict_schema());
}

EvalReport evaluate_benchmark(const BenchmarkModel& model, const DataSplit& split) {
    auto v = benchmark_predict_batch(model, split.features);
    return compute_metrics(split.labels, verdict_labels(v), verdict_schema());
}

std::string spec_digest(const DatasetSpec& spec) { return to_hex(sha256(spec.to_json().dump())); }

json split_digests(const Dataset& ds) {
    auto hexes = [](const DataSplit& s) {
        json a = json::array();
        for (const auto& d : s.digests) a.push_back(to_hex(d));
        return a;
    };
    return {{"train", hexes(ds.train)}, {"val", hexes(ds.val)}, {"test", hexes(ds.test)}};
}

void write_reports(const std::vector<std::pair<std::string, EvalReport>>& reports, const fs::path& dir) {
    json doc{{"reports", json::object()}};
    std::string text;
    for (const auto& [name, r] : reports) {
        doc["reports"][name] = r.to_json();
        text += render_report(r, name).text + "\n";
    }
    if (reports.size() > 1) text += "== comparison ==\n" + render_comparison(reports);
    write_file(dir / "report.json", std::string_view(doc.dump(2) + "\n"));
    write_file(dir / "report.txt", std::string_view(text));
    write_file(dir / "confusion.csv", std::string_view(confusion_csv(reports)));
}

ExperimentResult run_experiment(const Manifest& manifest, const FeatureCache& cache, const ExperimentConfig& config,
                                const fs::path& run_dir) {
    ExperimentResult result;
    result.dataset = build_dataset(manifest.entries, config.dataset, cache);
    const Dataset& ds = result.dataset;

    json meta{{"task", to_string(config.dataset.task)},
              {"model_family", to_string(config.settings.family)},
              {"dataset_spec_digest", spec_digest(config.dataset)},
              {"seed", config.settings.seed}};
    const std::string cache_digest = to_hex(sha256(encode_cache(cache)));

    fs::create_directories(run_dir);
    json spec_doc{{"dataset", config.dataset.to_json()},
                  {"model_family", to_string(config.settings.family)},
                  {"seed", config.settings.seed},
                  {"cache_sha256", cache_digest},
                  {"feature_width", cache.width}};
    write_file(run_dir / "spec.json", std::string_view(spec_doc.dump(2) + "\n"));
    write_file(run_dir / "splits.json", std::string_view(split_digests(ds).dump(2) + "\n"));

    if (config.dataset.task == Task::bilayer_eval) {
        const ThreeWayData train = to_three_way(ds.train);
        const ThreeWayData val = to_three_way(ds.val);

        BilayerTrainOptions opts;
        opts.settings = config.settings;
        opts.threshold1 = config.threshold1;
        opts.threshold2 = config.threshold2;
        if (config.use_validation) opts.validation = &val;
        auto bi = train_bilayer(train, opts);
        auto bench = train_benchmark(train, config.settings, config.use_validation ? &val : nullptr);
        BenchmarkModel benchmark{bench.model};

        json bi_meta = meta, bench_meta = meta;
        bi_meta["topology"] = "bilayer";
        bench_meta["topology"] = "benchmark";
        save_bilayer_bundle(bi.model, run_dir / "bilayer", json{{"run", bi_meta}, {"dataset", config.dataset.to_json()}});
        save_benchmark_bundle(benchmark, run_dir / "benchmark",
                              json{{"run", bench_meta}, {"dataset", config.dataset.to_json()}});
        write_file(run_dir / "bilayer" / "train_log.json",
                   std::string_view(json{{"stage1", train_log_to_json(bi.stage1_log)},
                                         {"stage2", train_log_to_json(bi.stage2_log)}}
                                        .dump(2) + "\n"));
        write_file(run_dir / "benchmark" / "train_log.json", std::string_view(train_log_to_json(bench.log).dump(2) + "\n"));

        EvalReport r1 = evaluate_bilayer(bi.model, ds.test);
        r1.metadata = bi_meta;
        EvalReport r2 = evaluate_benchmark(benchmark, ds.test);
        r2.metadata = bench_meta;
        result.reports = {{"bilayer", r1}, {"benchmark", r2}};
    } else {
        const LabeledData val = to_labeled(ds.val);
        auto fit = train_model(ds.train.features, ds.train.labels, ds.class_names, config.settings,
                               config.use_validation ? &val : nullptr);
        json model_meta = meta;
        model_meta["topology"] = "single";
        save_single_bundle(fit.model, run_dir / "model", json{{"run", model_meta}, {"dataset", config.dataset.to_json()}});
        write_file(run_dir / "model" / "train_log.json", std::string_view(train_log_to_json(fit.log).dump(2) + "\n"));

        EvalReport r = evaluate_model(fit.model, ds.test, ds.class_names, task_positive_class(config.dataset.task));
        r.metadata = model_meta;
        result.reports = {{std::string(to_string(config.settings.family)), r}};
    }
    write_reports(result.reports, run_dir);
    return result;
}

} // namespace pesentry
