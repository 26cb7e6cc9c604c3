// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/cli.hpp"

#include "pesentry/corpus.hpp"
#include "pesentry/error.hpp"
#include "pesentry/eval.hpp"
#include "pesentry/features.hpp"
#include "pesentry/grayscale.hpp"
#include "pesentry/kernels.hpp"
#include "pesentry/pe_parser.hpp"
#include "pesentry/pipeline.hpp"
#include "pesentry/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <map>

namespace fs = std::filesystem;
using nlohmann::json;

namespace pesentry {

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool quiet = false;

    std::uint64_t resolved_seed() const {
        if (seed) return *seed;
        if (const char* env = std::getenv("PESENTRY_SEED"); env && *env) {
            try {
                return std::stoull(env);
            } catch (const std::exception&) {
                throw std::invalid_argument("PESENTRY_SEED is not an unsigned integer");
            }
        }
        return 0;
    }
};

void report_error(std::ostream& err, std::string_view code, std::string_view message) {
    err << json{{"error", code}, {"message", message}}.dump() << "\n";
}

Task task_for(const std::string& cli_task) {
    if (cli_task == "malware") return Task::malware_detection;
    if (cli_task == "families") return Task::family_classification;
    if (cli_task == "ransomware") return Task::ransomware_detection;
    return Task::bilayer_eval; // bilayer, benchmark
}

std::map<std::string, std::size_t> parse_caps(const std::vector<std::string>& caps) {
    std::map<std::string, std::size_t> out;
    for (const auto& c : caps) {
        auto eq = c.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("cap must look like class=N: " + c);
        out[c.substr(0, eq)] = std::stoull(c.substr(eq + 1));
    }
    return out;
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::optional<std::size_t> per_class;
    std::size_t n[6] = {0, 0, 0, 0, 0, 0};
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    SynthProfile p{a.n[0], a.n[1], a.n[2], a.n[3], a.n[4], a.n[5]};
    if (a.per_class) p = SynthProfile::uniform(*a.per_class);
    auto corpus = generate_synthetic_corpus(p, g.resolved_seed(), a.out);
    if (!g.quiet) err << "wrote " << corpus.entries.size() << " files\n";
    out << corpus.manifest.string() << "\n";
    return 0;
}

// --- extract -------------------------------------------------------------

struct ExtractArgs {
    std::string manifest, mode = "vector", out;
};

int cmd_extract(const ExtractArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    const ExtractMode mode = parse_extract_mode(a.mode);
    Manifest m = ingest_manifest(a.manifest);
    CacheReport r = cache_features(m, mode, a.out);

    for (const auto& path : m.missing) err << json{{"skipped", path}, {"reason", "missing file"}}.dump() << "\n";
    for (const auto& f : r.failures) err << json{{"skipped", f}, {"reason", "extraction failed"}}.dump() << "\n";
    if (!g.quiet && m.duplicates) err << "collapsed " << m.duplicates << " duplicate entries\n";
    out << json{{"cache", a.out},
                {"rows", r.cache.rows()},
                {"width", r.cache.width},
                {"skipped", m.missing.size() + r.failures.size()}}
               .dump()
        << "\n";
    return (m.missing.empty() && r.failures.empty()) ? 0 : 2;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
    std::string task, model = "xgb-like", cache, manifest, out;
    std::vector<std::string> caps;
    double threshold1 = 0.5, threshold2 = 0.5;
};

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    DatasetSpec spec;
    spec.task = task_for(a.task);
    spec.caps = parse_caps(a.caps);
    spec.seed = g.resolved_seed();

    ModelSettings settings;
    settings.family = parse_model_family(a.model);
    settings.seed = spec.seed;

    Manifest manifest = ingest_manifest(a.manifest);
    FeatureCache cache = read_cache(a.cache);
    Dataset ds = build_dataset(manifest.entries, spec, cache);
    if (!g.quiet)
        err << "train " << ds.train.labels.size() << " / val " << ds.val.labels.size() << " / test "
            << ds.test.labels.size() << "\n";

    const fs::path dir = a.out;
    json run{{"task", a.task},
             {"model_family", a.model},
             {"dataset_spec_digest", spec_digest(spec)},
             {"seed", spec.seed}};
    json meta{{"run", run}, {"dataset", spec.to_json()}};
    Bundle bundle;
    json log;

    if (a.task == "bilayer") {
        ThreeWayData train = to_three_way(ds.train), val = to_three_way(ds.val);
        BilayerTrainOptions opts;
        opts.settings = settings;
        opts.threshold1 = a.threshold1;
        opts.threshold2 = a.threshold2;
        opts.validation = &val;
        auto r = train_bilayer(train, opts);
        bundle = save_bilayer_bundle(r.model, dir, meta);
        log = {{"stage1", train_log_to_json(r.stage1_log)}, {"stage2", train_log_to_json(r.stage2_log)}};
    } else if (a.task == "benchmark") {
        ThreeWayData train = to_three_way(ds.train), val = to_three_way(ds.val);
        auto r = train_benchmark(train, settings, &val);
        bundle = save_benchmark_bundle(BenchmarkModel{r.model}, dir, meta);
        log = train_log_to_json(r.log);
    } else {
        LabeledData val = to_labeled(ds.val);
        auto r = train_model(ds.train.features, ds.train.labels, ds.class_names, settings, &val);
        bundle = save_single_bundle(r.model, dir, meta);
        log = train_log_to_json(r.log);
    }
    write_file(dir / "train_log.json", std::string_view(log.dump(2) + "\n"));
    write_file(dir / "splits.json", std::string_view(split_digests(ds).dump(2) + "\n"));

    json models = json::array();
    for (const auto& m : bundle.models) models.push_back({{"role", m.role}, {"sha256", m.sha256}});
    out << json{{"bundle", (dir / kBundleFile).string()}, {"models", models}}.dump() << "\n";
    return 0;
}

// --- predict -------------------------------------------------------------

struct PredictArgs {
    std::string bundle;
    std::vector<std::string> inputs;
};

bool looks_like_manifest(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".jsonl" || ext == ".ndjson";
}

struct Predictor {
    Bundle bundle;
    std::optional<BiLayeredModel> bilayer;
    std::optional<BenchmarkModel> benchmark;
    std::optional<TrainedModel> single;
    ExtractMode mode = ExtractMode::vector;

    explicit Predictor(const fs::path& path) : bundle(read_bundle(path)) {
        const fs::path dir = bundle_dir(path);
        switch (bundle.kind) {
        case BundleKind::bilayer: bilayer = load_bilayer(path); break;
        case BundleKind::benchmark: benchmark = load_benchmark(path); break;
        case BundleKind::single: single = load_bundle_model(dir, bundle, "model"); break;
        }
        if (bundle.feature_width == kImagePixels) mode = ExtractMode::grayscale;
        else if (bundle.feature_width != kFeatureWidth)
            throw SchemaMismatch("bundle feature width " + std::to_string(bundle.feature_width) + " is not supported");
    }

    json verdict(const std::vector<float>& row) const {
        std::vector<double> x(row.begin(), row.end());
        json j;
        if (bilayer || benchmark) {
            Verdict v = bilayer ? bilayer_predict(*bilayer, x) : benchmark_predict(*benchmark, x);
            j["label"] = to_string(v.label);
            j["malware_score"] = v.malware_score;
            j["ransomware_score"] = v.ransomware_score;
            return j;
        }
        Matrix m(1, x.size());
        std::copy(x.begin(), x.end(), m.data.begin());
        Matrix p = single->predict_proba(m);
        const auto& schema = single->label_schema;
        j["label"] = schema[static_cast<std::size_t>(argmax(p.row(0)))];
        auto prob_of = [&](std::string_view name) -> json {
            auto it = std::find(schema.begin(), schema.end(), name);
            if (it == schema.end()) return nullptr;
            return p(0, static_cast<std::size_t>(it - schema.begin()));
        };
        json benign = prob_of("benign");
        j["malware_score"] = benign.is_null() ? json(nullptr) : json(1.0 - benign.get<double>());
        j["ransomware_score"] = prob_of("ransomware");
        return j;
    }
};

int cmd_predict(const PredictArgs& a, const Globals&, std::ostream& out, std::ostream& err) {
    Predictor pred(a.bundle);

    std::vector<std::string> shown;
    std::vector<fs::path> files;
    for (const auto& in : a.inputs) {
        if (looks_like_manifest(in)) {
            Manifest m = ingest_manifest(in, IngestOptions{.verify_digests = false, .skip_missing = false});
            for (const auto& e : m.entries) {
                shown.push_back(e.path);
                files.push_back(m.resolve(e));
            }
        } else {
            shown.push_back(in);
            files.push_back(in);
        }
    }

    auto rows = extract_rows(files, pred.mode);
    int status = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        json line{{"path", shown[i]}};
        if (!rows[i].ok) {
            line["label"] = nullptr;
            line["error"] = rows[i].error;
            err << json{{"skipped", shown[i]}, {"reason", rows[i].error}}.dump() << "\n";
            status = 2;
        } else {
            json v = pred.verdict(rows[i].values);
            line.update(v);
            Bytes bytes = read_file(files[i]);
            ParseResult parsed = parse_pe(bytes);
            if (auto* d = std::get_if<ParseDegraded>(&parsed)) line["parse"] = "degraded:" + std::string(to_string(d->reason));
        }
        out << line.dump() << "\n";
    }
    return status;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateArgs {
    std::vector<std::string> bundles;
    std::string cache, manifest, out;
};

int cmd_evaluate(const EvaluateArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
    std::vector<Bundle> bundles;
    for (const auto& b : a.bundles) bundles.push_back(read_bundle(b));

    FeatureCache cache = read_cache(a.cache);
    for (std::size_t i = 0; i < bundles.size(); ++i)
        if (bundles[i].feature_width != cache.width)
            throw SchemaMismatch("bundle " + a.bundles[i] + " expects width " + std::to_string(bundles[i].feature_width) +
                                 " but the cache has width " + std::to_string(cache.width));

    const json& first_meta = bundles.front().metadata;
    if (!first_meta.contains("dataset")) throw FormatError("bundle metadata has no dataset spec");
    const DatasetSpec spec = DatasetSpec::from_json(first_meta["dataset"]);
    for (std::size_t i = 1; i < bundles.size(); ++i) {
        const json& m = bundles[i].metadata;
        if (!g.quiet && (!m.contains("dataset") || !(DatasetSpec::from_json(m["dataset"]) == spec)))
            err << "note: " << a.bundles[i] << " was trained on a different dataset spec; evaluating on the first bundle's split\n";
    }

    Manifest manifest = ingest_manifest(a.manifest);
    const bool three_way =
        std::any_of(bundles.begin(), bundles.end(), [](const Bundle& b) { return b.kind != BundleKind::single; });
    if (three_way && spec.task != Task::bilayer_eval) throw SchemaMismatch("pipeline bundles need a bilayer_eval dataset");
    const Dataset ds = build_dataset(manifest.entries, spec, cache);

    std::vector<std::pair<std::string, EvalReport>> reports;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        const Bundle& b = bundles[i];
        EvalReport r;
        std::string name;
        switch (b.kind) {
        case BundleKind::bilayer:
            r = evaluate_bilayer(load_bilayer(a.bundles[i]), ds.test);
            name = "bilayer";
            break;
        case BundleKind::benchmark:
            r = evaluate_benchmark(load_benchmark(a.bundles[i]), ds.test);
            name = "benchmark";
            break;
        case BundleKind::single: {
            TrainedModel m = load_bundle_model(bundle_dir(a.bundles[i]), b, "model");
            r = evaluate_model(m, ds.test, ds.class_names, task_positive_class(spec.task));
            name = std::string(to_string(m.family));
            break;
        }
        }
        r.metadata = b.metadata.contains("run") ? b.metadata["run"] : json::object();
        // disambiguate repeated names (two xgb-like bundles, say)
        std::string unique = name;
        for (int k = 2; std::any_of(reports.begin(), reports.end(), [&](const auto& p) { return p.first == unique; }); ++k)
            unique = name + "#" + std::to_string(k);
        reports.emplace_back(unique, std::move(r));
    }

    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "spec.json",
               std::string_view(json{{"dataset", spec.to_json()}, {"cache_sha256", to_hex(sha256(encode_cache(cache)))},
                                     {"bundles", a.bundles}}
                                    .dump(2) + "\n"));
    write_reports(reports, a.out);

    if (reports.size() > 1) {
        out << render_comparison(reports);
    } else {
        out << render_report(reports.front().second, reports.front().first).text;
    }
    return 0;
}

// --- experiment ------------------------------------------------------------

struct ExperimentArgs {
    std::string task, model = "xgb-like", cache, manifest, out;
    std::vector<std::string> caps;
};

int cmd_experiment(const ExperimentArgs& a, const Globals& g, std::ostream& out, std::ostream&) {
    ExperimentConfig cfg;
    cfg.dataset.task = parse_task(a.task);
    cfg.dataset.caps = parse_caps(a.caps);
    cfg.dataset.seed = g.resolved_seed();
    cfg.settings.family = parse_model_family(a.model);
    cfg.settings.seed = cfg.dataset.seed;
    Manifest manifest = ingest_manifest(a.manifest);
    FeatureCache cache = read_cache(a.cache);
    auto result = run_experiment(manifest, cache, cfg, a.out);
    if (result.reports.size() > 1) out << render_comparison(result.reports);
    else out << render_report(result.reports.front().second, result.reports.front().first).text;
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"pesentry: static PE malware and ransomware detection"};
    app.require_subcommand(1);

    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "RNG seed (falls back to $PESENTRY_SEED, then 0)");
    app.add_option("--threads", g.threads, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--quiet,-q", g.quiet, "suppress progress notes on stderr");

    SynthArgs synth;
    auto* s_synth = app.add_subcommand("synth", "generate a synthetic PE corpus with a manifest");
    s_synth->add_option("--out", synth.out, "output directory")->required();
    s_synth->add_option("--per-class", synth.per_class, "samples per class (overrides the per-class counts)");
    const char* names[6] = {"--benign", "--trojan", "--worm", "--backdoor", "--ransomware", "--other"};
    for (int i = 0; i < 6; ++i) s_synth->add_option(names[i], synth.n[i]);

    ExtractArgs extract;
    auto* s_extract = app.add_subcommand("extract", "extract features for every manifest entry into a cache");
    s_extract->add_option("--manifest", extract.manifest)->required();
    s_extract->add_option("--mode", extract.mode)->check(CLI::IsMember({"vector", "grayscale"}));
    s_extract->add_option("--out", extract.out, "cache file")->required();

    TrainArgs train;
    auto* s_train = app.add_subcommand("train", "train a model or pipeline bundle");
    s_train->add_option("--task", train.task)
        ->required()
        ->check(CLI::IsMember({"malware", "families", "ransomware", "bilayer", "benchmark"}));
    s_train->add_option("--model", train.model)->check(CLI::IsMember({"xgb-like", "lgbm-like", "mlp"}));
    s_train->add_option("--cache", train.cache)->required();
    s_train->add_option("--manifest", train.manifest)->required();
    s_train->add_option("--out", train.out, "bundle directory")->required();
    s_train->add_option("--cap", train.caps, "per-class cap, class=N (repeatable)");
    s_train->add_option("--threshold1", train.threshold1)->check(CLI::Range(0.0, 1.0));
    s_train->add_option("--threshold2", train.threshold2)->check(CLI::Range(0.0, 1.0));

    PredictArgs predict;
    auto* s_predict = app.add_subcommand("predict", "print one JSON verdict line per input file");
    s_predict->add_option("--bundle", predict.bundle)->required();
    s_predict->add_option("--input", predict.inputs, "PE file or .jsonl manifest (repeatable)");

    EvaluateArgs evaluate;
    auto* s_eval = app.add_subcommand("evaluate", "evaluate bundle(s) on the test split they were trained against");
    s_eval->add_option("--bundle", evaluate.bundles)->required();
    s_eval->add_option("--cache", evaluate.cache)->required();
    s_eval->add_option("--manifest", evaluate.manifest)->required();
    s_eval->add_option("--out", evaluate.out, "run directory")->required();

    ExperimentArgs experiment;
    auto* s_exp = app.add_subcommand("experiment", "build dataset, train, and report on the test split");
    s_exp->add_option("--task", experiment.task)
        ->required()
        ->check(CLI::IsMember(
            {"malware_detection", "family_classification", "ransomware_detection", "bilayer_eval"}));
    s_exp->add_option("--model", experiment.model)->check(CLI::IsMember({"xgb-like", "lgbm-like", "mlp"}));
    s_exp->add_option("--cache", experiment.cache)->required();
    s_exp->add_option("--manifest", experiment.manifest)->required();
    s_exp->add_option("--out", experiment.out)->required();
    s_exp->add_option("--cap", experiment.caps);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        report_error(err, "UsageError", e.what());
        return 1;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (g.threads > 0) kernels::set_thread_count(g.threads);
        if (*s_synth) return cmd_synth(synth, g, out, err);
        if (*s_extract) return cmd_extract(extract, g, out, err);
        if (*s_train) return cmd_train(train, g, out, err);
        if (*s_predict) return cmd_predict(predict, g, out, err);
        if (*s_eval) return cmd_evaluate(evaluate, g, out, err);
        if (*s_exp) return cmd_experiment(experiment, g, out, err);
    } catch (const Error& e) {
        report_error(err, e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error(err, "Error", e.what());
        return 1;
    }
    return 1;
}

} // namespace pesentry
