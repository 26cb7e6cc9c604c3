// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/corpus.hpp"
#include "pesentry/error.hpp"
#include "pesentry/features.hpp"
#include "pesentry/grayscale.hpp"
#include "pesentry/synth.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace pesentry;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

ManifestEntry entry_for(const std::filesystem::path& dir, const std::string& name, const std::string& content,
                        SampleLabel label, std::optional<Family> family = std::nullopt) {
    write_text(dir / name, content);
    ManifestEntry e;
    e.path = name;
    e.label = label;
    e.family = family;
    e.source = "test";
    e.sha256 = sha256(std::string_view(content));
    return e;
}

/// Manifest entries plus a cache whose row i is filled with the value i.
struct FakeCorpus {
    std::vector<ManifestEntry> entries;
    FeatureCache cache;
};

FakeCorpus fake(const std::map<std::string, std::size_t>& counts) {
    FakeCorpus fc;
    fc.cache.width = 3;
    std::size_t i = 0;
    for (const auto& [cls, n] : counts) {
        for (std::size_t k = 0; k < n; ++k, ++i) {
            ManifestEntry e;
            e.path = cls + std::to_string(k);
            if (cls == "benign") {
                e.label = SampleLabel::benign;
            } else {
                e.label = SampleLabel::malicious;
                e.family = parse_family(cls);
            }
            e.sha256 = sha256(std::string_view(e.path));
            fc.entries.push_back(e);
            fc.cache.digests.push_back(e.sha256);
            for (int c = 0; c < 3; ++c) fc.cache.values.push_back(static_cast<float>(i));
        }
    }
    return fc;
}

std::set<std::string> digests_of(const DataSplit& s) {
    std::set<std::string> out;
    for (const auto& d : s.digests) out.insert(to_hex(d));
    return out;
}

} // namespace

TEST_CASE("label and family names") {
    CHECK(parse_label("benign") == SampleLabel::benign);
    CHECK(parse_label("malicious") == SampleLabel::malicious);
    CHECK_FALSE(parse_label("evil"));
    CHECK(parse_family("ransomware") == Family::ransomware);
    CHECK_FALSE(parse_family("dropper"));
    CHECK(to_string(Family::backdoor) == "backdoor");
}

TEST_CASE("manifest ingest") {
    testing::TempDir tmp("manifest");
    const auto a = entry_for(tmp.path(), "a.bin", "alpha", SampleLabel::benign);
    const auto b = entry_for(tmp.path(), "b.bin", "bravo", SampleLabel::malicious, Family::worm);
    auto dup = a;
    dup.path = (tmp.path() / "a.bin").string(); // absolute path, same digest

    SUBCASE("empty file") {
        write_text(tmp / "m.jsonl", "");
        CHECK(ingest_manifest(tmp / "m.jsonl").entries.empty());
    }
    SUBCASE("round trip, blank lines and duplicates") {
        write_text(tmp / "m.jsonl", manifest_line(a) + "\n\n" + manifest_line(b) + "\n" + manifest_line(dup) + "\n");
        const auto m = ingest_manifest(tmp / "m.jsonl");
        REQUIRE(m.entries.size() == 2);
        CHECK(m.entries[0] == a);
        CHECK(m.entries[1] == b);
        CHECK(m.duplicates == 1);
        CHECK(m.resolve(m.entries[1]) == tmp.path() / "b.bin");
    }
    SUBCASE("write_manifest output reads back") {
        const std::vector<ManifestEntry> es{a, b};
        write_manifest(tmp / "w.jsonl", es);
        CHECK(ingest_manifest(tmp / "w.jsonl").entries == es);
    }
    SUBCASE("family on a benign line") {
        auto bad = a;
        bad.family = Family::worm;
        write_text(tmp / "m.jsonl", manifest_line(b) + "\n" + manifest_line(bad) + "\n");
        try {
            ingest_manifest(tmp / "m.jsonl");
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("malformed lines") {
        for (const std::string& line : {std::string("{not json"),
                                       std::string(R"({"path":"a.bin","label":"benign","source":"s"})"),
                                       std::string(R"({"path":"a.bin","label":"meh","family":null,"source":"s","sha256":")") +
                                           to_hex(a.sha256) + "\"}",
                                       std::string(R"({"path":"a.bin","label":"benign","family":null,"source":"s","sha256":"zz"})")}) {
            CAPTURE(line);
            write_text(tmp / "m.jsonl", line + "\n");
            CHECK_THROWS_AS(ingest_manifest(tmp / "m.jsonl"), SchemaError);
        }
    }
    SUBCASE("digest mismatch") {
        auto wrong = a;
        wrong.sha256 = sha256(std::string_view("something else"));
        write_text(tmp / "m.jsonl", manifest_line(wrong) + "\n");
        CHECK_THROWS_AS(ingest_manifest(tmp / "m.jsonl"), SchemaError);
        IngestOptions lax;
        lax.verify_digests = false;
        CHECK(ingest_manifest(tmp / "m.jsonl", lax).entries.size() == 1);
    }
    SUBCASE("missing files") {
        auto gone = b;
        gone.path = "gone.bin";
        gone.sha256 = sha256(std::string_view("x"));
        write_text(tmp / "m.jsonl", manifest_line(a) + "\n" + manifest_line(gone) + "\n");
        const auto m = ingest_manifest(tmp / "m.jsonl");
        CHECK(m.entries.size() == 1);
        CHECK(m.missing == std::vector<std::string>{"gone.bin"});
        IngestOptions keep;
        keep.skip_missing = false;
        CHECK(ingest_manifest(tmp / "m.jsonl", keep).entries.size() == 2);
    }
    SUBCASE("unreadable manifest") {
        CHECK_THROWS_AS(ingest_manifest(tmp / "nope.jsonl"), IoError);
    }
}

TEST_CASE("tasks") {
    CHECK(parse_task("family_classification") == Task::family_classification);
    CHECK_THROWS_AS(parse_task("x"), std::invalid_argument);
    CHECK(task_classes(Task::family_classification).size() == 5);
    CHECK(task_classes(Task::bilayer_eval) == std::vector<std::string>{"benign", "malware_other", "ransomware"});

    ManifestEntry benign;
    ManifestEntry rans;
    rans.label = SampleLabel::malicious;
    rans.family = Family::ransomware;
    ManifestEntry worm = rans;
    worm.family = Family::worm;
    CHECK(task_class(Task::malware_detection, benign) == 0);
    CHECK(task_class(Task::malware_detection, worm) == 1);
    CHECK_FALSE(task_class(Task::family_classification, benign));
    CHECK(task_class(Task::family_classification, rans) == 3);
    CHECK_FALSE(task_class(Task::ransomware_detection, benign));
    CHECK(task_class(Task::ransomware_detection, worm) == 0);
    CHECK(task_class(Task::ransomware_detection, rans) == 1);
    CHECK(task_class(Task::bilayer_eval, benign) == 0);
    CHECK(task_class(Task::bilayer_eval, worm) == 1);
    CHECK(task_class(Task::bilayer_eval, rans) == 2);
}

TEST_CASE("split sizes") {
    DatasetSpec spec;
    CHECK(split_sizes(100, spec) == std::array<std::size_t, 3>{70, 15, 15});
    CHECK(split_sizes(0, spec) == std::array<std::size_t, 3>{0, 0, 0});
    CHECK(split_sizes(1, spec) == std::array<std::size_t, 3>{1, 0, 0});
    CHECK(split_sizes(10, spec) == std::array<std::size_t, 3>{7, 2, 1}); // 1.5 vs 1.5: earlier split wins
    CHECK(split_sizes(200, spec) == std::array<std::size_t, 3>{140, 30, 30});
    for (std::size_t n = 0; n < 500; ++n) {
        const auto s = split_sizes(n, spec);
        CHECK(s[0] + s[1] + s[2] == n);
    }
    spec.train_fraction = 0.9;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("dataset spec json") {
    DatasetSpec spec;
    spec.task = Task::ransomware_detection;
    spec.caps = {{"ransomware", 10}};
    spec.seed = 0xFFFFFFFFFFFFFFFFULL;
    CHECK(DatasetSpec::from_json(spec.to_json()) == spec);
    CHECK_THROWS_AS(DatasetSpec::from_json(nlohmann::json{{"task", 3}}), FormatError);
}

TEST_CASE("build dataset") {
    const auto fc = fake({{"benign", 100}, {"worm", 10}});

    DatasetSpec spec;
    spec.task = Task::malware_detection;
    spec.seed = 5;
    const Dataset ds = build_dataset(fc.entries, spec, fc.cache);
    CHECK(ds.class_names == task_classes(Task::malware_detection));
    CHECK(ds.train.features.rows == 70 + 7);
    CHECK(ds.val.features.rows == 15 + 2);
    CHECK(ds.test.features.rows == 15 + 1);
    CHECK(ds.train.labels.size() == ds.train.features.rows);
    // class-major within a split
    CHECK(std::is_sorted(ds.train.labels.begin(), ds.train.labels.end()));

    // no overlap between splits
    auto tr = digests_of(ds.train), va = digests_of(ds.val), te = digests_of(ds.test);
    for (const auto& d : va) CHECK_FALSE(tr.count(d));
    for (const auto& d : te) CHECK_FALSE(tr.count(d) + va.count(d));

    // caps are deterministic per seed
    spec.caps = {{"malicious", 4}};
    const Dataset capped = build_dataset(fc.entries, spec, fc.cache);
    const auto count_mal = [](const Dataset& d) {
        std::size_t n = 0;
        for (const auto* s : {&d.train, &d.val, &d.test}) n += static_cast<std::size_t>(std::count(s->labels.begin(), s->labels.end(), 1));
        return n;
    };
    CHECK(count_mal(capped) == 4);
    const Dataset again = build_dataset(fc.entries, spec, fc.cache);
    CHECK(capped.train.digests == again.train.digests);
    CHECK(capped.test.digests == again.test.digests);
    spec.seed = 6;
    const Dataset other = build_dataset(fc.entries, spec, fc.cache);
    CHECK_FALSE((other.train.digests == capped.train.digests && other.val.digests == capped.val.digests));

    // rows carry the cached values
    const auto row = ds.train.features.row(0);
    const auto at = fc.cache.find(ds.train.digests[0]);
    REQUIRE(at);
    CHECK(row[0] == static_cast<double>(fc.cache.row(*at)[0]));
}

TEST_CASE("missing class is reported") {
    const auto fc = fake({{"trojan", 5}, {"worm", 5}, {"ransomware", 5}, {"other", 5}});
    DatasetSpec spec;
    spec.task = Task::family_classification;
    try {
        build_dataset(fc.entries, spec, fc.cache);
        FAIL("expected InsufficientClass");
    } catch (const InsufficientClass& e) {
        CHECK(std::string(e.what()).find("backdoor") != std::string::npos);
    }
}

TEST_CASE("uncached entries are skipped and counted") {
    auto fc = fake({{"benign", 10}, {"trojan", 10}});
    ManifestEntry extra = fc.entries.back();
    extra.sha256 = sha256(std::string_view("not cached"));
    fc.entries.push_back(extra);
    DatasetSpec spec;
    CHECK(build_dataset(fc.entries, spec, fc.cache).skipped_uncached == 1);
}

TEST_CASE("cache encoding") {
    FeatureCache c;
    c.width = 2;
    c.digests = {sha256(std::string_view("a")), sha256(std::string_view("b"))};
    c.values = {1.5f, -2.0f, 3.25f, 0.0f};
    const Bytes enc = encode_cache(c);
    CHECK(enc.size() == 4 + 2 + 4 + 8 + 64 + 16);
    CHECK(std::string(enc.begin(), enc.begin() + 4) == "PESF");
    const FeatureCache back = decode_cache(enc);
    CHECK(back == c);
    CHECK(encode_cache(back) == enc);
    CHECK(back.find(c.digests[1]) == 1u);
    CHECK_FALSE(back.find(sha256(std::string_view("z"))));

    Bytes bad = enc;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_cache(bad), FormatError);
    bad = enc;
    bad[4] = 9;
    CHECK_THROWS_AS(decode_cache(bad), FormatError);
    CHECK_THROWS_AS(decode_cache(std::span(enc).first(enc.size() - 1)), FormatError);
}

TEST_CASE("extraction, parallel and serial") {
    testing::TempDir tmp("extract");
    const auto corpus = generate_synthetic_corpus(SynthProfile::uniform(3), 11, tmp.path());
    std::vector<std::filesystem::path> files;
    for (const auto& e : corpus.entries) files.push_back(tmp.path() / e.path);
    files.push_back(tmp / "missing.exe");

    for (auto mode : {ExtractMode::vector, ExtractMode::grayscale}) {
        const auto p = extract_rows(files, mode);
        const auto s = extract_rows_serial(files, mode);
        REQUIRE(p.size() == files.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(p[i].ok == s[i].ok);
            CHECK(p[i].values == s[i].values);
            CHECK(p[i].digest == s[i].digest);
        }
        CHECK_FALSE(p.back().ok);
        CHECK(p[0].values.size() == mode_width(mode));
    }
    CHECK(mode_width(ExtractMode::vector) == kFeatureWidth);
    CHECK(mode_width(ExtractMode::grayscale) == kImagePixels);
    CHECK_THROWS_AS(extract_row(Bytes{}, ExtractMode::grayscale), EmptyInput);
    CHECK(extract_row(Bytes{}, ExtractMode::vector).size() == kFeatureWidth);
}

TEST_CASE("cache_features") {
    testing::TempDir tmp("cache");
    const auto corpus = generate_synthetic_corpus(SynthProfile{1, 1, 1, 0, 0, 0}, 3, tmp.path());
    const auto manifest = ingest_manifest(corpus.manifest);
    REQUIRE(manifest.entries.size() == 3);

    const auto report = cache_features(manifest, ExtractMode::vector, tmp / "v.pesf");
    CHECK(report.failures.empty());
    CHECK(report.cache.rows() == 3);
    CHECK(report.cache.width == kFeatureWidth);
    for (std::size_t i = 0; i < 3; ++i) CHECK(report.cache.digests[i] == manifest.entries[i].sha256);
    CHECK(read_cache(tmp / "v.pesf") == report.cache);

    const auto first = read_file(tmp / "v.pesf");
    cache_features(manifest, ExtractMode::vector, tmp / "v.pesf");
    CHECK(sha256(read_file(tmp / "v.pesf")) == sha256(first));

    const auto gray = cache_features(manifest, ExtractMode::grayscale, tmp / "g.pesf");
    CHECK(gray.cache.width == kImagePixels);
}
