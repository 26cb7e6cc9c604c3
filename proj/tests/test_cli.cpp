// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/cli.hpp"
#include "pesentry/corpus.hpp"
#include "pesentry/synth.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

using namespace pesentry;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "pesentry");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<nlohmann::json> json_lines(const std::string& text) {
    std::vector<nlohmann::json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    const Bytes b = read_file(p);
    return {b.begin(), b.end()};
}

/// Corpus, vector cache and a trained bilayer bundle shared by the CLI cases.
struct Workspace {
    testing::TempDir tmp{"cli"};
    std::filesystem::path corpus = tmp / "corpus";
    std::filesystem::path manifest = corpus / "manifest.jsonl";
    std::filesystem::path cache = tmp / "v.pesf";

    Workspace() {
        REQUIRE(cli({"-q", "synth", "--out", corpus.string(), "--per-class", "30"}).code == 0);
        REQUIRE(cli({"-q", "extract", "--manifest", manifest.string(), "--out", cache.string()}).code == 0);
    }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

} // namespace

TEST_CASE("synth and extract") {
    auto& w = workspace();
    CHECK(ingest_manifest(w.manifest).entries.size() == 180);
    const auto cache = read_cache(w.cache);
    CHECK(cache.width == 2381);
    CHECK(cache.rows() == 180);

    const auto again = w.tmp / "v2.pesf";
    CHECK(cli({"-q", "extract", "--manifest", w.manifest.string(), "--out", again.string()}).code == 0);
    CHECK(slurp(again) == slurp(w.cache));

    const auto gray = w.tmp / "g.pesf";
    CHECK(cli({"-q", "extract", "--manifest", w.manifest.string(), "--mode", "grayscale", "--out", gray.string()}).code == 0);
    CHECK(read_cache(gray).width == 4096);
}

TEST_CASE("extract with a missing file exits 2 and reports the skip") {
    auto& w = workspace();
    auto entries = ingest_manifest(w.manifest).entries;
    entries.resize(3);
    entries[0].path = (w.corpus / entries[0].path).string();
    entries[1].path = (w.corpus / entries[1].path).string();
    entries[2].path = (w.tmp / "gone.exe").string();
    write_manifest(w.tmp / "partial.jsonl", entries);
    const auto r = cli({"-q", "extract", "--manifest", (w.tmp / "partial.jsonl").string(), "--out",
                        (w.tmp / "p.pesf").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("gone.exe") != std::string::npos);
    CHECK(read_cache(w.tmp / "p.pesf").rows() == 2);
}

TEST_CASE("extract with an unreadable manifest exits 1") {
    auto& w = workspace();
    const auto r = cli({"extract", "--manifest", (w.tmp / "none.jsonl").string(), "--out", (w.tmp / "x.pesf").string()});
    CHECK(r.code == 1);
    const auto err = json_lines(r.err);
    REQUIRE_FALSE(err.empty());
    CHECK(err.back()["error"] == "IoError");
}

TEST_CASE("train, predict and evaluate") {
    auto& w = workspace();
    const auto bi = w.tmp / "bi";
    const auto bi2 = w.tmp / "bi2";
    const auto bench = w.tmp / "bench";
    const std::vector<std::string> common{"--cache", w.cache.string(), "--manifest", w.manifest.string()};
    auto train = [&](const std::string& task, const std::filesystem::path& out) {
        std::vector<std::string> args{"-q", "--seed", "42", "train", "--task", task, "--out", out.string()};
        args.insert(args.end(), common.begin(), common.end());
        return cli(args);
    };

    REQUIRE(train("bilayer", bi).code == 0);
    CHECK(std::filesystem::exists(bi / "stage1.model.json"));
    CHECK(std::filesystem::exists(bi / "stage2.model.json"));
    CHECK(std::filesystem::exists(bi / "train_log.json"));

    REQUIRE(train("bilayer", bi2).code == 0);
    CHECK(slurp(bi / "bundle.json") == slurp(bi2 / "bundle.json"));
    CHECK(slurp(bi / "stage2.model.json") == slurp(bi2 / "stage2.model.json"));

    REQUIRE(train("benchmark", bench).code == 0);

    SUBCASE("predict") {
        const auto entries = ingest_manifest(w.manifest).entries;
        std::string benign, rans;
        for (const auto& e : entries) {
            if (benign.empty() && e.label == SampleLabel::benign) benign = (w.corpus / e.path).string();
            if (rans.empty() && e.family == Family::ransomware) rans = (w.corpus / e.path).string();
        }
        const auto r = cli({"predict", "--bundle", bi.string(), "--input", benign, "--input", rans});
        CHECK(r.code == 0);
        const auto lines = json_lines(r.out);
        REQUIRE(lines.size() == 2);
        CHECK(lines[0]["label"] == "benign");
        CHECK(lines[0]["ransomware_score"] == 0.0);
        CHECK(lines[1]["label"] == "ransomware");

        const auto none = cli({"predict", "--bundle", bi.string()});
        CHECK(none.code == 0);
        CHECK(none.out.empty());

        const auto missing = cli({"predict", "--bundle", bi.string(), "--input", (w.tmp / "nope.exe").string()});
        CHECK(missing.code == 2);
        CHECK(json_lines(missing.out).at(0).contains("error"));
    }
    SUBCASE("evaluate") {
        const auto out1 = w.tmp / "eval1";
        const auto out2 = w.tmp / "eval2";
        auto evaluate = [&](const std::filesystem::path& out, const std::filesystem::path& cache) {
            return cli({"-q", "evaluate", "--bundle", bi.string(), "--bundle", bench.string(), "--cache",
                        cache.string(), "--manifest", w.manifest.string(), "--out", out.string()});
        };
        const auto r = evaluate(out1, w.cache);
        CHECK(r.code == 0);
        CHECK(r.out.find("bilayer") != std::string::npos);
        CHECK(r.out.find("benchmark") != std::string::npos);
        CHECK(evaluate(out2, w.cache).code == 0);
        CHECK(slurp(out1 / "report.json") == slurp(out2 / "report.json"));

        const auto gray = w.tmp / "g_eval.pesf";
        REQUIRE(cli({"-q", "extract", "--manifest", w.manifest.string(), "--mode", "grayscale", "--out",
                     gray.string()}).code == 0);
        const auto bad = evaluate(w.tmp / "eval3", gray);
        CHECK(bad.code == 1);
        CHECK(json_lines(bad.err).back()["error"] == "SchemaMismatch");
    }
}

TEST_CASE("families without backdoors fail with InsufficientClass") {
    auto& w = workspace();
    auto entries = ingest_manifest(w.manifest).entries;
    std::erase_if(entries, [](const ManifestEntry& e) { return e.family == Family::backdoor; });
    for (auto& e : entries) e.path = (w.corpus / e.path).string();
    write_manifest(w.tmp / "nobackdoor.jsonl", entries);
    const auto r = cli({"-q", "train", "--task", "families", "--cache", w.cache.string(), "--manifest",
                        (w.tmp / "nobackdoor.jsonl").string(), "--out", (w.tmp / "fam").string()});
    CHECK(r.code == 1);
    CHECK(json_lines(r.err).back()["error"] == "InsufficientClass");
}

TEST_CASE("the installed binary reports exit codes") {
    testing::TempDir tmp("clibin");
    const std::string bin = PESENTRY_CLI;
    auto run = [](const std::string& cmd) {
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run(bin + " --help > /dev/null") == 0);
    CHECK(run(bin + " -q synth --out " + (tmp / "c").string() + " --per-class 1") == 0);
    CHECK(std::filesystem::exists(tmp / "c" / "manifest.jsonl"));
    CHECK(run(bin + " extract --manifest " + (tmp / "none.jsonl").string() + " --out " + (tmp / "x").string() +
              " 2> /dev/null") == 1);
}
