// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/features.hpp"
#include "pesentry/synth.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <set>

using namespace pesentry;

namespace {

std::map<std::string, Sha256> tree_digests(const std::filesystem::path& root) {
    std::map<std::string, Sha256> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = sha256(read_file(e.path()));
    }
    return out;
}

} // namespace

TEST_CASE("markers are distinct feature columns") {
    std::set<std::size_t> columns;
    for (auto c : kSynthClasses) {
        const auto idx = marker_feature_index(c);
        CHECK(idx >= feature_group("imports").offset + kImportLibraryBuckets);
        CHECK(idx < feature_group("exports").offset);
        columns.insert(idx);
    }
    CHECK(columns.size() == kSynthClasses.size());
}

TEST_CASE("every sample parses and carries only its own marker") {
    Rng rng(42);
    for (auto c : kSynthClasses) {
        for (int i = 0; i < 20; ++i) {
            const Bytes b = synth_sample(c, rng);
            CAPTURE(to_string(c));
            const ParseResult parsed = parse_pe(b);
    const ParsedPe* pe = parsed_or_null(parsed);
            REQUIRE(pe != nullptr);
            const FeatureVector fv = extract_feature_vector(b);
            for (auto other : kSynthClasses) {
                CHECK((fv.values[marker_feature_index(other)] > 0) == (other == c));
            }
        }
    }
}

TEST_CASE("manifest stubs") {
    CHECK(synth_manifest_stub(SynthClass::benign).label == SampleLabel::benign);
    CHECK_FALSE(synth_manifest_stub(SynthClass::benign).family);
    CHECK(synth_manifest_stub(SynthClass::ransomware).family == Family::ransomware);
    CHECK(synth_manifest_stub(SynthClass::other).family == Family::other);
}

TEST_CASE("empty profile") {
    testing::TempDir tmp("synth0");
    const auto corpus = generate_synthetic_corpus(SynthProfile{}, 42, tmp.path());
    CHECK(corpus.entries.empty());
    CHECK(read_file(corpus.manifest).empty());
}

TEST_CASE("seeded corpus is valid and reproducible") {
    testing::TempDir a("synthA"), b("synthB");
    const auto profile = SynthProfile::uniform(100);
    const auto ca = generate_synthetic_corpus(profile, 42, a.path());
    generate_synthetic_corpus(profile, 42, b.path());
    CHECK(ca.entries.size() == 600);
    CHECK(tree_digests(a.path()) == tree_digests(b.path()));

    const auto manifest = ingest_manifest(ca.manifest);
    CHECK(manifest.entries.size() == 600);
    CHECK(manifest.duplicates == 0);
    for (const auto& e : manifest.entries) {
        CAPTURE(e.path);
        CHECK(std::holds_alternative<ParsedPe>(parse_pe(read_file(manifest.resolve(e)))));
    }
}

TEST_CASE("samples depend only on seed, class and index") {
    testing::TempDir small("synthS"), big("synthL");
    generate_synthetic_corpus(SynthProfile{2, 0, 0, 0, 3, 0}, 9, small.path());
    generate_synthetic_corpus(SynthProfile{4, 1, 1, 1, 4, 1}, 9, big.path());
    const auto s = tree_digests(small.path() / "files");
    const auto l = tree_digests(big.path() / "files");
    for (const auto& [name, digest] : s) {
        CAPTURE(name);
        REQUIRE(l.count(name));
        CHECK(l.at(name) == digest);
    }
}
