// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/error.hpp"
#include "pesentry/grayscale.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace pesentry;

namespace {

const nlohmann::json& oracle() {
    static const nlohmann::json j = testing::fixture_json("feature_oracle.json");
    return j;
}

bool all_equal(const std::array<std::uint8_t, kImagePixels>& px, std::uint8_t v) {
    return std::all_of(px.begin(), px.end(), [v](std::uint8_t p) { return p == v; });
}

} // namespace

TEST_CASE("width table boundaries") {
    const std::size_t k = 1024;
    CHECK(grayscale_width(1) == 32);
    CHECK(grayscale_width(10 * k) == 32);
    CHECK(grayscale_width(10 * k + 1) == 64);
    CHECK(grayscale_width(30 * k) == 64);
    CHECK(grayscale_width(30 * k + 1) == 128);
    CHECK(grayscale_width(60 * k + 1) == 256);
    CHECK(grayscale_width(100 * k + 1) == 384);
    CHECK(grayscale_width(200 * k + 1) == 512);
    CHECK(grayscale_width(500 * k + 1) == 768);
    CHECK(grayscale_width(1000 * k) == 768);
    CHECK(grayscale_width(1000 * k + 1) == 1024);
}

TEST_CASE("box resize matches the block-sum oracle") {
    for (const auto& c : oracle()["resize"]) {
        CAPTURE(c["name"].get<std::string>());
        const auto src = c["src"].get<std::vector<std::uint8_t>>();
        const auto want = c["expected"].get<std::vector<int>>();
        const auto got = box_resize(src, c["width"].get<std::size_t>(), c["height"].get<std::size_t>());
        REQUIRE(want.size() == kImagePixels);
        for (std::size_t i = 0; i < kImagePixels; ++i) {
            CAPTURE(i);
            CHECK(static_cast<int>(got[i]) == want[i]);
        }
    }
}

TEST_CASE("file images match the oracle") {
    for (const auto& [name, want] : oracle()["grayscale"].items()) {
        CAPTURE(name);
        const Bytes bytes = read_file(testing::fixture("blob_" + name + ".bin"));
        CHECK(grayscale_width(bytes.size()) == want["width"].get<std::size_t>());
        const auto img = extract_grayscale(bytes);
        const auto px = want["pixels"].get<std::vector<int>>();
        REQUIRE(px.size() == kImagePixels);
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < kImagePixels; ++i) mismatches += static_cast<int>(img.pixels[i]) != px[i];
        CHECK(mismatches == 0);
        CHECK(img.source_sha256 == sha256(bytes));
    }
}

TEST_CASE("constant inputs give constant images") {
    CHECK(all_equal(extract_grayscale(Bytes(4096, 0x80)).pixels, 128));
    CHECK(all_equal(extract_grayscale(Bytes(1024, 0)).pixels, 0));
    // sizes that are multiples of the row width have no padding row
    for (std::uint8_t c : {1, 77, 200, 255}) {
        CHECK(all_equal(extract_grayscale(Bytes(32 * 64, c)).pixels, c));
        CHECK(all_equal(extract_grayscale(Bytes(64 * 300, c)).pixels, c));
    }
}

TEST_CASE("tiny and empty inputs") {
    const auto one = extract_grayscale(Bytes{200});
    CHECK(one.pixels.size() == kImagePixels);
    CHECK(one.at(0, 0) == 200);
    CHECK(one.at(0, 1) == 200);
    CHECK(one.at(0, 2) == 0);
    CHECK_THROWS_AS(extract_grayscale(Bytes{}), EmptyInput);
}

TEST_CASE("deterministic") {
    Bytes b(70000);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>((i * i) >> 3);
    CHECK(extract_grayscale(b) == extract_grayscale(b));
}
