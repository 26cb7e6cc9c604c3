// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/digest.hpp"
#include "pesentry/error.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace pesentry;

TEST_CASE("sha256 known vectors") {
    CHECK(to_hex(sha256(std::string_view(""))) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(to_hex(sha256(std::string_view("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(to_hex(sha256(std::string_view("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"))) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("hex round trip and rejection") {
    const Sha256 d = sha256(std::string_view("pesentry"));
    CHECK(sha256_from_hex(to_hex(d)) == d);
    std::string upper = to_hex(d);
    for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    CHECK(sha256_from_hex(upper) == d);
    CHECK_THROWS_AS(sha256_from_hex("abc"), FormatError);
    CHECK_THROWS_AS(sha256_from_hex(std::string(64, 'g')), FormatError);
    CHECK_THROWS_AS(sha256_from_hex(std::string(62, 'a')), FormatError);
}

TEST_CASE("base64") {
    auto enc = [](std::string_view s) {
        return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foobar") == "Zm9vYmFy");

    Bytes all(256);
    for (int i = 0; i < 256; ++i) all[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    CHECK(base64_decode(base64_encode(all)) == all);
    CHECK_THROWS_AS(base64_decode("Zm9v!"), FormatError);
}

TEST_CASE("file io") {
    testing::TempDir tmp("digest");
    const Bytes data{1, 2, 3, 0, 255};
    write_file(tmp / "a.bin", data);
    CHECK(read_file(tmp / "a.bin") == data);

    auto raw = RawBinary::from_file(tmp / "a.bin");
    CHECK(raw.bytes == data);
    CHECK(raw.sha256 == sha256(data));
    CHECK_THROWS_AS(read_file(tmp / "missing.bin"), IoError);
}
