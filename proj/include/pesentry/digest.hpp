// pesentry - static PE malware/ransomware detection toolkit
// SHA-256, hex and base64 helpers, plus whole-file I/O.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pesentry {

using Bytes = std::vector<std::uint8_t>;
using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::span<const std::uint8_t> data);
Sha256 sha256(std::string_view text);

std::string to_hex(std::span<const std::uint8_t> data);
inline std::string to_hex(const Sha256& d) { return to_hex(std::span<const std::uint8_t>(d)); }
/// Throws FormatError on odd length or non-hex characters.
Sha256 sha256_from_hex(std::string_view hex);

std::string base64_encode(std::span<const std::uint8_t> data);
/// Throws FormatError on malformed input.
Bytes base64_decode(std::string_view text);

/// Throws IoError when the file cannot be opened.
Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file(const std::filesystem::path& path, std::string_view text);

/// Sample in raw form with its content digest.
struct RawBinary {
    Bytes bytes;
    std::string source_path;
    Sha256 sha256{};

    static RawBinary from_bytes(Bytes bytes, std::string source_path = {});
    static RawBinary from_file(const std::filesystem::path& path);
};

} // namespace pesentry
