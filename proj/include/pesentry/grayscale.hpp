// pesentry - static PE malware/ransomware detection toolkit
// Byte-plot grayscale rendering resized to 64x64.

#pragma once

#include "pesentry/digest.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace pesentry {

inline constexpr std::size_t kImageSide = 64;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

struct GrayscaleImage {
    std::array<std::uint8_t, kImagePixels> pixels{};
    Sha256 source_sha256{};

    std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * kImageSide + col]; }
    bool operator==(const GrayscaleImage&) const = default;
};

/// Row width for a file of `size` bytes, from the byte-plot size table
/// (<=10 KiB -> 32, <=30 KiB -> 64, ... , >1000 KiB -> 1024).
std::size_t grayscale_width(std::size_t size);

/// Throws EmptyInput for empty data.
GrayscaleImage extract_grayscale(std::span<const std::uint8_t> bytes);
GrayscaleImage extract_grayscale(const RawBinary& raw);

/// Area-average (box filter) resize of a width x height 8-bit image to 64x64,
/// rounding half up. Exact integer arithmetic.
std::array<std::uint8_t, kImagePixels> box_resize(std::span<const std::uint8_t> src,
                                                  std::size_t width, std::size_t height);

} // namespace pesentry
