// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/grayscale.hpp"

#include "pesentry/error.hpp"

#include <algorithm>
#include <vector>

namespace pesentry {

namespace {

struct Tap {
    std::size_t source;
    std::uint64_t weight;
};

/// Overlaps between each of the 64 output cells and the `n` source cells along
/// one axis, measured in units where a source cell is 64 long and an output
/// cell is `n` long.
std::vector<std::vector<Tap>> axis_taps(std::size_t n) {
    std::vector<std::vector<Tap>> taps(kImageSide);
    for (std::size_t j = 0; j < kImageSide; ++j) {
        const std::uint64_t lo = j * n;
        const std::uint64_t hi = (j + 1) * n;
        for (std::size_t x = lo / kImageSide; x < n && x * kImageSide < hi; ++x) {
            const std::uint64_t a = std::max<std::uint64_t>(lo, x * kImageSide);
            const std::uint64_t b = std::min<std::uint64_t>(hi, (x + 1) * kImageSide);
            if (b > a) taps[j].push_back({x, b - a});
        }
    }
    return taps;
}

} // namespace

std::size_t grayscale_width(std::size_t size) {
    constexpr std::size_t kib = 1024;
    if (size <= 10 * kib) return 32;
    if (size <= 30 * kib) return 64;
    if (size <= 60 * kib) return 128;
    if (size <= 100 * kib) return 256;
    if (size <= 200 * kib) return 384;
    if (size <= 500 * kib) return 512;
    if (size <= 1000 * kib) return 768;
    return 1024;
}

std::array<std::uint8_t, kImagePixels> box_resize(std::span<const std::uint8_t> src,
                                                  std::size_t width, std::size_t height) {
    const auto col_taps = axis_taps(width);
    const auto row_taps = axis_taps(height);
    const std::uint64_t area = static_cast<std::uint64_t>(width) * height;
    std::array<std::uint8_t, kImagePixels> out{};
    for (std::size_t i = 0; i < kImageSide; ++i) {
        for (std::size_t j = 0; j < kImageSide; ++j) {
            std::uint64_t sum = 0;
            for (const Tap& ry : row_taps[i]) {
                const std::uint8_t* row = src.data() + ry.source * width;
                std::uint64_t row_sum = 0;
                for (const Tap& cx : col_taps[j]) row_sum += cx.weight * row[cx.source];
                sum += ry.weight * row_sum;
            }
            out[i * kImageSide + j] = static_cast<std::uint8_t>((2 * sum + area) / (2 * area));
        }
    }
    return out;
}

GrayscaleImage extract_grayscale(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw EmptyInput("grayscale transform needs at least one byte");
    const std::size_t width = grayscale_width(bytes.size());
    const std::size_t height = (bytes.size() + width - 1) / width;
    std::vector<std::uint8_t> padded(width * height, 0);
    std::copy(bytes.begin(), bytes.end(), padded.begin());

    GrayscaleImage img;
    img.pixels = box_resize(padded, width, height);
    img.source_sha256 = sha256(bytes);
    return img;
}

GrayscaleImage extract_grayscale(const RawBinary& raw) {
    return extract_grayscale(std::span<const std::uint8_t>(raw.bytes));
}

} // namespace pesentry
