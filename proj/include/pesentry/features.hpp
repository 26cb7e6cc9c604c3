// pesentry - static PE malware/ransomware detection toolkit
// 2,381-dimension static feature vector.
//
// Groups, in order: byte histogram (256), byte-entropy histogram (256),
// strings (104), general (10), header (62), section (255), imports (1280),
// exports (128), data directories (30). Token-valued fields are hashed with
// FNV-1a 64 and bucketed by `hash % width`.

#pragma once

#include "pesentry/digest.hpp"
#include "pesentry/pe_parser.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace pesentry {

inline constexpr std::size_t kFeatureWidth = 2381;
inline constexpr int kFeatureSchemaVersion = 1;

struct FeatureGroup {
    std::string_view name;
    std::size_t offset;
    std::size_t width;
};

inline constexpr std::array<FeatureGroup, 9> kFeatureLayout = {{
    {"byte_histogram", 0, 256},
    {"byte_entropy", 256, 256},
    {"strings", 512, 104},
    {"general", 616, 10},
    {"header", 626, 62},
    {"section", 688, 255},
    {"imports", 943, 1280},
    {"exports", 2223, 128},
    {"data_directories", 2351, 30},
}};

/// Lookup by group name; throws std::out_of_range for unknown names.
const FeatureGroup& feature_group(std::string_view name);

struct FeatureVector {
    std::array<double, kFeatureWidth> values{};
    int schema_version = kFeatureSchemaVersion;

    std::span<const double> group(std::string_view name) const {
        const auto& g = feature_group(name);
        return std::span<const double>(values).subspan(g.offset, g.width);
    }
    bool operator==(const FeatureVector&) const = default;
};

std::uint64_t fnv1a64(std::string_view token);
inline std::size_t hash_bucket(std::string_view token, std::size_t width) {
    return static_cast<std::size_t>(fnv1a64(token) % width);
}

// Sub-layout of the string group.
namespace string_slot {
inline constexpr std::size_t count = 0;
inline constexpr std::size_t avg_length = 1;
inline constexpr std::size_t char_histogram = 2; // 96 bins, chars 0x20..0x7F
inline constexpr std::size_t char_entropy = 98;
inline constexpr std::size_t paths = 99;
inline constexpr std::size_t urls = 100;
inline constexpr std::size_t registry = 101;
inline constexpr std::size_t mz = 102;
inline constexpr std::size_t total_chars = 103;
} // namespace string_slot

// Sub-layout of the header group.
namespace header_slot {
inline constexpr std::size_t timestamp = 0;
inline constexpr std::size_t machine = 1;             // 10 buckets
inline constexpr std::size_t characteristics = 11;    // 10 buckets
inline constexpr std::size_t subsystem = 21;          // 10 buckets
inline constexpr std::size_t dll_characteristics = 31; // 10 buckets
inline constexpr std::size_t magic = 41;              // [PE32, PE32+]
inline constexpr std::size_t image_version = 43;
inline constexpr std::size_t linker_version = 45;
inline constexpr std::size_t os_version = 47;
inline constexpr std::size_t subsystem_version = 49;
inline constexpr std::size_t size_of_code = 51;
inline constexpr std::size_t size_of_headers = 52;
inline constexpr std::size_t size_of_heap_commit = 53;
inline constexpr std::size_t size_of_initialized_data = 54;
inline constexpr std::size_t size_of_uninitialized_data = 55;
inline constexpr std::size_t address_of_entry_point = 56;
inline constexpr std::size_t base_of_code = 57;
inline constexpr std::size_t section_alignment = 58;
inline constexpr std::size_t file_alignment = 59;
inline constexpr std::size_t size_of_stack_reserve = 60;
inline constexpr std::size_t size_of_heap_reserve = 61;
} // namespace header_slot

// Sub-layout of the section group.
namespace section_slot {
inline constexpr std::size_t count = 0;
inline constexpr std::size_t zero_raw_size = 1;
inline constexpr std::size_t empty_name = 2;
inline constexpr std::size_t read_execute = 3;
inline constexpr std::size_t writable = 4;
inline constexpr std::size_t size_by_name = 5;      // 50 buckets
inline constexpr std::size_t entropy_by_name = 55;  // 50 buckets
inline constexpr std::size_t vsize_by_name = 105;   // 50 buckets
inline constexpr std::size_t entry_name = 155;      // 50 buckets
inline constexpr std::size_t entry_flags = 205;     // 50 buckets
inline constexpr std::size_t buckets = 50;
} // namespace section_slot

inline constexpr std::size_t kImportLibraryBuckets = 256;
inline constexpr std::size_t kImportSymbolBuckets = 1024;

std::array<double, 256> extract_byte_histogram(std::span<const std::uint8_t> bytes);
std::array<double, 256> extract_byte_entropy_histogram(std::span<const std::uint8_t> bytes);
std::array<double, 104> extract_string_features(std::span<const std::uint8_t> bytes);
std::array<double, 10> extract_general_info(const ParseResult& pe, std::span<const std::uint8_t> bytes);
std::array<double, 62> extract_header_info(const ParseResult& pe);
std::array<double, 255> extract_section_features(const ParseResult& pe);
std::array<double, 1280> extract_import_features(const ParseResult& pe);
std::array<double, 128> extract_export_features(const ParseResult& pe);
std::array<double, 30> extract_data_directories(const ParseResult& pe);

FeatureVector extract_feature_vector(std::span<const std::uint8_t> bytes);
inline FeatureVector extract_feature_vector(const RawBinary& raw) {
    return extract_feature_vector(raw.bytes);
}

/// Token names used by the header/section hashed blocks.
std::string_view machine_name(std::uint16_t machine);
std::string_view subsystem_name(std::uint16_t subsystem);
std::vector<std::string_view> coff_characteristic_names(std::uint16_t flags);
std::vector<std::string_view> dll_characteristic_names(std::uint16_t flags);
std::vector<std::string_view> section_characteristic_names(std::uint32_t flags);

} // namespace pesentry
