// pesentry - static PE malware/ransomware detection toolkit
// Tolerant PE32/PE32+ parser.
//
// parse_pe never throws on malformed input. Files that cannot be parsed come
// back as ParseDegraded with whatever headers were recovered; downstream
// extraction then zeroes every structure-derived feature and keeps only the
// byte-level groups.

#pragma once

#include "pesentry/digest.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pesentry {

inline constexpr std::size_t kMaxSections = 96;
inline constexpr std::size_t kNumDataDirectories = 16;

inline constexpr std::uint16_t kMagicPe32 = 0x10B;
inline constexpr std::uint16_t kMagicPe32Plus = 0x20B;

/// Data directory slots in canonical order.
enum class DirectoryIndex : std::size_t {
    Export = 0,
    Import,
    Resource,
    Exception,
    Security,
    BaseReloc,
    Debug,
    Architecture,
    GlobalPtr,
    Tls,
    LoadConfig,
    BoundImport,
    Iat,
    DelayImport,
    ClrRuntime,
    Reserved,
};

std::string_view directory_name(std::size_t index);

struct CoffHeader {
    std::uint16_t machine = 0;
    std::uint32_t number_of_sections = 0;
    std::uint32_t timestamp = 0;
    std::uint32_t pointer_to_symbol_table = 0;
    std::uint32_t number_of_symbols = 0;
    std::uint16_t size_of_optional_header = 0;
    std::uint16_t characteristics = 0;

    bool operator==(const CoffHeader&) const = default;
};

struct VersionPair {
    std::uint16_t major = 0;
    std::uint16_t minor = 0;
    bool operator==(const VersionPair&) const = default;
};

struct OptionalHeaderInfo {
    std::uint16_t magic = 0;
    VersionPair linker;
    std::uint32_t size_of_code = 0;
    std::uint32_t size_of_initialized_data = 0;
    std::uint32_t size_of_uninitialized_data = 0;
    std::uint32_t address_of_entry_point = 0;
    std::uint32_t base_of_code = 0;
    std::uint64_t image_base = 0;
    std::uint32_t section_alignment = 0;
    std::uint32_t file_alignment = 0;
    VersionPair os;
    VersionPair image;
    VersionPair subsystem_version;
    std::uint32_t size_of_image = 0;
    std::uint32_t size_of_headers = 0;
    std::uint16_t subsystem = 0;
    std::uint16_t dll_characteristics = 0;
    std::uint64_t size_of_stack_reserve = 0;
    std::uint64_t size_of_stack_commit = 0;
    std::uint64_t size_of_heap_reserve = 0;
    std::uint64_t size_of_heap_commit = 0;
    std::uint32_t number_of_rva_and_sizes = 0;

    bool operator==(const OptionalHeaderInfo&) const = default;
};

struct SectionInfo {
    std::string name;
    std::uint32_t virtual_address = 0;
    std::uint32_t virtual_size = 0;
    std::uint32_t pointer_to_raw_data = 0;
    /// Bytes actually readable from the file; may be less than the declared size.
    std::uint32_t raw_size = 0;
    double entropy = 0.0;
    std::uint32_t characteristics = 0;
    bool is_entry_section = false;

    bool operator==(const SectionInfo&) const = default;
};

struct ImportEntry {
    std::string library; ///< lower-cased DLL name
    std::string symbol;  ///< function name, or "ordinal<N>"
    bool operator==(const ImportEntry&) const = default;
};

struct DataDirectory {
    std::string_view name;
    std::uint32_t virtual_address = 0;
    std::uint32_t size = 0;
    bool operator==(const DataDirectory&) const = default;
};

struct ParsedPe {
    bool dos_ok = false;
    CoffHeader coff;
    OptionalHeaderInfo optional;
    std::vector<SectionInfo> sections;
    std::vector<ImportEntry> imports;
    std::vector<std::string> exports;
    std::array<DataDirectory, kNumDataDirectories> data_directories{};
    std::uint64_t overlay_size = 0;

    ParsedPe();
    bool operator==(const ParsedPe&) const = default;
    const DataDirectory& directory(DirectoryIndex idx) const {
        return data_directories[static_cast<std::size_t>(idx)];
    }
};

enum class DegradeReason {
    not_mz,
    truncated_dos_header,
    truncated_pe_header,
    bad_pe_signature,
    truncated_optional_header,
    bad_optional_magic,
    truncated_section_table,
    too_many_sections,
};

std::string_view to_string(DegradeReason reason);

/// Partial parse: `partial` holds whatever was recoverable before `reason` hit.
struct ParseDegraded {
    DegradeReason reason;
    ParsedPe partial;
    bool operator==(const ParseDegraded&) const = default;
};

using ParseResult = std::variant<ParsedPe, ParseDegraded>;

ParseResult parse_pe(std::span<const std::uint8_t> bytes);
inline ParseResult parse_pe(const RawBinary& raw) { return parse_pe(raw.bytes); }

/// Fully parsed PE, or nullptr when degraded.
inline const ParsedPe* parsed_or_null(const ParseResult& r) { return std::get_if<ParsedPe>(&r); }
const ParsedPe* parsed_or_null(ParseResult&&) = delete;

/// Shannon entropy in bits over byte-value frequencies; 0 for empty input.
double section_entropy(std::span<const std::uint8_t> bytes);

} // namespace pesentry
