// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/pe_parser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pesentry {

namespace {

constexpr std::array<std::string_view, kNumDataDirectories> kDirectoryNames = {
    "export",       "import",     "resource",     "exception", "security",  "basereloc",
    "debug",        "architecture", "globalptr",  "tls",       "loadconfig", "boundimport",
    "iat",          "delayimport", "clrruntime",  "reserved",
};

constexpr std::size_t kMaxImportDescriptors = 4096;
constexpr std::size_t kMaxThunksPerLibrary = 16384;
constexpr std::size_t kMaxImports = 65536;
constexpr std::size_t kMaxExportNames = 65536;
constexpr std::size_t kMaxNameLength = 512;

/// Bounds-checked little-endian reader; out-of-range reads report failure.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t size() const { return data_.size(); }

    bool has(std::uint64_t offset, std::uint64_t len) const {
        return offset <= data_.size() && len <= data_.size() - offset;
    }

    template <typename T>
    std::optional<T> read(std::uint64_t offset) const {
        if (!has(offset, sizeof(T))) return std::nullopt;
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<T>(data_[offset + i]) << (8 * i));
        }
        return v;
    }

    template <typename T>
    T read_or_zero(std::uint64_t offset) const {
        return read<T>(offset).value_or(T{0});
    }

    /// NUL-terminated string starting at offset, nullopt if it runs off the end.
    std::optional<std::string> cstring(std::uint64_t offset, std::size_t max_len) const {
        if (offset >= data_.size()) return std::nullopt;
        std::string out;
        for (std::uint64_t i = offset; i < data_.size() && out.size() < max_len; ++i) {
            std::uint8_t c = data_[i];
            if (c == 0) return out;
            out.push_back(c >= 0x20 && c < 0x7F ? static_cast<char>(c) : '?');
        }
        if (out.size() == max_len) return out;
        return std::nullopt;
    }

    std::span<const std::uint8_t> slice(std::uint64_t offset, std::uint64_t len) const {
        if (offset >= data_.size()) return {};
        len = std::min<std::uint64_t>(len, data_.size() - offset);
        return data_.subspan(offset, len);
    }

private:
    std::span<const std::uint8_t> data_;
};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
        return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c);
    });
    return s;
}

std::string decode_section_name(std::span<const std::uint8_t> raw) {
    std::string name;
    for (std::uint8_t c : raw) {
        if (c == 0) break;
        name.push_back(c >= 0x20 && c < 0x7F ? static_cast<char>(c) : '?');
    }
    return name;
}

struct SectionSpan {
    std::uint32_t va;
    std::uint32_t extent;
    std::uint32_t raw_ptr;
};

/// Maps RVAs to file offsets through the section table.
class RvaMapper {
public:
    RvaMapper(const std::vector<SectionSpan>& spans, std::uint32_t size_of_headers)
        : spans_(spans), headers_(size_of_headers) {}

    std::optional<std::uint64_t> offset(std::uint64_t rva) const {
        for (const auto& s : spans_) {
            if (rva >= s.va && rva < static_cast<std::uint64_t>(s.va) + s.extent) {
                return static_cast<std::uint64_t>(s.raw_ptr) + (rva - s.va);
            }
        }
        if (rva < headers_) return rva;
        return std::nullopt;
    }

private:
    const std::vector<SectionSpan>& spans_;
    std::uint32_t headers_;
};

void parse_imports(const Reader& r, const RvaMapper& map, bool pe32plus, ParsedPe& pe) {
    const auto& dir = pe.directory(DirectoryIndex::Import);
    if (dir.virtual_address == 0 || dir.size == 0) return;
    auto base = map.offset(dir.virtual_address);
    if (!base) return;

    const std::size_t thunk_size = pe32plus ? 8 : 4;
    const std::uint64_t ordinal_flag = pe32plus ? (1ULL << 63) : (1ULL << 31);

    for (std::size_t d = 0; d < kMaxImportDescriptors; ++d) {
        const std::uint64_t desc = *base + d * 20;
        if (!r.has(desc, 20)) return;
        const std::uint32_t original_first_thunk = r.read_or_zero<std::uint32_t>(desc);
        const std::uint32_t name_rva = r.read_or_zero<std::uint32_t>(desc + 12);
        const std::uint32_t first_thunk = r.read_or_zero<std::uint32_t>(desc + 16);
        if (original_first_thunk == 0 && name_rva == 0 && first_thunk == 0) return;

        auto name_off = map.offset(name_rva);
        if (!name_off) continue;
        auto library = r.cstring(*name_off, kMaxNameLength);
        if (!library || library->empty()) continue;
        std::string lib = lower(*library);

        const std::uint32_t thunk_rva = original_first_thunk != 0 ? original_first_thunk : first_thunk;
        auto thunk_off = map.offset(thunk_rva);
        if (!thunk_off) continue;

        for (std::size_t t = 0; t < kMaxThunksPerLibrary; ++t) {
            const std::uint64_t at = *thunk_off + t * thunk_size;
            std::uint64_t thunk;
            if (pe32plus) {
                auto v = r.read<std::uint64_t>(at);
                if (!v) break;
                thunk = *v;
            } else {
                auto v = r.read<std::uint32_t>(at);
                if (!v) break;
                thunk = *v;
            }
            if (thunk == 0) break;
            if (pe.imports.size() >= kMaxImports) return;
            if (thunk & ordinal_flag) {
                pe.imports.push_back({lib, "ordinal" + std::to_string(thunk & 0xFFFF)});
                continue;
            }
            auto hint_off = map.offset(thunk & 0x7FFFFFFF);
            if (!hint_off) break;
            auto symbol = r.cstring(*hint_off + 2, kMaxNameLength);
            if (!symbol) break;
            pe.imports.push_back({lib, std::move(*symbol)});
        }
    }
}

void parse_exports(const Reader& r, const RvaMapper& map, ParsedPe& pe) {
    const auto& dir = pe.directory(DirectoryIndex::Export);
    if (dir.virtual_address == 0 || dir.size == 0) return;
    auto base = map.offset(dir.virtual_address);
    if (!base || !r.has(*base, 40)) return;
    const std::uint32_t number_of_names = r.read_or_zero<std::uint32_t>(*base + 24);
    const std::uint32_t names_rva = r.read_or_zero<std::uint32_t>(*base + 32);
    auto names_off = map.offset(names_rva);
    if (!names_off) return;
    const std::size_t count = std::min<std::size_t>(number_of_names, kMaxExportNames);
    for (std::size_t i = 0; i < count; ++i) {
        auto name_rva = r.read<std::uint32_t>(*names_off + 4 * i);
        if (!name_rva) return;
        auto name_off = map.offset(*name_rva);
        if (!name_off) continue;
        auto name = r.cstring(*name_off, kMaxNameLength);
        if (name) pe.exports.push_back(std::move(*name));
    }
}

} // namespace

std::string_view directory_name(std::size_t index) {
    return index < kDirectoryNames.size() ? kDirectoryNames[index] : std::string_view{};
}

ParsedPe::ParsedPe() {
    for (std::size_t i = 0; i < kNumDataDirectories; ++i) {
        data_directories[i].name = kDirectoryNames[i];
    }
}

std::string_view to_string(DegradeReason reason) {
    switch (reason) {
    case DegradeReason::not_mz: return "not_mz";
    case DegradeReason::truncated_dos_header: return "truncated_dos_header";
    case DegradeReason::truncated_pe_header: return "truncated_pe_header";
    case DegradeReason::bad_pe_signature: return "bad_pe_signature";
    case DegradeReason::truncated_optional_header: return "truncated_optional_header";
    case DegradeReason::bad_optional_magic: return "bad_optional_magic";
    case DegradeReason::truncated_section_table: return "truncated_section_table";
    case DegradeReason::too_many_sections: return "too_many_sections";
    }
    return "unknown";
}

double section_entropy(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) return 0.0;
    std::array<std::size_t, 256> counts{};
    for (std::uint8_t b : bytes) ++counts[b];
    const double n = static_cast<double>(bytes.size());
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return std::clamp(h, 0.0, 8.0);
}

ParseResult parse_pe(std::span<const std::uint8_t> bytes) {
    const Reader r(bytes);
    ParsedPe pe;
    auto degrade = [&pe](DegradeReason reason) -> ParseResult {
        return ParseDegraded{reason, std::move(pe)};
    };

    if (r.size() < 2 || bytes[0] != 'M' || bytes[1] != 'Z') return degrade(DegradeReason::not_mz);
    if (r.size() < 64) return degrade(DegradeReason::truncated_dos_header);
    pe.dos_ok = true;

    // e_lfanew == 0 would put the NT headers on top of the DOS magic.
    const std::uint32_t e_lfanew = r.read_or_zero<std::uint32_t>(0x3C);
    if (e_lfanew == 0 || !r.has(e_lfanew, 24)) return degrade(DegradeReason::truncated_pe_header);
    if (std::memcmp(bytes.data() + e_lfanew, "PE\0\0", 4) != 0) {
        return degrade(DegradeReason::bad_pe_signature);
    }

    const std::uint64_t coff = static_cast<std::uint64_t>(e_lfanew) + 4;
    pe.coff.machine = r.read_or_zero<std::uint16_t>(coff);
    pe.coff.number_of_sections = r.read_or_zero<std::uint16_t>(coff + 2);
    pe.coff.timestamp = r.read_or_zero<std::uint32_t>(coff + 4);
    pe.coff.pointer_to_symbol_table = r.read_or_zero<std::uint32_t>(coff + 8);
    pe.coff.number_of_symbols = r.read_or_zero<std::uint32_t>(coff + 12);
    pe.coff.size_of_optional_header = r.read_or_zero<std::uint16_t>(coff + 16);
    pe.coff.characteristics = r.read_or_zero<std::uint16_t>(coff + 18);

    const std::uint64_t opt = coff + 20;
    auto magic = r.read<std::uint16_t>(opt);
    if (!magic) return degrade(DegradeReason::truncated_optional_header);
    if (*magic != kMagicPe32 && *magic != kMagicPe32Plus) {
        return degrade(DegradeReason::bad_optional_magic);
    }
    const bool pe32plus = *magic == kMagicPe32Plus;
    const std::uint64_t fixed_size = pe32plus ? 112 : 96;
    if (!r.has(opt, fixed_size)) return degrade(DegradeReason::truncated_optional_header);

    auto& o = pe.optional;
    o.magic = *magic;
    o.linker = {bytes[opt + 2], bytes[opt + 3]};
    o.size_of_code = r.read_or_zero<std::uint32_t>(opt + 4);
    o.size_of_initialized_data = r.read_or_zero<std::uint32_t>(opt + 8);
    o.size_of_uninitialized_data = r.read_or_zero<std::uint32_t>(opt + 12);
    o.address_of_entry_point = r.read_or_zero<std::uint32_t>(opt + 16);
    o.base_of_code = r.read_or_zero<std::uint32_t>(opt + 20);
    o.image_base = pe32plus ? r.read_or_zero<std::uint64_t>(opt + 24)
                            : r.read_or_zero<std::uint32_t>(opt + 28);
    o.section_alignment = r.read_or_zero<std::uint32_t>(opt + 32);
    o.file_alignment = r.read_or_zero<std::uint32_t>(opt + 36);
    o.os = {r.read_or_zero<std::uint16_t>(opt + 40), r.read_or_zero<std::uint16_t>(opt + 42)};
    o.image = {r.read_or_zero<std::uint16_t>(opt + 44), r.read_or_zero<std::uint16_t>(opt + 46)};
    o.subsystem_version = {r.read_or_zero<std::uint16_t>(opt + 48),
                           r.read_or_zero<std::uint16_t>(opt + 50)};
    o.size_of_image = r.read_or_zero<std::uint32_t>(opt + 56);
    o.size_of_headers = r.read_or_zero<std::uint32_t>(opt + 60);
    o.subsystem = r.read_or_zero<std::uint16_t>(opt + 68);
    o.dll_characteristics = r.read_or_zero<std::uint16_t>(opt + 70);
    std::uint64_t dirs_at;
    if (pe32plus) {
        o.size_of_stack_reserve = r.read_or_zero<std::uint64_t>(opt + 72);
        o.size_of_stack_commit = r.read_or_zero<std::uint64_t>(opt + 80);
        o.size_of_heap_reserve = r.read_or_zero<std::uint64_t>(opt + 88);
        o.size_of_heap_commit = r.read_or_zero<std::uint64_t>(opt + 96);
        o.number_of_rva_and_sizes = r.read_or_zero<std::uint32_t>(opt + 108);
        dirs_at = opt + 112;
    } else {
        o.size_of_stack_reserve = r.read_or_zero<std::uint32_t>(opt + 72);
        o.size_of_stack_commit = r.read_or_zero<std::uint32_t>(opt + 76);
        o.size_of_heap_reserve = r.read_or_zero<std::uint32_t>(opt + 80);
        o.size_of_heap_commit = r.read_or_zero<std::uint32_t>(opt + 84);
        o.number_of_rva_and_sizes = r.read_or_zero<std::uint32_t>(opt + 92);
        dirs_at = opt + 96;
    }

    // Directories beyond NumberOfRvaAndSizes or the declared header size stay zero.
    const std::uint64_t opt_end = opt + pe.coff.size_of_optional_header;
    const std::size_t ndirs = std::min<std::size_t>(o.number_of_rva_and_sizes, kNumDataDirectories);
    for (std::size_t i = 0; i < ndirs; ++i) {
        const std::uint64_t at = dirs_at + 8 * i;
        if (at + 8 > opt_end || !r.has(at, 8)) break;
        pe.data_directories[i].virtual_address = r.read_or_zero<std::uint32_t>(at);
        pe.data_directories[i].size = r.read_or_zero<std::uint32_t>(at + 4);
    }

    const std::uint64_t table = opt_end;
    const std::size_t declared = pe.coff.number_of_sections;
    if (declared > kMaxSections) return degrade(DegradeReason::too_many_sections);
    const std::size_t to_read = declared;
    std::vector<SectionSpan> spans;
    std::uint64_t raw_end = o.size_of_headers;
    for (std::size_t i = 0; i < to_read; ++i) {
        const std::uint64_t at = table + 40 * i;
        if (!r.has(at, 40)) return degrade(DegradeReason::truncated_section_table);
        SectionInfo s;
        s.name = decode_section_name(bytes.subspan(at, 8));
        s.virtual_size = r.read_or_zero<std::uint32_t>(at + 8);
        s.virtual_address = r.read_or_zero<std::uint32_t>(at + 12);
        const std::uint32_t declared_raw = r.read_or_zero<std::uint32_t>(at + 16);
        s.pointer_to_raw_data = r.read_or_zero<std::uint32_t>(at + 20);
        s.characteristics = r.read_or_zero<std::uint32_t>(at + 36);
        auto body = r.slice(s.pointer_to_raw_data, declared_raw);
        s.raw_size = static_cast<std::uint32_t>(body.size());
        s.entropy = section_entropy(body);
        const std::uint32_t extent = std::max(s.virtual_size, declared_raw);
        const std::uint64_t ep = o.address_of_entry_point;
        s.is_entry_section =
            ep >= s.virtual_address && ep < static_cast<std::uint64_t>(s.virtual_address) + extent;
        spans.push_back({s.virtual_address, extent, s.pointer_to_raw_data});
        if (s.raw_size > 0) {
            raw_end = std::max<std::uint64_t>(raw_end,
                                              static_cast<std::uint64_t>(s.pointer_to_raw_data) + s.raw_size);
        }
        pe.sections.push_back(std::move(s));
    }
    // Only the first section containing the entry point is flagged.
    bool seen_entry = false;
    for (auto& s : pe.sections) {
        if (s.is_entry_section && seen_entry) s.is_entry_section = false;
        seen_entry = seen_entry || s.is_entry_section;
    }
    pe.overlay_size = r.size() > raw_end ? r.size() - raw_end : 0;


    const RvaMapper map(spans, o.size_of_headers);
    parse_imports(r, map, pe32plus, pe);
    parse_exports(r, map, pe);
    return pe;
}

} // namespace pesentry
