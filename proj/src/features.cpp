// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pesentry {

namespace {

constexpr std::size_t kEntropyWindow = 2048;
constexpr std::size_t kEntropyStride = 1024;
constexpr std::size_t kMinTailWindow = 256;
constexpr std::size_t kMinStringLength = 5;

template <std::size_t N>
void normalize(std::array<double, N>& hist) {
    double total = 0.0;
    for (double v : hist) total += v;
    if (total <= 0.0) return;
    for (double& v : hist) v /= total;
}

void window_into(std::span<const std::uint8_t> window, std::array<double, 256>& hist) {
    std::array<std::size_t, 16> nibble_counts{};
    for (std::uint8_t b : window) ++nibble_counts[b >> 4];
    const double h = section_entropy(window);
    const std::size_t bin = std::min<std::size_t>(15, static_cast<std::size_t>(h * 2.0));
    for (std::size_t n = 0; n < 16; ++n) {
        hist[bin * 16 + n] += static_cast<double>(nibble_counts[n]);
    }
}

bool ci_starts_with(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        char a = s[i];
        if (a >= 'A' && a <= 'Z') a = static_cast<char>(a + 32);
        if (a != prefix[i]) return false;
    }
    return true;
}

bool ci_contains(std::string_view s, std::string_view needle) {
    if (needle.size() > s.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= s.size(); ++i) {
        if (ci_starts_with(s.substr(i), needle)) return true;
    }
    return false;
}

void add_bucket(std::span<double> block, std::string_view token, double amount = 1.0) {
    block[hash_bucket(token, block.size())] += amount;
}

struct FlagName {
    std::uint32_t bit;
    std::string_view name;
};

constexpr FlagName kCoffFlags[] = {
    {0x0001, "RELOCS_STRIPPED"},    {0x0002, "EXECUTABLE_IMAGE"},   {0x0004, "LINE_NUMS_STRIPPED"},
    {0x0008, "LOCAL_SYMS_STRIPPED"}, {0x0010, "AGGRESSIVE_WS_TRIM"}, {0x0020, "LARGE_ADDRESS_AWARE"},
    {0x0080, "BYTES_REVERSED_LO"},  {0x0100, "CHARA_32BIT_MACHINE"}, {0x0200, "DEBUG_STRIPPED"},
    {0x0400, "REMOVABLE_RUN_FROM_SWAP"}, {0x0800, "NET_RUN_FROM_SWAP"}, {0x1000, "SYSTEM"},
    {0x2000, "DLL"},                {0x4000, "UP_SYSTEM_ONLY"},     {0x8000, "BYTES_REVERSED_HI"},
};

constexpr FlagName kDllFlags[] = {
    {0x0020, "HIGH_ENTROPY_VA"}, {0x0040, "DYNAMIC_BASE"},    {0x0080, "FORCE_INTEGRITY"},
    {0x0100, "NX_COMPAT"},       {0x0200, "NO_ISOLATION"},    {0x0400, "NO_SEH"},
    {0x0800, "NO_BIND"},         {0x1000, "APPCONTAINER"},    {0x2000, "WDM_DRIVER"},
    {0x4000, "GUARD_CF"},        {0x8000, "TERMINAL_SERVER_AWARE"},
};

constexpr FlagName kSectionFlags[] = {
    {0x00000020, "CNT_CODE"},           {0x00000040, "CNT_INITIALIZED_DATA"},
    {0x00000080, "CNT_UNINITIALIZED_DATA"}, {0x00000200, "LNK_INFO"},
    {0x00000800, "LNK_REMOVE"},         {0x00001000, "LNK_COMDAT"},
    {0x00008000, "GPREL"},              {0x01000000, "LNK_NRELOC_OVFL"},
    {0x02000000, "MEM_DISCARDABLE"},    {0x04000000, "MEM_NOT_CACHED"},
    {0x08000000, "MEM_NOT_PAGED"},      {0x10000000, "MEM_SHARED"},
    {0x20000000, "MEM_EXECUTE"},        {0x40000000, "MEM_READ"},
    {0x80000000, "MEM_WRITE"},
};

template <std::size_t N>
std::vector<std::string_view> flag_names(const FlagName (&table)[N], std::uint32_t flags) {
    std::vector<std::string_view> out;
    for (const auto& f : table) {
        if (flags & f.bit) out.push_back(f.name);
    }
    return out;
}

constexpr std::uint32_t kSectionExecute = 0x20000000;
constexpr std::uint32_t kSectionRead = 0x40000000;
constexpr std::uint32_t kSectionWrite = 0x80000000;

template <std::size_t N, std::size_t M>
void put(std::array<double, N>& out, std::size_t at, const std::array<double, M>& group) {
    std::copy(group.begin(), group.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
}

} // namespace

const FeatureGroup& feature_group(std::string_view name) {
    for (const auto& g : kFeatureLayout) {
        if (g.name == name) return g;
    }
    throw std::out_of_range("unknown feature group: " + std::string(name));
}

std::uint64_t fnv1a64(std::string_view token) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : token) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string_view machine_name(std::uint16_t machine) {
    switch (machine) {
    case 0x0000: return "UNKNOWN";
    case 0x014c: return "I386";
    case 0x0166: return "R4000";
    case 0x01a2: return "SH3";
    case 0x01a6: return "SH4";
    case 0x01c0: return "ARM";
    case 0x01c4: return "ARMNT";
    case 0x0200: return "IA64";
    case 0x8664: return "AMD64";
    case 0xaa64: return "ARM64";
    case 0x0ebc: return "EBC";
    default: return "OTHER";
    }
}

std::string_view subsystem_name(std::uint16_t subsystem) {
    switch (subsystem) {
    case 0: return "UNKNOWN";
    case 1: return "NATIVE";
    case 2: return "WINDOWS_GUI";
    case 3: return "WINDOWS_CUI";
    case 5: return "OS2_CUI";
    case 7: return "POSIX_CUI";
    case 9: return "WINDOWS_CE_GUI";
    case 10: return "EFI_APPLICATION";
    case 11: return "EFI_BOOT_SERVICE_DRIVER";
    case 12: return "EFI_RUNTIME_DRIVER";
    case 13: return "EFI_ROM";
    case 14: return "XBOX";
    case 16: return "WINDOWS_BOOT_APPLICATION";
    default: return "OTHER";
    }
}

std::vector<std::string_view> coff_characteristic_names(std::uint16_t flags) {
    return flag_names(kCoffFlags, flags);
}

std::vector<std::string_view> dll_characteristic_names(std::uint16_t flags) {
    return flag_names(kDllFlags, flags);
}

std::vector<std::string_view> section_characteristic_names(std::uint32_t flags) {
    return flag_names(kSectionFlags, flags);
}

std::array<double, 256> extract_byte_histogram(std::span<const std::uint8_t> bytes) {
    std::array<double, 256> hist{};
    for (std::uint8_t b : bytes) hist[b] += 1.0;
    normalize(hist);
    return hist;
}

std::array<double, 256> extract_byte_entropy_histogram(std::span<const std::uint8_t> bytes) {
    std::array<double, 256> hist{};
    const std::size_t n = bytes.size();
    if (n == 0) return hist;
    if (n < kEntropyWindow) {
        window_into(bytes, hist);
    } else {
        std::size_t start = 0;
        for (; start + kEntropyWindow <= n; start += kEntropyStride) {
            window_into(bytes.subspan(start, kEntropyWindow), hist);
        }
        // Bytes past the last full window form one tail window if long enough.
        const std::size_t covered = start - kEntropyStride + kEntropyWindow;
        if (n - covered >= kMinTailWindow) window_into(bytes.subspan(covered), hist);
    }
    normalize(hist);
    return hist;
}

std::array<double, 104> extract_string_features(std::span<const std::uint8_t> bytes) {
    std::array<double, 104> out{};
    std::array<double, 96> chars{};
    double count = 0, total = 0, paths = 0, urls = 0, registry = 0, mz = 0;

    auto finish_run = [&](std::size_t begin, std::size_t end) {
        const std::size_t len = end - begin;
        if (len < kMinStringLength) return;
        std::string_view run(reinterpret_cast<const char*>(bytes.data()) + begin, len);
        count += 1;
        total += static_cast<double>(len);
        for (char c : run) chars[static_cast<unsigned char>(c) - 0x20] += 1;
        if (ci_starts_with(run, "c:\\")) paths += 1;
        if (ci_contains(run, "http://") || ci_contains(run, "https://")) urls += 1;
        if (run.find("HKEY_") != std::string_view::npos) registry += 1;
        if (run.starts_with("MZ")) mz += 1;
    };

    std::size_t run_start = 0;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const bool printable = bytes[i] >= 0x20 && bytes[i] <= 0x7E;
        if (!printable) {
            finish_run(run_start, i);
            run_start = i + 1;
        }
    }
    finish_run(run_start, bytes.size());

    if (count == 0) return out;
    double entropy = 0;
    for (double c : chars) {
        if (c == 0) continue;
        const double p = c / total;
        entropy -= p * std::log2(p);
    }
    for (double& c : chars) c /= total;

    out[string_slot::count] = count;
    out[string_slot::avg_length] = total / count;
    std::copy(chars.begin(), chars.end(), out.begin() + string_slot::char_histogram);
    out[string_slot::char_entropy] = entropy;
    out[string_slot::paths] = paths;
    out[string_slot::urls] = urls;
    out[string_slot::registry] = registry;
    out[string_slot::mz] = mz;
    out[string_slot::total_chars] = total;
    return out;
}

std::array<double, 10> extract_general_info(const ParseResult& result,
                                            std::span<const std::uint8_t> bytes) {
    std::array<double, 10> out{};
    out[0] = static_cast<double>(bytes.size());
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    auto present = [pe](DirectoryIndex d) { return pe->directory(d).size > 0 ? 1.0 : 0.0; };
    out[1] = pe->optional.size_of_image;
    out[2] = present(DirectoryIndex::Debug);
    out[3] = static_cast<double>(pe->exports.size());
    out[4] = static_cast<double>(pe->imports.size());
    out[5] = present(DirectoryIndex::BaseReloc);
    out[6] = present(DirectoryIndex::Resource);
    out[7] = present(DirectoryIndex::Security);
    out[8] = present(DirectoryIndex::Tls);
    out[9] = pe->coff.number_of_symbols;
    return out;
}

std::array<double, 62> extract_header_info(const ParseResult& result) {
    using namespace header_slot;
    std::array<double, 62> out{};
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    const std::span<double> all(out);
    const auto& c = pe->coff;
    const auto& o = pe->optional;

    out[timestamp] = c.timestamp;
    add_bucket(all.subspan(machine, 10), machine_name(c.machine));
    for (auto name : coff_characteristic_names(c.characteristics)) {
        add_bucket(all.subspan(characteristics, 10), name);
    }
    add_bucket(all.subspan(subsystem, 10), subsystem_name(o.subsystem));
    for (auto name : dll_characteristic_names(o.dll_characteristics)) {
        add_bucket(all.subspan(dll_characteristics, 10), name);
    }
    out[magic] = o.magic == kMagicPe32 ? 1.0 : 0.0;
    out[magic + 1] = o.magic == kMagicPe32Plus ? 1.0 : 0.0;
    out[image_version] = o.image.major;
    out[image_version + 1] = o.image.minor;
    out[linker_version] = o.linker.major;
    out[linker_version + 1] = o.linker.minor;
    out[os_version] = o.os.major;
    out[os_version + 1] = o.os.minor;
    out[subsystem_version] = o.subsystem_version.major;
    out[subsystem_version + 1] = o.subsystem_version.minor;
    out[size_of_code] = o.size_of_code;
    out[size_of_headers] = o.size_of_headers;
    out[size_of_heap_commit] = static_cast<double>(o.size_of_heap_commit);
    out[size_of_initialized_data] = o.size_of_initialized_data;
    out[size_of_uninitialized_data] = o.size_of_uninitialized_data;
    out[address_of_entry_point] = o.address_of_entry_point;
    out[base_of_code] = o.base_of_code;
    out[section_alignment] = o.section_alignment;
    out[file_alignment] = o.file_alignment;
    out[size_of_stack_reserve] = static_cast<double>(o.size_of_stack_reserve);
    out[size_of_heap_reserve] = static_cast<double>(o.size_of_heap_reserve);
    return out;
}

std::array<double, 255> extract_section_features(const ParseResult& result) {
    using namespace section_slot;
    std::array<double, 255> out{};
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    const std::span<double> all(out);

    out[count] = static_cast<double>(pe->sections.size());
    for (const auto& s : pe->sections) {
        if (s.raw_size == 0) out[zero_raw_size] += 1;
        if (s.name.empty()) out[empty_name] += 1;
        if ((s.characteristics & kSectionRead) && (s.characteristics & kSectionExecute)) {
            out[read_execute] += 1;
        }
        if (s.characteristics & kSectionWrite) out[writable] += 1;

        add_bucket(all.subspan(size_by_name, buckets), s.name, s.raw_size);
        add_bucket(all.subspan(entropy_by_name, buckets), s.name, s.entropy);
        add_bucket(all.subspan(vsize_by_name, buckets), s.name, s.virtual_size);
        if (s.is_entry_section) {
            add_bucket(all.subspan(entry_name, buckets), s.name);
            for (auto flag : section_characteristic_names(s.characteristics)) {
                add_bucket(all.subspan(entry_flags, buckets), flag);
            }
        }
    }
    return out;
}

std::array<double, 1280> extract_import_features(const ParseResult& result) {
    std::array<double, 1280> out{};
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    const std::span<double> all(out);
    const auto libraries = all.subspan(0, kImportLibraryBuckets);
    const auto symbols = all.subspan(kImportLibraryBuckets, kImportSymbolBuckets);
    std::string pair;
    for (const auto& imp : pe->imports) {
        add_bucket(libraries, imp.library);
        pair.assign(imp.library).append(":").append(imp.symbol);
        add_bucket(symbols, pair);
    }
    return out;
}

std::array<double, 128> extract_export_features(const ParseResult& result) {
    std::array<double, 128> out{};
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    for (const auto& name : pe->exports) add_bucket(out, name);
    return out;
}

std::array<double, 30> extract_data_directories(const ParseResult& result) {
    std::array<double, 30> out{};
    const ParsedPe* pe = parsed_or_null(result);
    if (!pe) return out;
    for (std::size_t i = 0; i < 15; ++i) {
        out[2 * i] = pe->data_directories[i].virtual_address;
        out[2 * i + 1] = pe->data_directories[i].size;
    }
    return out;
}

FeatureVector extract_feature_vector(std::span<const std::uint8_t> bytes) {
    FeatureVector fv;
    const ParseResult pe = parse_pe(bytes);
    auto& v = fv.values;
    put(v, kFeatureLayout[0].offset, extract_byte_histogram(bytes));
    put(v, kFeatureLayout[1].offset, extract_byte_entropy_histogram(bytes));
    put(v, kFeatureLayout[2].offset, extract_string_features(bytes));
    put(v, kFeatureLayout[3].offset, extract_general_info(pe, bytes));
    put(v, kFeatureLayout[4].offset, extract_header_info(pe));
    put(v, kFeatureLayout[5].offset, extract_section_features(pe));
    put(v, kFeatureLayout[6].offset, extract_import_features(pe));
    put(v, kFeatureLayout[7].offset, extract_export_features(pe));
    put(v, kFeatureLayout[8].offset, extract_data_directories(pe));
    return fv;
}

} // namespace pesentry
