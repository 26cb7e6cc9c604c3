// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/synth.hpp"

#include "pesentry/features.hpp"
#include "pesentry/pe_parser.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace fs = std::filesystem;

namespace pesentry {

// --- PE writer -----------------------------------------------------------

namespace {

std::uint32_t align_up(std::uint64_t v, std::uint32_t a) {
    return static_cast<std::uint32_t>((v + a - 1) / a * a);
}

class Writer {
public:
    explicit Writer(Bytes& out) : out_(out) {}
    template <typename T>
    void put(std::size_t off, T v) {
        if (out_.size() < off + sizeof(T)) out_.resize(off + sizeof(T));
        std::memcpy(out_.data() + off, &v, sizeof(T));
    }
    void put_bytes(std::size_t off, std::span<const std::uint8_t> b) {
        if (out_.size() < off + b.size()) out_.resize(off + b.size());
        std::copy(b.begin(), b.end(), out_.begin() + static_cast<std::ptrdiff_t>(off));
    }
    void put_str(std::size_t off, std::string_view s) {
        put_bytes(off, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    }

private:
    Bytes& out_;
};

Bytes build_import_section(const std::vector<ImportSpec>& imports, std::uint32_t base_rva, bool pe32_plus,
                           std::uint32_t& iat_rva, std::uint32_t& iat_size) {
    const std::size_t thunk = pe32_plus ? 8 : 4;
    const std::size_t desc_size = (imports.size() + 1) * 20;

    std::size_t thunk_bytes = 0;
    for (const auto& lib : imports) thunk_bytes += (lib.symbols.size() + 1) * thunk;

    const std::size_t ilt_off = desc_size;
    const std::size_t iat_off = ilt_off + thunk_bytes;
    std::size_t names_off = iat_off + thunk_bytes;

    Bytes out;
    Writer w(out);
    out.resize(names_off);

    std::size_t ilt = ilt_off, iat = iat_off;
    for (std::size_t i = 0; i < imports.size(); ++i) {
        const auto& lib = imports[i];
        const std::size_t d = i * 20;
        w.put<std::uint32_t>(d + 0, base_rva + static_cast<std::uint32_t>(ilt));
        w.put<std::uint32_t>(d + 12, base_rva + static_cast<std::uint32_t>(names_off));
        w.put<std::uint32_t>(d + 16, base_rva + static_cast<std::uint32_t>(iat));
        w.put_str(names_off, lib.library);
        names_off += lib.library.size() + 1;
        out.resize(names_off);

        for (const auto& sym : lib.symbols) {
            std::uint64_t value;
            if (!sym.empty() && sym[0] == '#') {
                const std::uint64_t ord = std::stoul(sym.substr(1));
                value = ord | (pe32_plus ? (1ULL << 63) : (1ULL << 31));
            } else {
                names_off = (names_off + 1) & ~std::size_t{1};
                value = base_rva + names_off;
                w.put<std::uint16_t>(names_off, 0);
                w.put_str(names_off + 2, sym);
                names_off += 2 + sym.size() + 1;
                out.resize(names_off);
            }
            if (pe32_plus) {
                w.put<std::uint64_t>(ilt, value);
                w.put<std::uint64_t>(iat, value);
            } else {
                w.put<std::uint32_t>(ilt, static_cast<std::uint32_t>(value));
                w.put<std::uint32_t>(iat, static_cast<std::uint32_t>(value));
            }
            ilt += thunk;
            iat += thunk;
        }
        ilt += thunk; // null terminators already zero
        iat += thunk;
    }
    iat_rva = base_rva + static_cast<std::uint32_t>(iat_off);
    iat_size = static_cast<std::uint32_t>(thunk_bytes);
    return out;
}

Bytes build_export_section(std::vector<std::string> names, std::string_view dll_name, std::uint32_t base_rva,
                           std::uint32_t function_rva, std::uint32_t timestamp) {
    std::sort(names.begin(), names.end());
    const auto n = static_cast<std::uint32_t>(names.size());
    const std::uint32_t funcs = 40, name_ptrs = funcs + 4 * n, ords = name_ptrs + 4 * n;
    std::size_t str_off = ords + 2 * n;

    Bytes out;
    Writer w(out);
    out.resize(str_off);
    w.put<std::uint32_t>(4, timestamp);
    w.put<std::uint32_t>(12, base_rva + static_cast<std::uint32_t>(str_off));
    w.put_str(str_off, dll_name);
    str_off += dll_name.size() + 1;
    out.resize(str_off);
    w.put<std::uint32_t>(16, 1);
    w.put<std::uint32_t>(20, n);
    w.put<std::uint32_t>(24, n);
    w.put<std::uint32_t>(28, base_rva + funcs);
    w.put<std::uint32_t>(32, base_rva + name_ptrs);
    w.put<std::uint32_t>(36, base_rva + ords);
    for (std::uint32_t i = 0; i < n; ++i) {
        w.put<std::uint32_t>(funcs + 4 * i, function_rva + 16 * i);
        w.put<std::uint32_t>(name_ptrs + 4 * i, base_rva + static_cast<std::uint32_t>(str_off));
        w.put<std::uint16_t>(ords + 2 * i, static_cast<std::uint16_t>(i));
        w.put_str(str_off, names[i]);
        str_off += names[i].size() + 1;
        out.resize(str_off);
    }
    return out;
}

constexpr std::string_view kDosStub = "This program cannot be run in DOS mode.\r\r\n$";

} // namespace

Bytes build_pe(const PeSpec& spec) {
    if (spec.file_alignment == 0 || spec.section_alignment == 0) throw std::invalid_argument("zero alignment");

    std::vector<SectionSpec> sections = spec.sections;
    const bool has_imports = !spec.imports.empty();
    const bool has_exports = !spec.exports.empty();
    const std::size_t n_sections = sections.size() + (has_imports ? 1 : 0) + (has_exports ? 1 : 0);
    if (n_sections == 0) throw std::invalid_argument("PE needs at least one section");
    if (!sections.empty() && spec.entry_section >= sections.size()) throw std::invalid_argument("entry section out of range");

    constexpr std::uint32_t kLfanew = 0x80;
    const std::uint32_t opt_size = spec.pe32_plus ? 240 : 224;
    const std::uint32_t table_off = kLfanew + 4 + 20 + opt_size;
    const std::uint32_t size_of_headers = align_up(table_off + 40 * n_sections, spec.file_alignment);

    struct Placed {
        std::uint32_t rva, vsize, raw_ptr, raw_size;
    };
    std::vector<Placed> placed;
    std::uint32_t rva = align_up(size_of_headers, spec.section_alignment);
    std::uint32_t file_off = size_of_headers;

    auto place = [&](const SectionSpec& s) {
        Placed p;
        p.rva = rva;
        p.vsize = s.virtual_size ? s.virtual_size : static_cast<std::uint32_t>(s.content.size());
        p.raw_size = s.content.empty() ? 0 : align_up(s.content.size(), spec.file_alignment);
        p.raw_ptr = p.raw_size ? file_off : 0;
        file_off += p.raw_size;
        rva = align_up(std::max<std::uint64_t>({p.vsize, p.raw_size, 1}) + rva, spec.section_alignment);
        placed.push_back(p);
    };
    for (const auto& s : sections) place(s);

    std::array<std::pair<std::uint32_t, std::uint32_t>, 16> dirs{};
    if (has_imports) {
        std::uint32_t iat_rva = 0, iat_size = 0;
        SectionSpec s{spec.import_section_name, scn::kData,
                      build_import_section(spec.imports, rva, spec.pe32_plus, iat_rva, iat_size), 0};
        dirs[static_cast<std::size_t>(DirectoryIndex::Import)] = {rva, static_cast<std::uint32_t>((spec.imports.size() + 1) * 20)};
        dirs[static_cast<std::size_t>(DirectoryIndex::Iat)] = {iat_rva, iat_size};
        sections.push_back(std::move(s));
        place(sections.back());
    }
    if (has_exports) {
        const std::uint32_t fn_rva = sections.empty() ? rva : placed[spec.entry_section].rva;
        SectionSpec s{spec.export_section_name, scn::kRdata,
                      build_export_section(spec.exports, spec.export_dll_name, rva, fn_rva, spec.timestamp), 0};
        dirs[static_cast<std::size_t>(DirectoryIndex::Export)] = {rva, static_cast<std::uint32_t>(s.content.size())};
        sections.push_back(std::move(s));
        place(sections.back());
    }
    for (const auto& [dir, idx] : spec.directory_sections) {
        if (dir >= 16 || idx >= spec.sections.size()) throw std::invalid_argument("bad directory mapping");
        dirs[dir] = {placed[idx].rva, placed[idx].vsize};
    }
    const std::uint32_t size_of_image = rva;

    std::uint32_t size_code = 0, size_init = 0, size_uninit = 0, base_code = 0;
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto c = sections[i].characteristics;
        if (c & scn::kCode) {
            size_code += placed[i].raw_size;
            if (!base_code) base_code = placed[i].rva;
        }
        if (c & scn::kInitData) size_init += placed[i].raw_size;
        if (c & scn::kUninitData) size_uninit += placed[i].vsize;
    }
    const std::uint32_t entry = spec.sections.empty() ? 0 : placed[spec.entry_section].rva + spec.entry_offset;

    Bytes out(size_of_headers, 0);
    Writer w(out);
    w.put_str(0, "MZ");
    w.put<std::uint16_t>(2, 0x90);
    w.put<std::uint16_t>(4, 3);
    w.put<std::uint16_t>(8, 4);
    w.put<std::uint16_t>(0x18, 0x40);
    w.put<std::uint32_t>(0x3c, kLfanew);
    w.put_str(0x4e, kDosStub);

    w.put_str(kLfanew, std::string_view("PE\0\0", 4));
    const std::size_t coff = kLfanew + 4;
    w.put<std::uint16_t>(coff + 0, spec.machine);
    w.put<std::uint16_t>(coff + 2, static_cast<std::uint16_t>(n_sections));
    w.put<std::uint32_t>(coff + 4, spec.timestamp);
    w.put<std::uint32_t>(coff + 12, spec.number_of_symbols);
    w.put<std::uint16_t>(coff + 16, static_cast<std::uint16_t>(opt_size));
    w.put<std::uint16_t>(coff + 18, spec.characteristics);

    const std::size_t o = coff + 20;
    w.put<std::uint16_t>(o + 0, spec.pe32_plus ? 0x20b : 0x10b);
    w.put<std::uint8_t>(o + 2, spec.linker_major);
    w.put<std::uint8_t>(o + 3, spec.linker_minor);
    w.put<std::uint32_t>(o + 4, size_code);
    w.put<std::uint32_t>(o + 8, size_init);
    w.put<std::uint32_t>(o + 12, size_uninit);
    w.put<std::uint32_t>(o + 16, entry);
    w.put<std::uint32_t>(o + 20, base_code);
    if (spec.pe32_plus) {
        w.put<std::uint64_t>(o + 24, spec.image_base);
    } else {
        w.put<std::uint32_t>(o + 24, 0); // base of data
        w.put<std::uint32_t>(o + 28, static_cast<std::uint32_t>(spec.image_base));
    }
    w.put<std::uint32_t>(o + 32, spec.section_alignment);
    w.put<std::uint32_t>(o + 36, spec.file_alignment);
    w.put<std::uint16_t>(o + 40, spec.os_major);
    w.put<std::uint16_t>(o + 42, spec.os_minor);
    w.put<std::uint16_t>(o + 44, spec.image_major);
    w.put<std::uint16_t>(o + 46, spec.image_minor);
    w.put<std::uint16_t>(o + 48, spec.subsystem_major);
    w.put<std::uint16_t>(o + 50, spec.subsystem_minor);
    w.put<std::uint32_t>(o + 56, size_of_image);
    w.put<std::uint32_t>(o + 60, size_of_headers);
    w.put<std::uint16_t>(o + 68, spec.subsystem);
    w.put<std::uint16_t>(o + 70, spec.dll_characteristics);
    std::size_t dir_off;
    if (spec.pe32_plus) {
        w.put<std::uint64_t>(o + 72, spec.stack_reserve);
        w.put<std::uint64_t>(o + 80, spec.stack_commit);
        w.put<std::uint64_t>(o + 88, spec.heap_reserve);
        w.put<std::uint64_t>(o + 96, spec.heap_commit);
        w.put<std::uint32_t>(o + 108, 16);
        dir_off = o + 112;
    } else {
        w.put<std::uint32_t>(o + 72, static_cast<std::uint32_t>(spec.stack_reserve));
        w.put<std::uint32_t>(o + 76, static_cast<std::uint32_t>(spec.stack_commit));
        w.put<std::uint32_t>(o + 80, static_cast<std::uint32_t>(spec.heap_reserve));
        w.put<std::uint32_t>(o + 84, static_cast<std::uint32_t>(spec.heap_commit));
        w.put<std::uint32_t>(o + 92, 16);
        dir_off = o + 96;
    }
    for (std::size_t d = 0; d < 16; ++d) {
        w.put<std::uint32_t>(dir_off + 8 * d, dirs[d].first);
        w.put<std::uint32_t>(dir_off + 8 * d + 4, dirs[d].second);
    }

    for (std::size_t i = 0; i < sections.size(); ++i) {
        const std::size_t h = table_off + 40 * i;
        char name[8] = {};
        std::memcpy(name, sections[i].name.data(), std::min<std::size_t>(8, sections[i].name.size()));
        w.put_bytes(h, {reinterpret_cast<const std::uint8_t*>(name), 8});
        w.put<std::uint32_t>(h + 8, placed[i].vsize);
        w.put<std::uint32_t>(h + 12, placed[i].rva);
        w.put<std::uint32_t>(h + 16, placed[i].raw_size);
        w.put<std::uint32_t>(h + 20, placed[i].raw_ptr);
        w.put<std::uint32_t>(h + 36, sections[i].characteristics);
    }
    out.resize(size_of_headers, 0);

    for (std::size_t i = 0; i < sections.size(); ++i) {
        if (!placed[i].raw_size) continue;
        w.put_bytes(placed[i].raw_ptr, sections[i].content);
        out.resize(placed[i].raw_ptr + placed[i].raw_size, 0);
    }
    out.insert(out.end(), spec.overlay.begin(), spec.overlay.end());
    return out;
}

// --- synthetic classes ---------------------------------------------------

namespace {

using Pool = std::vector<ImportSpec>;

struct Marker {
    std::string_view library, symbol, token;
};

constexpr std::array<Marker, 6> kMarkers = {{
    {"comctl32.dll", "InitCommonControlsEx", "comctl32.dll:InitCommonControlsEx"},
    {"wininet.dll", "InternetOpenUrlA", "wininet.dll:InternetOpenUrlA"},
    {"netapi32.dll", "NetShareEnum", "netapi32.dll:NetShareEnum"},
    {"ws2_32.dll", "WSASocketA", "ws2_32.dll:WSASocketA"},
    {"advapi32.dll", "CryptEncrypt", "advapi32.dll:CryptEncrypt"},
    {"shlwapi.dll", "SHSetValueA", "shlwapi.dll:SHSetValueA"},
}};

const Pool& common_pool() {
    static const Pool p{{"kernel32.dll",
                         {"GetProcAddress", "LoadLibraryA", "GetModuleHandleA", "ExitProcess", "VirtualAlloc",
                          "VirtualFree", "CreateFileA", "ReadFile", "WriteFile", "CloseHandle", "GetLastError", "Sleep",
                          "GetTickCount", "HeapAlloc", "HeapFree", "GetProcessHeap"}}};
    return p;
}

const Pool& class_pool(SynthClass c) {
    static const std::array<Pool, 6> pools{{
        {{"user32.dll",
          {"MessageBoxA", "CreateWindowExA", "DefWindowProcA", "GetMessageA", "DispatchMessageA", "TranslateMessage",
           "ShowWindow", "UpdateWindow"}},
         {"gdi32.dll", {"BitBlt", "CreateFontA", "SelectObject", "DeleteObject"}},
         {"ole32.dll", {"CoInitialize", "CoCreateInstance"}}},
        {{"wininet.dll", {"InternetOpenA", "InternetReadFile", "InternetCloseHandle", "HttpSendRequestA"}},
         {"urlmon.dll", {"URLDownloadToFileA"}},
         {"kernel32.dll", {"WinExec", "CreateProcessA"}}},
        {{"netapi32.dll", {"NetServerEnum", "NetApiBufferFree"}},
         {"mpr.dll", {"WNetOpenEnumA", "WNetEnumResourceA"}},
         {"kernel32.dll", {"CopyFileA", "GetDriveTypeA", "GetLogicalDriveStringsA"}}},
        {{"ws2_32.dll", {"WSAStartup", "bind", "listen", "accept", "recv", "send", "closesocket"}},
         {"kernel32.dll", {"CreatePipe", "PeekNamedPipe"}}},
        {{"advapi32.dll", {"CryptAcquireContextA", "CryptGenKey", "CryptDestroyKey", "CryptImportKey"}},
         {"kernel32.dll", {"FindFirstFileW", "FindNextFileW", "MoveFileExW", "DeleteFileW", "GetLogicalDrives"}}},
        {{"shlwapi.dll", {"SHGetValueA", "PathFileExistsA"}},
         {"user32.dll", {"SetWindowsHookExA", "GetAsyncKeyState", "GetForegroundWindow"}}},
    }};
    return pools[static_cast<std::size_t>(c)];
}

const std::vector<std::string>& class_strings(SynthClass c) {
    static const std::array<std::vector<std::string>, 6> strings{{
        {"Copyright (C) Contoso Corporation. All rights reserved.", "FileDescription", "ProductVersion",
         "Microsoft Visual C++ Runtime Library", "Please select a file to open", "Settings saved successfully"},
        {"http://update.example-cdn.net/payload.bin", "Mozilla/4.0 (compatible; MSIE 8.0; Windows NT 6.1)",
         "C:\\Users\\Public\\svchost.exe", "https://login.example-bank.com/auth"},
        {"\\\\%s\\ADMIN$\\system32", "C:\\Windows\\System32\\drivers\\etc\\hosts", "autorun.inf",
         "[autorun] open=setup.exe", "copy to share failed"},
        {"cmd.exe /c %s", "HKEY_LOCAL_MACHINE\\SOFTWARE\\Microsoft\\Windows\\CurrentVersion\\Run",
         "listening on port %d", "reverse shell ready"},
        {"Your files have been encrypted!", "HOW_TO_DECRYPT_FILES.txt", "Send 0.5 bitcoin to the wallet below",
         "vssadmin delete shadows /all /quiet", "C:\\ProgramData\\key.bin", ".locked"},
        {"http://ads.example-track.com/click?id=", "HKEY_CURRENT_USER\\Software\\BrowserToolbar",
         "keylog_%04d.txt", "MZ-like embedded payload"},
    }};
    return strings[static_cast<std::size_t>(c)];
}

const std::vector<std::string>& generic_strings() {
    static const std::vector<std::string> s{"GetVersionExA", "runtime error ", "Unknown exception", "bad allocation",
                                            "kernel32.dll", "invalid argument", "string too long", "%s: %d"};
    return s;
}

bool chance(Rng& rng, double p) { return uniform_real(rng) < p; }

std::size_t range(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(uniform_index(rng, hi - lo + 1));
}

Bytes code_bytes(Rng& rng, std::size_t n) {
    static constexpr std::uint8_t ops[] = {0x55, 0x8b, 0xec, 0x83, 0xc4, 0x89, 0x45, 0xfc, 0xe8, 0xc3, 0x33, 0xc0,
                                           0x50, 0x51, 0x52, 0x53, 0x56, 0x57, 0x5d, 0x5e, 0x5f, 0x6a, 0x68, 0xff,
                                           0x15, 0x74, 0x75, 0xeb, 0x0f, 0x84, 0x85, 0x8d, 0x4d, 0x08, 0x0c, 0x10,
                                           0x00, 0x01, 0x04, 0x24, 0x3b, 0xc7, 0xcc, 0x90};
    Bytes b(n);
    for (auto& x : b)
        x = chance(rng, 0.08) ? static_cast<std::uint8_t>(rng()) : ops[uniform_index(rng, std::size(ops))];
    return b;
}

Bytes random_bytes(Rng& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

Bytes table_bytes(Rng& rng, std::size_t n) {
    Bytes b(n, 0);
    std::uint32_t v = static_cast<std::uint32_t>(uniform_index(rng, 4096));
    for (std::size_t i = 0; i + 4 <= n; i += 4) {
        v += static_cast<std::uint32_t>(uniform_index(rng, 16));
        std::memcpy(b.data() + i, &v, 4);
    }
    return b;
}

/// Empty root resource directory followed by filler.
Bytes resource_bytes(Rng& rng, std::size_t n) {
    Bytes b = table_bytes(rng, n);
    std::fill(b.begin(), b.begin() + 16, 0);
    return b;
}

/// Well-formed base relocation blocks (HIGHLOW entries) for the first code page(s).
Bytes reloc_bytes(Rng& rng, std::uint32_t first_page) {
    Bytes b;
    const std::size_t blocks = range(rng, 1, 3);
    for (std::size_t k = 0; k < blocks; ++k) {
        const std::size_t entries = 2 * range(rng, 4, 40);
        const std::uint32_t page = first_page + static_cast<std::uint32_t>(k) * 0x1000;
        const std::uint32_t size = static_cast<std::uint32_t>(8 + 2 * entries);
        const std::size_t at = b.size();
        b.resize(at + size);
        std::memcpy(b.data() + at, &page, 4);
        std::memcpy(b.data() + at + 4, &size, 4);
        std::uint16_t off = 0;
        for (std::size_t i = 0; i < entries; ++i) {
            off = static_cast<std::uint16_t>(off + 4 + 4 * uniform_index(rng, 8));
            const std::uint16_t e = static_cast<std::uint16_t>(0x3000 | (off & 0x0fff));
            std::memcpy(b.data() + at + 8 + 2 * i, &e, 2);
        }
    }
    return b;
}

/// Planted class strings (each with probability p_plant) and a few generic ones,
/// NUL-separated, padded to `n` with zeros.
Bytes text_bytes(Rng& rng, SynthClass c, std::size_t n, double p_plant) {
    std::string s;
    for (const auto& str : class_strings(c))
        if (chance(rng, p_plant)) s.append(str).push_back('\0');
    for (const auto& str : generic_strings())
        if (chance(rng, 0.5)) s.append(str).push_back('\0');
    Bytes b(s.begin(), s.end());
    if (b.size() < n) b.resize(n, 0);
    return b;
}

Pool draw_imports(SynthClass c, Rng& rng) {
    Pool out;
    auto add = [&](std::string_view lib, const std::string& sym) {
        auto it = std::find_if(out.begin(), out.end(), [&](const ImportSpec& s) { return s.library == lib; });
        if (it == out.end()) {
            out.push_back({std::string(lib), {}});
            it = out.end() - 1;
        }
        if (std::find(it->symbols.begin(), it->symbols.end(), sym) == it->symbols.end()) it->symbols.push_back(sym);
    };
    auto draw = [&](const Pool& pool, double p) {
        for (const auto& lib : pool)
            for (const auto& sym : lib.symbols)
                if (chance(rng, p)) add(lib.library, sym);
    };

    const auto& common = common_pool().front();
    for (std::size_t i = 0; i < 3; ++i) add(common.library, common.symbols[i]);
    draw(common_pool(), 0.5);
    draw(class_pool(c), 0.6);
    // a little cross-class overlap so the classes are not trivially disjoint
    if (chance(rng, 0.3)) {
        auto other = kSynthClasses[uniform_index(rng, kSynthClasses.size())];
        draw(class_pool(other), 0.25);
    }
    const auto& m = kMarkers[static_cast<std::size_t>(c)];
    add(m.library, std::string(m.symbol));
    return out;
}

std::uint32_t timestamp_in(Rng& rng, std::uint32_t lo, std::uint32_t hi) {
    return lo + static_cast<std::uint32_t>(uniform_index(rng, hi - lo));
}

} // namespace

std::string_view to_string(SynthClass c) {
    switch (c) {
    case SynthClass::benign: return "benign";
    case SynthClass::trojan: return "trojan";
    case SynthClass::worm: return "worm";
    case SynthClass::backdoor: return "backdoor";
    case SynthClass::ransomware: return "ransomware";
    case SynthClass::other: return "other";
    }
    return "other";
}

std::string_view marker_token(SynthClass c) { return kMarkers[static_cast<std::size_t>(c)].token; }

std::size_t marker_feature_index(SynthClass c) {
    return feature_group("imports").offset + kImportLibraryBuckets + hash_bucket(marker_token(c), kImportSymbolBuckets);
}

ManifestEntry synth_manifest_stub(SynthClass c) {
    ManifestEntry e;
    e.source = "synthetic";
    switch (c) {
    case SynthClass::benign: e.label = SampleLabel::benign; break;
    case SynthClass::trojan: e.label = SampleLabel::malicious, e.family = Family::trojan; break;
    case SynthClass::worm: e.label = SampleLabel::malicious, e.family = Family::worm; break;
    case SynthClass::backdoor: e.label = SampleLabel::malicious, e.family = Family::backdoor; break;
    case SynthClass::ransomware: e.label = SampleLabel::malicious, e.family = Family::ransomware; break;
    case SynthClass::other: e.label = SampleLabel::malicious, e.family = Family::other; break;
    }
    return e;
}

std::size_t SynthProfile::count(SynthClass c) const {
    switch (c) {
    case SynthClass::benign: return n_benign;
    case SynthClass::trojan: return n_trojan;
    case SynthClass::worm: return n_worm;
    case SynthClass::backdoor: return n_backdoor;
    case SynthClass::ransomware: return n_ransomware;
    case SynthClass::other: return n_other;
    }
    return 0;
}

std::size_t SynthProfile::total() const {
    return n_benign + n_trojan + n_worm + n_backdoor + n_ransomware + n_other;
}

PeSpec synth_spec(SynthClass c, Rng& rng) {
    PeSpec s;
    s.imports = draw_imports(c, rng);
    const auto kb = [&](std::size_t lo, std::size_t hi) { return range(rng, lo * 1024, hi * 1024); };
    auto text = [&](std::size_t lo, std::size_t hi) { return SectionSpec{".text", scn::kText, code_bytes(rng, kb(lo, hi)), 0}; };
    auto rdata = [&](double p) { return SectionSpec{".rdata", scn::kRdata, text_bytes(rng, c, kb(1, 4), p), 0}; };
    auto data = [&] { return SectionSpec{".data", scn::kData, table_bytes(rng, kb(1, 3)), 0}; };

    switch (c) {
    case SynthClass::benign:
        s.timestamp = timestamp_in(rng, 1420070400, 1700000000);
        s.linker_major = 14, s.linker_minor = static_cast<std::uint8_t>(range(rng, 10, 38));
        s.image_major = static_cast<std::uint16_t>(range(rng, 1, 10));
        s.sections = {text(4, 16), rdata(0.9), data(),
                      {".rsrc", scn::kRdata, resource_bytes(rng, kb(2, 8)), 0},
                      {".reloc", scn::kRdata | scn::kDiscardable, reloc_bytes(rng, 0x1000), 0}};
        s.directory_sections = {{static_cast<std::size_t>(DirectoryIndex::Resource), 3},
                                {static_cast<std::size_t>(DirectoryIndex::BaseReloc), 4}};
        break;
    case SynthClass::trojan:
        s.timestamp = timestamp_in(rng, 1262304000, 1600000000);
        s.linker_major = static_cast<std::uint8_t>(range(rng, 6, 10));
        if (chance(rng, 0.5)) {
            Bytes packed = random_bytes(rng, kb(8, 24));
            Bytes tail = text_bytes(rng, c, 0, 0.9);
            packed.insert(packed.end(), tail.begin(), tail.end());
            s.sections = {{"UPX0", scn::kUninitData | scn::kExecute | scn::kRead | scn::kWrite, {},
                           static_cast<std::uint32_t>(kb(32, 64))},
                          {"UPX1", scn::kInitData | scn::kExecute | scn::kRead | scn::kWrite, std::move(packed), 0}};
            s.entry_section = 1;
        } else {
            s.sections = {text(4, 12), rdata(0.9), data()};
        }
        break;
    case SynthClass::worm:
        s.timestamp = timestamp_in(rng, 1104537600, 1500000000);
        s.linker_major = static_cast<std::uint8_t>(range(rng, 5, 9));
        s.subsystem = 3;
        s.sections = {text(3, 10), data(), rdata(0.9), {".tls", scn::kData, Bytes(512, 0), 0}};
        s.directory_sections = {{static_cast<std::size_t>(DirectoryIndex::Tls), 3}};
        break;
    case SynthClass::backdoor:
        s.timestamp = timestamp_in(rng, 1262304000, 1650000000);
        s.linker_major = static_cast<std::uint8_t>(range(rng, 8, 12));
        s.sections = {text(4, 12), rdata(0.9), data(),
                      {".bss", scn::kBss, {}, static_cast<std::uint32_t>(kb(4, 16))}};
        if (chance(rng, 0.5)) {
            s.characteristics |= 0x2000;
            s.exports = {"ServiceMain", "InstallService", "DllRegisterServer"};
            s.export_dll_name = "svcnet.dll";
        }
        break;
    case SynthClass::ransomware:
        s.timestamp = timestamp_in(rng, 1451606400, 1700000000);
        s.linker_major = static_cast<std::uint8_t>(range(rng, 11, 14));
        s.sections = {text(4, 12), rdata(0.9), data(),
                      {".crypt", scn::kData, random_bytes(rng, kb(8, 24)), 0}};
        break;
    case SynthClass::other:
        s.timestamp = timestamp_in(rng, 1262304000, 1700000000);
        s.linker_major = static_cast<std::uint8_t>(range(rng, 9, 14));
        s.sections = {text(3, 10), rdata(0.9), data(),
                      {".adata", scn::kData, text_bytes(rng, c, kb(1, 2), 0.5), 0}};
        s.overlay = table_bytes(rng, kb(1, 4));
        break;
    }
    s.entry_offset = static_cast<std::uint32_t>(uniform_index(rng, 256));
    return s;
}

Bytes synth_sample(SynthClass c, Rng& rng) { return build_pe(synth_spec(c, rng)); }

SynthCorpus generate_synthetic_corpus(const SynthProfile& profile, std::uint64_t seed, const fs::path& out_dir) {
    SynthCorpus corpus;
    corpus.manifest = out_dir / "manifest.jsonl";
    fs::create_directories(out_dir / "files");

    for (SynthClass c : kSynthClasses) {
        for (std::size_t i = 0; i < profile.count(c); ++i) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i)};
            Rng rng(seq);
            Bytes bytes = synth_sample(c, rng);

            char name[64];
            std::snprintf(name, sizeof name, "files/%s_%05zu.exe", std::string(to_string(c)).c_str(), i);
            write_file(out_dir / name, bytes);

            ManifestEntry e = synth_manifest_stub(c);
            e.path = name;
            e.sha256 = sha256(bytes);
            corpus.entries.push_back(std::move(e));
        }
    }
    write_manifest(corpus.manifest, corpus.entries);
    return corpus;
}

} // namespace pesentry
