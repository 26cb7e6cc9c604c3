// pesentry - static PE malware/ransomware detection toolkit
// Minimal PE writer and a seeded synthetic corpus generator.
//
// Each class has its own import pool, section names, byte-content mixture and
// planted strings, plus one marker import ("lib:symbol") that only that class
// ever carries. marker_feature_index() gives the feature column it lands in.

#pragma once

#include "pesentry/corpus.hpp"
#include "pesentry/digest.hpp"
#include "pesentry/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pesentry {

namespace scn {
inline constexpr std::uint32_t kCode = 0x00000020;
inline constexpr std::uint32_t kInitData = 0x00000040;
inline constexpr std::uint32_t kUninitData = 0x00000080;
inline constexpr std::uint32_t kDiscardable = 0x02000000;
inline constexpr std::uint32_t kExecute = 0x20000000;
inline constexpr std::uint32_t kRead = 0x40000000;
inline constexpr std::uint32_t kWrite = 0x80000000;

inline constexpr std::uint32_t kText = kCode | kExecute | kRead;
inline constexpr std::uint32_t kRdata = kInitData | kRead;
inline constexpr std::uint32_t kData = kInitData | kRead | kWrite;
inline constexpr std::uint32_t kBss = kUninitData | kRead | kWrite;
} // namespace scn

struct SectionSpec {
    std::string name;
    std::uint32_t characteristics = scn::kRdata;
    Bytes content;                  ///< written raw, zero-padded to the file alignment
    std::uint32_t virtual_size = 0; ///< 0 means content.size()
};

struct ImportSpec {
    std::string library;
    std::vector<std::string> symbols; ///< "#<n>" imports by ordinal n
};

struct PeSpec {
    std::uint16_t machine = 0x014c;
    bool pe32_plus = false;
    std::uint32_t timestamp = 0;
    std::uint16_t characteristics = 0x0102;
    std::uint32_t number_of_symbols = 0;
    std::uint16_t subsystem = 2;
    std::uint16_t dll_characteristics = 0x8140;
    std::uint8_t linker_major = 14, linker_minor = 0;
    std::uint16_t os_major = 6, os_minor = 0;
    std::uint16_t image_major = 0, image_minor = 0;
    std::uint16_t subsystem_major = 6, subsystem_minor = 0;
    std::uint64_t image_base = 0x400000;
    std::uint64_t stack_reserve = 0x100000, stack_commit = 0x1000;
    std::uint64_t heap_reserve = 0x100000, heap_commit = 0x1000;
    std::uint32_t file_alignment = 0x200;
    std::uint32_t section_alignment = 0x1000;

    std::vector<SectionSpec> sections;
    std::size_t entry_section = 0;
    std::uint32_t entry_offset = 0;

    /// Emitted as an extra section after `sections` when non-empty.
    std::vector<ImportSpec> imports;
    std::string import_section_name = ".idata";
    std::vector<std::string> exports; ///< function names; RVAs point into the entry section
    std::string export_dll_name = "module.dll";
    std::string export_section_name = ".edata";

    /// Directory index -> index into `sections`; the directory spans that section.
    std::map<std::size_t, std::size_t> directory_sections;
    Bytes overlay;
};

/// Throws std::invalid_argument for specs that cannot be laid out.
Bytes build_pe(const PeSpec& spec);

enum class SynthClass { benign, trojan, worm, backdoor, ransomware, other };
inline constexpr std::array<SynthClass, 6> kSynthClasses = {SynthClass::benign, SynthClass::trojan,
                                                            SynthClass::worm,   SynthClass::backdoor,
                                                            SynthClass::ransomware, SynthClass::other};

std::string_view to_string(SynthClass c);
/// "lib:symbol" token imported by every sample of the class and no other.
std::string_view marker_token(SynthClass c);
std::size_t marker_feature_index(SynthClass c);
ManifestEntry synth_manifest_stub(SynthClass c);

struct SynthProfile {
    std::size_t n_benign = 0, n_trojan = 0, n_worm = 0, n_backdoor = 0, n_ransomware = 0, n_other = 0;

    static SynthProfile uniform(std::size_t n) { return {n, n, n, n, n, n}; }
    std::size_t count(SynthClass c) const;
    std::size_t total() const;
};

/// One sample; everything random comes from `rng`.
PeSpec synth_spec(SynthClass c, Rng& rng);
Bytes synth_sample(SynthClass c, Rng& rng);

struct SynthCorpus {
    std::filesystem::path manifest;
    std::vector<ManifestEntry> entries;
};

/// Writes <out>/files/<class>_<index>.exe and <out>/manifest.jsonl (paths
/// relative to <out>). Sample i of class c depends only on (seed, c, i).
SynthCorpus generate_synthetic_corpus(const SynthProfile& profile, std::uint64_t seed,
                                      const std::filesystem::path& out_dir);

} // namespace pesentry
