// pesentry - static PE malware/ransomware detection toolkit
// Manifests, dataset assembly and the binary feature cache.
//
// Manifest: one JSON object per line,
//   {"path": "...", "label": "benign"|"malicious",
//    "family": null|"trojan"|"worm"|"backdoor"|"ransomware"|"other",
//    "source": "...", "sha256": "<64 hex>"}
// Relative paths are resolved against the manifest's directory.
//
// Feature cache (little-endian throughout):
//   magic "PESF" | version u16 | width u32 | rows u64 |
//   rows x 32-byte sha256 | rows x width IEEE-754 float32, row-major

#pragma once

#include "pesentry/digest.hpp"
#include "pesentry/matrix.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pesentry {

enum class SampleLabel { benign, malicious };
enum class Family { trojan, worm, backdoor, ransomware, other };

inline constexpr std::array<Family, 5> kFamilies = {Family::trojan, Family::worm, Family::backdoor,
                                                    Family::ransomware, Family::other};

std::string_view to_string(SampleLabel label);
std::string_view to_string(Family family);
std::optional<SampleLabel> parse_label(std::string_view s);
std::optional<Family> parse_family(std::string_view s);

struct ManifestEntry {
    std::string path; ///< as written in the manifest
    SampleLabel label = SampleLabel::benign;
    std::optional<Family> family;
    std::string source;
    Sha256 sha256{};
    bool operator==(const ManifestEntry&) const = default;
};

std::string manifest_line(const ManifestEntry& e);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;
    std::size_t duplicates = 0;
    std::vector<std::string> missing; ///< listed paths that do not exist (skipped)

    std::filesystem::path resolve(const ManifestEntry& e) const;
};

struct IngestOptions {
    /// Re-hash every file and reject lines whose digest disagrees.
    bool verify_digests = true;
    /// When false, entries whose file is missing stay in `entries` (and are still listed in `missing`).
    bool skip_missing = true;
};

/// Throws IoError if the manifest cannot be read, SchemaError (with the line
/// number) for malformed lines or digest mismatches.
Manifest ingest_manifest(const std::filesystem::path& manifest, const IngestOptions& options = {});

// --- dataset assembly ----------------------------------------------------

enum class Task { malware_detection, family_classification, ransomware_detection, bilayer_eval };

std::string_view to_string(Task task);
Task parse_task(std::string_view s);
/// Class names of a task in label-index order.
const std::vector<std::string>& task_classes(Task task);
/// Label index of an entry under a task, or nullopt when it does not take part.
std::optional<int> task_class(Task task, const ManifestEntry& entry);

struct DatasetSpec {
    Task task = Task::malware_detection;
    std::map<std::string, std::size_t> caps; ///< class name -> max count; absent means unlimited
    double train_fraction = 0.70;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument when fractions do not sum to 1 or a cap is 0.
    void validate() const;
    nlohmann::json to_json() const;
    static DatasetSpec from_json(const nlohmann::json& j);
    bool operator==(const DatasetSpec&) const = default;
};

/// Train/val/test sizes for n items by largest-remainder rounding (ties to the earlier split).
std::array<std::size_t, 3> split_sizes(std::size_t n, const DatasetSpec& spec);

struct DataSplit {
    Matrix features;
    std::vector<int> labels;
    std::vector<Sha256> digests;
};

struct Dataset {
    std::vector<std::string> class_names;
    DataSplit train, val, test;
    std::size_t skipped_uncached = 0;
};

struct FeatureCache;

/// Per class: seeded permutation, cap, then a stratified split. Throws
/// InsufficientClass naming the first requested class with no cached entry.
Dataset build_dataset(std::span<const ManifestEntry> entries, const DatasetSpec& spec, const FeatureCache& cache);

// --- feature cache -------------------------------------------------------

enum class ExtractMode { vector, grayscale };
std::string_view to_string(ExtractMode mode);
ExtractMode parse_extract_mode(std::string_view s);
std::size_t mode_width(ExtractMode mode);

inline constexpr std::uint16_t kCacheVersion = 1;

struct FeatureCache {
    std::uint16_t version = kCacheVersion;
    std::uint32_t width = 0;
    std::vector<Sha256> digests;
    std::vector<float> values; ///< rows x width

    std::size_t rows() const { return digests.size(); }
    std::span<const float> row(std::size_t r) const { return {values.data() + r * width, width}; }
    /// Row index for a digest (first occurrence), or nullopt.
    std::optional<std::size_t> find(const Sha256& digest) const;
    bool operator==(const FeatureCache& o) const {
        return version == o.version && width == o.width && digests == o.digests && values == o.values;
    }

private:
    mutable std::unordered_map<std::string, std::size_t> index_;
};

Bytes encode_cache(const FeatureCache& cache);
/// Throws FormatError on bad magic/version or a truncated body.
FeatureCache decode_cache(std::span<const std::uint8_t> bytes);
void write_cache(const FeatureCache& cache, const std::filesystem::path& path);
FeatureCache read_cache(const std::filesystem::path& path);

/// Extracts one feature row; throws EmptyInput for an empty file in grayscale mode.
std::vector<float> extract_row(std::span<const std::uint8_t> bytes, ExtractMode mode);

struct RowResult {
    bool ok = false;
    Sha256 digest{};
    std::vector<float> values;
    std::string error;
};

/// Reads and extracts every file. The OpenMP variant fans out over files; both
/// return results in input order.
std::vector<RowResult> extract_rows(std::span<const std::filesystem::path> files, ExtractMode mode);
std::vector<RowResult> extract_rows_serial(std::span<const std::filesystem::path> files, ExtractMode mode);

struct CacheReport {
    FeatureCache cache;
    std::vector<std::string> failures; ///< "path: reason" for omitted rows
};

/// Rows follow manifest order; unreadable files are omitted and reported.
CacheReport cache_features(const Manifest& manifest, ExtractMode mode, const std::filesystem::path& out);

} // namespace pesentry
