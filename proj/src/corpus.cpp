// pesentry - static PE malware/ransomware detection toolkit

#include "pesentry/corpus.hpp"

#include "pesentry/error.hpp"
#include "pesentry/features.hpp"
#include "pesentry/grayscale.hpp"
#include "pesentry/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace pesentry {

static_assert(std::endian::native == std::endian::little, "cache I/O assumes a little-endian host");

std::string_view to_string(SampleLabel label) {
    return label == SampleLabel::benign ? "benign" : "malicious";
}

std::string_view to_string(Family family) {
    switch (family) {
    case Family::trojan: return "trojan";
    case Family::worm: return "worm";
    case Family::backdoor: return "backdoor";
    case Family::ransomware: return "ransomware";
    case Family::other: return "other";
    }
    return "other";
}

std::optional<SampleLabel> parse_label(std::string_view s) {
    if (s == "benign") return SampleLabel::benign;
    if (s == "malicious") return SampleLabel::malicious;
    return std::nullopt;
}

std::optional<Family> parse_family(std::string_view s) {
    for (Family f : kFamilies)
        if (to_string(f) == s) return f;
    return std::nullopt;
}

std::string manifest_line(const ManifestEntry& e) {
    json j;
    j["path"] = e.path;
    j["label"] = to_string(e.label);
    j["family"] = e.family ? json(to_string(*e.family)) : json(nullptr);
    j["source"] = e.source;
    j["sha256"] = to_hex(e.sha256);
    return j.dump();
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
    std::string text;
    for (const auto& e : entries) {
        text += manifest_line(e);
        text += '\n';
    }
    write_file(path, std::string_view(text));
}

fs::path Manifest::resolve(const ManifestEntry& e) const {
    fs::path p(e.path);
    if (p.is_absolute()) return p;
    return (base_dir / p).lexically_normal();
}

namespace {

std::string require_string(const json& j, const char* key, std::size_t line) {
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(line, std::string("missing field '") + key + "'");
    if (!it->is_string()) throw SchemaError(line, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

ManifestEntry parse_manifest_line(std::string_view text, std::size_t line) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError(line, "expected a JSON object");

    ManifestEntry e;
    e.path = require_string(j, "path", line);
    if (e.path.empty()) throw SchemaError(line, "empty path");

    auto label = parse_label(require_string(j, "label", line));
    if (!label) throw SchemaError(line, "label must be 'benign' or 'malicious'");
    e.label = *label;

    if (auto it = j.find("family"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError(line, "field 'family' must be a string or null");
        auto fam = parse_family(it->get<std::string>());
        if (!fam) throw SchemaError(line, "unknown family '" + it->get<std::string>() + "'");
        if (e.label != SampleLabel::malicious) throw SchemaError(line, "family given for a benign entry");
        e.family = fam;
    }

    if (auto it = j.find("source"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError(line, "field 'source' must be a string");
        e.source = it->get<std::string>();
    }

    try {
        e.sha256 = sha256_from_hex(require_string(j, "sha256", line));
    } catch (const FormatError&) {
        throw SchemaError(line, "sha256 must be 64 hex characters");
    }
    return e;
}

} // namespace

Manifest ingest_manifest(const fs::path& manifest, const IngestOptions& options) {
    std::ifstream in(manifest, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + manifest.string());

    Manifest out;
    out.base_dir = manifest.parent_path();
    std::unordered_set<std::string> seen;

    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;

        ManifestEntry e = parse_manifest_line(text, line);
        fs::path file = out.resolve(e);
        std::error_code ec;
        if (!fs::is_regular_file(file, ec)) {
            out.missing.push_back(e.path);
            if (!options.skip_missing) out.entries.push_back(std::move(e));
            continue;
        }
        if (options.verify_digests) {
            Bytes bytes;
            try {
                bytes = read_file(file);
            } catch (const IoError&) {
                out.missing.push_back(e.path);
                continue;
            }
            if (sha256(bytes) != e.sha256) throw SchemaError(line, "sha256 does not match content of " + e.path);
        }
        if (!seen.insert(to_hex(e.sha256)).second) {
            ++out.duplicates;
            continue;
        }
        out.entries.push_back(std::move(e));
    }
    return out;
}

// --- dataset assembly ----------------------------------------------------

std::string_view to_string(Task task) {
    switch (task) {
    case Task::malware_detection: return "malware_detection";
    case Task::family_classification: return "family_classification";
    case Task::ransomware_detection: return "ransomware_detection";
    case Task::bilayer_eval: return "bilayer_eval";
    }
    return "malware_detection";
}

Task parse_task(std::string_view s) {
    for (Task t : {Task::malware_detection, Task::family_classification, Task::ransomware_detection,
                   Task::bilayer_eval})
        if (to_string(t) == s) return t;
    throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

const std::vector<std::string>& task_classes(Task task) {
    static const std::vector<std::string> detection{"benign", "malicious"};
    static const std::vector<std::string> families{"trojan", "worm", "backdoor", "ransomware", "other"};
    static const std::vector<std::string> ransomware{"malware_other", "ransomware"};
    static const std::vector<std::string> three_way{"benign", "malware_other", "ransomware"};
    switch (task) {
    case Task::malware_detection: return detection;
    case Task::family_classification: return families;
    case Task::ransomware_detection: return ransomware;
    case Task::bilayer_eval: return three_way;
    }
    return detection;
}

std::optional<int> task_class(Task task, const ManifestEntry& e) {
    const bool malicious = e.label == SampleLabel::malicious;
    const bool is_ransom = e.family == Family::ransomware;
    switch (task) {
    case Task::malware_detection: return malicious ? 1 : 0;
    case Task::family_classification:
        if (!e.family) return std::nullopt;
        return static_cast<int>(*e.family);
    case Task::ransomware_detection:
        if (!malicious) return std::nullopt;
        return is_ransom ? 1 : 0;
    case Task::bilayer_eval:
        if (!malicious) return 0;
        return is_ransom ? 2 : 1;
    }
    return std::nullopt;
}

void DatasetSpec::validate() const {
    for (double f : {train_fraction, val_fraction, test_fraction})
        if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("split fractions must lie in [0, 1]");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must sum to 1");
    const auto& classes = task_classes(task);
    for (const auto& [name, cap] : caps) {
        if (cap < 1) throw std::invalid_argument("cap for '" + name + "' must be >= 1");
        if (std::find(classes.begin(), classes.end(), name) == classes.end())
            throw std::invalid_argument("cap names unknown class '" + name + "' for task " +
                                        std::string(to_string(task)));
    }
}

json DatasetSpec::to_json() const {
    json caps_json = json::object();
    for (const auto& [name, cap] : caps) caps_json[name] = cap;
    return json{{"task", to_string(task)},
                {"caps", caps_json},
                {"split", {train_fraction, val_fraction, test_fraction}},
                {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
    DatasetSpec s;
    try {
        s.task = parse_task(j.at("task").get<std::string>());
        for (const auto& [name, cap] : j.at("caps").items()) s.caps[name] = cap.get<std::size_t>();
        const auto& split = j.at("split");
        if (!split.is_array() || split.size() != 3) throw FormatError("split must have three fractions");
        s.train_fraction = split[0].get<double>();
        s.val_fraction = split[1].get<double>();
        s.test_fraction = split[2].get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad dataset spec: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bad dataset spec: ") + e.what());
    }
    return s;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const DatasetSpec& spec) {
    const std::array<double, 3> frac{spec.train_fraction, spec.val_fraction, spec.test_fraction};
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double quota = frac[i] * static_cast<double>(n);
        // guard 0.7 * 100 = 70.00000000000001 style noise from stealing a remainder
        double fl = std::floor(quota + 1e-9);
        sizes[i] = static_cast<std::size_t>(fl);
        rem[i] = std::max(0.0, quota - fl);
        assigned += sizes[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    return sizes;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void append_row(DataSplit& split, std::span<const float> row, int label, const Sha256& digest) {
    split.features.data.insert(split.features.data.end(), row.begin(), row.end());
    ++split.features.rows;
    split.labels.push_back(label);
    split.digests.push_back(digest);
}

} // namespace

Dataset build_dataset(std::span<const ManifestEntry> entries, const DatasetSpec& spec, const FeatureCache& cache) {
    spec.validate();
    const auto& classes = task_classes(spec.task);

    Dataset ds;
    ds.class_names = classes;
    for (DataSplit* s : {&ds.train, &ds.val, &ds.test}) s->features.cols = cache.width;

    // members[c] = cache rows for class c in manifest order
    std::vector<std::vector<std::pair<std::size_t, Sha256>>> members(classes.size());
    std::unordered_set<std::string> taken;
    for (const auto& e : entries) {
        auto c = task_class(spec.task, e);
        if (!c) continue;
        auto row = cache.find(e.sha256);
        if (!row) {
            ++ds.skipped_uncached;
            continue;
        }
        if (!taken.insert(to_hex(e.sha256)).second) continue;
        members[static_cast<std::size_t>(*c)].emplace_back(*row, e.sha256);
    }
    for (std::size_t c = 0; c < classes.size(); ++c)
        if (members[c].empty()) throw InsufficientClass("class '" + classes[c] + "' has no entries");

    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto& pool = members[c];
        auto perm = seeded_permutation(pool.size(), splitmix64(spec.seed ^ splitmix64(c + 1)));
        std::size_t take = pool.size();
        if (auto it = spec.caps.find(classes[c]); it != spec.caps.end()) take = std::min(take, it->second);
        auto sizes = split_sizes(take, spec);

        std::size_t k = 0;
        DataSplit* targets[3] = {&ds.train, &ds.val, &ds.test};
        for (int s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < sizes[s]; ++i, ++k) {
                const auto& [row, digest] = pool[perm[k]];
                append_row(*targets[s], cache.row(row), static_cast<int>(c), digest);
            }
    }
    return ds;
}

// --- feature cache -------------------------------------------------------

std::string_view to_string(ExtractMode mode) {
    return mode == ExtractMode::vector ? "vector" : "grayscale";
}

ExtractMode parse_extract_mode(std::string_view s) {
    if (s == "vector") return ExtractMode::vector;
    if (s == "grayscale") return ExtractMode::grayscale;
    throw std::invalid_argument("unknown extraction mode '" + std::string(s) + "'");
}

std::size_t mode_width(ExtractMode mode) {
    return mode == ExtractMode::vector ? kFeatureWidth : kImagePixels;
}

std::optional<std::size_t> FeatureCache::find(const Sha256& digest) const {
    // built on first lookup; callers don't mutate a cache after querying it
    if (index_.empty() && rows() > 0) {
        for (std::size_t r = rows(); r-- > 0;) index_[to_hex(digests[r])] = r;
    }
    auto it = index_.find(to_hex(digest));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

namespace {

template <typename T>
void put(Bytes& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T)) throw FormatError("feature cache truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

Bytes encode_cache(const FeatureCache& cache) {
    if (cache.values.size() != cache.rows() * cache.width) throw ShapeMismatch("cache values do not match rows x width");
    Bytes out;
    out.reserve(18 + cache.rows() * 32 + cache.values.size() * 4);
    out.insert(out.end(), {'P', 'E', 'S', 'F'});
    put<std::uint16_t>(out, cache.version);
    put<std::uint32_t>(out, cache.width);
    put<std::uint64_t>(out, cache.rows());
    for (const auto& d : cache.digests) out.insert(out.end(), d.begin(), d.end());
    const auto* raw = reinterpret_cast<const std::uint8_t*>(cache.values.data());
    out.insert(out.end(), raw, raw + cache.values.size() * sizeof(float));
    return out;
}

FeatureCache decode_cache(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PESF", 4) != 0) throw FormatError("not a feature cache (bad magic)");
    std::size_t pos = 4;
    FeatureCache c;
    c.version = get<std::uint16_t>(bytes, pos);
    if (c.version != kCacheVersion) throw FormatError("unsupported feature cache version " + std::to_string(c.version));
    c.width = get<std::uint32_t>(bytes, pos);
    const auto rows = get<std::uint64_t>(bytes, pos);

    const std::size_t remaining = bytes.size() - pos;
    const std::uint64_t per_row = 32 + std::uint64_t{c.width} * 4;
    if (rows > remaining / per_row || rows * per_row != remaining) throw FormatError("feature cache body has wrong size");

    c.digests.resize(rows);
    for (auto& d : c.digests) {
        std::memcpy(d.data(), bytes.data() + pos, 32);
        pos += 32;
    }
    c.values.resize(rows * c.width);
    std::memcpy(c.values.data(), bytes.data() + pos, c.values.size() * sizeof(float));
    return c;
}

void write_cache(const FeatureCache& cache, const fs::path& path) {
    Bytes bytes = encode_cache(cache);
    write_file(path, bytes);
}

FeatureCache read_cache(const fs::path& path) {
    return decode_cache(read_file(path));
}

std::vector<float> extract_row(std::span<const std::uint8_t> bytes, ExtractMode mode) {
    if (mode == ExtractMode::vector) {
        FeatureVector fv = extract_feature_vector(bytes);
        return {fv.values.begin(), fv.values.end()};
    }
    GrayscaleImage img = extract_grayscale(bytes);
    return {img.pixels.begin(), img.pixels.end()};
}

namespace {

RowResult extract_one(const fs::path& file, ExtractMode mode) {
    RowResult r;
    try {
        Bytes bytes = read_file(file);
        r.digest = sha256(bytes);
        r.values = extract_row(bytes, mode);
        r.ok = true;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

} // namespace

std::vector<RowResult> extract_rows(std::span<const fs::path> files, ExtractMode mode) {
    std::vector<RowResult> out(files.size());
    const auto n = static_cast<std::ptrdiff_t>(files.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = extract_one(files[static_cast<std::size_t>(i)], mode);
    return out;
}

std::vector<RowResult> extract_rows_serial(std::span<const fs::path> files, ExtractMode mode) {
    std::vector<RowResult> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(extract_one(f, mode));
    return out;
}

CacheReport cache_features(const Manifest& manifest, ExtractMode mode, const fs::path& out) {
    std::vector<fs::path> files;
    files.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) files.push_back(manifest.resolve(e));

    auto results = extract_rows(files, mode);

    CacheReport report;
    report.cache.width = static_cast<std::uint32_t>(mode_width(mode));
    for (std::size_t i = 0; i < results.size(); ++i) {
        auto& r = results[i];
        if (!r.ok) {
            report.failures.push_back(manifest.entries[i].path + ": " + r.error);
            continue;
        }
        report.cache.digests.push_back(r.digest);
        report.cache.values.insert(report.cache.values.end(), r.values.begin(), r.values.end());
    }
    write_cache(report.cache, out);
    return report;
}

} // namespace pesentry
