// pesentry - static PE malware/ransomware detection toolkit
// Helpers shared by the unit tests.

#pragma once

#include "pesentry/digest.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(PESENTRY_FIXTURES) / name;
}

inline nlohmann::json fixture_json(const std::string& name) {
    std::ifstream in(fixture(name));
    return nlohmann::json::parse(in);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("pesentry_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

private:
    std::filesystem::path path_;
};

} // namespace testing
