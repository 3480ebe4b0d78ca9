#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

namespace testutil {

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / ("hsacnet_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(base);
        std::filesystem::create_directories(base);
        path = base;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& rel = "") const { return (rel.empty() ? path : path / rel).string(); }
};

}  // namespace testutil
