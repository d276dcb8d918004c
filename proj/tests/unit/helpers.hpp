#pragma once

#include <cstdlib>
#include <string>

#include <spdlog/spdlog.h>

#include "forge/common.hpp"

namespace forge::test {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "forge-test-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const fs::path& path() const noexcept { return path_; }
    [[nodiscard]] fs::path operator/(const fs::path& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

// Silences expected warnings for the lifetime of the object.
struct QuietLogs {
    spdlog::level::level_enum saved = spdlog::get_level();
    QuietLogs() { spdlog::set_level(spdlog::level::err); }
    ~QuietLogs() { spdlog::set_level(saved); }
};

}  // namespace forge::test
