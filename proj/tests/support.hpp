#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "ccta/core.hpp"

namespace ccta::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ccta-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::string str() const { return path_.string(); }
    [[nodiscard]] std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

template <class F>
::testing::AssertionResult throws_kind(F&& f, ErrorKind expected) {
    try {
        f();
    } catch (const Error& e) {
        if (e.kind() == expected) return ::testing::AssertionSuccess();
        return ::testing::AssertionFailure() << "threw " << to_string(e.kind()) << " (" << e.what() << "), expected "
                                             << to_string(expected);
    } catch (const std::exception& e) {
        return ::testing::AssertionFailure() << "threw non-ccta exception: " << e.what();
    }
    return ::testing::AssertionFailure() << "did not throw, expected " << to_string(expected);
}

}  // namespace ccta::test

#define EXPECT_THROWS_KIND(stmt, kind) EXPECT_TRUE(::ccta::test::throws_kind([&] { (void)(stmt); }, ::ccta::ErrorKind::kind))
