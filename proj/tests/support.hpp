#pragma once

#include "pide/common.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

namespace pide::testing {

template <typename Fn>
::testing::AssertionResult raises(Fn&& fn, ErrorCode code) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "raised " << to_string(e.code()) << ": " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing raised, expected " << to_string(code);
}

inline Point pt(double x) { return Point::Constant(1, x); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("pide_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace pide::testing
