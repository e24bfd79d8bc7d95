#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "aesth/random.hpp"
#include "aesth/tensor.hpp"

namespace aesth::test {

inline Tensord random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensord& a, const Tensord& b) {
  EXPECT_EQ(a.shape(), b.shape());
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = tag;
    if (info) name += std::string("-") + info->test_suite_name() + "-" + info->name();
    path_ = std::filesystem::temp_directory_path() / ("aesth-" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace aesth::test
