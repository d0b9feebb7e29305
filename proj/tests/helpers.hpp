#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "dupnet/rng.hpp"
#include "dupnet/tensor.hpp"

namespace testutil {

inline dupnet::Tensor random_real(const dupnet::Shape& s, dupnet::Rng& rng, double sd = 1.0) {
  dupnet::Tensor t(s);
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

inline dupnet::IntTensor random_codes(const dupnet::Shape& s, dupnet::Rng& rng, int lo, int hi) {
  dupnet::IntTensor t(s);
  for (auto& v : t.data()) v = static_cast<std::int32_t>(rng.integer(lo, hi));
  return t;
}

inline dupnet::IntTensor random_signs(const dupnet::Shape& s, dupnet::Rng& rng) {
  dupnet::IntTensor t(s);
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1 : -1;
  return t;
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dupnet-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
