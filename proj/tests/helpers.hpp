#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "core/error.hpp"
#include "core/graph.hpp"
#include "heatmaps.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("posecert_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

inline std::vector<float> random_vec(std::mt19937_64& rng, size_t n, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> U(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = U(rng);
  return v;
}

template <class F>
posecert::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const posecert::Error& e) {
    return e.code();
  }
  FAIL("expected a posecert::Error");
  return posecert::ErrorCode::Internal;
}

template <class F>
std::string error_message_of(F&& f) {
  try {
    f();
  } catch (const posecert::Error& e) {
    return e.what();
  }
  FAIL("expected a posecert::Error");
  return {};
}

}  // namespace testing
