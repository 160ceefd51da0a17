#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "phonotrack/features.hpp"
#include "phonotrack/signal.hpp"

namespace testing {

inline phonotrack::signal::TimeSeries series(std::size_t rows, std::size_t cols, double fs, std::vector<double> values = {}) {
  phonotrack::signal::TimeSeries x;
  x.fs = fs;
  x.data = values.empty() ? phonotrack::Matrix<double>(rows, cols, 0.0)
                          : phonotrack::Matrix<double>(rows, cols, std::move(values));
  for (std::size_t c = 0; c < cols; ++c) x.channel_names.push_back("ch" + std::to_string(c));
  return x;
}

inline phonotrack::signal::TimeSeries random_series(std::size_t rows, std::size_t cols, double fs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  auto x = series(rows, cols, fs);
  for (double& v : x.data.values()) v = n01(rng);
  return x;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("phonotrack_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline phonotrack::features::PhoneInventory default_inventory() {
  return phonotrack::features::load_inventory(std::filesystem::path(PHONOTRACK_TEST_DATA_DIR) / "default_inventory.json");
}

}  // namespace testing
