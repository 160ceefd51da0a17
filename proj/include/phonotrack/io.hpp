#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "phonotrack/matrix.hpp"

namespace phonotrack::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Raw little-endian float32, row-major. Values are narrowed from double.
void write_f32(const fs::path& path, const Matrix<double>& m);
void write_f32(const fs::path& path, std::span<const float> values);
Matrix<double> read_f32(const fs::path& path, std::size_t rows, std::size_t cols);
std::vector<float> read_f32(const fs::path& path);

// "<dir>/<stem>.bin" -> "<dir>/<stem>.json"
fs::path sidecar_path(const fs::path& bin);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

// Locale-independent shortest round-trip formatting for CSV output.
std::string fmt_double(double v);

// Named seed derivation: splitmix64 over (base, FNV-1a(name), index).
std::uint64_t derive_seed(std::uint64_t base, std::string_view name, std::uint64_t index = 0);

}  // namespace phonotrack::io
