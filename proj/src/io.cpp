#include "phonotrack/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "phonotrack/error.hpp"

namespace phonotrack::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  ensure_parent(path);
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw RuntimeError("cannot open for writing: " + path.string());
  return out;
}

}  // namespace

void write_f32(const fs::path& path, std::span<const float> values) {
  auto out = open_out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw RuntimeError("write failed: " + path.string());
}

void write_f32(const fs::path& path, const Matrix<double>& m) {
  std::vector<float> buf(m.values().begin(), m.values().end());
  write_f32(path, buf);
}

std::vector<float> read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ValidationError("cannot open: " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) throw ValidationError("truncated float32 file: " + path.string());
  std::vector<float> buf(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw RuntimeError("read failed: " + path.string());
  return buf;
}

Matrix<double> read_f32(const fs::path& path, std::size_t rows, std::size_t cols) {
  auto buf = read_f32(path);
  if (buf.size() != rows * cols)
    throw ValidationError(path.string() + ": expected " + std::to_string(rows * cols) + " floats, found " +
                          std::to_string(buf.size()));
  return Matrix<double>(rows, cols, std::vector<double>(buf.begin(), buf.end()));
}

fs::path sidecar_path(const fs::path& bin) {
  fs::path p = bin;
  p.replace_extension(".json");
  return p;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  auto out = open_out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw RuntimeError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw RuntimeError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view name, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return splitmix64(splitmix64(splitmix64(base) ^ h) ^ index);
}

}  // namespace phonotrack::io
