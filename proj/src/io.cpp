#include "dc3/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dc3 {

namespace {

constexpr const char* kMagic = "dc3-tensors 1";

// Payload doubles are written little-endian regardless of host order.
// All supported targets are little-endian; fail loudly elsewhere.
static_assert(std::endian::native == std::endian::little,
              "payload format assumes a little-endian host");

}  // namespace

void save_matrices(const std::string& path, const NamedMatrices& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kMagic << "\n" << tensors.size() << "\n";
  for (const auto& [name, m] : tensors)
    out << name << " " << m.rows() << " " << m.cols() << "\n";
  for (const auto& [name, m] : tensors) {
    // row-major entry order
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      out.write(reinterpret_cast<const char*>(m.row(i).eval().data()),
                static_cast<std::streamsize>(sizeof(double) * m.cols()));
  }
  if (!out) throw IoError("write failed: " + path);
}

NamedMatrices load_matrices(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw IoError(path + ": bad magic / version mismatch");
  std::size_t count = 0;
  in >> count;
  NamedMatrices out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    Eigen::Index rows = -1, cols = -1;
    in >> name >> rows >> cols;
    if (!in || rows < 0 || cols < 0)
      throw IoError(path + ": malformed tensor header");
    out.emplace_back(name, Eigen::MatrixXd(rows, cols));
  }
  in.ignore(1, '\n');
  for (auto& [name, m] : out) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double) * m.cols()));
      if (!in) throw IoError(path + ": truncated payload in tensor " + name);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = row[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

void save_manifest(const std::string& path, const Manifest& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) throw IoError("write failed: " + path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  Manifest kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

std::string manifest_get(const Manifest& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw ParseError("manifest: missing key '" + key + "'");
}

std::string manifest_get_or(const Manifest& kv, const std::string& key,
                            const std::string& fallback) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  return fallback;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace dc3
