#pragma once

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "omct/errors.hpp"

namespace omct {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(trim(s.substr(start)));
      break;
    }
    out.emplace_back(trim(s.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

inline bool parse_long(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

/// Fixed 6-decimal formatting, C locale semantics regardless of environment.
inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Shortest round-trip representation, for geometry values that must
/// survive save/load bit-exactly.
inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lg", &back);
  if (back == v) {
    // try shorter forms for readability
    for (int prec = 1; prec < 17; ++prec) {
      char b2[64];
      std::snprintf(b2, sizeof(b2), "%.*g", prec, v);
      double r2 = 0.0;
      std::sscanf(b2, "%lg", &r2);
      if (r2 == v) return b2;
    }
  }
  return buf;
}

/// Writes `content` to `path` via a sibling temp file and rename, so a
/// failed run never leaves a partial file behind.
inline void atomic_write_text(const std::filesystem::path& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw io_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw io_error("rename failed for " + path.string());
  }
}

inline void atomic_write_bytes(const std::filesystem::path& path,
                               const void* data, std::size_t size) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + tmp.string());
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(size));
    if (!out) throw io_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw io_error("rename failed for " + path.string());
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Iterates non-empty, non-comment lines of a text file, reporting
/// 1-based line numbers. `#` starts a comment line.
inline void for_each_data_line(
    const std::string& text,
    const std::function<void(int line_no, const std::string& line)>& fn) {
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string line = trim(std::string_view(text).substr(start, end - start));
    if (!line.empty() && line[0] != '#') fn(line_no, line);
    if (end == text.size()) break;
    start = end + 1;
  }
}

}  // namespace omct
