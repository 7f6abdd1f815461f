#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fknne/curves.hpp"
#include "fknne/ensemble.hpp"
#include "fknne/error.hpp"

namespace fknne {

namespace fs = std::filesystem;

// -- formatting & hashing ---------------------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// 64-bit FNV-1a; stable across platforms, used for config and cache keys.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// -- CSV --------------------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, const std::string& where) {
  s = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(where + ": cannot parse '" + std::string(s) + "' as a number");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    lines.emplace_back(line);
  }
  return lines;
}

}  // namespace detail

/// One covariate type: header row holds the grid, each further row one curve.
inline Covariate read_covariate_csv(const fs::path& path, std::string name) {
  const auto lines = detail::data_lines(read_file(path));
  if (lines.empty()) throw DataError(path.string() + ": file is empty");
  std::vector<double> grid;
  for (auto f : detail::split(lines[0])) grid.push_back(detail::parse_double(f, path.string() + ":header"));
  Covariate cov{std::move(name), nullptr, {}};
  try {
    cov.grid = make_grid(std::move(grid));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::string where = path.string() + ":" + std::to_string(r + 1);
    std::vector<double> values;
    for (auto f : detail::split(lines[r])) values.push_back(detail::parse_double(f, where));
    try {
      cov.curves.emplace_back(cov.grid, std::move(values));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return cov;
}

inline std::vector<int> read_labels(const fs::path& path) {
  std::vector<int> labels;
  const auto lines = detail::data_lines(read_file(path));
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto s = detail::trim(lines[r]);
    int y = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), y);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw DataError(path.string() + ":" + std::to_string(r + 1) + ": cannot parse label '" + std::string(s) + "'");
    }
    labels.push_back(y);
  }
  return labels;
}

inline std::string covariate_to_csv(const Covariate& cov) {
  std::string out;
  for (std::size_t q = 0; q < cov.grid->size(); ++q) {
    if (q) out += ',';
    out += format_double((*cov.grid)[q]);
  }
  out += '\n';
  for (const auto& c : cov.curves) {
    for (std::size_t q = 0; q < c.values.size(); ++q) {
      if (q) out += ',';
      out += format_double(c.values[q]);
    }
    out += '\n';
  }
  return out;
}

inline std::string labels_to_text(std::span<const int> labels) {
  std::string out;
  for (int y : labels) out += std::to_string(y) + '\n';
  return out;
}

/// Content hash of a dataset (grids, values, labels).
inline std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = fnv1a("dataset");
  h = fnv1a(std::to_string(d.class_count), h);
  for (const auto& cov : d.covariates) {
    h = fnv1a(cov.name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(cov.grid->points().data()),
                               cov.grid->size() * sizeof(double)), h);
    for (const auto& c : cov.curves) {
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(c.values.data()), c.values.size() * sizeof(double)), h);
    }
  }
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.labels.data()), d.labels.size() * sizeof(int)), h);
  return h;
}

// -- feature tensor files ------------------------------------------------------------------------

enum class TensorFormat { Binary, Csv };

inline constexpr char kTensorMagic[8] = {'F', 'K', 'N', 'N', 'T', 'N', 'S', '1'};

/// `note` is free text stored with the tensor (e.g. provenance); readers skip it.
inline std::string tensor_to_binary(const FeatureTensor& w, std::string_view note = {}) {
  std::string out(kTensorMagic, sizeof kTensorMagic);
  auto put = [&out](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(static_cast<std::uint64_t>(note.size()));
  out.append(note);
  put(static_cast<std::uint64_t>(w.n));
  put(static_cast<std::uint64_t>(w.classes));
  put(static_cast<std::uint64_t>(w.tuples()));
  for (int id : w.tuple_ids) put(static_cast<std::int64_t>(id));
  put(static_cast<std::uint64_t>(w.degenerate_ids.size()));
  for (int id : w.degenerate_ids) put(static_cast<std::int64_t>(id));
  for (const auto& m : w.w) out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  return out;
}

inline FeatureTensor tensor_from_binary(std::string_view data) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t bytes) {
    if (pos + bytes > data.size()) throw DataError("feature tensor file is truncated");
    std::memcpy(dst, data.data() + pos, bytes);
    pos += bytes;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::string_view(magic, 8) != std::string_view(kTensorMagic, 8)) throw DataError("not a feature tensor file");
  std::uint64_t note = 0, n = 0, G = 0, p = 0, ndeg = 0;
  take(&note, sizeof note);
  if (note > data.size() - pos) throw DataError("feature tensor file is truncated");
  pos += note;
  take(&n, sizeof n);
  take(&G, sizeof G);
  take(&p, sizeof p);
  FeatureTensor w;
  w.n = n;
  w.classes = static_cast<int>(G);
  for (std::uint64_t l = 0; l < p; ++l) {
    std::int64_t id = 0;
    take(&id, sizeof id);
    w.tuple_ids.push_back(static_cast<int>(id));
  }
  take(&ndeg, sizeof ndeg);
  for (std::uint64_t l = 0; l < ndeg; ++l) {
    std::int64_t id = 0;
    take(&id, sizeof id);
    w.degenerate_ids.push_back(static_cast<int>(id));
  }
  for (std::uint64_t g = 0; g < G; ++g) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    take(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    w.w.push_back(std::move(m));
  }
  if (pos != data.size()) throw DataError("feature tensor file has trailing bytes");
  return w;
}

/// One row per observation; columns grouped by class, then tuple.
inline std::string tensor_to_csv(const FeatureTensor& w, std::string_view note = {}) {
  std::string out;
  if (!note.empty()) out += "# " + std::string(note) + "\n";
  out += "# n=" + std::to_string(w.n) + " classes=" + std::to_string(w.classes) + " degenerate=";
  for (std::size_t d = 0; d < w.degenerate_ids.size(); ++d) out += (d ? ";" : "") + std::to_string(w.degenerate_ids[d]);
  out += "\ni";
  for (int g = 1; g <= w.classes; ++g)
    for (int id : w.tuple_ids) out += ",g" + std::to_string(g) + ":" + std::to_string(id);
  out += '\n';
  for (std::size_t i = 0; i < w.n; ++i) {
    out += std::to_string(i + 1);
    for (int g = 0; g < w.classes; ++g)
      for (std::size_t l = 0; l < w.tuples(); ++l) out += ',' + format_double(w(i, g, l));
    out += '\n';
  }
  return out;
}

inline FeatureTensor tensor_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  FeatureTensor w;
  std::vector<std::string> rows;
  std::string header;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      const auto deg = line.find("degenerate=");
      if (deg != std::string::npos) {
        for (auto f : detail::split(std::string_view(line).substr(deg + 11), ';')) {
          if (!detail::trim(f).empty()) w.degenerate_ids.push_back(static_cast<int>(detail::parse_double(f, "tensor header")));
        }
      }
      continue;
    }
    if (detail::trim(line).empty()) continue;
    if (header.empty()) {
      header = line;
    } else {
      rows.push_back(line);
    }
  }
  if (header.empty()) throw DataError("feature tensor CSV has no header");
  const auto cols = detail::split(header);
  int classes = 0;
  for (std::size_t c = 1; c < cols.size(); ++c) {
    const auto f = detail::trim(cols[c]);
    const auto colon = f.find(':');
    if (f.empty() || f[0] != 'g' || colon == std::string_view::npos) throw DataError("malformed tensor CSV header");
    const int g = static_cast<int>(detail::parse_double(f.substr(1, colon - 1), "tensor header"));
    const int id = static_cast<int>(detail::parse_double(f.substr(colon + 1), "tensor header"));
    classes = std::max(classes, g);
    if (g == 1) w.tuple_ids.push_back(id);
  }
  const std::size_t p = w.tuple_ids.size();
  if (p == 0 || cols.size() - 1 != p * static_cast<std::size_t>(classes)) throw DataError("malformed tensor CSV header");
  w.classes = classes;
  w.n = rows.size();
  w.w.assign(static_cast<std::size_t>(classes), Eigen::MatrixXd(static_cast<Eigen::Index>(w.n), static_cast<Eigen::Index>(p)));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = detail::split(rows[i]);
    if (f.size() != cols.size()) throw DataError("tensor CSV row " + std::to_string(i + 1) + " has the wrong width");
    std::size_t c = 1;
    for (int g = 0; g < classes; ++g)
      for (std::size_t l = 0; l < p; ++l)
        w.w[static_cast<std::size_t>(g)](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) =
            detail::parse_double(f[c++], "tensor row");
  }
  return w;
}

inline void write_tensor(const fs::path& path, const FeatureTensor& w, TensorFormat fmt, std::string_view note = {}) {
  write_file_atomic(path, fmt == TensorFormat::Binary ? tensor_to_binary(w, note) : tensor_to_csv(w, note));
}

inline FeatureTensor read_tensor(const fs::path& path, TensorFormat fmt) {
  const auto data = read_file(path);
  return fmt == TensorFormat::Binary ? tensor_from_binary(data) : tensor_from_csv(data);
}

}  // namespace fknne
