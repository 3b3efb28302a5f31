#pragma once

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "firecal/bayes.hpp"
#include "firecal/error.hpp"

namespace firecal::pipeline {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

/// Incremental SHA-256 over strings and numbers.
class Hasher {
 public:
  Hasher() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }

  Hasher& add(std::string_view s) {
    const std::uint64_t n = s.size();
    update(&n, sizeof n);
    update(s.data(), s.size());
    return *this;
  }
  /// Raw bytes, no length prefix.
  Hasher& add_bytes(std::string_view s) {
    update(s.data(), s.size());
    return *this;
  }
  Hasher& add(double v) { return add_raw(v); }
  Hasher& add(std::uint64_t v) { return add_raw(v); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw Error("sha256: final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  template <class T>
  Hasher& add_raw(T v) {
    update(&v, sizeof v);
    return *this;
  }
  void update(const void* p, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), p, n) != 1) throw Error("sha256: update failed");
  }

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Hasher().add_bytes(s).hex(); }

inline std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "nan" || s == "NaN" || s == "NA") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

// Artifact header, the first line of every text artifact:
//   # firecal <kind> schema=<n> input_hash=<hex>

struct ArtifactHeader {
  std::string kind;
  int schema = 0;
  std::string input_hash;
};

inline std::string header_line(const std::string& kind, const std::string& input_hash) {
  return "# firecal " + kind + " schema=" + std::to_string(kSchemaVersion) + " input_hash=" + input_hash + "\n";
}

inline std::optional<ArtifactHeader> parse_header(const std::string& line) {
  std::istringstream is(line);
  std::string hash_mark, tag, kind, schema, hash;
  if (!(is >> hash_mark >> tag >> kind >> schema >> hash) || hash_mark != "#" || tag != "firecal") return std::nullopt;
  if (schema.rfind("schema=", 0) != 0 || hash.rfind("input_hash=", 0) != 0) return std::nullopt;
  ArtifactHeader h;
  h.kind = kind;
  h.schema = std::atoi(schema.c_str() + 7);
  h.input_hash = hash.substr(11);
  return h;
}

inline std::optional<ArtifactHeader> read_header(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string line;
  if (!in || !std::getline(in, line)) return std::nullopt;
  return parse_header(line);
}

/// True when `p` exists and was produced from inputs hashing to `input_hash`.
inline bool is_fresh(const fs::path& p, const std::string& input_hash) {
  const auto h = read_header(p);
  return h && h->schema == kSchemaVersion && h->input_hash == input_hash;
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
template <class Writer>
void write_atomic(const fs::path& p, Writer&& w) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    w(out);
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Delimited numeric table: optional '#' lines, a header row, then data rows.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ConfigError("table has no column '" + name + "'");
  }
};

inline std::vector<std::string> split_fields(const std::string& line) {
  const char delim = line.find(',') != std::string::npos ? ',' : (line.find('\t') != std::string::npos ? '\t' : ' ');
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  if (delim == ' ') {
    while (is >> cur) out.push_back(cur);
    return out;
  }
  while (std::getline(is, cur, delim)) out.push_back(cur);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline Table read_table(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_fields(line);
    if (!have_header) {
      for (auto& f : fields) {
        while (!f.empty() && f.front() == ' ') f.erase(f.begin());
        while (!f.empty() && f.back() == ' ') f.pop_back();
      }
      t.columns = std::move(fields);
      have_header = true;
      continue;
    }
    const std::string where = p.filename().string() + " line " + std::to_string(lineno);
    if (fields.size() != t.columns.size())
      throw ConfigError(where + ": expected " + std::to_string(t.columns.size()) + " fields, found " +
                        std::to_string(fields.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, where));
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw ConfigError(p.string() + ": no header row");
  return t;
}

inline void write_row(std::ostream& os, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt(v[i]);
  os << '\n';
}

inline std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

inline constexpr double kGridTolerance = 1e-6;  // s

/// Reads a measurement file (time column, then one column per sensor) and
/// places it on `grid_times`, interpolating linearly when the file's time steps
/// differ from the grid.
inline bayes::MeasurementSet ingest_measurements(const fs::path& path, const std::vector<double>& grid_times) {
  const Table t = read_table(path);
  if (t.columns.size() < 2) throw ConfigError(path.string() + ": no sensor columns");
  if (t.rows.empty()) throw ConfigError(path.string() + ": no data rows");
  const std::size_t ns = t.columns.size() - 1, nr = t.rows.size();
  for (std::size_t r = 1; r < nr; ++r)
    if (!(t.rows[r][0] > t.rows[r - 1][0]))
      throw ConfigError(path.string() + ": time is not increasing at data row " + std::to_string(r + 1));
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t s = 1; s <= ns; ++s)
      if (!std::isfinite(t.rows[r][s]))
        throw ConfigError(path.string() + ": missing value at data row " + std::to_string(r + 1) + ", column " +
                          t.columns[s]);

  bayes::MeasurementSet m;
  m.setup = path.stem().string();
  const auto n = static_cast<Eigen::Index>(grid_times.size());
  m.times = Eigen::Map<const Eigen::VectorXd>(grid_times.data(), n);
  m.values.resize(n, static_cast<Eigen::Index>(ns));

  bool aligned = nr == grid_times.size();
  for (std::size_t i = 0; aligned && i < nr; ++i) aligned = std::abs(t.rows[i][0] - grid_times[i]) <= kGridTolerance;
  if (aligned) {
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t s = 0; s < ns; ++s) m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = t.rows[i][s + 1];
    return m;
  }
  if (grid_times.front() < t.rows.front()[0] - kGridTolerance || grid_times.back() > t.rows.back()[0] + kGridTolerance)
    throw ConfigError(path.string() + ": time range does not cover the simulation grid");
  std::size_t r = 0;
  for (std::size_t i = 0; i < grid_times.size(); ++i) {
    const double tt = grid_times[i];
    while (r + 2 < nr && t.rows[r + 1][0] < tt) ++r;
    const double t0 = t.rows[r][0], t1 = t.rows[std::min(r + 1, nr - 1)][0];
    const double w = t1 > t0 ? std::clamp((tt - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      const double a = t.rows[r][s + 1], b = t.rows[std::min(r + 1, nr - 1)][s + 1];
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = a + w * (b - a);
    }
  }
  return m;
}

}  // namespace firecal::pipeline
