#include "dagvi/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dagvi::io {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Mat& values) {
  if (!header.empty() && header.size() != values.cols)
    throw std::invalid_argument("write_csv: header has " + std::to_string(header.size()) +
                                " names for " + std::to_string(values.cols) + " columns");
  std::ostringstream out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  if (!header.empty()) out << '\n';
  for (std::size_t i = 0; i < values.rows; ++i) {
    for (std::size_t j = 0; j < values.cols; ++j) {
      if (j) out << ',';
      out << format_double(values(i, j));
    }
    out << '\n';
  }
  write_text(path, out.str());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      parts.push_back(line.substr(start));
      break;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!parts.empty() && !parts.back().empty() && parts.back().back() == '\r')
    parts.back().pop_back();
  return parts;
}

double parse_double(const std::string& s, const std::filesystem::path& path,
                    std::size_t row, std::size_t col) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " column " +
                             std::to_string(col) + ": cannot parse '" + s + "' as a number");
  return v;
}

bool looks_numeric(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

Csv read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  Csv out;
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t ncols = 0;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto parts = split_line(line);
    if (lineno == 1 && !parts.empty() && !looks_numeric(parts[0])) {
      out.header = parts;
      ncols = parts.size();
      continue;
    }
    if (ncols == 0) ncols = parts.size();
    if (parts.size() != ncols)
      throw std::runtime_error(path.string() + ": row " + std::to_string(lineno) + " has " +
                               std::to_string(parts.size()) + " columns, expected " +
                               std::to_string(ncols));
    std::vector<double> vals(parts.size());
    for (std::size_t j = 0; j < parts.size(); ++j)
      vals[j] = parse_double(parts[j], path, lineno, j);
    rows.push_back(std::move(vals));
  }
  out.values = Mat(rows.size(), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < ncols; ++j) out.values(i, j) = rows[i][j];
  return out;
}

void write_adjacency(const std::filesystem::path& path, const BinMat& a) {
  std::ostringstream out;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      if (j) out << ',';
      out << int(a(i, j));
    }
    out << '\n';
  }
  write_text(path, out.str());
}

BinMat read_adjacency(const std::filesystem::path& path) {
  Csv csv = read_csv(path);
  if (!csv.header.empty())
    throw std::runtime_error(path.string() + ": adjacency file must not have a header");
  if (csv.values.rows != csv.values.cols)
    throw std::runtime_error(path.string() + ": adjacency must be square, got " +
                             std::to_string(csv.values.rows) + "x" +
                             std::to_string(csv.values.cols));
  BinMat a(csv.values.rows, csv.values.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) {
      double v = csv.values(i, j);
      if (v != 0.0 && v != 1.0)
        throw std::runtime_error(path.string() + ": row " + std::to_string(i + 1) +
                                 " column " + std::to_string(j + 1) +
                                 ": adjacency entries must be 0 or 1");
      a(i, j) = v == 1.0 ? 1 : 0;
    }
  return a;
}

std::uint64_t fingerprint_file(const std::filesystem::path& path) {
  std::string bytes = read_text(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fingerprint_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& f : files) {
    std::uint64_t fh = fingerprint_file(f);
    std::string name = f.filename().string();
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    for (int k = 0; k < 8; ++k) {
      h ^= (fh >> (8 * k)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace dagvi::io
