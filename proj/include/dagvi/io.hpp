#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dagvi/matrix.hpp"

namespace dagvi::io {

// Shortest decimal string that round-trips the double exactly.
std::string format_double(double v);

struct Csv {
  std::vector<std::string> header;
  Mat values;
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Mat& values);
Csv read_csv(const std::filesystem::path& path);

// Adjacency as d lines of comma-separated 0/1 (no header).
void write_adjacency(const std::filesystem::path& path, const BinMat& a);
BinMat read_adjacency(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// FNV-1a over file bytes, for dataset fingerprints in run manifests.
std::uint64_t fingerprint_file(const std::filesystem::path& path);
std::uint64_t fingerprint_dir(const std::filesystem::path& dir);

}  // namespace dagvi::io
