#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dagvi {

// Dense row-major matrix of doubles. The whole artifact works in 64-bit.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
};

// Dense row-major 0/1 matrix (adjacency, permutation hardening, masks).
struct BinMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  BinMat() = default;
  BinMat(std::size_t r, std::size_t c, std::uint8_t fill = 0)
      : rows(r), cols(c), data(r * c, fill) {}

  std::uint8_t& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }

  bool operator==(const BinMat& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }

  Mat to_real() const {
    Mat m(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = data[i];
    return m;
  }

  std::size_t count_ones() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

}  // namespace dagvi
