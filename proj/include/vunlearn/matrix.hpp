#pragma once

#include <cstddef>
#include <vector>

#include "vunlearn/error.hpp"

namespace vunlearn {

/// Dense row-major matrix.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  template <class U>
  bool same_shape(const Matrix<U>& o) const {
    return rows == o.rows && cols == o.cols;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

template <class T>
Matrix<T> matrix_from_rows(const std::vector<std::vector<T>>& rows) {
  Matrix<T> m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == m.cols, Errc::DimMismatch, "ragged matrix rows");
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

}  // namespace vunlearn
