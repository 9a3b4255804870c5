#pragma once

// Dense row-major matrices and the single matrix-product routine used by the
// network code. Swapping the backend means touching gemm() only.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "bdk/error.hpp"

namespace bdk {

struct ConstMatrixRef {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct MatrixRef {
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  operator ConstMatrixRef() const { return {data, rows, cols}; }
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw ShapeError("Matrix: data size does not match shape");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  operator ConstMatrixRef() const { return {data_, rows_, cols_}; }
  MatrixRef ref() { return {data_, rows_, cols_}; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Trans { No, Yes };

// C = alpha * op(A) * op(B) + beta * C
inline void gemm(Trans ta, Trans tb, double alpha, ConstMatrixRef a, ConstMatrixRef b, double beta,
                 MatrixRef c) {
  const std::size_t m = ta == Trans::No ? a.rows : a.cols;
  const std::size_t k = ta == Trans::No ? a.cols : a.rows;
  const std::size_t kb = tb == Trans::No ? b.rows : b.cols;
  const std::size_t n = tb == Trans::No ? b.cols : b.rows;
  if (k != kb || c.rows != m || c.cols != n) throw ShapeError("gemm: inner or output dimensions disagree");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto as = static_cast<Eigen::Index>(a.rows), ac = static_cast<Eigen::Index>(a.cols);
  const auto bs = static_cast<Eigen::Index>(b.rows), bc = static_cast<Eigen::Index>(b.cols);
  Eigen::Map<const RowMat> ea(a.data.data(), as, ac);
  Eigen::Map<const RowMat> eb(b.data.data(), bs, bc);
  Eigen::Map<RowMat> ec(c.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));

  if (beta == 0.0) {
    ec.setZero();
  } else if (beta != 1.0) {
    ec *= beta;
  }
  if (ta == Trans::No && tb == Trans::No) {
    ec.noalias() += alpha * ea * eb;
  } else if (ta == Trans::Yes && tb == Trans::No) {
    ec.noalias() += alpha * ea.transpose() * eb;
  } else if (ta == Trans::No && tb == Trans::Yes) {
    ec.noalias() += alpha * ea * eb.transpose();
  } else {
    ec.noalias() += alpha * ea.transpose() * eb.transpose();
  }
}

inline Matrix matmul(ConstMatrixRef a, ConstMatrixRef b) {
  Matrix c(a.rows, b.cols);
  gemm(Trans::No, Trans::No, 1.0, a, b, 0.0, c.ref());
  return c;
}

}  // namespace bdk
