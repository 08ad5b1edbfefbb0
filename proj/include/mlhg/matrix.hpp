#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mlhg {

// Dense row-major matrix of doubles. Sized for desk-scale graphs; the heavy
// lifting in this library is sparse incidence traversal, not GEMM.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// c = a * b, shapes (r,k)x(k,c).
Matrix matmul(const Matrix& a, const Matrix& b);

// c = a^T * b, shapes (k,r)x(k,c) -> (r,c). Used for weight gradients.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);

// c = a * b^T, shapes (r,k)x(c,k) -> (r,c). Used to push gradients back
// through a right-multiplied weight.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

// Adds v to every row of m in place.
void add_row_vector(Matrix& m, std::span<const double> v);

// Column sums of m.
std::vector<double> column_sums(const Matrix& m);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace mlhg
