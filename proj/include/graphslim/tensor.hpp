#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace graphslim {

/// Raised whenever an engine operation produces NaN or Inf.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Dense row-major matrix of doubles. Scalars are 1x1, vectors are n x 1 or 1 x n.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);
    static Tensor from_matrix(const RowMatrix& m);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Value of a 1x1 tensor.
    double item() const;

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }

    MatrixMap mat() { return MatrixMap(values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)); }
    ConstMatrixMap mat() const {
        return ConstMatrixMap(values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
    }

    bool all_finite() const;
    Tensor transposed() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

std::string shape_string(const Tensor& t);

/// Max absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Constant sparse operator with its transpose cached for the adjoint product.
struct SparseOperator {
    SparseMatrix matrix;
    SparseMatrix transpose;

    explicit SparseOperator(SparseMatrix m);
    std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(matrix.cols()); }
    Tensor apply(const Tensor& x) const;
};

using SparseOperatorPtr = std::shared_ptr<const SparseOperator>;

SparseOperatorPtr make_sparse_operator(SparseMatrix m);
/// Converts a dense tensor to a sparse operator, dropping exact zeros.
SparseOperatorPtr sparse_from_dense(const Tensor& t);

/// Undirected weighted edges with u < v, used by edge-weighted propagation primitives.
struct EdgeList {
    std::size_t num_nodes = 0;
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
};

/// Splits a 64-bit seed into an independent stream (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace graphslim
