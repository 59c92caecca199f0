#include "graphslim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace graphslim {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw std::invalid_argument("tensor value count does not match shape");
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("ragged rows in Tensor::from_rows");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
    Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    t.mat() = m;
    return t;
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw std::invalid_argument("item() on non-scalar tensor of shape " + shape_string(*this));
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::transposed() const {
    Tensor t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
            t(j, i) = (*this)(i, j);
        }
    }
    return t;
}

std::string shape_string(const Tensor& t) {
    std::ostringstream os;
    os << t.rows() << "x" << t.cols();
    return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

SparseOperator::SparseOperator(SparseMatrix m) : matrix(std::move(m)), transpose(matrix.transpose()) {
    matrix.makeCompressed();
    transpose.makeCompressed();
}

Tensor SparseOperator::apply(const Tensor& x) const {
    if (cols() != x.rows()) {
        throw std::invalid_argument("sparse operator shape mismatch");
    }
    Tensor out(rows(), x.cols());
    out.mat().noalias() = matrix * x.mat();
    return out;
}

SparseOperatorPtr make_sparse_operator(SparseMatrix m) {
    return std::make_shared<const SparseOperator>(std::move(m));
}

SparseOperatorPtr sparse_from_dense(const Tensor& t) {
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (t(i, j) != 0.0) {
                triplets.emplace_back(static_cast<int>(i), static_cast<int>(j), t(i, j));
            }
        }
    }
    SparseMatrix m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
    m.setFromTriplets(triplets.begin(), triplets.end());
    return make_sparse_operator(std::move(m));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}


}  // namespace graphslim
