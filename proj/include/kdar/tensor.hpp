#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace kdar {

using Index = std::int64_t;

// Dense row-major real matrix. Vectors are stored as n x 1 (column) or
// 1 x d (row) matrices; scalars as 1 x 1.
template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Throws NumericalError naming `where` if any entry is NaN or infinite.
template <typename Real>
void require_finite(const Matrix<Real>& m, std::string_view where);

}  // namespace kdar
