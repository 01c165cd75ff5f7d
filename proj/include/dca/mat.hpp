#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>

namespace dca {

// All dense math runs on row-major float matrices. Row-major keeps the
// [batch, feature] layout contiguous per sample, which every batch-wise
// op in this codebase relies on.
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool all_finite(const Mat& m) {
    return m.allFinite();
}

// Euclidean norm of each row; rows with norm below `eps` are reported as-is
// (callers decide whether a degenerate row is an error).
inline Eigen::VectorXf row_norms(const Mat& m) {
    return m.rowwise().norm();
}

inline bool rows_normalized(const Mat& m, float tol = 1e-4f) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (std::fabs(m.row(i).norm() - 1.0f) > tol) return false;
    }
    return true;
}

} // namespace dca
