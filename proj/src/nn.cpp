#include "dca/nn.hpp"

namespace dca {

void init_orthogonal(Mat& w, Rng& rng) {
    const bool wide = w.cols() > w.rows();
    Eigen::Index n = wide ? w.rows() : w.cols();
    Eigen::Index d = wide ? w.cols() : w.rows();

    // n vectors of dimension d, orthonormalized by modified Gram-Schmidt.
    Mat basis(n, d);
    init_normal(basis, rng, 1.0f);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            float proj = basis.row(i).dot(basis.row(j));
            basis.row(i) -= proj * basis.row(j);
        }
        float nrm = basis.row(i).norm();
        if (nrm < 1e-6f) {
            // retry this row with fresh noise; practically unreachable
            init_normal(basis, rng, 1.0f);
            i = -1;
            continue;
        }
        basis.row(i) /= nrm;
    }
    w = wide ? basis : Mat(basis.transpose());
}

float spectral_norm_estimate(const Mat& w, int iters) {
    if (w.rows() == 0 || w.cols() == 0) return 0.0f;
    Eigen::VectorXf u = Eigen::VectorXf::Ones(w.rows()).normalized();
    Eigen::VectorXf v;
    for (int i = 0; i < iters; ++i) {
        v = (w.transpose() * u).normalized();
        u = (w * v).normalized();
    }
    return u.dot(w * v);
}

void spectral_clip(Mat& w, float bound, int iters) {
    float s = spectral_norm_estimate(w, iters);
    if (s > bound && s > 0.0f) w *= bound / s;
}

} // namespace dca
