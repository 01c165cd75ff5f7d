#pragma once

// Brute-force double-precision reference implementations used to check the
// float32 production paths. These deliberately share no code with dca_core:
// everything is recomputed from first principles.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

namespace oracle {

using Matd = Eigen::MatrixXd;

// Symmetric contrastive cross-entropy with diagonal targets.
inline double agreement(const Matd& x, const Matd& y, double tau) {
    const Eigen::Index b = x.rows();
    Matd logits = (x * y.transpose()) / tau;
    double row_ce = 0.0, col_ce = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        double denom = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) denom += std::exp(logits(i, j));
        row_ce += -std::log(std::exp(logits(i, i)) / denom);
        double denom_c = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) denom_c += std::exp(logits(j, i));
        col_ce += -std::log(std::exp(logits(i, i)) / denom_c);
    }
    return 0.5 * (row_ce / static_cast<double>(b) + col_ce / static_cast<double>(b));
}

// Squared sum of the diagonal of the cross-correlation matrix.
inline double disentangle(const Matd& x, const Matd& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double d = x.row(i).dot(y.row(i));
        s += d * d;
    }
    return s;
}

// Binary cross-entropy on probabilities produced by a caller-supplied
// logit evaluation.
inline double bce(const std::vector<double>& logits, const std::vector<int>& labels) {
    double s = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        double p = 1.0 / (1.0 + std::exp(-logits[i]));
        s += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return s / static_cast<double>(logits.size());
}

// Row-normalizes in double precision.
inline Matd normalize_rows(Matd m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
    return m;
}

// Pearson correlation plus two-sided p-value via the regularized incomplete
// beta function (continued-fraction evaluation).
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    auto betacf = [](double a2, double b2, double x2) {
        const int max_iter = 300;
        const double eps = 3e-14, fpmin = 1e-300;
        double qab = a2 + b2, qap = a2 + 1.0, qam = a2 - 1.0;
        double c = 1.0, d = 1.0 - qab * x2 / qap;
        if (std::fabs(d) < fpmin) d = fpmin;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= max_iter; ++m) {
            int m2 = 2 * m;
            double aa = m * (b2 - m) * x2 / ((qam + m2) * (a2 + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + aa / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a2 + m) * (qab + m) * x2 / ((a2 + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < fpmin) d = fpmin;
            c = 1.0 + aa / c;
            if (std::fabs(c) < fpmin) c = fpmin;
            d = 1.0 / d;
            double del = d * c;
            h *= del;
            if (std::fabs(del - 1.0) < eps) break;
        }
        return h;
    };
    double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

struct Corr {
    double r;
    double p;
};

inline Corr pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double r = sxy / std::sqrt(sxx * syy);
    double df = n - 2.0;
    double rr = std::min(std::fabs(r), 1.0 - 1e-15);
    double t2 = rr * rr * df / (1.0 - rr * rr);
    double p = incomplete_beta(df / 2.0, 0.5, df / (df + t2));
    return {r, p};
}

// Ordinary least squares y = slope*x + intercept.
struct Line {
    double slope;
    double intercept;
};

inline Line least_squares(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double intercept = (sy - slope * sx) / n;
    return {slope, intercept};
}

} // namespace oracle
