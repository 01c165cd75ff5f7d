#pragma once

#include "dca/mat.hpp"

#include <Eigen/Cholesky>
#include <cstdint>
#include <vector>

namespace dca {

// Reference configuration of the spectral-normalized Gaussian-process head:
// bounded-spectral-norm hidden layer, frozen random Fourier features, softmax
// output trained by cross-entropy, single-pass Laplace precision over the
// random features, Dempster-Shafer uncertainty as the OOD score.
struct SNGPConfig {
    int hidden = 128;
    int random_features = 1024;  // R
    float norm_bound = 0.95f;    // c
    double ridge = 1e-6;
    int epochs = 30;
    int batch_size = 64;
    float lr = 1e-3f;
    float mean_field = 0.3926990816987241f;  // pi/8 logit adjustment
    uint64_t seed = 0;
};

class SNGPHead {
public:
    SNGPHead() = default;

    bool fitted() const { return fitted_; }
    int classes() const { return n_classes_; }
    float train_accuracy() const { return train_acc_; }
    const Mat& hidden_weight() const { return w1_; }
    const SNGPConfig& config() const { return cfg_; }

    // Per-sample Dempster-Shafer uncertainty K/(K + sum_k exp(logit_k)) with
    // mean-field variance-adjusted logits.
    Eigen::VectorXf uncertainties(const Mat& features) const;

    // Dataset-level OOD score: mean uncertainty over the samples.
    double score(const Mat& features) const;

    friend SNGPHead fit_sngp(const Mat& features, const std::vector<int>& labels,
                             const SNGPConfig& cfg);

private:
    Mat random_feature_map(const Mat& features) const;  // [N, R]

    SNGPConfig cfg_;
    bool fitted_ = false;
    int n_classes_ = 0;
    float train_acc_ = 0.0f;
    Mat w1_, b1_;      // spectral-normalized hidden layer
    Mat w_rff_, b_rff_;  // frozen random projection
    Mat beta_;         // output weights [R, K]
    Eigen::LDLT<Eigen::MatrixXd> precision_;  // Laplace precision factorization
};

// Trains the head on the anchor split and accumulates the Laplace precision
// over random features in one pass after training. Deterministic in
// cfg.seed.
SNGPHead fit_sngp(const Mat& features, const std::vector<int>& labels,
                  const SNGPConfig& cfg);

// Dataset-level image OOD score (mean per-sample uncertainty).
double image_ood_score(const SNGPHead& head, const Mat& features);

} // namespace dca
