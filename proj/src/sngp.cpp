#include "dca/sngp.hpp"

#include "dca/nn.hpp"
#include "dca/rng.hpp"
#include "dca/tape.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace dca {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

Mat SNGPHead::random_feature_map(const Mat& features) const {
    // phi = sqrt(2/R) cos(relu(x W1 + b1) W_rff + b_rff)
    Mat h = (features * w1_).rowwise() + b1_.row(0);
    h = h.cwiseMax(0.0f);
    Mat z = (h * w_rff_).rowwise() + b_rff_.row(0);
    const float scale = std::sqrt(2.0f / static_cast<float>(cfg_.random_features));
    return scale * z.array().cos().matrix();
}

SNGPHead fit_sngp(const Mat& features, const std::vector<int>& labels,
                  const SNGPConfig& cfg) {
    if (features.rows() < 1 || static_cast<size_t>(features.rows()) != labels.size())
        throw std::invalid_argument("fit_sngp: features/labels mismatch");
    int n_classes = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("fit_sngp: negative label");
        n_classes = std::max(n_classes, l + 1);
    }
    if (features.rows() < n_classes)
        throw std::invalid_argument("fit_sngp: fewer samples than classes");

    SNGPHead head;
    head.cfg_ = cfg;
    head.n_classes_ = n_classes;

    const int f = static_cast<int>(features.cols());
    Rng rng(sub_seed(cfg.seed, "sngp_init"));
    head.w1_ = Mat(f, cfg.hidden);
    init_xavier(head.w1_, rng);
    spectral_clip(head.w1_, cfg.norm_bound, 30);
    head.b1_ = Mat::Zero(1, cfg.hidden);
    head.w_rff_ = Mat(cfg.hidden, cfg.random_features);
    init_normal(head.w_rff_, rng, 1.0f);
    head.b_rff_ = Mat(1, cfg.random_features);
    for (int i = 0; i < cfg.random_features; ++i)
        head.b_rff_(0, i) = static_cast<float>(rng.uniform(0.0, kTwoPi));
    head.beta_ = Mat::Zero(cfg.random_features, n_classes);

    // -- train the trainable parts (hidden layer + output weights) ----------
    ParamSet ps;
    ps.add("w1", f, cfg.hidden);
    ps.add("b1", 1, cfg.hidden, false);
    ps.add("beta", cfg.random_features, n_classes);
    ps.at("w1").w = head.w1_;
    ps.at("beta").w = head.beta_;

    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = 0.0f;

    const float rff_scale = std::sqrt(2.0f / static_cast<float>(cfg.random_features));
    Rng order_rng(sub_seed(cfg.seed, "sngp_batches"));
    std::vector<int> order(static_cast<size_t>(features.rows()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            size_t take = std::min(static_cast<size_t>(cfg.batch_size),
                                   order.size() - start);
            Mat xb(static_cast<Eigen::Index>(take), f);
            std::vector<int> yb(take);
            for (size_t i = 0; i < take; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = features.row(order[start + i]);
                yb[i] = labels[static_cast<size_t>(order[start + i])];
            }
            Tape t;
            Var w1 = param_leaf(t, ps.at("w1"));
            Var b1 = param_leaf(t, ps.at("b1"));
            Var beta = param_leaf(t, ps.at("beta"));
            Var h = t.relu(t.add_rowvec(t.matmul(t.leaf(std::move(xb)), w1), b1));
            Var phi = t.scale(
                t.cosine(t.add_rowvec(t.matmul(h, t.leaf(head.w_rff_)),
                                      t.leaf(head.b_rff_))),
                rff_scale);
            Var logits = t.matmul(phi, beta);
            Var loss = t.cross_entropy_rows(logits, yb);
            t.backward(loss);
            pull_grad(w1, ps.at("w1"));
            pull_grad(b1, ps.at("b1"));
            pull_grad(beta, ps.at("beta"));
            opt.step(ps);
            ps.zero_grads();
            spectral_clip(ps.at("w1").w, cfg.norm_bound, 8);
        }
    }
    head.w1_ = ps.at("w1").w;
    head.b1_ = ps.at("b1").w;
    head.beta_ = ps.at("beta").w;

    // -- single-pass Laplace precision over random features -----------------
    Mat phi = head.random_feature_map(features);
    Mat logits = phi * head.beta_;
    Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(cfg.random_features,
                                                          cfg.random_features) *
                                cfg.ridge;
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        float mx = logits.row(i).maxCoeff();
        Eigen::ArrayXf e = (logits.row(i).array() - mx).exp();
        Eigen::ArrayXf p = e / e.sum();
        int arg = 0;
        for (int k = 1; k < n_classes; ++k)
            if (p(k) > p(arg)) arg = k;
        if (arg == labels[static_cast<size_t>(i)]) ++correct;
        double pmax = static_cast<double>(p(arg));
        double w = pmax * (1.0 - pmax);
        Eigen::VectorXd phirow = phi.row(i).cast<double>();
        precision.selfadjointView<Eigen::Lower>().rankUpdate(phirow, w);
    }
    precision = precision.selfadjointView<Eigen::Lower>();
    head.precision_.compute(precision);
    if (head.precision_.info() != Eigen::Success)
        throw std::runtime_error("fit_sngp: singular Laplace precision");
    head.train_acc_ = static_cast<float>(correct) / static_cast<float>(features.rows());
    head.fitted_ = true;
    return head;
}

Eigen::VectorXf SNGPHead::uncertainties(const Mat& features) const {
    if (!fitted_) throw std::logic_error("SNGPHead: head is not fitted");
    if (features.cols() != w1_.rows())
        throw std::invalid_argument("SNGPHead: feature width mismatch");

    Mat phi = random_feature_map(features);
    Mat logits = phi * beta_;
    Eigen::VectorXf out(features.rows());
    const double k = static_cast<double>(n_classes_);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        Eigen::VectorXd phirow = phi.row(i).cast<double>();
        double var = phirow.dot(precision_.solve(phirow));
        if (var < 0.0) var = 0.0;
        double denom_scale = std::sqrt(1.0 + cfg_.mean_field * var);
        double sum_exp = 0.0;
        for (int c = 0; c < n_classes_; ++c)
            sum_exp += std::exp(static_cast<double>(logits(i, c)) / denom_scale);
        out(i) = static_cast<float>(k / (k + sum_exp));
    }
    return out;
}

double SNGPHead::score(const Mat& features) const {
    Eigen::VectorXf u = uncertainties(features);
    return static_cast<double>(u.sum()) / static_cast<double>(u.size());
}

double image_ood_score(const SNGPHead& head, const Mat& features) {
    return head.score(features);
}

} // namespace dca
