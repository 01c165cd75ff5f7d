#pragma once

#include "dca/mat.hpp"
#include "dca/rng.hpp"
#include "dca/tape.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dca {

// A trainable tensor plus its gradient accumulator and Adam moments.
struct Param {
    std::string name;
    Mat w;
    Mat g;
    Mat m;  // first moment, allocated on first optimizer step
    Mat v;  // second moment
    bool decay = true;  // weight decay applies (off for gains/biases/tau)

    void zero_grad() { g.setZero(); }
};

// Ordered, named parameter collection. Order is creation order and defines
// both the optimizer update order and the checkpoint tensor directory.
class ParamSet {
public:
    int add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
            bool decay = true) {
        if (index_.count(name)) throw std::invalid_argument("duplicate param: " + name);
        Param p;
        p.name = name;
        p.w = Mat::Zero(rows, cols);
        p.g = Mat::Zero(rows, cols);
        p.decay = decay;
        index_[name] = static_cast<int>(items_.size());
        items_.push_back(std::move(p));
        return static_cast<int>(items_.size()) - 1;
    }

    Param& operator[](int i) { return items_[static_cast<size_t>(i)]; }
    const Param& operator[](int i) const { return items_[static_cast<size_t>(i)]; }

    Param& at(const std::string& name) { return items_[static_cast<size_t>(find(name))]; }
    const Param& at(const std::string& name) const {
        return items_[static_cast<size_t>(find(name))];
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such param: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t size() const { return items_.size(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grads() {
        for (auto& p : items_) p.zero_grad();
    }

private:
    std::vector<Param> items_;
    std::map<std::string, int> index_;
};

// Pulls a parameter onto a tape as a differentiable leaf.
inline Var param_leaf(Tape& t, const Param& p) { return t.leaf(p.w, true); }

// Copies the leaf's accumulated gradient back into the parameter.
inline void pull_grad(const Var& leaf, Param& p) {
    if (leaf.grad().size() != 0) p.g += leaf.grad();
}

// Decoupled-weight-decay Adam. Updates run in ParamSet order; with a fixed
// seed and identical gradient streams, two runs produce bit-identical
// parameters.
class AdamW {
public:
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;

    void step(ParamSet& params, float lr_scale = 1.0f) {
        ++t_;
        const float b1t = 1.0f - std::pow(beta1, static_cast<float>(t_));
        const float b2t = 1.0f - std::pow(beta2, static_cast<float>(t_));
        const float step_lr = lr * lr_scale;
        for (auto& p : params) {
            if (p.m.size() == 0) {
                p.m = Mat::Zero(p.w.rows(), p.w.cols());
                p.v = Mat::Zero(p.w.rows(), p.w.cols());
            }
            p.m = beta1 * p.m + (1.0f - beta1) * p.g;
            p.v = beta2 * p.v + (1.0f - beta2) * p.g.cwiseProduct(p.g);
            if (p.decay && weight_decay > 0.0f) p.w *= (1.0f - step_lr * weight_decay);
            p.w.array() -=
                step_lr * (p.m.array() / b1t) / ((p.v.array() / b2t).sqrt() + eps);
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    int64_t t_ = 0;
};

// Cosine decay from 1 at step 0 to `floor` at `total` steps.
inline float cosine_lr_scale(int64_t step, int64_t total, float floor = 0.05f) {
    if (total <= 0) return 1.0f;
    if (step >= total) return floor;
    double x = 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                     static_cast<double>(total)));
    return floor + (1.0f - floor) * static_cast<float>(x);
}

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

inline void init_normal(Mat& w, Rng& rng, float std_dev) {
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            w(r, c) = static_cast<float>(rng.normal()) * std_dev;
}

// Xavier/Glorot uniform for a [in, out] weight matrix.
inline void init_xavier(Mat& w, Rng& rng) {
    float bound = std::sqrt(6.0f / static_cast<float>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            w(r, c) = static_cast<float>(rng.uniform(-bound, bound));
}

// Orthogonal init via Gram-Schmidt on seeded Gaussian rows (handles both
// orientations; for non-square shapes the smaller dimension is orthonormal).
void init_orthogonal(Mat& w, Rng& rng);

// Largest singular value estimate via power iteration.
float spectral_norm_estimate(const Mat& w, int iters = 30);

// Rescales w in place so its largest singular value is at most `bound`.
void spectral_clip(Mat& w, float bound, int iters = 8);

} // namespace dca
