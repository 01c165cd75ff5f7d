#include "dca/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace dca {

const Mat& Var::value() const { return tape_->node(idx_).val; }
const Mat& Var::grad() const { return tape_->node(idx_).grad; }

Var Tape::push(Mat val, bool needs_grad, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Tape::grad_buf(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
}

Var Tape::leaf(Mat value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

void Tape::backward(Var loss) {
    if (loss.value().rows() != 1 || loss.value().cols() != 1)
        throw std::invalid_argument("backward: loss must be 1x1");
    grad_buf(loss.idx_)(0, 0) += 1.0f;
    for (int i = loss.idx_; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.back) continue;
        if (n.grad.size() == 0) continue;  // never reached from the loss
        n.back();
    }
}

namespace {
bool wants(const Tape::Node& n) { return n.needs_grad; }
}  // namespace

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims differ");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val * nodes_[ib].val;
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia).noalias() += g * nodes_[ib].val.transpose();
        if (wants(nodes_[ib])) grad_buf(ib).noalias() += nodes_[ia].val.transpose() * g;
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: feature dims differ");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val * nodes_[ib].val.transpose();
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia).noalias() += g * nodes_[ib].val;
        if (wants(nodes_[ib])) grad_buf(ib).noalias() += g.transpose() * nodes_[ia].val;
    });
}

Var Tape::transpose(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ia].val.transpose();
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia]() {
        grad_buf(ia) += nodes_[self].grad.transpose();
    });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("add: shape mismatch");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val + nodes_[ib].val;
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g;
        if (wants(nodes_[ib])) grad_buf(ib) += g;
    });
}

Var Tape::sub(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("sub: shape mismatch");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val - nodes_[ib].val;
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g;
        if (wants(nodes_[ib])) grad_buf(ib) -= g;
    });
}

Var Tape::add_rowvec(Var a, Var bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: bias must be [1, cols]");
    const int ia = a.idx_, ib = bias.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val.rowwise() + nodes_[ib].val.row(0);
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g;
        if (wants(nodes_[ib])) grad_buf(ib).row(0) += g.colwise().sum();
    });
}

Var Tape::hadamard(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("hadamard: shape mismatch");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val.cwiseProduct(nodes_[ib].val);
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g.cwiseProduct(nodes_[ib].val);
        if (wants(nodes_[ib])) grad_buf(ib) += g.cwiseProduct(nodes_[ia].val);
    });
}

Var Tape::scale(Var a, float s) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ia].val * s;
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia, s]() {
        grad_buf(ia) += nodes_[self].grad * s;
    });
}

Var Tape::mul_scalar(Var a, Var s) {
    if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("mul_scalar: s must be 1x1");
    const int ia = a.idx_, is = s.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[is]);
    Mat out = nodes_[ia].val * nodes_[is].val(0, 0);
    return push(std::move(out), ng, [this, self, ia, is]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g * nodes_[is].val(0, 0);
        if (wants(nodes_[is]))
            grad_buf(is)(0, 0) += g.cwiseProduct(nodes_[ia].val).sum();
    });
}

Var Tape::reciprocal_scalar(Var s) {
    if (s.rows() != 1 || s.cols() != 1)
        throw std::invalid_argument("reciprocal_scalar: s must be 1x1");
    const int is = s.idx_;
    const int self = static_cast<int>(nodes_.size());
    float y = 1.0f / nodes_[is].val(0, 0);
    Mat out(1, 1);
    out(0, 0) = y;
    return push(std::move(out), wants(nodes_[is]), [this, self, is]() {
        float yv = nodes_[self].val(0, 0);
        grad_buf(is)(0, 0) += -nodes_[self].grad(0, 0) * yv * yv;
    });
}

Var Tape::square(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ia].val.cwiseProduct(nodes_[ia].val);
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia]() {
        grad_buf(ia) += 2.0f * nodes_[self].grad.cwiseProduct(nodes_[ia].val);
    });
}

Var Tape::sum_all(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out(1, 1);
    out(0, 0) = nodes_[ia].val.sum();
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia]() {
        grad_buf(ia).array() += nodes_[self].grad(0, 0);
    });
}

Var Tape::mean_all(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    const float inv_n = 1.0f / static_cast<float>(nodes_[ia].val.size());
    Mat out(1, 1);
    out(0, 0) = nodes_[ia].val.sum() * inv_n;
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia, inv_n]() {
        grad_buf(ia).array() += nodes_[self].grad(0, 0) * inv_n;
    });
}

Var Tape::rowwise_dot(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("rowwise_dot: shape mismatch");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out = nodes_[ia].val.cwiseProduct(nodes_[ib].val).rowwise().sum();
    return push(std::move(out), ng, [this, self, ia, ib]() {
        const Mat& g = nodes_[self].grad;
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            if (wants(nodes_[ia])) grad_buf(ia).row(r) += g(r, 0) * nodes_[ib].val.row(r);
            if (wants(nodes_[ib])) grad_buf(ib).row(r) += g(r, 0) * nodes_[ia].val.row(r);
        }
    });
}

// ---------------------------------------------------------------------------
// activations / normalization
// ---------------------------------------------------------------------------

Var Tape::relu(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ia].val.cwiseMax(0.0f);
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia]() {
        grad_buf(ia) += nodes_[self]
                            .grad.cwiseProduct((nodes_[ia].val.array() > 0.0f)
                                                   .cast<float>()
                                                   .matrix());
    });
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Var Tape::gelu(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& x = nodes_[ia].val;
    Mat u = (kGeluC * (x.array() + kGeluA * x.array().cube())).matrix();
    auto t = std::make_shared<Mat>(u.array().tanh().matrix());
    Mat out = (0.5f * x.array() * (1.0f + t->array())).matrix();
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia, t]() {
        const Mat& xv = nodes_[ia].val;
        Eigen::ArrayXXf sech2 = 1.0f - t->array().square();
        Eigen::ArrayXXf du = kGeluC * (1.0f + 3.0f * kGeluA * xv.array().square());
        Eigen::ArrayXXf dydx = 0.5f * (1.0f + t->array()) + 0.5f * xv.array() * sech2 * du;
        grad_buf(ia).array() += nodes_[self].grad.array() * dydx;
    });
}

Var Tape::cosine(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ia].val.array().cos().matrix();
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia]() {
        grad_buf(ia).array() +=
            -nodes_[self].grad.array() * nodes_[ia].val.array().sin();
    });
}

Var Tape::row_l2_normalize(Var a) {
    const int ia = a.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& x = nodes_[ia].val;
    auto norms = std::make_shared<Eigen::VectorXf>(x.rowwise().norm());
    for (Eigen::Index r = 0; r < norms->size(); ++r) {
        if ((*norms)(r) < 1e-12f)
            throw std::domain_error("row_l2_normalize: degenerate (zero) row");
    }
    Mat out = (x.array().colwise() / norms->array()).matrix();
    return push(std::move(out), wants(nodes_[ia]), [this, self, ia, norms]() {
        const Mat& y = nodes_[self].val;
        const Mat& g = nodes_[self].grad;
        Mat& ga = grad_buf(ia);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            float dot = g.row(r).dot(y.row(r));
            ga.row(r) += (g.row(r) - dot * y.row(r)) / (*norms)(r);
        }
    });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps) {
    if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() ||
        beta.cols() != x.cols())
        throw std::invalid_argument("layer_norm: gamma/beta must be [1, cols]");
    const int ix = x.idx_, ig = gamma.idx_, ib = beta.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ix]) || wants(nodes_[ig]) || wants(nodes_[ib]);

    const Mat& xv = nodes_[ix].val;
    const Eigen::Index n = xv.cols();
    auto xhat = std::make_shared<Mat>(xv.rows(), n);
    auto inv_sd = std::make_shared<Eigen::VectorXf>(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        float mu = xv.row(r).mean();
        float var = (xv.row(r).array() - mu).square().mean();
        float is = 1.0f / std::sqrt(var + eps);
        (*inv_sd)(r) = is;
        xhat->row(r) = (xv.row(r).array() - mu) * is;
    }
    Mat out = *xhat;
    out.array().rowwise() *= nodes_[ig].val.row(0).array();
    out.rowwise() += nodes_[ib].val.row(0);

    return push(std::move(out), ng, [this, self, ix, ig, ib, xhat, inv_sd]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ib])) grad_buf(ib).row(0) += g.colwise().sum();
        if (wants(nodes_[ig]))
            grad_buf(ig).row(0) += g.cwiseProduct(*xhat).colwise().sum();
        if (wants(nodes_[ix])) {
            Mat& gx = grad_buf(ix);
            const Eigen::RowVectorXf gam = nodes_[ig].val.row(0);
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                Eigen::RowVectorXf dxhat = g.row(r).cwiseProduct(gam);
                float m1 = dxhat.mean();
                float m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
                gx.row(r) +=
                    ((dxhat.array() - m1) - xhat->row(r).array() * m2).matrix() *
                    (*inv_sd)(r);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// gather / regroup
// ---------------------------------------------------------------------------

Var Tape::embedding(Var table, const std::vector<int>& ids) {
    const int it = table.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& tab = nodes_[it].val;
    Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tab.rows())
            throw std::out_of_range("embedding: token id outside table");
        out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    }
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return push(std::move(out), wants(nodes_[it]), [this, self, it, ids_copy]() {
        const Mat& g = nodes_[self].grad;
        Mat& gt = grad_buf(it);
        for (size_t i = 0; i < ids_copy->size(); ++i)
            gt.row((*ids_copy)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var Tape::concat_rows(Var a, Var b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: col mismatch");
    const int ia = a.idx_, ib = b.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[ia]) || wants(nodes_[ib]);
    Mat out(a.rows() + b.rows(), a.cols());
    out.topRows(a.rows()) = nodes_[ia].val;
    out.bottomRows(b.rows()) = nodes_[ib].val;
    const Eigen::Index ra = a.rows(), rb = b.rows();
    return push(std::move(out), ng, [this, self, ia, ib, ra, rb]() {
        const Mat& g = nodes_[self].grad;
        if (wants(nodes_[ia])) grad_buf(ia) += g.topRows(ra);
        if (wants(nodes_[ib])) grad_buf(ib) += g.bottomRows(rb);
    });
}

Var Tape::mean_rows_grouped(Var x, int group) {
    if (group <= 0 || x.rows() % group != 0)
        throw std::invalid_argument("mean_rows_grouped: rows not divisible by group");
    const int ix = x.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Eigen::Index b = x.rows() / group;
    const Mat& xv = nodes_[ix].val;
    Mat out = Mat::Zero(b, x.cols());
    for (Eigen::Index i = 0; i < b; ++i)
        out.row(i) = xv.middleRows(i * group, group).colwise().mean();
    const float inv = 1.0f / static_cast<float>(group);
    return push(std::move(out), wants(nodes_[ix]), [this, self, ix, group, inv]() {
        const Mat& g = nodes_[self].grad;
        Mat& gx = grad_buf(ix);
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            gx.middleRows(i * group, group).rowwise() += g.row(i) * inv;
    });
}

Var Tape::masked_mean_rows(Var x, const std::vector<int>& lengths, int group) {
    if (group <= 0 || x.rows() % group != 0)
        throw std::invalid_argument("masked_mean_rows: rows not divisible by group");
    const Eigen::Index b = x.rows() / group;
    if (static_cast<Eigen::Index>(lengths.size()) != b)
        throw std::invalid_argument("masked_mean_rows: lengths size mismatch");
    for (int l : lengths)
        if (l < 1 || l > group) throw std::invalid_argument("masked_mean_rows: bad length");
    const int ix = x.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& xv = nodes_[ix].val;
    Mat out = Mat::Zero(b, x.cols());
    for (Eigen::Index i = 0; i < b; ++i)
        out.row(i) = xv.middleRows(i * group, lengths[i]).colwise().mean();
    auto len = std::make_shared<std::vector<int>>(lengths);
    return push(std::move(out), wants(nodes_[ix]), [this, self, ix, group, len]() {
        const Mat& g = nodes_[self].grad;
        Mat& gx = grad_buf(ix);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const float inv = 1.0f / static_cast<float>((*len)[i]);
            gx.middleRows(i * group, (*len)[i]).rowwise() += g.row(i) * inv;
        }
    });
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
    const int il = logits.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& z = nodes_[il].val;
    if (static_cast<Eigen::Index>(targets.size()) != z.rows())
        throw std::invalid_argument("cross_entropy_rows: targets size mismatch");
    auto probs = std::make_shared<Mat>(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        if (targets[r] < 0 || targets[r] >= z.cols())
            throw std::out_of_range("cross_entropy_rows: target outside classes");
        float mx = z.row(r).maxCoeff();
        Eigen::ArrayXf e = (z.row(r).array() - mx).exp();
        float denom = e.sum();
        probs->row(r) = (e / denom).matrix();
        loss += std::log(denom) + mx - z(r, targets[r]);
    }
    Mat out(1, 1);
    out(0, 0) = static_cast<float>(loss / static_cast<double>(z.rows()));
    auto tgt = std::make_shared<std::vector<int>>(targets);
    return push(std::move(out), wants(nodes_[il]), [this, self, il, probs, tgt]() {
        const float g = nodes_[self].grad(0, 0) / static_cast<float>(probs->rows());
        Mat& gl = grad_buf(il);
        gl += *probs * g;
        for (Eigen::Index r = 0; r < probs->rows(); ++r) gl(r, (*tgt)[r]) -= g;
    });
}

Var Tape::bce_with_logits(Var logits, const std::vector<int>& labels) {
    const int il = logits.idx_;
    const int self = static_cast<int>(nodes_.size());
    const Mat& z = nodes_[il].val;
    if (z.cols() != 1 || static_cast<Eigen::Index>(labels.size()) != z.rows())
        throw std::invalid_argument("bce_with_logits: want [B,1] logits and B labels");
    double loss = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        float zi = z(r, 0);
        float yi = static_cast<float>(labels[r]);
        // max(z,0) - y z + log(1 + exp(-|z|)): stable for both signs
        loss += std::max(zi, 0.0f) - yi * zi + std::log1p(std::exp(-std::fabs(zi)));
    }
    Mat out(1, 1);
    out(0, 0) = static_cast<float>(loss / static_cast<double>(z.rows()));
    auto lab = std::make_shared<std::vector<int>>(labels);
    return push(std::move(out), wants(nodes_[il]), [this, self, il, lab]() {
        const float g = nodes_[self].grad(0, 0) / static_cast<float>(lab->size());
        const Mat& z2 = nodes_[il].val;
        Mat& gl = grad_buf(il);
        for (Eigen::Index r = 0; r < z2.rows(); ++r) {
            float p = 1.0f / (1.0f + std::exp(-z2(r, 0)));
            gl(r, 0) += (p - static_cast<float>((*lab)[r])) * g;
        }
    });
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

Var Tape::attention(Var q, Var k, Var v, int batch, int tokens, int heads,
                    const std::vector<int>& lengths) {
    const Eigen::Index rows = static_cast<Eigen::Index>(batch) * tokens;
    if (q.rows() != rows || k.rows() != rows || v.rows() != rows)
        throw std::invalid_argument("attention: row count != batch*tokens");
    if (q.cols() != k.cols() || q.cols() != v.cols() || q.cols() % heads != 0)
        throw std::invalid_argument("attention: width must match and divide by heads");
    if (!lengths.empty() && static_cast<int>(lengths.size()) != batch)
        throw std::invalid_argument("attention: lengths size mismatch");

    const int iq = q.idx_, ik = k.idx_, iv = v.idx_;
    const int self = static_cast<int>(nodes_.size());
    const bool ng = wants(nodes_[iq]) || wants(nodes_[ik]) || wants(nodes_[iv]);
    const int dh = static_cast<int>(q.cols()) / heads;
    const float sc = 1.0f / std::sqrt(static_cast<float>(dh));

    const Mat& qv = nodes_[iq].val;
    const Mat& kv = nodes_[ik].val;
    const Mat& vv = nodes_[iv].val;

    auto attn = std::make_shared<std::vector<Mat>>();
    attn->reserve(static_cast<size_t>(batch) * heads);
    Mat out(rows, q.cols());
    for (int b = 0; b < batch; ++b) {
        const int valid = lengths.empty() ? tokens : lengths[static_cast<size_t>(b)];
        for (int h = 0; h < heads; ++h) {
            auto Q = qv.block(b * tokens, h * dh, tokens, dh);
            auto K = kv.block(b * tokens, h * dh, tokens, dh);
            auto V = vv.block(b * tokens, h * dh, tokens, dh);
            Mat s = (Q * K.transpose()) * sc;
            if (valid < tokens)
                s.rightCols(tokens - valid).setConstant(-1e30f);
            Mat a(tokens, tokens);
            for (int r = 0; r < tokens; ++r) {
                float mx = s.row(r).maxCoeff();
                Eigen::ArrayXf e = (s.row(r).array() - mx).exp();
                a.row(r) = (e / e.sum()).matrix();
            }
            out.block(b * tokens, h * dh, tokens, dh).noalias() = a * V;
            attn->push_back(std::move(a));
        }
    }

    return push(std::move(out), ng,
                [this, self, iq, ik, iv, batch, tokens, heads, dh, sc, attn]() {
        const Mat& g = nodes_[self].grad;
        const Mat& qv2 = nodes_[iq].val;
        const Mat& kv2 = nodes_[ik].val;
        const Mat& vv2 = nodes_[iv].val;
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < heads; ++h) {
                const Mat& a = (*attn)[static_cast<size_t>(b) * heads + h];
                auto gO = g.block(b * tokens, h * dh, tokens, dh);
                auto Q = qv2.block(b * tokens, h * dh, tokens, dh);
                auto K = kv2.block(b * tokens, h * dh, tokens, dh);
                auto V = vv2.block(b * tokens, h * dh, tokens, dh);
                Mat dA = gO * V.transpose();
                // dS = A .* (dA - rowsum(dA .* A))
                Eigen::VectorXf rowdot = dA.cwiseProduct(a).rowwise().sum();
                Mat dS = a.cwiseProduct(dA.colwise() - rowdot);
                if (wants(nodes_[iv]))
                    grad_buf(iv).block(b * tokens, h * dh, tokens, dh).noalias() +=
                        a.transpose() * gO;
                if (wants(nodes_[iq]))
                    grad_buf(iq).block(b * tokens, h * dh, tokens, dh).noalias() +=
                        (dS * K) * sc;
                if (wants(nodes_[ik]))
                    grad_buf(ik).block(b * tokens, h * dh, tokens, dh).noalias() +=
                        (dS.transpose() * Q) * sc;
            }
        }
    });
}

Var Tape::grad_reverse(Var x, float lambda) {
    if (lambda < 0.0f) throw std::invalid_argument("grad_reverse: lambda must be >= 0");
    const int ix = x.idx_;
    const int self = static_cast<int>(nodes_.size());
    Mat out = nodes_[ix].val;
    return push(std::move(out), wants(nodes_[ix]), [this, self, ix, lambda]() {
        grad_buf(ix) += nodes_[self].grad * (-lambda);
    });
}

} // namespace dca
