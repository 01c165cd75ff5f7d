#include "dca/losses.hpp"

#include <numeric>
#include <stdexcept>

namespace dca {

namespace {

void check_pair(const Mat& x, const Mat& y, const char* who) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument(std::string(who) + ": shape mismatch");
    if (x.rows() < 1) throw std::invalid_argument(std::string(who) + ": empty batch");
}

void check_normalized(const Mat& m, const char* who) {
    if (!rows_normalized(m, 1e-4f))
        throw std::invalid_argument(std::string(who) + ": rows are not unit-norm");
}

std::vector<int> iota_targets(Eigen::Index n) {
    std::vector<int> t(static_cast<size_t>(n));
    std::iota(t.begin(), t.end(), 0);
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

Var agreement_loss_t(Tape& t, Var x, Var y, Var tau) {
    check_pair(x.value(), y.value(), "agreement_loss");
    check_normalized(x.value(), "agreement_loss");
    check_normalized(y.value(), "agreement_loss");
    if (tau.value()(0, 0) <= 0.0f)
        throw std::invalid_argument("agreement_loss: tau must be positive");

    Var inv_tau = t.reciprocal_scalar(tau);
    Var logits = t.mul_scalar(t.matmul_nt(x, y), inv_tau);
    auto diag = iota_targets(x.rows());
    Var row_ce = t.cross_entropy_rows(logits, diag);
    Var col_ce = t.cross_entropy_rows(t.transpose(logits), diag);
    return t.scale(t.add(row_ce, col_ce), 0.5f);
}

Var disentangle_loss_t(Tape& t, Var x, Var y) {
    check_pair(x.value(), y.value(), "disentangle_loss");
    check_normalized(x.value(), "disentangle_loss");
    check_normalized(y.value(), "disentangle_loss");
    return t.sum_all(t.square(t.rowwise_dot(x, y)));
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

namespace {

// Accumulates weighted terms, skipping zero weights so the degenerate
// configuration is bit-identical to a graph that never mentions the term.
struct TermSum {
    Tape& t;
    std::optional<Var> total;
    LossValue value;

    void add(const std::string& name, float w, Var term) {
        Var scaled = (w == 1.0f) ? term : t.scale(term, w);
        value.components[name] = static_cast<double>(scaled.scalar());
        total = total ? t.add(*total, scaled) : scaled;
    }

    LossBuild finish() {
        Var out = total ? *total : t.leaf(Mat::Zero(1, 1), false);
        value.scalar = 0.0;
        for (const auto& [name, v] : value.components) value.scalar += v;
        return {out, value};
    }
};

}  // namespace

LossBuild source_loss_t(Tape& t, Var ic, Var pt, std::optional<Var> id, Var tau,
                        const LossWeights& w) {
    if (w.c2 != 0.0f && !id)
        throw std::invalid_argument("source_loss: domain head output required while C2 is enabled");
    TermSum sum{t, {}, {}};
    if (w.c1 != 0.0f) sum.add("C1", w.c1, agreement_loss_t(t, ic, pt, tau));
    if (w.c2 != 0.0f) sum.add("C2", w.c2, disentangle_loss_t(t, ic, *id));
    return sum.finish();
}

LossBuild diffusion_loss_t(Tape& t, Var ic, Var id, Var pt,
                           std::optional<Var> ph, Var tau,
                           const LossWeights& w) {
    if (w.c6 != 0.0f && !ph)
        throw std::invalid_argument(
            "diffusion_loss: hidden states required while C6 is enabled");
    TermSum sum{t, {}, {}};
    if (w.c3 != 0.0f) sum.add("C3", w.c3, disentangle_loss_t(t, ic, id));
    if (w.c4 != 0.0f) sum.add("C4", w.c4, disentangle_loss_t(t, pt, ic));
    if (w.c5 != 0.0f) sum.add("C5", w.c5, agreement_loss_t(t, pt, id, tau));
    if (w.c6 != 0.0f) sum.add("C6", w.c6, agreement_loss_t(t, pt, *ph, tau));
    return sum.finish();
}

// ---------------------------------------------------------------------------
// adversarial discriminator
// ---------------------------------------------------------------------------

MlpClassifier MlpClassifier::make(int in, int hidden, int out, uint64_t seed) {
    MlpClassifier c;
    c.in = in;
    c.hidden = hidden;
    c.out = out;
    c.params.add("w1", in, hidden);
    c.params.add("b1", 1, hidden, /*decay=*/false);
    c.params.add("w2", hidden, out);
    c.params.add("b2", 1, out, /*decay=*/false);
    Rng rng(sub_seed(seed, "mlp_classifier"));
    init_xavier(c.params.at("w1").w, rng);
    init_xavier(c.params.at("w2").w, rng);
    return c;
}

Var MlpClassifier::forward(Tape& t, Var x) const {
    Var h = t.relu(t.add_rowvec(t.matmul(x, t.leaf(params.at("w1").w, false)),
                                t.leaf(params.at("b1").w, false)));
    return t.add_rowvec(t.matmul(h, t.leaf(params.at("w2").w, false)),
                        t.leaf(params.at("b2").w, false));
}

Var MlpClassifier::forward(Tape& t, Var x, std::vector<Var>& leaves) {
    Var w1 = param_leaf(t, params.at("w1"));
    Var b1 = param_leaf(t, params.at("b1"));
    Var w2 = param_leaf(t, params.at("w2"));
    Var b2 = param_leaf(t, params.at("b2"));
    leaves.insert(leaves.end(), {w1, b1, w2, b2});
    Var h = t.relu(t.add_rowvec(t.matmul(x, w1), b1));
    return t.add_rowvec(t.matmul(h, w2), b2);
}

LossBuild adversarial_domain_loss_t(Tape& t, Var feats_forget, Var feats_noise,
                                    MlpClassifier& clf,
                                    std::vector<Var>& clf_leaves, float lambda) {
    if (feats_forget.rows() < 1 || feats_noise.rows() < 1)
        throw std::invalid_argument("adversarial_domain_loss: empty batch");
    if (feats_forget.cols() != feats_noise.cols())
        throw std::invalid_argument("adversarial_domain_loss: feature width mismatch");
    if (clf.out != 1)
        throw std::invalid_argument("adversarial_domain_loss: classifier must be binary");

    Var feats = t.concat_rows(feats_noise, feats_forget);
    Var reversed = t.grad_reverse(feats, lambda);
    Var logits = clf.forward(t, reversed, clf_leaves);
    std::vector<int> labels(static_cast<size_t>(feats.rows()), 1);
    for (Eigen::Index i = 0; i < feats_noise.rows(); ++i)
        labels[static_cast<size_t>(i)] = 0;
    Var bce = t.bce_with_logits(logits, labels);
    LossValue v;
    v.scalar = bce.scalar();
    v.components["bce"] = v.scalar;
    return {bce, v};
}

// ---------------------------------------------------------------------------
// value-level wrappers
// ---------------------------------------------------------------------------

LossValue agreement_loss(const Mat& x, const Mat& y, float tau) {
    Tape t;
    Var v = agreement_loss_t(t, t.leaf(x), t.leaf(y), t.leaf(Mat::Constant(1, 1, tau)));
    LossValue out;
    out.scalar = v.scalar();
    out.components["l_a"] = out.scalar;
    return out;
}

LossValue disentangle_loss(const Mat& x, const Mat& y) {
    Tape t;
    Var v = disentangle_loss_t(t, t.leaf(x), t.leaf(y));
    LossValue out;
    out.scalar = v.scalar();
    out.components["l_d"] = out.scalar;
    return out;
}

LossValue source_loss(const Mat& ic, const Mat& pt, const Mat& id, float tau,
                      const LossWeights& w) {
    Tape t;
    return source_loss_t(t, t.leaf(ic), t.leaf(pt), std::optional<Var>(t.leaf(id)),
                         t.leaf(Mat::Constant(1, 1, tau)), w)
        .value;
}

LossValue diffusion_loss(const Mat& ic, const Mat& id, const Mat& pt,
                         const Mat* ph, float tau, const LossWeights& w) {
    Tape t;
    std::optional<Var> phv;
    if (ph != nullptr && ph->size() > 0) phv = t.leaf(*ph);
    return diffusion_loss_t(t, t.leaf(ic), t.leaf(id), t.leaf(pt), phv,
                            t.leaf(Mat::Constant(1, 1, tau)), w)
        .value;
}

LossValue adversarial_domain_loss(const Mat& feats_forget,
                                  const Mat& feats_noise, MlpClassifier& clf,
                                  float lambda) {
    Tape t;
    std::vector<Var> leaves;
    return adversarial_domain_loss_t(t, t.leaf(feats_forget), t.leaf(feats_noise),
                                     clf, leaves, lambda)
        .value;
}

} // namespace dca
