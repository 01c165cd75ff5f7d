#pragma once

#include "dca/nn.hpp"
#include "dca/tape.hpp"

#include <map>
#include <optional>
#include <string>

namespace dca {

// Scalar loss plus its per-term breakdown. The scalar always equals the sum
// of the recorded components (weighted terms are recorded post-weighting).
struct LossValue {
    double scalar = 0.0;
    std::map<std::string, double> components;
};

// Per-term weights for the composite losses. The ablation switches map onto
// these: domain descriptions -> c5, disentanglement -> c2/c3/c4,
// hidden states -> c6. A weight of exactly 0 skips the term entirely, so the
// degenerate configuration builds the same graph as the plain contrastive
// baseline.
struct LossWeights {
    float c1 = 1.0f;
    float c2 = 1.0f;
    float c3 = 1.0f;
    float c4 = 1.0f;
    float c5 = 1.0f;
    float c6 = 1.0f;
};

// Result of building a loss subgraph on a tape.
struct LossBuild {
    Var total;        // 1x1
    LossValue value;  // frozen numeric breakdown
};

// Two-layer perceptron used as the adversarial domain discriminator
// (binary for unlearning, multi-class for the DANN baseline).
struct MlpClassifier {
    ParamSet params;
    int in = 0, hidden = 0, out = 0;

    static MlpClassifier make(int in, int hidden, int out, uint64_t seed);
    Var forward(Tape& t, Var x) const;   // returns logits [B, out]
    Var forward(Tape& t, Var x, std::vector<Var>& leaves);  // trainable
};

// -- tape builders (training path) ------------------------------------------

// Symmetric contrastive cross-entropy with diagonal targets:
// 0.5 * (row-wise CE + column-wise CE) over logits X Y^T / tau.
Var agreement_loss_t(Tape& t, Var x, Var y, Var tau);

// Sum over paired rows of squared cosine similarity: sum_i ((X Y^T)_ii)^2.
Var disentangle_loss_t(Tape& t, Var x, Var y);

// C1 = w1 * l_a(I_C, P_T), C2 = w2 * l_d(I_C, I_D). Zero-weight terms are
// not built at all; `id` may be absent only when w.c2 == 0.
LossBuild source_loss_t(Tape& t, Var ic, Var pt, std::optional<Var> id, Var tau,
                        const LossWeights& w);

// C3 = l_d(I_C, I_D), C4 = l_d(P_T, I_C), C5 = l_a(P_T, I_D),
// C6 = l_a(P_T, P_H). `ph` may be invalid only when w.c6 == 0.
LossBuild diffusion_loss_t(Tape& t, Var ic, Var id, Var pt,
                           std::optional<Var> ph, Var tau,
                           const LossWeights& w);

// BCE of `clf` on grad-reversed features; noise rows get label 0, forget
// rows label 1. The classifier leaves receive the unreversed gradient.
LossBuild adversarial_domain_loss_t(Tape& t, Var feats_forget, Var feats_noise,
                                    MlpClassifier& clf,
                                    std::vector<Var>& clf_leaves, float lambda);

// -- value-level API (validating; used by tests and reporting) --------------

LossValue agreement_loss(const Mat& x, const Mat& y, float tau);
LossValue disentangle_loss(const Mat& x, const Mat& y);
LossValue source_loss(const Mat& ic, const Mat& pt, const Mat& id, float tau,
                      const LossWeights& w = {});
LossValue diffusion_loss(const Mat& ic, const Mat& id, const Mat& pt,
                         const Mat* ph, float tau, const LossWeights& w = {});
LossValue adversarial_domain_loss(const Mat& feats_forget,
                                  const Mat& feats_noise, MlpClassifier& clf,
                                  float lambda);

} // namespace dca
