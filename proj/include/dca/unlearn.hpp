#pragma once

#include "dca/data.hpp"
#include "dca/losses.hpp"
#include "dca/model.hpp"
#include "dca/train.hpp"

#include <map>
#include <string>
#include <utility>

namespace dca {

struct UnlearnConfig {
    float lambda = 1.0f;   // GRL strength; 0 disables the adversarial branch
    OptimConfig opt;       // steps, lr, batch size for the retain stream
    int noise_batch = 32;  // adversarial batch sizes (noise and forget)
    int forget_batch = 32;
    int classifier_hidden = 128;
    int snapshot_every = 25;  // rollback granularity on divergence
    uint64_t seed = 0;
};

struct UnlearnAudit {
    std::string forget_domain;
    std::map<std::string, double> before;  // per-domain zero-shot accuracy
    std::map<std::string, double> after;
    double forget_before = 0.0, forget_after = 0.0, forget_rel_drop = 0.0;
    double retain_before = 0.0, retain_after = 0.0, retain_rel_drop = 0.0;
    int steps_completed = 0;
    bool diverged = false;
};

// i.i.d. uniform [0,1] pixels, deterministic in the seed.
ImageBatch sample_noise_batch(int b, int c, int h, int w, uint64_t seed);

// Concurrent retain-stream contrastive training plus adversarial
// indistinguishability of the forget domain from random noise. The binary
// classifier rides on the penultimate (trunk) features behind a gradient
// reversal and is discarded afterwards. On divergence the last snapshot is
// restored and the audit flags it.
std::pair<ModelState, UnlearnAudit> unlearn_run(ModelState state,
                                                const DatasetManifest& retain,
                                                const DatasetManifest& forget,
                                                const UnlearnConfig& cfg,
                                                ImageCache& cache);

} // namespace dca
