#include "dca/unlearn.hpp"

#include "dca/rng.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace dca {

ImageBatch sample_noise_batch(int b, int c, int h, int w, uint64_t seed) {
    if (b < 1 || c < 1 || h < 1 || w < 1)
        throw std::invalid_argument("sample_noise_batch: bad shape");
    ImageBatch batch;
    batch.b = b;
    batch.c = c;
    batch.h = h;
    batch.w = w;
    batch.pixels.resize(static_cast<size_t>(b) * batch.sample_size());
    Rng rng(seed);
    for (auto& v : batch.pixels) v = static_cast<float>(rng.uniform());
    batch.ids.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) batch.ids.push_back("noise_" + std::to_string(i));
    return batch;
}

namespace {

// Per-domain zero-shot accuracy over the domains present in the manifests.
std::map<std::string, double> audit_accuracy(ModelState& state,
                                             const DatasetManifest& retain,
                                             const DatasetManifest& forget,
                                             ImageCache& cache) {
    std::map<std::string, double> out;
    auto eval_domains = [&](const DatasetManifest& m) {
        std::set<int> present;
        for (const auto& s : m.samples) present.insert(s.domain_index);
        for (int d : present) {
            DatasetManifest sub = filter_domains(m, {d});
            sub.name = m.domain_names[static_cast<size_t>(d)];
            EvalTable t = evaluate(state, {sub}, cache, "audit");
            out[sub.name] = t.rows[0].accuracy;
        }
    };
    eval_domains(retain);
    eval_domains(forget);
    return out;
}

}  // namespace

std::pair<ModelState, UnlearnAudit> unlearn_run(ModelState state,
                                                const DatasetManifest& retain,
                                                const DatasetManifest& forget,
                                                const UnlearnConfig& cfg,
                                                ImageCache& cache) {
    retain.validate();
    forget.validate();
    if (cfg.lambda < 0.0f) throw std::invalid_argument("unlearn_run: lambda must be >= 0");
    if (cfg.opt.steps < 1) throw std::invalid_argument("unlearn_run: steps must be >= 1");

    std::set<int> retain_domains, forget_domains;
    for (const auto& s : retain.samples) retain_domains.insert(s.domain_index);
    for (const auto& s : forget.samples) forget_domains.insert(s.domain_index);
    for (int d : forget_domains)
        if (retain_domains.count(d))
            throw std::invalid_argument("unlearn_run: retain and forget domains overlap");
    if (forget_domains.size() != 1)
        throw std::invalid_argument("unlearn_run: expected exactly one forget domain");
    const std::string forget_name =
        forget.domain_names[static_cast<size_t>(*forget_domains.begin())];

    UnlearnAudit audit;
    audit.forget_domain = forget_name;
    audit.before = audit_accuracy(state, retain, forget, cache);

    const bool adversarial = cfg.lambda > 0.0f;
    TwoStreamScheduler retain_sched(retain, {}, cfg.opt.batch_size, 1,
                                    sub_seed(cfg.seed, "unlearn_retain"), cache);
    // the forget stream reuses the scheduler purely as a shuffled sampler
    std::optional<TwoStreamScheduler> forget_sched;
    MlpClassifier clf;
    AdamW clf_adam;
    if (adversarial) {
        forget_sched.emplace(forget, std::vector<StyleRecord>{}, cfg.forget_batch, 1,
                             sub_seed(cfg.seed, "unlearn_forget"), cache);
        clf = MlpClassifier::make(state.cfg.trunk_width, cfg.classifier_hidden, 1,
                                  sub_seed(cfg.seed, "unlearn_clf"));
        clf_adam.lr = cfg.opt.lr;
        clf_adam.weight_decay = 0.0f;
    }

    AdamW adam;
    adam.lr = cfg.opt.lr;
    adam.weight_decay = cfg.opt.weight_decay;

    // rolling snapshot for divergence rollback
    Checkpoint good = snapshot(state);
    int64_t good_step = 0;

    for (int step = 0; step < cfg.opt.steps; ++step) {
        TrainBatch rb = retain_sched.next();
        Tape tape;
        ModelGraph g(tape, state, true);
        std::vector<Var> clf_leaves;

        // retain stream: captioned contrastive (class + domain words), the
        // stand-in for the captioned retain corpus
        Var feats_r = g.encode_image(rb.images);
        Var ic = g.project_class(feats_r);
        std::vector<std::string> caps;
        caps.reserve(rb.class_indices.size());
        for (size_t i = 0; i < rb.class_indices.size(); ++i)
            caps.push_back(source_caption(
                retain.class_names[static_cast<size_t>(rb.class_indices[i])],
                retain.domain_names[static_cast<size_t>(rb.domain_indices[i])]));
        Var pt = g.encode_text(encode_prompts(state.vocab, caps, state.cfg.max_text_len));
        Var total = agreement_loss_t(tape, ic, pt, g.tau());

        if (adversarial) {
            TrainBatch fb = forget_sched->next();
            ImageBatch nb = sample_noise_batch(
                cfg.noise_batch, state.cfg.channels, state.cfg.image_size,
                state.cfg.image_size,
                sub_seed(cfg.seed, "unlearn_noise", static_cast<uint64_t>(step)));
            Var feats_f = g.encode_image(fb.images);
            Var feats_n = g.encode_image(nb);
            LossBuild adv =
                adversarial_domain_loss_t(tape, feats_f, feats_n, clf, clf_leaves, cfg.lambda);
            total = tape.add(total, adv.total);
        }

        if (!std::isfinite(total.scalar())) {
            state = to_model_state(good);
            state.step = good_step;
            audit.diverged = true;
            audit.steps_completed = step;
            break;
        }

        tape.backward(total);
        g.pull_grads();
        adam.step(state.params, cosine_lr_scale(step, cfg.opt.steps, cfg.opt.lr_floor));
        state.params.zero_grads();
        if (adversarial) {
            for (size_t i = 0; i < clf_leaves.size(); ++i)
                pull_grad(clf_leaves[i], clf.params[static_cast<int>(i)]);
            clf_adam.step(clf.params, cosine_lr_scale(step, cfg.opt.steps, cfg.opt.lr_floor));
            clf.params.zero_grads();
        }
        state.clamp_tau();
        ++state.step;
        audit.steps_completed = step + 1;

        if (cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0) {
            good = snapshot(state);
            good_step = state.step;
        }
    }

    audit.after = audit_accuracy(state, retain, forget, cache);

    audit.forget_before = audit.before.at(forget_name);
    audit.forget_after = audit.after.at(forget_name);
    audit.forget_rel_drop =
        audit.forget_before > 0.0
            ? (audit.forget_before - audit.forget_after) / audit.forget_before
            : 0.0;
    double rb_sum = 0.0, ra_sum = 0.0;
    int n = 0;
    for (const auto& [name, acc] : audit.before) {
        if (name == forget_name) continue;
        rb_sum += acc;
        ra_sum += audit.after.at(name);
        ++n;
    }
    audit.retain_before = n > 0 ? rb_sum / n : 0.0;
    audit.retain_after = n > 0 ? ra_sum / n : 0.0;
    audit.retain_rel_drop =
        audit.retain_before > 0.0
            ? (audit.retain_before - audit.retain_after) / audit.retain_before
            : 0.0;
    return {std::move(state), std::move(audit)};
}

} // namespace dca
