#include "dca/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace dca {

LossWeights RunConfig::effective_weights() const {
    LossWeights w = weights;
    if (!ablation.domain_descriptions) w.c5 = 0.0f;
    if (!ablation.disentanglement) {
        w.c2 = 0.0f;
        w.c3 = 0.0f;
        w.c4 = 0.0f;
    }
    if (!ablation.mllm_hidden) w.c6 = 0.0f;
    return w;
}

namespace {

bool uses_diffusion_stream(const LossWeights& w) {
    return w.c3 != 0.0f || w.c4 != 0.0f || w.c5 != 0.0f || w.c6 != 0.0f;
}

std::vector<std::string> source_captions(const TrainBatch& batch,
                                         const DatasetManifest& m, bool with_domain) {
    std::vector<std::string> out;
    out.reserve(batch.class_indices.size());
    for (size_t i = 0; i < batch.class_indices.size(); ++i) {
        const std::string& cls = m.class_names[static_cast<size_t>(batch.class_indices[i])];
        if (with_domain) {
            const std::string& dom =
                m.domain_names[static_cast<size_t>(batch.domain_indices[i])];
            out.push_back(source_caption(cls, dom));
        } else {
            out.push_back(class_prompt(cls));
        }
    }
    return out;
}

struct LoopOptions {
    bool pretrain_captions = false;  // class+domain captions vs class prompts
    LossWeights weights;             // already ablation-adjusted
    bool dann = false;
    float dann_lambda = 1.0f;
    int dann_hidden = 128;
    int dann_classes = 0;            // 1 + number of styles
};

// One training loop drives pretraining and all three finetuners; the
// zero-weight short-circuiting in the loss builders keeps degenerate
// configurations bit-identical to the plain contrastive baseline.
void training_loop(ModelState& state, TwoStreamScheduler& sched,
                   const DatasetManifest& source, const OptimConfig& opt,
                   const LoopOptions& lo, uint64_t seed,
                   std::vector<StepRecord>* history) {
    AdamW adam;
    adam.lr = opt.lr;
    adam.weight_decay = opt.weight_decay;

    MlpClassifier dann_clf;
    AdamW dann_adam;
    if (lo.dann) {
        dann_clf = MlpClassifier::make(state.cfg.trunk_width, lo.dann_hidden,
                                       lo.dann_classes, sub_seed(seed, "dann_clf"));
        dann_adam.lr = opt.lr;
        dann_adam.weight_decay = opt.weight_decay;
    }

    for (int step = 0; step < opt.steps; ++step) {
        TrainBatch batch = sched.next();
        Tape tape;
        ModelGraph g(tape, state, true);
        std::vector<Var> clf_leaves;

        Var total;
        LossValue detail;
        Var feats = g.encode_image(batch.images);

        if (batch.stream == TrainBatch::Stream::source) {
            Var ic = g.project_class(feats);
            auto caps = source_captions(batch, source, lo.pretrain_captions);
            TextBatch tb = encode_prompts(state.vocab, caps, state.cfg.max_text_len);
            Var pt = g.encode_text(tb);
            std::optional<Var> id;
            if (lo.weights.c2 != 0.0f) id = g.project_domain(feats);
            LossBuild lb = source_loss_t(tape, ic, pt, id, g.tau(), lo.weights);
            total = lb.total;
            detail = lb.value;
        } else {
            Var ic = g.project_class(feats);
            Var id = g.project_domain(feats);
            TextBatch tb = encode_prompts(state.vocab, batch.captions,
                                          state.cfg.max_text_len);
            Var pt = g.encode_text(tb);
            std::optional<Var> ph;
            if (lo.weights.c6 != 0.0f) {
                if (batch.hidden.size() == 0)
                    throw std::runtime_error(
                        "finetune: style batch lacks hidden states while C6 is enabled");
                ph = g.project_hidden(batch.hidden);
            }
            LossBuild lb = diffusion_loss_t(tape, ic, id, pt, ph, g.tau(), lo.weights);
            total = lb.total;
            detail = lb.value;
        }

        if (lo.dann) {
            // adversarial multi-class domain discrimination on the trunk
            std::vector<int> labels;
            labels.reserve(batch.domain_indices.size());
            for (int d : batch.domain_indices)
                labels.push_back(batch.stream == TrainBatch::Stream::source ? 0 : 1 + d);
            Var reversed = tape.grad_reverse(feats, lo.dann_lambda);
            Var logits = dann_clf.forward(tape, reversed, clf_leaves);
            Var dom_ce = tape.cross_entropy_rows(logits, labels);
            detail.components["dann"] = static_cast<double>(dom_ce.scalar());
            detail.scalar += detail.components["dann"];
            total = total.valid() ? tape.add(total, dom_ce) : dom_ce;
        }

        if (!total.valid() || !std::isfinite(total.scalar()))
            throw std::runtime_error("training diverged (non-finite loss) at step " +
                                     std::to_string(step));

        tape.backward(total);
        g.pull_grads();
        adam.step(state.params, cosine_lr_scale(step, opt.steps, opt.lr_floor));
        state.params.zero_grads();
        if (lo.dann) {
            for (size_t i = 0; i < clf_leaves.size(); ++i)
                pull_grad(clf_leaves[i], dann_clf.params[static_cast<int>(i)]);
            dann_adam.step(dann_clf.params, cosine_lr_scale(step, opt.steps, opt.lr_floor));
            dann_clf.params.zero_grads();
        }
        state.clamp_tau();
        ++state.step;

        if (history) history->push_back({state.step, detail.scalar, detail.components});
    }
}

}  // namespace

ModelState pretrain_toy(const DatasetManifest& corpus, const PretrainConfig& cfg,
                        ImageCache& cache, const std::vector<StyleRecord>& styles,
                        std::vector<StepRecord>* history) {
    corpus.validate();
    Vocab vocab = build_vocab(corpus, styles);
    ModelState state = ModelState::init(cfg.model, vocab, cfg.seed);

    TwoStreamScheduler sched(corpus, {}, cfg.opt.batch_size, 1,
                             sub_seed(cfg.seed, "pretrain_sched"), cache);
    LoopOptions lo;
    lo.pretrain_captions = true;
    lo.weights = LossWeights{1, 0, 0, 0, 0, 0};
    training_loop(state, sched, corpus, cfg.opt, lo, cfg.seed, history);
    return state;
}

ModelState finetune(ModelState start, const DatasetManifest& source,
                    const std::vector<StyleRecord>& styles, const RunConfig& cfg,
                    ImageCache& cache, std::vector<StepRecord>* history) {
    source.validate();
    if (cfg.method != "flyp" && cfg.method != "dann" && cfg.method != "dca")
        throw std::invalid_argument("finetune: unknown method " + cfg.method);

    LoopOptions lo;
    lo.pretrain_captions = false;

    if (cfg.method == "flyp") {
        lo.weights = LossWeights{cfg.weights.c1, 0, 0, 0, 0, 0};
    } else if (cfg.method == "dca") {
        lo.weights = cfg.effective_weights();
    } else {  // dann: plain contrastive plus the adversarial domain classifier
        lo.weights = LossWeights{cfg.weights.c1, 0, 0, 0, 0, 0};
        if (styles.empty())
            throw std::invalid_argument("finetune: dann needs a style manifest");
        lo.dann = true;
        lo.dann_lambda = cfg.dann_lambda;
        lo.dann_hidden = cfg.dann_hidden;
        lo.dann_classes = 1 + static_cast<int>(styles.size());
    }

    bool wants_styles =
        cfg.method == "dann" || (cfg.method == "dca" && uses_diffusion_stream(lo.weights));
    if (cfg.method == "dca" && uses_diffusion_stream(lo.weights) && styles.empty())
        throw std::invalid_argument("finetune: dca needs a style manifest");

    TwoStreamScheduler sched(source, wants_styles ? styles : std::vector<StyleRecord>{},
                             cfg.opt.batch_size, cfg.interleave_ratio,
                             sub_seed(cfg.seed, "finetune_sched"), cache);
    training_loop(start, sched, source, cfg.opt, lo, cfg.seed, history);
    return start;
}

// ---------------------------------------------------------------------------
// evaluation / reporting
// ---------------------------------------------------------------------------

EvalTable evaluate(ModelState& state, const std::vector<DatasetManifest>& manifests,
                   ImageCache& cache, const std::string& method_name, int batch_size) {
    EvalTable table;
    for (const auto& m : manifests) {
        if (m.class_names.empty())
            throw std::invalid_argument("evaluate: manifest without class names");
        std::vector<std::string> prompts;
        prompts.reserve(m.class_names.size());
        for (const auto& c : m.class_names) prompts.push_back(class_prompt(c));
        TextBatch tb = encode_prompts(state.vocab, prompts, state.cfg.max_text_len);

        size_t correct = 0;
        for (size_t start = 0; start < m.samples.size();
             start += static_cast<size_t>(batch_size)) {
            size_t take = std::min(static_cast<size_t>(batch_size),
                                   m.samples.size() - start);
            std::vector<const Image*> imgs;
            std::vector<std::string> ids;
            for (size_t i = 0; i < take; ++i) {
                imgs.push_back(&cache.get(m.image_path(m.samples[start + i])));
                ids.push_back(m.samples[start + i].image);
            }
            auto preds = zero_shot_classify(make_image_batch(imgs, ids), tb, state);
            for (size_t i = 0; i < take; ++i)
                if (preds[i] == m.samples[start + i].class_index) ++correct;
        }
        EvalRow row;
        row.method = method_name;
        row.dataset = m.name;
        row.accuracy =
            static_cast<double>(correct) / static_cast<double>(m.samples.size());
        table.rows.push_back(std::move(row));
    }
    return table;
}

void join_ood(EvalTable& table, const std::vector<OODReport>& reports) {
    std::map<std::string, double> combined;
    for (const auto& r : reports) combined[r.dataset] = r.combined;
    for (auto& row : table.rows) {
        auto it = combined.find(row.dataset);
        if (it != combined.end()) row.combined_ood = it->second;
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::vector<MethodFit> report(const std::vector<EvalTable>& tables,
                              const std::vector<OODReport>& reports,
                              const std::string& out_dir) {
    if (tables.empty()) throw std::invalid_argument("report: no tables");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("report: cannot create " + out_dir);

    std::map<std::string, double> ood;
    for (const auto& r : reports) ood[r.dataset] = r.combined;

    // flatten, fill combined from reports when a row lacks it
    std::vector<EvalRow> rows;
    for (const auto& t : tables)
        for (auto row : t.rows) {
            if (!row.combined_ood) {
                auto it = ood.find(row.dataset);
                if (it != ood.end()) row.combined_ood = it->second;
            }
            rows.push_back(std::move(row));
        }

    std::map<std::string, double> zeroshot;  // dataset -> accuracy
    for (const auto& r : rows)
        if (r.method == "zeroshot") zeroshot[r.dataset] = r.accuracy;

    {
        std::ofstream os(out_dir + "/eval.csv", std::ios::binary | std::ios::trunc);
        os << "method,dataset,accuracy,combined_ood\n";
        for (const auto& r : rows) {
            os << r.method << "," << r.dataset << "," << format_double(r.accuracy) << ",";
            if (r.combined_ood) os << format_double(*r.combined_ood);
            os << "\n";
        }
    }

    // scatter: improvement over zeroshot vs combined OOD, per method
    struct Pt {
        std::string method, dataset;
        double x, y;
    };
    std::vector<Pt> pts;
    for (const auto& r : rows) {
        if (r.method == "zeroshot" || !r.combined_ood) continue;
        auto it = zeroshot.find(r.dataset);
        if (it == zeroshot.end()) continue;
        pts.push_back({r.method, r.dataset, *r.combined_ood, r.accuracy - it->second});
    }
    {
        std::ofstream os(out_dir + "/scatter.csv", std::ios::binary | std::ios::trunc);
        os << "method,dataset,combined_ood,improvement\n";
        for (const auto& p : pts)
            os << p.method << "," << p.dataset << "," << format_double(p.x) << ","
               << format_double(p.y) << "\n";
    }

    std::vector<MethodFit> fits;
    std::set<std::string> methods;
    for (const auto& p : pts) methods.insert(p.method);
    for (const auto& m : methods) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int n = 0;
        for (const auto& p : pts)
            if (p.method == m) {
                sx += p.x;
                sy += p.y;
                sxx += p.x * p.x;
                sxy += p.x * p.y;
                ++n;
            }
        MethodFit f;
        f.method = m;
        f.points = n;
        double denom = n * sxx - sx * sx;
        if (n >= 2 && std::fabs(denom) > 1e-30) {
            f.slope = (n * sxy - sx * sy) / denom;
            f.intercept = (sy - f.slope * sx) / n;
        }
        fits.push_back(std::move(f));
    }

    nlohmann::json j;
    j["fits"] = nlohmann::json::array();
    for (const auto& f : fits)
        j["fits"].push_back({{"method", f.method},
                             {"slope", f.slope},
                             {"intercept", f.intercept},
                             {"points", f.points}});
    std::ofstream os(out_dir + "/summary.json", std::ios::binary | std::ios::trunc);
    os << j.dump(2) << "\n";
    return fits;
}

} // namespace dca
