#include "dca/model.hpp"

#include <stdexcept>

namespace dca {

void ImageBatch::validate() const {
    if (b < 1 || c < 1 || h < 1 || w < 1)
        throw std::invalid_argument("ImageBatch: empty batch");
    if (pixels.size() != static_cast<size_t>(b) * sample_size())
        throw std::invalid_argument("ImageBatch: pixel buffer size mismatch");
    for (float v : pixels)
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("ImageBatch: pixel outside [0,1]");
}

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw std::invalid_argument("ModelConfig: patch size must divide image size");
    if (trunk_width % trunk_heads != 0 || text_width % text_heads != 0)
        throw std::invalid_argument("ModelConfig: heads must divide width");
    if (embed_dim < 1 || hidden_width < 1 || max_text_len < 1)
        throw std::invalid_argument("ModelConfig: bad dimensions");
    if (tau_init <= 0.0f || tau_min <= 0.0f)
        throw std::invalid_argument("ModelConfig: tau must be positive");
}

namespace {

void add_encoder_params(ParamSet& ps, const std::string& prefix, int width,
                        int blocks, int mlp_ratio) {
    for (int i = 0; i < blocks; ++i) {
        std::string b = prefix + ".b" + std::to_string(i) + ".";
        ps.add(b + "ln1_g", 1, width, false);
        ps.add(b + "ln1_b", 1, width, false);
        ps.add(b + "wq", width, width);
        ps.add(b + "bq", 1, width, false);
        ps.add(b + "wk", width, width);
        ps.add(b + "bk", 1, width, false);
        ps.add(b + "wv", width, width);
        ps.add(b + "bv", 1, width, false);
        ps.add(b + "wo", width, width);
        ps.add(b + "bo", 1, width, false);
        ps.add(b + "ln2_g", 1, width, false);
        ps.add(b + "ln2_b", 1, width, false);
        ps.add(b + "mlp_w1", width, mlp_ratio * width);
        ps.add(b + "mlp_b1", 1, mlp_ratio * width, false);
        ps.add(b + "mlp_w2", mlp_ratio * width, width);
        ps.add(b + "mlp_b2", 1, width, false);
    }
    ps.add(prefix + ".lnf_g", 1, width, false);
    ps.add(prefix + ".lnf_b", 1, width, false);
}

void init_encoder_params(ParamSet& ps, const std::string& prefix, int width,
                         int blocks, Rng& rng) {
    for (int i = 0; i < blocks; ++i) {
        std::string b = prefix + ".b" + std::to_string(i) + ".";
        ps.at(b + "ln1_g").w.setOnes();
        ps.at(b + "ln2_g").w.setOnes();
        for (const char* w : {"wq", "wk", "wv", "wo", "mlp_w1", "mlp_w2"})
            init_xavier(ps.at(b + w).w, rng);
        // residual-path outputs start small so deep stacks stay stable
        ps.at(b + "wo").w *= 0.5f;
        ps.at(b + "mlp_w2").w *= 0.5f;
    }
    ps.at(prefix + ".lnf_g").w.setOnes();
    (void)width;
}

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed) {
    cfg.validate();
    if (vocab.size() < 2) throw std::invalid_argument("ModelState: empty vocabulary");

    ModelState s;
    s.cfg = cfg;
    s.vocab = vocab;
    s.seed = seed;

    ParamSet& ps = s.params;
    ps.add("img.patch_w", cfg.patch_dim(), cfg.trunk_width);
    ps.add("img.patch_b", 1, cfg.trunk_width, false);
    ps.add("img.pos", cfg.image_tokens(), cfg.trunk_width, false);
    add_encoder_params(ps, "img", cfg.trunk_width, cfg.trunk_blocks, cfg.trunk_mlp);
    ps.add("head.class_w", cfg.trunk_width, cfg.embed_dim);
    ps.add("head.domain_w", cfg.trunk_width, cfg.embed_dim);
    ps.add("txt.tok", vocab.size(), cfg.text_width);
    ps.add("txt.pos", cfg.max_text_len, cfg.text_width, false);
    add_encoder_params(ps, "txt", cfg.text_width, cfg.text_blocks, cfg.text_mlp);
    ps.add("txt.proj_w", cfg.text_width, cfg.embed_dim);
    ps.add("hid.proj_w", cfg.hidden_width, cfg.embed_dim);
    ps.add("tau", 1, 1, false);

    Rng rng(sub_seed(seed, "model_init"));
    init_xavier(ps.at("img.patch_w").w, rng);
    init_normal(ps.at("img.pos").w, rng, 0.02f);
    init_encoder_params(ps, "img", cfg.trunk_width, cfg.trunk_blocks, rng);
    init_xavier(ps.at("head.class_w").w, rng);
    init_xavier(ps.at("head.domain_w").w, rng);
    init_normal(ps.at("txt.tok").w, rng, 0.02f);
    init_normal(ps.at("txt.pos").w, rng, 0.02f);
    init_encoder_params(ps, "txt", cfg.text_width, cfg.text_blocks, rng);
    init_xavier(ps.at("txt.proj_w").w, rng);
    init_orthogonal(ps.at("hid.proj_w").w, rng);
    ps.at("tau").w(0, 0) = cfg.tau_init;
    return s;
}

// ---------------------------------------------------------------------------
// patch extraction
// ---------------------------------------------------------------------------

Mat patchify(const ImageBatch& batch, const ModelConfig& cfg) {
    if (batch.h != cfg.image_size || batch.w != cfg.image_size ||
        batch.c != cfg.channels)
        throw std::invalid_argument("patchify: batch shape differs from configured input");
    const int grid = cfg.image_size / cfg.patch_size;
    const int tokens = grid * grid;
    const int pd = cfg.patch_dim();
    Mat out(static_cast<Eigen::Index>(batch.b) * tokens, pd);
    for (int s = 0; s < batch.b; ++s) {
        const float* base = batch.pixels.data() + static_cast<size_t>(s) * batch.sample_size();
        for (int gy = 0; gy < grid; ++gy) {
            for (int gx = 0; gx < grid; ++gx) {
                float* row = out.row(static_cast<Eigen::Index>(s) * tokens + gy * grid + gx).data();
                int k = 0;
                for (int ch = 0; ch < cfg.channels; ++ch) {
                    const float* plane = base + static_cast<size_t>(ch) * batch.plane();
                    for (int py = 0; py < cfg.patch_size; ++py) {
                        const float* line =
                            plane + static_cast<size_t>(gy * cfg.patch_size + py) * batch.w +
                            gx * cfg.patch_size;
                        for (int px = 0; px < cfg.patch_size; ++px) row[k++] = line[px];
                    }
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// graph construction
// ---------------------------------------------------------------------------

Var ModelGraph::leaf(const std::string& name) {
    int idx = state_.params.find(name);
    auto& slot = leaves_[static_cast<size_t>(idx)];
    if (!slot) slot = tape_.leaf(state_.params[idx].w, trainable_);
    return *slot;
}

Var ModelGraph::tau() { return leaf("tau"); }

Var ModelGraph::encoder_stack(Var x, const std::string& prefix, int batch,
                              int tokens, int heads,
                              const std::vector<int>& lengths) {
    for (int i = 0;; ++i) {
        std::string b = prefix + ".b" + std::to_string(i) + ".";
        if (!state_.params.contains(b + "wq")) break;
        Var ln1 = tape_.layer_norm(x, leaf(b + "ln1_g"), leaf(b + "ln1_b"));
        Var q = tape_.add_rowvec(tape_.matmul(ln1, leaf(b + "wq")), leaf(b + "bq"));
        Var k = tape_.add_rowvec(tape_.matmul(ln1, leaf(b + "wk")), leaf(b + "bk"));
        Var v = tape_.add_rowvec(tape_.matmul(ln1, leaf(b + "wv")), leaf(b + "bv"));
        Var att = tape_.attention(q, k, v, batch, tokens, heads, lengths);
        Var proj = tape_.add_rowvec(tape_.matmul(att, leaf(b + "wo")), leaf(b + "bo"));
        x = tape_.add(x, proj);
        Var ln2 = tape_.layer_norm(x, leaf(b + "ln2_g"), leaf(b + "ln2_b"));
        Var h1 = tape_.gelu(
            tape_.add_rowvec(tape_.matmul(ln2, leaf(b + "mlp_w1")), leaf(b + "mlp_b1")));
        Var h2 = tape_.add_rowvec(tape_.matmul(h1, leaf(b + "mlp_w2")), leaf(b + "mlp_b2"));
        x = tape_.add(x, h2);
    }
    return tape_.layer_norm(x, leaf(prefix + ".lnf_g"), leaf(prefix + ".lnf_b"));
}

Var ModelGraph::encode_image(const ImageBatch& batch) {
    batch.validate();
    const ModelConfig& cfg = state_.cfg;
    const int tokens = cfg.image_tokens();
    Mat tok = patchify(batch, cfg);
    Var x = tape_.add_rowvec(tape_.matmul(tape_.leaf(std::move(tok)), leaf("img.patch_w")),
                             leaf("img.patch_b"));
    // per-sample positional table lookup reuses the embedding op
    std::vector<int> pos_ids(static_cast<size_t>(batch.b) * tokens);
    for (int s = 0; s < batch.b; ++s)
        for (int p = 0; p < tokens; ++p) pos_ids[static_cast<size_t>(s) * tokens + p] = p;
    x = tape_.add(x, tape_.embedding(leaf("img.pos"), pos_ids));
    x = encoder_stack(x, "img", batch.b, tokens, cfg.trunk_heads, {});
    return tape_.mean_rows_grouped(x, tokens);
}

Var ModelGraph::project_class(Var features) {
    return tape_.row_l2_normalize(tape_.matmul(features, leaf("head.class_w")));
}

Var ModelGraph::project_domain(Var features) {
    return tape_.row_l2_normalize(tape_.matmul(features, leaf("head.domain_w")));
}

Var ModelGraph::encode_text(const TextBatch& batch) {
    batch.validate(state_.vocab.size());
    const ModelConfig& cfg = state_.cfg;
    if (batch.len > cfg.max_text_len)
        throw std::invalid_argument("encode_text: sequence longer than configured maximum");
    Var x = tape_.embedding(leaf("txt.tok"), batch.token_ids);
    std::vector<int> pos_ids(batch.token_ids.size());
    for (int s = 0; s < batch.batch; ++s)
        for (int p = 0; p < batch.len; ++p)
            pos_ids[static_cast<size_t>(s) * batch.len + p] = p;
    x = tape_.add(x, tape_.embedding(leaf("txt.pos"), pos_ids));
    x = encoder_stack(x, "txt", batch.batch, batch.len, cfg.text_heads, batch.lengths);
    Var pooled = tape_.masked_mean_rows(x, batch.lengths, batch.len);
    return tape_.row_l2_normalize(tape_.matmul(pooled, leaf("txt.proj_w")));
}

Var ModelGraph::project_hidden(const Mat& hidden) {
    if (hidden.cols() != state_.cfg.hidden_width)
        throw std::invalid_argument(
            "project_hidden: width differs from the configured hidden-state width");
    return tape_.row_l2_normalize(
        tape_.matmul(tape_.leaf(hidden), leaf("hid.proj_w")));
}

void ModelGraph::pull_grads() {
    for (size_t i = 0; i < leaves_.size(); ++i) {
        if (!leaves_[i]) continue;
        const Mat& g = leaves_[i]->grad();
        if (g.size() != 0) state_.params[static_cast<int>(i)].g += g;
    }
}

// ---------------------------------------------------------------------------
// evaluation wrappers
// ---------------------------------------------------------------------------

Mat encode_image(const ImageBatch& batch, ModelState& state) {
    Tape t;
    ModelGraph g(t, state, false);
    return g.encode_image(batch).value();
}

Mat project_class(const Mat& features, ModelState& state) {
    Tape t;
    ModelGraph g(t, state, false);
    return g.project_class(t.leaf(features)).value();
}

Mat project_domain(const Mat& features, ModelState& state) {
    Tape t;
    ModelGraph g(t, state, false);
    return g.project_domain(t.leaf(features)).value();
}

Mat encode_text(const TextBatch& batch, ModelState& state) {
    Tape t;
    ModelGraph g(t, state, false);
    return g.encode_text(batch).value();
}

Mat project_hidden(const Mat& hidden, ModelState& state) {
    Tape t;
    ModelGraph g(t, state, false);
    return g.project_hidden(hidden).value();
}

std::vector<int> zero_shot_classify(const ImageBatch& images,
                                    const TextBatch& class_prompts,
                                    ModelState& state) {
    if (class_prompts.batch < 1)
        throw std::invalid_argument("zero_shot_classify: need at least one class prompt");
    Tape t;
    ModelGraph g(t, state, false);
    Mat ic = g.project_class(g.encode_image(images)).value();
    Mat pt = g.encode_text(class_prompts).value();
    Mat logits = ic * pt.transpose();
    std::vector<int> pred(static_cast<size_t>(images.b));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (Eigen::Index j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
        pred[static_cast<size_t>(i)] = best;
    }
    return pred;
}

} // namespace dca
