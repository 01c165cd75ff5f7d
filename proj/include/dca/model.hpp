#pragma once

#include "dca/nn.hpp"
#include "dca/tape.hpp"
#include "dca/tokenizer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dca {

// Pixel tensor [B, C, H, W] in [0,1] plus opaque per-sample identifiers.
struct ImageBatch {
    int b = 0, c = 0, h = 0, w = 0;
    std::vector<float> pixels;       // row-major BCHW
    std::vector<std::string> ids;

    size_t plane() const { return static_cast<size_t>(h) * w; }
    size_t sample_size() const { return static_cast<size_t>(c) * plane(); }
    void validate() const;
};

struct ModelConfig {
    int image_size = 32;
    int channels = 3;
    int patch_size = 8;
    int trunk_width = 128;   // F
    int trunk_blocks = 4;
    int trunk_heads = 4;
    int trunk_mlp = 2;       // hidden = trunk_mlp * trunk_width
    int text_width = 64;
    int text_blocks = 2;
    int text_heads = 4;
    int text_mlp = 2;
    int max_text_len = 16;
    int embed_dim = 64;      // D, shared by both heads and the projectors
    int hidden_width = 96;   // H, MLLM hidden-state width
    float tau_init = 0.07f;
    float tau_min = 0.01f;

    int image_tokens() const {
        int g = image_size / patch_size;
        return g * g;
    }
    int patch_dim() const { return patch_size * patch_size * channels; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Dual-encoder model: image trunk with class and domain projection heads,
// text encoder with projector, and a linear hidden-state projector. The
// domain head and hidden projector exist only for training; inference uses
// the class head and text projector.
struct ModelState {
    ModelConfig cfg;
    Vocab vocab;
    ParamSet params;
    uint64_t seed = 0;
    int64_t step = 0;

    static ModelState init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed);

    float tau() const { return params.at("tau").w(0, 0); }
    void clamp_tau() {
        float& t = params.at("tau").w(0, 0);
        if (t < cfg.tau_min) t = cfg.tau_min;
    }
};

// Per-tape view of the model. Parameters are leafed lazily: a parameter that
// no loss term touches never reaches the tape and never accumulates
// gradient, which keeps degenerate configurations bit-identical to graphs
// that omit the term.
class ModelGraph {
public:
    ModelGraph(Tape& t, ModelState& s, bool trainable)
        : tape_(t), state_(s), trainable_(trainable),
          leaves_(s.params.size()) {}

    Var encode_image(const ImageBatch& batch);     // [B, F]
    Var project_class(Var features);               // [B, D], unit rows
    Var project_domain(Var features);              // [B, D], unit rows
    Var encode_text(const TextBatch& batch);       // [B, D], unit rows
    Var project_hidden(const Mat& hidden);         // [B, D], unit rows
    Var tau();                                     // 1x1

    // Adds accumulated leaf gradients back onto the parameters.
    void pull_grads();

private:
    Var leaf(const std::string& name);
    Var encoder_stack(Var x, const std::string& prefix, int batch, int tokens,
                      int heads, const std::vector<int>& lengths);

    Tape& tape_;
    ModelState& state_;
    bool trainable_;
    std::vector<std::optional<Var>> leaves_;
};

// -- evaluation-path operations ---------------------------------------------

Mat encode_image(const ImageBatch& batch, ModelState& state);
Mat project_class(const Mat& features, ModelState& state);
Mat project_domain(const Mat& features, ModelState& state);
Mat encode_text(const TextBatch& batch, ModelState& state);
Mat project_hidden(const Mat& hidden, ModelState& state);

// argmax over I_C . P_T^T per image; ties resolved to the lowest index.
std::vector<int> zero_shot_classify(const ImageBatch& images,
                                    const TextBatch& class_prompts,
                                    ModelState& state);

// Flattens [B,C,H,W] pixels into patch token rows [B*T, patch_dim].
// Within a patch the order is channel-major, then row, then column.
Mat patchify(const ImageBatch& batch, const ModelConfig& cfg);

} // namespace dca
