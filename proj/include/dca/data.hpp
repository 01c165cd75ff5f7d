#pragma once

#include "dca/image.hpp"
#include "dca/mat.hpp"
#include "dca/model.hpp"
#include "dca/tokenizer.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dca {

// One synthetic domain from the style bank: class-free images sharing a
// texture, a caption describing it, and a fixed pseudo hidden-state vector.
struct StyleRecord {
    std::string style_id;
    std::string description;
    std::vector<float> hidden_state;  // width H; may be empty if ingested
                                      // without hidden states (C6 disabled)
    std::vector<std::string> image_refs;
};

struct DatasetSample {
    std::string image;  // path relative to the manifest directory
    int class_index = 0;
    int domain_index = 0;
};

struct DatasetManifest {
    std::string name;
    std::string split;
    std::vector<std::string> class_names;
    std::vector<std::string> domain_names;
    std::vector<DatasetSample> samples;
    std::string root;  // directory the image paths are relative to

    void validate() const;
    std::string image_path(const DatasetSample& s) const;
};

struct CorpusConfig {
    int n_classes = 10;       // <= kShapeCount
    int n_domains = 12;       // <= kDomainCount
    int images_per_cell = 20;
    int image_size = 32;
    uint64_t seed = 1;
    float style_strength = 1.0f;  // scales domain-transform intensity
    std::string name = "synthetic";
    std::string split = "train";
};

struct StyleBankConfig {
    int n_styles = 64;
    int images_per_style = 8;
    int image_size = 32;
    int hidden_width = 96;
    uint64_t seed = 2;
};

// Built-in shape classes and parametric domain transforms.
constexpr int kShapeCount = 10;
constexpr int kDomainCount = 12;
const std::vector<std::string>& shape_class_names();
const std::vector<std::string>& domain_style_names();

// Renders one corpus image (shape class under a domain style).
Image render_corpus_image(int class_index, int domain_index, int image_size,
                          float style_strength, uint64_t sample_seed);

// Generates the multi-domain benchmark: images on disk plus a manifest.
// Deterministic down to file bytes for a fixed config.
DatasetManifest generate_corpus(const CorpusConfig& cfg, const std::string& out_dir);

// Generates class-free textured styles with captions and pseudo hidden
// states; writes images, hidden-state files and the style manifest.
std::vector<StyleRecord> generate_style_bank(const StyleBankConfig& cfg,
                                             const std::string& out_dir);

// Manifest IO. Style image/hidden paths are stored relative to the manifest.
void save_dataset_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_dataset_manifest(const std::string& path);

void save_style_manifest(const std::vector<StyleRecord>& styles, int hidden_width,
                         const std::string& dir, const std::string& filename = "styles.json");
// `allow_missing_hidden` admits styles without hidden-state files; loading
// such a manifest with the flag unset is an error (C6 needs the states).
std::vector<StyleRecord> load_style_manifest(const std::string& path,
                                             bool allow_missing_hidden = false);

// Keeps samples whose domain index appears in `domains` (manifest-relative
// indices; names are preserved so indices stay stable).
DatasetManifest filter_domains(const DatasetManifest& m, const std::vector<int>& domains);
// Keeps sample k-within-its-(class,domain)-cell iff
// keep_lower ? k < pivot : k >= pivot. Used to carve train/anchor splits.
DatasetManifest filter_cell_range(const DatasetManifest& m, int pivot, bool keep_lower);

// Caption/prompt templates shared by pretraining and evaluation.
std::string source_caption(const std::string& class_name, const std::string& domain_name);
std::string class_prompt(const std::string& class_name);

// Vocabulary over everything the toy language can emit for this corpus.
Vocab build_vocab(const DatasetManifest& m, const std::vector<StyleRecord>& styles);

// Loads images once and hands out decoded float copies.
class ImageCache {
public:
    const Image& get(const std::string& path);
    void clear() { cache_.clear(); }

private:
    std::map<std::string, Image> cache_;
};

// Assembles an ImageBatch (BCHW in [0,1]) from decoded images.
ImageBatch make_image_batch(const std::vector<const Image*>& imgs,
                            const std::vector<std::string>& ids);

struct TrainBatch {
    enum class Stream { source, diffusion };
    Stream stream = Stream::source;
    ImageBatch images;
    std::vector<int> class_indices;    // source stream
    std::vector<int> domain_indices;   // source: domain idx / diffusion: style idx
    std::vector<std::string> captions; // diffusion stream: style descriptions
    Mat hidden;                        // diffusion stream, [B,H]; empty if absent
};

// Deterministic two-stream interleaver: after every `ratio` source batches
// one diffusion batch is emitted. Each epoch covers every source sample
// exactly once (last batch may be short); the diffusion side cycles.
// With no styles the stream is pure source batches.
class TwoStreamScheduler {
public:
    TwoStreamScheduler(const DatasetManifest& source,
                       const std::vector<StyleRecord>& styles, int batch_size,
                       int ratio, uint64_t seed, ImageCache& cache);

    TrainBatch next();
    int source_batches_per_epoch() const;

private:
    void start_epoch();
    TrainBatch make_source_batch();
    TrainBatch make_diffusion_batch();

    const DatasetManifest& source_;
    std::vector<StyleRecord> styles_;
    std::vector<std::pair<int, int>> style_images_;  // (style idx, image idx)
    int batch_size_;
    int ratio_;
    Rng rng_;
    ImageCache& cache_;
    std::vector<int> order_;
    size_t cursor_ = 0;
    int since_diffusion_ = 0;
    std::vector<int> style_order_;
    size_t style_cursor_ = 0;
};

} // namespace dca
