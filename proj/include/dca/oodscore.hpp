#pragma once

#include "dca/data.hpp"
#include "dca/model.hpp"
#include "dca/sngp.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dca {

// Per-dataset OOD quantification. Normalized fields and `combined` are only
// defined after combine_scores ran over the whole collection.
struct OODReport {
    std::string dataset;
    double image_ood = 0.0;
    double text_ood = 0.0;
    double image_norm = 0.0;
    double text_norm = 0.0;
    double combined = 0.0;
    std::optional<double> accuracy;
};

// Normalization bounds recorded with every combined report.
struct CombineBounds {
    double image_min = 0.0, image_max = 0.0;
    double text_min = 0.0, text_max = 0.0;
    bool image_degenerate = false;  // all-equal component pinned to 0.5
    bool text_degenerate = false;
};

// Mean summed softmax probability mass assigned to target-specific class
// names over the combined (case-folded, deduplicated) target+anchor name
// set. Names present in both sets count as anchor names.
double text_ood_score(const Mat& image_embeddings,
                      const std::vector<std::string>& target_names,
                      const std::vector<std::string>& anchor_names,
                      ModelState& text_encoder, float tau);

// Core of the text score on already-embedded names: mean over images of the
// softmax mass (cosine/tau logits) landing on columns flagged as
// target-specific.
double text_ood_score_embedded(const Mat& image_embeddings, const Mat& name_embeddings,
                               const std::vector<bool>& is_target, float tau);

// Min-max normalizes image/text scores across the collection and averages
// them into `combined`. A zero-spread component is pinned to 0.5 and
// flagged.
CombineBounds combine_scores(std::vector<OODReport>& reports);

// Pairwise-domain OOD matrix: entry (i,j) starts as the score of domain j
// under a head fitted on domain i, is referenced to the fitting domain's
// self-score and then symmetrized, leaving an exact zero diagonal.
Eigen::MatrixXd pairwise_ood_matrix(const std::vector<DatasetManifest>& domains,
                                    ModelState& trunk, const SNGPConfig& cfg,
                                    ImageCache& cache);

struct PcaResult {
    Eigen::MatrixXd coords;       // [K, 2]
    Eigen::Vector2d explained;    // non-increasing component variances
    bool rank_deficient = false;  // second component zeroed
};

// Column-centered PCA via eigendecomposition; top-2 components with the
// largest-magnitude loading made positive.
PcaResult pca_embed(const Eigen::MatrixXd& matrix);

struct Correlation {
    double r = 0.0;
    double p = 1.0;
};

// Pearson r between combined score and accuracy with a two-sided p-value
// from the t-distribution.
Correlation correlate(const std::vector<OODReport>& reports);
Correlation pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Evaluation-mode trunk features for every image in the manifest.
Mat dataset_features(const DatasetManifest& m, ModelState& state, ImageCache& cache,
                     int batch_size = 64);
std::vector<int> dataset_labels(const DatasetManifest& m);

} // namespace dca
