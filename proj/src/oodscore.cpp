#include "dca/oodscore.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace dca {

namespace {

std::string fold_case(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
    const int max_iter = 300;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

// ---------------------------------------------------------------------------
// text OOD
// ---------------------------------------------------------------------------

double text_ood_score(const Mat& image_embeddings,
                      const std::vector<std::string>& target_names,
                      const std::vector<std::string>& anchor_names,
                      ModelState& text_encoder, float tau) {
    if (target_names.empty())
        throw std::invalid_argument("text_ood_score: no target names");
    if (image_embeddings.rows() < 1)
        throw std::invalid_argument("text_ood_score: no image embeddings");
    if (tau <= 0.0f) throw std::invalid_argument("text_ood_score: tau must be positive");

    std::set<std::string> anchor_set;
    for (const auto& n : anchor_names) anchor_set.insert(fold_case(n));
    // combined vocabulary, deduplicated after case folding; collisions with
    // the anchor set count as anchor
    std::map<std::string, bool> combined;  // folded name -> is target-specific
    for (const auto& n : anchor_names) combined[fold_case(n)] = false;
    for (const auto& n : target_names) {
        std::string f = fold_case(n);
        if (!combined.count(f)) combined[f] = !anchor_set.count(f);
    }

    std::vector<std::string> names;
    std::vector<bool> is_target;
    for (const auto& [name, target_specific] : combined) {
        names.push_back(name);
        is_target.push_back(target_specific);
    }
    bool any_target = false;
    for (bool b : is_target) any_target = any_target || b;
    if (!any_target) return 0.0;  // all targets collide with anchors

    std::vector<std::string> prompts;
    prompts.reserve(names.size());
    for (const auto& n : names) prompts.push_back(class_prompt(n));
    TextBatch tb = encode_prompts(text_encoder.vocab, prompts,
                                  text_encoder.cfg.max_text_len);
    Mat name_emb = encode_text(tb, text_encoder);
    return text_ood_score_embedded(image_embeddings, name_emb, is_target, tau);
}

double text_ood_score_embedded(const Mat& image_embeddings, const Mat& name_embeddings,
                               const std::vector<bool>& is_target, float tau) {
    if (image_embeddings.cols() != name_embeddings.cols())
        throw std::invalid_argument("text_ood_score: embedding width mismatch");
    if (static_cast<size_t>(name_embeddings.rows()) != is_target.size())
        throw std::invalid_argument("text_ood_score: name flag count mismatch");
    Mat logits = (image_embeddings * name_embeddings.transpose()) / tau;
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        float mx = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).cast<double>().array() - mx).exp();
        double denom = e.sum();
        double mass = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (is_target[static_cast<size_t>(j)]) mass += e(j) / denom;
        total += mass;
    }
    return total / static_cast<double>(logits.rows());
}

// ---------------------------------------------------------------------------
// score combination
// ---------------------------------------------------------------------------

CombineBounds combine_scores(std::vector<OODReport>& reports) {
    if (reports.size() < 2)
        throw std::invalid_argument("combine_scores: need at least two reports");
    CombineBounds b;
    b.image_min = b.image_max = reports[0].image_ood;
    b.text_min = b.text_max = reports[0].text_ood;
    for (const auto& r : reports) {
        b.image_min = std::min(b.image_min, r.image_ood);
        b.image_max = std::max(b.image_max, r.image_ood);
        b.text_min = std::min(b.text_min, r.text_ood);
        b.text_max = std::max(b.text_max, r.text_ood);
    }
    b.image_degenerate = (b.image_max - b.image_min) <= 0.0;
    b.text_degenerate = (b.text_max - b.text_min) <= 0.0;
    for (auto& r : reports) {
        r.image_norm = b.image_degenerate
                           ? 0.5
                           : (r.image_ood - b.image_min) / (b.image_max - b.image_min);
        r.text_norm = b.text_degenerate
                          ? 0.5
                          : (r.text_ood - b.text_min) / (b.text_max - b.text_min);
        r.combined = 0.5 * (r.image_norm + r.text_norm);
    }
    return b;
}

// ---------------------------------------------------------------------------
// pairwise matrix / PCA
// ---------------------------------------------------------------------------

Mat dataset_features(const DatasetManifest& m, ModelState& state, ImageCache& cache,
                     int batch_size) {
    if (m.samples.empty()) throw std::invalid_argument("dataset_features: empty manifest");
    Mat out(static_cast<Eigen::Index>(m.samples.size()), state.cfg.trunk_width);
    for (size_t start = 0; start < m.samples.size();
         start += static_cast<size_t>(batch_size)) {
        size_t take = std::min(static_cast<size_t>(batch_size), m.samples.size() - start);
        std::vector<const Image*> imgs;
        std::vector<std::string> ids;
        for (size_t i = 0; i < take; ++i) {
            const auto& s = m.samples[start + i];
            imgs.push_back(&cache.get(m.image_path(s)));
            ids.push_back(s.image);
        }
        Mat feats = encode_image(make_image_batch(imgs, ids), state);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(take)) =
            feats;
    }
    return out;
}

std::vector<int> dataset_labels(const DatasetManifest& m) {
    std::vector<int> out;
    out.reserve(m.samples.size());
    for (const auto& s : m.samples) out.push_back(s.class_index);
    return out;
}

Eigen::MatrixXd pairwise_ood_matrix(const std::vector<DatasetManifest>& domains,
                                    ModelState& trunk, const SNGPConfig& cfg,
                                    ImageCache& cache) {
    const int k = static_cast<int>(domains.size());
    if (k < 2) throw std::invalid_argument("pairwise_ood_matrix: need >= 2 domains");

    std::vector<Mat> feats;
    feats.reserve(domains.size());
    for (const auto& d : domains) feats.push_back(dataset_features(d, trunk, cache));

    Eigen::MatrixXd raw(k, k);
    for (int i = 0; i < k; ++i) {
        SNGPConfig ci = cfg;
        ci.seed = sub_seed(cfg.seed, "pairwise_head", static_cast<uint64_t>(i));
        SNGPHead head = fit_sngp(feats[static_cast<size_t>(i)],
                                 dataset_labels(domains[static_cast<size_t>(i)]), ci);
        for (int j = 0; j < k; ++j)
            raw(i, j) = head.score(feats[static_cast<size_t>(j)]);
    }
    // reference each row to the fitting domain's self-score, then symmetrize;
    // the diagonal is exactly zero afterwards
    Eigen::MatrixXd rel(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) rel(i, j) = raw(i, j) - raw(i, i);
    return 0.5 * (rel + rel.transpose());
}

PcaResult pca_embed(const Eigen::MatrixXd& matrix) {
    const Eigen::Index k = matrix.rows();
    if (k < 3 || matrix.cols() != k)
        throw std::invalid_argument("pca_embed: need a square matrix with K >= 3");

    Eigen::MatrixXd centered = matrix;
    Eigen::RowVectorXd mean = matrix.colwise().mean();
    centered.rowwise() -= mean;
    Eigen::MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(k - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("pca_embed: eigendecomposition failed");

    PcaResult res;
    res.coords.resize(k, 2);
    // eigenvalues ascend; take the top two
    for (int comp = 0; comp < 2; ++comp) {
        Eigen::Index idx = k - 1 - comp;
        double var = std::max(es.eigenvalues()(idx), 0.0);
        Eigen::VectorXd v = es.eigenvectors().col(idx);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        res.explained(comp) = var;
        res.coords.col(comp) = centered * v;
    }
    const double tiny = 1e-12 * std::max(res.explained(0), 1.0);
    if (res.explained(1) <= tiny) {
        res.rank_deficient = true;
        res.coords.col(1).setZero();
        res.explained(1) = 0.0;
    }
    return res;
}

// ---------------------------------------------------------------------------
// correlation
// ---------------------------------------------------------------------------

Correlation pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 3)
        throw std::invalid_argument("pearson: need >= 3 paired values");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw std::invalid_argument("pearson: zero variance in a variable");
    Correlation c;
    c.r = sxy / std::sqrt(sxx * syy);
    double df = n - 2.0;
    double r_abs = std::min(std::fabs(c.r), 1.0 - 1e-15);
    double t2 = r_abs * r_abs * df / (1.0 - r_abs * r_abs);
    c.p = incomplete_beta(df / 2.0, 0.5, df / (df + t2));
    return c;
}

Correlation correlate(const std::vector<OODReport>& reports) {
    std::vector<double> xs, ys;
    for (const auto& r : reports) {
        if (!r.accuracy) continue;
        xs.push_back(r.combined);
        ys.push_back(*r.accuracy);
    }
    if (xs.size() < 3)
        throw std::invalid_argument("correlate: need >= 3 reports with accuracy");
    return pearson(xs, ys);
}

} // namespace dca
