#include "dca/data.hpp"

#include "dca/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dca {

// ===========================================================================
// shape classes
// ===========================================================================

const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {
        "circle", "ring", "square", "frame", "triangle",
        "cross",  "diamond", "star", "bar", "zigzag"};
    return names;
}

const std::vector<std::string>& domain_style_names() {
    static const std::vector<std::string> names = {
        "plain", "bright", "hue",    "invert",  "blur",     "noise",
        "pixel", "stripe", "poster", "checker", "scramble", "static"};
    return names;
}

namespace {

struct Vec2 {
    float x, y;
};

float sd_box(Vec2 p, float bx, float by) {
    float qx = std::fabs(p.x) - bx;
    float qy = std::fabs(p.y) - by;
    float ox = std::max(qx, 0.0f), oy = std::max(qy, 0.0f);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0f);
}

float tri_wave(float t) {  // period 1, range [-1, 1]
    float f = t - std::floor(t);
    return f < 0.5f ? 4.0f * f - 1.0f : 3.0f - 4.0f * f;
}

float shape_sdf(int cls, Vec2 p) {
    switch (cls) {
        case 0:  // circle
            return std::hypot(p.x, p.y) - 0.60f;
        case 1:  // ring
            return std::fabs(std::hypot(p.x, p.y) - 0.52f) - 0.16f;
        case 2:  // square
            return std::max(std::fabs(p.x), std::fabs(p.y)) - 0.52f;
        case 3:  // frame
            return std::fabs(std::max(std::fabs(p.x), std::fabs(p.y)) - 0.48f) - 0.14f;
        case 4: {  // triangle (equilateral, pointing up)
            const float k = 1.7320508f;
            float r = 0.55f;
            float px = std::fabs(p.x) - r;
            float py = -p.y + r / k;  // flip so the tip points up in image space
            if (px + k * py > 0.0f) {
                float nx = (px - k * py) * 0.5f;
                float ny = (-k * px - py) * 0.5f;
                px = nx;
                py = ny;
            }
            px -= std::clamp(px, -2.0f * r, 0.0f);
            float len = std::hypot(px, py);
            return py > 0.0f ? -len : len;
        }
        case 5:  // cross
            return std::min(sd_box(p, 0.60f, 0.17f), sd_box(p, 0.17f, 0.60f));
        case 6:  // diamond
            return std::fabs(p.x) + std::fabs(p.y) - 0.66f;
        case 7: {  // star (five-lobed radial blob)
            float r = std::hypot(p.x, p.y);
            float th = std::atan2(p.y, p.x);
            return r - (0.36f + 0.24f * std::cos(5.0f * th));
        }
        case 8:  // bar
            return sd_box(p, 0.64f, 0.18f);
        case 9: {  // zigzag
            float band = std::fabs(p.y - 0.34f * tri_wave(p.x * 1.1f)) - 0.15f;
            return std::max(band, std::fabs(p.x) - 0.72f);
        }
        default:
            throw std::invalid_argument("shape_sdf: unknown class");
    }
}

struct Rgb {
    float r, g, b;
};

const Rgb kPalette[] = {
    {0.86f, 0.21f, 0.22f}, {0.20f, 0.65f, 0.30f}, {0.22f, 0.36f, 0.85f},
    {0.92f, 0.58f, 0.15f}, {0.58f, 0.25f, 0.72f}, {0.16f, 0.70f, 0.72f},
    {0.90f, 0.85f, 0.25f}, {0.90f, 0.45f, 0.65f}, {0.55f, 0.38f, 0.20f},
    {0.92f, 0.92f, 0.88f},
};

Rgb jitter_color(Rgb c, Rng& rng, float amp) {
    auto j = [&](float v) {
        return std::clamp(v + static_cast<float>(rng.uniform(-amp, amp)), 0.0f, 1.0f);
    };
    return {j(c.r), j(c.g), j(c.b)};
}

// ---------------------------------------------------------------------------
// domain style transforms
// ---------------------------------------------------------------------------

void hue_rotate(Image& img, float angle) {
    const float c = std::cos(angle), s = std::sin(angle);
    const float one3 = 1.0f / 3.0f, sq3 = std::sqrt(1.0f / 3.0f);
    float m[9] = {
        c + (1 - c) * one3,       one3 * (1 - c) - sq3 * s, one3 * (1 - c) + sq3 * s,
        one3 * (1 - c) + sq3 * s, c + one3 * (1 - c),       one3 * (1 - c) - sq3 * s,
        one3 * (1 - c) - sq3 * s, one3 * (1 - c) + sq3 * s, c + one3 * (1 - c)};
    for (size_t i = 0; i < img.px.size(); i += 3) {
        float r = img.px[i], g = img.px[i + 1], b = img.px[i + 2];
        img.px[i] = std::clamp(m[0] * r + m[1] * g + m[2] * b, 0.0f, 1.0f);
        img.px[i + 1] = std::clamp(m[3] * r + m[4] * g + m[5] * b, 0.0f, 1.0f);
        img.px[i + 2] = std::clamp(m[6] * r + m[7] * g + m[8] * b, 0.0f, 1.0f);
    }
}

void box_blur(Image& img) {
    Image tmp = img;
    auto clampi = [&](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                tmp.at(x, y, c) = (img.at(clampi(x - 1, img.w), y, c) +
                                   2.0f * img.at(x, y, c) +
                                   img.at(clampi(x + 1, img.w), y, c)) /
                                  4.0f;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = (tmp.at(x, clampi(y - 1, img.h), c) +
                                   2.0f * tmp.at(x, y, c) +
                                   tmp.at(x, clampi(y + 1, img.h), c)) /
                                  4.0f;
}

void pixelate(Image& img, int block) {
    for (int by = 0; by < img.h; by += block)
        for (int bx = 0; bx < img.w; bx += block) {
            int ye = std::min(by + block, img.h), xe = std::min(bx + block, img.w);
            for (int c = 0; c < 3; ++c) {
                float sum = 0.0f;
                for (int y = by; y < ye; ++y)
                    for (int x = bx; x < xe; ++x) sum += img.at(x, y, c);
                float avg = sum / static_cast<float>((ye - by) * (xe - bx));
                for (int y = by; y < ye; ++y)
                    for (int x = bx; x < xe; ++x) img.at(x, y, c) = avg;
            }
        }
}

void apply_domain_style(Image& img, int domain, float strength, Rng& rng) {
    Image orig = img;
    switch (domain) {
        case 0:  // plain
            break;
        case 1:  // bright
            for (auto& v : img.px) v = std::pow(v, 0.45f);
            break;
        case 2:  // hue
            hue_rotate(img, 2.0943951f);  // 120 degrees
            break;
        case 3:  // invert
            for (auto& v : img.px) v = 1.0f - v;
            break;
        case 4:  // blur
            box_blur(img);
            box_blur(img);
            break;
        case 5:  // noise
            for (auto& v : img.px)
                v = std::clamp(v + static_cast<float>(rng.uniform(-0.28, 0.28)), 0.0f, 1.0f);
            break;
        case 6:  // pixel
            pixelate(img, 4);
            break;
        case 7: {  // stripe
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    float f = ((x + y) / 3) % 2 == 0 ? 1.0f : 0.45f;
                    for (int c = 0; c < 3; ++c) img.at(x, y, c) *= f;
                }
            break;
        }
        case 8:  // poster
            for (auto& v : img.px) v = std::round(v * 2.0f) / 2.0f;
            break;
        case 9: {  // checker
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    float f = ((x / 8) + (y / 8)) % 2 == 0 ? 1.0f : 0.5f;
                    for (int c = 0; c < 3; ++c)
                        img.at(x, y, c) = std::clamp(img.at(x, y, c) * f + (1.0f - f) * 0.1f,
                                                     0.0f, 1.0f);
                }
            break;
        }
        case 10: {  // scramble: permute 8x8 blocks
            const int block = 8;
            int gx = img.w / block, gy = img.h / block;
            std::vector<int> perm(static_cast<size_t>(gx) * gy);
            for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
            rng.shuffle(perm);
            Image src = img;
            for (int i = 0; i < gx * gy; ++i) {
                int sx = (perm[static_cast<size_t>(i)] % gx) * block;
                int sy = (perm[static_cast<size_t>(i)] / gx) * block;
                int dx = (i % gx) * block, dy = (i / gx) * block;
                for (int y = 0; y < block; ++y)
                    for (int x = 0; x < block; ++x)
                        for (int c = 0; c < 3; ++c)
                            img.at(dx + x, dy + y, c) = src.at(sx + x, sy + y, c);
            }
            break;
        }
        case 11:  // static: most pixels replaced by uniform noise
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    bool zap = rng.uniform() < 0.6;
                    for (int c = 0; c < 3; ++c)
                        if (zap) img.at(x, y, c) = static_cast<float>(rng.uniform());
                }
            break;
        default:
            throw std::invalid_argument("apply_domain_style: unknown domain");
    }
    float s = std::clamp(strength, 0.0f, 1.0f);
    if (s < 1.0f)
        for (size_t i = 0; i < img.px.size(); ++i)
            img.px[i] = (1.0f - s) * orig.px[i] + s * img.px[i];
}

}  // namespace

Image render_corpus_image(int class_index, int domain_index, int image_size,
                          float style_strength, uint64_t sample_seed) {
    if (class_index < 0 || class_index >= kShapeCount)
        throw std::invalid_argument("render_corpus_image: class index out of range");
    if (domain_index < 0 || domain_index >= kDomainCount)
        throw std::invalid_argument("render_corpus_image: domain index out of range");

    Rng rng(sample_seed);
    Rgb fg = jitter_color(kPalette[rng.below(10)], rng, 0.08f);
    float bg_level = rng.uniform() < 0.5 ? static_cast<float>(rng.uniform(0.04, 0.16))
                                         : static_cast<float>(rng.uniform(0.75, 0.92));
    Rgb bg = jitter_color({bg_level, bg_level, bg_level}, rng, 0.05f);

    float cx = static_cast<float>(rng.uniform(-0.14, 0.14));
    float cy = static_cast<float>(rng.uniform(-0.14, 0.14));
    float scale = static_cast<float>(rng.uniform(0.8, 1.15));
    float rot = static_cast<float>(rng.uniform(-0.5, 0.5));
    const float cr = std::cos(rot), sr = std::sin(rot);

    Image img = Image::filled(image_size, image_size, bg.r, bg.g, bg.b);
    const float aa = static_cast<float>(image_size) / 2.2f;
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            float u = (2.0f * (x + 0.5f) / image_size - 1.0f - cx) / scale;
            float v = (2.0f * (y + 0.5f) / image_size - 1.0f - cy) / scale;
            Vec2 p{cr * u - sr * v, sr * u + cr * v};
            float d = shape_sdf(class_index, p);
            float cov = std::clamp(0.5f - d * aa, 0.0f, 1.0f);
            img.at(x, y, 0) = bg.r + (fg.r - bg.r) * cov;
            img.at(x, y, 1) = bg.g + (fg.g - bg.g) * cov;
            img.at(x, y, 2) = bg.b + (fg.b - bg.b) * cov;
        }
    }
    apply_domain_style(img, domain_index, style_strength, rng);
    return img;
}

// ===========================================================================
// corpus generation
// ===========================================================================

void DatasetManifest::validate() const {
    if (class_names.empty() || samples.empty())
        throw std::invalid_argument("DatasetManifest: empty");
    std::set<std::string> folded;
    for (const auto& n : class_names) {
        std::string f;
        for (char c : n) f.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (!folded.insert(f).second)
            throw std::invalid_argument("DatasetManifest: duplicate class name " + n);
    }
    for (const auto& s : samples) {
        if (s.class_index < 0 || s.class_index >= static_cast<int>(class_names.size()))
            throw std::invalid_argument("DatasetManifest: class index out of range");
        if (s.domain_index < 0 || s.domain_index >= static_cast<int>(domain_names.size()))
            throw std::invalid_argument("DatasetManifest: domain index out of range");
    }
}

std::string DatasetManifest::image_path(const DatasetSample& s) const {
    return root.empty() ? s.image : root + "/" + s.image;
}

DatasetManifest generate_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    if (cfg.n_classes < 1 || cfg.n_classes > kShapeCount)
        throw std::invalid_argument("generate_corpus: n_classes out of range");
    if (cfg.n_domains < 1 || cfg.n_domains > kDomainCount)
        throw std::invalid_argument("generate_corpus: n_domains out of range");
    if (cfg.images_per_cell < 1 || cfg.image_size < 8)
        throw std::invalid_argument("generate_corpus: bad counts");

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw std::runtime_error("generate_corpus: cannot create " + out_dir);

    DatasetManifest m;
    m.name = cfg.name;
    m.split = cfg.split;
    m.root = out_dir;
    m.class_names.assign(shape_class_names().begin(),
                         shape_class_names().begin() + cfg.n_classes);
    m.domain_names.assign(domain_style_names().begin(),
                          domain_style_names().begin() + cfg.n_domains);

    char buf[64];
    for (int ci = 0; ci < cfg.n_classes; ++ci) {
        for (int di = 0; di < cfg.n_domains; ++di) {
            for (int k = 0; k < cfg.images_per_cell; ++k) {
                uint64_t sseed = sub_seed(cfg.seed, m.class_names[ci] + "/" + m.domain_names[di],
                                          static_cast<uint64_t>(k));
                Image img = render_corpus_image(ci, di, cfg.image_size,
                                                cfg.style_strength, sseed);
                std::snprintf(buf, sizeof(buf), "%s_%s_%03d.png", m.class_names[ci].c_str(),
                              m.domain_names[di].c_str(), k);
                std::string rel = std::string("images/") + buf;
                write_png(out_dir + "/" + rel, img);
                m.samples.push_back({rel, ci, di});
            }
        }
    }
    save_dataset_manifest(m, out_dir + "/manifest.json");
    return m;
}

// ===========================================================================
// style bank
// ===========================================================================

namespace {

const char* kPatternWords[] = {"bands", "tiles", "dots",  "gradient",
                               "waves", "blobs", "mesh",  "speckle"};
const char* kColorWords[] = {"crimson", "teal", "amber",   "violet", "coral", "olive",
                             "navy",    "ivory", "magenta", "slate",  "gold",  "mint"};
const Rgb kStyleColors[] = {
    {0.78f, 0.12f, 0.22f}, {0.10f, 0.55f, 0.55f}, {0.95f, 0.70f, 0.20f},
    {0.50f, 0.20f, 0.65f}, {0.95f, 0.50f, 0.40f}, {0.45f, 0.50f, 0.15f},
    {0.10f, 0.15f, 0.45f}, {0.93f, 0.91f, 0.82f}, {0.85f, 0.15f, 0.70f},
    {0.40f, 0.45f, 0.52f}, {0.85f, 0.68f, 0.10f}, {0.55f, 0.90f, 0.70f},
};
const char* kDensityWords[] = {"dense", "sparse", "fine", "coarse", "bold", "faint"};
const char* kFinishWords[] = {"grainy", "smooth", "glossy", "matte", "rough", "soft"};

struct StyleParams {
    int pattern;
    int color_a, color_b;
    int density;   // scales frequency
    int finish;    // adds per-pixel grain for "grainy"/"rough"
    float angle;
    float freq;
    float phase;
};

StyleParams draw_style_params(int style_index, uint64_t seed) {
    Rng rng(sub_seed(seed, "style_params", static_cast<uint64_t>(style_index)));
    StyleParams p;
    p.pattern = style_index % 8;
    p.color_a = static_cast<int>(rng.below(12));
    p.color_b = static_cast<int>((p.color_a + 1 + rng.below(11)) % 12);
    p.density = static_cast<int>(rng.below(6));
    p.finish = static_cast<int>(rng.below(6));
    p.angle = static_cast<float>(rng.uniform(0.0, 3.14159265));
    p.freq = static_cast<float>(rng.uniform(2.0, 6.0)) *
             (p.density == 0 || p.density == 4 ? 1.6f : p.density == 1 || p.density == 5 ? 0.7f : 1.0f);
    p.phase = static_cast<float>(rng.uniform(0.0, 6.28318));
    return p;
}

std::string style_caption(const StyleParams& p) {
    return std::string("a ") + kDensityWords[p.density] + " " + kColorWords[p.color_a] +
           " and " + kColorWords[p.color_b] + " " + kPatternWords[p.pattern] +
           " texture with a " + kFinishWords[p.finish] + " finish";
}

Image render_style_image(const StyleParams& p, int size, uint64_t image_seed) {
    Rng rng(image_seed);
    // per-image jitter keeps the 8 members of a style distinct
    float phase = p.phase + static_cast<float>(rng.uniform(0.0, 6.28318));
    float angle = p.angle + static_cast<float>(rng.uniform(-0.25, 0.25));
    Rgb ca = jitter_color(kStyleColors[p.color_a], rng, 0.06f);
    Rgb cb = jitter_color(kStyleColors[p.color_b], rng, 0.06f);
    const float ax = std::cos(angle), ay = std::sin(angle);

    // blob centers for pattern 5
    std::vector<Vec2> centers;
    for (int i = 0; i < 6; ++i)
        centers.push_back({static_cast<float>(rng.uniform(-1, 1)),
                           static_cast<float>(rng.uniform(-1, 1))});

    Image img = Image::filled(size, size, 0, 0, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            float u = 2.0f * (x + 0.5f) / size - 1.0f;
            float v = 2.0f * (y + 0.5f) / size - 1.0f;
            float t = u * ax + v * ay;
            float s = -u * ay + v * ax;
            float mix = 0.5f;
            switch (p.pattern) {
                case 0:  // bands
                    mix = tri_wave(t * p.freq * 0.5f + phase * 0.16f) > 0.0f ? 1.0f : 0.0f;
                    break;
                case 1:  // tiles
                    mix = (static_cast<int>(std::floor(t * p.freq + phase)) +
                           static_cast<int>(std::floor(s * p.freq + phase))) % 2 == 0
                              ? 1.0f : 0.0f;
                    break;
                case 2: {  // dots
                    float fu = t * p.freq + phase, fv = s * p.freq + phase;
                    float du = fu - std::floor(fu) - 0.5f, dv = fv - std::floor(fv) - 0.5f;
                    mix = std::hypot(du, dv) < 0.3f ? 1.0f : 0.0f;
                    break;
                }
                case 3:  // gradient
                    mix = std::clamp(0.5f + 0.5f * t, 0.0f, 1.0f);
                    break;
                case 4:  // waves
                    mix = 0.5f + 0.5f * std::sin(t * p.freq * 2.0f + 1.4f * std::sin(s * 2.2f) + phase);
                    break;
                case 5: {  // blobs
                    float best = 9.0f;
                    for (const auto& c2 : centers)
                        best = std::min(best, std::hypot(u - c2.x, v - c2.y));
                    mix = best < 0.45f ? 1.0f : 0.0f;
                    break;
                }
                case 6: {  // mesh
                    float fu = t * p.freq + phase, fv = s * p.freq + phase;
                    float lu = std::fabs(fu - std::floor(fu) - 0.5f);
                    float lv = std::fabs(fv - std::floor(fv) - 0.5f);
                    mix = (lu < 0.08f || lv < 0.08f) ? 1.0f : 0.0f;
                    break;
                }
                case 7:  // speckle
                    mix = rng.uniform() < 0.35 ? 1.0f : 0.0f;
                    break;
                default:
                    break;
            }
            img.at(x, y, 0) = cb.r + (ca.r - cb.r) * mix;
            img.at(x, y, 1) = cb.g + (ca.g - cb.g) * mix;
            img.at(x, y, 2) = cb.b + (ca.b - cb.b) * mix;
        }
    }
    if (p.finish == 0 || p.finish == 4) {  // grainy / rough
        for (auto& vpx : img.px)
            vpx = std::clamp(vpx + static_cast<float>(rng.uniform(-0.08, 0.08)), 0.0f, 1.0f);
    }
    return img;
}

std::vector<float> caption_pseudo_embedding(const std::string& caption, int width,
                                            uint64_t seed) {
    // bag-of-words of per-word hash embeddings, so related captions land on
    // related vectors (stand-in for MLLM hidden states)
    std::vector<float> h(static_cast<size_t>(width), 0.0f);
    auto words = tokenize_words(caption);
    for (const auto& w : words) {
        Rng rng(sub_seed(seed, "hidden_word:" + w));
        for (int i = 0; i < width; ++i)
            h[static_cast<size_t>(i)] += static_cast<float>(rng.normal());
    }
    double norm = 0.0;
    for (float v : h) norm += static_cast<double>(v) * v;
    norm = std::sqrt(std::max(norm, 1e-12));
    for (float& v : h) v = static_cast<float>(v / norm);
    return h;
}

void write_f32(const std::string& path, const std::vector<float>& v) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_f32(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open hidden-state file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(float) != 0)
        throw std::runtime_error("hidden-state file has odd size: " + path);
    std::vector<float> v(bytes.size() / sizeof(float));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

}  // namespace

std::vector<StyleRecord> generate_style_bank(const StyleBankConfig& cfg,
                                             const std::string& out_dir) {
    if (cfg.n_styles < 1 || cfg.images_per_style < 1 || cfg.hidden_width < 1)
        throw std::invalid_argument("generate_style_bank: bad counts");
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "styles", ec);
    if (ec) throw std::runtime_error("generate_style_bank: cannot create " + out_dir);

    std::vector<StyleRecord> records;
    char buf[64];
    for (int i = 0; i < cfg.n_styles; ++i) {
        StyleParams p = draw_style_params(i, cfg.seed);
        StyleRecord rec;
        std::snprintf(buf, sizeof(buf), "style%04d", i);
        rec.style_id = buf;
        rec.description = style_caption(p);
        rec.hidden_state =
            caption_pseudo_embedding(rec.description, cfg.hidden_width, cfg.seed);
        write_f32(out_dir + "/styles/" + rec.style_id + ".f32", rec.hidden_state);
        for (int k = 0; k < cfg.images_per_style; ++k) {
            Image img = render_style_image(
                p, cfg.image_size,
                sub_seed(cfg.seed, "style_image:" + rec.style_id, static_cast<uint64_t>(k)));
            std::snprintf(buf, sizeof(buf), "styles/%s_%d.png", rec.style_id.c_str(), k);
            write_png(out_dir + "/" + buf, img);
            rec.image_refs.push_back(buf);
        }
        records.push_back(std::move(rec));
    }
    save_style_manifest(records, cfg.hidden_width, out_dir);
    // returned records point at the files directly, matching what
    // load_style_manifest would hand back
    for (auto& rec : records)
        for (auto& ref : rec.image_refs) ref = out_dir + "/" + ref;
    return records;
}

// ===========================================================================
// manifest IO
// ===========================================================================

void save_dataset_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["name"] = m.name;
    j["split"] = m.split;
    j["class_names"] = m.class_names;
    j["domain_names"] = m.domain_names;
    auto samples = nlohmann::json::array();
    for (const auto& s : m.samples)
        samples.push_back({{"image", s.image}, {"class", s.class_index},
                           {"domain", s.domain_index}});
    j["samples"] = std::move(samples);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

DatasetManifest load_dataset_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("malformed manifest: " + path);
    DatasetManifest m;
    m.name = j.at("name");
    m.split = j.value("split", "");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.domain_names = j.at("domain_names").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples"))
        m.samples.push_back({s.at("image"), s.at("class"), s.at("domain")});
    m.root = fs::path(path).parent_path().string();
    m.validate();
    return m;
}

void save_style_manifest(const std::vector<StyleRecord>& styles, int hidden_width,
                         const std::string& dir, const std::string& filename) {
    nlohmann::json j;
    j["hidden_state_width"] = hidden_width;
    auto arr = nlohmann::json::array();
    for (const auto& s : styles) {
        nlohmann::json e;
        e["style_id"] = s.style_id;
        e["description"] = s.description;
        e["hidden_state_file"] =
            s.hidden_state.empty() ? "" : "styles/" + s.style_id + ".f32";
        e["images"] = s.image_refs;
        arr.push_back(std::move(e));
    }
    j["styles"] = std::move(arr);
    std::ofstream os(dir + "/" + filename, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write style manifest in " + dir);
    os << j.dump(2) << "\n";
}

std::vector<StyleRecord> load_style_manifest(const std::string& path,
                                             bool allow_missing_hidden) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open style manifest: " + path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("malformed style manifest: " + path);

    const std::string root = fs::path(path).parent_path().string();
    const int width = j.at("hidden_state_width");
    if (width < 1) throw std::runtime_error("style manifest: bad hidden_state_width");

    std::vector<StyleRecord> out;
    for (const auto& e : j.at("styles")) {
        StyleRecord rec;
        rec.style_id = e.at("style_id");
        rec.description = e.at("description");
        if (rec.description.empty())
            throw std::runtime_error("style manifest: empty description for " + rec.style_id);
        std::string hfile = e.value("hidden_state_file", "");
        if (!hfile.empty() && fs::exists(fs::path(root) / hfile)) {
            rec.hidden_state = read_f32((fs::path(root) / hfile).string());
            if (static_cast<int>(rec.hidden_state.size()) != width)
                throw std::runtime_error("style manifest: hidden state width mismatch for " +
                                         rec.style_id);
            for (float v : rec.hidden_state)
                if (!std::isfinite(v))
                    throw std::runtime_error("style manifest: non-finite hidden state in " +
                                             rec.style_id);
        } else if (!allow_missing_hidden) {
            throw std::runtime_error(
                "style manifest: missing hidden state for " + rec.style_id +
                " (enable the hidden-state ablation to ingest without them)");
        }
        for (const auto& img : e.at("images")) {
            std::string rel = img.get<std::string>();
            if (!fs::exists(fs::path(root) / rel))
                throw std::runtime_error("style manifest: missing image file " + rel);
            rec.image_refs.push_back((fs::path(root) / rel).string());
        }
        if (rec.image_refs.empty())
            throw std::runtime_error("style manifest: style without images: " + rec.style_id);
        out.push_back(std::move(rec));
    }
    return out;
}

// ===========================================================================
// filters / templates / vocabulary
// ===========================================================================

DatasetManifest filter_domains(const DatasetManifest& m, const std::vector<int>& domains) {
    std::set<int> keep(domains.begin(), domains.end());
    DatasetManifest out = m;
    out.samples.clear();
    for (const auto& s : m.samples)
        if (keep.count(s.domain_index)) out.samples.push_back(s);
    return out;
}

DatasetManifest filter_cell_range(const DatasetManifest& m, int pivot, bool keep_lower) {
    DatasetManifest out = m;
    out.samples.clear();
    std::map<std::pair<int, int>, int> counters;
    for (const auto& s : m.samples) {
        int k = counters[{s.class_index, s.domain_index}]++;
        if (keep_lower ? (k < pivot) : (k >= pivot)) out.samples.push_back(s);
    }
    return out;
}

std::string source_caption(const std::string& class_name, const std::string& domain_name) {
    return "a " + class_name + " in " + domain_name + " style";
}

std::string class_prompt(const std::string& class_name) { return "a " + class_name; }

Vocab build_vocab(const DatasetManifest& m, const std::vector<StyleRecord>& styles) {
    std::vector<std::string> texts;
    for (const auto& c : m.class_names) {
        texts.push_back(class_prompt(c));
        for (const auto& d : m.domain_names) texts.push_back(source_caption(c, d));
    }
    for (const auto& s : styles) texts.push_back(s.description);
    return Vocab::build(texts);
}

// ===========================================================================
// batching
// ===========================================================================

const Image& ImageCache::get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(path, read_png(path)).first->second;
}

ImageBatch make_image_batch(const std::vector<const Image*>& imgs,
                            const std::vector<std::string>& ids) {
    if (imgs.empty()) throw std::invalid_argument("make_image_batch: empty");
    ImageBatch b;
    b.b = static_cast<int>(imgs.size());
    b.c = 3;
    b.h = imgs[0]->h;
    b.w = imgs[0]->w;
    b.ids = ids;
    b.pixels.resize(static_cast<size_t>(b.b) * b.sample_size());
    for (int s = 0; s < b.b; ++s) {
        const Image& img = *imgs[static_cast<size_t>(s)];
        if (img.h != b.h || img.w != b.w)
            throw std::invalid_argument("make_image_batch: mixed image sizes");
        float* base = b.pixels.data() + static_cast<size_t>(s) * b.sample_size();
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < b.h; ++y)
                for (int x = 0; x < b.w; ++x)
                    base[static_cast<size_t>(c) * b.plane() + static_cast<size_t>(y) * b.w + x] =
                        std::clamp(img.at(x, y, c), 0.0f, 1.0f);
    }
    return b;
}

TwoStreamScheduler::TwoStreamScheduler(const DatasetManifest& source,
                                       const std::vector<StyleRecord>& styles,
                                       int batch_size, int ratio, uint64_t seed,
                                       ImageCache& cache)
    : source_(source), styles_(styles), batch_size_(batch_size), ratio_(ratio),
      rng_(sub_seed(seed, "two_stream")), cache_(cache) {
    if (source.samples.empty())
        throw std::invalid_argument("TwoStreamScheduler: empty source manifest");
    if (batch_size_ < 1) throw std::invalid_argument("TwoStreamScheduler: bad batch size");
    if (ratio_ < 1) throw std::invalid_argument("TwoStreamScheduler: ratio must be >= 1");
    for (size_t si = 0; si < styles_.size(); ++si) {
        if (styles_[si].image_refs.empty())
            throw std::invalid_argument("TwoStreamScheduler: style without images");
        for (size_t k = 0; k < styles_[si].image_refs.size(); ++k)
            style_images_.push_back({static_cast<int>(si), static_cast<int>(k)});
    }
    start_epoch();
}

int TwoStreamScheduler::source_batches_per_epoch() const {
    return static_cast<int>((source_.samples.size() + batch_size_ - 1) /
                            static_cast<size_t>(batch_size_));
}

void TwoStreamScheduler::start_epoch() {
    order_.resize(source_.samples.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    rng_.shuffle(order_);
    cursor_ = 0;
}

TrainBatch TwoStreamScheduler::next() {
    if (!styles_.empty() && since_diffusion_ >= ratio_) {
        since_diffusion_ = 0;
        return make_diffusion_batch();
    }
    if (cursor_ >= order_.size()) start_epoch();
    ++since_diffusion_;
    return make_source_batch();
}

TrainBatch TwoStreamScheduler::make_source_batch() {
    size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
    std::vector<const Image*> imgs;
    std::vector<std::string> ids;
    TrainBatch tb;
    tb.stream = TrainBatch::Stream::source;
    for (size_t i = 0; i < take; ++i) {
        const DatasetSample& s = source_.samples[static_cast<size_t>(order_[cursor_ + i])];
        imgs.push_back(&cache_.get(source_.image_path(s)));
        ids.push_back(s.image);
        tb.class_indices.push_back(s.class_index);
        tb.domain_indices.push_back(s.domain_index);
    }
    cursor_ += take;
    tb.images = make_image_batch(imgs, ids);
    return tb;
}

TrainBatch TwoStreamScheduler::make_diffusion_batch() {
    TrainBatch tb;
    tb.stream = TrainBatch::Stream::diffusion;
    std::vector<const Image*> imgs;
    std::vector<std::string> ids;
    bool have_hidden = true;
    std::vector<const std::vector<float>*> hidden_rows;
    for (int i = 0; i < batch_size_; ++i) {
        if (style_cursor_ >= style_order_.size()) {
            style_order_.resize(style_images_.size());
            for (size_t k = 0; k < style_order_.size(); ++k)
                style_order_[k] = static_cast<int>(k);
            rng_.shuffle(style_order_);
            style_cursor_ = 0;
        }
        auto [si, ki] = style_images_[static_cast<size_t>(style_order_[style_cursor_++])];
        const StyleRecord& rec = styles_[static_cast<size_t>(si)];
        imgs.push_back(&cache_.get(rec.image_refs[static_cast<size_t>(ki)]));
        ids.push_back(rec.image_refs[static_cast<size_t>(ki)]);
        tb.domain_indices.push_back(si);
        tb.captions.push_back(rec.description);
        if (rec.hidden_state.empty()) have_hidden = false;
        hidden_rows.push_back(&rec.hidden_state);
    }
    tb.images = make_image_batch(imgs, ids);
    if (have_hidden) {
        tb.hidden.resize(static_cast<Eigen::Index>(hidden_rows.size()),
                         static_cast<Eigen::Index>(hidden_rows[0]->size()));
        for (size_t r = 0; r < hidden_rows.size(); ++r)
            for (size_t c = 0; c < hidden_rows[r]->size(); ++c)
                tb.hidden(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    (*hidden_rows[r])[c];
    }
    return tb;
}

} // namespace dca
