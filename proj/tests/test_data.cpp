#include <doctest.h>

#include "dca/data.hpp"
#include "dca/image.hpp"
#include "dca/rng.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace dca;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dca_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

uint64_t file_digest(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a(bytes);
}

}  // namespace

TEST_CASE("png round trip preserves 8-bit pixel content") {
    TempDir td("png");
    Rng rng(5);
    Image img = Image::filled(17, 9, 0, 0, 0);  // odd sizes on purpose
    for (auto& v : img.px) v = static_cast<float>(rng.uniform());
    std::string p = td.str() + "/t.png";
    write_png(p, img);
    Image back = read_png(p);
    REQUIRE(back.w == img.w);
    REQUIRE(back.h == img.h);
    for (size_t i = 0; i < img.px.size(); ++i) {
        float q = std::round(std::clamp(img.px[i], 0.0f, 1.0f) * 255.0f) / 255.0f;
        CHECK(std::fabs(back.px[i] - q) < 1e-6f);
    }
}

TEST_CASE("corpus generation is deterministic and counts match") {
    TempDir a("corpus_a"), b("corpus_b"), c("corpus_c");
    CorpusConfig cfg;
    cfg.n_classes = 4;
    cfg.n_domains = 3;
    cfg.images_per_cell = 2;
    cfg.image_size = 32;
    cfg.seed = 77;

    DatasetManifest ma = generate_corpus(cfg, a.str());
    DatasetManifest mb = generate_corpus(cfg, b.str());
    CHECK(ma.samples.size() == 4u * 3u * 2u);

    // byte-identical image files across runs with the same seed
    for (size_t i = 0; i < ma.samples.size(); ++i)
        CHECK(file_digest(ma.image_path(ma.samples[i])) ==
              file_digest(mb.image_path(mb.samples[i])));
    CHECK(file_digest(a.str() + "/manifest.json") ==
          file_digest(b.str() + "/manifest.json"));

    // different seed changes the bytes
    CorpusConfig cfg2 = cfg;
    cfg2.seed = 78;
    DatasetManifest mc = generate_corpus(cfg2, c.str());
    bool any_differs = false;
    for (size_t i = 0; i < ma.samples.size(); ++i)
        any_differs = any_differs || file_digest(ma.image_path(ma.samples[i])) !=
                                         file_digest(mc.image_path(mc.samples[i]));
    CHECK(any_differs);
}

TEST_CASE("dataset manifest round trips and validates") {
    TempDir td("manifest");
    CorpusConfig cfg;
    cfg.n_classes = 3;
    cfg.n_domains = 2;
    cfg.images_per_cell = 2;
    cfg.seed = 5;
    DatasetManifest m = generate_corpus(cfg, td.str());
    DatasetManifest loaded = load_dataset_manifest(td.str() + "/manifest.json");
    CHECK(loaded.class_names == m.class_names);
    CHECK(loaded.domain_names == m.domain_names);
    CHECK(loaded.samples.size() == m.samples.size());
    CHECK(loaded.samples[0].image == m.samples[0].image);
}

TEST_CASE("domain and cell-range filters") {
    TempDir td("filters");
    CorpusConfig cfg;
    cfg.n_classes = 2;
    cfg.n_domains = 3;
    cfg.images_per_cell = 4;
    cfg.seed = 9;
    DatasetManifest m = generate_corpus(cfg, td.str());

    DatasetManifest d1 = filter_domains(m, {1});
    CHECK(d1.samples.size() == 2u * 4u);
    for (const auto& s : d1.samples) CHECK(s.domain_index == 1);

    DatasetManifest lower = filter_cell_range(m, 3, true);
    DatasetManifest upper = filter_cell_range(m, 3, false);
    CHECK(lower.samples.size() == 2u * 3u * 3u);
    CHECK(upper.samples.size() == 2u * 3u * 1u);
}

TEST_CASE("style bank: counts, class-free captions, deterministic hidden states") {
    TempDir a("styles_a"), b("styles_b");
    StyleBankConfig cfg;
    cfg.n_styles = 6;
    cfg.images_per_style = 3;
    cfg.hidden_width = 24;
    cfg.seed = 200;

    auto sa = generate_style_bank(cfg, a.str());
    auto sb = generate_style_bank(cfg, b.str());
    REQUIRE(sa.size() == 6);
    size_t images = 0;
    for (const auto& r : sa) images += r.image_refs.size();
    CHECK(images == 18);

    // no class-name leakage into captions (corpus vocabulary is disjoint)
    for (const auto& r : sa) {
        auto words = tokenize_words(r.description);
        for (const auto& w : words)
            for (const auto& cls : shape_class_names()) CHECK(w != cls);
    }

    // same seed, same hidden states
    for (size_t i = 0; i < sa.size(); ++i) {
        REQUIRE(sa[i].hidden_state.size() == 24);
        CHECK(sa[i].hidden_state == sb[i].hidden_state);
        CHECK(sa[i].description == sb[i].description);
    }
}

TEST_CASE("style manifest round trip and validation") {
    TempDir td("style_manifest");
    StyleBankConfig cfg;
    cfg.n_styles = 4;
    cfg.images_per_style = 2;
    cfg.hidden_width = 16;
    cfg.seed = 300;
    auto recs = generate_style_bank(cfg, td.str());

    auto loaded = load_style_manifest(td.str() + "/styles.json");
    REQUIRE(loaded.size() == recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        CHECK(loaded[i].style_id == recs[i].style_id);
        CHECK(loaded[i].description == recs[i].description);
        CHECK(loaded[i].hidden_state == recs[i].hidden_state);
        CHECK(loaded[i].image_refs.size() == recs[i].image_refs.size());
    }

    // deleting one hidden-state file: error unless the ablation flag is set
    fs::remove(td.path / "styles" / (recs[1].style_id + ".f32"));
    CHECK_THROWS(load_style_manifest(td.str() + "/styles.json"));
    auto degraded = load_style_manifest(td.str() + "/styles.json", true);
    CHECK(degraded[1].hidden_state.empty());
    CHECK(!degraded[0].hidden_state.empty());

    // inconsistent hidden widths rejected
    {
        std::ofstream os(td.path / "styles" / (recs[1].style_id + ".f32"),
                         std::ios::binary);
        float junk[3] = {1, 2, 3};
        os.write(reinterpret_cast<const char*>(junk), sizeof(junk));
    }
    CHECK_THROWS(load_style_manifest(td.str() + "/styles.json"));
}

TEST_CASE("two-stream scheduler: interleaving, coverage, determinism") {
    TempDir td("sched");
    CorpusConfig ccfg;
    ccfg.n_classes = 3;
    ccfg.n_domains = 2;
    ccfg.images_per_cell = 4;  // 24 samples
    ccfg.seed = 11;
    DatasetManifest m = generate_corpus(ccfg, td.str());

    StyleBankConfig scfg;
    scfg.n_styles = 3;
    scfg.images_per_style = 2;
    scfg.hidden_width = 8;
    scfg.seed = 12;
    auto styles = generate_style_bank(scfg, td.str() + "/bank");

    ImageCache cache;

    SUBCASE("ratio 1 alternates strictly") {
        TwoStreamScheduler sched(m, styles, 4, 1, 99, cache);
        std::vector<TrainBatch::Stream> seq;
        for (int i = 0; i < 8; ++i) seq.push_back(sched.next().stream);
        for (int i = 0; i < 8; ++i)
            CHECK(seq[static_cast<size_t>(i)] == (i % 2 == 0
                                                      ? TrainBatch::Stream::source
                                                      : TrainBatch::Stream::diffusion));
    }

    SUBCASE("ratio 4 interleaves one diffusion per four source") {
        TwoStreamScheduler sched(m, styles, 4, 4, 99, cache);
        int source = 0, diffusion = 0;
        for (int i = 0; i < 100; ++i) {
            auto b = sched.next();
            if (b.stream == TrainBatch::Stream::source)
                ++source;
            else
                ++diffusion;
        }
        CHECK(source == 80);
        CHECK(diffusion == 20);
    }

    SUBCASE("each epoch covers every source sample once") {
        TwoStreamScheduler sched(m, {}, 5, 1, 7, cache);
        // 24 samples, batch 5 -> 5 batches per epoch (last short)
        CHECK(sched.source_batches_per_epoch() == 5);
        std::multiset<std::string> seen;
        for (int i = 0; i < 5; ++i) {
            auto b = sched.next();
            for (const auto& id : b.images.ids) seen.insert(id);
        }
        CHECK(seen.size() == 24);
        std::set<std::string> unique(seen.begin(), seen.end());
        CHECK(unique.size() == 24);
    }

    SUBCASE("same seed reproduces the batch sequence") {
        TwoStreamScheduler s1(m, styles, 4, 2, 1234, cache);
        TwoStreamScheduler s2(m, styles, 4, 2, 1234, cache);
        for (int i = 0; i < 12; ++i) {
            auto a = s1.next();
            auto b = s2.next();
            CHECK(a.stream == b.stream);
            CHECK(a.images.ids == b.images.ids);
        }
    }

    SUBCASE("diffusion batches carry captions and hidden states, no class labels") {
        TwoStreamScheduler sched(m, styles, 4, 1, 55, cache);
        sched.next();  // source
        auto d = sched.next();
        REQUIRE(d.stream == TrainBatch::Stream::diffusion);
        CHECK(d.class_indices.empty());
        CHECK(d.captions.size() == 4);
        CHECK(d.hidden.rows() == 4);
        CHECK(d.hidden.cols() == 8);
    }
}

TEST_CASE("vocabulary covers corpus captions and style descriptions") {
    TempDir td("vocab");
    CorpusConfig ccfg;
    ccfg.n_classes = 2;
    ccfg.n_domains = 2;
    ccfg.images_per_cell = 1;
    ccfg.seed = 21;
    DatasetManifest m = generate_corpus(ccfg, td.str());
    StyleBankConfig scfg;
    scfg.n_styles = 2;
    scfg.images_per_style = 1;
    scfg.hidden_width = 4;
    scfg.seed = 22;
    auto styles = generate_style_bank(scfg, td.str() + "/bank");

    Vocab v = build_vocab(m, styles);
    for (const auto& s : styles)
        for (const auto& w : tokenize_words(s.description)) CHECK(v.id(w) != 1);
    for (const auto& c : m.class_names)
        for (const auto& d : m.domain_names)
            for (const auto& w : tokenize_words(source_caption(c, d)))
                CHECK(v.id(w) != 1);
}
