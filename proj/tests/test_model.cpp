#include <doctest.h>

#include "dca/checkpoint.hpp"
#include "dca/losses.hpp"
#include "dca/model.hpp"
#include "dca/rng.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace dca;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.trunk_width = 32;
    c.trunk_blocks = 2;
    c.trunk_heads = 2;
    c.text_width = 16;
    c.text_blocks = 1;
    c.text_heads = 2;
    c.max_text_len = 8;
    c.embed_dim = 16;
    c.hidden_width = 12;
    return c;
}

Vocab tiny_vocab() {
    return Vocab::build({"a circle in plain style", "a square in noise style",
                         "a ring in blur style"});
}

ImageBatch random_images(Rng& rng, int b, int size) {
    ImageBatch ib;
    ib.b = b;
    ib.c = 3;
    ib.h = size;
    ib.w = size;
    ib.pixels.resize(static_cast<size_t>(b) * ib.sample_size());
    for (auto& v : ib.pixels) v = static_cast<float>(rng.uniform());
    for (int i = 0; i < b; ++i) ib.ids.push_back("img" + std::to_string(i));
    return ib;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("encode_image is deterministic and batch independent") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 7);
    Rng rng(3);
    ImageBatch batch = random_images(rng, 4, 16);

    Mat f1 = encode_image(batch, state);
    Mat f2 = encode_image(batch, state);
    CHECK(f1 == f2);
    CHECK(all_finite(f1));

    // single sample encodes identically inside a larger batch
    ImageBatch one;
    one.b = 1;
    one.c = 3;
    one.h = 16;
    one.w = 16;
    one.pixels.assign(batch.pixels.begin(),
                      batch.pixels.begin() + static_cast<long>(batch.sample_size()));
    one.ids = {"img0"};
    Mat fe = encode_image(one, state);
    CHECK(fe.row(0) == f1.row(0));
}

TEST_CASE("encode_image rejects mismatched shapes") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 7);
    Rng rng(5);
    ImageBatch wrong = random_images(rng, 2, 24);
    CHECK_THROWS(encode_image(wrong, state));
}

TEST_CASE("projection heads emit unit rows and are independent") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 11);
    Rng rng(13);
    ImageBatch batch = random_images(rng, 3, 16);
    Mat feats = encode_image(batch, state);

    Mat ic = project_class(feats, state);
    Mat id = project_domain(feats, state);
    for (Eigen::Index i = 0; i < ic.rows(); ++i) {
        CHECK(std::fabs(ic.row(i).norm() - 1.0f) < 1e-5f);
        CHECK(std::fabs(id.row(i).norm() - 1.0f) < 1e-5f);
    }

    // randomizing the domain head leaves the class head output unchanged
    Rng wr(99);
    init_normal(state.params.at("head.domain_w").w, wr, 1.0f);
    Mat ic2 = project_class(feats, state);
    CHECK(ic == ic2);

    // degenerate projection signals an error
    state.params.at("head.class_w").w.setZero();
    CHECK_THROWS(project_class(feats, state));
}

TEST_CASE("identity-projection configuration passes features through") {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = cfg.trunk_width;  // square head
    ModelState state = ModelState::init(cfg, tiny_vocab(), 3);
    state.params.at("head.class_w").w = Mat::Identity(cfg.trunk_width, cfg.trunk_width);

    Rng rng(17);
    Mat feats(2, cfg.trunk_width);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < cfg.trunk_width; ++j)
            feats(i, j) = static_cast<float>(rng.normal());
        feats.row(i) /= feats.row(i).norm();
    }
    Mat out = project_class(feats, state);
    CHECK((out - feats).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("encode_text: duplicate prompts give identical unit rows") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 23);
    TextBatch tb = encode_prompts(state.vocab,
                                  {"a circle in plain style", "a square",
                                   "a circle in plain style"},
                                  state.cfg.max_text_len);
    Mat pt = encode_text(tb, state);
    CHECK(pt.row(0) == pt.row(2));
    CHECK(pt.row(0) != pt.row(1));
    for (Eigen::Index i = 0; i < pt.rows(); ++i)
        CHECK(std::fabs(pt.row(i).norm() - 1.0f) < 1e-5f);

    // distinct prompts are not perfectly aligned
    float cos01 = pt.row(0).dot(pt.row(1));
    CHECK(cos01 < 1.0f - 1e-5f);

    CHECK_THROWS(encode_prompts(state.vocab, {""}, state.cfg.max_text_len));
}

TEST_CASE("project_hidden: width checked, rows normalized, duplicates equal") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 29);
    Rng rng(31);
    Mat hidden(3, state.cfg.hidden_width);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < state.cfg.hidden_width; ++j)
            hidden(i, j) = static_cast<float>(rng.normal());
    hidden.row(2) = hidden.row(0);

    Mat ph = project_hidden(hidden, state);
    CHECK(ph.row(0) == ph.row(2));
    for (Eigen::Index i = 0; i < ph.rows(); ++i)
        CHECK(std::fabs(ph.row(i).norm() - 1.0f) < 1e-5f);
    CHECK(all_finite(ph));

    Mat bad(2, state.cfg.hidden_width + 1);
    bad.setZero();
    CHECK_THROWS(project_hidden(bad, state));
}

TEST_CASE("zero_shot_classify: argmax with lowest-index tie break") {
    // hand-set logits via a rigged model: use real encoders but verify the
    // tie rule directly on the argmax path with equal prompts
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 37);
    Rng rng(41);
    ImageBatch batch = random_images(rng, 5, 16);
    TextBatch prompts = encode_prompts(
        state.vocab, {"a circle", "a circle", "a square"}, state.cfg.max_text_len);
    // classes 0 and 1 share an embedding; by the tie rule class 1 can never win
    auto pred = zero_shot_classify(batch, prompts, state);
    for (int p : pred) CHECK(p != 1);
}

TEST_CASE("inference-path invariance: domain head and hidden projector do not matter") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 43);
    Rng rng(47);
    ImageBatch batch = random_images(rng, 16, 16);
    TextBatch prompts = encode_prompts(state.vocab, {"a circle", "a square", "a ring"},
                                       state.cfg.max_text_len);
    auto before = zero_shot_classify(batch, prompts, state);

    Rng wr(1234);
    init_normal(state.params.at("head.domain_w").w, wr, 2.0f);
    init_normal(state.params.at("hid.proj_w").w, wr, 2.0f);
    auto after = zero_shot_classify(batch, prompts, state);
    CHECK(before == after);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 53);
    state.step = 123;
    std::string path = temp_path("dca_test_ckpt.bin");
    save_checkpoint(state, path);
    ModelState loaded = load_model_state(path);

    CHECK(loaded.step == 123);
    CHECK(loaded.seed == 53);
    CHECK(loaded.vocab == state.vocab);
    for (const auto& p : state.params) {
        const Mat& other = loaded.params.at(p.name).w;
        CHECK(p.w == other);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects truncated and corrupted files") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 59);
    std::string path = temp_path("dca_test_ckpt2.bin");
    save_checkpoint(state, path);

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS(load_checkpoint(path));

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "NOPE garbage";
    os.close();
    CHECK_THROWS(load_checkpoint(path));
    std::filesystem::remove(path);
}

TEST_CASE("interpolate_weights endpoints and affinity") {
    ModelState a = ModelState::init(tiny_config(), tiny_vocab(), 61);
    ModelState b = ModelState::init(tiny_config(), tiny_vocab(), 67);
    Checkpoint ca = snapshot(a), cb = snapshot(b);

    Checkpoint at1 = interpolate_weights(ca, cb, 1.0);
    Checkpoint at0 = interpolate_weights(ca, cb, 0.0);
    for (size_t i = 0; i < ca.tensors.size(); ++i) {
        CHECK(at1.tensors[i].second == ca.tensors[i].second);
        CHECK(at0.tensors[i].second == cb.tensors[i].second);
    }

    // scalar sanity: tau blends linearly
    Checkpoint mid = interpolate_weights(ca, cb, 0.5);
    const Mat* t = mid.find("tau");
    REQUIRE(t != nullptr);
    CHECK((*t)(0, 0) ==
          doctest::Approx(0.5f * ca.find("tau")->operator()(0, 0) +
                          0.5f * cb.find("tau")->operator()(0, 0)));

    // interpolate(a,b,alpha) + interpolate(a,b,1-alpha) == a + b within 1e-6
    Checkpoint lo = interpolate_weights(ca, cb, 0.3);
    Checkpoint hi = interpolate_weights(ca, cb, 0.7);
    for (size_t i = 0; i < ca.tensors.size(); ++i) {
        Mat sum = lo.tensors[i].second + hi.tensors[i].second;
        Mat ref = ca.tensors[i].second + cb.tensors[i].second;
        CHECK((sum - ref).cwiseAbs().maxCoeff() < 1e-6f);
    }

    CHECK(mid.meta.at("alpha") == 0.5);
    CHECK(mid.meta.at("parents").size() == 2);
    CHECK_THROWS(interpolate_weights(ca, cb, 1.5));

    // shape mismatch rejected
    ModelConfig other = tiny_config();
    other.embed_dim = 8;
    Checkpoint cc = snapshot(ModelState::init(other, tiny_vocab(), 3));
    CHECK_THROWS(interpolate_weights(ca, cc, 0.5));
}

TEST_CASE("scalar tensor interpolation worked example") {
    Checkpoint a, b;
    a.meta["step"] = 0;
    b.meta["step"] = 0;
    a.tensors.emplace_back("x", Mat::Constant(1, 1, 2.0f));
    b.tensors.emplace_back("x", Mat::Constant(1, 1, 4.0f));
    Checkpoint m = interpolate_weights(a, b, 0.5);
    CHECK(m.tensors[0].second(0, 0) == 3.0f);
}

TEST_CASE("metadata seed survives a save/load round trip") {
    ModelState state = ModelState::init(tiny_config(), tiny_vocab(), 4242);
    std::string path = temp_path("dca_test_ckpt3.bin");
    save_checkpoint(state, path);
    Checkpoint c = load_checkpoint(path);
    CHECK(c.meta.at("seed") == 4242);
    CHECK(c.meta.at("config_digest") ==
          model_config_digest(state.cfg, state.vocab));
    std::filesystem::remove(path);
}

TEST_CASE("trained-path gradient check through the full image/text stack") {
    // FD through encode_image + heads + agreement loss on a couple of params;
    // catches wiring mistakes the per-op tests cannot see.
    ModelConfig cfg = tiny_config();
    cfg.trunk_blocks = 1;
    cfg.text_blocks = 1;
    ModelState state = ModelState::init(cfg, tiny_vocab(), 71);
    Rng rng(73);
    ImageBatch batch = random_images(rng, 2, 16);
    TextBatch tb = encode_prompts(state.vocab, {"a circle", "a square"},
                                  cfg.max_text_len);

    auto loss_value = [&]() -> double {
        Tape t;
        ModelGraph g(t, state, false);
        Var ic = g.project_class(g.encode_image(batch));
        Var pt = g.encode_text(tb);
        Var id = g.project_domain(g.encode_image(batch));
        Var loss = t.add(agreement_loss_t(t, ic, pt, g.tau()),
                         disentangle_loss_t(t, ic, id));
        return loss.scalar();
    };

    // analytic grads
    Tape t;
    ModelGraph g(t, state, true);
    Var ic = g.project_class(g.encode_image(batch));
    Var pt = g.encode_text(tb);
    Var id = g.project_domain(g.encode_image(batch));
    Var loss = t.add(agreement_loss_t(t, ic, pt, g.tau()),
                     disentangle_loss_t(t, ic, id));
    t.backward(loss);
    g.pull_grads();

    for (const char* pname : {"head.class_w", "img.patch_w", "txt.proj_w", "tau"}) {
        Param& p = state.params.at(pname);
        Mat analytic = p.g;
        // probe a few entries
        Rng pick(fnv1a(pname));
        for (int probe = 0; probe < 4; ++probe) {
            Eigen::Index i = static_cast<Eigen::Index>(pick.below(static_cast<uint64_t>(p.w.rows())));
            Eigen::Index j = static_cast<Eigen::Index>(pick.below(static_cast<uint64_t>(p.w.cols())));
            float orig = p.w(i, j);
            const float h = 1e-3f;
            p.w(i, j) = orig + h;
            double up = loss_value();
            p.w(i, j) = orig - h;
            double dn = loss_value();
            p.w(i, j) = orig;
            double fd = (up - dn) / (2.0 * h);
            double an = analytic(i, j);
            CAPTURE(pname);
            CAPTURE(i);
            CAPTURE(j);
            CAPTURE(fd);
            CAPTURE(an);
            CHECK(std::fabs(fd - an) <= 2e-3 + 3e-2 * std::max(std::fabs(fd), std::fabs(an)));
        }
    }
    state.params.zero_grads();
}
