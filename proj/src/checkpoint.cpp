#include "dca/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dca {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'A', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(std::string("checkpoint: truncated file at ") + what);
    return v;
}

std::string get_bytes(std::istream& is, size_t n, const char* what) {
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error(std::string("checkpoint: truncated file at ") + what);
    return s;
}

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {
        {"image_size", c.image_size},     {"channels", c.channels},
        {"patch_size", c.patch_size},     {"trunk_width", c.trunk_width},
        {"trunk_blocks", c.trunk_blocks}, {"trunk_heads", c.trunk_heads},
        {"trunk_mlp", c.trunk_mlp},       {"text_width", c.text_width},
        {"text_blocks", c.text_blocks},   {"text_heads", c.text_heads},
        {"text_mlp", c.text_mlp},         {"max_text_len", c.max_text_len},
        {"embed_dim", c.embed_dim},       {"hidden_width", c.hidden_width},
        {"tau_init", c.tau_init},         {"tau_min", c.tau_min},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size");
    c.channels = j.at("channels");
    c.patch_size = j.at("patch_size");
    c.trunk_width = j.at("trunk_width");
    c.trunk_blocks = j.at("trunk_blocks");
    c.trunk_heads = j.at("trunk_heads");
    c.trunk_mlp = j.at("trunk_mlp");
    c.text_width = j.at("text_width");
    c.text_blocks = j.at("text_blocks");
    c.text_heads = j.at("text_heads");
    c.text_mlp = j.at("text_mlp");
    c.max_text_len = j.at("max_text_len");
    c.embed_dim = j.at("embed_dim");
    c.hidden_width = j.at("hidden_width");
    c.tau_init = j.at("tau_init");
    c.tau_min = j.at("tau_min");
    return c;
}

std::string model_config_digest(const ModelConfig& cfg, const Vocab& vocab) {
    nlohmann::json j = model_config_to_json(cfg);
    j["vocab"] = vocab.words;
    uint64_t h = fnv1a(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Checkpoint snapshot(const ModelState& state) {
    Checkpoint c;
    c.meta["step"] = state.step;
    c.meta["seed"] = state.seed;
    c.meta["config_digest"] = model_config_digest(state.cfg, state.vocab);
    c.meta["model_config"] = model_config_to_json(state.cfg);
    c.meta["vocab"] = state.vocab.words;
    c.meta["parents"] = nlohmann::json::array();
    for (const auto& p : state.params) c.tensors.emplace_back(p.name, p.w);
    std::sort(c.tensors.begin(), c.tensors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return c;
}

ModelState to_model_state(const Checkpoint& ckpt) {
    ModelConfig cfg = model_config_from_json(ckpt.meta.at("model_config"));
    Vocab vocab;
    vocab.words = ckpt.meta.at("vocab").get<std::vector<std::string>>();
    for (size_t i = 0; i < vocab.words.size(); ++i)
        vocab.index[vocab.words[i]] = static_cast<int>(i);

    ModelState s = ModelState::init(cfg, vocab, ckpt.meta.value("seed", 0ull));
    s.step = ckpt.meta.value("step", 0ll);
    for (auto& p : s.params) {
        const Mat* m = ckpt.find(p.name);
        if (m == nullptr)
            throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (m->rows() != p.w.rows() || m->cols() != p.w.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        p.w = *m;
    }
    return s;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);

    os.write(kMagic, 4);
    put<uint32_t>(os, Checkpoint::kFormatVersion);
    std::string meta = ckpt.meta.dump();
    put<uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));

    put<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
    uint64_t offset = 0;
    for (const auto& [name, m] : ckpt.tensors) {
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint8_t>(os, 0);  // dtype 0 = float32
        put<uint32_t>(os, 2);
        put<uint64_t>(os, static_cast<uint64_t>(m.rows()));
        put<uint64_t>(os, static_cast<uint64_t>(m.cols()));
        put<uint64_t>(os, offset);
        offset += static_cast<uint64_t>(m.size()) * sizeof(float);
    }
    for (const auto& [name, m] : ckpt.tensors)
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(static_cast<size_t>(m.size()) * sizeof(float)));
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);

    std::string magic = get_bytes(is, 4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: corrupted header (bad magic)");
    uint32_t version = get<uint32_t>(is, "version");
    if (version != Checkpoint::kFormatVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));

    uint64_t meta_len = get<uint64_t>(is, "metadata length");
    std::string meta_str = get_bytes(is, meta_len, "metadata");
    Checkpoint c;
    c.meta = nlohmann::json::parse(meta_str, nullptr, /*allow_exceptions=*/false);
    if (c.meta.is_discarded())
        throw std::runtime_error("checkpoint: corrupted metadata block");

    uint32_t count = get<uint32_t>(is, "tensor count");
    struct Entry {
        std::string name;
        uint64_t rows, cols, offset;
    };
    std::vector<Entry> dir;
    dir.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = get<uint32_t>(is, "tensor name length");
        Entry e;
        e.name = get_bytes(is, name_len, "tensor name");
        uint8_t dtype = get<uint8_t>(is, "dtype");
        if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
        uint32_t ndim = get<uint32_t>(is, "rank");
        if (ndim != 2) throw std::runtime_error("checkpoint: unsupported rank");
        e.rows = get<uint64_t>(is, "rows");
        e.cols = get<uint64_t>(is, "cols");
        e.offset = get<uint64_t>(is, "offset");
        dir.push_back(std::move(e));
    }

    std::streampos payload_start = is.tellg();
    for (const auto& e : dir) {
        is.seekg(payload_start + static_cast<std::streamoff>(e.offset));
        Mat m(static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols));
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(e.rows * e.cols * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload for " + e.name);
        c.tensors.emplace_back(e.name, std::move(m));
    }
    return c;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
    save_checkpoint(snapshot(state), path);
}

ModelState load_model_state(const std::string& path) {
    return to_model_state(load_checkpoint(path));
}

Checkpoint interpolate_weights(const Checkpoint& a, const Checkpoint& b, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("interpolate_weights: alpha outside [0,1]");
    if (a.tensors.size() != b.tensors.size())
        throw std::invalid_argument("interpolate_weights: tensor sets differ");

    Checkpoint out;
    out.meta = a.meta;
    out.meta["alpha"] = alpha;
    out.meta["parents"] = nlohmann::json::array({
        {{"step", a.meta.value("step", 0ll)},
         {"seed", a.meta.value("seed", 0ull)},
         {"config_digest", a.meta.value("config_digest", "")}},
        {{"step", b.meta.value("step", 0ll)},
         {"seed", b.meta.value("seed", 0ull)},
         {"config_digest", b.meta.value("config_digest", "")}},
    });

    const float af = static_cast<float>(alpha);
    for (size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& [na, ma] = a.tensors[i];
        const auto& [nb, mb] = b.tensors[i];
        if (na != nb)
            throw std::invalid_argument("interpolate_weights: tensor name mismatch: " +
                                        na + " vs " + nb);
        if (ma.rows() != mb.rows() || ma.cols() != mb.cols())
            throw std::invalid_argument("interpolate_weights: shape mismatch for " + na);
        if (alpha == 1.0) {
            out.tensors.emplace_back(na, ma);
        } else if (alpha == 0.0) {
            out.tensors.emplace_back(na, mb);
        } else {
            out.tensors.emplace_back(na, Mat(af * ma + (1.0f - af) * mb));
        }
    }
    return out;
}

} // namespace dca
