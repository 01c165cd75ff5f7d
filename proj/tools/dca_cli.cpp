// Command-line front end: data generation, pretraining, the three
// finetuners, unlearning, OOD scoring, evaluation and report emission.
// Every subcommand is deterministic in (--config, --seed): rerunning with
// the same inputs reproduces every output byte.

#include <CLI11.hpp>

#include "dca/checkpoint.hpp"
#include "dca/config.hpp"
#include "dca/data.hpp"
#include "dca/oodscore.hpp"
#include "dca/sngp.hpp"
#include "dca/train.hpp"
#include "dca/unlearn.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace dca;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

// resolved options echoed into run.json so a run directory is reproducible
struct RunMeta {
    nlohmann::json options = nlohmann::json::object();

    void set(const std::string& k, const nlohmann::json& v) { options[k] = v; }
    std::string digest() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a(options.dump())));
        return buf;
    }
    void write(const std::string& dir, const std::string& command) const {
        nlohmann::json j;
        j["command"] = command;
        j["options"] = options;
        j["config_digest"] = digest();
        write_text(dir + "/run.json", j.dump(2) + "\n");
    }
};

void write_history(const std::string& path, const std::vector<StepRecord>& hist) {
    std::string out = "step,loss,C1,C2,C3,C4,C5,C6,dann\n";
    for (const auto& r : hist) {
        out += std::to_string(r.step) + "," + format_double(r.loss);
        for (const char* k : {"C1", "C2", "C3", "C4", "C5", "C6", "dann"}) {
            out += ",";
            auto it = r.components.find(k);
            if (it != r.components.end()) out += format_double(it->second);
        }
        out += "\n";
    }
    write_text(path, out);
}

ModelConfig model_config_from(const KVConfig& cfg) {
    ModelConfig m;
    m.image_size = cfg.get_int("image_size", m.image_size);
    m.channels = cfg.get_int("channels", m.channels);
    m.patch_size = cfg.get_int("patch_size", m.patch_size);
    m.trunk_width = cfg.get_int("trunk_width", m.trunk_width);
    m.trunk_blocks = cfg.get_int("trunk_blocks", m.trunk_blocks);
    m.trunk_heads = cfg.get_int("trunk_heads", m.trunk_heads);
    m.trunk_mlp = cfg.get_int("trunk_mlp", m.trunk_mlp);
    m.text_width = cfg.get_int("text_width", m.text_width);
    m.text_blocks = cfg.get_int("text_blocks", m.text_blocks);
    m.text_heads = cfg.get_int("text_heads", m.text_heads);
    m.text_mlp = cfg.get_int("text_mlp", m.text_mlp);
    m.max_text_len = cfg.get_int("max_text_len", m.max_text_len);
    m.embed_dim = cfg.get_int("embed_dim", m.embed_dim);
    m.hidden_width = cfg.get_int("hidden_width", m.hidden_width);
    m.tau_init = static_cast<float>(cfg.get_double("tau_init", m.tau_init));
    m.tau_min = static_cast<float>(cfg.get_double("tau_min", m.tau_min));
    return m;
}

std::vector<DatasetManifest> load_manifests(const std::vector<std::string>& paths) {
    std::vector<DatasetManifest> out;
    for (const auto& p : paths) out.push_back(load_dataset_manifest(p));
    return out;
}

std::string ood_csv(const std::vector<OODReport>& reports) {
    std::string out =
        "dataset,image_ood_raw,text_ood_raw,image_ood_norm,text_ood_norm,combined,accuracy\n";
    for (const auto& r : reports) {
        out += r.dataset + "," + format_double(r.image_ood) + "," +
               format_double(r.text_ood) + "," + format_double(r.image_norm) + "," +
               format_double(r.text_norm) + "," + format_double(r.combined) + ",";
        if (r.accuracy) out += format_double(*r.accuracy);
        out += "\n";
    }
    return out;
}

std::vector<OODReport> read_ood_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<OODReport> out;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t pos = 0;
        while (true) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(pos));
                break;
            }
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (cells.size() < 7) throw std::runtime_error("malformed OOD csv row: " + line);
        OODReport r;
        r.dataset = cells[0];
        r.image_ood = std::stod(cells[1]);
        r.text_ood = std::stod(cells[2]);
        r.image_norm = std::stod(cells[3]);
        r.text_norm = std::stod(cells[4]);
        r.combined = std::stod(cells[5]);
        if (!cells[6].empty()) r.accuracy = std::stod(cells[6]);
        out.push_back(std::move(r));
    }
    return out;
}

EvalTable read_eval_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    EvalTable t;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t pos = 0;
        while (true) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(pos));
                break;
            }
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (cells.size() < 3) throw std::runtime_error("malformed eval csv row: " + line);
        EvalRow r;
        r.method = cells[0];
        r.dataset = cells[1];
        r.accuracy = std::stod(cells[2]);
        if (cells.size() > 3 && !cells[3].empty()) r.combined_ood = std::stod(cells[3]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

void write_eval_csv(const std::string& path, const EvalTable& t) {
    std::string out = "method,dataset,accuracy,combined_ood\n";
    for (const auto& r : t.rows) {
        out += r.method + "," + r.dataset + "," + format_double(r.accuracy) + ",";
        if (r.combined_ood) out += format_double(*r.combined_ood);
        out += "\n";
    }
    write_text(path, out);
}

}  // namespace

int main(int argc, char** argv) {
    // --config is resolved before option defaults so file values act as
    // defaults and explicit flags win
    KVConfig file_cfg;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") file_cfg = KVConfig::load(argv[i + 1]);

    CLI::App app{"CLIP-DCA desk-scale benchmark toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "key=value config file (defaults for flags)");

    uint64_t seed = file_cfg.get_u64("seed", 0);
    std::string out_dir = file_cfg.get("out", "out");

    // ---------------------------------------------------------------- data
    auto* gen = app.add_subcommand("generate-data", "render the synthetic multi-domain corpus");
    int g_classes = file_cfg.get_int("classes", 10);
    int g_domains = file_cfg.get_int("domains", 12);
    int g_per_cell = file_cfg.get_int("per_cell", 20);
    int g_size = file_cfg.get_int("size", 32);
    double g_strength = file_cfg.get_double("strength", 1.0);
    std::string g_name = file_cfg.get("name", "synthetic");
    std::string g_split = file_cfg.get("split", "train");
    gen->add_option("--out", out_dir, "output directory")->capture_default_str();
    gen->add_option("--seed", seed)->capture_default_str();
    gen->add_option("--classes", g_classes)->capture_default_str();
    gen->add_option("--domains", g_domains)->capture_default_str();
    gen->add_option("--per-cell", g_per_cell)->capture_default_str();
    gen->add_option("--size", g_size)->capture_default_str();
    gen->add_option("--strength", g_strength)->capture_default_str();
    gen->add_option("--name", g_name)->capture_default_str();
    gen->add_option("--split", g_split)->capture_default_str();

    auto* gsty = app.add_subcommand("generate-styles", "render the class-free style bank");
    int s_styles = file_cfg.get_int("styles", 64);
    int s_per_style = file_cfg.get_int("per_style", 8);
    int s_size = file_cfg.get_int("size", 32);
    int s_hidden = file_cfg.get_int("hidden_width", 96);
    gsty->add_option("--out", out_dir)->capture_default_str();
    gsty->add_option("--seed", seed)->capture_default_str();
    gsty->add_option("--styles", s_styles)->capture_default_str();
    gsty->add_option("--per-style", s_per_style)->capture_default_str();
    gsty->add_option("--size", s_size)->capture_default_str();
    gsty->add_option("--hidden-width", s_hidden)->capture_default_str();

    // ---------------------------------------------------------------- train
    auto* pre = app.add_subcommand("pretrain", "contrastive pretraining on the captioned corpus");
    std::string data_path, styles_path, start_path, method = "dca";
    int steps = file_cfg.get_int("steps", 600);
    int batch = file_cfg.get_int("batch", 32);
    double lr = file_cfg.get_double("lr", 1e-3);
    double weight_decay = file_cfg.get_double("weight_decay", 0.01);
    pre->add_option("--data", data_path, "dataset manifest")->required();
    pre->add_option("--styles", styles_path, "style manifest (vocabulary only)");
    pre->add_option("--out", out_dir)->capture_default_str();
    pre->add_option("--seed", seed)->capture_default_str();
    pre->add_option("--steps", steps)->capture_default_str();
    pre->add_option("--batch", batch)->capture_default_str();
    pre->add_option("--lr", lr)->capture_default_str();
    pre->add_option("--weight-decay", weight_decay)->capture_default_str();

    auto* fin = app.add_subcommand("finetune", "finetune with flyp, dann or dca");
    double w_c1 = file_cfg.get_double("w_c1", 1.0), w_c2 = file_cfg.get_double("w_c2", 1.0),
           w_c3 = file_cfg.get_double("w_c3", 1.0), w_c4 = file_cfg.get_double("w_c4", 1.0),
           w_c5 = file_cfg.get_double("w_c5", 1.0), w_c6 = file_cfg.get_double("w_c6", 1.0);
    bool no_domain = false, no_disent = false, no_hidden = false;
    int ratio = file_cfg.get_int("ratio", 4);
    double dann_lambda = file_cfg.get_double("dann_lambda", 1.0);
    int ft_steps = file_cfg.get_int("steps", 2000);
    fin->add_option("--method", method, "flyp | dann | dca")->required();
    fin->add_option("--start", start_path, "starting checkpoint")->required();
    fin->add_option("--data", data_path, "source manifest")->required();
    fin->add_option("--styles", styles_path, "style manifest (dca/dann)");
    fin->add_option("--out", out_dir)->capture_default_str();
    fin->add_option("--seed", seed)->capture_default_str();
    fin->add_option("--steps", ft_steps)->capture_default_str();
    fin->add_option("--batch", batch)->capture_default_str();
    fin->add_option("--lr", lr)->capture_default_str();
    fin->add_option("--weight-decay", weight_decay)->capture_default_str();
    fin->add_option("--ratio", ratio, "source batches per diffusion batch")
        ->capture_default_str();
    fin->add_option("--dann-lambda", dann_lambda)->capture_default_str();
    fin->add_option("--w-c1", w_c1)->capture_default_str();
    fin->add_option("--w-c2", w_c2)->capture_default_str();
    fin->add_option("--w-c3", w_c3)->capture_default_str();
    fin->add_option("--w-c4", w_c4)->capture_default_str();
    fin->add_option("--w-c5", w_c5)->capture_default_str();
    fin->add_option("--w-c6", w_c6)->capture_default_str();
    fin->add_flag("--no-domain-descriptions", no_domain, "ablate the C5 style-caption term");
    fin->add_flag("--no-disentanglement", no_disent, "ablate C2/C3/C4");
    fin->add_flag("--no-mllm-hidden", no_hidden, "ablate C6");

    // -------------------------------------------------------------- unlearn
    auto* unl = app.add_subcommand("unlearn", "adversarial domain forgetting");
    std::string retain_path, forget_path;
    double lambda = file_cfg.get_double("lambda", 1.0);
    int ul_steps = file_cfg.get_int("steps", 300);
    unl->add_option("--start", start_path, "starting checkpoint")->required();
    unl->add_option("--retain", retain_path, "retain manifest")->required();
    unl->add_option("--forget", forget_path, "forget manifest (single domain)")->required();
    unl->add_option("--lambda", lambda)->capture_default_str();
    unl->add_option("--steps", ul_steps)->capture_default_str();
    unl->add_option("--batch", batch)->capture_default_str();
    unl->add_option("--lr", lr)->capture_default_str();
    unl->add_option("--seed", seed)->capture_default_str();
    unl->add_option("--out", out_dir)->capture_default_str();

    // ------------------------------------------------------------- evaluate
    auto* ev = app.add_subcommand("evaluate", "zero-shot accuracy over manifests");
    std::vector<std::string> data_paths;
    std::string ckpt_path, ood_path, wise_base;
    std::string method_name = file_cfg.get("method_name", "model");
    std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 1.0};
    ev->add_option("--ckpt", ckpt_path)->required();
    ev->add_option("--data", data_paths, "dataset manifests")->required();
    ev->add_option("--out", out_dir)->capture_default_str();
    ev->add_option("--method-name", method_name)->capture_default_str();
    ev->add_option("--ood", ood_path, "ood.csv to join combined scores from");
    ev->add_option("--wise-ft", wise_base,
                   "second checkpoint; sweeps interpolation instead of single eval");
    ev->add_option("--alphas", alphas, "wise-ft interpolation weights")
        ->delimiter(',');

    // ------------------------------------------------------------ score-ood
    auto* so = app.add_subcommand("score-ood", "multi-modal OOD scores per dataset");
    std::string anchor_path;
    int sngp_features = file_cfg.get_int("sngp_features", 1024);
    int sngp_hidden = file_cfg.get_int("sngp_hidden", 128);
    int sngp_epochs = file_cfg.get_int("sngp_epochs", 30);
    bool no_accuracy = false;
    so->add_option("--ckpt", ckpt_path)->required();
    so->add_option("--anchor", anchor_path, "anchor manifest (SNGP calibration)")->required();
    so->add_option("--data", data_paths, "target manifests")->required();
    so->add_option("--out", out_dir)->capture_default_str();
    so->add_option("--seed", seed)->capture_default_str();
    so->add_option("--sngp-features", sngp_features)->capture_default_str();
    so->add_option("--sngp-hidden", sngp_hidden)->capture_default_str();
    so->add_option("--sngp-epochs", sngp_epochs)->capture_default_str();
    so->add_flag("--no-accuracy", no_accuracy, "skip zero-shot accuracy per target");

    // ------------------------------------------------------------------ pca
    auto* pc = app.add_subcommand("pca", "pairwise domain OOD matrix + 2-D embedding");
    pc->add_option("--ckpt", ckpt_path)->required();
    pc->add_option("--data", data_path, "manifest; domains become datasets")->required();
    pc->add_option("--out", out_dir)->capture_default_str();
    pc->add_option("--seed", seed)->capture_default_str();
    pc->add_option("--sngp-features", sngp_features)->capture_default_str();
    pc->add_option("--sngp-hidden", sngp_hidden)->capture_default_str();
    pc->add_option("--sngp-epochs", sngp_epochs)->capture_default_str();

    // --------------------------------------------------------------- report
    auto* rep = app.add_subcommand("report", "scatter data and best-fit lines");
    std::vector<std::string> eval_paths;
    rep->add_option("--eval", eval_paths, "eval.csv files")->required();
    rep->add_option("--ood", ood_path, "ood.csv with combined scores");
    rep->add_option("--out", out_dir)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        ImageCache cache;

        if (gen->parsed()) {
            CorpusConfig c;
            c.n_classes = g_classes;
            c.n_domains = g_domains;
            c.images_per_cell = g_per_cell;
            c.image_size = g_size;
            c.seed = seed;
            c.style_strength = static_cast<float>(g_strength);
            c.name = g_name;
            c.split = g_split;
            DatasetManifest m = generate_corpus(c, out_dir);
            std::cout << "wrote " << m.samples.size() << " images under " << out_dir
                      << "\n";
        } else if (gsty->parsed()) {
            StyleBankConfig c;
            c.n_styles = s_styles;
            c.images_per_style = s_per_style;
            c.image_size = s_size;
            c.hidden_width = s_hidden;
            c.seed = seed;
            auto recs = generate_style_bank(c, out_dir);
            std::cout << "wrote " << recs.size() << " styles under " << out_dir << "\n";
        } else if (pre->parsed()) {
            ensure_dir(out_dir);
            DatasetManifest corpus = load_dataset_manifest(data_path);
            std::vector<StyleRecord> styles;
            if (!styles_path.empty()) styles = load_style_manifest(styles_path, true);
            PretrainConfig pc2;
            pc2.model = model_config_from(file_cfg);
            pc2.opt.steps = steps;
            pc2.opt.batch_size = batch;
            pc2.opt.lr = static_cast<float>(lr);
            pc2.opt.weight_decay = static_cast<float>(weight_decay);
            pc2.seed = seed;
            std::vector<StepRecord> hist;
            ModelState state = pretrain_toy(corpus, pc2, cache, styles, &hist);
            save_checkpoint(state, out_dir + "/pretrained.ckpt");
            write_history(out_dir + "/history.csv", hist);
            RunMeta meta;
            meta.set("data", data_path);
            meta.set("styles", styles_path);
            meta.set("seed", seed);
            meta.set("steps", steps);
            meta.set("batch", batch);
            meta.set("lr", lr);
            meta.set("weight_decay", weight_decay);
            meta.set("model", model_config_to_json(pc2.model));
            meta.write(out_dir, "pretrain");
            std::cout << "pretrained checkpoint: " << out_dir << "/pretrained.ckpt\n";
        } else if (fin->parsed()) {
            ensure_dir(out_dir);
            DatasetManifest source = load_dataset_manifest(data_path);
            std::vector<StyleRecord> styles;
            RunConfig rc;
            rc.method = method;
            rc.opt.steps = ft_steps;
            rc.opt.batch_size = batch;
            rc.opt.lr = static_cast<float>(lr);
            rc.opt.weight_decay = static_cast<float>(weight_decay);
            rc.weights = LossWeights{
                static_cast<float>(w_c1), static_cast<float>(w_c2),
                static_cast<float>(w_c3), static_cast<float>(w_c4),
                static_cast<float>(w_c5), static_cast<float>(w_c6)};
            rc.ablation.domain_descriptions = !no_domain;
            rc.ablation.disentanglement = !no_disent;
            rc.ablation.mllm_hidden = !no_hidden;
            rc.interleave_ratio = ratio;
            rc.dann_lambda = static_cast<float>(dann_lambda);
            rc.seed = seed;
            if (!styles_path.empty())
                styles = load_style_manifest(styles_path, !rc.ablation.mllm_hidden ||
                                                              rc.method != "dca");
            ModelState start = load_model_state(start_path);
            std::vector<StepRecord> hist;
            ModelState tuned = finetune(std::move(start), source, styles, rc, cache, &hist);
            save_checkpoint(tuned, out_dir + "/finetuned.ckpt");
            write_history(out_dir + "/history.csv", hist);
            RunMeta meta;
            meta.set("method", method);
            meta.set("start", start_path);
            meta.set("data", data_path);
            meta.set("styles", styles_path);
            meta.set("seed", seed);
            meta.set("steps", ft_steps);
            meta.set("batch", batch);
            meta.set("lr", lr);
            meta.set("weight_decay", weight_decay);
            meta.set("ratio", ratio);
            meta.set("dann_lambda", dann_lambda);
            meta.set("weights", {w_c1, w_c2, w_c3, w_c4, w_c5, w_c6});
            meta.set("ablation", {{"domain_descriptions", !no_domain},
                                  {"disentanglement", !no_disent},
                                  {"mllm_hidden", !no_hidden}});
            meta.write(out_dir, "finetune");
            std::cout << "finetuned checkpoint: " << out_dir << "/finetuned.ckpt\n";
        } else if (unl->parsed()) {
            ensure_dir(out_dir);
            DatasetManifest retain = load_dataset_manifest(retain_path);
            DatasetManifest forget = load_dataset_manifest(forget_path);
            UnlearnConfig uc;
            uc.lambda = static_cast<float>(lambda);
            uc.opt.steps = ul_steps;
            uc.opt.batch_size = batch;
            uc.opt.lr = static_cast<float>(lr);
            uc.noise_batch = batch;
            uc.forget_batch = batch;
            uc.seed = seed;
            ModelState start = load_model_state(start_path);
            auto [unlearned, audit] = unlearn_run(std::move(start), retain, forget, uc, cache);
            save_checkpoint(unlearned, out_dir + "/unlearned.ckpt");
            nlohmann::json j;
            j["forget_domain"] = audit.forget_domain;
            j["before"] = audit.before;
            j["after"] = audit.after;
            j["forget_before"] = audit.forget_before;
            j["forget_after"] = audit.forget_after;
            j["forget_rel_drop"] = audit.forget_rel_drop;
            j["retain_before"] = audit.retain_before;
            j["retain_after"] = audit.retain_after;
            j["retain_rel_drop"] = audit.retain_rel_drop;
            j["steps_completed"] = audit.steps_completed;
            j["diverged"] = audit.diverged;
            write_text(out_dir + "/audit.json", j.dump(2) + "\n");
            RunMeta meta;
            meta.set("start", start_path);
            meta.set("retain", retain_path);
            meta.set("forget", forget_path);
            meta.set("lambda", lambda);
            meta.set("steps", ul_steps);
            meta.set("batch", batch);
            meta.set("lr", lr);
            meta.set("seed", seed);
            meta.write(out_dir, "unlearn");
            std::cout << "unlearned checkpoint: " << out_dir << "/unlearned.ckpt\n";
        } else if (ev->parsed()) {
            ensure_dir(out_dir);
            auto manifests = load_manifests(data_paths);
            std::vector<OODReport> reports;
            if (!ood_path.empty()) reports = read_ood_csv(ood_path);

            EvalTable all;
            if (wise_base.empty()) {
                ModelState state = load_model_state(ckpt_path);
                all = evaluate(state, manifests, cache, method_name);
            } else {
                Checkpoint tuned = load_checkpoint(ckpt_path);
                Checkpoint base = load_checkpoint(wise_base);
                for (double a : alphas) {
                    Checkpoint mix = interpolate_weights(tuned, base, a);
                    ModelState state = to_model_state(mix);
                    char label[64];
                    std::snprintf(label, sizeof(label), "wiseft@%g", a);
                    EvalTable t = evaluate(state, manifests, cache, label);
                    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
                }
            }
            join_ood(all, reports);
            write_eval_csv(out_dir + "/eval.csv", all);
            std::cout << "wrote " << out_dir << "/eval.csv\n";
        } else if (so->parsed()) {
            ensure_dir(out_dir);
            ModelState state = load_model_state(ckpt_path);
            DatasetManifest anchor = load_dataset_manifest(anchor_path);
            auto targets = load_manifests(data_paths);

            SNGPConfig sc;
            sc.random_features = sngp_features;
            sc.hidden = sngp_hidden;
            sc.epochs = sngp_epochs;
            sc.seed = sub_seed(seed, "score_ood_sngp");
            Mat anchor_feats = dataset_features(anchor, state, cache);
            SNGPHead head = fit_sngp(anchor_feats, dataset_labels(anchor), sc);

            std::vector<OODReport> reports;
            for (auto& t : targets) {
                OODReport r;
                r.dataset = t.name;
                Mat feats = dataset_features(t, state, cache);
                r.image_ood = head.score(feats);
                Mat emb = project_class(feats, state);
                r.text_ood = text_ood_score(emb, t.class_names, anchor.class_names,
                                            state, state.tau());
                if (!no_accuracy) {
                    EvalTable et = evaluate(state, {t}, cache, "ood");
                    r.accuracy = et.rows[0].accuracy;
                }
                reports.push_back(std::move(r));
            }
            CombineBounds bounds = combine_scores(reports);
            write_text(out_dir + "/ood.csv", ood_csv(reports));

            nlohmann::json side;
            side["model_config_digest"] = model_config_digest(state.cfg, state.vocab);
            side["anchor"] = anchor.name;
            side["seed"] = seed;
            side["sngp"] = {{"random_features", sc.random_features},
                            {"hidden", sc.hidden},
                            {"epochs", sc.epochs},
                            {"norm_bound", sc.norm_bound},
                            {"ridge", sc.ridge}};
            side["bounds"] = {{"image_min", bounds.image_min},
                              {"image_max", bounds.image_max},
                              {"text_min", bounds.text_min},
                              {"text_max", bounds.text_max},
                              {"image_degenerate", bounds.image_degenerate},
                              {"text_degenerate", bounds.text_degenerate}};
            int with_acc = 0;
            for (const auto& r : reports)
                if (r.accuracy) ++with_acc;
            if (with_acc >= 3) {
                Correlation c = correlate(reports);
                side["correlation"] = {{"r", c.r}, {"p", c.p}};
            }
            write_text(out_dir + "/ood.json", side.dump(2) + "\n");
            std::cout << "wrote " << out_dir << "/ood.csv\n";
        } else if (pc->parsed()) {
            ensure_dir(out_dir);
            ModelState state = load_model_state(ckpt_path);
            DatasetManifest m = load_dataset_manifest(data_path);
            std::set<int> present;
            for (const auto& s : m.samples) present.insert(s.domain_index);
            std::vector<DatasetManifest> domains;
            for (int d : present) {
                DatasetManifest sub = filter_domains(m, {d});
                sub.name = m.domain_names[static_cast<size_t>(d)];
                domains.push_back(std::move(sub));
            }
            SNGPConfig sc;
            sc.random_features = sngp_features;
            sc.hidden = sngp_hidden;
            sc.epochs = sngp_epochs;
            sc.seed = sub_seed(seed, "pca_sngp");
            Eigen::MatrixXd mat = pairwise_ood_matrix(domains, state, sc, cache);
            PcaResult res = pca_embed(mat);

            std::string pw = "domain";
            for (const auto& d : domains) pw += "," + d.name;
            pw += "\n";
            for (size_t i = 0; i < domains.size(); ++i) {
                pw += domains[i].name;
                for (size_t j = 0; j < domains.size(); ++j)
                    pw += "," + format_double(mat(static_cast<Eigen::Index>(i),
                                                  static_cast<Eigen::Index>(j)));
                pw += "\n";
            }
            write_text(out_dir + "/pairwise.csv", pw);

            std::string pcsv = "domain,pc1,pc2\n";
            for (size_t i = 0; i < domains.size(); ++i)
                pcsv += domains[i].name + "," +
                        format_double(res.coords(static_cast<Eigen::Index>(i), 0)) + "," +
                        format_double(res.coords(static_cast<Eigen::Index>(i), 1)) + "\n";
            write_text(out_dir + "/pca.csv", pcsv);

            nlohmann::json j;
            j["explained_variance"] = {res.explained(0), res.explained(1)};
            j["rank_deficient"] = res.rank_deficient;
            j["seed"] = seed;
            write_text(out_dir + "/pca.json", j.dump(2) + "\n");
            std::cout << "wrote " << out_dir << "/pca.csv\n";
        } else if (rep->parsed()) {
            std::vector<EvalTable> tables;
            for (const auto& p : eval_paths) tables.push_back(read_eval_csv(p));
            std::vector<OODReport> reports;
            if (!ood_path.empty()) reports = read_ood_csv(ood_path);
            auto fits = report(tables, reports, out_dir);
            for (const auto& f : fits)
                std::cout << f.method << ": slope " << format_double(f.slope)
                          << " intercept " << format_double(f.intercept) << " ("
                          << f.points << " points)\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
