#include "specreg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "specreg/analysis.hpp"
#include "specreg/rng.hpp"
#include "specreg/synthdigits.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace specreg {

// ----------------------------------------------------------------- Adam

Adam::Adam(std::vector<Tensor>& params, OptimizerConfig cfg) : params_(&params), cfg_(cfg) {
    for (Tensor& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
        Tensor& p = (*params_)[i];
        auto g = p.grad();
        auto w = p.value_mut();
        for (size_t j = 0; j < w.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ------------------------------------------------------------- json I/O

namespace {

void expect_keys(const json& j, std::initializer_list<const char*> allowed, const char* ctx) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw Error(std::string("config: unknown key '") + it.key() + "' in " + ctx);
    }
}

LayerSpec layer_from_json(const json& j) {
    expect_keys(j, {"kind", "width", "out_channels", "kernel", "activation"}, "custom_layers[]");
    LayerSpec s;
    s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    s.width = j.value("width", 0);
    s.out_channels = j.value("out_channels", 0);
    if (j.contains("kernel")) {
        auto k = j.at("kernel");
        s.kernel_h = k.at(0).get<int64_t>();
        s.kernel_w = k.at(1).get<int64_t>();
    }
    s.activation = activation_from_string(j.value("activation", "none"));
    return s;
}

json layer_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = to_string(s.kind);
    if (s.width) j["width"] = s.width;
    if (s.out_channels) j["out_channels"] = s.out_channels;
    if (s.kernel_h) j["kernel"] = {s.kernel_h, s.kernel_w};
    j["activation"] = to_string(s.activation);
    return j;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    expect_keys(j,
                {"schema_version", "name", "preset", "hidden_width", "activation", "custom_layers",
                 "input_shape", "regularizer", "spectral", "jacobian", "whitening_layer", "optimizer",
                 "epochs", "seeds", "data", "batch_size", "attacks", "checkpoint_every",
                 "stream_batch", "outdir"},
                "top level");
    ExperimentConfig c;
    c.schema_version = j.value("schema_version", 1);
    if (c.schema_version != 1)
        throw Error("config: unsupported schema_version " + std::to_string(c.schema_version));
    c.name = j.value("name", "");
    c.preset = j.value("preset", "custom");
    c.hidden_width = j.value("hidden_width", 0);
    c.activation = j.value("activation", "");
    if (j.contains("custom_layers"))
        for (const auto& lj : j.at("custom_layers")) c.custom_layers.push_back(layer_from_json(lj));
    if (j.contains("input_shape")) c.input_shape = j.at("input_shape").get<Shape>();
    c.regularizer = j.value("regularizer", "none");
    if (c.regularizer != "none" && c.regularizer != "spectral" && c.regularizer != "jacobian")
        throw Error("config: regularizer must be none|spectral|jacobian");
    if (j.contains("spectral")) {
        const json& s = j.at("spectral");
        expect_keys(s, {"layers", "alpha", "beta", "tau", "anchor_grad"}, "spectral");
        if (s.contains("layers")) c.spectral.regularized_layers = s.at("layers").get<std::vector<int>>();
        if (s.contains("alpha")) {
            if (s.at("alpha").is_array())
                c.spectral.alpha_per_layer = s.at("alpha").get<std::vector<double>>();
            else
                c.spectral.alpha_per_layer = {s.at("alpha").get<double>()};
        }
        c.spectral.beta = s.value("beta", 1.0);
        c.spectral.tau = s.value("tau", 10);
        c.spectral.anchor_grad = s.value("anchor_grad", false);
    }
    if (j.contains("jacobian")) {
        const json& s = j.at("jacobian");
        expect_keys(s, {"beta_j", "fd_step"}, "jacobian");
        c.jacobian.beta_j = s.value("beta_j", 0.01);
        c.jacobian.fd_step = s.value("fd_step", 0.01);
    }
    c.whitening_layer = j.value("whitening_layer", 0);
    if (j.contains("optimizer")) {
        const json& s = j.at("optimizer");
        expect_keys(s, {"lr", "beta1", "beta2", "eps"}, "optimizer");
        c.optimizer.lr = s.value("lr", 1e-4);
        c.optimizer.beta1 = s.value("beta1", 0.9);
        c.optimizer.beta2 = s.value("beta2", 0.999);
        c.optimizer.eps = s.value("eps", 1e-8);
    }
    c.epochs = j.value("epochs", 20);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("data")) {
        const json& s = j.at("data");
        expect_keys(s,
                    {"synthetic", "synthetic_train", "synthetic_test", "synthetic_seed",
                     "train_images", "train_labels", "test_images", "test_labels", "train_subset",
                     "test_subset", "subset_seed"},
                    "data");
        c.data.synthetic = s.value("synthetic", false);
        c.data.synthetic_train = s.value("synthetic_train", 60000);
        c.data.synthetic_test = s.value("synthetic_test", 10000);
        c.data.synthetic_seed = s.value("synthetic_seed", 0);
        c.data.train_images = s.value("train_images", "");
        c.data.train_labels = s.value("train_labels", "");
        c.data.test_images = s.value("test_images", "");
        c.data.test_labels = s.value("test_labels", "");
        c.data.train_subset = s.value("train_subset", 10000);
        c.data.test_subset = s.value("test_subset", 2000);
        c.data.subset_seed = s.value("subset_seed", 0);
    }
    c.batch_size = j.value("batch_size", 0);
    if (j.contains("attacks"))
        for (const auto& aj : j.at("attacks")) {
            expect_keys(aj, {"kind", "epsilons", "eta", "steps", "n_images"}, "attacks[]");
            AttackSpec a;
            a.kind = attack_kind_from_string(aj.at("kind").get<std::string>());
            a.epsilons = aj.at("epsilons").get<std::vector<double>>();
            a.eta = aj.value("eta", 0.01);
            a.steps = aj.value("steps", 40);
            a.n_images = aj.value("n_images", 1000);
            c.attacks.push_back(std::move(a));
        }
    c.checkpoint_every = j.value("checkpoint_every", 1);
    c.stream_batch = j.value("stream_batch", 512);
    c.outdir = j.value("outdir", "runs");
    return c;
}

json config_to_json(const ExperimentConfig& c, bool include_outdir) {
    json j;
    j["schema_version"] = c.schema_version;
    j["name"] = c.name;
    j["preset"] = c.preset;
    j["hidden_width"] = c.hidden_width;
    j["activation"] = c.activation;
    json layers = json::array();
    for (const LayerSpec& s : c.custom_layers) layers.push_back(layer_to_json(s));
    j["custom_layers"] = layers;
    j["input_shape"] = c.input_shape;
    j["regularizer"] = c.regularizer;
    j["spectral"] = {{"layers", c.spectral.regularized_layers},
                     {"alpha", c.spectral.alpha_per_layer},
                     {"beta", c.spectral.beta},
                     {"tau", c.spectral.tau},
                     {"anchor_grad", c.spectral.anchor_grad}};
    j["jacobian"] = {{"beta_j", c.jacobian.beta_j}, {"fd_step", c.jacobian.fd_step}};
    j["whitening_layer"] = c.whitening_layer;
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"eps", c.optimizer.eps}};
    j["epochs"] = c.epochs;
    j["seeds"] = c.seeds;
    j["data"] = {{"synthetic", c.data.synthetic},
                 {"synthetic_train", c.data.synthetic_train},
                 {"synthetic_test", c.data.synthetic_test},
                 {"synthetic_seed", c.data.synthetic_seed},
                 {"train_images", c.data.train_images},
                 {"train_labels", c.data.train_labels},
                 {"test_images", c.data.test_images},
                 {"test_labels", c.data.test_labels},
                 {"train_subset", c.data.train_subset},
                 {"test_subset", c.data.test_subset},
                 {"subset_seed", c.data.subset_seed}};
    j["batch_size"] = c.batch_size;
    json attacks = json::array();
    for (const AttackSpec& a : c.attacks)
        attacks.push_back({{"kind", to_string(a.kind)},
                           {"epsilons", a.epsilons},
                           {"eta", a.eta},
                           {"steps", a.steps},
                           {"n_images", a.n_images}});
    j["attacks"] = attacks;
    j["checkpoint_every"] = c.checkpoint_every;
    j["stream_batch"] = c.stream_batch;
    if (include_outdir) j["outdir"] = c.outdir;
    return j;
}

std::string run_id(const ExperimentConfig& cfg) {
    std::string canon = config_to_json(cfg, /*include_outdir=*/false).dump();
    return sha256_hex(reinterpret_cast<const uint8_t*>(canon.data()), canon.size()).substr(0, 12);
}

std::string run_dir_for(const ExperimentConfig& cfg) { return cfg.outdir + "/" + run_id(cfg); }

// ------------------------------------------------------------- presets

NetworkConfig build_network_config(const ExperimentConfig& cfg, uint64_t seed) {
    NetworkConfig nc;
    nc.seed = seed;
    nc.class_count = 10;

    auto act_or = [&](Activation dflt) {
        return cfg.activation.empty() ? dflt : activation_from_string(cfg.activation);
    };
    int64_t w = cfg.hidden_width;

    if (cfg.preset == "shallow2000_bn") {
        Activation a = act_or(Activation::sigmoid);
        int64_t width = w ? w : 2000;
        nc.layers = {LayerSpec::dense_layer(width), LayerSpec::batchnorm_layer(),
                     LayerSpec::activation_layer(a)};
        nc.input_shape = {28, 28};
    } else if (cfg.preset == "shallow2000") {
        int64_t width = w ? w : 2000;
        nc.layers = {LayerSpec::dense_layer(width, act_or(Activation::sigmoid))};
        nc.input_shape = {28, 28};
    } else if (cfg.preset == "mlp3x1000") {
        Activation a = act_or(Activation::relu);
        int64_t width = w ? w : 1000;
        nc.layers = {LayerSpec::dense_layer(width, a), LayerSpec::dense_layer(width, a),
                     LayerSpec::dense_layer(width, a)};
        nc.input_shape = {28, 28};
    } else if (cfg.preset == "cnn_16_32_fc1000") {
        Activation a = act_or(Activation::relu);
        int64_t width = w ? w : 1000;
        nc.layers = {LayerSpec::conv_layer(16, 3, 3, a), LayerSpec::maxpool_layer(),
                     LayerSpec::conv_layer(32, 3, 3, a), LayerSpec::maxpool_layer(),
                     LayerSpec::dense_layer(width, a)};
        nc.input_shape = {1, 28, 28};
    } else if (cfg.preset == "custom") {
        if (cfg.custom_layers.empty()) throw Error("config: custom preset needs custom_layers");
        nc.layers = cfg.custom_layers;
        nc.input_shape = cfg.input_shape;
    } else {
        throw Error("config: unknown preset '" + cfg.preset + "'");
    }

    if (cfg.whitening_layer > 0) {
        // whitening extends hidden block l: insert before the (l+1)-th block start
        int blocks = 0;
        size_t insert_at = nc.layers.size();
        int target = cfg.whitening_layer;
        int seen = 0;
        for (size_t i = 0; i < nc.layers.size(); ++i) {
            if (nc.layers[i].kind == LayerKind::dense || nc.layers[i].kind == LayerKind::conv2d) {
                ++seen;
                if (seen == target + 1) { insert_at = i; break; }
            }
        }
        blocks = 0;
        for (const LayerSpec& s : nc.layers)
            if (s.kind == LayerKind::dense || s.kind == LayerKind::conv2d) ++blocks;
        if (target < 1 || target > blocks)
            throw Error("config: whitening_layer " + std::to_string(target) + " outside 1.." +
                        std::to_string(blocks));
        nc.layers.insert(nc.layers.begin() + static_cast<int64_t>(insert_at),
                         LayerSpec::whitening_layer());
    }
    return nc;
}

int64_t resolve_batch_size(const ExperimentConfig& cfg) {
    if (cfg.batch_size > 0) return cfg.batch_size;
    Network probe(build_network_config(cfg, 0));
    return min_spectral_batch(probe.widest_hidden());
}

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.data.synthetic) {
        d.train = make_synthetic_digits(cfg.data.synthetic_train, Rng::mix(cfg.data.synthetic_seed, 1));
        d.test = make_synthetic_digits(cfg.data.synthetic_test, Rng::mix(cfg.data.synthetic_seed, 2));
        d.train.lineage = "synthetic/train";
        d.test.lineage = "synthetic/test";
    } else {
        if (cfg.data.train_images.empty() || cfg.data.test_images.empty())
            throw Error("config: data paths missing (or set data.synthetic)");
        d.train = load_idx(cfg.data.train_images, cfg.data.train_labels);
        d.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
    }
    if (cfg.data.train_subset > 0 && cfg.data.train_subset < d.train.count)
        d.train = subset(d.train, cfg.data.train_subset, cfg.data.subset_seed);
    if (cfg.data.test_subset > 0 && cfg.data.test_subset < d.test.count)
        d.test = subset(d.test, cfg.data.test_subset, Rng::mix(cfg.data.subset_seed, 1));
    return d;
}

// --------------------------------------------------------------- train

namespace {

std::string epoch_tag(int64_t e) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "e%03lld", static_cast<long long>(e));
    return buf;
}

json spectral_cfg_active(const ExperimentConfig& cfg) {
    json s;
    s["active"] = cfg.regularizer == "spectral";
    return s;
}

void collect_output_hashes(const std::string& run_dir, json& manifest) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), run_dir).string();
        if (rel == "manifest.json") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    json outputs;
    for (const std::string& rel : files) {
        std::ifstream f(run_dir + "/" + rel, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        std::string bytes = ss.str();
        outputs[rel] = sha256_hex(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
    }
    manifest["outputs"] = outputs;
}

void write_manifest(const std::string& run_dir, const json& manifest) {
    std::ofstream f(run_dir + "/manifest.json");
    if (!f) throw Error("train: cannot write manifest in " + run_dir);
    f << manifest.dump(2) << "\n";
}

}  // namespace

json train(const ExperimentConfig& cfg) {
    if (cfg.regularizer == "spectral") {
        cfg.spectral.validate();
        if (cfg.spectral.regularized_layers.empty())
            throw Error("config: spectral regularizer needs spectral.layers");
        double b = cfg.spectral.beta;
        if (b != 1.0 && b != 2.0 && b != 5.0)
            std::fprintf(stderr, "warning: beta %g is outside the swept grid {1,2,5}\n", b);
    }
    if (cfg.regularizer == "jacobian") cfg.jacobian.validate();

    std::string dir = run_dir_for(cfg);
    fs::remove_all(dir);
    fs::create_directories(dir + "/checkpoints");
    fs::create_directories(dir + "/spectra");
    fs::create_directories(dir + "/plots");
    fs::create_directories(dir + "/maps");

    LoadedData data = load_experiment_data(cfg);
    int64_t batch_size = resolve_batch_size(cfg);
    bool spectral_on = cfg.regularizer == "spectral";
    bool jacobian_on = cfg.regularizer == "jacobian";

    json manifest;
    manifest["schema_version"] = 1;
    manifest["run_id"] = run_id(cfg);
    manifest["config"] = config_to_json(cfg, /*include_outdir=*/false);
    manifest["dataset"] = {{"train_fingerprint", data.train.fingerprint},
                           {"test_fingerprint", data.test.fingerprint},
                           {"train_count", data.train.count},
                           {"test_count", data.test.count},
                           {"train_lineage", data.train.lineage},
                           {"test_lineage", data.test.lineage}};
    manifest["batch_size"] = batch_size;
    manifest["regularizer"] = spectral_cfg_active(cfg);

    json seeds_json = json::array();
    for (uint64_t seed : cfg.seeds) {
        Network net(build_network_config(cfg, seed));
        Adam adam(net.params(), cfg.optimizer);

        BatchPlan plan;
        plan.batch_size = batch_size;
        plan.drop_last = true;
        if (spectral_on) {
            int64_t widest = 0;
            for (int l : cfg.spectral.regularized_layers)
                widest = std::max(widest, net.hidden_width(l));
            plan.spectral_widest_layer = widest;
        }

        json seed_json;
        seed_json["seed"] = seed;
        seed_json["status"] = "ok";
        json epochs_json = json::array();
        std::string stag = "seed" + std::to_string(seed);

        bool diverged = false;
        for (int64_t epoch = 1; epoch <= cfg.epochs && !diverged; ++epoch) {
            EigenCache cache;
            if (spectral_on) {
                cache = refresh_eigencache(net, data.train, cfg.spectral, epoch, batch_size);
                std::ofstream sf(dir + "/spectra/" + stag + "_" + epoch_tag(epoch) + ".csv");
                bool header = true;
                for (size_t k = 0; k < cache.layers.size(); ++k) {
                    TargetSequence target =
                        target_sequence(cache.eigvals[k], cfg.spectral.tau, cfg.spectral.alpha_for(k));
                    write_spectrum_csv(sf, cache.layers[k], cache.eigvals[k], &target, header);
                    header = false;
                }
            }

            double sum_loss = 0, sum_ce = 0, sum_pen = 0, sum_acc = 0;
            int64_t nb = 0, batch_no = 0;
            for (const auto& idx : batches(data.train, plan, Rng::mix(seed, static_cast<uint64_t>(epoch)))) {
                ++batch_no;
                Tensor batch = data.train.image_batch(idx);
                std::vector<int> labels = data.train.label_batch(idx);
                net.zero_grads();
                Tape tape;
                double loss_val, ce_val, pen_val = 0;
                Tensor logits;
                if (spectral_on) {
                    LossBreakdown lb =
                        regularized_loss(tape, net, batch, labels, cache, cfg.spectral, epoch);
                    loss_val = lb.total.item();
                    ce_val = lb.cross_entropy;
                    for (double p : lb.penalties) pen_val += p;
                    logits = lb.record.logits;
                    if (std::isfinite(loss_val)) tape.backward(lb.total);
                } else {
                    ActivationRecord rec = net.forward(tape, batch, Mode::train);
                    Tensor ce = cross_entropy_loss(tape, rec.logits, labels);
                    ce_val = ce.item();
                    loss_val = ce_val;
                    logits = rec.logits;
                    if (std::isfinite(loss_val)) tape.backward(ce);
                }
                if (jacobian_on && std::isfinite(loss_val)) {
                    pen_val = jacobian_penalty(make_sum_ce_loss(net, labels, Mode::train), batch,
                                               net.params(), cfg.jacobian);
                    loss_val += pen_val;
                }
                if (!std::isfinite(loss_val)) {
                    seed_json["status"] = "diverged";
                    seed_json["failed_epoch"] = epoch;
                    seed_json["failed_batch"] = batch_no;
                    diverged = true;
                    break;
                }
                adam.step();
                sum_loss += loss_val;
                sum_ce += ce_val;
                sum_pen += pen_val;
                sum_acc += accuracy(logits, labels);
                ++nb;
            }
            if (diverged) break;
            if (nb == 0) throw Error("train: no full batches; dataset smaller than batch size");
            epochs_json.push_back({{"epoch", epoch},
                                   {"loss", sum_loss / static_cast<double>(nb)},
                                   {"cross_entropy", sum_ce / static_cast<double>(nb)},
                                   {"penalty", sum_pen / static_cast<double>(nb)},
                                   {"train_accuracy", sum_acc / static_cast<double>(nb)}});
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
                net.save_checkpoint(dir + "/checkpoints/" + stag + "_" + epoch_tag(epoch) + ".bin");
        }

        seed_json["epochs"] = epochs_json;
        if (!diverged) {
            std::string final_ck = "checkpoints/" + stag + "_final.bin";
            net.save_checkpoint(dir + "/" + final_ck);
            seed_json["final_checkpoint"] = final_ck;

            json spectra_json = json::array();
            std::ofstream sf(dir + "/spectra/" + stag + "_final.csv");
            bool header = true;
            for (int l = 1; l <= net.depth(); ++l) {
                SpectrumReport rep = full_spectrum(net, data.train, l, cfg.stream_batch);
                write_spectrum_report_csv(sf, rep, header);
                header = false;
                spectra_json.push_back({{"layer", l},
                                        {"alpha_hat", rep.fit.alpha_hat},
                                        {"fit_residual", rep.fit.residual},
                                        {"fit_n_min", rep.fit.n_min},
                                        {"fit_n_max", rep.fit.n_max},
                                        {"effective_dim", rep.effective_dim}});
            }
            seed_json["final_spectra"] = spectra_json;
        }
        seeds_json.push_back(seed_json);
    }
    manifest["seeds"] = seeds_json;
    collect_output_hashes(dir, manifest);
    write_manifest(dir, manifest);
    return manifest;
}

// ------------------------------------------------------------ evaluate

json evaluate(const std::string& run_dir) {
    std::ifstream mf(run_dir + "/manifest.json");
    if (!mf) throw Error("evaluate: no manifest.json in " + run_dir);
    json manifest = json::parse(mf);
    ExperimentConfig cfg = config_from_json(manifest.at("config"));

    LoadedData data = load_experiment_data(cfg);
    if (data.test.fingerprint != manifest.at("dataset").at("test_fingerprint").get<std::string>())
        throw Error("evaluate: test set fingerprint changed since training");

    std::ofstream rf(run_dir + "/robustness.csv");
    rf << "model_id,attack,epsilon,seed,accuracy,n_images\n";
    char buf[64];

    json rob;
    json clean = json::array();
    std::vector<json> per_attack(cfg.attacks.size());
    for (size_t a = 0; a < cfg.attacks.size(); ++a) {
        per_attack[a]["kind"] = to_string(cfg.attacks[a].kind);
        per_attack[a]["points"] = json::array();
        for (double e : cfg.attacks[a].epsilons) {
            json pt;
            pt["epsilon"] = e;
            pt["per_seed"] = json::array();
            per_attack[a]["points"].push_back(pt);
        }
    }

    for (const json& seed_json : manifest.at("seeds")) {
        if (seed_json.at("status") != "ok") continue;
        uint64_t seed = seed_json.at("seed").get<uint64_t>();
        Network net(build_network_config(cfg, seed));
        net.load_checkpoint(run_dir + "/" + seed_json.at("final_checkpoint").get<std::string>());
        std::string model_id = manifest.at("run_id").get<std::string>() + "/seed" + std::to_string(seed);

        for (size_t a = 0; a < cfg.attacks.size(); ++a) {
            const AttackSpec& spec = cfg.attacks[a];
            AttackConfig ac;
            ac.kind = spec.kind;
            ac.epsilons = spec.epsilons;
            ac.eta = spec.eta;
            ac.steps = spec.steps;
            ac.n_images = spec.n_images;
            RobustnessCurve curve = robustness_curve(net, data.test, ac, model_id, seed);
            if (a == 0)
                clean.push_back({{"seed", seed}, {"accuracy", curve.clean_accuracy}});
            for (size_t p = 0; p < curve.points.size(); ++p) {
                const RobustnessPoint& pt = curve.points[p];
                std::snprintf(buf, sizeof(buf), "%.17g", pt.accuracy);
                rf << model_id << "," << to_string(spec.kind) << "," << pt.epsilon << "," << seed
                   << "," << buf << "," << pt.n_images << "\n";
                per_attack[a]["points"][p]["per_seed"].push_back(pt.accuracy);
            }
        }
    }

    for (size_t a = 0; a < cfg.attacks.size(); ++a) {
        for (json& pt : per_attack[a]["points"]) {
            const auto& xs = pt.at("per_seed");
            double mean = 0;
            for (double x : xs) mean += x;
            mean /= xs.empty() ? 1.0 : static_cast<double>(xs.size());
            double var = 0;
            for (double x : xs) var += (x - mean) * (x - mean);
            double sd = xs.size() > 1 ? std::sqrt(var / (static_cast<double>(xs.size()) - 1)) : 0.0;
            pt["mean"] = mean;
            pt["std"] = sd;
        }
    }
    rob["clean"] = clean;
    rob["attacks"] = per_attack;
    manifest["robustness"] = rob;
    collect_output_hashes(run_dir, manifest);
    write_manifest(run_dir, manifest);
    return manifest;
}

// ------------------------------------------------------- ablation arms

json ablate_whitening(const ExperimentConfig& base) {
    if (base.preset != "mlp3x1000" && base.preset != "cnn_16_32_fc1000")
        throw Error("ablate-whitening: needs the mlp3x1000 or cnn_16_32_fc1000 preset");
    Network probe(build_network_config(base, 0));
    int last = probe.depth();

    auto arm = [&](const std::string& tag, bool whiten, bool spec_last) {
        ExperimentConfig c = base;
        c.name = base.name.empty() ? tag : base.name + "-" + tag;
        c.whitening_layer = whiten ? 2 : 0;
        if (spec_last) {
            c.regularizer = "spectral";
            c.spectral.regularized_layers = {last};
            if (c.spectral.alpha_per_layer.empty()) c.spectral.alpha_per_layer = {1.0};
        } else {
            c.regularizer = "none";
            c.spectral.regularized_layers.clear();
        }
        return c;
    };

    struct Arm { std::string key; ExperimentConfig cfg; };
    std::vector<Arm> arms = {{"vanilla", arm("vanilla", false, false)},
                             {"whitened", arm("whitened", true, false)},
                             {"whitened_speclast", arm("whitened-speclast", true, true)},
                             {"speclast", arm("speclast", false, true)}};

    json index;
    index["base_name"] = base.name;
    json arms_json;
    for (Arm& a : arms) {
        train(a.cfg);
        evaluate(run_dir_for(a.cfg));
        arms_json[a.key] = {{"run_id", run_id(a.cfg)}, {"dir", run_dir_for(a.cfg)}};
    }
    index["arms"] = arms_json;
    fs::create_directories(base.outdir);
    std::ofstream f(base.outdir + "/ablation_" + run_id(base) + ".json");
    f << index.dump(2) << "\n";
    return index;
}

}  // namespace specreg
