// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Trains the desk-scale models it judges, so expect ~20-40 minutes
// on one core.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "specreg/analysis.hpp"
#include "specreg/attacks.hpp"
#include "specreg/experiment.hpp"
#include "specreg/linalg.hpp"
#include "specreg/rng.hpp"
#include "specreg/spectral.hpp"
#include "specreg/synthdigits.hpp"

using namespace specreg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report_line(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string workdir() {
    static std::string dir = [] {
        std::string d = (fs::temp_directory_path() / "specreg_acceptance").string();
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// the MNIST stand-in at the standard counts, written once as IDX files
void ensure_data() {
    std::string d = workdir() + "/data";
    if (fs::exists(d + "/train-images-idx3-ubyte")) return;
    fs::create_directories(d);
    write_synthetic_idx(60000, Rng::mix(0, 1), d + "/train-images-idx3-ubyte",
                        d + "/train-labels-idx1-ubyte");
    write_synthetic_idx(10000, Rng::mix(0, 2), d + "/t10k-images-idx3-ubyte",
                        d + "/t10k-labels-idx1-ubyte");
}

ExperimentConfig base_config() {
    ensure_data();
    ExperimentConfig cfg;
    cfg.data.train_images = workdir() + "/data/train-images-idx3-ubyte";
    cfg.data.train_labels = workdir() + "/data/train-labels-idx1-ubyte";
    cfg.data.test_images = workdir() + "/data/t10k-images-idx3-ubyte";
    cfg.data.test_labels = workdir() + "/data/t10k-labels-idx1-ubyte";
    cfg.data.train_subset = 10000;
    cfg.data.test_subset = 2000;
    cfg.seeds = {0, 1, 2};
    cfg.outdir = workdir() + "/runs";
    cfg.checkpoint_every = 0;
    return cfg;
}

std::vector<double> eps_grid() { return {0.05, 0.1, 0.15, 0.2, 0.25, 0.3}; }

// shared desk-scale shallow runs for criteria 1 and 2
ExperimentConfig shallow_config(bool spectral) {
    ExperimentConfig cfg = base_config();
    cfg.name = spectral ? "shallow-specreg" : "shallow-vanilla";
    cfg.preset = "shallow2000_bn";
    cfg.hidden_width = 256;
    cfg.batch_size = 384;
    cfg.epochs = 20;
    if (spectral) {
        cfg.regularizer = "spectral";
        cfg.spectral.regularized_layers = {1};
        cfg.spectral.alpha_per_layer = {1.0};
        cfg.spectral.beta = 2.0;
        cfg.spectral.tau = 10;
    }
    cfg.attacks = {{AttackKind::fgsm, eps_grid(), 0.01, 40, 1000},
                   {AttackKind::pgd, eps_grid(), 0.01, 40, 400}};
    return cfg;
}

struct ShallowRuns {
    json spec, van;
    std::string spec_dir, van_dir;
    double max_seed_seconds = 0;
};

ShallowRuns& shallow_runs() {
    static ShallowRuns runs = [] {
        ShallowRuns r;
        ExperimentConfig sc = shallow_config(true);
        ExperimentConfig vc = shallow_config(false);
        double t0 = now_seconds();
        r.spec = train(sc);
        double t1 = now_seconds();
        r.van = train(vc);
        r.max_seed_seconds = (t1 - t0) / 3.0;  // three seeds per run
        r.spec_dir = run_dir_for(sc);
        r.van_dir = run_dir_for(vc);
        r.spec = evaluate(r.spec_dir);
        r.van = evaluate(r.van_dir);
        return r;
    }();
    return runs;
}

std::vector<double> layer_eigenvalues_from_csv(const std::string& path, int layer) {
    std::ifstream f(path);
    std::vector<double> out;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        size_t c1 = line.find(',');
        if (std::stoi(line.substr(0, c1)) != layer) continue;
        size_t c2 = line.find(',', c1 + 1);
        size_t c3 = line.find(',', c2 + 1);
        out.push_back(std::stod(line.substr(c2 + 1, c3 - c2 - 1)));
    }
    return out;
}

// per-seed mean accuracy over the epsilon grid for one attack kind
std::vector<double> grid_means(const json& manifest, const std::string& kind) {
    for (const json& a : manifest.at("robustness").at("attacks")) {
        if (a.at("kind").get<std::string>() != kind) continue;
        size_t nseeds = a.at("points")[0].at("per_seed").size();
        std::vector<double> out(nseeds, 0.0);
        for (const json& pt : a.at("points"))
            for (size_t s = 0; s < nseeds; ++s) out[s] += pt.at("per_seed")[s].get<double>();
        for (double& v : out) v /= static_cast<double>(a.at("points").size());
        return out;
    }
    throw Error("no attack " + kind + " in manifest");
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return v.size() > 1 ? std::sqrt(s / (static_cast<double>(v.size()) - 1)) : 0.0;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ------------------------------------------------------------ criterion 1

void criterion1_spectral_shaping() {
    ShallowRuns& r = shallow_runs();
    bool pass = true;
    std::ostringstream detail;
    for (int seed = 0; seed < 3; ++seed) {
        auto spec_eigs = layer_eigenvalues_from_csv(
            r.spec_dir + "/spectra/seed" + std::to_string(seed) + "_final.csv", 1);
        auto van_eigs = layer_eigenvalues_from_csv(
            r.van_dir + "/spectra/seed" + std::to_string(seed) + "_final.csv", 1);
        double a_spec = powerlaw_exponent(spec_eigs, 10, 128).alpha_hat;
        double a_van = powerlaw_exponent(van_eigs, 10, 128).alpha_hat;
        bool in_band = a_spec >= 0.8 && a_spec <= 1.2;
        bool van_further = std::fabs(a_van - 1.0) > std::fabs(a_spec - 1.0);
        pass = pass && in_band && van_further;
        detail << fmt("seed%d specreg %.3f vanilla %.3f; ", seed, a_spec, a_van);
    }
    bool time_ok = r.max_seed_seconds <= 900.0;
    pass = pass && time_ok;
    detail << fmt("train %.0fs/seed (limit 900)", r.max_seed_seconds);
    report_line(1, "spectral shaping", pass, detail.str());
}

// ------------------------------------------------------------ criterion 2

void criterion2_robustness_ordering() {
    ShallowRuns& r = shallow_runs();
    auto spec_f = grid_means(r.spec, "fgsm");
    auto van_f = grid_means(r.van, "fgsm");
    auto spec_p = grid_means(r.spec, "pgd");
    auto van_p = grid_means(r.van, "pgd");
    double fgsm_gap = mean(spec_f) - mean(van_f);
    double pgd_gap = mean(spec_p) - mean(van_p);
    bool pass = fgsm_gap >= 0.05 && pgd_gap > 0.0;
    report_line(2, "robustness ordering", pass,
                fmt("fgsm specreg %.3f vs vanilla %.3f (gap %.3f, need >= 0.05); "
                    "pgd specreg %.3f vs vanilla %.3f (gap %.3f, need > 0)",
                    mean(spec_f), mean(van_f), fgsm_gap, mean(spec_p), mean(van_p), pgd_gap));
}

// ------------------------------------------------------------ criterion 3

void criterion3_whitening_ablation() {
    ExperimentConfig cfg = base_config();
    cfg.name = "ablate";
    cfg.preset = "mlp3x1000";
    cfg.hidden_width = 128;
    cfg.batch_size = 192;
    cfg.epochs = 12;
    cfg.spectral.beta = 2.0;
    cfg.spectral.tau = 10;
    cfg.spectral.alpha_per_layer = {1.0};
    cfg.attacks = {{AttackKind::fgsm, eps_grid(), 0.01, 40, 1000}};
    json idx = ablate_whitening(cfg);

    auto manifest_of = [&](const char* arm) {
        std::string dir = idx.at("arms").at(arm).at("dir").get<std::string>();
        std::ifstream f(dir + "/manifest.json");
        return std::make_pair(dir, json::parse(f));
    };
    auto [van_dir, van] = manifest_of("vanilla");
    auto [wh_dir, wh] = manifest_of("whitened");
    auto [ws_dir, ws] = manifest_of("whitened_speclast");

    // flatness of the whitened layer's batch spectrum (train-mode statistics)
    ExperimentConfig wh_cfg = config_from_json(wh.at("config"));
    wh_cfg.outdir = cfg.outdir;
    Network net(build_network_config(wh_cfg, 0));
    net.load_checkpoint(wh_dir + "/" + wh.at("seeds")[0].at("final_checkpoint").get<std::string>());
    LoadedData data = load_experiment_data(wh_cfg);
    std::vector<int64_t> bidx;
    for (int64_t i = 0; i < 192; ++i) bidx.push_back(i);
    Tape tape;
    FrozenParams guard(net.params());
    ActivationRecord rec = net.forward(tape, data.train.image_batch(bidx), Mode::train, false);
    CovarianceStats st = batch_covariance(tape, rec.hidden[1]);  // x^2, whitened
    EigenDecomposition eig = sym_eig(st.cov);
    double ratio = eig.eigenvalues[0] / eig.eigenvalues[49];

    auto van_f = grid_means(van, "fgsm");
    auto wh_f = grid_means(wh, "fgsm");
    auto ws_f = grid_means(ws, "fgsm");
    double seed_std = std::max(sample_std(wh_f), sample_std(ws_f));
    bool flat_ok = ratio <= 1.1;
    bool lower_ok = mean(wh_f) < mean(van_f);
    bool no_rescue = std::fabs(mean(ws_f) - mean(wh_f)) < seed_std;
    report_line(3, "whitening ablation", flat_ok && lower_ok && no_rescue,
                fmt("lambda1/lambda50 %.4f (need <= 1.1); fgsm whitened %.3f vs vanilla %.3f; "
                    "|specreg-rescue delta| %.4f vs seed std %.4f",
                    ratio, mean(wh_f), mean(van_f), std::fabs(mean(ws_f) - mean(wh_f)), seed_std));
}

// ------------------------------------------------------------ criterion 4

void criterion4_epoch_cache_fidelity() {
    // (a) same-covariance diagonalization reproduces sym_eig to 1e-10
    bool exact_ok = true;
    {
        Rng rng(5);
        std::vector<double> b(64 * 64);
        for (double& x : b) x = rng.uniform(-1, 1);
        std::vector<double> a(64 * 64);
        matmul_raw(b.data(), b.data(), a.data(), 64, 64, 64, true, false);
        EigenDecomposition eig = sym_eig(a, 64);
        Tape tape;
        Tensor lam = approx_eigenvalues(tape, Tensor::from_vec({64, 64}, a), eig.eigenvectors, 64);
        for (int k = 0; k < 64; ++k) {
            double t = eig.eigenvalues[static_cast<size_t>(k)];
            if (std::fabs(lam.value()[static_cast<size_t>(k)] - t) > 1e-10 * std::max(1.0, std::fabs(t)))
                exact_ok = false;
        }
    }

    // (b) one epoch of drift at lr 1e-4 on a 3x128 MLP, all layers cached
    ExperimentConfig cfg = base_config();
    cfg.preset = "mlp3x1000";
    cfg.hidden_width = 128;
    cfg.batch_size = 192;
    Network net(build_network_config(cfg, 0));
    LoadedData data = load_experiment_data(cfg);
    SpectralConfig sc;
    sc.regularized_layers = {1, 2, 3};
    sc.alpha_per_layer = {1.0};
    sc.beta = 2.0;
    sc.tau = 10;
    EigenCache cache = refresh_eigencache(net, data.train, sc, 1, 192);

    Adam adam(net.params(), OptimizerConfig{});
    BatchPlan plan;
    plan.batch_size = 192;
    plan.spectral_widest_layer = 128;
    for (const auto& idx : batches(data.train, plan, Rng::mix(0, 1))) {
        net.zero_grads();
        Tape tape;
        LossBreakdown lb = regularized_loss(tape, net, data.train.image_batch(idx),
                                            data.train.label_batch(idx), cache, sc, 1);
        tape.backward(lb.total);
        adam.step();
    }

    // exact recomputation of the drifted covariances in the cache's own mode
    EigenCache drifted = refresh_eigencache(net, data.train, sc, 2, 192);
    std::vector<double> layer_medians;
    for (size_t k = 0; k < 3; ++k) {
        int64_t w = 128;
        // rebuild the drifted Sigma from its decomposition: V diag(l) V^T
        std::vector<double> sigma(static_cast<size_t>(w * w), 0.0);
        for (int64_t i = 0; i < w; ++i)
            for (int64_t j = 0; j < w; ++j) {
                double s = 0;
                for (int64_t t = 0; t < w; ++t)
                    s += drifted.eigvecs[k][static_cast<size_t>(i * w + t)] *
                         drifted.eigvals[k][static_cast<size_t>(t)] *
                         drifted.eigvecs[k][static_cast<size_t>(j * w + t)];
                sigma[static_cast<size_t>(i * w + j)] = s;
            }
        Tape tape;
        Tensor lam = approx_eigenvalues(tape, Tensor::from_vec({w, w}, sigma), cache.eigvecs[k], w);
        std::vector<double> devs;
        for (int n = 1; n <= 100; ++n) {
            double exact = drifted.eigvals[k][static_cast<size_t>(n - 1)];
            double approx = lam.value()[static_cast<size_t>(n - 1)];
            devs.push_back(std::fabs(approx - exact) / exact);
        }
        std::sort(devs.begin(), devs.end());
        layer_medians.push_back(devs[devs.size() / 2]);
    }
    std::sort(layer_medians.begin(), layer_medians.end());
    double med = layer_medians[1];
    bool drift_ok = med <= 0.05;
    report_line(4, "epoch-cache fidelity", exact_ok && drift_ok,
                fmt("same-covariance agreement %s; median top-100 drift over layers %.4f (need <= 0.05)",
                    exact_ok ? "<= 1e-10" : "violated", med));
}

// ------------------------------------------------------------ criterion 5

void criterion5_numerical_kernels() {
    double t0 = now_seconds();
    bool pass = true;
    std::ostringstream detail;

    // sym_eig fuzz, 1000 matrices up to 64x64
    {
        double worst_recon = 0, worst_ortho = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            Rng szr(static_cast<uint64_t>(rep));
            int64_t n = 2 + static_cast<int64_t>(szr.uniform_int(63));
            Rng rng(40000 + static_cast<uint64_t>(rep));
            std::vector<double> a(static_cast<size_t>(n * n));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j <= i; ++j) {
                    double v = rng.uniform(-2, 2);
                    a[static_cast<size_t>(i * n + j)] = a[static_cast<size_t>(j * n + i)] = v;
                }
            EigenDecomposition e = sym_eig(a, n);
            double amax = 0;
            for (double v : a) amax = std::max(amax, std::fabs(v));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    double rec = 0, ort = 0;
                    for (int64_t k = 0; k < n; ++k) {
                        rec += e.vec(i, k) * e.eigenvalues[static_cast<size_t>(k)] * e.vec(j, k);
                        ort += e.vec(i, k) * e.vec(j, k);
                    }
                    worst_recon = std::max(worst_recon,
                                           std::fabs(rec - a[static_cast<size_t>(i * n + j)]) / amax);
                    worst_ortho = std::max(worst_ortho, std::fabs(ort - (i == j ? 1.0 : 0.0)));
                }
        }
        pass = pass && worst_recon <= 1e-8 && worst_ortho <= 1e-8;
        detail << fmt("eig recon %.2e ortho %.2e; ", worst_recon, worst_ortho);
    }

    // cholesky reconstruction
    {
        double worst = 0;
        for (int rep = 0; rep < 50; ++rep) {
            Rng rng(50000 + static_cast<uint64_t>(rep));
            int64_t n = 4 + static_cast<int64_t>(rng.uniform_int(28));
            std::vector<double> b(static_cast<size_t>(n * n));
            for (double& x : b) x = rng.uniform(-1, 1);
            std::vector<double> a(static_cast<size_t>(n * n));
            matmul_raw(b.data(), b.data(), a.data(), n, n, n, true, false);
            for (int64_t i = 0; i < n; ++i) a[static_cast<size_t>(i * n + i)] += 1.0;
            auto l = cholesky_factor(a, n);
            std::vector<double> rec(static_cast<size_t>(n * n));
            matmul_raw(l.data(), l.data(), rec.data(), n, n, n, false, true);
            double amax = 0;
            for (double v : a) amax = std::max(amax, std::fabs(v));
            worst = std::max(worst, max_abs_diff(rec, a) / amax);
        }
        pass = pass && worst <= 1e-10;
        detail << fmt("chol recon %.2e; ", worst);
    }

    // autodiff vs finite differences through a stack with every layer type,
    // spectral penalty included (anchor on the tape so FD sees the whole path)
    {
        DatasetHandle toy = make_synthetic_digits(64, 99);
        NetworkConfig nc;
        nc.input_shape = {784};
        nc.layers = {LayerSpec::dense_layer(12), LayerSpec::batchnorm_layer(),
                     LayerSpec::activation_layer(Activation::sigmoid),
                     LayerSpec::dense_layer(10, Activation::relu), LayerSpec::whitening_layer(),
                     LayerSpec::dense_layer(8, Activation::sigmoid)};
        Network net(nc);
        net.init_params(123);
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < 24; ++i) idx.push_back(i);
        Tensor batch = toy.image_batch(idx);
        auto labels = toy.label_batch(idx);
        SpectralConfig sc;
        sc.regularized_layers = {3};
        sc.alpha_per_layer = {1.0};
        sc.beta = 2.0;
        sc.tau = 2;
        sc.anchor_grad = true;
        EigenCache cache = refresh_eigencache(net, toy, sc, 1, 32);

        net.zero_grads();
        Tape tape;
        LossBreakdown lb = regularized_loss(tape, net, batch, labels, cache, sc, 1);
        tape.backward(lb.total);
        double worst = 0;
        Rng rng(777);
        for (int rep = 0; rep < 40; ++rep) {
            size_t pi = static_cast<size_t>(rng.uniform_int(net.params().size()));
            Tensor& p = net.params()[pi];
            size_t ci = static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(p.numel())));
            double ad = p.grad()[ci];
            auto w = p.value_mut();
            double keep = w[ci], h = 1e-5;
            w[ci] = keep + h;
            Tape tp;
            double fp = regularized_loss(tp, net, batch, labels, cache, sc, 1).total.item();
            w[ci] = keep - h;
            Tape tm;
            double fm = regularized_loss(tm, net, batch, labels, cache, sc, 1).total.item();
            w[ci] = keep;
            double fd = (fp - fm) / (2 * h);
            double rel = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-3});
            worst = std::max(worst, rel);
        }
        pass = pass && worst <= 1e-3;
        detail << fmt("autodiff-vs-fd %.2e; ", worst);
    }

    // eigenvalue sensitivity maps vs finite differences on a toy model
    {
        DatasetHandle toy = make_synthetic_digits(12, 101);
        NetworkConfig nc;
        nc.input_shape = {784};
        nc.layers = {LayerSpec::dense_layer(5, Activation::sigmoid)};
        Network net(nc);
        net.init_params(55);
        Tensor grads = eigenvalue_input_gradient(net, toy, 2);
        auto exact_lambda = [&](const Tensor& imgs) {
            Tape tape;
            FrozenParams fp(net.params());
            ActivationRecord rec = net.forward(tape, imgs, Mode::eval, false);
            CovarianceStats st = batch_covariance(tape, rec.hidden[0]);
            return sym_eig(st.cov).eigenvalues[1];
        };
        std::vector<int64_t> all;
        for (int64_t i = 0; i < 12; ++i) all.push_back(i);
        Tensor imgs = toy.image_batch(all);
        std::vector<double> base(imgs.value().begin(), imgs.value().end());
        double worst = 0;
        Rng rng(888);
        for (int rep = 0; rep < 20; ++rep) {
            size_t i = static_cast<size_t>(rng.uniform_int(base.size()));
            auto pp = base, pm = base;
            pp[i] += 1e-5;
            pm[i] -= 1e-5;
            double fd = (exact_lambda(Tensor::from_vec(imgs.shape(), pp)) -
                         exact_lambda(Tensor::from_vec(imgs.shape(), pm))) / 2e-5;
            double ad = grads.value()[i];
            double rel = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-6});
            worst = std::max(worst, rel);
        }
        pass = pass && worst <= 1e-3;
        detail << fmt("sensitivity-vs-fd %.2e; ", worst);
    }

    double elapsed = now_seconds() - t0;
    pass = pass && elapsed <= 300.0;
    detail << fmt("runtime %.0fs (limit 300)", elapsed);
    report_line(5, "numerical kernels", pass, detail.str());
}

// ------------------------------------------------------------ criterion 6

void criterion6_attack_oracles() {
    bool pass = true;
    std::ostringstream detail;

    auto linear_loss = [](std::vector<double> w) {
        return [w](Tape& t, const Tensor& s) {
            int64_t bsz = s.dim(0);
            std::vector<double> tiled(static_cast<size_t>(s.numel()));
            for (int64_t b = 0; b < bsz; ++b)
                for (size_t j = 0; j < w.size(); ++j) tiled[static_cast<size_t>(b) * w.size() + j] = w[j];
            return t.sum(t.mul_constvec(s, tiled));
        };
    };

    // hand-derivable logistic model: gradient c*w with c>0 -> eps*(+1,-1)
    {
        Tensor s = Tensor::from_vec({1, 2}, {0.5, 0.5});
        Tensor adv = fgsm(linear_loss({1.0, -2.0}), s, 0.1, 0.0, 1.0);
        bool ok = adv.value()[0] == 0.6 && adv.value()[1] == 0.4;
        pass = pass && ok;
        detail << (ok ? "fgsm closed form exact; " : "fgsm closed form WRONG; ");
    }

    // eps = 0 identity for both attacks
    {
        Tensor s = Tensor::from_vec({1, 3}, {0.2, 0.5, 0.8});
        Tensor a = fgsm(linear_loss({1, -1, 1}), s, 0.0, 0.0, 1.0);
        Tensor b = pgd(linear_loss({1, -1, 1}), s, 0.0, 0.01, 40, 0.0, 1.0);
        bool ok = true;
        for (size_t i = 0; i < 3; ++i)
            ok = ok && a.value()[i] == s.value()[i] && b.value()[i] == s.value()[i];
        pass = pass && ok;
        detail << (ok ? "eps=0 identity; " : "eps=0 NOT identity; ");
    }

    // 1000 fuzzed pgd runs never leave the L-inf ball
    {
        Rng rng(99);
        bool ok = true;
        for (int rep = 0; rep < 1000 && ok; ++rep) {
            int64_t d = 2 + static_cast<int64_t>(rng.uniform_int(6));
            std::vector<double> w(static_cast<size_t>(d));
            for (double& x : w) x = rng.uniform(-3, 3);
            std::vector<double> sv(static_cast<size_t>(d));
            for (double& x : sv) x = rng.uniform(0.1, 0.9);
            Tensor s = Tensor::from_vec({1, d}, sv);
            double eps = rng.uniform(0.0, 0.3);
            int steps = 1 + static_cast<int>(rng.uniform_int(40));
            double eta = rng.uniform(0.01, 1.0);
            Tensor adv = pgd(linear_loss(w), s, eps, eta, steps, -10, 10);
            for (int64_t i = 0; i < d; ++i)
                if (std::fabs(adv.value()[static_cast<size_t>(i)] - sv[static_cast<size_t>(i)]) > eps + 1e-12)
                    ok = false;
        }
        pass = pass && ok;
        detail << (ok ? "pgd ball respected over 1000 fuzz runs" : "pgd LEFT the ball");
    }
    report_line(6, "attack oracles", pass, detail.str());
}

// ------------------------------------------------------------ criterion 7

void criterion7_format_fidelity() {
    ensure_data();
    bool pass = true;
    std::ostringstream detail;

    // standard-file ingestion at the published counts
    {
        DatasetHandle train = load_idx(workdir() + "/data/train-images-idx3-ubyte",
                                       workdir() + "/data/train-labels-idx1-ubyte");
        DatasetHandle test = load_idx(workdir() + "/data/t10k-images-idx3-ubyte",
                                      workdir() + "/data/t10k-labels-idx1-ubyte");
        bool counts = train.count == 60000 && test.count == 10000 && train.rows == 28 && train.cols == 28;
        std::string ip = workdir() + "/rt-img", lp = workdir() + "/rt-lbl";
        save_idx(test, ip, lp);
        DatasetHandle back = load_idx(ip, lp);
        bool rt = back.images == test.images && back.labels == test.labels &&
                  back.fingerprint == test.fingerprint;
        pass = pass && counts && rt;
        detail << fmt("counts %s, round-trip %s; ", counts ? "60000/10000" : "WRONG",
                      rt ? "bit-exact" : "MISMATCH");
    }

    // identical configs reproduce bitwise-identical manifests and CSVs
    {
        auto micro = [&](const std::string& outdir) {
            ExperimentConfig cfg = base_config();
            cfg.name = "determinism-probe";
            cfg.preset = "custom";
            cfg.custom_layers = {LayerSpec::dense_layer(16, Activation::sigmoid)};
            cfg.input_shape = {784};
            cfg.regularizer = "spectral";
            cfg.spectral.regularized_layers = {1};
            cfg.spectral.alpha_per_layer = {1.0};
            cfg.spectral.beta = 2.0;
            cfg.spectral.tau = 2;
            cfg.batch_size = 24;
            cfg.epochs = 2;
            cfg.seeds = {0};
            cfg.data.train_subset = 400;
            cfg.data.test_subset = 100;
            cfg.attacks = {{AttackKind::fgsm, {0.0, 0.1}, 0.01, 40, 50}};
            cfg.outdir = outdir;
            train(cfg);
            evaluate(run_dir_for(cfg));
            return run_dir_for(cfg);
        };
        std::string da = micro(workdir() + "/det_a");
        std::string db = micro(workdir() + "/det_b");
        auto slurp = [](const std::string& p) {
            std::ifstream f(p, std::ios::binary);
            std::ostringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        bool ok = true;
        for (const char* rel : {"/manifest.json", "/robustness.csv", "/spectra/seed0_final.csv",
                                "/spectra/seed0_e001.csv", "/checkpoints/seed0_final.bin"}) {
            std::string a = slurp(da + rel), b = slurp(db + rel);
            if (a.empty() || a != b) ok = false;
        }
        pass = pass && ok;
        detail << (ok ? "manifests/CSVs/checkpoints bitwise identical" : "determinism VIOLATED");
    }
    report_line(7, "format fidelity", pass, detail.str());
}

template <typename F>
void guarded(int criterion, const char* name, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report_line(criterion, name, false, std::string("exception: ") + e.what());
    }
}

}  // namespace

int main() {
    std::printf("acceptance suite starting; work dir %s\n", workdir().c_str());
    guarded(5, "numerical kernels", criterion5_numerical_kernels);
    guarded(6, "attack oracles", criterion6_attack_oracles);
    guarded(7, "format fidelity", criterion7_format_fidelity);
    guarded(4, "epoch-cache fidelity", criterion4_epoch_cache_fidelity);
    guarded(1, "spectral shaping", criterion1_spectral_shaping);
    guarded(2, "robustness ordering", criterion2_robustness_ordering);
    guarded(3, "whitening ablation", criterion3_whitening_ablation);
    std::printf("%d criterion(s) failing\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
