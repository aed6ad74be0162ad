#include "specreg/spectral.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace specreg {

double SpectralConfig::alpha_for(size_t k) const {
    if (alpha_per_layer.empty()) return 1.0;
    if (alpha_per_layer.size() == 1) return alpha_per_layer[0];
    if (k >= alpha_per_layer.size()) throw Error("spectral: alpha_per_layer shorter than layer list");
    return alpha_per_layer[k];
}

void SpectralConfig::validate() const {
    if (tau < 1) throw Error("spectral: tau must be >= 1");
    if (beta < 0) throw Error("spectral: beta must be >= 0");
    for (double a : alpha_per_layer)
        if (a <= 0) throw Error("spectral: alpha must be > 0");
    for (int l : regularized_layers)
        if (l < 1) throw Error("spectral: layer indices are 1-based");
}

CovarianceStats batch_covariance(Tape& tape, const Tensor& activations) {
    if (activations.ndim() != 2) throw Error("batch_covariance: want (B,N) activations");
    int64_t bsz = activations.dim(0);
    if (bsz < 2) throw Error("batch_covariance: need batch size >= 2, got " + std::to_string(bsz));
    CovarianceStats st;
    st.mean = tape.mean_rows(activations);
    Tensor xc = tape.sub_rowvec(activations, st.mean);
    st.cov = tape.mul_scalar(tape.matmul(xc, xc, true, false), 1.0 / static_cast<double>(bsz));
    return st;
}

EigenCache refresh_eigencache(Network& net, const DatasetHandle& train, const SpectralConfig& cfg,
                              int64_t epoch, int64_t stream_batch) {
    cfg.validate();
    for (int l : cfg.regularized_layers)
        if (l > net.depth())
            throw Error("spectral: regularized layer " + std::to_string(l) + " exceeds depth " +
                        std::to_string(net.depth()));
    if (stream_batch < 2) throw Error("spectral: stream batch must be >= 2");

    EigenCache cache;
    cache.layers = cfg.regularized_layers;
    cache.epoch = epoch;
    cache.dataset_fingerprint = train.fingerprint;

    size_t nl = cfg.regularized_layers.size();
    std::vector<int64_t> widths(nl);
    for (size_t k = 0; k < nl; ++k) widths[k] = net.hidden_width(cfg.regularized_layers[k]);

    // fixed-order batches; a trailing remainder of one sample cannot form
    // batch statistics and is dropped
    std::vector<std::vector<int64_t>> chunks;
    for (int64_t start = 0; start < train.count; start += stream_batch) {
        int64_t end = std::min(train.count, start + stream_batch);
        if (end - start < 2) break;
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
        chunks.push_back(std::move(idx));
    }
    if (chunks.empty()) throw Error("spectral: training set too small for a statistics pass");

    // pass 1: per-layer activation means
    std::vector<std::vector<double>> mean(nl);
    for (size_t k = 0; k < nl; ++k) mean[k].assign(static_cast<size_t>(widths[k]), 0.0);
    int64_t seen = 0;
    for (const auto& idx : chunks) {
        Tape tape;
        Tensor batch = train.image_batch(idx);
        ActivationRecord rec = net.forward(tape, batch, Mode::train, /*update_stats=*/false);
        for (size_t k = 0; k < nl; ++k) {
            const Tensor& acts = rec.hidden[static_cast<size_t>(cfg.regularized_layers[k] - 1)];
            auto av = acts.value();
            int64_t w = widths[k];
            for (int64_t b = 0; b < acts.dim(0); ++b)
                for (int64_t j = 0; j < w; ++j) mean[k][static_cast<size_t>(j)] += av[static_cast<size_t>(b * w + j)];
        }
        seen += static_cast<int64_t>(idx.size());
    }
    for (size_t k = 0; k < nl; ++k)
        for (double& v : mean[k]) v /= static_cast<double>(seen);

    // pass 2: centered second moments
    std::vector<std::vector<double>> cov(nl);
    for (size_t k = 0; k < nl; ++k) cov[k].assign(static_cast<size_t>(widths[k] * widths[k]), 0.0);
    for (const auto& idx : chunks) {
        Tape tape;
        Tensor batch = train.image_batch(idx);
        ActivationRecord rec = net.forward(tape, batch, Mode::train, /*update_stats=*/false);
        for (size_t k = 0; k < nl; ++k) {
            const Tensor& acts = rec.hidden[static_cast<size_t>(cfg.regularized_layers[k] - 1)];
            int64_t bsz = acts.dim(0), w = widths[k];
            std::vector<double> xc(acts.value().begin(), acts.value().end());
            for (int64_t b = 0; b < bsz; ++b)
                for (int64_t j = 0; j < w; ++j) xc[static_cast<size_t>(b * w + j)] -= mean[k][static_cast<size_t>(j)];
            std::vector<double> gram(static_cast<size_t>(w * w));
            matmul_raw(xc.data(), xc.data(), gram.data(), w, bsz, w, true, false);
            for (int64_t j = 0; j < w * w; ++j) cov[k][static_cast<size_t>(j)] += gram[static_cast<size_t>(j)];
        }
    }

    for (size_t k = 0; k < nl; ++k) {
        for (double& v : cov[k]) v /= static_cast<double>(seen);
        EigenDecomposition eig = sym_eig(cov[k], widths[k]);
        cache.eigvecs.push_back(std::move(eig.eigenvectors));
        cache.eigvals.push_back(std::move(eig.eigenvalues));
    }
    return cache;
}

Tensor approx_eigenvalues(Tape& tape, const Tensor& sigma_hat, const std::vector<double>& v_cols,
                          int64_t n) {
    return tape.quad_diag(sigma_hat, v_cols, n);
}

TargetSequence target_sequence(const std::vector<double>& lambda_hat, int64_t tau, double alpha) {
    if (tau < 1 || tau > static_cast<int64_t>(lambda_hat.size()))
        throw Error("target_sequence: tau " + std::to_string(tau) + " outside spectrum of length " +
                    std::to_string(lambda_hat.size()));
    double anchor = lambda_hat[static_cast<size_t>(tau - 1)];
    if (anchor <= 0)
        throw Error("target_sequence: spectrum collapsed below cutoff, lambda_tau = " +
                    std::to_string(anchor));
    TargetSequence t;
    t.tau = tau;
    t.alpha = alpha;
    t.kappa = anchor * std::pow(static_cast<double>(tau), alpha);
    int64_t n = static_cast<int64_t>(lambda_hat.size());
    t.gamma.resize(static_cast<size_t>(n - tau + 1));
    for (int64_t i = tau; i <= n; ++i)
        t.gamma[static_cast<size_t>(i - tau)] = t.kappa * std::pow(static_cast<double>(i), -alpha);
    return t;
}

Tensor spectral_penalty(Tape& tape, const Tensor& lambda_hat, const TargetSequence& target,
                        double beta, int64_t layer_width) {
    int64_t n = lambda_hat.dim(0);
    if (static_cast<int64_t>(target.gamma.size()) != n - target.tau + 1)
        throw Error("spectral_penalty: target length mismatch");
    for (double g : target.gamma)
        if (g <= 0) throw Error("spectral_penalty: target values must be positive");
    std::vector<double> inv(target.gamma.size());
    for (size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / target.gamma[i];
    Tensor tail = tape.slice1d(lambda_hat, target.tau - 1, n);
    Tensor ratio = tape.mul_constvec(tail, inv);
    Tensor dev = tape.add_scalar(ratio, -1.0);
    Tensor terms = tape.add(tape.mul(dev, dev), tape.relu(dev));
    return tape.mul_scalar(tape.sum(terms), beta / static_cast<double>(layer_width));
}

Tensor spectral_penalty_anchored(Tape& tape, const Tensor& lambda_hat, int64_t tau, double alpha,
                                 double beta, int64_t layer_width) {
    int64_t n = lambda_hat.dim(0);
    if (tau < 1 || tau > n) throw Error("spectral_penalty: tau outside spectrum");
    double anchor = lambda_hat.value()[static_cast<size_t>(tau - 1)];
    if (anchor <= 0)
        throw Error("spectral_penalty: spectrum collapsed below cutoff, lambda_tau = " +
                    std::to_string(anchor));
    // ratio_n = lambda_n * (n/tau)^alpha / lambda_tau, anchor on the tape
    std::vector<double> w(static_cast<size_t>(n - tau + 1));
    for (int64_t i = tau; i <= n; ++i)
        w[static_cast<size_t>(i - tau)] = std::pow(static_cast<double>(i) / static_cast<double>(tau), alpha);
    Tensor tail = tape.slice1d(lambda_hat, tau - 1, n);
    Tensor scaled = tape.mul_constvec(tail, w);
    Tensor ratio = tape.div_scalar_tensor(scaled, tape.index1d(lambda_hat, tau - 1));
    Tensor dev = tape.add_scalar(ratio, -1.0);
    Tensor terms = tape.add(tape.mul(dev, dev), tape.relu(dev));
    return tape.mul_scalar(tape.sum(terms), beta / static_cast<double>(layer_width));
}

LossBreakdown regularized_loss(Tape& tape, Network& net, const Tensor& batch,
                               const std::vector<int>& labels, const EigenCache& cache,
                               const SpectralConfig& cfg, int64_t epoch) {
    cfg.validate();
    bool active = !cfg.regularized_layers.empty() && cfg.beta > 0;
    if (active) {
        if (cache.epoch != epoch)
            throw Error("regularized_loss: stale eigencache (cache epoch " + std::to_string(cache.epoch) +
                        ", current " + std::to_string(epoch) + ")");
        if (cache.layers != cfg.regularized_layers)
            throw Error("regularized_loss: eigencache layer set does not match config");
        int64_t widest = 0;
        for (int l : cfg.regularized_layers) widest = std::max(widest, net.hidden_width(l));
        int64_t need = min_spectral_batch(widest);
        if (batch.dim(0) < need)
            throw Error("regularized_loss: batch size " + std::to_string(batch.dim(0)) +
                        " below the 1.5x widest-regularized-layer minimum " + std::to_string(need));
    }

    LossBreakdown out;
    out.record = net.forward(tape, batch, Mode::train);
    Tensor total = cross_entropy_loss(tape, out.record.logits, labels);
    out.cross_entropy = total.item();
    if (active) {
        for (size_t k = 0; k < cfg.regularized_layers.size(); ++k) {
            int l = cfg.regularized_layers[k];
            const Tensor& acts = out.record.hidden[static_cast<size_t>(l - 1)];
            int64_t width = acts.dim(1);
            CovarianceStats st = batch_covariance(tape, acts);
            Tensor lam = approx_eigenvalues(tape, st.cov, cache.eigvecs[k], width);
            Tensor pen;
            if (cfg.anchor_grad) {
                pen = spectral_penalty_anchored(tape, lam, cfg.tau, cfg.alpha_for(k), cfg.beta, width);
            } else {
                std::vector<double> lam_val(lam.value().begin(), lam.value().end());
                TargetSequence target = target_sequence(lam_val, cfg.tau, cfg.alpha_for(k));
                pen = spectral_penalty(tape, lam, target, cfg.beta, width);
            }
            out.penalties.push_back(pen.item());
            total = tape.add(total, pen);
        }
    }
    out.total = total;
    return out;
}

void write_spectrum_csv(std::ostream& os, int layer, const std::vector<double>& eigenvalues,
                        const TargetSequence* target, bool header) {
    if (header) os << "layer,n,lambda,gamma,regularized_flag\n";
    char buf[64];
    for (size_t i = 0; i < eigenvalues.size(); ++i) {
        int64_t n = static_cast<int64_t>(i) + 1;
        std::snprintf(buf, sizeof(buf), "%.17g", eigenvalues[i]);
        os << layer << "," << n << "," << buf << ",";
        bool reg = target && n >= target->tau;
        if (reg) {
            std::snprintf(buf, sizeof(buf), "%.17g", target->gamma[static_cast<size_t>(n - target->tau)]);
            os << buf;
        }
        os << "," << (reg ? 1 : 0) << "\n";
    }
}

}  // namespace specreg
