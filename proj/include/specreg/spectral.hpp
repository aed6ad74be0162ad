#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specreg/data.hpp"
#include "specreg/linalg.hpp"
#include "specreg/network.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

/// Regularizer hyperparameters. regularized_layers holds 1-based hidden
/// activation indices (x^l).
struct SpectralConfig {
    std::vector<int> regularized_layers;
    std::vector<double> alpha_per_layer;  // one per regularized layer, or a single shared value
    double beta = 1.0;
    int64_t tau = 10;
    bool anchor_grad = false;  // let gradients flow through the kappa anchor

    double alpha_for(size_t k) const;
    void validate() const;
};

struct CovarianceStats {
    Tensor mean;  // (N)
    Tensor cov;   // (N,N), on tape
};

/// Batch mean and 1/B-normalized covariance, recorded on the tape so
/// gradients flow through their construction.
CovarianceStats batch_covariance(Tape& tape, const Tensor& activations);

/// Per-epoch eigenbasis of the full-training-set covariance of each
/// regularized layer. Eigenvectors are constants (no gradient attachment).
struct EigenCache {
    std::vector<int> layers;                       // mirror of regularized_layers
    std::vector<std::vector<double>> eigvecs;      // per layer, N x N row-major, columns descending
    std::vector<std::vector<double>> eigvals;      // epoch-start eigenvalues (diagnostics/CSV)
    int64_t epoch = -1;
    std::string dataset_fingerprint;
};

/// Streaming two-pass covariance over the full training set (deterministic
/// fixed order, batch statistics active, running stats untouched), then
/// sym_eig per regularized layer.
EigenCache refresh_eigencache(Network& net, const DatasetHandle& train, const SpectralConfig& cfg,
                              int64_t epoch, int64_t stream_batch);

/// lambda_hat = diag(V^T Sigma V); ordering follows the cached eigenvector
/// columns. Gradient w.r.t. Sigma is sum_n gbar_n v_n v_n^T.
Tensor approx_eigenvalues(Tape& tape, const Tensor& sigma_hat, const std::vector<double>& v_cols,
                          int64_t n);

/// gamma_n = kappa * n^-alpha for n = tau..N with kappa = lambda_tau * tau^alpha,
/// so gamma_tau equals the anchoring eigenvalue exactly. kappa is a plain
/// number (detached); the anchor_grad path rebuilds the ratio on the tape.
struct TargetSequence {
    double kappa = 0.0;
    int64_t tau = 0;
    double alpha = 1.0;
    std::vector<double> gamma;  // gamma[j] is the target for n = tau + j
};

TargetSequence target_sequence(const std::vector<double>& lambda_hat, int64_t tau, double alpha);

/// beta/N_l * sum_{n>=tau} ((lambda_n/gamma_n - 1)^2 + max(0, lambda_n/gamma_n - 1)).
Tensor spectral_penalty(Tape& tape, const Tensor& lambda_hat, const TargetSequence& target,
                        double beta, int64_t layer_width);

/// Same penalty with the kappa anchor left on the tape (config switch).
Tensor spectral_penalty_anchored(Tape& tape, const Tensor& lambda_hat, int64_t tau, double alpha,
                                 double beta, int64_t layer_width);

struct LossBreakdown {
    Tensor total;                      // scalar on tape
    double cross_entropy = 0.0;
    std::vector<double> penalties;     // per regularized layer
    ActivationRecord record;
};

/// Cross-entropy plus the spectral penalty of every regularized layer.
/// Rejects a stale cache and undersized batches (1.5x widest regularized
/// layer).
LossBreakdown regularized_loss(Tape& tape, Network& net, const Tensor& batch,
                               const std::vector<int>& labels, const EigenCache& cache,
                               const SpectralConfig& cfg, int64_t epoch);

/// Spectrum dump rows: layer,n,lambda,gamma,regularized_flag (gamma empty
/// where no target is defined).
void write_spectrum_csv(std::ostream& os, int layer, const std::vector<double>& eigenvalues,
                        const TargetSequence* target, bool header);

}  // namespace specreg
