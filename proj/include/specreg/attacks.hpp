#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "specreg/data.hpp"
#include "specreg/network.hpp"

namespace specreg {

enum class AttackKind { fgsm, pgd, white_noise };
const char* to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackConfig {
    AttackKind kind = AttackKind::fgsm;
    std::vector<double> epsilons;   // L-inf budgets, or noise std for white_noise
    double eta = 0.01;              // pgd step size
    int steps = 40;                 // pgd iterations
    double clip_lo = 0.0, clip_hi = 1.0;
    bool random_start = false;      // pgd delta init, off by default
    int64_t n_images = 0;           // 0 = whole dataset
    uint64_t noise_seed = 0;
    void validate() const;
};

/// Scalar sum-loss over a batch of inputs, as seen by the attacker.
using BatchLossFn = std::function<Tensor(Tape&, const Tensor& inputs)>;

/// White-box sum-CE against the network in eval mode, with parameters held
/// out of the gradient graph.
BatchLossFn make_attack_loss(Network& net, const std::vector<int>& labels);

// s + eps * sign(grad_s L), clipped; sign(0) = 0
Tensor fgsm(const BatchLossFn& loss, const Tensor& s, double eps, double clip_lo, double clip_hi);
Tensor fgsm(Network& net, const Tensor& s, const std::vector<int>& y, double eps,
            double clip_lo = 0.0, double clip_hi = 1.0);

// delta <- clamp_{|.|<=eps}(delta + eta * grad_delta L), `steps` times from
// delta = 0 (or a seeded uniform start); returns clip(s + delta)
Tensor pgd(const BatchLossFn& loss, const Tensor& s, double eps, double eta, int steps,
           double clip_lo, double clip_hi, bool random_start = false, uint64_t seed = 0);
Tensor pgd(Network& net, const Tensor& s, const std::vector<int>& y, double eps, double eta = 0.01,
           int steps = 40, double clip_lo = 0.0, double clip_hi = 1.0);

// s + N(0, sigma^2), clipped, deterministic per seed
Tensor white_noise(const Tensor& s, double sigma, double clip_lo, double clip_hi, uint64_t seed);

struct RobustnessPoint {
    double epsilon = 0.0;
    double accuracy = 0.0;
    int64_t n_images = 0;
};

struct RobustnessCurve {
    AttackKind kind = AttackKind::fgsm;
    std::string model_id;
    uint64_t seed = 0;              // model seed (noise streams derive from it)
    double clean_accuracy = 0.0;
    std::vector<RobustnessPoint> points;
};

/// Accuracy under attack per epsilon; attacks are generated against the
/// evaluated model itself. Deterministic given (model, seed, config).
RobustnessCurve robustness_curve(Network& net, const DatasetHandle& data, const AttackConfig& cfg,
                                 const std::string& model_id, uint64_t seed);

}  // namespace specreg
