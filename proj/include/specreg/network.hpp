#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specreg/tensor.hpp"

namespace specreg {

enum class LayerKind { dense, conv2d, maxpool2d, batchnorm, whitening, activation };
enum class Activation { none, sigmoid, relu };

const char* to_string(LayerKind k);
const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int64_t width = 0;                            // dense output width
    int64_t out_channels = 0, kernel_h = 0, kernel_w = 0;  // conv2d
    Activation activation = Activation::none;     // fused after dense/conv; the function for kind=activation

    static LayerSpec dense_layer(int64_t width, Activation act = Activation::none);
    static LayerSpec conv_layer(int64_t out_ch, int64_t kh, int64_t kw, Activation act = Activation::none);
    static LayerSpec maxpool_layer();
    static LayerSpec batchnorm_layer();
    static LayerSpec whitening_layer();
    static LayerSpec activation_layer(Activation act);
};

/// Architecture description: the hidden stack producing activations
/// x^1..x^D. A dense readout to class_count logits is appended implicitly.
/// Hidden activation l ends where the next dense/conv block begins, so
/// attached batchnorm/pool/whitening/activation layers belong to the block
/// they follow.
struct NetworkConfig {
    std::vector<LayerSpec> layers;
    Shape input_shape = {28, 28};
    int class_count = 10;
    uint64_t seed = 0;
};

enum class Mode { train, eval };

struct BatchNormState {
    Tensor gamma, beta;              // trainable scale/shift
    std::vector<double> run_mean, run_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

struct WhiteningState {
    std::vector<double> run_mean, run_chol;   // eval-time statistics (EMA)
    double momentum = 0.1;
    double jitter_scale = 1e-6;               // diagonal jitter: scale * trace(Sigma)/N
    bool initialized = false;
};

/// Per-unit standardization with learned scale/shift; running stats updated
/// with momentum in train mode (torch conventions: biased variance for
/// normalization, unbiased for the running estimate).
Tensor batchnorm_forward(Tape& tape, const Tensor& x, BatchNormState& st, Mode mode,
                         bool update_stats);

/// R^{-1}(x - mu) per mini-batch with R the Cholesky factor of the jittered
/// batch covariance; gradients flow through mean, covariance and factor.
/// Eval mode applies the frozen running mean/factor.
Tensor whiten_forward(Tape& tape, const Tensor& x, WhiteningState& st, Mode mode,
                      bool update_stats);

Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                          Reduction red = Reduction::mean);

/// Scoped removal of tensors from the gradient graph: attack passes,
/// statistics sweeps and value-only probes must not leak parameter
/// gradients.
class FrozenParams {
public:
    explicit FrozenParams(std::span<Tensor> params) {
        saved_.reserve(params.size());
        for (Tensor& p : params) {
            saved_.emplace_back(p, p.requires_grad());
            p.set_requires_grad(false);
        }
    }
    ~FrozenParams() {
        for (auto& [t, rg] : saved_) t.set_requires_grad(rg);
    }
    FrozenParams(const FrozenParams&) = delete;
    FrozenParams& operator=(const FrozenParams&) = delete;

private:
    std::vector<std::pair<Tensor, bool>> saved_;
};

struct ActivationRecord {
    std::vector<Tensor> hidden;   // x^1..x^D, flattened to (B, N_l)
    Tensor logits;                // (B, class_count)
};

class Network {
public:
    explicit Network(NetworkConfig cfg);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;

    /// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases; bitwise
    /// deterministic for a given seed.
    void init_params(uint64_t seed);

    ActivationRecord forward(Tape& tape, const Tensor& batch, Mode mode);
    ActivationRecord forward(Tape& tape, const Tensor& batch, Mode mode, bool update_stats);

    const NetworkConfig& config() const { return cfg_; }
    int depth() const { return depth_; }                       // D
    int64_t hidden_width(int l) const;                         // width of x^l, l in 1..D
    int64_t widest_hidden() const;
    int64_t input_size() const { return input_flat_; }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    void zero_grads();

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    struct Layer {
        LayerSpec spec;
        // resolved geometry
        int64_t in_flat = 0, out_flat = 0;
        int64_t in_c = 0, in_h = 0, in_w = 0;
        int64_t out_c = 0, out_h = 0, out_w = 0;
        bool input_is_2d = false;   // consumes (B,C,H,W)
        bool ends_block = false;
        int block = 0;              // l for layers ending block l
        // parameters / state
        Tensor weight, bias;
        BatchNormState bn;
        WhiteningState wh;
    };

    NetworkConfig cfg_;
    std::vector<Layer> layers_;
    Tensor readout_w_, readout_b_;
    int depth_ = 0;
    int64_t input_flat_ = 0;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;

    void resolve_shapes();
    void collect_params();
    friend struct CheckpointCodec;
};

}  // namespace specreg
