#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "specreg/attacks.hpp"
#include "specreg/data.hpp"
#include "specreg/jacobian_reg.hpp"
#include "specreg/network.hpp"
#include "specreg/spectral.hpp"

namespace specreg {

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Tensor>& params, OptimizerConfig cfg);
    void step();

private:
    std::vector<Tensor>* params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

struct DataConfig {
    bool synthetic = false;
    int64_t synthetic_train = 60000, synthetic_test = 10000;
    uint64_t synthetic_seed = 0;
    std::string train_images, train_labels, test_images, test_labels;
    int64_t train_subset = 10000, test_subset = 2000;
    uint64_t subset_seed = 0;
};

struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    std::vector<double> epsilons;
    double eta = 0.01;
    int steps = 40;
    int64_t n_images = 1000;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string name;                     // human tag, folded into the run id
    std::string preset = "custom";        // shallow2000_bn|shallow2000|mlp3x1000|cnn_16_32_fc1000|custom
    int64_t hidden_width = 0;             // overrides preset dense widths (desk scale)
    std::string activation;               // "", "sigmoid", "relu"
    std::vector<LayerSpec> custom_layers;
    Shape input_shape = {28, 28};
    std::string regularizer = "none";     // none|spectral|jacobian
    SpectralConfig spectral;
    JacobianConfig jacobian;
    int whitening_layer = 0;              // 0 = none; otherwise whiten hidden activation l
    OptimizerConfig optimizer;
    int64_t epochs = 20;
    std::vector<uint64_t> seeds = {0, 1, 2};
    DataConfig data;
    int64_t batch_size = 0;               // 0 = auto: 1.5x widest hidden layer
    std::vector<AttackSpec> attacks;
    int64_t checkpoint_every = 1;         // 0 = final checkpoint only
    int64_t stream_batch = 512;           // report/analysis streaming
    std::string outdir = "runs";
};

/// Strict parse: unknown keys anywhere are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg, bool include_outdir = true);

/// First 12 hex digits of sha256 over the canonical config (outdir excluded).
std::string run_id(const ExperimentConfig& cfg);

NetworkConfig build_network_config(const ExperimentConfig& cfg, uint64_t seed);
int64_t resolve_batch_size(const ExperimentConfig& cfg);

struct LoadedData {
    DatasetHandle train, test;
};
LoadedData load_experiment_data(const ExperimentConfig& cfg);

/// Trains every seed, writing <outdir>/<run-id>/{manifest.json, checkpoints/,
/// spectra/}. Returns the manifest. A non-finite loss aborts that seed and is
/// recorded in the manifest.
nlohmann::json train(const ExperimentConfig& cfg);

/// Runs the config's attack sweeps against the final checkpoints; appends
/// robustness.csv and a summary into the manifest.
nlohmann::json evaluate(const std::string& run_dir);

/// Four linked runs: vanilla / whitened / whitened+last-layer SpecReg /
/// last-layer SpecReg. Returns an index of the arm manifests.
nlohmann::json ablate_whitening(const ExperimentConfig& base);

std::string run_dir_for(const ExperimentConfig& cfg);

}  // namespace specreg
