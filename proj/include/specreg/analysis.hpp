#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "specreg/data.hpp"
#include "specreg/network.hpp"

namespace specreg {

struct PowerLawFit {
    double alpha_hat = 0.0;
    double residual = 0.0;   // RMS of the log-space fit error
    int64_t n_min = 0, n_max = 0;
    int64_t points = 0;
};

struct SpectrumReport {
    int layer = 0;
    std::vector<double> eigenvalues;   // descending
    int64_t effective_dim = 0;         // 90% cumulative variance
    PowerLawFit fit;
};

/// Streaming full-dataset covariance of hidden layer l (eval mode, frozen
/// statistics), eigendecomposed. Fit range defaults to [10, N] capped at the
/// eigenvalue floor.
SpectrumReport full_spectrum(Network& net, const DatasetHandle& data, int layer,
                             int64_t stream_batch = 512, int64_t fit_n_min = 10,
                             int64_t fit_n_max = 0);

/// Smallest k whose leading eigenvalues hold >= fraction of the total.
int64_t effective_dimension(const std::vector<double>& eigenvalues, double fraction = 0.9);

/// Least-squares slope of log lambda_n vs log n over [n_min, n_max];
/// alpha_hat = -slope. Indices with lambda below 1e-12 * lambda_1 are
/// excluded; fewer than 5 usable points is an error.
PowerLawFit powerlaw_exponent(const std::vector<double>& eigenvalues, int64_t n_min, int64_t n_max);

enum class MapAggregation { signed_mean, mean_abs };
const char* to_string(MapAggregation a);

struct SensitivityMap {
    int64_t n = 0;                 // eigenvalue index (1-based)
    int64_t rows = 0, cols = 0;
    std::vector<double> values;    // rows*cols aggregated map
    MapAggregation aggregation = MapAggregation::signed_mean;
    std::string warning;           // set when the eigenvalue is near-degenerate
};

/// d lambda_n / d input pixel for every image of a fixed seeded subset, via
/// the eigenvector pairing d lambda_n / d Sigma = v_n v_n^T through the
/// covariance of the last hidden layer; (B, pixels) per-image gradients.
Tensor eigenvalue_input_gradient(Network& net, const DatasetHandle& data, int64_t n,
                                 std::string* warning = nullptr);

SensitivityMap sensitivity_map(Network& net, const DatasetHandle& data, int64_t n,
                               MapAggregation agg = MapAggregation::signed_mean,
                               int64_t max_images = 4096, uint64_t subset_seed = 17);

/// Report rows: layer,n,lambda,cumvar.
void write_spectrum_report_csv(std::ostream& os, const SpectrumReport& report, bool header);

void write_pgm(const SensitivityMap& map, const std::string& path);
void write_map_csv(const SensitivityMap& map, const std::string& path);

}  // namespace specreg
