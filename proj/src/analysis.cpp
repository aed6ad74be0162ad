#include "specreg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "specreg/linalg.hpp"
#include "specreg/spectral.hpp"

namespace specreg {

const char* to_string(MapAggregation a) {
    return a == MapAggregation::signed_mean ? "signed_mean" : "mean_abs";
}

namespace {

}  // namespace

SpectrumReport full_spectrum(Network& net, const DatasetHandle& data, int layer,
                             int64_t stream_batch, int64_t fit_n_min, int64_t fit_n_max) {
    if (layer < 1 || layer > net.depth())
        throw Error("full_spectrum: layer " + std::to_string(layer) + " outside 1.." +
                    std::to_string(net.depth()));
    int64_t width = net.hidden_width(layer);
    FrozenParams guard(net.params());

    std::vector<std::vector<int64_t>> chunks;
    for (int64_t start = 0; start < data.count; start += stream_batch) {
        int64_t end = std::min(data.count, start + stream_batch);
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
        chunks.push_back(std::move(idx));
    }

    std::vector<double> mean(static_cast<size_t>(width), 0.0);
    for (const auto& idx : chunks) {
        Tape tape;
        ActivationRecord rec = net.forward(tape, data.image_batch(idx), Mode::eval, false);
        auto av = rec.hidden[static_cast<size_t>(layer - 1)].value();
        for (size_t b = 0; b < idx.size(); ++b)
            for (int64_t j = 0; j < width; ++j) mean[static_cast<size_t>(j)] += av[b * static_cast<size_t>(width) + static_cast<size_t>(j)];
    }
    for (double& v : mean) v /= static_cast<double>(data.count);

    std::vector<double> cov(static_cast<size_t>(width * width), 0.0);
    for (const auto& idx : chunks) {
        Tape tape;
        ActivationRecord rec = net.forward(tape, data.image_batch(idx), Mode::eval, false);
        auto av = rec.hidden[static_cast<size_t>(layer - 1)].value();
        std::vector<double> xc(av.begin(), av.end());
        int64_t bsz = static_cast<int64_t>(idx.size());
        for (int64_t b = 0; b < bsz; ++b)
            for (int64_t j = 0; j < width; ++j) xc[static_cast<size_t>(b * width + j)] -= mean[static_cast<size_t>(j)];
        std::vector<double> gram(static_cast<size_t>(width * width));
        matmul_raw(xc.data(), xc.data(), gram.data(), width, bsz, width, true, false);
        for (int64_t j = 0; j < width * width; ++j) cov[static_cast<size_t>(j)] += gram[static_cast<size_t>(j)];
    }
    for (double& v : cov) v /= static_cast<double>(data.count);

    EigenDecomposition eig = sym_eig(cov, width);
    SpectrumReport rep;
    rep.layer = layer;
    rep.eigenvalues = std::move(eig.eigenvalues);
    rep.effective_dim = effective_dimension(rep.eigenvalues, 0.9);
    int64_t nmax = fit_n_max > 0 ? fit_n_max : width;
    // narrow or collapsed spectra may not support the default range; fall
    // back to the widest start, else report an empty fit
    for (int64_t start : {fit_n_min, static_cast<int64_t>(2)}) {
        if (start >= nmax) continue;
        try {
            rep.fit = powerlaw_exponent(rep.eigenvalues, start, nmax);
            break;
        } catch (const Error&) {
            rep.fit = PowerLawFit{};
        }
    }
    return rep;
}

int64_t effective_dimension(const std::vector<double>& eigenvalues, double fraction) {
    if (eigenvalues.empty()) throw Error("effective_dimension: empty spectrum");
    double lead = eigenvalues[0];
    double total = 0.0;
    for (double v : eigenvalues) {
        if (v < 0 && std::fabs(v) > 1e-12 * std::max(lead, 0.0))
            throw Error("effective_dimension: negative eigenvalue " + std::to_string(v));
        total += std::max(v, 0.0);
    }
    if (total <= 0) throw Error("effective_dimension: all-zero spectrum");
    double acc = 0.0;
    for (size_t k = 0; k < eigenvalues.size(); ++k) {
        acc += std::max(eigenvalues[k], 0.0);
        if (acc >= fraction * total) return static_cast<int64_t>(k) + 1;
    }
    return static_cast<int64_t>(eigenvalues.size());
}

PowerLawFit powerlaw_exponent(const std::vector<double>& eigenvalues, int64_t n_min, int64_t n_max) {
    int64_t n = static_cast<int64_t>(eigenvalues.size());
    if (n_min < 1 || n_max > n || n_min >= n_max)
        throw Error("powerlaw_exponent: bad fit range [" + std::to_string(n_min) + "," +
                    std::to_string(n_max) + "] for spectrum of length " + std::to_string(n));
    double floor_val = eigenvalues.empty() ? 0.0 : 1e-12 * eigenvalues[0];
    std::vector<double> xs, ys;
    for (int64_t i = n_min; i <= n_max; ++i) {
        double lam = eigenvalues[static_cast<size_t>(i - 1)];
        if (lam <= floor_val || lam <= 0) break;  // round-off tail starts here
        xs.push_back(std::log(static_cast<double>(i)));
        ys.push_back(std::log(lam));
    }
    if (xs.size() < 5)
        throw Error("powerlaw_exponent: only " + std::to_string(xs.size()) +
                    " usable points in fit range, need at least 5");
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) { mx += xs[i]; my += ys[i]; }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    double slope = sxy / sxx;
    double intercept = my - slope * mx;
    double rss = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        double e = ys[i] - (slope * xs[i] + intercept);
        rss += e * e;
    }
    PowerLawFit fit;
    fit.alpha_hat = -slope;
    fit.residual = std::sqrt(rss / static_cast<double>(xs.size()));
    fit.n_min = n_min;
    fit.n_max = n_min + static_cast<int64_t>(xs.size()) - 1;
    fit.points = static_cast<int64_t>(xs.size());
    return fit;
}

Tensor eigenvalue_input_gradient(Network& net, const DatasetHandle& data, int64_t n,
                                 std::string* warning) {
    int64_t width = net.hidden_width(net.depth());
    if (n < 1 || n > width)
        throw Error("sensitivity: eigenvalue index " + std::to_string(n) + " outside 1.." +
                    std::to_string(width));
    FrozenParams guard(net.params());
    std::vector<int64_t> idx(static_cast<size_t>(data.count));
    for (int64_t i = 0; i < data.count; ++i) idx[static_cast<size_t>(i)] = i;

    Tape tape;
    Tensor x = data.image_batch(idx);
    x.set_requires_grad(true);
    ActivationRecord rec = net.forward(tape, x, Mode::eval, false);
    CovarianceStats st = batch_covariance(tape, rec.hidden.back());

    EigenDecomposition eig = sym_eig(st.cov);
    if (warning) {
        double lead = std::max(eig.eigenvalues[0], 0.0);
        double gap = 1e300;
        if (n > 1) gap = std::min(gap, eig.eigenvalues[static_cast<size_t>(n - 2)] - eig.eigenvalues[static_cast<size_t>(n - 1)]);
        if (n < width) gap = std::min(gap, eig.eigenvalues[static_cast<size_t>(n - 1)] - eig.eigenvalues[static_cast<size_t>(n)]);
        if (gap < 1e-10 * lead)
            *warning = "eigenvalue " + std::to_string(n) +
                       " is near-degenerate (gap " + std::to_string(gap) +
                       "); the gradient is ill-defined at crossings";
        else
            warning->clear();
    }

    Tensor lam = tape.quad_diag(st.cov, eig.eigenvectors, width);
    Tensor lam_n = tape.index1d(lam, n - 1);
    tape.backward(lam_n);
    auto g = x.grad();
    return Tensor::from_vec({data.count, data.pixels()}, {g.begin(), g.end()});
}

SensitivityMap sensitivity_map(Network& net, const DatasetHandle& data, int64_t n,
                               MapAggregation agg, int64_t max_images, uint64_t subset_seed) {
    const DatasetHandle* use = &data;
    DatasetHandle sub;
    if (data.count > max_images) {
        sub = subset(data, max_images, subset_seed);
        use = &sub;
    }
    SensitivityMap map;
    map.n = n;
    map.rows = use->rows;
    map.cols = use->cols;
    map.aggregation = agg;
    Tensor per_image = eigenvalue_input_gradient(net, *use, n, &map.warning);
    int64_t bsz = per_image.dim(0), d = per_image.dim(1);
    map.values.assign(static_cast<size_t>(d), 0.0);
    auto g = per_image.value();
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t j = 0; j < d; ++j) {
            double v = g[static_cast<size_t>(b * d + j)];
            map.values[static_cast<size_t>(j)] += agg == MapAggregation::signed_mean ? v : std::fabs(v);
        }
    for (double& v : map.values) v /= static_cast<double>(bsz);
    return map;
}

void write_spectrum_report_csv(std::ostream& os, const SpectrumReport& report, bool header) {
    if (header) os << "layer,n,lambda,cumvar\n";
    double total = 0.0;
    for (double v : report.eigenvalues) total += std::max(v, 0.0);
    double acc = 0.0;
    char buf[64];
    for (size_t i = 0; i < report.eigenvalues.size(); ++i) {
        acc += std::max(report.eigenvalues[i], 0.0);
        std::snprintf(buf, sizeof(buf), "%.17g", report.eigenvalues[i]);
        os << report.layer << "," << (i + 1) << "," << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", total > 0 ? acc / total : 0.0);
        os << buf << "\n";
    }
}

void write_pgm(const SensitivityMap& map, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("pgm: cannot write " + path);
    f << "P5\n" << map.cols << " " << map.rows << "\n255\n";
    double peak = 0.0;
    for (double v : map.values) peak = std::max(peak, std::fabs(v));
    for (double v : map.values) {
        int byte;
        if (map.aggregation == MapAggregation::signed_mean)
            byte = peak > 0 ? static_cast<int>(std::lround(127.5 + 127.5 * v / peak)) : 128;
        else
            byte = peak > 0 ? static_cast<int>(std::lround(255.0 * v / peak)) : 0;
        byte = std::clamp(byte, 0, 255);
        f.put(static_cast<char>(byte));
    }
}

void write_map_csv(const SensitivityMap& map, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("map csv: cannot write " + path);
    char buf[64];
    for (int64_t r = 0; r < map.rows; ++r) {
        for (int64_t c = 0; c < map.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", map.values[static_cast<size_t>(r * map.cols + c)]);
            f << buf << (c + 1 == map.cols ? "" : ",");
        }
        f << "\n";
    }
}

}  // namespace specreg
