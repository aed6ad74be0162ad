#include "specreg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "specreg/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace specreg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// minimal 640x480 plot surface with linear or log axes
class SvgPlot {
public:
    SvgPlot(double xmin, double xmax, double ymin, double ymax, bool logx, bool logy,
            std::string title, std::string xlabel, std::string ylabel)
        : xmin_(tx(xmin, logx)), xmax_(tx(xmax, logx)), ymin_(tx(ymin, logy)), ymax_(tx(ymax, logy)),
          logx_(logx), logy_(logy), title_(std::move(title)), xlabel_(std::move(xlabel)),
          ylabel_(std::move(ylabel)) {}

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                  const std::string& color, bool dashed = false) {
        body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
        if (dashed) body_ << " stroke-dasharray=\"6 4\"";
        body_ << " points=\"";
        for (size_t i = 0; i < xs.size(); ++i) body_ << fmt(px(xs[i])) << "," << fmt(py(ys[i])) << " ";
        body_ << "\"/>\n";
    }

    void band(const std::vector<double>& xs, const std::vector<double>& lo,
              const std::vector<double>& hi, const std::string& color) {
        body_ << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
        for (size_t i = 0; i < xs.size(); ++i) body_ << fmt(px(xs[i])) << "," << fmt(py(hi[i])) << " ";
        for (size_t i = xs.size(); i-- > 0;) body_ << fmt(px(xs[i])) << "," << fmt(py(lo[i])) << " ";
        body_ << "\"/>\n";
    }

    void vband(double x0, double x1) {  // grey x-region
        body_ << "<rect x=\"" << fmt(px(x0)) << "\" y=\"" << fmt(T) << "\" width=\""
              << fmt(px(x1) - px(x0)) << "\" height=\"" << fmt(H - T - B)
              << "\" fill=\"#888888\" fill-opacity=\"0.15\"/>\n";
    }

    void star(double x, double y, const std::string& color) {
        double cx = px(x), cy = py(y);
        body_ << "<path d=\"";
        for (int k = 0; k < 10; ++k) {
            double r = k % 2 ? 3.2 : 7.5;
            double a = -1.5707963 + k * 0.6283185;
            body_ << (k ? "L" : "M") << fmt(cx + r * std::cos(a)) << " " << fmt(cy + r * std::sin(a));
        }
        body_ << "Z\" fill=\"" << color << "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
    }

    void legend_entry(const std::string& label, const std::string& color, bool dashed = false) {
        double y = T + 16 + 18 * static_cast<double>(nlegend_++);
        body_ << "<line x1=\"" << fmt(L + 12) << "\" y1=\"" << fmt(y - 4) << "\" x2=\"" << fmt(L + 44)
              << "\" y2=\"" << fmt(y - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"";
        if (dashed) body_ << " stroke-dasharray=\"6 4\"";
        body_ << "/>\n<text x=\"" << fmt(L + 50) << "\" y=\"" << fmt(y)
              << "\" font-size=\"12\" font-family=\"sans-serif\">" << label << "</text>\n";
    }

    std::string finish() const {
        std::ostringstream out;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
            << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
        out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
        out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" "
               "font-family=\"sans-serif\">" << title_ << "</text>\n";
        out << body_.str();
        // frame + ticks
        out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << (W - L - R) << "\" height=\""
            << (H - T - B) << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (double t : xticks())
            out << "<line x1=\"" << fmt(px_raw(t)) << "\" y1=\"" << (H - B) << "\" x2=\"" << fmt(px_raw(t))
                << "\" y2=\"" << (H - B + 5) << "\" stroke=\"black\"/>\n<text x=\"" << fmt(px_raw(t))
                << "\" y=\"" << (H - B + 18) << "\" text-anchor=\"middle\" font-size=\"11\" "
                   "font-family=\"sans-serif\">" << tick_label(t, logx_) << "</text>\n";
        for (double t : yticks())
            out << "<line x1=\"" << (L - 5) << "\" y1=\"" << fmt(py_raw(t)) << "\" x2=\"" << L
                << "\" y2=\"" << fmt(py_raw(t)) << "\" stroke=\"black\"/>\n<text x=\"" << (L - 8)
                << "\" y=\"" << fmt(py_raw(t) + 4) << "\" text-anchor=\"end\" font-size=\"11\" "
                   "font-family=\"sans-serif\">" << tick_label(t, logy_) << "</text>\n";
        out << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 8)
            << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << xlabel_
            << "</text>\n";
        out << "<text x=\"14\" y=\"" << (T + (H - T - B) / 2)
            << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
               "transform=\"rotate(-90 14 " << (T + (H - T - B) / 2) << ")\">" << ylabel_
            << "</text>\n</svg>\n";
        return out.str();
    }

private:
    static constexpr double W = 640, H = 480, L = 62, R = 18, T = 34, B = 46;
    double xmin_, xmax_, ymin_, ymax_;
    bool logx_, logy_;
    std::string title_, xlabel_, ylabel_;
    std::ostringstream body_;
    int nlegend_ = 0;

    static double tx(double v, bool lg) { return lg ? std::log10(v) : v; }
    double px(double x) const { return px_raw(tx(x, logx_)); }
    double py(double y) const { return py_raw(tx(y, logy_)); }
    double px_raw(double x) const { return L + (x - xmin_) / (xmax_ - xmin_) * (W - L - R); }
    double py_raw(double y) const { return H - B - (y - ymin_) / (ymax_ - ymin_) * (H - T - B); }

    std::vector<double> ticks_for(double lo, double hi, bool lg) const {
        std::vector<double> t;
        if (lg) {
            for (int d = static_cast<int>(std::ceil(lo)); d <= static_cast<int>(std::floor(hi)); ++d)
                t.push_back(d);
        } else {
            double span = hi - lo;
            double step = std::pow(10.0, std::floor(std::log10(span / 4)));
            if (span / step > 8) step *= 2;
            if (span / step > 8) step *= 2.5;
            for (double v = std::ceil(lo / step) * step; v <= hi + 1e-12; v += step) t.push_back(v);
        }
        return t;
    }
    std::vector<double> xticks() const { return ticks_for(xmin_, xmax_, logx_); }
    std::vector<double> yticks() const { return ticks_for(ymin_, ymax_, logy_); }

    static std::string tick_label(double t, bool lg) {
        if (!lg) return fmt(t);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "1e%d", static_cast<int>(t));
        return buf;
    }
};

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) { out.push_back(cur); cur.clear(); }
        else cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

struct RunData {
    std::string dir, label, id;
    json manifest;
    // layer -> eigenvalues (first listed seed)
    std::map<int, std::vector<double>> spectra;
    int64_t tau = 10;
    bool spectral = false;
};

RunData load_run(const std::string& dir) {
    RunData r;
    r.dir = dir;
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw Error("report: no manifest.json in " + dir);
    r.manifest = json::parse(mf);
    r.id = r.manifest.at("run_id").get<std::string>();
    const json& cfg = r.manifest.at("config");
    std::string name = cfg.value("name", "");
    r.label = name.empty() ? cfg.value("preset", "?") + "/" + cfg.value("regularizer", "none") : name;
    r.spectral = cfg.value("regularizer", "none") == "spectral";
    if (r.spectral) r.tau = cfg.at("spectral").value("tau", 10);

    if (!r.manifest.at("seeds").empty()) {
        uint64_t seed0 = r.manifest.at("seeds")[0].at("seed").get<uint64_t>();
        std::ifstream sf(dir + "/spectra/seed" + std::to_string(seed0) + "_final.csv");
        std::string line;
        bool first = true;
        while (std::getline(sf, line)) {
            if (first) { first = false; continue; }
            auto cells = split(line, ',');
            if (cells.size() < 3) continue;
            r.spectra[std::stoi(cells[0])].push_back(std::stod(cells[2]));
        }
    }
    return r;
}

}  // namespace

void report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw Error("report: no runs given");
    std::vector<RunData> runs;
    for (const std::string& d : run_dirs) runs.push_back(load_run(d));
    fs::create_directories(out_dir);

    // ---- spectrum plots, one per layer present
    std::vector<int> layers;
    for (const auto& [l, v] : runs[0].spectra) layers.push_back(l);
    for (int layer : layers) {
        double ymin = 1e300, ymax = 0;
        int64_t nmax = 0;
        for (const RunData& r : runs) {
            auto it = r.spectra.find(layer);
            if (it == r.spectra.end()) continue;
            for (double v : it->second)
                if (v > 1e-14 * it->second[0]) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
            nmax = std::max<int64_t>(nmax, static_cast<int64_t>(it->second.size()));
        }
        if (nmax == 0) continue;
        SvgPlot plot(1, static_cast<double>(nmax), ymin * 0.5, ymax * 2, true, true,
                     "eigenspectrum, hidden layer " + std::to_string(layer), "n", "lambda_n");
        int64_t tau = 10;
        for (const RunData& r : runs)
            if (r.spectral) tau = r.tau;
        plot.vband(1, static_cast<double>(tau));

        // 1/n reference anchored at the first run's lambda_tau
        {
            const auto& eig = runs[0].spectra.at(layer);
            double anchor = eig[static_cast<size_t>(std::min<int64_t>(tau, static_cast<int64_t>(eig.size())) - 1)];
            std::vector<double> xs, ys;
            for (int64_t n = 1; n <= nmax; ++n) {
                xs.push_back(static_cast<double>(n));
                ys.push_back(anchor * static_cast<double>(tau) / static_cast<double>(n));
            }
            plot.polyline(xs, ys, "#555555", true);
            plot.legend_entry("1/n reference", "#555555", true);
        }
        for (size_t i = 0; i < runs.size(); ++i) {
            auto it = runs[i].spectra.find(layer);
            if (it == runs[i].spectra.end()) continue;
            std::vector<double> xs, ys;
            double floor_v = 1e-14 * it->second[0];
            for (size_t k = 0; k < it->second.size(); ++k) {
                if (it->second[k] <= floor_v) break;
                xs.push_back(static_cast<double>(k + 1));
                ys.push_back(it->second[k]);
            }
            const char* color = kPalette[i % 6];
            plot.polyline(xs, ys, color);
            plot.legend_entry(runs[i].label, color);
            // 90% cumulative-variance star from the manifest
            for (const json& sj : runs[i].manifest.at("seeds")[0].value("final_spectra", json::array()))
                if (sj.at("layer").get<int>() == layer) {
                    int64_t k = sj.at("effective_dim").get<int64_t>();
                    if (k >= 1 && k <= static_cast<int64_t>(it->second.size()))
                        plot.star(static_cast<double>(k), it->second[static_cast<size_t>(k - 1)], color);
                }
        }
        std::ofstream f(out_dir + "/spectrum_layer" + std::to_string(layer) + ".svg");
        f << plot.finish();
    }

    // ---- robustness plots per attack kind
    std::vector<std::string> kinds;
    for (const RunData& r : runs)
        if (r.manifest.contains("robustness"))
            for (const json& a : r.manifest.at("robustness").at("attacks")) {
                std::string k = a.at("kind").get<std::string>();
                if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
            }
    for (const std::string& kind : kinds) {
        double xmax = 0;
        bool any = false;
        std::vector<std::tuple<std::string, const char*, std::vector<double>, std::vector<double>,
                               std::vector<double>>> series;
        for (size_t i = 0; i < runs.size(); ++i) {
            if (!runs[i].manifest.contains("robustness")) continue;
            for (const json& a : runs[i].manifest.at("robustness").at("attacks")) {
                if (a.at("kind").get<std::string>() != kind) continue;
                std::vector<double> xs, mean, sd;
                for (const json& pt : a.at("points")) {
                    xs.push_back(pt.at("epsilon").get<double>());
                    mean.push_back(pt.at("mean").get<double>());
                    sd.push_back(pt.at("std").get<double>());
                }
                if (xs.empty()) continue;
                xmax = std::max(xmax, xs.back());
                series.emplace_back(runs[i].label, kPalette[i % 6], xs, mean, sd);
                any = true;
            }
        }
        if (!any) continue;
        SvgPlot plot2(0, xmax * 1.02, 0, 1.0, false, false, "accuracy under " + kind,
                      kind == "white_noise" ? "noise std" : "epsilon", "accuracy");
        for (auto& [label, color, xs, mean, sd] : series) {
            std::vector<double> lo(xs.size()), hi(xs.size());
            for (size_t k = 0; k < xs.size(); ++k) {
                lo[k] = std::max(0.0, mean[k] - sd[k]);
                hi[k] = std::min(1.0, mean[k] + sd[k]);
            }
            plot2.band(xs, lo, hi, color);
            plot2.polyline(xs, mean, color);
            plot2.legend_entry(label, color);
        }
        std::ofstream f(out_dir + "/robustness_" + kind + ".svg");
        f << plot2.finish();
    }

    // ---- summary table
    std::ofstream sf(out_dir + "/summary.csv");
    sf << "run_id,label,seed,layer,alpha_hat,fit_residual,effective_dim,clean_accuracy";
    for (const std::string& k : kinds) sf << "," << k << "_mean_accuracy";
    sf << "\n";
    char buf[64];
    for (const RunData& r : runs) {
        for (const json& seed_json : r.manifest.at("seeds")) {
            if (seed_json.at("status") != "ok") continue;
            uint64_t seed = seed_json.at("seed").get<uint64_t>();
            double clean = -1;
            std::map<std::string, double> attacked;
            if (r.manifest.contains("robustness")) {
                for (const json& c : r.manifest.at("robustness").at("clean"))
                    if (c.at("seed").get<uint64_t>() == seed) clean = c.at("accuracy").get<double>();
                for (const json& a : r.manifest.at("robustness").at("attacks")) {
                    double acc = 0;
                    int64_t cnt = 0;
                    size_t seed_pos = 0;
                    for (size_t s = 0; s < r.manifest.at("seeds").size(); ++s) {
                        const json& sj = r.manifest.at("seeds")[s];
                        if (sj.at("seed").get<uint64_t>() == seed && sj.at("status") == "ok") break;
                        if (sj.at("status") == "ok") ++seed_pos;
                    }
                    for (const json& pt : a.at("points")) {
                        const json& per_seed = pt.at("per_seed");
                        if (seed_pos < per_seed.size()) {
                            acc += per_seed[seed_pos].get<double>();
                            ++cnt;
                        }
                    }
                    if (cnt) attacked[a.at("kind").get<std::string>()] = acc / static_cast<double>(cnt);
                }
            }
            for (const json& sj : seed_json.value("final_spectra", json::array())) {
                sf << r.id << "," << r.label << "," << seed << "," << sj.at("layer").get<int>();
                std::snprintf(buf, sizeof(buf), ",%.6g,%.6g", sj.at("alpha_hat").get<double>(),
                              sj.at("fit_residual").get<double>());
                sf << buf << "," << sj.at("effective_dim").get<int64_t>();
                std::snprintf(buf, sizeof(buf), ",%.6g", clean);
                sf << buf;
                for (const std::string& k : kinds) {
                    auto it = attacked.find(k);
                    if (it == attacked.end()) sf << ",";
                    else {
                        std::snprintf(buf, sizeof(buf), ",%.6g", it->second);
                        sf << buf;
                    }
                }
                sf << "\n";
            }
        }
    }
}

}  // namespace specreg
