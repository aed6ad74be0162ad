#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "specreg/analysis.hpp"
#include "specreg/experiment.hpp"
#include "specreg/report.hpp"
#include "specreg/rng.hpp"
#include "specreg/synthdigits.hpp"

using nlohmann::json;
using namespace specreg;

namespace {

ExperimentConfig load_config(const std::string& path, const std::string& outdir_override) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config " + path);
    ExperimentConfig cfg = config_from_json(json::parse(f));
    if (!outdir_override.empty()) cfg.outdir = outdir_override;
    return cfg;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoll(cur));
            cur.clear();
        } else cur.push_back(c);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectrally regularized network training and robustness evaluation"};
    app.require_subcommand(1);

    std::string config_path, outdir_override, run_dir, out_dir, eig_list;
    std::vector<std::string> run_dirs;
    std::string data_dir = "data";
    int64_t n_train = 60000, n_test = 10000, max_images = 4096;
    uint64_t gen_seed = 0;
    int64_t map_seed = 0;
    bool abs_agg = false;

    auto* c_train = app.add_subcommand("train", "train all seeds of an experiment config");
    c_train->add_option("--config", config_path, "experiment config JSON")->required();
    c_train->add_option("--outdir", outdir_override, "override the config's output directory");

    auto* c_eval = app.add_subcommand("evaluate", "run the attack sweeps of a trained run");
    c_eval->add_option("--run", run_dir, "run directory (outdir/run-id)")->required();

    auto* c_report = app.add_subcommand("report", "plots and summary tables across runs");
    c_report->add_option("--runs", run_dirs, "run directories")->required()->expected(-1);
    c_report->add_option("--out", out_dir, "output directory for plots")->required();

    auto* c_ablate = app.add_subcommand("ablate-whitening",
                                        "vanilla / whitened / whitened+SpecReg / SpecReg arms");
    c_ablate->add_option("--config", config_path, "base experiment config JSON")->required();
    c_ablate->add_option("--outdir", outdir_override, "override the config's output directory");

    auto* c_sens = app.add_subcommand("sensitivity", "eigenvalue sensitivity maps");
    c_sens->add_option("--run", run_dir, "run directory")->required();
    c_sens->add_option("--eigs", eig_list, "comma separated eigenvalue indices (1-based)")->required();
    c_sens->add_option("--seed", map_seed, "model seed to load (default: first)");
    c_sens->add_option("--images", max_images, "evaluation subset size");
    c_sens->add_flag("--abs", abs_agg, "aggregate |gradient| instead of the signed mean");

    auto* c_data = app.add_subcommand("make-data", "write synthetic digit IDX files");
    c_data->add_option("--out", data_dir, "output directory");
    c_data->add_option("--train", n_train, "training image count");
    c_data->add_option("--test", n_test, "test image count");
    c_data->add_option("--seed", gen_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_train) {
            json m = train(load_config(config_path, outdir_override));
            std::cout << m.at("run_id").get<std::string>() << "\n";
        } else if (*c_eval) {
            json m = evaluate(run_dir);
            for (const json& a : m.at("robustness").at("attacks")) {
                std::cout << a.at("kind").get<std::string>() << ":";
                for (const json& pt : a.at("points"))
                    std::cout << " " << pt.at("epsilon").get<double>() << "->"
                              << pt.at("mean").get<double>();
                std::cout << "\n";
            }
        } else if (*c_report) {
            report(run_dirs, out_dir);
            std::cout << "report written to " << out_dir << "\n";
        } else if (*c_ablate) {
            json idx = ablate_whitening(load_config(config_path, outdir_override));
            std::cout << idx.dump(2) << "\n";
        } else if (*c_sens) {
            std::ifstream mf(run_dir + "/manifest.json");
            if (!mf) throw Error("no manifest.json in " + run_dir);
            json manifest = json::parse(mf);
            ExperimentConfig cfg = config_from_json(manifest.at("config"));
            const json& seeds = manifest.at("seeds");
            uint64_t seed = seeds[0].at("seed").get<uint64_t>();
            for (const json& sj : seeds)
                if (static_cast<int64_t>(sj.at("seed").get<uint64_t>()) == map_seed) seed = map_seed;
            Network net(build_network_config(cfg, seed));
            std::string ck;
            for (const json& sj : seeds)
                if (sj.at("seed").get<uint64_t>() == seed) ck = sj.at("final_checkpoint").get<std::string>();
            net.load_checkpoint(run_dir + "/" + ck);
            LoadedData data = load_experiment_data(cfg);
            MapAggregation agg = abs_agg ? MapAggregation::mean_abs : MapAggregation::signed_mean;
            for (int64_t n : parse_int_list(eig_list)) {
                SensitivityMap map = sensitivity_map(net, data.test, n, agg, max_images);
                std::string base = run_dir + "/maps/lambda" + std::to_string(n) + "_seed" +
                                   std::to_string(seed);
                write_pgm(map, base + ".pgm");
                write_map_csv(map, base + ".csv");
                std::cout << "lambda_" << n << " -> " << base << ".pgm";
                if (!map.warning.empty()) std::cout << "  (warning: " << map.warning << ")";
                std::cout << "\n";
            }
        } else if (*c_data) {
            std::filesystem::create_directories(data_dir);
            write_synthetic_idx(n_train, Rng::mix(gen_seed, 1), data_dir + "/train-images-idx3-ubyte",
                                data_dir + "/train-labels-idx1-ubyte");
            write_synthetic_idx(n_test, Rng::mix(gen_seed, 2), data_dir + "/t10k-images-idx3-ubyte",
                                data_dir + "/t10k-labels-idx1-ubyte");
            std::cout << "wrote " << n_train << " train / " << n_test << " test images to " << data_dir
                      << "\n";
        }
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
