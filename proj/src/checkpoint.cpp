#include "specreg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "specreg/error.hpp"
#include "specreg/network.hpp"

namespace specreg {

static const char kMagic[8] = {'S', 'P', 'E', 'C', 'N', 'E', 'T', '1'};

void write_blobs(const std::string& path, const std::vector<Blob>& blobs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot write " + path);
    f.write(kMagic, 8);
    uint32_t count = static_cast<uint32_t>(blobs.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const Blob& b : blobs) {
        uint32_t nl = static_cast<uint32_t>(b.name.size());
        f.write(reinterpret_cast<const char*>(&nl), 4);
        f.write(b.name.data(), nl);
        uint32_t nd = static_cast<uint32_t>(b.dims.size());
        f.write(reinterpret_cast<const char*>(&nd), 4);
        f.write(reinterpret_cast<const char*>(b.dims.data()), static_cast<std::streamsize>(8 * b.dims.size()));
        f.write(reinterpret_cast<const char*>(b.data.data()), static_cast<std::streamsize>(8 * b.data.size()));
    }
    if (!f) throw Error("checkpoint: short write to " + path);
}

std::vector<Blob> read_blobs(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open " + path);
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw Error("checkpoint: bad magic in " + path);
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    std::vector<Blob> out(count);
    for (Blob& b : out) {
        uint32_t nl = 0, nd = 0;
        f.read(reinterpret_cast<char*>(&nl), 4);
        b.name.resize(nl);
        f.read(b.name.data(), nl);
        f.read(reinterpret_cast<char*>(&nd), 4);
        b.dims.resize(nd);
        f.read(reinterpret_cast<char*>(b.dims.data()), static_cast<std::streamsize>(8 * nd));
        int64_t n = 1;
        for (int64_t d : b.dims) n *= d;
        b.data.resize(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(8 * n));
        if (!f) throw Error("checkpoint: truncated blob '" + b.name + "' in " + path);
    }
    return out;
}

// Network save/load live here to keep the container format in one file.

void Network::save_checkpoint(const std::string& path) const {
    std::vector<Blob> blobs;
    for (size_t i = 0; i < params_.size(); ++i) {
        const Tensor& p = params_[i];
        blobs.push_back(Blob{param_names_[i], p.shape(),
                             std::vector<double>(p.value().begin(), p.value().end())});
    }
    for (size_t i = 0; i < layers_.size(); ++i) {
        const Layer& L = layers_[i];
        std::string tag = "L" + std::to_string(i);
        if (L.spec.kind == LayerKind::batchnorm) {
            blobs.push_back(Blob{tag + ".bn.run_mean", {L.out_flat}, L.bn.run_mean});
            blobs.push_back(Blob{tag + ".bn.run_var", {L.out_flat}, L.bn.run_var});
        } else if (L.spec.kind == LayerKind::whitening) {
            blobs.push_back(Blob{tag + ".wh.run_mean", {L.out_flat}, L.wh.run_mean});
            blobs.push_back(Blob{tag + ".wh.run_chol", {L.out_flat, L.out_flat}, L.wh.run_chol});
            blobs.push_back(Blob{tag + ".wh.init", {1}, {L.wh.initialized ? 1.0 : 0.0}});
        }
    }
    write_blobs(path, blobs);
}

void Network::load_checkpoint(const std::string& path) {
    std::map<std::string, Blob> by_name;
    for (Blob& b : read_blobs(path)) by_name[b.name] = std::move(b);
    auto take = [&](const std::string& name, const Shape& want) -> std::vector<double>& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint: missing blob '" + name + "'");
        if (it->second.dims != want)
            throw Error("checkpoint: blob '" + name + "' has shape " + shape_str(it->second.dims) +
                        ", network wants " + shape_str(want));
        return it->second.data;
    };
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& src = take(param_names_[i], params_[i].shape());
        std::copy(src.begin(), src.end(), params_[i].value_mut().begin());
    }
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& L = layers_[i];
        std::string tag = "L" + std::to_string(i);
        if (L.spec.kind == LayerKind::batchnorm) {
            L.bn.run_mean = take(tag + ".bn.run_mean", {L.out_flat});
            L.bn.run_var = take(tag + ".bn.run_var", {L.out_flat});
        } else if (L.spec.kind == LayerKind::whitening) {
            L.wh.run_mean = take(tag + ".wh.run_mean", {L.out_flat});
            L.wh.run_chol = take(tag + ".wh.run_chol", {L.out_flat, L.out_flat});
            L.wh.initialized = take(tag + ".wh.init", {1})[0] != 0.0;
        }
    }
}

}  // namespace specreg
