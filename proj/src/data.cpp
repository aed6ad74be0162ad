#include "specreg/data.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "specreg/error.hpp"
#include "specreg/rng.hpp"

namespace specreg {

std::string sha256_hex(const uint8_t* data, size_t len) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, len) != 1 || EVP_DigestFinal_ex(ctx, md, &md_len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256: digest failure");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string dataset_fingerprint(const std::vector<uint8_t>& images,
                                const std::vector<uint8_t>& labels) {
    std::vector<uint8_t> all;
    all.reserve(images.size() + labels.size());
    all.insert(all.end(), images.begin(), images.end());
    all.insert(all.end(), labels.begin(), labels.end());
    return sha256_hex(all.data(), all.size());
}

Tensor DatasetHandle::image_batch(const std::vector<int64_t>& idx) const {
    int64_t d = pixels();
    std::vector<double> v(idx.size() * static_cast<size_t>(d));
    for (size_t b = 0; b < idx.size(); ++b) {
        const uint8_t* src = images.data() + idx[b] * d;
        double* dst = v.data() + b * static_cast<size_t>(d);
        for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]) / 255.0;
    }
    return Tensor::from_vec({static_cast<int64_t>(idx.size()), d}, std::move(v));
}

Tensor DatasetHandle::image_batch_2d(const std::vector<int64_t>& idx) const {
    Tensor flat = image_batch(idx);
    return flat.reshape({static_cast<int64_t>(idx.size()), 1, rows, cols});
}

std::vector<int> DatasetHandle::label_batch(const std::vector<int64_t>& idx) const {
    std::vector<int> out(idx.size());
    for (size_t b = 0; b < idx.size(); ++b) out[b] = labels[static_cast<size_t>(idx[b])];
    return out;
}

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path, int64_t offset) {
    uint8_t buf[4];
    if (!f.read(reinterpret_cast<char*>(buf), 4))
        throw Error("idx: truncated header in " + path + " at byte offset " + std::to_string(offset));
    return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
           (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

void write_be32(std::ofstream& f, uint32_t v) {
    uint8_t buf[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                      static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
    f.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw Error("idx: cannot open " + images_path);
    uint32_t magic = read_be32(fi, images_path, 0);
    if (magic != 2051)
        throw Error("idx: " + images_path + " has magic " + std::to_string(magic) +
                    " at byte offset 0, expected 2051 (images)");
    int64_t count = read_be32(fi, images_path, 4);
    int64_t rows = read_be32(fi, images_path, 8);
    int64_t cols = read_be32(fi, images_path, 12);
    DatasetHandle h;
    h.count = count;
    h.rows = rows;
    h.cols = cols;
    h.images.resize(static_cast<size_t>(count * rows * cols));
    if (!fi.read(reinterpret_cast<char*>(h.images.data()), static_cast<std::streamsize>(h.images.size())))
        throw Error("idx: " + images_path + " truncated, expected " + std::to_string(h.images.size()) +
                    " pixel bytes after byte offset 16");

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw Error("idx: cannot open " + labels_path);
    uint32_t lmagic = read_be32(fl, labels_path, 0);
    if (lmagic != 2049)
        throw Error("idx: " + labels_path + " has magic " + std::to_string(lmagic) +
                    " at byte offset 0, expected 2049 (labels)");
    int64_t lcount = read_be32(fl, labels_path, 4);
    if (lcount != count)
        throw Error("idx: image count " + std::to_string(count) + " != label count " +
                    std::to_string(lcount) + " (header at byte offset 4)");
    h.labels.resize(static_cast<size_t>(count));
    if (!fl.read(reinterpret_cast<char*>(h.labels.data()), static_cast<std::streamsize>(h.labels.size())))
        throw Error("idx: " + labels_path + " truncated, expected " + std::to_string(count) +
                    " label bytes after byte offset 8");

    h.fingerprint = dataset_fingerprint(h.images, h.labels);
    h.lineage = images_path;
    return h;
}

void save_idx(const DatasetHandle& h, const std::string& images_path, const std::string& labels_path) {
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw Error("idx: cannot write " + images_path);
    write_be32(fi, 2051);
    write_be32(fi, static_cast<uint32_t>(h.count));
    write_be32(fi, static_cast<uint32_t>(h.rows));
    write_be32(fi, static_cast<uint32_t>(h.cols));
    fi.write(reinterpret_cast<const char*>(h.images.data()), static_cast<std::streamsize>(h.images.size()));

    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw Error("idx: cannot write " + labels_path);
    write_be32(fl, 2049);
    write_be32(fl, static_cast<uint32_t>(h.count));
    fl.write(reinterpret_cast<const char*>(h.labels.data()), static_cast<std::streamsize>(h.labels.size()));
}

DatasetHandle subset(const DatasetHandle& h, int64_t n, uint64_t seed) {
    if (n > h.count)
        throw Error("subset: requested " + std::to_string(n) + " of " + std::to_string(h.count));
    std::vector<int64_t> idx(static_cast<size_t>(h.count));
    for (int64_t i = 0; i < h.count; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(Rng::mix(seed, 0xda7a));
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(n));

    DatasetHandle out;
    out.count = n;
    out.rows = h.rows;
    out.cols = h.cols;
    out.images.resize(static_cast<size_t>(n * h.pixels()));
    out.labels.resize(static_cast<size_t>(n));
    for (int64_t b = 0; b < n; ++b) {
        std::copy_n(h.images.data() + idx[static_cast<size_t>(b)] * h.pixels(), h.pixels(),
                    out.images.data() + b * h.pixels());
        out.labels[static_cast<size_t>(b)] = h.labels[static_cast<size_t>(idx[static_cast<size_t>(b)])];
    }
    out.fingerprint = dataset_fingerprint(out.images, out.labels);
    out.lineage = h.lineage + "/subset(" + std::to_string(n) + "," + std::to_string(seed) + ")";
    return out;
}

int64_t min_spectral_batch(int64_t widest_layer) {
    return static_cast<int64_t>(std::ceil(1.5 * static_cast<double>(widest_layer)));
}

std::vector<std::vector<int64_t>> batches(const DatasetHandle& h, const BatchPlan& plan,
                                          uint64_t epoch_seed) {
    if (plan.batch_size <= 0) throw Error("batches: batch_size must be positive");
    if (plan.spectral_widest_layer > 0) {
        int64_t need = min_spectral_batch(plan.spectral_widest_layer);
        if (plan.batch_size < need)
            throw Error("batches: batch size " + std::to_string(plan.batch_size) +
                        " violates the 1.5x widest-layer rule, minimum is " + std::to_string(need));
    }
    std::vector<int64_t> idx(static_cast<size_t>(h.count));
    for (int64_t i = 0; i < h.count; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(Rng::mix(epoch_seed, 0xba7c4));
    rng.shuffle(idx);

    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start + plan.batch_size <= h.count; start += plan.batch_size)
        out.emplace_back(idx.begin() + start, idx.begin() + start + plan.batch_size);
    int64_t used = static_cast<int64_t>(out.size()) * plan.batch_size;
    if (!plan.drop_last && used < h.count)
        out.emplace_back(idx.begin() + used, idx.end());
    return out;
}

}  // namespace specreg
