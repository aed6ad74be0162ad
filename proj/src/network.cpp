#include "specreg/network.hpp"

#include <cmath>

#include "specreg/linalg.hpp"
#include "specreg/rng.hpp"

namespace specreg {

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::whitening: return "whitening";
        case LayerKind::activation: return "activation";
    }
    return "?";
}

const char* to_string(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::sigmoid: return "sigmoid";
        case Activation::relu: return "relu";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "relu") return Activation::relu;
    throw Error("unknown activation '" + s + "'");
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "maxpool2d") return LayerKind::maxpool2d;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "whitening") return LayerKind::whitening;
    if (s == "activation") return LayerKind::activation;
    throw Error("unknown layer kind '" + s + "'");
}

LayerSpec LayerSpec::dense_layer(int64_t width, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.width = width;
    s.activation = act;
    return s;
}
LayerSpec LayerSpec::conv_layer(int64_t out_ch, int64_t kh, int64_t kw, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.out_channels = out_ch;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.activation = act;
    return s;
}
LayerSpec LayerSpec::maxpool_layer() { LayerSpec s; s.kind = LayerKind::maxpool2d; return s; }
LayerSpec LayerSpec::batchnorm_layer() { LayerSpec s; s.kind = LayerKind::batchnorm; return s; }
LayerSpec LayerSpec::whitening_layer() { LayerSpec s; s.kind = LayerKind::whitening; return s; }
LayerSpec LayerSpec::activation_layer(Activation act) {
    LayerSpec s;
    s.kind = LayerKind::activation;
    s.activation = act;
    return s;
}

// ------------------------------------------------------------- batch norm

Tensor batchnorm_forward(Tape& tape, const Tensor& x, BatchNormState& st, Mode mode,
                         bool update_stats) {
    if (x.ndim() != 2) throw Error("batchnorm: want (B,N) input");
    int64_t bsz = x.dim(0), n = x.dim(1);
    if (mode == Mode::train) {
        if (bsz < 2) throw Error("batchnorm: train mode needs batch size >= 2");
        Tensor mu = tape.mean_rows(x);
        Tensor xc = tape.sub_rowvec(x, mu);
        Tensor var = tape.mean_rows(tape.mul(xc, xc));
        Tensor inv = tape.pow_scalar(tape.add_scalar(var, st.eps), -0.5);
        Tensor xn = tape.mul_rowvec(xc, inv);
        Tensor out = tape.add_rowvec(tape.mul_rowvec(xn, st.gamma), st.beta);
        if (update_stats) {
            auto mv = mu.value();
            auto vv = var.value();
            double m = st.momentum;
            double unbias = static_cast<double>(bsz) / static_cast<double>(bsz - 1);
            for (int64_t j = 0; j < n; ++j) {
                st.run_mean[static_cast<size_t>(j)] = (1 - m) * st.run_mean[static_cast<size_t>(j)] + m * mv[static_cast<size_t>(j)];
                st.run_var[static_cast<size_t>(j)] = (1 - m) * st.run_var[static_cast<size_t>(j)] + m * unbias * vv[static_cast<size_t>(j)];
            }
        }
        return out;
    }
    std::vector<double> inv(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) inv[static_cast<size_t>(j)] = 1.0 / std::sqrt(st.run_var[static_cast<size_t>(j)] + st.eps);
    Tensor rm = Tensor::from_vec({n}, st.run_mean);
    Tensor ri = Tensor::from_vec({n}, std::move(inv));
    Tensor xn = tape.mul_rowvec(tape.sub_rowvec(x, rm), ri);
    return tape.add_rowvec(tape.mul_rowvec(xn, st.gamma), st.beta);
}

// ------------------------------------------------------------- whitening

Tensor whiten_forward(Tape& tape, const Tensor& x, WhiteningState& st, Mode mode,
                      bool update_stats) {
    if (x.ndim() != 2) throw Error("whitening: want (B,N) input");
    int64_t bsz = x.dim(0), n = x.dim(1);
    if (mode == Mode::train) {
        if (bsz < 2) throw Error("whitening: train mode needs batch size >= 2");
        Tensor mu = tape.mean_rows(x);
        Tensor xc = tape.sub_rowvec(x, mu);
        Tensor sigma = tape.mul_scalar(tape.matmul(xc, xc, true, false), 1.0 / static_cast<double>(bsz));
        Tensor jit = tape.mul_scalar(tape.trace(sigma), st.jitter_scale / static_cast<double>(n));
        Tensor r = tape.cholesky(tape.add_scaled_identity(sigma, jit));
        Tensor out = tape.transpose(tape.tri_solve_lower(r, tape.transpose(xc)));
        if (update_stats) {
            auto mv = mu.value();
            auto rv = r.value();
            double m = st.initialized ? st.momentum : 1.0;
            for (int64_t j = 0; j < n; ++j)
                st.run_mean[static_cast<size_t>(j)] = (1 - m) * st.run_mean[static_cast<size_t>(j)] + m * mv[static_cast<size_t>(j)];
            for (int64_t j = 0; j < n * n; ++j)
                st.run_chol[static_cast<size_t>(j)] = (1 - m) * st.run_chol[static_cast<size_t>(j)] + m * rv[static_cast<size_t>(j)];
            st.initialized = true;
        }
        return out;
    }
    Tensor rm = Tensor::from_vec({n}, st.run_mean);
    Tensor rc = Tensor::from_vec({n, n}, st.run_chol);
    Tensor xc = tape.sub_rowvec(x, rm);
    return tape.transpose(tape.tri_solve_lower(rc, tape.transpose(xc)));
}

Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                          Reduction red) {
    return tape.softmax_cross_entropy(logits, labels, red);
}

// ------------------------------------------------------------- network

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    resolve_shapes();
    init_params(cfg_.seed);
}

void Network::resolve_shapes() {
    if (cfg_.layers.empty()) throw Error("network: empty layer list");
    if (cfg_.class_count < 2) throw Error("network: class_count must be >= 2");

    int64_t c = 0, h = 0, w = 0;
    bool have_2d = false;
    if (cfg_.input_shape.size() == 3) { c = cfg_.input_shape[0]; h = cfg_.input_shape[1]; w = cfg_.input_shape[2]; have_2d = true; }
    else if (cfg_.input_shape.size() == 2) { c = 1; h = cfg_.input_shape[0]; w = cfg_.input_shape[1]; have_2d = true; }
    else if (cfg_.input_shape.size() == 1) { c = cfg_.input_shape[0]; }
    else throw Error("network: input_shape must have rank 1-3");
    input_flat_ = shape_numel(cfg_.input_shape);

    if (cfg_.layers[0].kind != LayerKind::dense && cfg_.layers[0].kind != LayerKind::conv2d)
        throw Error("network: first layer must be dense or conv2d");

    int64_t flat = input_flat_;
    layers_.clear();
    for (size_t i = 0; i < cfg_.layers.size(); ++i) {
        Layer L;
        L.spec = cfg_.layers[i];
        L.in_flat = flat;
        switch (L.spec.kind) {
            case LayerKind::dense:
                if (L.spec.width <= 0) throw Error("network: dense layer " + std::to_string(i) + " needs a width");
                L.out_flat = L.spec.width;
                have_2d = false;
                break;
            case LayerKind::conv2d: {
                if (!have_2d) throw Error("network: conv2d layer " + std::to_string(i) + " needs (C,H,W) input");
                if (L.spec.out_channels <= 0 || L.spec.kernel_h <= 0 || L.spec.kernel_w <= 0)
                    throw Error("network: conv2d layer " + std::to_string(i) + " needs channels and kernel size");
                L.input_is_2d = true;
                L.in_c = c; L.in_h = h; L.in_w = w;
                L.out_c = L.spec.out_channels;
                L.out_h = h - L.spec.kernel_h + 1;
                L.out_w = w - L.spec.kernel_w + 1;
                if (L.out_h <= 0 || L.out_w <= 0)
                    throw Error("network: conv2d layer " + std::to_string(i) + " kernel exceeds input");
                c = L.out_c; h = L.out_h; w = L.out_w;
                L.out_flat = c * h * w;
                break;
            }
            case LayerKind::maxpool2d: {
                if (!have_2d) throw Error("network: maxpool2d layer " + std::to_string(i) + " needs (C,H,W) input");
                L.input_is_2d = true;
                L.in_c = c; L.in_h = h; L.in_w = w;
                L.out_c = c; L.out_h = h / 2; L.out_w = w / 2;
                if (L.out_h == 0 || L.out_w == 0)
                    throw Error("network: maxpool2d layer " + std::to_string(i) + " input too small");
                c = L.out_c; h = L.out_h; w = L.out_w;
                L.out_flat = c * h * w;
                break;
            }
            case LayerKind::batchnorm:
            case LayerKind::whitening:
                have_2d = false;   // operates on the flattened view
                L.out_flat = flat;
                break;
            case LayerKind::activation:
                L.out_flat = flat;
                break;
        }
        flat = L.out_flat;
        layers_.push_back(std::move(L));
    }
    // hidden activation x^l ends where the next dense/conv block starts
    int block = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        bool last = i + 1 == layers_.size();
        bool next_starts = !last && (layers_[i + 1].spec.kind == LayerKind::dense ||
                                     layers_[i + 1].spec.kind == LayerKind::conv2d);
        if (last || next_starts) {
            layers_[i].ends_block = true;
            layers_[i].block = ++block;
        }
    }
    depth_ = block;
}

void Network::init_params(uint64_t seed) {
    auto uniform_tensor = [](Shape shape, double bound, Rng& rng) {
        int64_t n = shape_numel(shape);
        std::vector<double> v(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = rng.uniform(-bound, bound);
        return Tensor::from_vec(std::move(shape), std::move(v), true);
    };
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& L = layers_[i];
        Rng rng(Rng::mix(seed, i));
        switch (L.spec.kind) {
            case LayerKind::dense: {
                double bound = std::sqrt(6.0 / static_cast<double>(L.in_flat + L.out_flat));
                L.weight = uniform_tensor({L.out_flat, L.in_flat}, bound, rng);
                L.bias = Tensor::zeros({L.out_flat}, true);
                break;
            }
            case LayerKind::conv2d: {
                int64_t fan_in = L.in_c * L.spec.kernel_h * L.spec.kernel_w;
                int64_t fan_out = L.out_c * L.spec.kernel_h * L.spec.kernel_w;
                double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                L.weight = uniform_tensor({L.out_c, fan_in}, bound, rng);
                L.bias = Tensor::zeros({L.out_c}, true);
                break;
            }
            case LayerKind::batchnorm:
                L.bn.gamma = Tensor::full({L.out_flat}, 1.0, true);
                L.bn.beta = Tensor::zeros({L.out_flat}, true);
                L.bn.run_mean.assign(static_cast<size_t>(L.out_flat), 0.0);
                L.bn.run_var.assign(static_cast<size_t>(L.out_flat), 1.0);
                break;
            case LayerKind::whitening: {
                L.wh.run_mean.assign(static_cast<size_t>(L.out_flat), 0.0);
                L.wh.run_chol.assign(static_cast<size_t>(L.out_flat * L.out_flat), 0.0);
                for (int64_t j = 0; j < L.out_flat; ++j) L.wh.run_chol[static_cast<size_t>(j * L.out_flat + j)] = 1.0;
                L.wh.initialized = false;
                break;
            }
            default: break;
        }
    }
    int64_t last = layers_.back().out_flat;
    Rng rng(Rng::mix(seed, 0x4ead));
    double bound = std::sqrt(6.0 / static_cast<double>(last + cfg_.class_count));
    readout_w_ = uniform_tensor({cfg_.class_count, last}, bound, rng);
    readout_b_ = Tensor::zeros({static_cast<int64_t>(cfg_.class_count)}, true);
    collect_params();
}

void Network::collect_params() {
    params_.clear();
    param_names_.clear();
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& L = layers_[i];
        std::string tag = "L" + std::to_string(i);
        if (L.spec.kind == LayerKind::dense || L.spec.kind == LayerKind::conv2d) {
            params_.push_back(L.weight);
            param_names_.push_back(tag + ".W");
            params_.push_back(L.bias);
            param_names_.push_back(tag + ".b");
        } else if (L.spec.kind == LayerKind::batchnorm) {
            params_.push_back(L.bn.gamma);
            param_names_.push_back(tag + ".gamma");
            params_.push_back(L.bn.beta);
            param_names_.push_back(tag + ".beta");
        }
    }
    params_.push_back(readout_w_);
    param_names_.push_back("readout.W");
    params_.push_back(readout_b_);
    param_names_.push_back("readout.b");
}

void Network::zero_grads() {
    for (Tensor& p : params_) p.zero_grad();
}

int64_t Network::hidden_width(int l) const {
    for (const Layer& L : layers_)
        if (L.ends_block && L.block == l) return L.out_flat;
    throw Error("network: no hidden layer " + std::to_string(l) + ", depth is " + std::to_string(depth_));
}

int64_t Network::widest_hidden() const {
    int64_t w = 0;
    for (const Layer& L : layers_)
        if (L.ends_block) w = std::max(w, L.out_flat);
    return w;
}

static Tensor apply_activation(Tape& tape, Activation a, const Tensor& t) {
    switch (a) {
        case Activation::none: return t;
        case Activation::sigmoid: return tape.sigmoid(t);
        case Activation::relu: return tape.relu(t);
    }
    throw Error("bad activation");
}

ActivationRecord Network::forward(Tape& tape, const Tensor& batch, Mode mode) {
    return forward(tape, batch, mode, mode == Mode::train);
}

ActivationRecord Network::forward(Tape& tape, const Tensor& batch, Mode mode, bool update_stats) {
    if (batch.ndim() != 2 || batch.dim(1) != input_flat_)
        throw Error("forward: input shape " + shape_str(batch.shape()) + " does not match layer 0 (want (B," +
                    std::to_string(input_flat_) + "))");
    int64_t bsz = batch.dim(0);
    ActivationRecord rec;
    Tensor cur = batch;
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& L = layers_[i];
        switch (L.spec.kind) {
            case LayerKind::dense: {
                if (cur.ndim() != 2) cur = cur.reshape({bsz, L.in_flat});
                cur = tape.add_rowvec(tape.matmul(cur, L.weight, false, true), L.bias);
                cur = apply_activation(tape, L.spec.activation, cur);
                break;
            }
            case LayerKind::conv2d: {
                if (cur.ndim() != 4) cur = cur.reshape({bsz, L.in_c, L.in_h, L.in_w});
                Tensor cols = tape.im2col(cur, L.spec.kernel_h, L.spec.kernel_w);
                Tensor y = tape.add_rowvec(tape.matmul(cols, L.weight, false, true), L.bias);
                cur = tape.nhwc_to_nchw(y.reshape({bsz, L.out_h, L.out_w, L.out_c}));
                cur = apply_activation(tape, L.spec.activation, cur);
                break;
            }
            case LayerKind::maxpool2d: {
                if (cur.ndim() != 4) cur = cur.reshape({bsz, L.in_c, L.in_h, L.in_w});
                cur = tape.maxpool2x2(cur);
                break;
            }
            case LayerKind::batchnorm: {
                if (cur.ndim() != 2) cur = cur.reshape({bsz, L.in_flat});
                cur = batchnorm_forward(tape, cur, L.bn, mode, update_stats);
                break;
            }
            case LayerKind::whitening: {
                if (cur.ndim() != 2) cur = cur.reshape({bsz, L.in_flat});
                cur = whiten_forward(tape, cur, L.wh, mode, update_stats);
                break;
            }
            case LayerKind::activation:
                cur = apply_activation(tape, L.spec.activation, cur);
                break;
        }
        if (L.ends_block) rec.hidden.push_back(cur.ndim() == 2 ? cur : cur.reshape({bsz, L.out_flat}));
    }
    Tensor last = rec.hidden.back();
    rec.logits = tape.add_rowvec(tape.matmul(last, readout_w_, false, true), readout_b_);
    return rec;
}

}  // namespace specreg
