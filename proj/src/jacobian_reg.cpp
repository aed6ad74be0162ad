#include "specreg/jacobian_reg.hpp"

#include <cmath>

namespace specreg {

void JacobianConfig::validate() const {
    if (beta_j < 0) throw Error("jacobian: beta_j must be >= 0");
    if (fd_step <= 0) throw Error("jacobian: fd_step must be > 0");
}

namespace {

// compute dL/ds for the batch; parameters kept out of the graph
std::vector<double> input_gradient(const BatchLossFn& loss, const Tensor& inputs) {
    Tape tape;
    Tensor x = inputs.detach();
    x.set_requires_grad(true);
    Tensor l = loss(tape, x);
    tape.backward(l);
    auto g = x.grad();
    return {g.begin(), g.end()};
}

// dL/dtheta at the given inputs, isolated from existing grad state
std::vector<std::vector<double>> param_gradient(const BatchLossFn& loss, const Tensor& inputs,
                                                std::span<Tensor> params) {
    std::vector<std::vector<double>> saved;
    saved.reserve(params.size());
    for (Tensor& p : params) {
        auto g = p.grad();
        saved.emplace_back(g.begin(), g.end());
        p.zero_grad();
    }
    {
        Tape tape;
        Tensor l = loss(tape, inputs);
        tape.backward(l);
    }
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        auto g = params[i].grad();
        out.emplace_back(g.begin(), g.end());
        auto gm = params[i].grad_mut();
        std::copy(saved[i].begin(), saved[i].end(), gm.begin());
    }
    return out;
}

}  // namespace

double jacobian_penalty_value(const BatchLossFn& loss, const Tensor& inputs,
                              const JacobianConfig& cfg, std::span<Tensor> isolate) {
    cfg.validate();
    FrozenParams guard(isolate);
    std::vector<double> g = input_gradient(loss, inputs);
    double sq = 0.0;
    for (double x : g) sq += x * x;
    return cfg.beta_j / static_cast<double>(inputs.dim(0)) * sq;
}

double jacobian_penalty(const BatchLossFn& loss, const Tensor& inputs,
                        std::span<Tensor> params, const JacobianConfig& cfg) {
    cfg.validate();
    int64_t bsz = inputs.dim(0);
    std::vector<double> g;
    {
        // input-gradient pass: parameters stay out of the graph
        FrozenParams guard(params);
        g = input_gradient(loss, inputs);
    }
    double sq = 0.0;
    for (double x : g) sq += x * x;
    double gnorm = std::sqrt(sq);
    double value = cfg.beta_j / static_cast<double>(bsz) * sq;
    if (gnorm == 0.0) return value;  // flat loss: no second-order term

    double snorm = 0.0;
    for (double x : inputs.value()) snorm += x * x;
    double r = cfg.fd_step * (1.0 + std::sqrt(snorm));

    auto shifted = [&](double dir) {
        std::vector<double> v(inputs.value().begin(), inputs.value().end());
        for (size_t i = 0; i < v.size(); ++i) v[i] += dir * r * g[i] / gnorm;
        return Tensor::from_vec(inputs.shape(), std::move(v));
    };
    auto gp = param_gradient(loss, shifted(+1.0), params);
    auto gm = param_gradient(loss, shifted(-1.0), params);

    double coef = cfg.beta_j / static_cast<double>(bsz) * gnorm / r;
    for (size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].grad_mut();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] += coef * (gp[i][j] - gm[i][j]);
    }
    return value;
}

BatchLossFn make_sum_ce_loss(Network& net, const std::vector<int>& labels, Mode mode) {
    return [&net, labels, mode](Tape& tape, const Tensor& inputs) {
        ActivationRecord rec = net.forward(tape, inputs, mode, /*update_stats=*/false);
        return cross_entropy_loss(tape, rec.logits, labels, Reduction::sum);
    };
}

}  // namespace specreg
