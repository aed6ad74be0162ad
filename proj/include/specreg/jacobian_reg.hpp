#pragma once

#include <functional>
#include <span>

#include "specreg/network.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

struct JacobianConfig {
    double beta_j = 0.01;
    double fd_step = 0.01;
    void validate() const;
};

/// Scalar sum-loss of a batch of inputs, recorded on the given tape.
using BatchLossFn = std::function<Tensor(Tape&, const Tensor& inputs)>;

/// (beta_j/B) * sum_n ||dL/ds_n||^2, value only. Tensors in `isolate` are
/// held out of the gradient graph for the duration of the pass.
double jacobian_penalty_value(const BatchLossFn& loss, const Tensor& inputs,
                              const JacobianConfig& cfg, std::span<Tensor> isolate = {});

/// Penalty value plus its parameter gradient, accumulated into params' grad
/// slots. The second-order term is taken by the central-difference
/// directional trick: grad_theta ||g||^2 ~= ||g|| (grad_theta L(s + r ghat)
/// - grad_theta L(s - r ghat)) / r with r = fd_step * (1 + ||s||).
double jacobian_penalty(const BatchLossFn& loss, const Tensor& inputs,
                        std::span<Tensor> params, const JacobianConfig& cfg);

/// Sum cross-entropy of a classifier as a BatchLossFn. Running statistics
/// are never updated by these passes.
BatchLossFn make_sum_ce_loss(Network& net, const std::vector<int>& labels, Mode mode);

}  // namespace specreg
