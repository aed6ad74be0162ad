#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "specreg/error.hpp"

namespace specreg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense n-d array of doubles with an optional gradient accumulator.
///
/// The value buffer is shared between copies (and reshape aliases); the grad
/// buffer lives next to it, so accumulation through any alias lands in the
/// same slot. Gradients are allocated lazily on first touch.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_vec(Shape shape, std::vector<double> v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return shape_numel(shape_); }

    // spans alias the payload: lvalue-only, so a temporary cannot leak one
    std::span<const double> value() const&;
    std::span<const double> value() const&& = delete;
    std::span<double> value_mut() &;
    double item() const;                       // scalar tensors only
    double at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    /// Gradient buffer; zeros are materialized on first access.
    std::span<const double> grad() const&;
    std::span<const double> grad() const&& = delete;
    std::span<double> grad_mut() &;
    void zero_grad();

    /// Alias with a new shape over the same value/grad storage.
    Tensor reshape(Shape new_shape) const;
    /// Value copy detached from any gradient bookkeeping.
    Tensor detach() const;

    struct Payload {
        std::vector<double> v;
        std::vector<double> g;          // empty until touched
        bool rg = false;
        bool is_node_output = false;    // set by Tape; grads reset per backward pass
    };

private:
    Shape shape_;
    std::shared_ptr<Payload> d_;

    void ensure_grad() const;
    friend class Tape;
};

enum class Reduction { mean, sum };

/// Reverse-mode tape. Ops are methods; each records a closure that pushes the
/// output's gradient into its parents. Creation order is topological order,
/// so one reverse sweep in backward() settles every gradient exactly once.
///
/// Leaf gradients accumulate across backward() calls (running twice doubles
/// them); gradients of node outputs are reset at the start of each pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // elementwise, same shape
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);

    // scalar constants
    Tensor add_scalar(const Tensor& a, double c);
    Tensor mul_scalar(const Tensor& a, double c);
    Tensor pow_scalar(const Tensor& a, double p);   // elementwise a^p

    // broadcast a length-N vector over the rows of a (B,N) matrix
    Tensor add_rowvec(const Tensor& m, const Tensor& v);
    Tensor sub_rowvec(const Tensor& m, const Tensor& v);
    Tensor mul_rowvec(const Tensor& m, const Tensor& v);

    // elementwise multiply by a constant vector (no gradient into the weights)
    Tensor mul_constvec(const Tensor& a, const std::vector<double>& w);
    // divide every element by a scalar tensor (shape {1})
    Tensor div_scalar_tensor(const Tensor& a, const Tensor& s);

    Tensor sigmoid(const Tensor& a);
    Tensor relu(const Tensor& a);

    Tensor sum(const Tensor& a);                    // -> scalar
    Tensor mean_rows(const Tensor& m);              // (B,N) -> (N)

    Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
    Tensor transpose(const Tensor& a);              // 2-d

    Tensor slice1d(const Tensor& v, int64_t begin, int64_t end);
    Tensor index1d(const Tensor& v, int64_t i);     // -> shape {1}
    Tensor trace(const Tensor& a);                  // -> shape {1}
    Tensor add_scaled_identity(const Tensor& a, const Tensor& c);  // a + c*I, c shape {1}

    /// Lower Cholesky factor of a symmetric positive-definite matrix,
    /// differentiable w.r.t. the input.
    Tensor cholesky(const Tensor& a);
    /// Solves L Y = B for Y with L lower triangular (treated dense).
    Tensor tri_solve_lower(const Tensor& l, const Tensor& b);
    /// diag(V^T sigma V) with V held constant; gradient is sum_n gbar_n v_n v_n^T.
    Tensor quad_diag(const Tensor& sigma, const std::vector<double>& v_cols, int64_t n);

    /// Mean (or sum) softmax cross-entropy over the batch, max-stabilized.
    Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                 Reduction red = Reduction::mean);

    // conv plumbing: (B,C,H,W) -> (B*OH*OW, C*KH*KW) patches, stride 1, no padding
    Tensor im2col(const Tensor& x, int64_t kh, int64_t kw);
    // 2x2 stride-2 max pool; gradient routed to argmax positions
    Tensor maxpool2x2(const Tensor& x);
    // (B,H,W,C) -> (B,C,H,W) relayout
    Tensor nhwc_to_nchw(const Tensor& x);

    /// Fill grad slots with d(root)/d(leaf) for every requires_grad leaf.
    void backward(const Tensor& root);

    size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        std::function<void()> backward;
        std::shared_ptr<Tensor::Payload> out;
    };
    std::vector<Node> nodes_;

    Tensor make_output(Shape shape, std::vector<double> v,
                       std::initializer_list<const Tensor*> parents,
                       std::function<void()> bw);
    static bool any_rg(std::initializer_list<const Tensor*> parents);
};

// tape-free helpers
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Central-difference gradient of a scalar function, the test/baseline oracle:
/// (f(x+h e_i) - f(x-h e_i)) / (2h) per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double step);

}  // namespace specreg
