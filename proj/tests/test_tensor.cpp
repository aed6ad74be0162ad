#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "specreg/tensor.hpp"

using namespace specreg;
using oracles::expect_grad_matches;
using oracles::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("shape/data invariants") {
    CHECK_THROWS_AS(Tensor::from_vec({2, 3}, {1.0, 2.0}), Error);
    CHECK_THROWS_AS(Tensor::from_vec({0}, {}), Error);
    Tensor t = Tensor::from_vec({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    CHECK(t.at({1, 0}) == 3);
}

TEST_CASE("backward: sum of squares") {
    Tape tape;
    Tensor x = Tensor::from_vec({2}, {1.0, 2.0}, true);
    Tensor s = tape.sum(tape.mul(x, x));
    tape.backward(s);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward: constant root leaves grads zero") {
    Tape tape;
    Tensor x = Tensor::from_vec({2}, {1.0, 2.0}, true);
    Tensor c = Tensor::scalar(5.0);
    tape.backward(c);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward: rejects non-scalar roots") {
    Tape tape;
    Tensor x = Tensor::from_vec({2}, {1.0, 2.0}, true);
    Tensor y = tape.mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("backward twice doubles leaf accumulators") {
    Tape tape;
    Tensor x = Tensor::from_vec({2}, {1.0, 2.0}, true);
    Tensor s = tape.sum(tape.mul(x, x));
    tape.backward(s);
    tape.backward(s);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("finite differences: linear and quadratic sanity") {
    Tensor ones_in = Tensor::from_vec({3}, {0.3, -0.7, 2.0});
    Tensor g = finite_difference_gradient(
        [](const Tensor& x) {
            double s = 0;
            for (double v : x.value()) s += v;
            return s;
        },
        ones_in, 1e-4);
    for (double v : g.value()) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));

    Tensor x3 = Tensor::scalar(3.0);
    Tensor g2 = finite_difference_gradient(
        [](const Tensor& x) { return x.item() * x.item(); }, x3, 1e-4);
    CHECK(std::fabs(g2.item() - 6.0) < 1e-6);
}

TEST_CASE("autodiff matches finite differences: elementwise and reductions") {
    Tensor x = random_tensor({3, 4}, 11);
    Tensor w = random_tensor({3, 4}, 12);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.mul(t.add(v, w), v)); }, x);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.sigmoid(v)); }, x);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.relu(v)); }, x);
    expect_grad_matches(
        [&](Tape& t, const Tensor& v) { return t.sum(t.pow_scalar(t.add_scalar(t.mul(v, v), 0.5), -0.5)); },
        x);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.mean_rows(t.sub(v, w))); }, x);
}

TEST_CASE("autodiff matches finite differences: matmul in all transpose modes") {
    Tensor a = random_tensor({3, 4}, 21);
    Tensor b = random_tensor({4, 5}, 22);
    Tensor bt = random_tensor({5, 4}, 23);
    Tensor at = random_tensor({4, 3}, 24);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.matmul(v, b)); }, a);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.matmul(a, v)); }, b);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.matmul(v, bt, false, true)); }, a);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.matmul(v, b, true, false)); }, at);
    expect_grad_matches([&](Tape& t, const Tensor& v) { return t.sum(t.matmul(v, v, true, false)); }, a);
    expect_grad_matches(
        [&](Tape& t, const Tensor& v) { return t.sum(t.matmul(at, v, true, true)); }, a);
    expect_grad_matches(
        [&](Tape& t, const Tensor& v) { return t.sum(t.matmul(v, a, true, true)); }, at);
}

TEST_CASE("autodiff matches finite differences: broadcast and slicing ops") {
    Tensor m = random_tensor({4, 3}, 31);
    Tensor v = random_tensor({3}, 32);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.sum(t.add_rowvec(m, u)); }, v);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.sum(t.mul_rowvec(u, v)); }, m);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.sum(t.sub_rowvec(u, v)); }, m);
    Tensor vec = random_tensor({6}, 33);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.sum(t.slice1d(u, 2, 5)); }, vec);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.index1d(u, 3); }, vec);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) { return t.div_scalar_tensor(t.index1d(u, 0), t.index1d(u, 1)); },
        Tensor::from_vec({2}, {0.7, 1.3}));
}

TEST_CASE("autodiff matches finite differences: trace and scaled identity") {
    Tensor a = random_tensor({4, 4}, 41);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.trace(u); }, a);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) {
            return t.sum(t.mul(t.add_scaled_identity(u, t.trace(u)), u));
        },
        a);
}

TEST_CASE("autodiff matches finite differences: cross entropy") {
    Tensor logits = random_tensor({4, 5}, 51, -2, 2);
    std::vector<int> labels = {0, 3, 2, 4};
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) { return t.softmax_cross_entropy(u, labels); }, logits);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) { return t.softmax_cross_entropy(u, labels, Reduction::sum); },
        logits);
}

TEST_CASE("autodiff matches finite differences: im2col, maxpool, relayout") {
    Tensor x = random_tensor({2, 2, 5, 5}, 61);
    Tensor w = random_tensor({3, 2 * 2 * 2}, 62);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) { return t.sum(t.matmul(t.im2col(u, 2, 2), w, false, true)); }, x);
    expect_grad_matches([&](Tape& t, const Tensor& u) { return t.sum(t.maxpool2x2(u)); }, x);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) {
            Tensor y = t.nhwc_to_nchw(u.reshape({2, 5, 5, 2}));
            return t.sum(t.mul(y, y));
        },
        x);
}

TEST_CASE("autodiff matches finite differences: cholesky and triangular solve") {
    // feed a symmetric+PD function of a free matrix through the factorization
    Tensor m = random_tensor({3, 3}, 71, -0.5, 0.5);
    Tensor rhs = random_tensor({3, 2}, 72);
    auto spd_chain = [&](Tape& t, const Tensor& u) {
        Tensor sym = t.add_scaled_identity(t.matmul(u, u, true, false), Tensor::scalar(2.0));
        Tensor l = t.cholesky(sym);
        return t.sum(t.mul(l, l));
    };
    expect_grad_matches(spd_chain, m);
    auto solve_chain = [&](Tape& t, const Tensor& u) {
        Tensor sym = t.add_scaled_identity(t.matmul(u, u, true, false), Tensor::scalar(2.0));
        Tensor l = t.cholesky(sym);
        Tensor y = t.tri_solve_lower(l, rhs);
        return t.sum(t.mul(y, y));
    };
    expect_grad_matches(solve_chain, m);
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) {
            Tensor sym = t.add_scaled_identity(t.matmul(m, m, true, false), Tensor::scalar(2.0));
            return t.sum(t.mul(t.tri_solve_lower(t.cholesky(sym), u), rhs));
        },
        rhs);
}

TEST_CASE("autodiff matches finite differences: quad_diag") {
    Tensor sigma = random_tensor({4, 4}, 81);
    std::vector<double> v = oracles::random_symmetric(4, 82);  // any fixed matrix works as constant
    expect_grad_matches(
        [&](Tape& t, const Tensor& u) { return t.sum(t.quad_diag(u, v, 4)); }, sigma);
}

TEST_CASE("reshape aliases storage and gradients") {
    Tape tape;
    Tensor x = Tensor::from_vec({4}, {1, 2, 3, 4}, true);
    Tensor m = x.reshape({2, 2});
    Tensor s = tape.sum(tape.mul(m, m));
    tape.backward(s);
    CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("cross entropy rejects bad labels") {
    Tape tape;
    Tensor logits = Tensor::from_vec({1, 3}, {0.0, 1.0, 2.0});
    CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {3}), Error);
    CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, {-1}), Error);
}

}  // TEST_SUITE
