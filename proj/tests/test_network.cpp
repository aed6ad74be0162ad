#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "specreg/linalg.hpp"
#include "specreg/network.hpp"

using namespace specreg;
using oracles::random_tensor;

namespace {

NetworkConfig tiny_dense(int64_t in, std::vector<int64_t> widths, Activation act, uint64_t seed = 0) {
    NetworkConfig cfg;
    cfg.input_shape = {in};
    cfg.seed = seed;
    for (int64_t w : widths) cfg.layers.push_back(LayerSpec::dense_layer(w, act));
    return cfg;
}

void fill_param(Tensor& p, double v) {
    for (double& x : p.value_mut()) x = v;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("zero weights with sigmoid give 0.5 activations") {
    Network net(tiny_dense(5, {4}, Activation::sigmoid));
    for (Tensor& p : net.params()) fill_param(p, 0.0);
    Tape tape;
    ActivationRecord rec = net.forward(tape, random_tensor({3, 5}, 1), Mode::eval);
    for (double v : rec.hidden[0].value()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("identity-like 1x1 dense layer passes its input through") {
    Network net(tiny_dense(1, {1}, Activation::none));
    fill_param(net.params()[0], 1.0);  // W = [[1]]
    fill_param(net.params()[1], 0.0);
    Tape tape;
    ActivationRecord rec = net.forward(tape, Tensor::from_vec({1, 1}, {3.0}), Mode::eval);
    CHECK(rec.hidden[0].item() == doctest::Approx(3.0));
}

TEST_CASE("fixed 2-layer forward equals a straight-line recomputation") {
    Network net(tiny_dense(4, {3, 2}, Activation::sigmoid, 123));
    Tensor x = random_tensor({2, 4}, 5);
    Tape tape;
    ActivationRecord rec = net.forward(tape, x, Mode::eval);

    // independent recomputation with plain loops
    auto w1 = net.params()[0].value(), b1 = net.params()[1].value();
    auto w2 = net.params()[2].value(), b2 = net.params()[3].value();
    auto xv = x.value();
    for (int64_t b = 0; b < 2; ++b) {
        double h1[3];
        for (int i = 0; i < 3; ++i) {
            double s = b1[static_cast<size_t>(i)];
            for (int j = 0; j < 4; ++j) s += w1[static_cast<size_t>(i * 4 + j)] * xv[static_cast<size_t>(b * 4 + j)];
            h1[i] = 1.0 / (1.0 + std::exp(-s));
        }
        for (int i = 0; i < 2; ++i) {
            double s = b2[static_cast<size_t>(i)];
            for (int j = 0; j < 3; ++j) s += w2[static_cast<size_t>(i * 3 + j)] * h1[j];
            double expect = 1.0 / (1.0 + std::exp(-s));
            CHECK(rec.hidden[1].at({b, i}) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("forward is pure: identical inputs give bitwise-identical outputs") {
    Network net(tiny_dense(6, {5, 4}, Activation::relu, 9));
    Tensor x = random_tensor({3, 6}, 10);
    Tape t1, t2;
    Tensor la = net.forward(t1, x, Mode::eval).logits;
    Tensor lb = net.forward(t2, x, Mode::eval).logits;
    auto a = la.value();
    auto b = lb.value();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward rejects shape mismatches naming layer 0") {
    Network net(tiny_dense(6, {5}, Activation::relu));
    Tape tape;
    CHECK_THROWS_WITH_AS(net.forward(tape, random_tensor({3, 7}, 1), Mode::eval),
                         doctest::Contains("layer 0"), Error);
}

TEST_CASE("conv layer agrees with a direct quadruple-loop oracle exactly") {
    NetworkConfig cfg;
    cfg.input_shape = {2, 8, 8};
    cfg.layers = {LayerSpec::conv_layer(3, 3, 3, Activation::none)};
    Network net(cfg);
    net.init_params(77);
    Tensor x = random_tensor({2, 2 * 8 * 8}, 6);
    Tape tape;
    ActivationRecord rec = net.forward(tape, x, Mode::eval);

    auto w = net.params()[0].value();  // (OC, IC*KH*KW)
    auto bias = net.params()[1].value();
    auto xv = x.value();
    const int64_t oc_n = 3, ic_n = 2, kh = 3, kw = 3, h = 8, wdt = 8, oh = 6, ow = 6;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t oc = 0; oc < oc_n; ++oc)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t xx = 0; xx < ow; ++xx) {
                    double s = 0.0;
                    for (int64_t ic = 0; ic < ic_n; ++ic)
                        for (int64_t u = 0; u < kh; ++u)
                            for (int64_t v = 0; v < kw; ++v)
                                s += w[static_cast<size_t>(oc * (ic_n * kh * kw) + (ic * kh + u) * kw + v)] *
                                     xv[static_cast<size_t>(b * ic_n * h * wdt + (ic * h + y + u) * wdt + xx + v)];
                    s += bias[static_cast<size_t>(oc)];
                    double got = rec.hidden[0].at({b, (oc * oh + y) * ow + xx});
                    CHECK(got == s);  // bitwise: same accumulation order
                }
}

TEST_CASE("max-pool routes gradient only to argmax positions") {
    NetworkConfig cfg;
    cfg.input_shape = {1, 4, 4};
    cfg.layers = {LayerSpec::conv_layer(1, 1, 1, Activation::none), LayerSpec::maxpool_layer()};
    Network net(cfg);
    fill_param(net.params()[0], 1.0);
    fill_param(net.params()[1], 0.0);
    Tensor x = random_tensor({1, 16}, 8, 0.1, 0.9);
    Tape tape;
    Tensor xi = x.detach();
    xi.set_requires_grad(true);
    ActivationRecord rec = net.forward(tape, xi, Mode::eval);
    Tensor s = tape.sum(rec.hidden[0]);
    tape.backward(s);
    auto g = xi.grad();
    auto xv = x.value();
    // perturbation check: positive gradient exactly at each 2x2 argmax
    for (int64_t py = 0; py < 2; ++py)
        for (int64_t px = 0; px < 2; ++px) {
            int64_t best = -1;
            double bv = -1e300;
            for (int64_t u = 0; u < 2; ++u)
                for (int64_t v = 0; v < 2; ++v) {
                    int64_t i = (2 * py + u) * 4 + 2 * px + v;
                    if (xv[static_cast<size_t>(i)] > bv) { bv = xv[static_cast<size_t>(i)]; best = i; }
                }
            for (int64_t u = 0; u < 2; ++u)
                for (int64_t v = 0; v < 2; ++v) {
                    int64_t i = (2 * py + u) * 4 + 2 * px + v;
                    CHECK(g[static_cast<size_t>(i)] == (i == best ? 1.0 : 0.0));
                }
        }
}

TEST_CASE("batchnorm: constant batch collapses to the shift parameter") {
    Tape tape;
    BatchNormState st;
    st.gamma = Tensor::from_vec({3}, {1.0, 2.0, 0.5});
    st.beta = Tensor::from_vec({3}, {0.1, -0.2, 0.3});
    st.run_mean.assign(3, 0.0);
    st.run_var.assign(3, 1.0);
    Tensor x = Tensor::from_vec({4, 3}, std::vector<double>(12, 0.7));
    Tensor y = batchnorm_forward(tape, x, st, Mode::train, true);
    for (int64_t b = 0; b < 4; ++b)
        for (int64_t j = 0; j < 3; ++j)
            CHECK(y.at({b, j}) == doctest::Approx(st.beta.value()[static_cast<size_t>(j)]).epsilon(1e-9));
}

TEST_CASE("batchnorm: standardizes a random batch before scale/shift") {
    Tape tape;
    BatchNormState st;
    st.gamma = Tensor::full({5}, 1.0);
    st.beta = Tensor::zeros({5});
    st.run_mean.assign(5, 0.0);
    st.run_var.assign(5, 1.0);
    Tensor x = random_tensor({64, 5}, 15, -3, 5);
    Tensor y = batchnorm_forward(tape, x, st, Mode::train, true);
    for (int64_t j = 0; j < 5; ++j) {
        double m = 0, v = 0;
        for (int64_t b = 0; b < 64; ++b) m += y.at({b, j});
        m /= 64;
        for (int64_t b = 0; b < 64; ++b) v += (y.at({b, j}) - m) * (y.at({b, j}) - m);
        v /= 64;
        CHECK(std::fabs(m) <= 1e-9);
        CHECK(std::fabs(std::sqrt(v) - 1.0) <= 1e-4);  // eps-floored
    }
    // unit-variance zero-mean input passes through nearly unchanged
    Tensor z = batchnorm_forward(tape, y.detach(), st, Mode::train, false);
    for (int64_t b = 0; b < 4; ++b) CHECK(z.at({b, 0}) == doctest::Approx(y.at({b, 0})).epsilon(1e-4));
}

TEST_CASE("batchnorm train mode needs a real batch") {
    Tape tape;
    BatchNormState st;
    st.gamma = Tensor::full({2}, 1.0);
    st.beta = Tensor::zeros({2});
    st.run_mean.assign(2, 0.0);
    st.run_var.assign(2, 1.0);
    CHECK_THROWS_AS(batchnorm_forward(tape, random_tensor({1, 2}, 1), st, Mode::train, false), Error);
}

TEST_CASE("whitening: output has zero mean and identity covariance") {
    Tape tape;
    WhiteningState st;
    st.run_mean.assign(4, 0.0);
    st.run_chol.assign(16, 0.0);
    for (int i = 0; i < 4; ++i) st.run_chol[static_cast<size_t>(i * 4 + i)] = 1.0;
    Tensor x = random_tensor({32, 4}, 19, -2, 2);
    Tensor y = whiten_forward(tape, x, st, Mode::train, true);
    // sample mean ~ 0
    for (int64_t j = 0; j < 4; ++j) {
        double m = 0;
        for (int64_t b = 0; b < 32; ++b) m += y.at({b, j});
        CHECK(std::fabs(m / 32) <= 1e-9);
    }
    // sample covariance ~ I; deviation bounded by jitter/lambda_min, so give
    // the 1e-6 jitter scale one order of headroom
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            double s = 0;
            for (int64_t b = 0; b < 32; ++b) s += y.at({b, i}) * y.at({b, j});
            s /= 32;
            CHECK(std::fabs(s - (i == j ? 1.0 : 0.0)) <= 1e-5);
        }
}

TEST_CASE("whitening: hand-computable 2-unit batch multiplies by inv([[2,0],[1,2]])") {
    // points R z_b with z white: whitened output must recover z
    std::vector<double> r = {2, 0, 1, 2};
    std::vector<double> z = {1, 1, 1, -1, -1, 1, -1, -1};  // empirical cov exactly I
    std::vector<double> xv(8);
    for (int b = 0; b < 4; ++b)
        for (int i = 0; i < 2; ++i)
            xv[static_cast<size_t>(b * 2 + i)] =
                r[static_cast<size_t>(i * 2)] * z[static_cast<size_t>(b * 2)] +
                r[static_cast<size_t>(i * 2 + 1)] * z[static_cast<size_t>(b * 2 + 1)];
    Tape tape;
    WhiteningState st;
    st.run_mean.assign(2, 0.0);
    st.run_chol = {1, 0, 0, 1};
    Tensor y = whiten_forward(tape, Tensor::from_vec({4, 2}, xv), st, Mode::train, false);
    for (int64_t b = 0; b < 4; ++b)
        for (int64_t i = 0; i < 2; ++i)
            CHECK(y.at({b, i}) == doctest::Approx(z[static_cast<size_t>(b * 2 + i)]).epsilon(1e-5));
}

TEST_CASE("whitening eval mode applies frozen running statistics") {
    WhiteningState st;
    st.run_mean = {1.0, -1.0};
    st.run_chol = {2, 0, 1, 2};
    st.initialized = true;
    Tape tape;
    Tensor x = Tensor::from_vec({1, 2}, {3.0, 1.0});   // x - mu = (2, 2)
    Tensor y = whiten_forward(tape, x, st, Mode::eval, false);
    // R^{-1} (2,2): forward substitution gives (1, 0.5)
    CHECK(y.at({0, 0}) == doctest::Approx(1.0));
    CHECK(y.at({0, 1}) == doctest::Approx(0.5));
}

TEST_CASE("cross entropy: uniform, hand-computed, one-hot limit") {
    Tape tape;
    Tensor uniform = Tensor::zeros({2, 10});
    CHECK(cross_entropy_loss(tape, uniform, {3, 7}).item() == doctest::Approx(std::log(10.0)));
    Tensor abc = Tensor::from_vec({1, 3}, {1.0, 2.0, 3.0});
    CHECK(cross_entropy_loss(tape, abc, {2}).item() == doctest::Approx(0.40760596444438046));
    std::vector<double> hot(10, 0.0);
    hot[4] = 40.0;
    CHECK(cross_entropy_loss(tape, Tensor::from_vec({1, 10}, hot), {4}).item() <= 1e-6);
}

TEST_CASE("init: deterministic per seed, spread matches the scheme") {
    Network a(tiny_dense(784, {100}, Activation::sigmoid, 5));
    Network b(tiny_dense(784, {100}, Activation::sigmoid, 5));
    auto av = a.params()[0].value(), bv = b.params()[0].value();
    for (size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);

    Network c(tiny_dense(784, {100}, Activation::sigmoid, 6));
    bool differs = false;
    for (size_t i = 0; i < av.size(); ++i)
        if (av[i] != c.params()[0].value()[i]) { differs = true; break; }
    CHECK(differs);

    double m = 0, v = 0;
    for (double x : av) m += x;
    m /= static_cast<double>(av.size());
    for (double x : av) v += (x - m) * (x - m);
    v /= static_cast<double>(av.size());
    double target = std::sqrt(6.0 / (784 + 100)) / std::sqrt(3.0);  // uniform(-a,a) std
    CHECK(std::fabs(std::sqrt(v) - target) <= 0.1 * target);
    for (double x : a.params()[1].value()) CHECK(x == 0.0);
}

TEST_CASE("gradients through every layer stack match finite differences") {
    // dense+batchnorm+sigmoid, whitening, conv+pool stacks, probed at sampled weights
    std::vector<int> labels = {1, 0, 2, 1, 0, 2, 1, 0};
    auto check_net = [&](Network& net, const Tensor& x, int param_idx) {
        Tensor& p = net.params()[static_cast<size_t>(param_idx)];
        // autodiff
        net.zero_grads();
        Tape tape;
        ActivationRecord rec = net.forward(tape, x, Mode::train, false);
        Tensor loss = cross_entropy_loss(tape, rec.logits, labels);
        tape.backward(loss);
        std::vector<double> ad(p.grad().begin(), p.grad().end());
        // finite differences over a sample of coordinates
        Rng rng(4242);
        auto w = p.value_mut();
        int64_t count = std::min<int64_t>(10, static_cast<int64_t>(w.size()));
        for (int64_t t = 0; t < count; ++t) {
            size_t i = static_cast<size_t>(rng.uniform_int(w.size()));
            double keep = w[i], h = 1e-5;
            w[i] = keep + h;
            Tape tp;
            double fp = cross_entropy_loss(tp, net.forward(tp, x, Mode::train, false).logits, labels).item();
            w[i] = keep - h;
            Tape tm;
            double fm = cross_entropy_loss(tm, net.forward(tm, x, Mode::train, false).logits, labels).item();
            w[i] = keep;
            double fd = (fp - fm) / (2 * h);
            INFO("param ", param_idx, " coord ", i, ": ", ad[i], " vs ", fd);
            CHECK(oracles::close(ad[i], fd, 1e-3, 1e-6));
        }
    };

    {
        NetworkConfig cfg;
        cfg.input_shape = {6};
        cfg.class_count = 3;
        cfg.layers = {LayerSpec::dense_layer(5), LayerSpec::batchnorm_layer(),
                      LayerSpec::activation_layer(Activation::sigmoid)};
        Network net(cfg);
        net.init_params(31);
        Tensor x = random_tensor({8, 6}, 32);
        for (int p = 0; p < static_cast<int>(net.params().size()); ++p) check_net(net, x, p);
    }
    {
        NetworkConfig cfg;
        cfg.input_shape = {6};
        cfg.class_count = 3;
        cfg.layers = {LayerSpec::dense_layer(4, Activation::relu), LayerSpec::whitening_layer(),
                      LayerSpec::dense_layer(4, Activation::sigmoid)};
        Network net(cfg);
        net.init_params(33);
        Tensor x = random_tensor({8, 6}, 34);
        for (int p = 0; p < static_cast<int>(net.params().size()); ++p) check_net(net, x, p);
    }
    {
        NetworkConfig cfg;
        cfg.input_shape = {1, 6, 6};
        cfg.class_count = 3;
        cfg.layers = {LayerSpec::conv_layer(2, 3, 3, Activation::relu), LayerSpec::maxpool_layer(),
                      LayerSpec::dense_layer(4, Activation::sigmoid)};
        Network net(cfg);
        net.init_params(35);
        Tensor x = random_tensor({8, 36}, 36, 0, 1);
        for (int p = 0; p < static_cast<int>(net.params().size()); ++p) check_net(net, x, p);
    }
}

TEST_CASE("checkpoint round trip restores parameters and running state bitwise") {
    NetworkConfig cfg;
    cfg.input_shape = {6};
    cfg.layers = {LayerSpec::dense_layer(5), LayerSpec::batchnorm_layer(),
                  LayerSpec::activation_layer(Activation::sigmoid), LayerSpec::whitening_layer()};
    Network net(cfg);
    net.init_params(40);
    // push some state through so running stats are nontrivial
    Tape tape;
    net.forward(tape, random_tensor({8, 6}, 41), Mode::train);
    std::string path = (std::filesystem::temp_directory_path() / "specreg_ckpt_test.bin").string();
    net.save_checkpoint(path);

    Network other(cfg);
    other.init_params(99);
    other.load_checkpoint(path);
    for (size_t i = 0; i < net.params().size(); ++i) {
        auto a = net.params()[i].value(), b = other.params()[i].value();
        for (size_t j = 0; j < a.size(); ++j) REQUIRE(a[j] == b[j]);
    }
    Tape t1, t2;
    Tensor x = random_tensor({4, 6}, 42);
    Tensor ta = net.forward(t1, x, Mode::eval).logits;
    Tensor tb = other.forward(t2, x, Mode::eval).logits;
    auto la = ta.value();
    auto lb = tb.value();
    for (size_t j = 0; j < la.size(); ++j) CHECK(la[j] == lb[j]);
}

TEST_CASE("network geometry: widest layer and depth") {
    NetworkConfig cfg;
    cfg.input_shape = {1, 28, 28};
    cfg.layers = {LayerSpec::conv_layer(16, 3, 3, Activation::relu), LayerSpec::maxpool_layer(),
                  LayerSpec::conv_layer(32, 3, 3, Activation::relu), LayerSpec::maxpool_layer(),
                  LayerSpec::dense_layer(1000, Activation::relu)};
    Network net(cfg);
    CHECK(net.depth() == 3);
    CHECK(net.hidden_width(1) == 16 * 13 * 13);
    CHECK(net.hidden_width(2) == 32 * 5 * 5);
    CHECK(net.hidden_width(3) == 1000);
    CHECK(net.widest_hidden() == 16 * 13 * 13);
}

}  // TEST_SUITE
