#include "specreg/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "specreg/rng.hpp"

namespace specreg {

const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd";
        case AttackKind::white_noise: return "white_noise";
    }
    return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "pgd") return AttackKind::pgd;
    if (s == "white_noise") return AttackKind::white_noise;
    throw Error("unknown attack kind '" + s + "'");
}

void AttackConfig::validate() const {
    for (double e : epsilons)
        if (e < 0) throw Error("attack: epsilon must be >= 0");
    if (kind == AttackKind::pgd && steps < 1) throw Error("attack: pgd needs steps >= 1");
    if (kind == AttackKind::pgd && eta <= 0) throw Error("attack: pgd needs eta > 0");
    if (clip_hi <= clip_lo) throw Error("attack: empty clip range");
}

namespace {

std::vector<double> input_grad(const BatchLossFn& loss, const Tensor& x) {
    Tape tape;
    Tensor xi = x.detach();
    xi.set_requires_grad(true);
    Tensor l = loss(tape, xi);
    tape.backward(l);
    auto g = xi.grad();
    return {g.begin(), g.end()};
}

}  // namespace

BatchLossFn make_attack_loss(Network& net, const std::vector<int>& labels) {
    return [&net, labels](Tape& tape, const Tensor& inputs) {
        FrozenParams guard(net.params());
        ActivationRecord rec = net.forward(tape, inputs, Mode::eval, /*update_stats=*/false);
        return cross_entropy_loss(tape, rec.logits, labels, Reduction::sum);
    };
}

Tensor fgsm(const BatchLossFn& loss, const Tensor& s, double eps, double clip_lo, double clip_hi) {
    std::vector<double> g = input_grad(loss, s);
    std::vector<double> v(s.value().begin(), s.value().end());
    for (size_t i = 0; i < v.size(); ++i) {
        double sign = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
        v[i] = std::clamp(v[i] + eps * sign, clip_lo, clip_hi);
    }
    return Tensor::from_vec(s.shape(), std::move(v));
}

Tensor fgsm(Network& net, const Tensor& s, const std::vector<int>& y, double eps, double clip_lo,
            double clip_hi) {
    return fgsm(make_attack_loss(net, y), s, eps, clip_lo, clip_hi);
}

Tensor pgd(const BatchLossFn& loss, const Tensor& s, double eps, double eta, int steps,
           double clip_lo, double clip_hi, bool random_start, uint64_t seed) {
    std::vector<double> base(s.value().begin(), s.value().end());
    std::vector<double> delta(base.size(), 0.0);
    if (random_start) {
        Rng rng(Rng::mix(seed, 0x96d));
        for (double& d : delta) d = rng.uniform(-eps, eps);
    }
    for (int step = 0; step < steps; ++step) {
        std::vector<double> v(base.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = base[i] + delta[i];
        std::vector<double> g = input_grad(loss, Tensor::from_vec(s.shape(), std::move(v)));
        for (size_t i = 0; i < delta.size(); ++i)
            delta[i] = std::clamp(delta[i] + eta * g[i], -eps, eps);
    }
    std::vector<double> out(base.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(base[i] + delta[i], clip_lo, clip_hi);
    return Tensor::from_vec(s.shape(), std::move(out));
}

Tensor pgd(Network& net, const Tensor& s, const std::vector<int>& y, double eps, double eta,
           int steps, double clip_lo, double clip_hi) {
    return pgd(make_attack_loss(net, y), s, eps, eta, steps, clip_lo, clip_hi);
}

Tensor white_noise(const Tensor& s, double sigma, double clip_lo, double clip_hi, uint64_t seed) {
    if (sigma < 0) throw Error("white_noise: sigma must be >= 0");
    std::vector<double> v(s.value().begin(), s.value().end());
    if (sigma > 0) {
        Rng rng(Rng::mix(seed, 0x015e));
        for (double& x : v) x = std::clamp(x + sigma * rng.normal(), clip_lo, clip_hi);
    }
    return Tensor::from_vec(s.shape(), std::move(v));
}

RobustnessCurve robustness_curve(Network& net, const DatasetHandle& data, const AttackConfig& cfg,
                                 const std::string& model_id, uint64_t seed) {
    cfg.validate();
    int64_t n = cfg.n_images > 0 ? std::min(cfg.n_images, data.count) : data.count;
    const int64_t chunk = 256;

    RobustnessCurve curve;
    curve.kind = cfg.kind;
    curve.model_id = model_id;
    curve.seed = seed;

    // clean pass
    {
        int64_t hits = 0;
        FrozenParams guard(net.params());
        for (int64_t start = 0; start < n; start += chunk) {
            int64_t end = std::min(n, start + chunk);
            std::vector<int64_t> idx(static_cast<size_t>(end - start));
            for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
            Tape tape;
            ActivationRecord rec = net.forward(tape, data.image_batch(idx), Mode::eval, false);
            auto labels = data.label_batch(idx);
            hits += static_cast<int64_t>(std::lround(accuracy(rec.logits, labels) * static_cast<double>(labels.size())));
        }
        curve.clean_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    }

    for (size_t ei = 0; ei < cfg.epsilons.size(); ++ei) {
        double eps = cfg.epsilons[ei];
        int64_t hits = 0;
        for (int64_t start = 0; start < n; start += chunk) {
            int64_t end = std::min(n, start + chunk);
            std::vector<int64_t> idx(static_cast<size_t>(end - start));
            for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
            Tensor batch = data.image_batch(idx);
            auto labels = data.label_batch(idx);
            Tensor adv;
            switch (cfg.kind) {
                case AttackKind::fgsm:
                    adv = fgsm(make_attack_loss(net, labels), batch, eps, cfg.clip_lo, cfg.clip_hi);
                    break;
                case AttackKind::pgd:
                    adv = pgd(make_attack_loss(net, labels), batch, eps, cfg.eta, cfg.steps,
                              cfg.clip_lo, cfg.clip_hi, cfg.random_start,
                              Rng::mix(seed, 0xad0 + ei * 1024 + static_cast<uint64_t>(start)));
                    break;
                case AttackKind::white_noise:
                    adv = white_noise(batch, eps, cfg.clip_lo, cfg.clip_hi,
                                      Rng::mix(Rng::mix(seed, cfg.noise_seed),
                                               0x401 + ei * 1024 + static_cast<uint64_t>(start)));
                    break;
            }
            FrozenParams guard(net.params());
            Tape tape;
            ActivationRecord rec = net.forward(tape, adv, Mode::eval, false);
            hits += static_cast<int64_t>(std::lround(accuracy(rec.logits, labels) * static_cast<double>(labels.size())));
        }
        curve.points.push_back({eps, static_cast<double>(hits) / static_cast<double>(n), n});
    }
    return curve;
}

}  // namespace specreg
