#include "specreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "specreg/linalg.hpp"

namespace specreg {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_vec(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n), v);
    return from_vec(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_vec(Shape shape, std::vector<double> v, bool requires_grad) {
    int64_t n = shape_numel(shape);
    for (int64_t d : shape)
        if (d <= 0) throw Error("tensor: non-positive extent in shape " + shape_str(shape));
    if (v.empty()) v.assign(static_cast<size_t>(n), 0.0);
    if (static_cast<int64_t>(v.size()) != n)
        throw Error("tensor: data length " + std::to_string(v.size()) +
                    " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.d_ = std::make_shared<Payload>();
    t.d_->v = std::move(v);
    t.d_->rg = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_vec({1}, {v}, requires_grad);
}

std::span<const double> Tensor::value() const& { return {d_->v.data(), d_->v.size()}; }
std::span<double> Tensor::value_mut() & { return {d_->v.data(), d_->v.size()}; }

double Tensor::item() const {
    if (numel() != 1) throw Error("item(): tensor has " + std::to_string(numel()) + " elements");
    return d_->v[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) throw Error("at(): rank mismatch");
    int64_t flat = 0, i = 0;
    for (int64_t ix : idx) { flat = flat * shape_[static_cast<size_t>(i)] + ix; ++i; }
    return d_->v[static_cast<size_t>(flat)];
}

bool Tensor::requires_grad() const { return d_ && d_->rg; }
void Tensor::set_requires_grad(bool rg) { d_->rg = rg; }

void Tensor::ensure_grad() const {
    if (d_->g.empty()) d_->g.assign(d_->v.size(), 0.0);
}

std::span<const double> Tensor::grad() const& {
    ensure_grad();
    return {d_->g.data(), d_->g.size()};
}

std::span<double> Tensor::grad_mut() & {
    ensure_grad();
    return {d_->g.data(), d_->g.size()};
}

void Tensor::zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), 0.0);
}

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw Error("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.d_ = d_;
    return t;
}

Tensor Tensor::detach() const {
    return from_vec(shape_, d_->v, false);
}

// ---------------------------------------------------------------- Tape

static void accumulate(const std::shared_ptr<Tensor::Payload>& p, const std::vector<double>& inc) {
    if (p->g.empty()) p->g.assign(p->v.size(), 0.0);
    for (size_t i = 0; i < inc.size(); ++i) p->g[i] += inc[i];
}

bool Tape::any_rg(std::initializer_list<const Tensor*> parents) {
    for (const Tensor* t : parents)
        if (t->requires_grad()) return true;
    return false;
}

Tensor Tape::make_output(Shape shape, std::vector<double> v,
                         std::initializer_list<const Tensor*> parents,
                         std::function<void()> bw) {
    bool rg = any_rg(parents);
    Tensor out = Tensor::from_vec(std::move(shape), std::move(v), rg);
    if (rg) {
        out.d_->is_node_output = true;
        nodes_.push_back(Node{std::move(bw), out.d_});
    }
    return out;
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto av = a.value(), bv = b.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    auto pa = a.d_, pb = b.d_;
    bool wa = a.requires_grad(), wb = b.requires_grad();
    Tensor out = make_output(a.shape(), std::move(v), {&a, &b}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, pb, po, wa, wb]() {
            if (po->g.empty()) return;
            if (wa) accumulate(pa, po->g);
            if (wb) accumulate(pb, po->g);
        };
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto av = a.value(), bv = b.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    auto pa = a.d_, pb = b.d_;
    bool wa = a.requires_grad(), wb = b.requires_grad();
    Tensor out = make_output(a.shape(), std::move(v), {&a, &b}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, pb, po, wa, wb]() {
            if (po->g.empty()) return;
            if (wa) accumulate(pa, po->g);
            if (wb) {
                if (pb->g.empty()) pb->g.assign(pb->v.size(), 0.0);
                for (size_t i = 0; i < po->g.size(); ++i) pb->g[i] -= po->g[i];
            }
        };
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto av = a.value(), bv = b.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    auto pa = a.d_, pb = b.d_;
    bool wa = a.requires_grad(), wb = b.requires_grad();
    Tensor out = make_output(a.shape(), std::move(v), {&a, &b}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, pb, po, wa, wb]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            if (wa) {
                for (size_t i = 0; i < inc.size(); ++i) inc[i] = po->g[i] * pb->v[i];
                accumulate(pa, inc);
            }
            if (wb) {
                for (size_t i = 0; i < inc.size(); ++i) inc[i] = po->g[i] * pa->v[i];
                accumulate(pb, inc);
            }
        };
    }
    return out;
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c;
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po]() {
            if (!po->g.empty()) accumulate(pa, po->g);
        };
    }
    return out;
}

Tensor Tape::mul_scalar(const Tensor& a, double c) {
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po, c]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            for (size_t i = 0; i < inc.size(); ++i) inc[i] = po->g[i] * c;
            accumulate(pa, inc);
        };
    }
    return out;
}

Tensor Tape::pow_scalar(const Tensor& a, double p) {
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::pow(av[i], p);
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po, p]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            for (size_t i = 0; i < inc.size(); ++i)
                inc[i] = po->g[i] * p * std::pow(pa->v[i], p - 1.0);
            accumulate(pa, inc);
        };
    }
    return out;
}

static void check_rowvec(const Tensor& m, const Tensor& v, const char* op) {
    if (m.ndim() != 2 || v.ndim() != 1 || m.dim(1) != v.dim(0))
        throw Error(std::string(op) + ": want (B,N) and (N), got " + shape_str(m.shape()) +
                    " and " + shape_str(v.shape()));
}

Tensor Tape::add_rowvec(const Tensor& m, const Tensor& v) {
    check_rowvec(m, v, "add_rowvec");
    int64_t rows = m.dim(0), n = m.dim(1);
    auto mv = m.value(), vv = v.value();
    std::vector<double> out(mv.size());
    for (int64_t b = 0; b < rows; ++b)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(b * n + j)] = mv[static_cast<size_t>(b * n + j)] + vv[static_cast<size_t>(j)];
    auto pm = m.d_, pv = v.d_;
    bool wm = m.requires_grad(), wv = v.requires_grad();
    Tensor o = make_output(m.shape(), std::move(out), {&m, &v}, nullptr);
    if (o.requires_grad()) {
        auto po = o.d_;
        nodes_.back().backward = [pm, pv, po, wm, wv, rows, n]() {
            if (po->g.empty()) return;
            if (wm) accumulate(pm, po->g);
            if (wv) {
                if (pv->g.empty()) pv->g.assign(pv->v.size(), 0.0);
                for (int64_t b = 0; b < rows; ++b)
                    for (int64_t j = 0; j < n; ++j) pv->g[static_cast<size_t>(j)] += po->g[static_cast<size_t>(b * n + j)];
            }
        };
    }
    return o;
}

Tensor Tape::sub_rowvec(const Tensor& m, const Tensor& v) {
    check_rowvec(m, v, "sub_rowvec");
    int64_t rows = m.dim(0), n = m.dim(1);
    auto mv = m.value(), vv = v.value();
    std::vector<double> out(mv.size());
    for (int64_t b = 0; b < rows; ++b)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(b * n + j)] = mv[static_cast<size_t>(b * n + j)] - vv[static_cast<size_t>(j)];
    auto pm = m.d_, pv = v.d_;
    bool wm = m.requires_grad(), wv = v.requires_grad();
    Tensor o = make_output(m.shape(), std::move(out), {&m, &v}, nullptr);
    if (o.requires_grad()) {
        auto po = o.d_;
        nodes_.back().backward = [pm, pv, po, wm, wv, rows, n]() {
            if (po->g.empty()) return;
            if (wm) accumulate(pm, po->g);
            if (wv) {
                if (pv->g.empty()) pv->g.assign(pv->v.size(), 0.0);
                for (int64_t b = 0; b < rows; ++b)
                    for (int64_t j = 0; j < n; ++j) pv->g[static_cast<size_t>(j)] -= po->g[static_cast<size_t>(b * n + j)];
            }
        };
    }
    return o;
}

Tensor Tape::mul_rowvec(const Tensor& m, const Tensor& v) {
    check_rowvec(m, v, "mul_rowvec");
    int64_t rows = m.dim(0), n = m.dim(1);
    auto mv = m.value(), vv = v.value();
    std::vector<double> out(mv.size());
    for (int64_t b = 0; b < rows; ++b)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(b * n + j)] = mv[static_cast<size_t>(b * n + j)] * vv[static_cast<size_t>(j)];
    auto pm = m.d_, pv = v.d_;
    bool wm = m.requires_grad(), wv = v.requires_grad();
    Tensor o = make_output(m.shape(), std::move(out), {&m, &v}, nullptr);
    if (o.requires_grad()) {
        auto po = o.d_;
        nodes_.back().backward = [pm, pv, po, wm, wv, rows, n]() {
            if (po->g.empty()) return;
            if (wm) {
                std::vector<double> inc(po->g.size());
                for (int64_t b = 0; b < rows; ++b)
                    for (int64_t j = 0; j < n; ++j)
                        inc[static_cast<size_t>(b * n + j)] = po->g[static_cast<size_t>(b * n + j)] * pv->v[static_cast<size_t>(j)];
                accumulate(pm, inc);
            }
            if (wv) {
                if (pv->g.empty()) pv->g.assign(pv->v.size(), 0.0);
                for (int64_t b = 0; b < rows; ++b)
                    for (int64_t j = 0; j < n; ++j)
                        pv->g[static_cast<size_t>(j)] += po->g[static_cast<size_t>(b * n + j)] * pm->v[static_cast<size_t>(b * n + j)];
            }
        };
    }
    return o;
}

Tensor Tape::mul_constvec(const Tensor& a, const std::vector<double>& w) {
    if (static_cast<int64_t>(w.size()) != a.numel())
        throw Error("mul_constvec: weight length mismatch");
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * w[i];
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        auto wcopy = w;
        nodes_.back().backward = [pa, po, wcopy]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            for (size_t i = 0; i < inc.size(); ++i) inc[i] = po->g[i] * wcopy[i];
            accumulate(pa, inc);
        };
    }
    return out;
}

Tensor Tape::div_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw Error("div_scalar_tensor: divisor must be a scalar tensor");
    double sv = s.value()[0];
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] / sv;
    auto pa = a.d_, ps = s.d_;
    bool wa = a.requires_grad(), ws = s.requires_grad();
    Tensor out = make_output(a.shape(), std::move(v), {&a, &s}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, ps, po, wa, ws]() {
            if (po->g.empty()) return;
            double sv2 = ps->v[0];
            if (wa) {
                std::vector<double> inc(po->g.size());
                for (size_t i = 0; i < inc.size(); ++i) inc[i] = po->g[i] / sv2;
                accumulate(pa, inc);
            }
            if (ws) {
                double acc = 0.0;
                for (size_t i = 0; i < po->g.size(); ++i) acc -= po->g[i] * pa->v[i];
                if (ps->g.empty()) ps->g.assign(1, 0.0);
                ps->g[0] += acc / (sv2 * sv2);
            }
        };
    }
    return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) {
        double x = av[i];
        v[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            for (size_t i = 0; i < inc.size(); ++i) {
                double y = po->v[i];
                inc[i] = po->g[i] * y * (1.0 - y);
            }
            accumulate(pa, inc);
        };
    }
    return out;
}

Tensor Tape::relu(const Tensor& a) {
    auto av = a.value();
    std::vector<double> v(av.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] > 0 ? av[i] : 0.0;
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po]() {
            if (po->g.empty()) return;
            std::vector<double> inc(po->g.size());
            for (size_t i = 0; i < inc.size(); ++i) inc[i] = pa->v[i] > 0 ? po->g[i] : 0.0;
            accumulate(pa, inc);
        };
    }
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    auto av = a.value();
    double s = 0.0;
    for (double x : av) s += x;
    auto pa = a.d_;
    Tensor out = make_output({1}, {s}, {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po]() {
            if (po->g.empty()) return;
            double g = po->g[0];
            if (pa->g.empty()) pa->g.assign(pa->v.size(), 0.0);
            for (size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += g;
        };
    }
    return out;
}

Tensor Tape::mean_rows(const Tensor& m) {
    if (m.ndim() != 2) throw Error("mean_rows: want a 2-d tensor, got " + shape_str(m.shape()));
    int64_t rows = m.dim(0), n = m.dim(1);
    auto mv = m.value();
    std::vector<double> v(static_cast<size_t>(n), 0.0);
    for (int64_t b = 0; b < rows; ++b)
        for (int64_t j = 0; j < n; ++j) v[static_cast<size_t>(j)] += mv[static_cast<size_t>(b * n + j)];
    for (int64_t j = 0; j < n; ++j) v[static_cast<size_t>(j)] /= static_cast<double>(rows);
    auto pm = m.d_;
    Tensor out = make_output({n}, std::move(v), {&m}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pm, po, rows, n]() {
            if (po->g.empty()) return;
            if (pm->g.empty()) pm->g.assign(pm->v.size(), 0.0);
            double inv = 1.0 / static_cast<double>(rows);
            for (int64_t b = 0; b < rows; ++b)
                for (int64_t j = 0; j < n; ++j) pm->g[static_cast<size_t>(b * n + j)] += po->g[static_cast<size_t>(j)] * inv;
        };
    }
    return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw Error("matmul: want 2-d tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    int64_t m = trans_a ? a.dim(1) : a.dim(0);
    int64_t k = trans_a ? a.dim(0) : a.dim(1);
    int64_t kb = trans_b ? b.dim(1) : b.dim(0);
    int64_t n = trans_b ? b.dim(0) : b.dim(1);
    if (k != kb)
        throw Error("matmul: inner dimension mismatch " + shape_str(a.shape()) + (trans_a ? "^T" : "") +
                    " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
    std::vector<double> v(static_cast<size_t>(m * n));
    matmul_raw(a.value().data(), b.value().data(), v.data(), m, k, n, trans_a, trans_b);
    auto pa = a.d_, pb = b.d_;
    bool wa = a.requires_grad(), wb = b.requires_grad();
    Tensor out = make_output({m, n}, std::move(v), {&a, &b}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, pb, po, wa, wb, m, k, n, trans_a, trans_b]() {
            if (po->g.empty()) return;
            const double* g = po->g.data();
            if (wa) {
                std::vector<double> inc(pa->v.size());
                if (!trans_a) {
                    // dA = G op(B)^T
                    matmul_raw(g, pb->v.data(), inc.data(), m, n, k, false, !trans_b);
                } else {
                    // A stored (k,m): dA = op(B) G^T
                    if (!trans_b) matmul_raw(pb->v.data(), g, inc.data(), k, n, m, false, true);
                    else          matmul_raw(pb->v.data(), g, inc.data(), k, n, m, true, true);
                }
                accumulate(pa, inc);
            }
            if (wb) {
                std::vector<double> inc(pb->v.size());
                if (!trans_b) {
                    // dB = op(A)^T G
                    matmul_raw(pa->v.data(), g, inc.data(), k, m, n, !trans_a, false);
                } else {
                    // B stored (n,k): dB = G^T op(A)
                    if (!trans_a) matmul_raw(g, pa->v.data(), inc.data(), n, m, k, true, false);
                    else          matmul_raw(g, pa->v.data(), inc.data(), n, m, k, true, true);
                }
                accumulate(pb, inc);
            }
        };
    }
    return out;
}

Tensor Tape::transpose(const Tensor& a) {
    if (a.ndim() != 2) throw Error("transpose: want a 2-d tensor");
    int64_t r = a.dim(0), c = a.dim(1);
    auto av = a.value();
    std::vector<double> v(av.size());
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) v[static_cast<size_t>(j * r + i)] = av[static_cast<size_t>(i * c + j)];
    auto pa = a.d_;
    Tensor out = make_output({c, r}, std::move(v), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po, r, c]() {
            if (po->g.empty()) return;
            if (pa->g.empty()) pa->g.assign(pa->v.size(), 0.0);
            for (int64_t j = 0; j < c; ++j)
                for (int64_t i = 0; i < r; ++i) pa->g[static_cast<size_t>(i * c + j)] += po->g[static_cast<size_t>(j * r + i)];
        };
    }
    return out;
}

Tensor Tape::slice1d(const Tensor& v, int64_t begin, int64_t end) {
    if (v.ndim() != 1) throw Error("slice1d: want a 1-d tensor");
    if (begin < 0 || end > v.dim(0) || begin >= end)
        throw Error("slice1d: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
    auto vv = v.value();
    std::vector<double> out(vv.begin() + begin, vv.begin() + end);
    auto pv = v.d_;
    Tensor o = make_output({end - begin}, std::move(out), {&v}, nullptr);
    if (o.requires_grad()) {
        auto po = o.d_;
        nodes_.back().backward = [pv, po, begin]() {
            if (po->g.empty()) return;
            if (pv->g.empty()) pv->g.assign(pv->v.size(), 0.0);
            for (size_t i = 0; i < po->g.size(); ++i) pv->g[static_cast<size_t>(begin) + i] += po->g[i];
        };
    }
    return o;
}

Tensor Tape::index1d(const Tensor& v, int64_t i) {
    if (v.ndim() != 1 || i < 0 || i >= v.dim(0)) throw Error("index1d: index out of range");
    auto pv = v.d_;
    Tensor o = make_output({1}, {v.value()[static_cast<size_t>(i)]}, {&v}, nullptr);
    if (o.requires_grad()) {
        auto po = o.d_;
        nodes_.back().backward = [pv, po, i]() {
            if (po->g.empty()) return;
            if (pv->g.empty()) pv->g.assign(pv->v.size(), 0.0);
            pv->g[static_cast<size_t>(i)] += po->g[0];
        };
    }
    return o;
}

Tensor Tape::trace(const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1)) throw Error("trace: want a square matrix");
    int64_t n = a.dim(0);
    auto av = a.value();
    double t = 0.0;
    for (int64_t i = 0; i < n; ++i) t += av[static_cast<size_t>(i * n + i)];
    auto pa = a.d_;
    Tensor out = make_output({1}, {t}, {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po, n]() {
            if (po->g.empty()) return;
            if (pa->g.empty()) pa->g.assign(pa->v.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) pa->g[static_cast<size_t>(i * n + i)] += po->g[0];
        };
    }
    return out;
}

Tensor Tape::add_scaled_identity(const Tensor& a, const Tensor& c) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1)) throw Error("add_scaled_identity: want a square matrix");
    if (c.numel() != 1) throw Error("add_scaled_identity: scale must be a scalar tensor");
    int64_t n = a.dim(0);
    auto av = a.value();
    std::vector<double> v(av.begin(), av.end());
    double cv = c.value()[0];
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] += cv;
    auto pa = a.d_, pc = c.d_;
    bool wa = a.requires_grad(), wc = c.requires_grad();
    Tensor out = make_output(a.shape(), std::move(v), {&a, &c}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, pc, po, wa, wc, n]() {
            if (po->g.empty()) return;
            if (wa) accumulate(pa, po->g);
            if (wc) {
                double t = 0.0;
                for (int64_t i = 0; i < n; ++i) t += po->g[static_cast<size_t>(i * n + i)];
                if (pc->g.empty()) pc->g.assign(1, 0.0);
                pc->g[0] += t;
            }
        };
    }
    return out;
}

Tensor Tape::cholesky(const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1)) throw Error("cholesky: want a square matrix");
    int64_t n = a.dim(0);
    std::vector<double> l = cholesky_factor(a.value().data(), n);
    auto pa = a.d_;
    Tensor out = make_output(a.shape(), std::move(l), {&a}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pa, po, n]() {
            if (po->g.empty()) return;
            std::vector<double> abar = cholesky_backward(po->v, n, po->g);
            accumulate(pa, abar);
        };
    }
    return out;
}

Tensor Tape::tri_solve_lower(const Tensor& l, const Tensor& b) {
    if (l.ndim() != 2 || l.dim(0) != l.dim(1)) throw Error("tri_solve_lower: L must be square");
    if (b.ndim() != 2 || b.dim(0) != l.dim(0))
        throw Error("tri_solve_lower: B rows must match L, got " + shape_str(b.shape()));
    int64_t n = l.dim(0), m = b.dim(1);
    std::vector<double> lv(l.value().begin(), l.value().end());
    std::vector<double> y = solve_lower(lv, n, std::vector<double>(b.value().begin(), b.value().end()), m);
    auto pl = l.d_, pb = b.d_;
    bool wl = l.requires_grad(), wb = b.requires_grad();
    Tensor out = make_output({n, m}, std::move(y), {&l, &b}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [pl, pb, po, wl, wb, n, m]() {
            if (po->g.empty()) return;
            // dB = L^{-T} dY ; dL = -dB Y^T restricted to the lower triangle
            std::vector<double> bbar = solve_lower_transposed(pl->v, n, po->g, m);
            if (wb) accumulate(pb, bbar);
            if (wl) {
                std::vector<double> full(static_cast<size_t>(n * n));
                matmul_raw(bbar.data(), po->v.data(), full.data(), n, m, n, false, true);
                std::vector<double> inc(static_cast<size_t>(n * n), 0.0);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j <= i; ++j) inc[static_cast<size_t>(i * n + j)] = -full[static_cast<size_t>(i * n + j)];
                accumulate(pl, inc);
            }
        };
    }
    return out;
}

Tensor Tape::quad_diag(const Tensor& sigma, const std::vector<double>& v_cols, int64_t n) {
    if (sigma.ndim() != 2 || sigma.dim(0) != n || sigma.dim(1) != n)
        throw Error("quad_diag: sigma must be " + std::to_string(n) + " square");
    if (static_cast<int64_t>(v_cols.size()) != n * n)
        throw Error("quad_diag: eigenvector matrix size mismatch");
    // lam_k = v_k^T Sigma v_k  via T = Sigma V, lam_k = sum_i V[i,k] T[i,k]
    std::vector<double> t(static_cast<size_t>(n * n));
    matmul_raw(sigma.value().data(), v_cols.data(), t.data(), n, n, n, false, false);
    std::vector<double> lam(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < n; ++k) lam[static_cast<size_t>(k)] += v_cols[static_cast<size_t>(i * n + k)] * t[static_cast<size_t>(i * n + k)];
    auto ps = sigma.d_;
    Tensor out = make_output({n}, std::move(lam), {&sigma}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        auto vc = v_cols;
        nodes_.back().backward = [ps, po, vc, n]() {
            if (po->g.empty()) return;
            // dSigma = V diag(g) V^T
            std::vector<double> w(static_cast<size_t>(n * n));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t k = 0; k < n; ++k) w[static_cast<size_t>(i * n + k)] = vc[static_cast<size_t>(i * n + k)] * po->g[static_cast<size_t>(k)];
            std::vector<double> inc(static_cast<size_t>(n * n));
            matmul_raw(w.data(), vc.data(), inc.data(), n, n, n, false, true);
            accumulate(ps, inc);
        };
    }
    return out;
}

Tensor Tape::softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Reduction red) {
    if (logits.ndim() != 2) throw Error("cross_entropy: logits must be (B,C)");
    int64_t rows = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != rows) throw Error("cross_entropy: label count mismatch");
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= c)
            throw Error("cross_entropy: label " + std::to_string(labels[i]) + " out of range at row " +
                        std::to_string(i));
    auto lv = logits.value();
    double total = 0.0;
    for (int64_t b = 0; b < rows; ++b) {
        const double* row = lv.data() + b * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int64_t j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        lse = std::log(lse) + mx;
        total += lse - row[labels[static_cast<size_t>(b)]];
    }
    if (red == Reduction::mean) total /= static_cast<double>(rows);
    auto pl = logits.d_;
    Tensor out = make_output({1}, {total}, {&logits}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        auto lab = labels;
        nodes_.back().backward = [pl, po, lab, rows, c, red]() {
            if (po->g.empty()) return;
            double w = po->g[0];
            if (red == Reduction::mean) w /= static_cast<double>(rows);
            if (pl->g.empty()) pl->g.assign(pl->v.size(), 0.0);
            for (int64_t b = 0; b < rows; ++b) {
                const double* row = pl->v.data() + b * c;
                double mx = row[0];
                for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double z = 0.0;
                for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
                for (int64_t j = 0; j < c; ++j) {
                    double p = std::exp(row[j] - mx) / z;
                    pl->g[static_cast<size_t>(b * c + j)] += w * (p - (j == lab[static_cast<size_t>(b)] ? 1.0 : 0.0));
                }
            }
        };
    }
    return out;
}

Tensor Tape::im2col(const Tensor& x, int64_t kh, int64_t kw) {
    if (x.ndim() != 4) throw Error("im2col: want (B,C,H,W)");
    int64_t bsz = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t oh = h - kh + 1, ow = w - kw + 1;
    if (oh <= 0 || ow <= 0) throw Error("im2col: kernel larger than input");
    int64_t cols = ch * kh * kw, rows = bsz * oh * ow;
    auto xv = x.value();
    std::vector<double> v(static_cast<size_t>(rows * cols));
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t xx = 0; xx < ow; ++xx) {
                int64_t r = (b * oh + y) * ow + xx;
                double* dst = v.data() + r * cols;
                for (int64_t cc = 0; cc < ch; ++cc)
                    for (int64_t u = 0; u < kh; ++u) {
                        const double* src = xv.data() + ((b * ch + cc) * h + (y + u)) * w + xx;
                        for (int64_t vv = 0; vv < kw; ++vv) dst[(cc * kh + u) * kw + vv] = src[vv];
                    }
            }
    auto px = x.d_;
    Tensor out = make_output({rows, cols}, std::move(v), {&x}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [px, po, bsz, ch, h, w, kh, kw, oh, ow, cols]() {
            if (po->g.empty()) return;
            if (px->g.empty()) px->g.assign(px->v.size(), 0.0);
            for (int64_t b = 0; b < bsz; ++b)
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t xx = 0; xx < ow; ++xx) {
                        int64_t r = (b * oh + y) * ow + xx;
                        const double* src = po->g.data() + r * cols;
                        for (int64_t cc = 0; cc < ch; ++cc)
                            for (int64_t u = 0; u < kh; ++u) {
                                double* dst = px->g.data() + ((b * ch + cc) * h + (y + u)) * w + xx;
                                for (int64_t vv = 0; vv < kw; ++vv) dst[vv] += src[(cc * kh + u) * kw + vv];
                            }
                    }
        };
    }
    return out;
}

Tensor Tape::maxpool2x2(const Tensor& x) {
    if (x.ndim() != 4) throw Error("maxpool2x2: want (B,C,H,W)");
    int64_t bsz = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw Error("maxpool2x2: input too small");
    auto xv = x.value();
    std::vector<double> v(static_cast<size_t>(bsz * ch * oh * ow));
    std::vector<int64_t> arg(v.size());
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t cc = 0; cc < ch; ++cc)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t xx = 0; xx < ow; ++xx) {
                    int64_t base = ((b * ch + cc) * h + 2 * y) * w + 2 * xx;
                    int64_t best = base;
                    double bv = xv[static_cast<size_t>(base)];
                    for (int64_t du = 0; du < 2; ++du)
                        for (int64_t dv = 0; dv < 2; ++dv) {
                            int64_t idx = base + du * w + dv;
                            if (xv[static_cast<size_t>(idx)] > bv) { bv = xv[static_cast<size_t>(idx)]; best = idx; }
                        }
                    int64_t o = ((b * ch + cc) * oh + y) * ow + xx;
                    v[static_cast<size_t>(o)] = bv;
                    arg[static_cast<size_t>(o)] = best;
                }
    auto px = x.d_;
    Tensor out = make_output({bsz, ch, oh, ow}, std::move(v), {&x}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [px, po, arg]() {
            if (po->g.empty()) return;
            if (px->g.empty()) px->g.assign(px->v.size(), 0.0);
            for (size_t i = 0; i < arg.size(); ++i) px->g[static_cast<size_t>(arg[i])] += po->g[i];
        };
    }
    return out;
}

Tensor Tape::nhwc_to_nchw(const Tensor& x) {
    if (x.ndim() != 4) throw Error("nhwc_to_nchw: want (B,H,W,C)");
    int64_t bsz = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
    auto xv = x.value();
    std::vector<double> v(xv.size());
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx)
                for (int64_t cc = 0; cc < ch; ++cc)
                    v[static_cast<size_t>(((b * ch + cc) * h + y) * w + xx)] =
                        xv[static_cast<size_t>(((b * h + y) * w + xx) * ch + cc)];
    auto px = x.d_;
    Tensor out = make_output({bsz, ch, h, w}, std::move(v), {&x}, nullptr);
    if (out.requires_grad()) {
        auto po = out.d_;
        nodes_.back().backward = [px, po, bsz, h, w, ch]() {
            if (po->g.empty()) return;
            if (px->g.empty()) px->g.assign(px->v.size(), 0.0);
            for (int64_t b = 0; b < bsz; ++b)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t xx = 0; xx < w; ++xx)
                        for (int64_t cc = 0; cc < ch; ++cc)
                            px->g[static_cast<size_t>(((b * h + y) * w + xx) * ch + cc)] +=
                                po->g[static_cast<size_t>(((b * ch + cc) * h + y) * w + xx)];
        };
    }
    return out;
}

void Tape::backward(const Tensor& root) {
    if (root.numel() != 1)
        throw Error("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.d_->rg) return;  // constant root: nothing depends on any leaf
    // gradients of node outputs are per-pass; leaves keep accumulating
    for (auto& n : nodes_)
        if (!n.out->g.empty()) std::fill(n.out->g.begin(), n.out->g.end(), 0.0);
    if (root.d_->g.empty()) root.d_->g.assign(root.d_->v.size(), 0.0);
    root.d_->g[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->backward) it->backward();
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------- helpers

std::vector<int> argmax_rows(const Tensor& logits) {
    int64_t rows = logits.dim(0), c = logits.dim(1);
    auto lv = logits.value();
    std::vector<int> out(static_cast<size_t>(rows));
    for (int64_t b = 0; b < rows; ++b) {
        const double* row = lv.data() + b * c;
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    auto pred = argmax_rows(logits);
    if (pred.size() != labels.size()) throw Error("accuracy: label count mismatch");
    int64_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double step) {
    if (step <= 0) throw Error("finite_difference_gradient: step must be positive");
    std::vector<double> base(x.value().begin(), x.value().end());
    std::vector<double> g(base.size());
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<double> v = base;
        v[i] = base[i] + step;
        double fp = f(Tensor::from_vec(x.shape(), v));
        v[i] = base[i] - step;
        double fm = f(Tensor::from_vec(x.shape(), std::move(v)));
        g[i] = (fp - fm) / (2.0 * step);
    }
    return Tensor::from_vec(x.shape(), std::move(g));
}

}  // namespace specreg
