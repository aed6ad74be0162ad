#include "specreg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "specreg/error.hpp"

namespace specreg {

void matmul_raw(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n, bool trans_a, bool trans_b) {
    // Canonicalize both operands to row-major (m,k) and (k,n), then run the
    // i-k-j kernel. Every output element accumulates its k-terms in ascending
    // order, so results are bitwise reproducible and match a naive loop.
    std::vector<double> abuf, bbuf;
    const double* a2 = a;
    if (trans_a) {
        abuf.resize(static_cast<size_t>(m * k));
        for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < m; ++j) abuf[static_cast<size_t>(j * k + i)] = a[i * m + j];
        a2 = abuf.data();
    }
    const double* b2 = b;
    if (trans_b) {
        bbuf.resize(static_cast<size_t>(k * n));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < k; ++j) bbuf[static_cast<size_t>(j * n + i)] = b[i * k + j];
        b2 = bbuf.data();
    }
    std::fill(c, c + m * n, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a2 + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = b2 + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

static void check_symmetric_finite(const double* a, int64_t n, const char* op) {
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double v = a[i * n + j];
            if (!std::isfinite(v))
                throw Error(std::string(op) + ": non-finite entry at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
            if (j > i && std::fabs(v - a[j * n + i]) > 1e-9)
                throw Error(std::string(op) + ": matrix not symmetric at (" + std::to_string(i) + "," +
                            std::to_string(j) + "): " + std::to_string(v) + " vs " +
                            std::to_string(a[j * n + i]));
        }
}

EigenDecomposition sym_eig(const double* a, int64_t n) {
    check_symmetric_finite(a, n, "sym_eig");

    std::vector<double> m(a, a + n * n);
    // work on the symmetrized matrix; input is only symmetric to tolerance
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            double s = 0.5 * (m[static_cast<size_t>(i * n + j)] + m[static_cast<size_t>(j * n + i)]);
            m[static_cast<size_t>(i * n + j)] = m[static_cast<size_t>(j * n + i)] = s;
        }

    std::vector<double> v(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;

    double norm_f = 0.0;
    for (double x : m) norm_f += x * x;
    norm_f = std::sqrt(norm_f);

    auto off_norm = [&]() {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) s += m[static_cast<size_t>(i * n + j)] * m[static_cast<size_t>(i * n + j)];
        return std::sqrt(2.0 * s);
    };

    const double tol = 1e-12 * norm_f;
    const int max_sweeps = 100;
    bool converged = off_norm() <= tol;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (int64_t p = 0; p < n - 1; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = m[static_cast<size_t>(p * n + q)];
                if (std::fabs(apq) < 1e-300) continue;
                double app = m[static_cast<size_t>(p * n + p)];
                double aqq = m[static_cast<size_t>(q * n + q)];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                double tau = s / (1.0 + c);

                m[static_cast<size_t>(p * n + p)] = app - t * apq;
                m[static_cast<size_t>(q * n + q)] = aqq + t * apq;
                m[static_cast<size_t>(p * n + q)] = 0.0;
                m[static_cast<size_t>(q * n + p)] = 0.0;
                for (int64_t r = 0; r < n; ++r) {
                    if (r != p && r != q) {
                        double arp = m[static_cast<size_t>(r * n + p)];
                        double arq = m[static_cast<size_t>(r * n + q)];
                        double np = arp - s * (arq + tau * arp);
                        double nq = arq + s * (arp - tau * arq);
                        m[static_cast<size_t>(r * n + p)] = np;
                        m[static_cast<size_t>(p * n + r)] = np;
                        m[static_cast<size_t>(r * n + q)] = nq;
                        m[static_cast<size_t>(q * n + r)] = nq;
                    }
                    double vrp = v[static_cast<size_t>(r * n + p)];
                    double vrq = v[static_cast<size_t>(r * n + q)];
                    v[static_cast<size_t>(r * n + p)] = vrp - s * (vrq + tau * vrp);
                    v[static_cast<size_t>(r * n + q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        converged = off_norm() <= tol;
    }
    if (!converged)
        throw Error("sym_eig: no convergence within 100 sweeps, off-diagonal norm " +
                    std::to_string(off_norm()));

    // sort descending, keep eigenvalue/eigenvector pairing
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
        return m[static_cast<size_t>(x * n + x)] > m[static_cast<size_t>(y * n + y)];
    });

    EigenDecomposition out;
    out.n = n;
    out.eigenvalues.resize(static_cast<size_t>(n));
    out.eigenvectors.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t k = 0; k < n; ++k) {
        int64_t src = order[static_cast<size_t>(k)];
        out.eigenvalues[static_cast<size_t>(k)] = m[static_cast<size_t>(src * n + src)];
        // sign convention: first nonzero component positive
        double sign = 1.0;
        for (int64_t i = 0; i < n; ++i) {
            double x = v[static_cast<size_t>(i * n + src)];
            if (x != 0.0) { sign = x > 0 ? 1.0 : -1.0; break; }
        }
        for (int64_t i = 0; i < n; ++i)
            out.eigenvectors[static_cast<size_t>(i * n + k)] = sign * v[static_cast<size_t>(i * n + src)];
    }
    return out;
}

EigenDecomposition sym_eig(const std::vector<double>& a, int64_t n) {
    if (static_cast<int64_t>(a.size()) != n * n) throw Error("sym_eig: size mismatch");
    return sym_eig(a.data(), n);
}

EigenDecomposition sym_eig(const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1)) throw Error("sym_eig: want a square matrix");
    return sym_eig(a.value().data(), a.dim(0));
}

std::vector<double> cholesky_factor(const double* a, int64_t n) {
    check_symmetric_finite(a, n, "cholesky");
    std::vector<double> l(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (int64_t k = 0; k < j; ++k) s -= l[static_cast<size_t>(i * n + k)] * l[static_cast<size_t>(j * n + k)];
            if (i == j) {
                if (s <= 0.0)
                    throw Error("cholesky: non-positive pivot at index " + std::to_string(i) +
                                ": " + std::to_string(s));
                l[static_cast<size_t>(i * n + i)] = std::sqrt(s);
            } else {
                l[static_cast<size_t>(i * n + j)] = s / l[static_cast<size_t>(j * n + j)];
            }
        }
    }
    return l;
}

std::vector<double> cholesky_factor(const std::vector<double>& a, int64_t n) {
    if (static_cast<int64_t>(a.size()) != n * n) throw Error("cholesky: size mismatch");
    return cholesky_factor(a.data(), n);
}

std::vector<double> solve_lower(const std::vector<double>& l, int64_t n,
                                const std::vector<double>& b, int64_t m) {
    std::vector<double> y = b;
    for (int64_t i = 0; i < n; ++i) {
        double* yi = y.data() + i * m;
        for (int64_t k = 0; k < i; ++k) {
            double lik = l[static_cast<size_t>(i * n + k)];
            const double* yk = y.data() + k * m;
            for (int64_t j = 0; j < m; ++j) yi[j] -= lik * yk[j];
        }
        double inv = 1.0 / l[static_cast<size_t>(i * n + i)];
        for (int64_t j = 0; j < m; ++j) yi[j] *= inv;
    }
    return y;
}

std::vector<double> solve_lower_transposed(const std::vector<double>& l, int64_t n,
                                           const std::vector<double>& b, int64_t m) {
    std::vector<double> x = b;
    for (int64_t i = n - 1; i >= 0; --i) {
        double* xi = x.data() + i * m;
        for (int64_t k = i + 1; k < n; ++k) {
            double lki = l[static_cast<size_t>(k * n + i)];
            const double* xk = x.data() + k * m;
            for (int64_t j = 0; j < m; ++j) xi[j] -= lki * xk[j];
        }
        double inv = 1.0 / l[static_cast<size_t>(i * n + i)];
        for (int64_t j = 0; j < m; ++j) xi[j] *= inv;
    }
    return x;
}

std::vector<double> cholesky_backward(const std::vector<double>& l, int64_t n,
                                      const std::vector<double>& lbar) {
    // phi(L^T Lbar): lower triangle with halved diagonal, then
    // Abar = L^{-T} phi L^{-1}, symmetrized.
    std::vector<double> p(static_cast<size_t>(n * n));
    matmul_raw(l.data(), lbar.data(), p.data(), n, n, n, true, false);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            if (j > i) p[static_cast<size_t>(i * n + j)] = 0.0;
            else if (j == i) p[static_cast<size_t>(i * n + j)] *= 0.5;
        }
    std::vector<double> z = solve_lower_transposed(l, n, p, n);   // L^{-T} phi
    // z L^{-1} = (L^{-T} z^T)^T
    std::vector<double> zt(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) zt[static_cast<size_t>(j * n + i)] = z[static_cast<size_t>(i * n + j)];
    std::vector<double> w = solve_lower_transposed(l, n, zt, n);
    std::vector<double> abar(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            abar[static_cast<size_t>(i * n + j)] =
                0.5 * (w[static_cast<size_t>(j * n + i)] + w[static_cast<size_t>(i * n + j)]);
    return abar;
}

}  // namespace specreg
