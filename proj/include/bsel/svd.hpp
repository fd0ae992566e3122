#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bsel/matrix.hpp"

namespace bsel {

// Thin SVD with zero singular values (and their columns) dropped.
// Invariants: s sorted descending and strictly above the numerical-rank
// threshold; columns of u and v orthonormal.
struct SvdResult {
    Matrix u;               // n x r
    std::vector<double> s;  // r, descending, > 0
    Matrix v;               // m x r

    std::size_t rank() const { return s.size(); }
};

namespace detail {

inline double col_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace detail

// One-sided Jacobi SVD. Cyclic sweeps orthogonalize the columns of the
// working copy; column norms become the singular values. Deterministic for
// a fixed input (fixed sweep order, canonical sign choice).
inline SvdResult svd(const Matrix& w) {
    const bool transposed = w.rows() < w.cols();
    const std::size_t n = transposed ? w.cols() : w.rows();  // working rows
    const std::size_t m = transposed ? w.rows() : w.cols();  // working cols, m <= n

    // column-major working buffers
    std::vector<double> a(n * m), v(m * m, 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (transposed)
                a[i * n + j] = w(i, j);  // column i of a^T-view
            else
                a[j * n + i] = w(i, j);
        }
    for (std::size_t j = 0; j < m; ++j) v[j * m + j] = 1.0;

    const double conv_tol = 1.0e-15;
    const int max_sweeps = 60;
    bool converged = (m <= 1);
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < m; ++p) {
            for (std::size_t q = p + 1; q < m; ++q) {
                double* ap = a.data() + p * n;
                double* aq = a.data() + q * n;
                const double alpha = detail::col_dot(ap, ap, n);
                const double beta = detail::col_dot(aq, aq, n);
                const double gamma = detail::col_dot(ap, aq, n);
                if (std::abs(gamma) <= conv_tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
                rotated = true;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < n; ++i) {
                    const double x = ap[i], y = aq[i];
                    ap[i] = c * x - s * y;
                    aq[i] = s * x + c * y;
                }
                double* vp = v.data() + p * m;
                double* vq = v.data() + q * m;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        }
        converged = !rotated;
    }
    if (!converged) {
        throw std::runtime_error("svd: no convergence after 60 sweeps on " + w.shape_str() +
                                 " matrix");
    }

    std::vector<double> norms(m);
    for (std::size_t j = 0; j < m; ++j)
        norms[j] = std::sqrt(detail::col_dot(a.data() + j * n, a.data() + j * n, n));

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double s_max = m == 0 ? 0.0 : norms[order.empty() ? 0 : order[0]];
    const double zero_thresh = static_cast<double>(std::max(w.rows(), w.cols())) *
                               std::numeric_limits<double>::epsilon() * s_max;

    std::size_t r = 0;
    while (r < m && norms[order[r]] > zero_thresh && norms[order[r]] > 0.0) ++r;

    Matrix uw(n, r), vw(m, r);
    std::vector<double> sv(r);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t j = order[k];
        sv[k] = norms[j];
        const double inv = 1.0 / norms[j];
        const double* aj = a.data() + j * n;
        for (std::size_t i = 0; i < n; ++i) uw(i, k) = aj[i] * inv;
        const double* vj = v.data() + j * m;
        for (std::size_t i = 0; i < m; ++i) vw(i, k) = vj[i];
    }

    SvdResult out;
    out.s = std::move(sv);
    if (transposed) {
        out.u = std::move(vw);
        out.v = std::move(uw);
    } else {
        out.u = std::move(uw);
        out.v = std::move(vw);
    }

    // canonical sign: largest-magnitude entry of each left vector nonnegative
    for (std::size_t k = 0; k < out.rank(); ++k) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < out.u.rows(); ++i) {
            const double mag = std::abs(out.u(i, k));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (out.u(arg, k) < 0.0) {
            for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, k) = -out.u(i, k);
            for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, k) = -out.v(i, k);
        }
    }
    return out;
}

// U * diag(s) * V^T
inline Matrix svd_reconstruct(const SvdResult& f) {
    Matrix us = f.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= f.s[k];
    return matmul_a_bt(us, f.v);
}

}  // namespace bsel
