#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bsel/matrix.hpp"
#include "bsel/rng.hpp"
#include "bsel/svd.hpp"

namespace bsel {

// One forward batch: B input columns plus the gradient flowing back into
// the layer output, kept together for the backward pass.
struct Batch {
    Matrix inputs;    // m x B
    Matrix upstream;  // n x B
};

struct LayerGradients {
    std::vector<double> d_weights;  // r
    Matrix d_extra_u;               // n x r~
    Matrix d_extra_v;               // m x r~
    std::vector<double> d_bias;     // n
    Matrix d_input;                 // m x B
};

// Mass-based selection rule shared by pruning and the truncation baseline:
// rank bases by |weight| descending (ties -> lower index first), keep the
// shortest prefix whose mass reaches keep_ratio of the total, never fewer
// than one. Returned indices are sorted ascending.
inline std::vector<std::size_t> mass_kept_indices(const std::vector<double>& weights,
                                                  double keep_ratio) {
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
        throw std::invalid_argument("mass_kept_indices: keep ratio must be in (0, 1], got " +
                                    std::to_string(keep_ratio));
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(weights[a]) > std::abs(weights[b]);
    });
    double total = 0.0;
    for (std::size_t i : order) total += std::abs(weights[i]);
    const double target = keep_ratio * total;

    std::size_t count = 0;
    double prefix = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        prefix += std::abs(weights[order[k]]);
        count = k + 1;
        if (prefix >= target) break;
    }
    if (count == 0 && !weights.empty()) count = 1;

    std::vector<std::size_t> kept(order.begin(), order.begin() + count);
    std::sort(kept.begin(), kept.end());
    return kept;
}

// Top-k variant of the same ranking, for rank-targeted truncation.
inline std::vector<std::size_t> top_k_indices(const std::vector<double>& weights, std::size_t k) {
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(weights[a]) > std::abs(weights[b]);
    });
    order.resize(std::min(k, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

// Linear layer stored as a fixed orthonormal basis expansion with
// retrainable per-basis weights, plus a learnable low-rank augmentation:
//
//     W~ = sum_i w_i u_i v_i^T + sum_j eu_j ev_j^T
//
// The u_i / v_i columns come from the SVD of the original dense weight and
// are never mutated by training; pruning only deletes whole columns.
class FactorizedLinear {
public:
    FactorizedLinear() = default;

    FactorizedLinear(Matrix base_u, Matrix base_v, std::vector<double> weights, Matrix extra_u,
                     Matrix extra_v, std::vector<double> bias)
        : base_u_(std::move(base_u)),
          base_v_(std::move(base_v)),
          weights_(std::move(weights)),
          extra_u_(std::move(extra_u)),
          extra_v_(std::move(extra_v)),
          bias_(std::move(bias)) {
        if (base_u_.cols() != weights_.size() || base_v_.cols() != weights_.size())
            throw std::invalid_argument("FactorizedLinear: rank mismatch between bases and weights");
        if (extra_u_.cols() != extra_v_.cols())
            throw std::invalid_argument("FactorizedLinear: extra_u/extra_v column mismatch");
        if (extra_u_.rows() != base_u_.rows() || extra_v_.rows() != base_v_.rows())
            throw std::invalid_argument("FactorizedLinear: augmentation shape mismatch");
        if (bias_.size() != base_u_.rows())
            throw std::invalid_argument("FactorizedLinear: bias length mismatch");
    }

    // Factorize a dense weight. Basis weights start as the singular values,
    // extra_u starts at zero so the augmentation term contributes exactly
    // nothing until trained; extra_v gets small random directions.
    static FactorizedLinear from_dense(const Matrix& w, const std::vector<double>& bias,
                                       std::size_t additional_dim, std::uint64_t seed) {
        if (bias.size() != w.rows())
            throw std::invalid_argument("from_dense: bias length " + std::to_string(bias.size()) +
                                        " does not match rows of " + w.shape_str());
        SvdResult f = svd(w);
        const std::size_t n = w.rows(), m = w.cols();
        Matrix extra_u(n, additional_dim);
        Matrix extra_v(m, additional_dim);
        Rng rng(mix_seed(seed, 0x65787472));
        const double stddev = m > 0 ? 1.0 / std::sqrt(static_cast<double>(m)) : 0.0;
        for (std::size_t i = 0; i < extra_v.size(); ++i)
            extra_v.data()[i] = rng.normal(0.0, stddev);
        return FactorizedLinear(std::move(f.u), std::move(f.v), std::move(f.s),
                                std::move(extra_u), std::move(extra_v), bias);
    }

    std::size_t out_dim() const { return base_u_.rows(); }
    std::size_t in_dim() const { return base_v_.rows(); }
    std::size_t rank() const { return weights_.size(); }
    std::size_t additional_dim() const { return extra_u_.cols(); }

    const Matrix& base_u() const { return base_u_; }
    const Matrix& base_v() const { return base_v_; }
    std::vector<double>& weights() { return weights_; }
    const std::vector<double>& weights() const { return weights_; }
    Matrix& extra_u() { return extra_u_; }
    const Matrix& extra_u() const { return extra_u_; }
    Matrix& extra_v() { return extra_v_; }
    const Matrix& extra_v() const { return extra_v_; }
    std::vector<double>& bias() { return bias_; }
    const std::vector<double>& bias() const { return bias_; }

    double weight_mass() const {
        double acc = 0.0;
        for (double w : weights_) acc += std::abs(w);
        return acc;
    }

    // y = U diag(w) V^T x + Eu Ev^T x + b, evaluated in factored form.
    Matrix forward(const Matrix& x) const {
        require_shape(x.rows() == in_dim(),
                      "forward: input " + x.shape_str() + " does not match layer in_dim " +
                          std::to_string(in_dim()));
        Matrix proj = matmul_at_b(base_v_, x);  // r x B
        scale_rows(proj, weights_);
        Matrix y = matmul(base_u_, proj);  // n x B
        if (additional_dim() > 0) {
            Matrix proj2 = matmul_at_b(extra_v_, x);
            Matrix y2 = matmul(extra_u_, proj2);
            for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += y2.data()[i];
        }
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double* yi = y.row_ptr(i);
            const double b = bias_[i];
            for (std::size_t j = 0; j < y.cols(); ++j) yi[j] += b;
        }
        return y;
    }

    LayerGradients backward(const Batch& batch) const { return backward(batch.inputs, batch.upstream); }

    // All contractions of G = dy x^T stay factored; the bases get no gradient.
    LayerGradients backward(const Matrix& x, const Matrix& dy) const {
        require_shape(x.rows() == in_dim() && dy.rows() == out_dim() && x.cols() == dy.cols(),
                      "backward: batch shapes " + x.shape_str() + " / " + dy.shape_str() +
                          " do not match layer " + std::to_string(out_dim()) + "x" +
                          std::to_string(in_dim()));
        LayerGradients g;

        Matrix p = matmul_at_b(base_u_, dy);  // r x B
        Matrix q = matmul_at_b(base_v_, x);   // r x B
        g.d_weights.resize(rank());
        for (std::size_t i = 0; i < rank(); ++i) {
            const double* pi = p.row_ptr(i);
            const double* qi = q.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) acc += pi[j] * qi[j];
            g.d_weights[i] = acc;
        }

        Matrix t = matmul_at_b(extra_u_, dy);            // r~ x B
        Matrix rproj = matmul_at_b(extra_v_, x);         // r~ x B
        g.d_extra_u = matmul_a_bt(dy, rproj);            // n x r~
        g.d_extra_v = matmul_a_bt(x, t);                 // m x r~

        g.d_bias.assign(out_dim(), 0.0);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const double* di = dy.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < dy.cols(); ++j) acc += di[j];
            g.d_bias[i] = acc;
        }

        // d_input = V diag(w) U^T dy + Ev Eu^T dy
        scale_rows(p, weights_);
        g.d_input = matmul(base_v_, p);
        if (additional_dim() > 0) {
            Matrix d2 = matmul(extra_v_, t);
            for (std::size_t i = 0; i < g.d_input.size(); ++i)
                g.d_input.data()[i] += d2.data()[i];
        }
        return g;
    }

    // Drop low-mass bases so the surviving |weight| mass is at least
    // keep_ratio of the total. Returns the number of pruned bases.
    std::size_t prune_by_mass(double keep_ratio) {
        if (rank() == 0) return 0;
        std::vector<std::size_t> kept = mass_kept_indices(weights_, keep_ratio);
        return keep_only(kept);
    }

    void truncate_to_rank(std::size_t k) {
        if (k == 0) throw std::invalid_argument("truncate_to_rank: rank must be positive");
        if (k >= rank()) return;
        keep_only(top_k_indices(weights_, k));
    }

    std::size_t keep_only(const std::vector<std::size_t>& kept) {
        const std::size_t pruned = rank() - kept.size();
        base_u_ = select_columns(base_u_, kept);
        base_v_ = select_columns(base_v_, kept);
        std::vector<double> w(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) w[i] = weights_[kept[i]];
        weights_ = std::move(w);
        return pruned;
    }

    // Dense W~; the only place the full n x m product is ever formed.
    Matrix materialize() const {
        Matrix us = base_u_;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= weights_[k];
        Matrix w = matmul_a_bt(us, base_v_);
        if (additional_dim() > 0) {
            Matrix w2 = matmul_a_bt(extra_u_, extra_v_);
            for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] += w2.data()[i];
        }
        return w;
    }

    struct Finalized {
        Matrix first_weight;       // r' x m, equals S' V'^T
        Matrix second_weight;      // n x r', equals U'
        std::vector<double> bias;  // n
    };

    // Split into two dense layers via a fresh SVD of W~. The pair computes
    // second * (first * x) + bias and stores (n + m) r' + n parameters.
    Finalized finalize() const {
        SvdResult f = svd(materialize());
        Finalized out;
        out.first_weight = Matrix(f.rank(), in_dim());
        for (std::size_t k = 0; k < f.rank(); ++k)
            for (std::size_t j = 0; j < in_dim(); ++j)
                out.first_weight(k, j) = f.s[k] * f.v(j, k);
        out.second_weight = std::move(f.u);
        out.bias = bias_;
        return out;
    }

private:
    static void scale_rows(Matrix& m, const std::vector<double>& s) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double* mi = m.row_ptr(i);
            const double f = s[i];
            for (std::size_t j = 0; j < m.cols(); ++j) mi[j] *= f;
        }
    }

    Matrix base_u_;                // n x r, fixed
    Matrix base_v_;                // m x r, fixed
    std::vector<double> weights_;  // r, learnable
    Matrix extra_u_;               // n x r~, learnable
    Matrix extra_v_;               // m x r~, learnable
    std::vector<double> bias_;     // n, learnable
};

}  // namespace bsel
