#pragma once

#include <vector>

#include "bsel/matrix.hpp"

namespace bsel {

struct DenseGradients {
    Matrix d_weight;
    std::vector<double> d_bias;
    Matrix d_input;
};

// Plain y = W x + b layer.
struct DenseLinear {
    Matrix weight;             // n x m
    std::vector<double> bias;  // n

    std::size_t out_dim() const { return weight.rows(); }
    std::size_t in_dim() const { return weight.cols(); }

    Matrix forward(const Matrix& x) const {
        Matrix y = matmul(weight, x);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double* yi = y.row_ptr(i);
            const double b = bias[i];
            for (std::size_t j = 0; j < y.cols(); ++j) yi[j] += b;
        }
        return y;
    }

    DenseGradients backward(const Matrix& x, const Matrix& dy) const {
        DenseGradients g;
        g.d_weight = matmul_a_bt(dy, x);
        g.d_bias.assign(out_dim(), 0.0);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const double* di = dy.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < dy.cols(); ++j) acc += di[j];
            g.d_bias[i] = acc;
        }
        g.d_input = matmul_at_b(weight, dy);
        return g;
    }
};

// Finalized compressed layer: y = second * (first * x) + bias, with no
// bias or nonlinearity between the two matrices.
struct PairLinear {
    Matrix first;              // r' x m
    Matrix second;             // n x r'
    std::vector<double> bias;  // n

    std::size_t out_dim() const { return second.rows(); }
    std::size_t in_dim() const { return first.cols(); }
    std::size_t inner_rank() const { return second.cols(); }

    Matrix forward(const Matrix& x) const {
        Matrix y = matmul(second, matmul(first, x));
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double* yi = y.row_ptr(i);
            const double b = bias[i];
            for (std::size_t j = 0; j < y.cols(); ++j) yi[j] += b;
        }
        return y;
    }

    struct Gradients {
        Matrix d_first;
        Matrix d_second;
        std::vector<double> d_bias;
        Matrix d_input;
    };

    Gradients backward(const Matrix& x, const Matrix& dy) const {
        Gradients g;
        Matrix z1 = matmul(first, x);  // r' x B
        g.d_second = matmul_a_bt(dy, z1);
        g.d_bias.assign(out_dim(), 0.0);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
            const double* di = dy.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < dy.cols(); ++j) acc += di[j];
            g.d_bias[i] = acc;
        }
        Matrix dz1 = matmul_at_b(second, dy);  // r' x B
        g.d_first = matmul_a_bt(dz1, x);
        g.d_input = matmul_at_b(first, dz1);
        return g;
    }
};

}  // namespace bsel
