#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bsel/factorized_linear.hpp"
#include "bsel/matrix.hpp"
#include "bsel/rng.hpp"

using namespace bsel;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    Rng rng(seed);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    std::vector<double> v(n);
    Rng rng(seed);
    for (double& x : v) x = rng.normal();
    return v;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

// test-side oracle: naive elementwise accumulation of the basis expansion
Matrix naive_materialize(const FactorizedLinear& l) {
    Matrix w(l.out_dim(), l.in_dim());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < l.rank(); ++k)
                acc += l.weights()[k] * l.base_u()(i, k) * l.base_v()(j, k);
            for (std::size_t k = 0; k < l.additional_dim(); ++k)
                acc += l.extra_u()(i, k) * l.extra_v()(j, k);
            w(i, j) = acc;
        }
    return w;
}

// test-side oracle: shortest prefix of the |weight|-sorted order reaching
// ratio * total, found by enumerating every prefix
std::vector<std::size_t> enumerate_kept(const std::vector<double>& w, double ratio) {
    std::vector<std::size_t> order(w.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(w[a]) > std::abs(w[b]); });
    double total = 0.0;
    for (std::size_t i : order) total += std::abs(w[i]);
    for (std::size_t count = 1; count <= order.size(); ++count) {
        double prefix = 0.0;
        for (std::size_t k = 0; k < count; ++k) prefix += std::abs(w[order[k]]);
        if (prefix >= ratio * total) {
            std::vector<std::size_t> kept(order.begin(), order.begin() + count);
            std::sort(kept.begin(), kept.end());
            return kept;
        }
    }
    std::vector<std::size_t> all(order.begin(), order.end());
    std::sort(all.begin(), all.end());
    return all;
}

double half_sq_norm(const Matrix& y) { return 0.5 * frobenius_inner(y, y); }

}  // namespace

TEST_CASE("from_dense of a diagonal matrix keeps exact weights") {
    Matrix d(3, 3);
    d(0, 0) = 3.0;
    d(1, 1) = 2.0;
    d(2, 2) = 1.0;
    FactorizedLinear l = FactorizedLinear::from_dense(d, {0.0, 0.0, 0.0}, 0, 1);
    REQUIRE(l.rank() == 3);
    REQUIRE(l.weights() == std::vector<double>{3.0, 2.0, 1.0});
    REQUIRE(max_abs_diff(l.materialize(), d) <= 1e-12);
}

TEST_CASE("from_dense reconstructs the input") {
    Matrix w = random_matrix(32, 16, 5);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(32, 6), 4, 7);
    Matrix back = l.materialize();
    double num = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = back.data()[i] - w.data()[i];
        num += d * d;
    }
    REQUIRE(std::sqrt(num) <= 1e-10 * frobenius_norm(w));
}

TEST_CASE("augmentation starts at exactly zero: output independent of seed") {
    Matrix w = random_matrix(12, 10, 8);
    std::vector<double> bias = random_vector(12, 9);
    FactorizedLinear a = FactorizedLinear::from_dense(w, bias, 4, 1);
    FactorizedLinear b = FactorizedLinear::from_dense(w, bias, 4, 999);
    Matrix x = random_matrix(10, 5, 10);
    REQUIRE(max_abs_diff(a.forward(x), b.forward(x)) == 0.0);
}

TEST_CASE("forward: one filter activates") {
    // single basis: s = 2, u = e1 in R^3, v = e2 in R^4
    Matrix u(3, 1), v(4, 1);
    u(0, 0) = 1.0;
    v(1, 0) = 1.0;
    FactorizedLinear l(u, v, {2.0}, Matrix(3, 0), Matrix(4, 0), {0.0, 0.0, 0.0});
    Matrix x(4, 1);
    x(1, 0) = 1.0;
    Matrix y = l.forward(x);
    REQUIRE(y(0, 0) == 2.0);
    REQUIRE(y(1, 0) == 0.0);
    REQUIRE(y(2, 0) == 0.0);
}

TEST_CASE("forward: input orthogonal to every v gives the bias") {
    Matrix u(3, 1), v(4, 1);
    u(0, 0) = 1.0;
    v(1, 0) = 1.0;
    FactorizedLinear l(u, v, {2.0}, Matrix(3, 0), Matrix(4, 0), {0.5, -1.5, 2.5});
    Matrix x(4, 1);
    x(2, 0) = 7.0;  // orthogonal to v = e2
    Matrix y = l.forward(x);
    REQUIRE(y(0, 0) == 0.5);
    REQUIRE(y(1, 0) == -1.5);
    REQUIRE(y(2, 0) == 2.5);
}

TEST_CASE("forward matches the dense path") {
    Matrix w = random_matrix(14, 11, 20);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(14, 21), 3, 22);
    // give the augmentation a nonzero contribution
    for (std::size_t i = 0; i < l.extra_u().size(); ++i)
        l.extra_u().data()[i] = 0.01 * static_cast<double>(i % 7) - 0.02;
    Matrix x = random_matrix(11, 6, 23);
    Matrix dense = l.materialize();
    Matrix want = matmul(dense, x);
    for (std::size_t i = 0; i < want.rows(); ++i)
        for (std::size_t j = 0; j < want.cols(); ++j) want(i, j) += l.bias()[i];
    Matrix got = l.forward(x);
    REQUIRE(max_abs_diff(got, want) <= 1e-10 * std::max(1.0, frobenius_norm(want)));
}

TEST_CASE("materialize matches naive accumulation") {
    Matrix w = random_matrix(9, 13, 30);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(9, 31), 2, 32);
    for (std::size_t i = 0; i < l.extra_u().size(); ++i) l.extra_u().data()[i] = 0.1;
    REQUIRE(max_abs_diff(l.materialize(), naive_materialize(l)) <= 1e-12);
}

TEST_CASE("materialize of an empty layer is the zero matrix") {
    FactorizedLinear l(Matrix(4, 0), Matrix(3, 0), {}, Matrix(4, 0), Matrix(3, 0),
                       {0.0, 0.0, 0.0, 0.0});
    Matrix w = l.materialize();
    REQUIRE(w.rows() == 4);
    REQUIRE(w.cols() == 3);
    REQUIRE(frobenius_norm(w) == 0.0);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
    Matrix w = random_matrix(6, 5, 40);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(6, 41), 2, 42);
    Matrix x = random_matrix(5, 3, 43);
    LayerGradients g = l.backward(x, Matrix(6, 3));
    for (double d : g.d_weights) REQUIRE(d == 0.0);
    REQUIRE(frobenius_norm(g.d_extra_u) == 0.0);
    REQUIRE(frobenius_norm(g.d_extra_v) == 0.0);
    for (double d : g.d_bias) REQUIRE(d == 0.0);
    REQUIRE(frobenius_norm(g.d_input) == 0.0);
}

TEST_CASE("backward: scalar chain rule") {
    Matrix u(1, 1), v(1, 1);
    u(0, 0) = 1.0;
    v(0, 0) = 1.0;
    FactorizedLinear l(u, v, {2.0}, Matrix(1, 0), Matrix(1, 0), {0.0});
    Matrix x(1, 1), dy(1, 1);
    x(0, 0) = 3.0;
    dy(0, 0) = 1.0;
    LayerGradients g = l.backward(x, dy);
    REQUIRE(g.d_weights[0] == 3.0);
    REQUIRE(g.d_input(0, 0) == 2.0);
    REQUIRE(g.d_bias[0] == 1.0);
}

TEST_CASE("backward matches central finite differences") {
    const double h = 1e-5, tol = 1e-4;
    Matrix w = random_matrix(8, 6, 50);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(8, 51), 2, 52);
    // nonzero augmentation so its gradients are exercised
    for (std::size_t i = 0; i < l.extra_u().size(); ++i)
        l.extra_u().data()[i] = 0.05 * static_cast<double>((i * 13) % 5) - 0.1;
    Matrix x = random_matrix(6, 4, 53);

    // loss = 0.5 ||y||^2, so upstream = y
    Matrix y = l.forward(x);
    LayerGradients g = l.backward(x, y);

    auto fd = [&](double* slot) {
        const double keep = *slot;
        *slot = keep + h;
        const double up = half_sq_norm(l.forward(x));
        *slot = keep - h;
        const double dn = half_sq_norm(l.forward(x));
        *slot = keep;
        return (up - dn) / (2.0 * h);
    };

    for (std::size_t i = 0; i < l.rank(); ++i)
        REQUIRE(rel_err(g.d_weights[i], fd(&l.weights()[i])) <= tol);
    for (std::size_t i = 0; i < l.extra_u().size(); ++i)
        REQUIRE(rel_err(g.d_extra_u.data()[i], fd(&l.extra_u().data()[i])) <= tol);
    for (std::size_t i = 0; i < l.extra_v().size(); ++i)
        REQUIRE(rel_err(g.d_extra_v.data()[i], fd(&l.extra_v().data()[i])) <= tol);
    for (std::size_t i = 0; i < l.bias().size(); ++i)
        REQUIRE(rel_err(g.d_bias[i], fd(&l.bias()[i])) <= tol);
    for (std::size_t i = 0; i < x.size(); ++i)
        REQUIRE(rel_err(g.d_input.data()[i], fd(&x.data()[i])) <= tol);
}

TEST_CASE("prune keeps the shortest mass prefix") {
    FactorizedLinear l(Matrix(5, 4), Matrix(6, 4), {4.0, 3.0, 2.0, 1.0}, Matrix(5, 0),
                       Matrix(6, 0), std::vector<double>(5, 0.0));
    REQUIRE(l.prune_by_mass(0.7) == 2);
    REQUIRE(l.weights() == std::vector<double>{4.0, 3.0});
}

TEST_CASE("prune with ratio 1 keeps everything") {
    FactorizedLinear l(Matrix(5, 4), Matrix(6, 4), {4.0, 3.0, 2.0, 1.0}, Matrix(5, 0),
                       Matrix(6, 0), std::vector<double>(5, 0.0));
    REQUIRE(l.prune_by_mass(1.0) == 0);
    REQUIRE(l.rank() == 4);
}

TEST_CASE("prune tie-break keeps the lowest original indices") {
    FactorizedLinear l(Matrix(3, 4), Matrix(3, 4), {2.0, 2.0, 2.0, 2.0}, Matrix(3, 0),
                       Matrix(3, 0), std::vector<double>(3, 0.0));
    std::vector<std::size_t> kept = mass_kept_indices(l.weights(), 0.5);
    REQUIRE(kept == enumerate_kept({2.0, 2.0, 2.0, 2.0}, 0.5));
    REQUIRE(kept == std::vector<std::size_t>{0, 1});
    REQUIRE(l.prune_by_mass(0.5) == 2);
}

TEST_CASE("prune ranks by absolute value of retrained weights") {
    std::vector<double> w = {-4.0, 3.0, -2.0, 1.0};
    std::vector<std::size_t> kept = mass_kept_indices(w, 0.7);
    REQUIRE(kept == std::vector<std::size_t>{0, 1});
}

TEST_CASE("at least one basis survives extreme pruning") {
    FactorizedLinear l(Matrix(3, 3), Matrix(3, 3), {5.0, 4.0, 3.0}, Matrix(3, 0), Matrix(3, 0),
                       std::vector<double>(3, 0.0));
    l.prune_by_mass(1e-12);
    REQUIRE(l.rank() == 1);
    REQUIRE(l.weights()[0] == 5.0);
}

TEST_CASE("prune rejects out-of-range ratios") {
    FactorizedLinear l(Matrix(2, 1), Matrix(2, 1), {1.0}, Matrix(2, 0), Matrix(2, 0),
                       {0.0, 0.0});
    REQUIRE_THROWS_AS(l.prune_by_mass(0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(l.prune_by_mass(1.5), std::invalid_argument);
    REQUIRE_THROWS_AS(l.prune_by_mass(-0.1), std::invalid_argument);
}

TEST_CASE("prune property: kept mass minimal prefix at or above ratio") {
    Rng rng(70);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t r = 1 + rng.below(12);
        std::vector<double> w(r);
        for (double& x : w) x = rng.normal();
        const double ratio = 0.05 + 0.95 * rng.uniform();

        std::vector<std::size_t> kept = mass_kept_indices(w, ratio);
        REQUIRE(kept == enumerate_kept(w, ratio));
        REQUIRE(kept.size() >= 1);

        // mass accounting in the same sorted order the rule uses
        std::vector<std::size_t> order(w.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(w[a]) > std::abs(w[b]);
        });
        double total = 0.0;
        for (std::size_t i : order) total += std::abs(w[i]);
        double prefix = 0.0;
        for (std::size_t k = 0; k < kept.size(); ++k) prefix += std::abs(w[order[k]]);
        REQUIRE(prefix >= ratio * total);
        if (kept.size() > 1) {
            const double without_smallest = prefix - std::abs(w[order[kept.size() - 1]]);
            REQUIRE(without_smallest < ratio * total);
        }
    }
}

TEST_CASE("finalize splits a diagonal layer exactly") {
    Matrix d(3, 3);
    d(0, 0) = 3.0;
    d(1, 1) = 2.0;
    d(2, 2) = 1.0;
    FactorizedLinear l = FactorizedLinear::from_dense(d, {0.1, 0.2, 0.3}, 0, 1);
    FactorizedLinear::Finalized fin = l.finalize();
    REQUIRE(fin.second_weight.cols() == 3);
    Matrix x = random_matrix(3, 10, 80);
    Matrix via_pair = matmul(fin.second_weight, matmul(fin.first_weight, x));
    Matrix direct = matmul(l.materialize(), x);
    REQUIRE(max_abs_diff(via_pair, direct) <= 1e-10);
}

TEST_CASE("finalized pair parameter count is (n+m)r' + n") {
    Matrix w = random_matrix(24, 18, 81);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(24, 82), 0, 83);
    l.prune_by_mass(0.6);
    FactorizedLinear::Finalized fin = l.finalize();
    const std::size_t rp = fin.second_weight.cols();
    const std::size_t params = fin.first_weight.size() + fin.second_weight.size() +
                               fin.bias.size();
    REQUIRE(params == (24 + 18) * rp + 24);
}

TEST_CASE("finalized pair matches the materialized layer on random inputs") {
    Matrix w = random_matrix(20, 15, 84);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(20, 85), 3, 86);
    for (std::size_t i = 0; i < l.extra_u().size(); ++i)
        l.extra_u().data()[i] = 0.02 * static_cast<double>((i * 7) % 11);
    l.prune_by_mass(0.5);
    FactorizedLinear::Finalized fin = l.finalize();

    Matrix dense = l.materialize();
    for (int trial = 0; trial < 100; ++trial) {
        Matrix x = random_matrix(15, 1, 90 + trial);
        Matrix via_pair = matmul(fin.second_weight, matmul(fin.first_weight, x));
        Matrix direct = matmul(dense, x);
        for (std::size_t i = 0; i < via_pair.size(); ++i) {
            const double want = direct.data()[i];
            REQUIRE(std::abs(via_pair.data()[i] - want) <=
                    1e-8 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("pruning never mutates surviving basis columns") {
    Matrix w = random_matrix(10, 8, 91);
    FactorizedLinear l = FactorizedLinear::from_dense(w, random_vector(10, 92), 0, 93);
    std::vector<std::size_t> kept = mass_kept_indices(l.weights(), 0.55);
    Matrix u_before = select_columns(l.base_u(), kept);
    Matrix v_before = select_columns(l.base_v(), kept);
    l.prune_by_mass(0.55);
    REQUIRE(max_abs_diff(l.base_u(), u_before) == 0.0);
    REQUIRE(max_abs_diff(l.base_v(), v_before) == 0.0);
}
