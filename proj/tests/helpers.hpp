#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bsel/matrix.hpp"
#include "bsel/rng.hpp"

namespace test_helpers {

inline bsel::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    bsel::Matrix m(r, c);
    bsel::Rng rng(seed);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    std::vector<double> v(n);
    bsel::Rng rng(seed);
    for (double& x : v) x = rng.normal();
    return v;
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

// offline prefix-sum simulator for the mass rule, written independently of
// mass_kept_indices: enumerates prefixes of the |w|-sorted order
inline std::vector<std::size_t> simulate_kept(const std::vector<double>& w, double ratio) {
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

}  // namespace test_helpers
