#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bsel/matrix.hpp"
#include "bsel/model.hpp"
#include "bsel/svd.hpp"

namespace bsel {

// Which vocabulary tokens a basis promotes, read off by projecting its u
// vector through the output head.
struct BasisTokens {
    std::size_t basis = 0;  // column index in the inspected factorization
    double weight = 0.0;    // singular weight of the basis
    std::vector<std::pair<int, double>> tokens;  // (token id, score), best first
};

// out_weight: vocab x h, u: h x r. Bases are reported in descending
// |weight| order; each carries its top_k highest-scoring tokens.
inline std::vector<BasisTokens> de_embed_bases(const Matrix& out_weight, const Matrix& u,
                                               const std::vector<double>& weights,
                                               std::size_t top_k) {
    require_shape(out_weight.cols() == u.rows(),
                  "de_embed_bases: head " + out_weight.shape_str() + " cannot read u " +
                      u.shape_str());
    if (u.cols() != weights.size())
        throw std::invalid_argument("de_embed_bases: weight count mismatch");

    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(weights[a]) > std::abs(weights[b]);
    });

    Matrix scores = matmul(out_weight, u);  // vocab x r
    std::vector<BasisTokens> out;
    out.reserve(order.size());
    for (std::size_t k : order) {
        BasisTokens bt;
        bt.basis = k;
        bt.weight = weights[k];
        std::vector<int> toks(scores.rows());
        std::iota(toks.begin(), toks.end(), 0);
        std::stable_sort(toks.begin(), toks.end(),
                         [&](int a, int b) { return scores(a, k) > scores(b, k); });
        const std::size_t take = std::min(top_k, toks.size());
        for (std::size_t i = 0; i < take; ++i)
            bt.tokens.push_back({toks[i], scores(toks[i], k)});
        out.push_back(std::move(bt));
    }
    return out;
}

// De-embed a model layer by name ("block0", "block1", ...). Dense and
// finalized layers are factorized on the fly; a mid-compression layer
// exposes its live bases and retrained weights.
inline std::vector<BasisTokens> inspect_layer(const ToyModel& model,
                                              const std::string& layer_name, std::size_t top_k) {
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        if (block_name(k) != layer_name) continue;
        Matrix u;
        std::vector<double> weights;
        if (const auto* fl = std::get_if<FactorizedLinear>(&model.blocks[k])) {
            u = fl->base_u();
            weights = fl->weights();
        } else {
            Matrix w;
            if (const auto* dl = std::get_if<DenseLinear>(&model.blocks[k]))
                w = dl->weight;
            else
                w = matmul(std::get<PairLinear>(model.blocks[k]).second,
                           std::get<PairLinear>(model.blocks[k]).first);
            SvdResult f = svd(w);
            u = std::move(f.u);
            weights = std::move(f.s);
        }
        return de_embed_bases(model.output.weight, u, weights, top_k);
    }
    std::string known;
    for (std::size_t k = 0; k < model.blocks.size(); ++k)
        known += (k ? ", " : "") + block_name(k);
    throw std::invalid_argument("inspect: unknown layer '" + layer_name + "' (have: " + known +
                                ")");
}

}  // namespace bsel
