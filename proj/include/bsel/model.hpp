#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bsel/corpus.hpp"
#include "bsel/factorized_linear.hpp"
#include "bsel/linear.hpp"
#include "bsel/matrix.hpp"
#include "bsel/rng.hpp"

namespace bsel {

enum class PoolMode { Concat, Mean };

struct ModelConfig {
    std::size_t vocab = vocab::size();
    std::size_t embed_dim = 64;
    std::size_t context = 8;
    std::vector<std::size_t> hidden = {256, 256, 256};
    PoolMode pool = PoolMode::Concat;

    std::size_t input_dim() const {
        return pool == PoolMode::Concat ? context * embed_dim : embed_dim;
    }
};

// A block is one linear stage followed by tanh. The stage starts dense,
// becomes factorized during compression, and ends as a two-matrix pair
// after finalization.
using BlockStage = std::variant<DenseLinear, FactorizedLinear, PairLinear>;

inline std::string block_name(std::size_t k) { return "block" + std::to_string(k); }

struct TensorGrad {
    std::string name;
    double* param = nullptr;
    std::size_t len = 0;
    std::vector<double> grad;
};

// Character-window next-token model: embedding -> tanh blocks -> vocab
// logits. Inputs are fixed-length token windows; embeddings are
// concatenated (or mean-pooled) into the first block's input.
class ToyModel {
public:
    ModelConfig config;
    Matrix embedding;  // vocab x embed_dim
    std::vector<BlockStage> blocks;
    DenseLinear output;  // vocab x hidden.back()
    std::uint64_t corpus_seed = 0;

    static ToyModel init(const ModelConfig& cfg, std::uint64_t seed) {
        if (cfg.hidden.empty()) throw std::invalid_argument("ToyModel: need at least one block");
        ToyModel m;
        m.config = cfg;
        Rng erng(mix_seed(seed, 11));
        m.embedding = Matrix(cfg.vocab, cfg.embed_dim);
        for (std::size_t i = 0; i < m.embedding.size(); ++i)
            m.embedding.data()[i] = erng.normal(0.0, 0.5);

        std::size_t in_dim = cfg.input_dim();
        for (std::size_t k = 0; k < cfg.hidden.size(); ++k) {
            const std::size_t out_dim = cfg.hidden[k];
            DenseLinear lin;
            lin.weight = Matrix(out_dim, in_dim);
            Rng wrng(mix_seed(seed, 20 + k));
            const double stddev = 1.0 / std::sqrt(static_cast<double>(in_dim));
            for (std::size_t i = 0; i < lin.weight.size(); ++i)
                lin.weight.data()[i] = wrng.normal(0.0, stddev);
            lin.bias.assign(out_dim, 0.0);
            m.blocks.push_back(std::move(lin));
            in_dim = out_dim;
        }
        DenseLinear out;
        out.weight = Matrix(cfg.vocab, in_dim);
        Rng orng(mix_seed(seed, 19));
        const double stddev = 1.0 / std::sqrt(static_cast<double>(in_dim));
        for (std::size_t i = 0; i < out.weight.size(); ++i)
            out.weight.data()[i] = orng.normal(0.0, stddev);
        out.bias.assign(cfg.vocab, 0.0);
        m.output = std::move(out);
        return m;
    }

    std::size_t block_in_dim(std::size_t k) const {
        return k == 0 ? config.input_dim() : config.hidden[k - 1];
    }

    Matrix embed_batch(const std::vector<int>& windows, std::size_t batch) const {
        const std::size_t c = config.context, d = config.embed_dim;
        Matrix x0(config.input_dim(), batch);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t p = 0; p < c; ++p) {
                const int tok = windows[b * c + p];
                const double* e = embedding.row_ptr(static_cast<std::size_t>(tok));
                if (config.pool == PoolMode::Concat) {
                    for (std::size_t j = 0; j < d; ++j) x0(p * d + j, b) = e[j];
                } else {
                    for (std::size_t j = 0; j < d; ++j) x0(j, b) += e[j] / static_cast<double>(c);
                }
            }
        }
        return x0;
    }

    static Matrix stage_forward(const BlockStage& stage, const Matrix& x) {
        return std::visit([&](const auto& s) { return s.forward(x); }, stage);
    }

    Matrix logits_for(const std::vector<int>& windows, std::size_t batch) const {
        Matrix x = embed_batch(windows, batch);
        for (const BlockStage& blk : blocks) {
            Matrix z = stage_forward(blk, x);
            tanh_inplace(z);
            x = std::move(z);
        }
        return output.forward(x);
    }

    // Mean cross-entropy of the batch.
    double loss_only(const Minibatch& mb) const {
        Matrix logits = logits_for(mb.windows, mb.batch);
        double loss = 0.0;
        softmax_loss(logits, mb.targets, loss, nullptr);
        return loss;
    }

    // Full backward pass. Gradients are appended to `out` in a fixed
    // order (embedding, blocks front to back, output head), matching
    // for_each_param. Non-const: the returned TensorGrads point at the
    // parameters they belong to, ready for an optimizer update.
    double loss_and_grads(const Minibatch& mb, std::vector<TensorGrad>& out) {
        const std::size_t batch = mb.batch;
        Matrix x0 = embed_batch(mb.windows, batch);
        std::vector<Matrix> acts;  // tanh outputs per block
        acts.reserve(blocks.size());
        {
            const Matrix* x = &x0;
            for (const BlockStage& blk : blocks) {
                Matrix z = stage_forward(blk, *x);
                tanh_inplace(z);
                acts.push_back(std::move(z));
                x = &acts.back();
            }
        }
        const Matrix& h_last = acts.back();
        Matrix logits = output.forward(h_last);

        double loss = 0.0;
        Matrix dlogits(logits.rows(), logits.cols());
        softmax_loss(logits, mb.targets, loss, &dlogits);

        DenseGradients og = output.backward(h_last, dlogits);
        Matrix dh = std::move(og.d_input);

        std::vector<std::vector<TensorGrad>> block_grads(blocks.size());
        for (std::size_t k = blocks.size(); k-- > 0;) {
            Matrix dz = std::move(dh);
            tanh_backward_inplace(dz, acts[k]);
            const Matrix& x = k == 0 ? x0 : acts[k - 1];
            const std::string bn = block_name(k);
            auto& tensors = block_grads[k];
            if (auto* dl = std::get_if<DenseLinear>(&blocks[k])) {
                DenseGradients g = dl->backward(x, dz);
                tensors.push_back(make_grad(bn + ".w", dl->weight, std::move(g.d_weight)));
                tensors.push_back(make_grad(bn + ".b", dl->bias, std::move(g.d_bias)));
                dh = std::move(g.d_input);
            } else if (auto* fl = std::get_if<FactorizedLinear>(&blocks[k])) {
                LayerGradients g = fl->backward(x, dz);
                tensors.push_back(make_grad(bn + ".s", fl->weights(), std::move(g.d_weights)));
                tensors.push_back(make_grad(bn + ".eu", fl->extra_u(), std::move(g.d_extra_u)));
                tensors.push_back(make_grad(bn + ".ev", fl->extra_v(), std::move(g.d_extra_v)));
                tensors.push_back(make_grad(bn + ".b", fl->bias(), std::move(g.d_bias)));
                dh = std::move(g.d_input);
            } else {
                auto* pl = std::get_if<PairLinear>(&blocks[k]);
                PairLinear::Gradients g = pl->backward(x, dz);
                tensors.push_back(make_grad(bn + ".first.w", pl->first, std::move(g.d_first)));
                tensors.push_back(make_grad(bn + ".second.w", pl->second, std::move(g.d_second)));
                tensors.push_back(make_grad(bn + ".b", pl->bias, std::move(g.d_bias)));
                dh = std::move(g.d_input);
            }
        }

        // dh is now the gradient at the embedding concatenation
        Matrix demb(embedding.rows(), embedding.cols());
        const std::size_t c = config.context, d = config.embed_dim;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t p = 0; p < c; ++p) {
                const int tok = mb.windows[b * c + p];
                double* er = demb.row_ptr(static_cast<std::size_t>(tok));
                if (config.pool == PoolMode::Concat) {
                    for (std::size_t j = 0; j < d; ++j) er[j] += dh(p * d + j, b);
                } else {
                    for (std::size_t j = 0; j < d; ++j) er[j] += dh(j, b) / static_cast<double>(c);
                }
            }
        }

        out.clear();
        out.push_back(make_grad("embed", embedding, std::move(demb)));
        for (auto& tensors : block_grads)
            for (auto& t : tensors) out.push_back(std::move(t));
        out.push_back(make_grad("out.w", output.weight, std::move(og.d_weight)));
        out.push_back(make_grad("out.b", output.bias, std::move(og.d_bias)));
        return loss;
    }

    // Visits every learnable tensor in the same order loss_and_grads
    // emits gradients. Fixed bases of factorized blocks are not visited.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("embed", embedding.data(), embedding.size());
        for (std::size_t k = 0; k < blocks.size(); ++k) {
            const std::string bn = block_name(k);
            if (auto* dl = std::get_if<DenseLinear>(&blocks[k])) {
                fn(bn + ".w", dl->weight.data(), dl->weight.size());
                fn(bn + ".b", dl->bias.data(), dl->bias.size());
            } else if (auto* fl = std::get_if<FactorizedLinear>(&blocks[k])) {
                fn(bn + ".s", fl->weights().data(), fl->weights().size());
                fn(bn + ".eu", fl->extra_u().data(), fl->extra_u().size());
                fn(bn + ".ev", fl->extra_v().data(), fl->extra_v().size());
                fn(bn + ".b", fl->bias().data(), fl->bias().size());
            } else {
                auto* pl = std::get_if<PairLinear>(&blocks[k]);
                fn(bn + ".first.w", pl->first.data(), pl->first.size());
                fn(bn + ".second.w", pl->second.data(), pl->second.size());
                fn(bn + ".b", pl->bias.data(), pl->bias.size());
            }
        }
        fn("out.w", output.weight.data(), output.weight.size());
        fn("out.b", output.bias.data(), output.bias.size());
    }

    std::size_t learnable_param_count() {
        std::size_t total = 0;
        for_each_param([&](const std::string&, double*, std::size_t len) { total += len; });
        return total;
    }

    // Greedy next-token prediction from the tail of a token history.
    int predict_next(const std::vector<int>& history) const {
        const std::size_t c = config.context;
        std::vector<int> window(c, vocab::pad_id);
        const std::size_t take = std::min(c, history.size());
        for (std::size_t i = 0; i < take; ++i)
            window[c - take + i] = history[history.size() - take + i];
        Matrix logits = logits_for(window, 1);
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.rows(); ++i)
            if (logits(i, 0) > logits(best, 0)) best = i;
        return static_cast<int>(best);
    }

private:
    static void tanh_inplace(Matrix& z) {
        for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = std::tanh(z.data()[i]);
    }

    // dz = dh * (1 - h^2), with h = tanh(z) from the forward pass
    static void tanh_backward_inplace(Matrix& dh, const Matrix& h) {
        for (std::size_t i = 0; i < dh.size(); ++i) {
            const double hv = h.data()[i];
            dh.data()[i] *= 1.0 - hv * hv;
        }
    }

    static void softmax_loss(const Matrix& logits, const std::vector<int>& targets, double& loss,
                             Matrix* dlogits) {
        const std::size_t v = logits.rows(), batch = logits.cols();
        loss = 0.0;
        std::vector<double> p(v);
        for (std::size_t j = 0; j < batch; ++j) {
            double mx = logits(0, j);
            for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, logits(i, j));
            double sum = 0.0;
            for (std::size_t i = 0; i < v; ++i) {
                p[i] = std::exp(logits(i, j) - mx);
                sum += p[i];
            }
            const std::size_t t = static_cast<std::size_t>(targets[j]);
            loss += -std::log(p[t] / sum);
            if (dlogits) {
                for (std::size_t i = 0; i < v; ++i) {
                    (*dlogits)(i, j) = (p[i] / sum - (i == t ? 1.0 : 0.0)) /
                                       static_cast<double>(batch);
                }
            }
        }
        loss /= static_cast<double>(batch);
    }

    static TensorGrad make_grad(std::string name, Matrix& param, Matrix&& grad) {
        TensorGrad t;
        t.name = std::move(name);
        t.param = param.data();
        t.len = param.size();
        t.grad = std::move(grad.storage());
        return t;
    }

    static TensorGrad make_grad(std::string name, std::vector<double>& param,
                                std::vector<double>&& grad) {
        TensorGrad t;
        t.name = std::move(name);
        t.param = param.data();
        t.len = param.size();
        t.grad = std::move(grad);
        return t;
    }
};

}  // namespace bsel
