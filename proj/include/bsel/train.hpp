#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsel/adam.hpp"
#include "bsel/corpus.hpp"
#include "bsel/model.hpp"

namespace bsel {

struct TrainOptions {
    double epochs = 1.0;  // fractional epochs resolve to round(iters_per_epoch * epochs)
    double lr = 1e-3;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per iteration
};

inline double train_iteration(ToyModel& model, DataStream& stream, Adam& adam,
                              std::vector<TensorGrad>& scratch, std::size_t iteration) {
    Minibatch mb = stream.next();
    adam.begin_step();
    const double loss = model.loss_and_grads(mb, scratch);
    if (!std::isfinite(loss))
        throw std::runtime_error("training diverged (non-finite loss) at iteration " +
                                 std::to_string(iteration));
    for (TensorGrad& g : scratch) adam.update(g.name, g.param, g.grad.data(), g.len);
    return loss;
}

// Plain minibatch training; used for pretraining, task finetuning and the
// post-compression finetune.
inline TrainResult train(ToyModel& model, const TokenDataset& data, const TrainOptions& opt) {
    TrainResult res;
    if (data.size() == 0) throw std::invalid_argument("train: empty data stream");
    const std::size_t per_epoch = (data.size() + opt.batch - 1) / opt.batch;
    const long long iters = std::llround(opt.epochs * static_cast<double>(per_epoch));
    if (iters <= 0) return res;

    DataStream stream(data, opt.batch, mix_seed(opt.seed, 0x7472));
    Adam adam(opt.lr);
    std::vector<TensorGrad> scratch;
    for (long long i = 0; i < iters; ++i)
        res.loss_curve.push_back(train_iteration(model, stream, adam, scratch,
                                                 static_cast<std::size_t>(i)));
    return res;
}

// Exact-match accuracy of greedy decodes over the task's held-out items.
inline double evaluate(const ToyModel& model, const TaskSpec& task) {
    if (task.eval_items.empty()) throw std::invalid_argument("evaluate: empty eval set");
    std::size_t hits = 0;
    for (const EvalItem& item : task.eval_items) {
        std::vector<int> history = vocab::tokenize(item.prompt);
        std::string generated;
        for (std::size_t i = 0; i < item.answer.size(); ++i) {
            const int tok = model.predict_next(history);
            generated += vocab::decode(tok);
            history.push_back(tok);
        }
        if (generated == item.answer) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(task.eval_items.size());
}

}  // namespace bsel
