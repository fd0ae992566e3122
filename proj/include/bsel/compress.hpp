#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bsel/adam.hpp"
#include "bsel/corpus.hpp"
#include "bsel/factorized_linear.hpp"
#include "bsel/model.hpp"
#include "bsel/svd.hpp"
#include "bsel/train.hpp"

namespace bsel {

struct CompressionConfig {
    double keep_ratio = 1.0;        // fraction of singular mass kept overall, in (0, 1]
    std::size_t pruning_times = 1;  // number of pruning rounds
    double keeping_epoch = 0.0;     // tuning epochs before any pruning
    double pruning_epoch = 0.0;     // tuning epochs spread across pruning rounds
    double post_finetune_epoch = 0.0;
    std::size_t additional_dim = 0;
    double lr_tune = 1e-3;
    double lr_post = 1e-3;
    std::size_t batch = 64;
    std::size_t fisher_batches = 32;  // used by the fisher-weighted baseline
    std::uint64_t seed = 0;
    std::function<bool(std::size_t)> select_block;  // null = compress every block

    double keep_ratio_per_pruning() const {
        return std::pow(keep_ratio, 1.0 / static_cast<double>(pruning_times));
    }

    void validate() const {
        if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
            throw std::invalid_argument("keep_ratio must be in (0, 1], got " +
                                        std::to_string(keep_ratio));
        if (pruning_times == 0)
            throw std::invalid_argument("pruning_times must be positive");
        if (keeping_epoch < 0.0 || pruning_epoch < 0.0 || post_finetune_epoch < 0.0)
            throw std::invalid_argument("epoch counts must be nonnegative");
        if (batch == 0) throw std::invalid_argument("batch size must be positive");
    }

    bool selects(std::size_t block) const { return !select_block || select_block(block); }
};

struct CompressionEvent {
    std::size_t iteration = 0;  // tuning iterations completed when the prune fired
    std::string layer;
    std::size_t kept_rank = 0;
    double kept_mass_fraction = 0.0;  // |mass after| / |mass before| for this prune
    double train_loss = 0.0;
    std::int64_t unix_time = 0;
};

inline bool events_equal_ignoring_time(const std::vector<CompressionEvent>& a,
                                       const std::vector<CompressionEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].iteration != b[i].iteration || a[i].layer != b[i].layer ||
            a[i].kept_rank != b[i].kept_rank ||
            a[i].kept_mass_fraction != b[i].kept_mass_fraction ||
            a[i].train_loss != b[i].train_loss)
            return false;
    }
    return true;
}

struct PruneRecord {
    std::string layer;
    std::vector<double> weights_before;  // basis weights at the moment of pruning
    std::vector<std::size_t> kept;       // surviving indices, ascending
};

using PruneObserver = std::function<void(const PruneRecord&)>;

struct CompressResult {
    ToyModel model;
    std::vector<CompressionEvent> events;
    std::vector<std::size_t> final_ranks;  // inner rank r' per compressed block
};

namespace detail {

inline std::int64_t wall_unix_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline std::vector<std::size_t> selected_dense_blocks(const ToyModel& model,
                                                      const CompressionConfig& cfg) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        if (!cfg.selects(k)) continue;
        if (!std::holds_alternative<DenseLinear>(model.blocks[k]))
            throw std::invalid_argument("compress: " + block_name(k) +
                                        " is not a dense layer; already compressed?");
        out.push_back(k);
    }
    if (out.empty()) throw std::invalid_argument("compress: no layers selected");
    return out;
}

inline void finalize_blocks(ToyModel& model, const std::vector<std::size_t>& selected,
                            std::vector<std::size_t>& final_ranks) {
    for (std::size_t k : selected) {
        auto& fl = std::get<FactorizedLinear>(model.blocks[k]);
        FactorizedLinear::Finalized fin = fl.finalize();
        PairLinear pair;
        pair.first = std::move(fin.first_weight);
        pair.second = std::move(fin.second_weight);
        pair.bias = std::move(fin.bias);
        final_ranks.push_back(pair.inner_rank());
        model.blocks[k] = std::move(pair);
    }
}

inline void post_finetune(ToyModel& model, const TokenDataset& data,
                          const CompressionConfig& cfg) {
    if (cfg.post_finetune_epoch <= 0.0) return;
    TrainOptions opt;
    opt.epochs = cfg.post_finetune_epoch;
    opt.lr = cfg.lr_post;
    opt.batch = cfg.batch;
    opt.seed = mix_seed(cfg.seed, 0x706f7374);
    train(model, data, opt);
}

}  // namespace detail

// The full compression pipeline:
//   (a) factorize every selected dense layer,
//   (b) tune the learnable parameters for keeping_epoch epochs,
//   (c) tune for pruning_epoch epochs, pruning every selected layer by
//       keep_ratio^(1/pruning_times) after each iterations-per-pruning
//       block of iterations (exactly pruning_times prune rounds),
//   (d) finalize each layer into a pair of dense layers,
//   (e) ordinary finetuning of the finalized model.
inline CompressResult compress(const ToyModel& input, const TokenDataset& data,
                               const CompressionConfig& cfg, PruneObserver observer = nullptr) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("compress: empty data stream");

    CompressResult res;
    res.model = input;
    ToyModel& model = res.model;
    const std::vector<std::size_t> selected = detail::selected_dense_blocks(model, cfg);

    for (std::size_t k : selected) {
        auto& dl = std::get<DenseLinear>(model.blocks[k]);
        model.blocks[k] = FactorizedLinear::from_dense(dl.weight, dl.bias, cfg.additional_dim,
                                                       mix_seed(cfg.seed, 0x100 + k));
    }

    DataStream stream(data, cfg.batch, mix_seed(cfg.seed, 0x74756e65));
    const std::size_t per_epoch = stream.iterations_per_epoch();
    const long long keep_iters =
        std::llround(cfg.keeping_epoch * static_cast<double>(per_epoch));
    const long long iters_per_pruning = std::llround(
        cfg.pruning_epoch * static_cast<double>(per_epoch) /
        static_cast<double>(cfg.pruning_times));
    if (cfg.pruning_epoch > 0.0 && iters_per_pruning < 1)
        throw std::invalid_argument(
            "compress: pruning_epoch too small, iterations per pruning rounds to zero");
    const double ratio_per_pruning = cfg.keep_ratio_per_pruning();

    Adam adam(cfg.lr_tune);
    std::vector<TensorGrad> scratch;
    std::size_t iteration = 0;
    double last_loss = std::numeric_limits<double>::quiet_NaN();

    auto tune = [&]() {
        last_loss = train_iteration(model, stream, adam, scratch, iteration);
        ++iteration;
    };
    // events need a loss even when a config runs zero tuning iterations
    auto current_loss = [&]() {
        if (std::isfinite(last_loss)) return last_loss;
        DataStream probe(data, cfg.batch, mix_seed(cfg.seed, 0x70726f62));
        return model.loss_only(probe.next());
    };

    for (long long i = 0; i < keep_iters; ++i) tune();

    for (std::size_t round = 0; round < cfg.pruning_times; ++round) {
        for (long long i = 0; i < iters_per_pruning; ++i) tune();
        const double loss_at_prune = current_loss();
        for (std::size_t k : selected) {
            auto& fl = std::get<FactorizedLinear>(model.blocks[k]);
            const std::vector<std::size_t> kept =
                mass_kept_indices(fl.weights(), ratio_per_pruning);
            if (observer) observer({block_name(k), fl.weights(), kept});

            double mass_before = 0.0, mass_kept = 0.0;
            for (double w : fl.weights()) mass_before += std::abs(w);
            for (std::size_t idx : kept) mass_kept += std::abs(fl.weights()[idx]);

            fl.prune_by_mass(ratio_per_pruning);
            adam.prune_state(block_name(k) + ".s", kept);

            CompressionEvent ev;
            ev.iteration = iteration;
            ev.layer = block_name(k);
            ev.kept_rank = fl.rank();
            ev.kept_mass_fraction = mass_before > 0.0 ? mass_kept / mass_before : 1.0;
            ev.train_loss = loss_at_prune;
            ev.unix_time = detail::wall_unix_seconds();
            res.events.push_back(ev);
        }
    }

    detail::finalize_blocks(model, selected, res.final_ranks);
    detail::post_finetune(model, data, cfg);
    return res;
}

// Rank target for the one-shot baselines: a uniform rank, explicit
// per-layer ranks, or the same mass rule the pipeline uses.
struct RankSpec {
    enum class Kind { Uniform, PerLayer, MassRatio };
    Kind kind = Kind::Uniform;
    std::size_t uniform = 0;
    std::vector<std::size_t> per_layer;
    double mass_ratio = 1.0;

    static RankSpec rank(std::size_t k) {
        RankSpec r;
        r.kind = Kind::Uniform;
        r.uniform = k;
        return r;
    }
    static RankSpec ranks(std::vector<std::size_t> ks) {
        RankSpec r;
        r.kind = Kind::PerLayer;
        r.per_layer = std::move(ks);
        return r;
    }
    static RankSpec mass(double ratio) {
        RankSpec r;
        r.kind = Kind::MassRatio;
        r.mass_ratio = ratio;
        return r;
    }

    std::size_t rank_for(std::size_t ordinal) const {
        if (kind == Kind::Uniform) {
            if (uniform == 0) throw std::invalid_argument("baseline: rank must be positive");
            return uniform;
        }
        if (ordinal >= per_layer.size() || per_layer[ordinal] == 0)
            throw std::invalid_argument("baseline: missing or nonpositive per-layer rank");
        return per_layer[ordinal];
    }
};

// One-shot truncated SVD per layer, then the same finalization and
// post-finetuning steps the pipeline performs.
inline ToyModel baseline_svd_truncate(const ToyModel& input, const TokenDataset& data,
                                      const RankSpec& spec, const CompressionConfig& cfg,
                                      PruneObserver observer = nullptr,
                                      std::vector<std::size_t>* final_ranks = nullptr) {
    cfg.validate();
    ToyModel model = input;
    const std::vector<std::size_t> selected = detail::selected_dense_blocks(model, cfg);

    for (std::size_t ordinal = 0; ordinal < selected.size(); ++ordinal) {
        const std::size_t k = selected[ordinal];
        auto& dl = std::get<DenseLinear>(model.blocks[k]);
        FactorizedLinear fl = FactorizedLinear::from_dense(dl.weight, dl.bias, 0,
                                                           mix_seed(cfg.seed, 0x200 + k));
        if (spec.kind == RankSpec::Kind::MassRatio) {
            const std::vector<std::size_t> kept =
                mass_kept_indices(fl.weights(), spec.mass_ratio);
            if (observer) observer({block_name(k), fl.weights(), kept});
            fl.prune_by_mass(spec.mass_ratio);
        } else {
            const std::size_t target = std::min(spec.rank_for(ordinal), fl.rank());
            if (observer)
                observer({block_name(k), fl.weights(), top_k_indices(fl.weights(), target)});
            fl.truncate_to_rank(target);
        }
        model.blocks[k] = std::move(fl);
    }

    std::vector<std::size_t> ranks;
    detail::finalize_blocks(model, selected, ranks);
    if (final_ranks) *final_ranks = ranks;
    detail::post_finetune(model, data, cfg);
    return model;
}

// Rank-k approximation of w under row importances: svd of diag(sqrt(imp)) * w,
// truncated and unweighted again. Zero importances must be fixed up by the
// caller.
inline Matrix fwsvd_approximate(const Matrix& w, const std::vector<double>& importance,
                                std::size_t k) {
    if (importance.size() != w.rows())
        throw std::invalid_argument("fwsvd_approximate: importance length mismatch");
    std::vector<double> root(importance.size());
    Matrix weighted = w;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        if (!(importance[i] > 0.0))
            throw std::invalid_argument("fwsvd_approximate: importances must be positive");
        root[i] = std::sqrt(importance[i]);
        double* row = weighted.row_ptr(i);
        for (std::size_t j = 0; j < weighted.cols(); ++j) row[j] *= root[i];
    }
    SvdResult f = svd(weighted);
    const std::size_t target = std::min(k, f.rank());
    Matrix left(w.rows(), target);  // diag(1/root) * U_k S_k
    for (std::size_t i = 0; i < left.rows(); ++i)
        for (std::size_t c = 0; c < target; ++c) left(i, c) = f.u(i, c) * f.s[c] / root[i];
    Matrix right(w.cols(), target);
    for (std::size_t i = 0; i < right.rows(); ++i)
        for (std::size_t c = 0; c < target; ++c) right(i, c) = f.v(i, c);
    return matmul_a_bt(left, right);
}

// Fisher-weighted truncation: weight each row of W by the square root of
// its accumulated squared loss-gradient before the SVD, so that rows the
// task is sensitive to dominate the kept subspace.
inline ToyModel baseline_fwsvd(const ToyModel& input, const TokenDataset& data,
                               const RankSpec& spec, const CompressionConfig& cfg,
                               std::vector<std::size_t>* final_ranks = nullptr) {
    cfg.validate();
    if (spec.kind == RankSpec::Kind::MassRatio)
        throw std::invalid_argument("baseline_fwsvd: needs a rank target, not a mass ratio");
    if (data.size() == 0) throw std::invalid_argument("baseline_fwsvd: empty data stream");

    ToyModel model = input;
    const std::vector<std::size_t> selected = detail::selected_dense_blocks(model, cfg);

    // accumulate row importance over sampled batches
    std::vector<std::vector<double>> importance(selected.size());
    for (std::size_t o = 0; o < selected.size(); ++o) {
        const auto& dl = std::get<DenseLinear>(model.blocks[selected[o]]);
        importance[o].assign(dl.out_dim(), 0.0);
    }
    {
        DataStream stream(data, cfg.batch, mix_seed(cfg.seed, 0x66697368));
        std::vector<TensorGrad> grads;
        for (std::size_t b = 0; b < cfg.fisher_batches; ++b) {
            Minibatch mb = stream.next();
            model.loss_and_grads(mb, grads);
            for (std::size_t o = 0; o < selected.size(); ++o) {
                const std::size_t k = selected[o];
                const auto& dl = std::get<DenseLinear>(model.blocks[k]);
                const std::string want = block_name(k) + ".w";
                for (const TensorGrad& g : grads) {
                    if (g.name != want) continue;
                    const std::size_t m = dl.in_dim();
                    for (std::size_t i = 0; i < dl.out_dim(); ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) {
                            const double gv = g.grad[i * m + j];
                            acc += gv * gv;
                        }
                        importance[o][i] += acc;
                    }
                }
            }
        }
    }

    for (std::size_t o = 0; o < selected.size(); ++o) {
        const std::size_t k = selected[o];
        auto& dl = std::get<DenseLinear>(model.blocks[k]);
        std::vector<double>& imp = importance[o];

        // zero-importance rows fall back to the smallest positive estimate
        double min_pos = 0.0;
        for (double v : imp)
            if (v > 0.0 && (min_pos == 0.0 || v < min_pos)) min_pos = v;
        if (min_pos == 0.0) min_pos = 1.0;
        for (double& v : imp)
            if (v <= 0.0) v = min_pos;

        Matrix approx = fwsvd_approximate(dl.weight, imp, spec.rank_for(o));

        // same two-layer split as finalize()
        SvdResult split = svd(approx);
        PairLinear pair;
        pair.first = Matrix(split.rank(), approx.cols());
        for (std::size_t c = 0; c < split.rank(); ++c)
            for (std::size_t j = 0; j < approx.cols(); ++j)
                pair.first(c, j) = split.s[c] * split.v(j, c);
        pair.second = std::move(split.u);
        pair.bias = dl.bias;
        if (final_ranks) final_ranks->push_back(pair.inner_rank());
        model.blocks[k] = std::move(pair);
    }

    detail::post_finetune(model, data, cfg);
    return model;
}

inline double compression_ratio(ToyModel& original, ToyModel& compressed) {
    const std::size_t orig = original.learnable_param_count();
    const std::size_t comp = compressed.learnable_param_count();
    if (comp == 0) throw std::invalid_argument("compression_ratio: zero parameters");
    return static_cast<double>(orig) / static_cast<double>(comp);
}

inline std::vector<std::size_t> compressed_block_ranks(const ToyModel& model) {
    std::vector<std::size_t> ranks;
    for (const BlockStage& blk : model.blocks)
        if (const auto* pl = std::get_if<PairLinear>(&blk)) ranks.push_back(pl->inner_rank());
    return ranks;
}

inline void write_events_csv(const std::string& path,
                             const std::vector<CompressionEvent>& events) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("events: cannot open " + path + " for writing");
    out << "iteration,layer,kept_rank,kept_mass_fraction,train_loss,unix_time\n";
    char buf[64];
    for (const CompressionEvent& e : events) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.kept_mass_fraction);
        out << e.iteration << ',' << e.layer << ',' << e.kept_rank << ',' << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", e.train_loss);
        out << buf << ',' << e.unix_time << '\n';
    }
}

}  // namespace bsel
