#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsel/compress.hpp"
#include "bsel/corpus.hpp"
#include "bsel/model.hpp"
#include "bsel/report.hpp"
#include "bsel/train.hpp"

namespace bsel {

// Desk-scale stand-in for the paper-style setup: pretrain a small model on
// a mixed corpus, finetune per target task, then compare compression
// methods at matched parameter budgets.
struct HarnessOptions {
    std::uint64_t corpus_seed = 7;
    std::uint64_t train_seed = 7;  // init + pretraining stream
    CorpusOptions corpus;
    ModelConfig model;
    double pretrain_epochs = 3.0;
    double finetune_epochs = 1.5;
    double lr = 1e-3;
    std::size_t batch = 64;
};

struct GridCell {
    std::string task = "arithmetic";
    std::uint64_t seed = 1;
    CompressionConfig config;
    std::vector<std::string> methods = {"basis-selection"};
};

struct ExperimentPreset {
    std::string name;
    HarnessOptions harness;
    std::vector<GridCell> cells;
};

namespace detail_exp {

inline std::string join_ranks(const std::vector<std::size_t>& ranks) {
    std::string out;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ranks[i]);
    }
    return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// per-layer ranks the plain mass rule would keep, used as the baseline
// budget when no basis-selection run is in the cell
inline std::vector<std::size_t> mass_rule_ranks(const ToyModel& model,
                                                const CompressionConfig& cfg) {
    std::vector<std::size_t> ranks;
    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        if (!cfg.selects(k)) continue;
        const auto& dl = std::get<DenseLinear>(model.blocks[k]);
        SvdResult f = svd(dl.weight);
        ranks.push_back(mass_kept_indices(f.s, cfg.keep_ratio).size());
    }
    return ranks;
}

}  // namespace detail_exp

class ExperimentRunner {
public:
    explicit ExperimentRunner(const HarnessOptions& opt)
        : opt_(opt), corpora_(make_corpora(opt.corpus_seed, opt.corpus)) {}

    const Corpora& corpora() const { return corpora_; }

    const TaskSpec& task(const std::string& name) const {
        if (name == "arithmetic") return corpora_.arithmetic;
        if (name == "patterns") return corpora_.patterns;
        throw std::invalid_argument("experiment: unknown task '" + name + "'");
    }

    void set_pretrained(ToyModel model) {
        pretrained_ = std::move(model);
        have_pretrained_ = true;
    }

    const ToyModel& pretrained() {
        if (!have_pretrained_) {
            ToyModel m = ToyModel::init(opt_.model, mix_seed(opt_.train_seed, 0x696e6974));
            m.corpus_seed = opt_.corpus_seed;
            TokenDataset ds = make_dataset(corpora_.pretrain, opt_.model.context);
            TrainOptions topt;
            topt.epochs = opt_.pretrain_epochs;
            topt.lr = opt_.lr;
            topt.batch = opt_.batch;
            topt.seed = mix_seed(opt_.train_seed, 0x70726570);
            train(m, ds, topt);
            set_pretrained(std::move(m));
        }
        return pretrained_;
    }

    // Finetuned checkpoints are cached per (task, seed) so every method in
    // a cell starts from the same weights.
    const ToyModel& finetuned(const std::string& task_name, std::uint64_t seed) {
        const auto key = std::make_pair(task_name, seed);
        auto it = finetuned_.find(key);
        if (it != finetuned_.end()) return it->second;

        ToyModel m = pretrained();
        TokenDataset ds = make_dataset(task(task_name).train_lines, m.config.context);
        TrainOptions topt;
        topt.epochs = opt_.finetune_epochs;
        topt.lr = opt_.lr;
        topt.batch = opt_.batch;
        topt.seed = mix_seed(seed, 0x66746e65);
        train(m, ds, topt);
        return finetuned_.emplace(key, std::move(m)).first->second;
    }

    // One grid point: finetune, compress with the method, post-finetune
    // (inside the method), evaluate.
    RunRow run_point(const GridCell& cell, const std::string& method,
                     const std::vector<std::size_t>* budget_ranks,
                     std::vector<std::size_t>* out_ranks = nullptr) {
        CompressionConfig cfg = cell.config;
        cfg.seed = cell.seed;
        cfg.batch = opt_.batch;
        const TaskSpec& ts = task(cell.task);
        ToyModel base = finetuned(cell.task, cell.seed);
        TokenDataset ds = make_dataset(ts.train_lines, base.config.context);

        const auto t0 = std::chrono::steady_clock::now();
        ToyModel result;
        std::vector<std::size_t> ranks;
        if (method == "basis-selection") {
            CompressResult cr = compress(base, ds, cfg);
            result = std::move(cr.model);
            ranks = std::move(cr.final_ranks);
        } else if (method == "svd") {
            const RankSpec spec = budget_ranks ? RankSpec::ranks(*budget_ranks)
                                               : RankSpec::mass(cfg.keep_ratio);
            result = baseline_svd_truncate(base, ds, spec, cfg, nullptr, &ranks);
        } else if (method == "fwsvd") {
            std::vector<std::size_t> budget =
                budget_ranks ? *budget_ranks : detail_exp::mass_rule_ranks(base, cfg);
            result = baseline_fwsvd(base, ds, RankSpec::ranks(budget), cfg, &ranks);
        } else {
            throw std::invalid_argument("experiment: unknown method '" + method + "'");
        }

        RunRow row;
        row.method = method;
        row.seed = cell.seed;
        row.keep_ratio = cfg.keep_ratio;
        row.pruning_times = cfg.pruning_times;
        row.additional_dim = cfg.additional_dim;
        row.compression_ratio = compression_ratio(base, result);
        row.rank_per_layer = detail_exp::join_ranks(ranks);
        row.target_task = cell.task;
        row.accuracy = evaluate(result, ts);
        row.wall_seconds = detail_exp::seconds_since(t0);
        if (out_ranks) *out_ranks = std::move(ranks);
        return row;
    }

    // Methods run in canonical order; the basis-selection ranks set the
    // parameter budget the baselines are truncated to.
    std::vector<RunRow> run(const std::vector<GridCell>& cells) {
        std::vector<RunRow> rows;
        for (const GridCell& cell : cells) {
            auto listed = [&](const std::string& m) {
                for (const std::string& s : cell.methods)
                    if (s == m) return true;
                return false;
            };
            std::vector<std::size_t> basis_ranks;
            bool have_budget = false;
            if (listed("basis-selection")) {
                rows.push_back(run_point(cell, "basis-selection", nullptr, &basis_ranks));
                have_budget = true;
            }
            if (listed("svd"))
                rows.push_back(run_point(cell, "svd", have_budget ? &basis_ranks : nullptr));
            if (listed("fwsvd"))
                rows.push_back(run_point(cell, "fwsvd", have_budget ? &basis_ranks : nullptr));
        }
        return rows;
    }

private:
    HarnessOptions opt_;
    Corpora corpora_;
    ToyModel pretrained_;
    bool have_pretrained_ = false;
    std::map<std::pair<std::string, std::uint64_t>, ToyModel> finetuned_;
};

inline ExperimentPreset make_preset(const std::string& name,
                                    std::vector<std::uint64_t> seeds = {1, 2, 3}) {
    ExperimentPreset p;
    p.name = name;
    if (seeds.empty()) throw std::invalid_argument("preset: need at least one seed");

    CompressionConfig base;
    base.pruning_times = 25;
    base.keeping_epoch = 0.5;
    base.pruning_epoch = 1.5;
    base.post_finetune_epoch = 1.0;
    base.lr_tune = 1e-3;
    base.lr_post = 1e-3;

    if (name == "main") {
        for (double keep : {0.5, 0.12}) {
            for (std::uint64_t seed : seeds) {
                GridCell c;
                c.seed = seed;
                c.config = base;
                c.config.keep_ratio = keep;
                c.config.additional_dim = 8;
                c.methods = {"basis-selection", "svd", "fwsvd"};
                p.cells.push_back(std::move(c));
            }
        }
    } else if (name == "ablation-additional-dim") {
        for (std::size_t extra : {std::size_t{0}, std::size_t{32}}) {
            for (std::uint64_t seed : seeds) {
                GridCell c;
                c.seed = seed;
                c.config = base;
                c.config.keep_ratio = 0.10;
                c.config.additional_dim = extra;
                c.methods = {"basis-selection"};
                p.cells.push_back(std::move(c));
            }
        }
    } else if (name == "ablation-pruning-times") {
        for (std::size_t times : {std::size_t{2}, std::size_t{100}}) {
            for (std::uint64_t seed : seeds) {
                GridCell c;
                c.seed = seed;
                c.config = base;
                c.config.keep_ratio = 0.06;
                c.config.additional_dim = 0;
                c.config.pruning_times = times;
                c.config.pruning_epoch = 2.0;
                c.methods = {"basis-selection"};
                p.cells.push_back(std::move(c));
            }
        }
    } else if (name == "mini") {
        GridCell c;
        c.seed = seeds[0];
        c.config = base;
        c.config.keep_ratio = 0.5;
        c.config.pruning_times = 2;
        c.config.keeping_epoch = 0.1;
        c.config.pruning_epoch = 0.2;
        c.config.post_finetune_epoch = 0.1;
        c.methods = {"basis-selection", "svd", "fwsvd"};
        p.cells.push_back(std::move(c));
    } else {
        throw std::invalid_argument(
            "unknown preset '" + name +
            "' (have: main, ablation-additional-dim, ablation-pruning-times, mini)");
    }
    return p;
}

inline ToyModel pretrain_model(const HarnessOptions& opt) {
    ExperimentRunner runner(opt);
    return runner.pretrained();
}

inline const TaskSpec& task_by_name(const Corpora& corpora, const std::string& name) {
    if (name == "arithmetic") return corpora.arithmetic;
    if (name == "patterns") return corpora.patterns;
    throw std::invalid_argument("unknown task '" + name + "' (have: arithmetic, patterns)");
}

// flat key=value dump, echoed next to the RunReport for provenance
inline std::string describe_preset(const ExperimentPreset& p) {
    std::ostringstream os;
    os << "preset = " << p.name << '\n';
    os << "corpus_seed = " << p.harness.corpus_seed << '\n';
    os << "train_seed = " << p.harness.train_seed << '\n';
    os << "pretrain_lines = " << p.harness.corpus.pretrain_lines << '\n';
    os << "task_lines = " << p.harness.corpus.task_lines << '\n';
    os << "pretrain_epochs = " << p.harness.pretrain_epochs << '\n';
    os << "finetune_epochs = " << p.harness.finetune_epochs << '\n';
    os << "lr = " << p.harness.lr << '\n';
    os << "batch = " << p.harness.batch << '\n';
    for (std::size_t i = 0; i < p.cells.size(); ++i) {
        const GridCell& c = p.cells[i];
        os << "cell" << i << " = task:" << c.task << " seed:" << c.seed
           << " keep_ratio:" << c.config.keep_ratio
           << " pruning_times:" << c.config.pruning_times
           << " keeping_epoch:" << c.config.keeping_epoch
           << " pruning_epoch:" << c.config.pruning_epoch
           << " post_finetune_epoch:" << c.config.post_finetune_epoch
           << " additional_dim:" << c.config.additional_dim << " methods:";
        for (std::size_t j = 0; j < c.methods.size(); ++j)
            os << (j ? "+" : "") << c.methods[j];
        os << '\n';
    }
    return os.str();
}

}  // namespace bsel
