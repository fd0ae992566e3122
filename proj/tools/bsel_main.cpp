// bsel: train, compress and evaluate small factorized models from the
// command line. Subcommands read a flat key=value config file; flags
// override file values; BS_SEED provides a default seed.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bsel/checkpoint.hpp"
#include "bsel/compress.hpp"
#include "bsel/corpus.hpp"
#include "bsel/experiment.hpp"
#include "bsel/inspect.hpp"
#include "bsel/model.hpp"
#include "bsel/report.hpp"
#include "bsel/train.hpp"

using namespace bsel;

namespace {

// user-input problems exit with code 2; everything else with 1
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        if (strip(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config: line " + std::to_string(lineno) + " of " + path +
                             " is not key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty()) throw UsageError("config: empty key on line " + std::to_string(lineno));
        kv[key] = value;
    }
    return kv;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError(what + ": not a number: '" + s + "'");
    }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError(what + ": not a nonnegative integer: '" + s + "'");
    }
}

// applies config-file values underneath flags: a flag the user typed wins
struct ConfigLayer {
    std::map<std::string, std::string> kv;

    void load(const std::string& path) {
        if (!path.empty()) kv = parse_config_file(path);
    }
    void apply(const CLI::Option* opt, const char* key, double& target) const {
        auto it = kv.find(key);
        if (it != kv.end() && opt->count() == 0) target = parse_double(it->second, key);
    }
    template <typename T>
        requires std::is_unsigned_v<T>
    void apply(const CLI::Option* opt, const char* key, T& target) const {
        auto it = kv.find(key);
        if (it != kv.end() && opt->count() == 0)
            target = static_cast<T>(parse_u64(it->second, key));
    }
    void apply(const CLI::Option* opt, const char* key, std::string& target) const {
        auto it = kv.find(key);
        if (it != kv.end() && opt->count() == 0) target = it->second;
    }
    bool has(const char* key) const { return kv.count(key) > 0; }
};

// seed precedence: --seed flag, then config file, then BS_SEED, then default
std::uint64_t resolve_seed(const CLI::Option* opt, const ConfigLayer& file, std::uint64_t flagged,
                           std::uint64_t fallback) {
    if (opt->count() > 0) return flagged;
    if (file.has("seed")) return parse_u64(file.kv.at("seed"), "seed");
    if (const char* env = std::getenv("BS_SEED")) return parse_u64(env, "BS_SEED");
    return fallback;
}

void check_keep_ratio(double v) {
    if (!(v > 0.0) || v > 1.0)
        throw UsageError("keep_ratio must be in the range (0, 1], got " + std::to_string(v));
}

std::string join_ranks(const std::vector<std::size_t>& ranks) {
    std::string out;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ranks[i]);
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(parse_u64(tok, "seeds"));
    }
    if (out.empty()) throw UsageError("seeds: need at least one seed");
    return out;
}

struct CommonTrainFlags {
    std::string config_path;
    std::uint64_t seed = 7;
    std::uint64_t corpus_seed = 7;
    std::size_t pretrain_lines = 3000;
    std::size_t task_lines = 2000;
    double lr = 1e-3;
    std::size_t batch = 64;
};

int cmd_pretrain(const CommonTrainFlags& cf, const ConfigLayer& file, double epochs,
                 const std::string& out) {
    HarnessOptions opt;
    opt.corpus_seed = cf.corpus_seed;
    opt.train_seed = cf.seed;
    opt.corpus.pretrain_lines = cf.pretrain_lines;
    opt.corpus.task_lines = cf.task_lines;
    opt.pretrain_epochs = epochs;
    opt.lr = cf.lr;
    opt.batch = cf.batch;
    (void)file;

    ExperimentRunner runner(opt);
    ToyModel model = runner.pretrained();
    save_checkpoint(out, model);
    std::cout << "pretrained " << model.learnable_param_count() << " parameters, "
              << "arithmetic accuracy " << evaluate(model, runner.corpora().arithmetic)
              << ", patterns accuracy " << evaluate(model, runner.corpora().patterns) << "\n";
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_finetune(const CommonTrainFlags& cf, const std::string& task, double epochs,
                 const std::string& checkpoint, const std::string& out) {
    ToyModel model = load_checkpoint(checkpoint);
    Corpora corpora = make_corpora(model.corpus_seed,
                                   {cf.pretrain_lines, cf.task_lines, 20, 64});
    const TaskSpec& ts = task_by_name(corpora, task);
    TokenDataset ds = make_dataset(ts.train_lines, model.config.context);
    TrainOptions topt;
    topt.epochs = epochs;
    topt.lr = cf.lr;
    topt.batch = cf.batch;
    topt.seed = mix_seed(cf.seed, 0x66746e65);
    train(model, ds, topt);
    save_checkpoint(out, model);
    std::cout << "finetuned on " << task << ", accuracy " << evaluate(model, ts) << "\n";
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_compress(const CommonTrainFlags& cf, const std::string& task, const std::string& method,
                 CompressionConfig cfg, std::size_t rank, const std::string& checkpoint,
                 const std::string& out, const std::string& events_path) {
    check_keep_ratio(cfg.keep_ratio);
    cfg.validate();
    cfg.seed = cf.seed;
    cfg.batch = cf.batch;

    ToyModel model = load_checkpoint(checkpoint);
    Corpora corpora = make_corpora(model.corpus_seed,
                                   {cf.pretrain_lines, cf.task_lines, 20, 64});
    const TaskSpec& ts = task_by_name(corpora, task);
    TokenDataset ds = make_dataset(ts.train_lines, model.config.context);

    std::cout << "keep_ratio_per_pruning = " << cfg.keep_ratio_per_pruning() << "\n";

    ToyModel result;
    std::vector<std::size_t> ranks;
    if (method == "basis-selection" || method == "basis") {
        CompressResult res = compress(model, ds, cfg);
        result = std::move(res.model);
        ranks = std::move(res.final_ranks);
        if (!events_path.empty()) {
            write_events_csv(events_path, res.events);
            std::cout << "wrote " << res.events.size() << " events to " << events_path << "\n";
        }
    } else if (method == "svd") {
        const RankSpec spec = rank > 0 ? RankSpec::rank(rank) : RankSpec::mass(cfg.keep_ratio);
        result = baseline_svd_truncate(model, ds, spec, cfg, nullptr, &ranks);
    } else if (method == "fwsvd") {
        RankSpec spec = RankSpec::rank(1);
        if (rank > 0) {
            spec = RankSpec::rank(rank);
        } else {
            spec = RankSpec::ranks(detail_exp::mass_rule_ranks(model, cfg));
        }
        result = baseline_fwsvd(model, ds, spec, cfg, &ranks);
    } else {
        throw UsageError("unknown method '" + method +
                         "' (have: basis-selection, svd, fwsvd)");
    }

    std::cout << "rank_per_layer = " << join_ranks(ranks) << "\n";
    std::cout << "compression_ratio = " << compression_ratio(model, result) << "\n";
    std::cout << "accuracy = " << evaluate(result, ts) << "\n";
    save_checkpoint(out, result);
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_eval(const CommonTrainFlags& cf, const std::string& task,
             const std::string& checkpoint) {
    ToyModel model = load_checkpoint(checkpoint);
    Corpora corpora = make_corpora(model.corpus_seed,
                                   {cf.pretrain_lines, cf.task_lines, 20, 64});
    const TaskSpec& ts = task_by_name(corpora, task);
    std::cout << "accuracy " << evaluate(model, ts) << "\n";
    return 0;
}

int cmd_experiment(const std::string& preset_name, const std::string& seeds_csv,
                   const std::string& out_dir, const std::string& pretrained_path) {
    ExperimentPreset preset = make_preset(preset_name, parse_seed_list(seeds_csv));

    std::filesystem::create_directories(out_dir);
    ExperimentRunner runner(preset.harness);
    if (!pretrained_path.empty()) runner.set_pretrained(load_checkpoint(pretrained_path));

    std::vector<RunRow> rows = runner.run(preset.cells);
    const std::string report_path = (std::filesystem::path(out_dir) / "RunReport.csv").string();
    write_report(report_path, rows);
    {
        std::ofstream cfgout(std::filesystem::path(out_dir) / "config.txt");
        cfgout << describe_preset(preset);
        cfgout << "seeds = " << seeds_csv << "\n";
        cfgout << "pretrained = " << (pretrained_path.empty() ? "(trained in-run)" : pretrained_path)
               << "\n";
    }
    std::cout << "wrote " << rows.size() << " rows to " << report_path << "\n";
    std::cout << format_aggregate_table(aggregate_report(rows));
    return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& layer, std::size_t top_k,
                std::size_t max_bases) {
    ToyModel model = load_checkpoint(checkpoint);
    std::vector<BasisTokens> bases = inspect_layer(model, layer, top_k);
    const std::size_t show = std::min(max_bases, bases.size());
    std::cout << layer << ": " << bases.size() << " bases, showing " << show << "\n";
    for (std::size_t i = 0; i < show; ++i) {
        const BasisTokens& b = bases[i];
        std::cout << "basis " << b.basis << " weight " << b.weight << ":";
        for (const auto& [tok, score] : b.tokens) {
            const char ch = static_cast<std::size_t>(tok) <= vocab::chars().size()
                                ? vocab::decode(tok)
                                : '?';
            std::cout << " '" << ch << "' " << score;
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out,
               const std::string& summary) {
    std::vector<RunRow> merged = merge_reports(inputs);
    if (!out.empty()) {
        write_report(out, merged);
        std::cout << "wrote " << merged.size() << " rows to " << out << "\n";
    }
    const std::string table = format_aggregate_table(aggregate_report(merged));
    if (!summary.empty()) {
        std::ofstream sout(summary);
        if (!sout) throw std::runtime_error("report: cannot open " + summary);
        sout << table;
    }
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-rank compression of small dense models by basis selection"};
    app.require_subcommand(1);

    // shared flag storage; each subcommand binds the subset it uses
    CommonTrainFlags cf;
    std::string task = "arithmetic";
    std::string method = "basis-selection";
    std::string checkpoint, out, events_path, summary_path;
    std::string preset_name = "main", seeds_csv = "1,2,3";
    std::string layer = "block2";
    double epochs = 1.0;
    std::size_t rank = 0, top_k = 10, max_bases = 10;
    CompressionConfig ccfg;
    ccfg.keep_ratio = 0.25;
    ccfg.pruning_times = 2;
    ccfg.keeping_epoch = 0.5;
    ccfg.pruning_epoch = 1.5;
    ccfg.post_finetune_epoch = 1.0;
    ccfg.additional_dim = 8;
    std::vector<std::string> report_inputs;

    struct Bound {
        CLI::App* sub = nullptr;
        CLI::Option* config = nullptr;
        CLI::Option* seed = nullptr;
    };
    std::vector<Bound> bounds;

    auto add_common = [&](CLI::App* sub, bool with_corpus) {
        Bound b;
        b.sub = sub;
        b.config = sub->add_option("--config", cf.config_path, "flat key=value config file");
        b.seed = sub->add_option("--seed", cf.seed, "rng seed (default from BS_SEED)");
        if (with_corpus) {
            sub->add_option("--corpus-seed", cf.corpus_seed, "corpus generation seed");
            sub->add_option("--pretrain-lines", cf.pretrain_lines, "pretraining corpus lines");
            sub->add_option("--task-lines", cf.task_lines, "per-task corpus lines");
            sub->add_option("--lr", cf.lr, "learning rate");
            sub->add_option("--batch", cf.batch, "minibatch size");
        }
        bounds.push_back(b);
        return bounds.size() - 1;
    };

    // pretrain
    CLI::App* sp = app.add_subcommand("pretrain", "train a fresh model on the mixed corpus");
    const std::size_t bi_pre = add_common(sp, true);
    CLI::Option* o_pre_epochs = sp->add_option("--epochs", epochs, "training epochs");
    sp->add_option("--out", out, "output checkpoint path")->required();

    // finetune
    CLI::App* sf = app.add_subcommand("finetune", "finetune a checkpoint on one task");
    const std::size_t bi_fin = add_common(sf, true);
    sf->add_option("--task", task, "arithmetic or patterns");
    CLI::Option* o_fin_epochs = sf->add_option("--epochs", epochs, "training epochs");
    sf->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
    sf->add_option("--out", out, "output checkpoint path")->required();

    // compress
    CLI::App* sc = app.add_subcommand("compress", "compress a finetuned checkpoint");
    const std::size_t bi_cmp = add_common(sc, true);
    sc->add_option("--task", task, "task providing tuning data");
    sc->add_option("--method", method, "basis-selection, svd or fwsvd");
    CLI::Option* o_keep = sc->add_option("--keep-ratio", ccfg.keep_ratio,
                                         "fraction of singular mass to keep, in (0, 1]")
                              ->check(CLI::Range(1e-12, 1.0));
    CLI::Option* o_times = sc->add_option("--pruning-times", ccfg.pruning_times,
                                          "number of pruning rounds");
    CLI::Option* o_keep_ep = sc->add_option("--keeping-epoch", ccfg.keeping_epoch,
                                            "tuning epochs before pruning");
    CLI::Option* o_prune_ep = sc->add_option("--pruning-epoch", ccfg.pruning_epoch,
                                             "tuning epochs across pruning rounds");
    CLI::Option* o_post_ep = sc->add_option("--post-finetune-epoch", ccfg.post_finetune_epoch,
                                            "finetuning epochs after finalization");
    CLI::Option* o_extra = sc->add_option("--additional-dim", ccfg.additional_dim,
                                          "learnable augmentation pairs");
    CLI::Option* o_lr_tune = sc->add_option("--lr-tune", ccfg.lr_tune, "tuning learning rate");
    CLI::Option* o_lr_post = sc->add_option("--lr-post", ccfg.lr_post,
                                            "post-finetune learning rate");
    sc->add_option("--fisher-batches", ccfg.fisher_batches,
                   "batches for fwsvd importance estimation");
    sc->add_option("--rank", rank, "rank target for svd/fwsvd (0 = use keep-ratio mass rule)");
    sc->add_option("--events", events_path, "write pruning events CSV here");
    sc->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
    sc->add_option("--out", out, "output checkpoint path")->required();

    // eval
    CLI::App* se = app.add_subcommand("eval", "evaluate a checkpoint on a task");
    const std::size_t bi_eval = add_common(se, true);
    se->add_option("--task", task, "arithmetic or patterns");
    se->add_option("--checkpoint", checkpoint, "input checkpoint")->required();

    // experiment
    CLI::App* sx = app.add_subcommand("experiment", "run a preset method-comparison grid");
    sx->add_option("--preset", preset_name,
                   "main, ablation-additional-dim, ablation-pruning-times or mini");
    sx->add_option("--seeds", seeds_csv, "comma-separated seed list");
    sx->add_option("--checkpoint", checkpoint, "reuse a pretrained checkpoint");
    sx->add_option("--out", out, "output directory (default runs/<preset>)");

    // inspect
    CLI::App* si = app.add_subcommand("inspect", "de-embed the bases of one layer");
    si->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
    si->add_option("--layer", layer, "layer name, e.g. block2")->required();
    si->add_option("--top-k", top_k, "tokens listed per basis");
    si->add_option("--max-bases", max_bases, "bases printed");

    // report
    CLI::App* sr = app.add_subcommand("report", "merge and aggregate RunReport CSVs");
    sr->add_option("inputs", report_inputs, "input CSV paths")->required();
    sr->add_option("--out", out, "write the merged CSV here");
    sr->add_option("--summary", summary_path, "write the aggregate table here");

    try {
        app.parse(argc, argv);

        // layer the config file under whatever flags were not given
        ConfigLayer file;
        for (const Bound& b : bounds) {
            if (b.sub->parsed() && b.config->count() > 0) file.load(cf.config_path);
        }
        auto apply_common = [&](std::size_t bi, bool with_corpus) {
            const Bound& b = bounds[bi];
            cf.seed = resolve_seed(b.seed, file, cf.seed, cf.seed);
            if (with_corpus) {
                file.apply(b.sub->get_option("--corpus-seed"), "corpus_seed", cf.corpus_seed);
                file.apply(b.sub->get_option("--pretrain-lines"), "pretrain_lines",
                           cf.pretrain_lines);
                file.apply(b.sub->get_option("--task-lines"), "task_lines", cf.task_lines);
                file.apply(b.sub->get_option("--lr"), "lr", cf.lr);
                file.apply(b.sub->get_option("--batch"), "batch", cf.batch);
            }
        };

        if (sp->parsed()) {
            apply_common(bi_pre, true);
            file.apply(o_pre_epochs, "epochs", epochs);
            return cmd_pretrain(cf, file, epochs, out);
        }
        if (sf->parsed()) {
            apply_common(bi_fin, true);
            file.apply(o_fin_epochs, "epochs", epochs);
            file.apply(sf->get_option("--task"), "task", task);
            return cmd_finetune(cf, task, epochs, checkpoint, out);
        }
        if (sc->parsed()) {
            apply_common(bi_cmp, true);
            file.apply(sc->get_option("--task"), "task", task);
            file.apply(sc->get_option("--method"), "method", method);
            file.apply(o_keep, "keep_ratio", ccfg.keep_ratio);
            file.apply(o_times, "pruning_times", ccfg.pruning_times);
            file.apply(o_keep_ep, "keeping_epoch", ccfg.keeping_epoch);
            file.apply(o_prune_ep, "pruning_epoch", ccfg.pruning_epoch);
            file.apply(o_post_ep, "post_finetune_epoch", ccfg.post_finetune_epoch);
            file.apply(o_extra, "additional_dim", ccfg.additional_dim);
            file.apply(o_lr_tune, "lr_tune", ccfg.lr_tune);
            file.apply(o_lr_post, "lr_post", ccfg.lr_post);
            ccfg.lr_tune = o_lr_tune->count() || file.has("lr_tune") ? ccfg.lr_tune : cf.lr;
            return cmd_compress(cf, task, method, ccfg, rank, checkpoint, out, events_path);
        }
        if (se->parsed()) {
            apply_common(bi_eval, true);
            file.apply(se->get_option("--task"), "task", task);
            return cmd_eval(cf, task, checkpoint);
        }
        if (sx->parsed()) {
            if (out.empty()) out = "runs/" + preset_name;
            return cmd_experiment(preset_name, seeds_csv, out, checkpoint);
        }
        if (si->parsed()) return cmd_inspect(checkpoint, layer, top_k, max_bases);
        if (sr->parsed()) return cmd_report(report_inputs, out, summary_path);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
