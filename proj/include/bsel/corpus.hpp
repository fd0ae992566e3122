#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsel/rng.hpp"

namespace bsel {
namespace vocab {

// Fixed character set shared by both task domains; id 0 is the padding
// token used to left-fill context windows.
inline const std::string& chars() {
    static const std::string c = "0123456789+=;abcd|";
    return c;
}

constexpr int pad_id = 0;

inline std::size_t size() { return chars().size() + 1; }

inline int encode(char ch) {
    const auto pos = chars().find(ch);
    if (pos == std::string::npos)
        throw std::invalid_argument(std::string("vocab: unknown character '") + ch + "'");
    return static_cast<int>(pos) + 1;
}

inline char decode(int id) {
    if (id == pad_id) return '_';
    if (id < 1 || static_cast<std::size_t>(id) > chars().size())
        throw std::invalid_argument("vocab: token id out of range: " + std::to_string(id));
    return chars()[static_cast<std::size_t>(id) - 1];
}

inline std::vector<int> tokenize(const std::string& text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char ch : text) out.push_back(encode(ch));
    return out;
}

}  // namespace vocab

struct EvalItem {
    std::string prompt;
    std::string answer;
};

struct TaskSpec {
    std::string name;
    std::vector<std::string> train_lines;
    std::vector<EvalItem> eval_items;
    std::string metric = "exact_match";
};

struct Corpora {
    std::vector<std::string> pretrain;  // mixed-domain lines
    TaskSpec arithmetic;                // target A
    TaskSpec patterns;                  // target B
};

struct CorpusOptions {
    std::size_t pretrain_lines = 3000;
    std::size_t task_lines = 2000;
    std::size_t arithmetic_eval = 20;  // held-out (a, b) pairs out of 100
    std::size_t pattern_eval = 64;     // held-out strings out of 320
};

namespace detail {

inline std::string arithmetic_line(int a, int b) {
    return std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(a + b) + ";";
}

inline std::vector<std::string> pattern_strings() {
    static const std::string letters = "abcd";
    std::vector<std::string> out;
    for (std::size_t len : {std::size_t{3}, std::size_t{4}}) {
        std::vector<std::size_t> idx(len, 0);
        while (true) {
            std::string s;
            for (std::size_t i : idx) s += letters[i];
            out.push_back(s);
            std::size_t k = len;
            while (k > 0) {
                --k;
                if (++idx[k] < letters.size()) break;
                idx[k] = 0;
                if (k == 0) goto done;
            }
        }
    done:;
    }
    return out;
}

inline std::string pattern_line(const std::string& s) {
    return s + "|" + std::string(s.rbegin(), s.rend()) + ";";
}

}  // namespace detail

// Two synthetic sub-domains over one character vocabulary. The pretrain
// corpus interleaves both; each target corpus holds a single domain. Eval
// items come from line pools disjoint from the training pools.
inline Corpora make_corpora(std::uint64_t seed, const CorpusOptions& opt = {}) {
    Corpora out;

    // arithmetic: all 100 single-digit pairs, split train/eval
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a <= 9; ++a)
        for (int b = 0; b <= 9; ++b) pairs.push_back({a, b});
    Rng split_a(mix_seed(seed, 1));
    split_a.shuffle(pairs);
    if (opt.arithmetic_eval >= pairs.size())
        throw std::invalid_argument("make_corpora: arithmetic eval split too large");
    std::vector<std::string> arith_train;
    for (std::size_t i = 0; i + opt.arithmetic_eval < pairs.size(); ++i)
        arith_train.push_back(detail::arithmetic_line(pairs[i].first, pairs[i].second));
    out.arithmetic.name = "arithmetic";
    for (std::size_t i = pairs.size() - opt.arithmetic_eval; i < pairs.size(); ++i) {
        const auto [a, b] = pairs[i];
        out.arithmetic.eval_items.push_back(
            {std::to_string(a) + "+" + std::to_string(b) + "=", std::to_string(a + b)});
    }

    // patterns: mirrored strings over a 4-letter alphabet, split train/eval
    std::vector<std::string> pats = detail::pattern_strings();
    Rng split_p(mix_seed(seed, 2));
    split_p.shuffle(pats);
    if (opt.pattern_eval >= pats.size())
        throw std::invalid_argument("make_corpora: pattern eval split too large");
    std::vector<std::string> pat_train;
    for (std::size_t i = 0; i + opt.pattern_eval < pats.size(); ++i)
        pat_train.push_back(detail::pattern_line(pats[i]));
    out.patterns.name = "patterns";
    for (std::size_t i = pats.size() - opt.pattern_eval; i < pats.size(); ++i) {
        const std::string& s = pats[i];
        out.patterns.eval_items.push_back({s + "|", std::string(s.rbegin(), s.rend())});
    }

    Rng sample_a(mix_seed(seed, 3));
    for (std::size_t i = 0; i < opt.task_lines; ++i)
        out.arithmetic.train_lines.push_back(arith_train[sample_a.below(arith_train.size())]);
    Rng sample_p(mix_seed(seed, 4));
    for (std::size_t i = 0; i < opt.task_lines; ++i)
        out.patterns.train_lines.push_back(pat_train[sample_p.below(pat_train.size())]);

    Rng mixer(mix_seed(seed, 5));
    for (std::size_t i = 0; i < opt.pretrain_lines; ++i) {
        if (mixer.uniform() < 0.5)
            out.pretrain.push_back(arith_train[mixer.below(arith_train.size())]);
        else
            out.pretrain.push_back(pat_train[mixer.below(pat_train.size())]);
    }
    return out;
}

// grammar checks used by tests and sanity guards
inline bool is_arithmetic_line(const std::string& line) {
    const auto plus = line.find('+');
    const auto eq = line.find('=');
    if (plus == std::string::npos || eq == std::string::npos || line.empty() ||
        line.back() != ';')
        return false;
    const std::string a = line.substr(0, plus);
    const std::string b = line.substr(plus + 1, eq - plus - 1);
    const std::string c = line.substr(eq + 1, line.size() - eq - 2);
    if (a.size() != 1 || b.size() != 1 || c.empty()) return false;
    return std::stoi(a) + std::stoi(b) == std::stoi(c);
}

inline bool is_pattern_line(const std::string& line) {
    const auto bar = line.find('|');
    if (bar == std::string::npos || line.empty() || line.back() != ';') return false;
    const std::string w = line.substr(0, bar);
    const std::string m = line.substr(bar + 1, line.size() - bar - 2);
    return !w.empty() && m == std::string(w.rbegin(), w.rend());
}

// Next-token training pairs: one example per character of every line, with
// PAD-filled left context. Lines are independent; context never crosses a
// line boundary.
struct TokenDataset {
    std::size_t context = 0;
    std::vector<int> windows;  // size() * context
    std::vector<int> targets;

    std::size_t size() const { return targets.size(); }
    const int* window(std::size_t i) const { return windows.data() + i * context; }
};

inline TokenDataset make_dataset(const std::vector<std::string>& lines, std::size_t context) {
    TokenDataset ds;
    ds.context = context;
    for (const std::string& line : lines) {
        const std::vector<int> toks = vocab::tokenize(line);
        for (std::size_t pos = 0; pos < toks.size(); ++pos) {
            for (std::size_t k = 0; k < context; ++k) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(pos) -
                                           static_cast<std::ptrdiff_t>(context - k);
                ds.windows.push_back(src >= 0 ? toks[static_cast<std::size_t>(src)]
                                              : vocab::pad_id);
            }
            ds.targets.push_back(toks[pos]);
        }
    }
    return ds;
}

struct Minibatch {
    std::vector<int> windows;  // batch * context
    std::vector<int> targets;  // batch
    std::size_t batch = 0;
    std::size_t context = 0;
};

// Deterministic shuffled minibatch stream: a fresh permutation per epoch,
// derived from (seed, epoch).
class DataStream {
public:
    DataStream(const TokenDataset& ds, std::size_t batch, std::uint64_t seed)
        : ds_(&ds), batch_(batch), seed_(seed) {
        if (ds.size() == 0) throw std::invalid_argument("DataStream: empty data stream");
        if (batch == 0) throw std::invalid_argument("DataStream: batch size must be positive");
        reshuffle();
    }

    std::size_t iterations_per_epoch() const { return (ds_->size() + batch_ - 1) / batch_; }

    Minibatch next() {
        if (cursor_ >= perm_.size()) {
            ++epoch_;
            reshuffle();
        }
        const std::size_t take = std::min(batch_, perm_.size() - cursor_);
        Minibatch mb;
        mb.batch = take;
        mb.context = ds_->context;
        mb.windows.reserve(take * ds_->context);
        mb.targets.reserve(take);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t idx = perm_[cursor_ + i];
            const int* w = ds_->window(idx);
            mb.windows.insert(mb.windows.end(), w, w + ds_->context);
            mb.targets.push_back(ds_->targets[idx]);
        }
        cursor_ += take;
        return mb;
    }

private:
    void reshuffle() {
        perm_.resize(ds_->size());
        for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
        Rng rng(mix_seed(seed_, 0x9000 + epoch_));
        rng.shuffle(perm_);
        cursor_ = 0;
    }

    const TokenDataset* ds_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::vector<std::size_t> perm_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

}  // namespace bsel
