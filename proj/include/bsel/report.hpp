#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace bsel {

// One completed grid point of an experiment run.
struct RunRow {
    std::string method;
    std::uint64_t seed = 0;
    double keep_ratio = 1.0;
    std::size_t pruning_times = 1;
    std::size_t additional_dim = 0;
    double compression_ratio = 1.0;
    std::string rank_per_layer;  // semicolon-joined
    std::string target_task;
    double accuracy = 0.0;
    double wall_seconds = 0.0;
};

inline const char* run_report_header() {
    return "method,seed,keep_ratio,pruning_times,additional_dim,compression_ratio,"
           "rank_per_layer,target_task,accuracy,wall_seconds";
}

namespace detail_report {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double num(const std::string& s, const std::string& field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("report: field " + field + " is not numeric: '" + s + "'");
    }
}

}  // namespace detail_report

inline std::string format_run_row(const RunRow& r) {
    using detail_report::fmt;
    std::ostringstream os;
    os << r.method << ',' << r.seed << ',' << fmt(r.keep_ratio) << ',' << r.pruning_times << ','
       << r.additional_dim << ',' << fmt(r.compression_ratio) << ',' << r.rank_per_layer << ','
       << r.target_task << ',' << fmt(r.accuracy) << ',' << fmt(r.wall_seconds);
    return os.str();
}

inline void write_report(const std::string& path, const std::vector<RunRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("report: cannot open " + path + " for writing");
    out << run_report_header() << '\n';
    for (const RunRow& r : rows) out << format_run_row(r) << '\n';
}

inline std::vector<RunRow> parse_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("report: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("report: empty file " + path);
    if (line != run_report_header())
        throw std::runtime_error("report: unexpected header in " + path);

    std::vector<RunRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail_report::split(line, ',');
        if (f.size() != 10)
            throw std::runtime_error("report: line " + std::to_string(lineno) + " of " + path +
                                     " has " + std::to_string(f.size()) + " fields, want 10");
        RunRow r;
        r.method = f[0];
        r.seed = static_cast<std::uint64_t>(detail_report::num(f[1], "seed"));
        r.keep_ratio = detail_report::num(f[2], "keep_ratio");
        r.pruning_times = static_cast<std::size_t>(detail_report::num(f[3], "pruning_times"));
        r.additional_dim = static_cast<std::size_t>(detail_report::num(f[4], "additional_dim"));
        r.compression_ratio = detail_report::num(f[5], "compression_ratio");
        r.rank_per_layer = f[6];
        r.target_task = f[7];
        r.accuracy = detail_report::num(f[8], "accuracy");
        r.wall_seconds = detail_report::num(f[9], "wall_seconds");
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void sort_report(std::vector<RunRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
        return std::tie(a.target_task, a.method, a.compression_ratio, a.keep_ratio,
                        a.pruning_times, a.additional_dim, a.seed) <
               std::tie(b.target_task, b.method, b.compression_ratio, b.keep_ratio,
                        b.pruning_times, b.additional_dim, b.seed);
    });
}

inline std::vector<RunRow> merge_reports(const std::vector<std::string>& paths) {
    std::vector<RunRow> all;
    for (const std::string& p : paths) {
        std::vector<RunRow> rows = parse_report(p);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    sort_report(all);
    return all;
}

// Per-grid-point aggregate over seeds.
struct AggregateRow {
    std::string target_task;
    std::string method;
    double keep_ratio = 0.0;
    std::size_t pruning_times = 0;
    std::size_t additional_dim = 0;
    std::size_t runs = 0;
    double mean_ratio = 0.0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // sample standard deviation, 0 for a single run
};

inline std::vector<AggregateRow> aggregate_report(const std::vector<RunRow>& rows) {
    using Key = std::tuple<std::string, std::string, double, std::size_t, std::size_t>;
    std::map<Key, std::vector<const RunRow*>> groups;
    for (const RunRow& r : rows)
        groups[{r.target_task, r.method, r.keep_ratio, r.pruning_times, r.additional_dim}]
            .push_back(&r);

    std::vector<AggregateRow> out;
    for (const auto& [key, members] : groups) {
        AggregateRow a;
        a.target_task = std::get<0>(key);
        a.method = std::get<1>(key);
        a.keep_ratio = std::get<2>(key);
        a.pruning_times = std::get<3>(key);
        a.additional_dim = std::get<4>(key);
        a.runs = members.size();
        double acc_sum = 0.0, ratio_sum = 0.0;
        for (const RunRow* r : members) {
            acc_sum += r->accuracy;
            ratio_sum += r->compression_ratio;
        }
        a.mean_accuracy = acc_sum / static_cast<double>(a.runs);
        a.mean_ratio = ratio_sum / static_cast<double>(a.runs);
        if (a.runs > 1) {
            double sq = 0.0;
            for (const RunRow* r : members) {
                const double d = r->accuracy - a.mean_accuracy;
                sq += d * d;
            }
            a.std_accuracy = std::sqrt(sq / static_cast<double>(a.runs - 1));
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline std::string format_aggregate_table(const std::vector<AggregateRow>& rows) {
    std::ostringstream os;
    os << "task,method,keep_ratio,pruning_times,additional_dim,runs,mean_ratio,"
          "mean_accuracy,std_accuracy\n";
    for (const AggregateRow& a : rows) {
        os << a.target_task << ',' << a.method << ',' << detail_report::fmt(a.keep_ratio) << ','
           << a.pruning_times << ',' << a.additional_dim << ',' << a.runs << ','
           << detail_report::fmt(a.mean_ratio) << ',' << detail_report::fmt(a.mean_accuracy)
           << ',' << detail_report::fmt(a.std_accuracy) << '\n';
    }
    return os.str();
}

}  // namespace bsel
