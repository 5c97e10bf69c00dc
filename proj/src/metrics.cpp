#include "cpret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cpret/error.hpp"

namespace cpret {

namespace {

void require_run(const RunResult& run, std::size_t k) {
    if (run.empty()) throw UsageError("empty run");
    if (k == 0) throw UsageError("k must be at least 1");
}

const std::vector<Hit>* hits_for(const RunResult& run, const std::string& qid) {
    auto it = run.find(qid);
    return it == run.end() ? nullptr : &it->second;
}

int grade(const std::map<std::string, int>& judged, const std::string& doc) {
    auto it = judged.find(doc);
    return it == judged.end() ? 0 : it->second;
}

std::size_t relevant_count(const std::map<std::string, int>& judged) {
    return static_cast<std::size_t>(
        std::count_if(judged.begin(), judged.end(), [](const auto& kv) { return kv.second > 0; }));
}

// Averages per-query values over queries with at least one relevant doc.
template <typename PerQuery>
double average_over_qrels(const RunResult& run, const Qrels& qrels, std::size_t k, PerQuery&& per_query) {
    require_run(run, k);
    static const std::vector<Hit> kNoHits;
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& [qid, judged] : qrels) {
        if (relevant_count(judged) == 0) continue;
        const auto* hits = hits_for(run, qid);
        const auto& list = hits != nullptr ? *hits : kNoHits;
        sum += per_query(std::span<const Hit>(list.data(), std::min(k, list.size())), judged);
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

}  // namespace

double ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
    return average_over_qrels(run, qrels, k, [k](std::span<const Hit> top, const std::map<std::string, int>& judged) {
        double dcg = 0.0;
        for (std::size_t r = 0; r < top.size(); ++r)
            dcg += grade(judged, top[r].doc_id) / std::log2(static_cast<double>(r) + 2.0);
        std::vector<int> ideal;
        for (const auto& [doc, rel] : judged)
            if (rel > 0) ideal.push_back(rel);
        std::sort(ideal.begin(), ideal.end(), std::greater<>());
        double idcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r)
            idcg += ideal[r] / std::log2(static_cast<double>(r) + 2.0);
        return dcg / idcg;
    });
}

double recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
    return average_over_qrels(run, qrels, k, [](std::span<const Hit> top, const std::map<std::string, int>& judged) {
        std::size_t found = 0;
        for (const auto& h : top) found += grade(judged, h.doc_id) > 0 ? 1 : 0;
        return static_cast<double>(found) / static_cast<double>(relevant_count(judged));
    });
}

double mrr_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
    return average_over_qrels(run, qrels, k, [](std::span<const Hit> top, const std::map<std::string, int>& judged) {
        for (std::size_t r = 0; r < top.size(); ++r)
            if (grade(judged, top[r].doc_id) > 0) return 1.0 / static_cast<double>(r + 1);
        return 0.0;
    });
}

double task_average(std::span<const double> scores) {
    if (scores.size() != 4)
        throw UsageError("task_average expects exactly 4 scores, got " + std::to_string(scores.size()));
    return ((scores[0] + scores[1]) + (scores[2] + scores[3])) / 4.0;
}

double round2(double value) {
    const double x = value * 100.0;
    const double fl = std::floor(x);
    if (std::abs((x - fl) - 0.5) <= 1e-9 * std::max(1.0, std::abs(x))) return (x >= 0.0 ? fl + 1.0 : fl) / 100.0;
    return std::round(x) / 100.0;
}

std::string format2(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", round2(value));
    return buf;
}

Qrels read_qrels(std::istream& in) {
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string qid, iter, doc, extra;
        int rel = 0;
        if (!(fields >> qid)) continue;
        if (!(fields >> iter >> doc >> rel) || (fields >> extra))
            throw DataError("LINE " + std::to_string(line_no) + ": expected `qid 0 docid rel`");
        if (rel < 0) throw DataError("LINE " + std::to_string(line_no) + ": negative relevance");
        qrels[qid][doc] = rel;
    }
    return qrels;
}

Qrels read_qrels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return read_qrels(in);
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
    for (const auto& [qid, judged] : qrels)
        for (const auto& [doc, rel] : judged) out << qid << " 0 " << doc << ' ' << rel << '\n';
}

void write_run(std::ostream& out, const RunResult& run) {
    char score[32];
    for (const auto& [qid, hits] : run) {
        for (const auto& h : hits) {
            std::snprintf(score, sizeof score, "%.9f", h.score);
            out << qid << ' ' << h.doc_id << ' ' << h.rank << ' ' << score << '\n';
        }
    }
}

RunResult read_run(std::istream& in) {
    RunResult run;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string qid;
        Hit h;
        if (!(fields >> qid)) continue;
        if (!(fields >> h.doc_id >> h.rank >> h.score))
            throw DataError("LINE " + std::to_string(line_no) + ": expected `qid docid rank score`");
        run[qid].push_back(h);
    }
    for (auto& [qid, hits] : run)
        std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.rank < b.rank; });
    return run;
}

}  // namespace cpret
