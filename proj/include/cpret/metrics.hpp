#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpret/index.hpp"

namespace cpret {

/// query id -> (doc id -> graded relevance). Grades are non-negative; a doc
/// counts as relevant when its grade is positive.
using Qrels = std::map<std::string, std::map<std::string, int>>;

/// query id -> ranked hits.
using RunResult = std::map<std::string, std::vector<Hit>>;

/// Mean over qrels queries of DCG@k / IDCG@k with linear gain rel / log2(r + 1).
/// A qrels query missing from the run scores 0; queries without any relevant
/// doc are skipped. Throws UsageError on an empty run or k == 0.
double ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);

/// Mean fraction of each query's relevant docs found in its top k.
double recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);

/// Mean reciprocal rank of the first relevant doc within the top k (0 if none).
double mrr_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);

/// Arithmetic mean of exactly four per-task scores.
double task_average(std::span<const double> scores);

/// Rounds half away from zero to two decimals, tolerating binary
/// representation error in inputs that are exact in decimal (69.495 -> 69.50).
double round2(double value);
std::string format2(double value);

/// TREC qrels: `qid 0 docid rel` per line.
Qrels read_qrels(std::istream& in);
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(std::ostream& out, const Qrels& qrels);

/// Run file: `qid docid rank score` per line.
void write_run(std::ostream& out, const RunResult& run);
RunResult read_run(std::istream& in);

}  // namespace cpret
