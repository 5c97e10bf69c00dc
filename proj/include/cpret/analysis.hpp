#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpret/corpus.hpp"
#include "cpret/index.hpp"

namespace cpret {

struct PassRecord {
    std::string problem_id;
    std::string model;
    double pass_rate = 0.0;
    Difficulty difficulty = Difficulty::easy;
    Date release_date;

    bool operator==(const PassRecord&) const = default;
};

/// CSV with header `problem_id,model,pass_rate,difficulty,release_date`.
/// Throws DataError (with the line number) on malformed rows or pass rates
/// outside [0, 1].
std::vector<PassRecord> read_pass_records(std::istream& in);
std::vector<PassRecord> read_pass_records(const std::filesystem::path& path);

struct MaxSimilarity {
    std::string problem_id;
    double max_sim = 0.0;
    std::string nearest_id;

    bool operator==(const MaxSimilarity&) const = default;
};

/// Dates used to check that every historical item predates every eval item.
struct DateGuard {
    std::unordered_map<std::string, Date> eval_dates;
    std::unordered_map<std::string, Date> historical_dates;
};

/// Highest cosine of each eval row against the historical index, skipping a
/// historical row with the same id. With a guard, throws DataError when a
/// date is missing or some historical item is not strictly older than every
/// eval item.
std::vector<MaxSimilarity> compute_max_similarity(const EmbeddingMatrix& eval, const SearchIndex& historical,
                                                  const DateGuard* guard = nullptr, unsigned threads = 1);

/// One evaluation problem: pass rate averaged over models.
struct ProblemPoint {
    std::string problem_id;
    Difficulty difficulty = Difficulty::easy;
    double pass_rate = 0.0;
    double max_sim = 0.0;
    std::string nearest_id;
};

/// Joins per-record pass rates with similarities, in first-seen problem order.
/// Problems without a similarity are dropped with a warning.
std::vector<ProblemPoint> problem_points(const std::vector<PassRecord>& records,
                                         const std::vector<MaxSimilarity>& sims, std::vector<std::string>* warnings);

/// 0.1-wide edges from floor(10 min)/10 to ceil(10 max)/10.
std::vector<double> default_bin_edges(const std::vector<double>& values);

/// Bin of a value under half-open bins [e_i, e_{i+1}) with the last bin closed.
/// Values outside [e_0, e_n] are clamped into the end bins.
std::size_t bin_index(double value, const std::vector<double>& edges);

struct BinRow {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean = 0.0;    // NaN for an empty bin
    double median = 0.0;  // NaN for an empty bin
    double min = 0.0;
    double max = 0.0;
};

struct BinReport {
    std::vector<BinRow> bins;
    std::vector<std::size_t> assignment;  // per input point
    std::vector<std::string> warnings;
};

/// Throws UsageError on fewer than 2 edges or edges that do not strictly increase.
BinReport bin_and_aggregate(const std::vector<ProblemPoint>& points, const std::vector<double>& edges);

struct Regression {
    std::string stratum;
    double slope = 0.0;
    double intercept = 0.0;
    std::size_t n = 0;

    bool operator==(const Regression&) const = default;
};

/// Ordinary least squares of y on x. Returns nullopt when x has fewer than two
/// distinct values.
std::optional<Regression> ols(const std::vector<double>& x, const std::vector<double>& y, std::string stratum = "all");

enum class Stratum { difficulty, model };

/// One OLS line per stratum (sorted by name) followed by an "all" line.
/// Difficulty strata use per-problem mean pass rates; model strata use the
/// individual records. Degenerate strata are skipped with a warning.
std::vector<Regression> stratified_regression(const std::vector<PassRecord>& records,
                                              const std::vector<MaxSimilarity>& sims, Stratum stratum,
                                              std::vector<std::string>* warnings);

struct GapRow {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;               // shared problems in the bin
    std::map<std::string, double> means;  // per variant; NaN when the bin is empty
    double gap = 0.0;                     // max - min of the means; NaN when empty
};

/// Per-bin mean pass rate of each variant over the problems every variant
/// covers. Throws UsageError with fewer than 2 variants and DataError when the
/// variants share no problem.
std::vector<GapRow> variant_gap(const std::vector<PassRecord>& records, const std::vector<MaxSimilarity>& sims,
                                const std::vector<double>& edges, std::vector<std::string>* warnings);

void write_report_csv(std::ostream& out, const std::vector<ProblemPoint>& points, const BinReport& bins);
void write_bins_csv(std::ostream& out, const BinReport& bins);
void write_regression_csv(std::ostream& out, const std::vector<Regression>& rows);
void write_gaps_csv(std::ostream& out, const std::vector<GapRow>& rows);

}  // namespace cpret
