#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cpret/analysis.hpp"
#include "cpret/digest.hpp"
#include "cpret/error.hpp"
#include "cpret/rng.hpp"
#include "oracles.hpp"

namespace cpret {
namespace {

PassRecord record(const std::string& id, const std::string& model, double rate,
                  Difficulty d = Difficulty::medium) {
    return {id, model, rate, d, Date{2024, 6, 1}};
}

TEST(Ols, MatchesNormalEquations) {
    Rng rng = make_rng(21);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 3 + uniform_index(rng, 60);
        std::vector<double> x(n), y(n);
        const double slope = 4.0 * uniform01(rng) - 2.0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = uniform01(rng);
            y[i] = slope * x[i] + 0.3 + 0.1 * (uniform01(rng) - 0.5);
        }
        auto fit = ols(x, y);
        ASSERT_TRUE(fit);
        auto [b, a] = testing::ols_normal_equations(x, y);
        EXPECT_NEAR(fit->slope, b, 1e-10);
        EXPECT_NEAR(fit->intercept, a, 1e-10);
        EXPECT_EQ(fit->n, n);
    }
}

TEST(Ols, DegenerateInputs) {
    EXPECT_FALSE(ols({0.5, 0.5, 0.5}, {0.1, 0.2, 0.3}));
    EXPECT_FALSE(ols({0.5}, {0.1}));
    auto exact = ols({0.0, 1.0}, {1.0, 3.0});
    ASSERT_TRUE(exact);
    EXPECT_DOUBLE_EQ(exact->slope, 2.0);
    EXPECT_DOUBLE_EQ(exact->intercept, 1.0);
}

TEST(Bins, HalfOpenWithClosedLastBin) {
    std::vector<double> edges{0.0, 0.5, 1.0};
    EXPECT_EQ(bin_index(0.0, edges), 0u);
    EXPECT_EQ(bin_index(0.4999, edges), 0u);
    EXPECT_EQ(bin_index(0.5, edges), 1u);
    EXPECT_EQ(bin_index(1.0, edges), 1u);
    EXPECT_EQ(bin_index(-0.2, edges), 0u);
    EXPECT_EQ(bin_index(1.7, edges), 1u);
}

TEST(Bins, DefaultEdgesAreTenths) {
    auto e = default_bin_edges({0.42, 0.71, 0.55});
    ASSERT_EQ(e.size(), 5u);
    EXPECT_NEAR(e.front(), 0.4, 1e-12);
    EXPECT_NEAR(e.back(), 0.8, 1e-12);
}

TEST(Bins, RejectsBadEdges) {
    EXPECT_THROW(bin_and_aggregate({}, {0.5}), UsageError);
    EXPECT_THROW(bin_and_aggregate({}, {0.5, 0.5}), UsageError);
}

TEST(Bins, MonotoneDatasetGivesStrictlyIncreasingMeans) {
    std::vector<ProblemPoint> points;
    Rng rng = make_rng(3);
    for (int i = 0; i < 200; ++i) {
        const double sim = 0.3 + 0.6 * uniform01(rng);
        points.push_back({"p" + std::to_string(i), Difficulty::easy, sim - 0.2, sim, "h"});
    }
    auto report = bin_and_aggregate(points, {0.3, 0.45, 0.6, 0.75, 0.9});
    ASSERT_EQ(report.bins.size(), 4u);
    for (std::size_t b = 1; b < report.bins.size(); ++b) EXPECT_GT(report.bins[b].mean, report.bins[b - 1].mean);
    std::size_t total = 0;
    for (const auto& row : report.bins) total += row.count;
    EXPECT_EQ(total, points.size());
}

TEST(Bins, EmptyBinIsNan) {
    std::vector<ProblemPoint> points{{"a", Difficulty::easy, 0.4, 0.1, "h"}, {"b", Difficulty::easy, 0.6, 0.9, "h"}};
    auto report = bin_and_aggregate(points, {0.0, 0.3, 0.6, 1.0});
    EXPECT_TRUE(std::isnan(report.bins[1].mean));
    EXPECT_TRUE(report.warnings.empty());
    EXPECT_DOUBLE_EQ(report.bins[2].median, 0.6);
}

TEST(Bins, OutOfRangeValuesAreClampedWithWarning) {
    std::vector<ProblemPoint> points{{"a", Difficulty::easy, 0.4, 1.2, "h"}};
    auto report = bin_and_aggregate(points, {0.0, 0.5, 1.0});
    EXPECT_EQ(report.bins[1].count, 1u);
    EXPECT_EQ(report.warnings.size(), 1u);
}

TEST(Gap, ShrinkingGapDatasetGivesStrictlyDecreasingGaps) {
    std::vector<PassRecord> records;
    std::vector<MaxSimilarity> sims;
    for (int i = 0; i < 100; ++i) {
        const double sim = 0.005 + 0.01 * i;
        const std::string id = "p" + std::to_string(i);
        sims.push_back({id, sim, "h"});
        records.push_back(record(id, "original", 0.9));
        records.push_back(record(id, "modified", 0.9 - 0.5 * (1.0 - sim)));
    }
    auto rows = variant_gap(records, sims, {0.0, 0.25, 0.5, 0.75, 1.0}, nullptr);
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t b = 1; b < rows.size(); ++b) EXPECT_LT(rows[b].gap, rows[b - 1].gap);
}

TEST(Gap, UsesSharedProblemsOnly) {
    std::vector<PassRecord> records{record("a", "m1", 0.2), record("a", "m2", 0.4), record("b", "m1", 1.0)};
    std::vector<MaxSimilarity> sims{{"a", 0.5, "h"}, {"b", 0.5, "h"}};
    auto rows = variant_gap(records, sims, {0.0, 1.0}, nullptr);
    EXPECT_EQ(rows[0].count, 1u);
    EXPECT_NEAR(rows[0].gap, 0.2, 1e-12);
    std::vector<PassRecord> one{record("a", "m1", 0.2)};
    EXPECT_THROW(variant_gap(one, sims, {0.0, 1.0}, nullptr), UsageError);
    std::vector<PassRecord> disjoint{record("a", "m1", 0.2), record("b", "m2", 0.2)};
    EXPECT_THROW(variant_gap(disjoint, sims, {0.0, 1.0}, nullptr), DataError);
}

TEST(PassRecords, ParsesAndValidates) {
    std::istringstream ok("problem_id,model,pass_rate,difficulty,release_date\np1,gpt,0.5,hard,2024-05-01\n");
    auto r = read_pass_records(ok);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].difficulty, Difficulty::hard);
    std::istringstream bad("problem_id,model,pass_rate,difficulty,release_date\np1,gpt,1.5,hard,2024-05-01\n");
    try {
        read_pass_records(bad);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("LINE 2"), std::string::npos);
    }
    std::istringstream header("id,model\n");
    EXPECT_THROW(read_pass_records(header), DataError);
}

TEST(MaxSim, SkipsSameIdAndRespectsDateGuard) {
    EmbeddingMatrix eval({"e1"}, 2, {1.0f, 0.0f});
    SearchIndex hist(EmbeddingMatrix({"e1", "h1", "h2"}, 2, {1.0f, 0.0f, 0.8f, 0.6f, 0.0f, 1.0f}));
    auto sims = compute_max_similarity(eval, hist);
    ASSERT_EQ(sims.size(), 1u);
    EXPECT_EQ(sims[0].nearest_id, "h1");
    EXPECT_NEAR(sims[0].max_sim, 0.8, 1e-6);

    DateGuard guard;
    guard.eval_dates = {{"e1", Date{2024, 1, 1}}};
    guard.historical_dates = {{"e1", Date{2020, 1, 1}}, {"h1", Date{2020, 1, 1}}, {"h2", Date{2023, 12, 31}}};
    EXPECT_NO_THROW(compute_max_similarity(eval, hist, &guard));
    guard.historical_dates["h2"] = Date{2024, 1, 1};
    EXPECT_THROW(compute_max_similarity(eval, hist, &guard), DataError);
    guard.historical_dates.erase("h2");
    EXPECT_THROW(compute_max_similarity(eval, hist, &guard), DataError);
}

TEST(Regression, StratifiedByDifficultyWithAllLine) {
    std::vector<PassRecord> records;
    std::vector<MaxSimilarity> sims;
    for (int i = 0; i < 10; ++i) {
        const std::string id = "p" + std::to_string(i);
        const double x = 0.1 * i;
        sims.push_back({id, x, "h"});
        records.push_back(record(id, "m", 0.2 + 0.5 * x, i % 2 == 0 ? Difficulty::easy : Difficulty::hard));
    }
    auto rows = stratified_regression(records, sims, Stratum::difficulty, nullptr);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].stratum, "easy");
    EXPECT_EQ(rows[1].stratum, "hard");
    EXPECT_EQ(rows[2].stratum, "all");
    for (const auto& r : rows) EXPECT_NEAR(r.slope, 0.5, 1e-12);
}

TEST(Csv, BinsLayout) {
    std::vector<ProblemPoint> points{{"a", Difficulty::easy, 0.25, 0.1, "h"}};
    auto report = bin_and_aggregate(points, {0.0, 0.5, 1.0});
    std::ostringstream out;
    write_bins_csv(out, report);
    EXPECT_EQ(out.str(),
              "bin,lo,hi,count,mean_pass_rate,median_pass_rate,min_pass_rate,max_pass_rate\n"
              "0,0,0.5,1,0.25,0.25,0.25,0.25\n"
              "1,0.5,1,0,,,,\n");
}

TEST(Digest, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace cpret
