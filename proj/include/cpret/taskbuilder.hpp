#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cpret/corpus.hpp"
#include "cpret/metrics.hpp"

namespace cpret {

enum class TaskKind { t2c, c2c, p2dup, s2full };

std::string_view to_string(TaskKind kind);
std::optional<TaskKind> parse_task_kind(std::string_view s);

struct TaskSpec {
    TaskKind kind = TaskKind::t2c;
    Date cutoff{2023, 1, 1};
    double cluster_test_fraction = 0.30;
    std::size_t test_pair_count = 10000;
    std::uint64_t seed = 0;
    /// p2dup: take distractors from this platform only instead of every
    /// platform that appears in the test clusters.
    std::optional<std::string> distractor_source;

    /// Throws UsageError when a fraction lies outside (0, 1) or the count is 0.
    void validate() const;
};

struct TextRecord {
    std::string id;
    std::string text;

    bool operator==(const TextRecord&) const = default;
};

/// Training data left over after the test split, at problem granularity.
struct TrainRemainder {
    std::vector<std::string> problem_ids;             // t2c / c2c
    std::vector<DuplicatePair> duplicate_pairs;       // p2dup
    std::vector<SimplifiedPair> simplified_pairs;     // s2full

    bool operator==(const TrainRemainder&) const = default;
};

struct BuiltTask {
    TaskKind kind = TaskKind::t2c;
    std::vector<TextRecord> queries;
    std::vector<TextRecord> corpus;
    Qrels qrels;
    /// p2dup only: annotated level of the direct pair, or "transitive".
    std::map<std::string, std::map<std::string, std::string>> qrel_levels;
    TrainRemainder train_remainder;
    std::vector<std::string> warnings;
};

struct TemporalSplit {
    std::vector<Problem> train_problems;
    std::vector<Problem> test_problems;
    std::vector<Solution> train_solutions;
    std::vector<Solution> test_solutions;
    std::vector<std::string> warnings;
};

/// Test = problems dated on or after the cutoff, with their solutions.
TemporalSplit temporal_split(const Corpus& corpus, const std::vector<Solution>& solutions, Date cutoff);

/// Queries are test statements with >= 1 solution; the corpus holds every test solution.
BuiltTask build_t2c(const TemporalSplit& split);

/// One seeded query solution per test problem with >= 2 solutions; the corpus
/// holds every other test solution.
BuiltTask build_c2c(const TemporalSplit& split, std::uint64_t seed);

struct DupCluster {
    std::vector<std::string> members;  // sorted
    std::vector<DuplicatePair> pairs;

    bool operator==(const DupCluster&) const = default;
};

/// Connected components of the pair graph, ordered by smallest member.
std::vector<DupCluster> cluster_duplicates(const std::vector<DuplicatePair>& pairs);

/// ceil(fraction * |clusters|) seeded test clusters; one uniformly chosen
/// member per cluster is the query, the rest are its relevant docs. Problems
/// outside every test cluster whose source matches a test cluster member are
/// added as distractors.
BuiltTask build_p2dup(const std::vector<DupCluster>& clusters, const Corpus& problems, const TaskSpec& spec);

/// Seeded sample of test_pair_count pairs; throws DataError when there are
/// fewer pairs. Remaining pairs that touch a test problem are dropped from the
/// remainder.
BuiltTask build_s2full(const std::vector<SimplifiedPair>& pairs, const Corpus& problems, const TaskSpec& spec);

/// Writes <out_dir>/<kind>/{queries.jsonl, corpus.jsonl, qrels.txt,
/// train_remainder.jsonl, manifest.json} and returns the task directory.
std::filesystem::path write_task(const std::filesystem::path& out_dir, const BuiltTask& task, const TaskSpec& spec,
                                 const std::map<std::string, std::string>& input_digests);

/// Reads a queries.jsonl / corpus.jsonl file.
std::vector<TextRecord> read_text_records(const std::filesystem::path& path);

}  // namespace cpret
