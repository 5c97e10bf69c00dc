#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cpret {

/// Calendar date at day precision. Ordered lexicographically (year, month, day).
struct Date {
    int year = 1970;
    int month = 1;
    int day = 1;

    /// Accepts "YYYY-MM-DD" or "YYYY-MM" (day defaults to 1). Returns nullopt for
    /// anything that is not a valid Gregorian date.
    static std::optional<Date> parse(std::string_view text);
    std::string to_string() const;

    auto operator<=>(const Date&) const = default;
};

enum class StatementLanguage { en, zh, ja, other };
enum class ProblemFormat { icpc, oi };
enum class Difficulty { easy, medium, hard };
enum class DuplicateLevel { exact, near, method };

std::string_view to_string(StatementLanguage v);
std::string_view to_string(ProblemFormat v);
std::string_view to_string(Difficulty v);
std::string_view to_string(DuplicateLevel v);
std::optional<StatementLanguage> parse_statement_language(std::string_view s);
std::optional<ProblemFormat> parse_problem_format(std::string_view s);
std::optional<Difficulty> parse_difficulty(std::string_view s);
std::optional<DuplicateLevel> parse_duplicate_level(std::string_view s);

struct Problem {
    std::string id;
    std::string source;
    std::string statement;
    StatementLanguage statement_language = StatementLanguage::en;
    ProblemFormat format = ProblemFormat::icpc;
    Date timestamp;
    std::optional<Difficulty> difficulty;
    std::optional<std::string> url;

    bool operator==(const Problem&) const = default;
};

/// Only accepted solutions are ever ingested, so the verdict is implicit.
struct Solution {
    std::string id;
    std::string problem_id;
    std::string code;
    std::string language;

    bool operator==(const Solution&) const = default;
};

struct DuplicatePair {
    std::string problem_a;
    std::string problem_b;
    DuplicateLevel level = DuplicateLevel::exact;

    bool operator==(const DuplicatePair&) const = default;
};

struct SimplifiedPair {
    std::string simplified_id;
    std::string full_id;

    bool operator==(const SimplifiedPair&) const = default;
};

/// One malformed input line. Rendered as `LINE <n>: <reason>`.
struct Rejection {
    std::size_t line = 0;
    std::string reason;

    std::string to_string() const;
};

/// Immutable, id-indexed problem collection. Insertion order is preserved.
class Corpus {
public:
    Corpus() = default;
    /// Throws DataError on an empty or duplicate id.
    explicit Corpus(std::vector<Problem> problems);

    const std::vector<Problem>& problems() const { return problems_; }
    std::size_t size() const { return problems_.size(); }
    bool empty() const { return problems_.empty(); }
    bool contains(std::string_view id) const;
    const Problem* find(std::string_view id) const;
    /// Throws DataError when the id does not resolve.
    const Problem& at(std::string_view id) const;

private:
    std::vector<Problem> problems_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

template <typename T>
struct Ingested {
    T records;
    std::vector<Rejection> rejections;
};

/// Loads problems.jsonl. A duplicate id is always fatal (DataError); in strict
/// mode the first schema violation is fatal too.
Ingested<Corpus> ingest_problems(const std::filesystem::path& path, bool strict);
Ingested<Corpus> ingest_problems(std::istream& in, bool strict);

/// Lines whose problem_id does not resolve are rejected, never fatal.
Ingested<std::vector<Solution>> ingest_solutions(const std::filesystem::path& path, const Corpus& corpus);
Ingested<std::vector<Solution>> ingest_solutions(std::istream& in, const Corpus& corpus);

Ingested<std::vector<DuplicatePair>> ingest_duplicate_pairs(const std::filesystem::path& path,
                                                            const Corpus& corpus);
Ingested<std::vector<DuplicatePair>> ingest_duplicate_pairs(std::istream& in, const Corpus& corpus);

Ingested<std::vector<SimplifiedPair>> ingest_simplified_pairs(const std::filesystem::path& path,
                                                              const Corpus& corpus);
Ingested<std::vector<SimplifiedPair>> ingest_simplified_pairs(std::istream& in, const Corpus& corpus);

void write_problems(std::ostream& out, const Corpus& corpus);
void write_solutions(std::ostream& out, const std::vector<Solution>& solutions);
void write_duplicate_pairs(std::ostream& out, const std::vector<DuplicatePair>& pairs);
void write_simplified_pairs(std::ostream& out, const std::vector<SimplifiedPair>& pairs);

void log_rejections(std::ostream& out, const std::vector<Rejection>& rejections);

struct CorpusStats {
    std::size_t problem_count = 0;
    std::size_t solution_count = 0;
    std::map<std::string, std::size_t> by_source;
    std::map<std::string, std::size_t> by_statement_language;
    std::map<std::string, std::size_t> by_code_language;
    std::map<std::string, std::size_t> by_format;
    std::map<int, std::size_t> by_year;
};

CorpusStats corpus_stats(const Corpus& corpus, const std::vector<Solution>& solutions);

/// Groups solutions by problem id, preserving input order within each group.
std::unordered_map<std::string, std::vector<const Solution*>> solutions_by_problem(
    const std::vector<Solution>& solutions);

}  // namespace cpret
