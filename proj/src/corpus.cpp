#include "cpret/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "cpret/error.hpp"

namespace cpret {

using json = nlohmann::json;

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static constexpr std::array<int, 12> days{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return m == 2 && is_leap(y) ? 29 : days[static_cast<std::size_t>(m - 1)];
}

bool parse_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

// Schema failure on a single line; converted into a Rejection by the caller.
struct LineError {
    std::string reason;
};

std::string require_string(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw LineError{std::string("missing field '") + key + "'"};
    if (!it->is_string()) throw LineError{std::string("field '") + key + "' is not a string"};
    return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw LineError{std::string("field '") + key + "' is not a string"};
    return it->get<std::string>();
}

std::string require_non_empty_id(const json& obj, const char* key) {
    std::string v = require_string(obj, key);
    if (v.empty()) throw LineError{std::string("empty '") + key + "'"};
    return v;
}

json parse_object(const std::string& line) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw LineError{std::string("invalid JSON: ") + e.what()};
    }
    if (!obj.is_object()) throw LineError{"record is not a JSON object"};
    return obj;
}

Problem parse_problem(const json& obj) {
    Problem p;
    p.id = require_non_empty_id(obj, "id");
    p.source = require_string(obj, "source");
    p.statement = require_string(obj, "statement");
    if (is_blank(p.statement)) throw LineError{"empty statement"};

    auto lang = parse_statement_language(require_string(obj, "statement_language"));
    if (!lang) throw LineError{"unknown statement_language"};
    p.statement_language = *lang;

    auto fmt = parse_problem_format(require_string(obj, "format"));
    if (!fmt) throw LineError{"unknown format"};
    p.format = *fmt;

    auto ts = Date::parse(require_string(obj, "timestamp"));
    if (!ts) throw LineError{"invalid timestamp"};
    p.timestamp = *ts;

    if (auto d = optional_string(obj, "difficulty")) {
        auto diff = parse_difficulty(*d);
        if (!diff) throw LineError{"unknown difficulty"};
        p.difficulty = *diff;
    }
    p.url = optional_string(obj, "url");
    return p;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    return in;
}

// Calls fn(line_no, line) for every non-blank line; LineError becomes a rejection.
template <typename Fn>
std::vector<Rejection> for_each_record(std::istream& in, Fn&& fn) {
    std::vector<Rejection> rejections;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;
        try {
            fn(line_no, line);
        } catch (const LineError& e) {
            rejections.push_back({line_no, e.reason});
        }
    }
    if (in.bad()) throw DataError("read error");
    return rejections;
}

template <typename Enum>
std::optional<Enum> lookup(std::string_view s, std::initializer_list<std::pair<std::string_view, Enum>> table) {
    for (const auto& [name, value] : table)
        if (name == s) return value;
    return std::nullopt;
}

}  // namespace

std::optional<Date> Date::parse(std::string_view text) {
    Date d;
    if (text.size() != 7 && text.size() != 10) return std::nullopt;
    if (text[4] != '-') return std::nullopt;
    if (!parse_int(text.substr(0, 4), d.year) || !parse_int(text.substr(5, 2), d.month)) return std::nullopt;
    if (text.size() == 10) {
        if (text[7] != '-' || !parse_int(text.substr(8, 2), d.day)) return std::nullopt;
    }
    if (d.month < 1 || d.month > 12) return std::nullopt;
    if (d.day < 1 || d.day > days_in_month(d.year, d.month)) return std::nullopt;
    return d;
}

std::string Date::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
}

std::string_view to_string(StatementLanguage v) {
    switch (v) {
        case StatementLanguage::en: return "en";
        case StatementLanguage::zh: return "zh";
        case StatementLanguage::ja: return "ja";
        case StatementLanguage::other: return "other";
    }
    return "other";
}

std::string_view to_string(ProblemFormat v) { return v == ProblemFormat::icpc ? "icpc" : "oi"; }

std::string_view to_string(Difficulty v) {
    switch (v) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "easy";
}

std::string_view to_string(DuplicateLevel v) {
    switch (v) {
        case DuplicateLevel::exact: return "exact";
        case DuplicateLevel::near: return "near";
        case DuplicateLevel::method: return "method";
    }
    return "exact";
}

std::optional<StatementLanguage> parse_statement_language(std::string_view s) {
    return lookup<StatementLanguage>(s, {{"en", StatementLanguage::en},
                                         {"zh", StatementLanguage::zh},
                                         {"ja", StatementLanguage::ja},
                                         {"other", StatementLanguage::other}});
}

std::optional<ProblemFormat> parse_problem_format(std::string_view s) {
    return lookup<ProblemFormat>(s, {{"icpc", ProblemFormat::icpc}, {"oi", ProblemFormat::oi}});
}

std::optional<Difficulty> parse_difficulty(std::string_view s) {
    return lookup<Difficulty>(
        s, {{"easy", Difficulty::easy}, {"medium", Difficulty::medium}, {"hard", Difficulty::hard}});
}

std::optional<DuplicateLevel> parse_duplicate_level(std::string_view s) {
    return lookup<DuplicateLevel>(
        s, {{"exact", DuplicateLevel::exact}, {"near", DuplicateLevel::near}, {"method", DuplicateLevel::method}});
}

std::string Rejection::to_string() const { return "LINE " + std::to_string(line) + ": " + reason; }

Corpus::Corpus(std::vector<Problem> problems) : problems_(std::move(problems)) {
    by_id_.reserve(problems_.size());
    for (std::size_t i = 0; i < problems_.size(); ++i) {
        const auto& id = problems_[i].id;
        if (id.empty()) throw DataError("problem with empty id");
        if (!by_id_.emplace(id, i).second) throw DataError("duplicate problem id '" + id + "'");
    }
}

bool Corpus::contains(std::string_view id) const { return find(id) != nullptr; }

const Problem* Corpus::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &problems_[it->second];
}

const Problem& Corpus::at(std::string_view id) const {
    const Problem* p = find(id);
    if (p == nullptr) throw DataError("unknown problem id '" + std::string(id) + "'");
    return *p;
}

Ingested<Corpus> ingest_problems(std::istream& in, bool strict) {
    std::vector<Problem> problems;
    std::unordered_map<std::string, std::size_t> first_line;
    auto rejections = for_each_record(in, [&](std::size_t line_no, const std::string& line) {
        Problem p;
        try {
            p = parse_problem(parse_object(line));
        } catch (const LineError& e) {
            if (strict) throw DataError("LINE " + std::to_string(line_no) + ": " + e.reason);
            throw;
        }
        auto [it, inserted] = first_line.emplace(p.id, line_no);
        if (!inserted)
            throw DataError("LINE " + std::to_string(line_no) + ": duplicate id '" + p.id + "' (first seen on line " +
                            std::to_string(it->second) + ")");
        problems.push_back(std::move(p));
    });
    return {Corpus(std::move(problems)), std::move(rejections)};
}

Ingested<Corpus> ingest_problems(const std::filesystem::path& path, bool strict) {
    auto in = open_input(path);
    return ingest_problems(in, strict);
}

Ingested<std::vector<Solution>> ingest_solutions(std::istream& in, const Corpus& corpus) {
    std::vector<Solution> solutions;
    std::unordered_set<std::string> seen;
    auto rejections = for_each_record(in, [&](std::size_t, const std::string& line) {
        json obj = parse_object(line);
        Solution s;
        s.id = require_non_empty_id(obj, "id");
        s.problem_id = require_non_empty_id(obj, "problem_id");
        s.code = require_string(obj, "code");
        s.language = require_string(obj, "language");
        if (auto verdict = optional_string(obj, "verdict"); verdict && *verdict != "accepted")
            throw LineError{"verdict '" + *verdict + "' is not accepted"};
        if (is_blank(s.code)) throw LineError{"empty code"};
        if (!corpus.contains(s.problem_id)) throw LineError{"unknown problem_id '" + s.problem_id + "'"};
        if (!seen.insert(s.id).second) throw LineError{"duplicate solution id '" + s.id + "'"};
        solutions.push_back(std::move(s));
    });
    return {std::move(solutions), std::move(rejections)};
}

Ingested<std::vector<Solution>> ingest_solutions(const std::filesystem::path& path, const Corpus& corpus) {
    auto in = open_input(path);
    return ingest_solutions(in, corpus);
}

Ingested<std::vector<DuplicatePair>> ingest_duplicate_pairs(std::istream& in, const Corpus& corpus) {
    std::vector<DuplicatePair> pairs;
    auto rejections = for_each_record(in, [&](std::size_t, const std::string& line) {
        json obj = parse_object(line);
        DuplicatePair p;
        p.problem_a = require_non_empty_id(obj, "problem_a");
        p.problem_b = require_non_empty_id(obj, "problem_b");
        auto level = parse_duplicate_level(require_string(obj, "level"));
        if (!level) throw LineError{"unknown level"};
        p.level = *level;
        if (p.problem_a == p.problem_b) throw LineError{"self pair '" + p.problem_a + "'"};
        for (const auto* id : {&p.problem_a, &p.problem_b})
            if (!corpus.contains(*id)) throw LineError{"unknown problem id '" + *id + "'"};
        pairs.push_back(std::move(p));
    });
    return {std::move(pairs), std::move(rejections)};
}

Ingested<std::vector<DuplicatePair>> ingest_duplicate_pairs(const std::filesystem::path& path, const Corpus& corpus) {
    auto in = open_input(path);
    return ingest_duplicate_pairs(in, corpus);
}

Ingested<std::vector<SimplifiedPair>> ingest_simplified_pairs(std::istream& in, const Corpus& corpus) {
    std::vector<SimplifiedPair> pairs;
    auto rejections = for_each_record(in, [&](std::size_t, const std::string& line) {
        json obj = parse_object(line);
        SimplifiedPair p;
        p.simplified_id = require_non_empty_id(obj, "simplified_id");
        p.full_id = require_non_empty_id(obj, "full_id");
        if (p.simplified_id == p.full_id) throw LineError{"self pair '" + p.full_id + "'"};
        for (const auto* id : {&p.simplified_id, &p.full_id})
            if (!corpus.contains(*id)) throw LineError{"unknown problem id '" + *id + "'"};
        pairs.push_back(std::move(p));
    });
    return {std::move(pairs), std::move(rejections)};
}

Ingested<std::vector<SimplifiedPair>> ingest_simplified_pairs(const std::filesystem::path& path,
                                                              const Corpus& corpus) {
    auto in = open_input(path);
    return ingest_simplified_pairs(in, corpus);
}

void write_problems(std::ostream& out, const Corpus& corpus) {
    for (const auto& p : corpus.problems()) {
        json obj = {{"id", p.id},
                    {"source", p.source},
                    {"statement", p.statement},
                    {"statement_language", to_string(p.statement_language)},
                    {"format", to_string(p.format)},
                    {"timestamp", p.timestamp.to_string()}};
        if (p.difficulty) obj["difficulty"] = to_string(*p.difficulty);
        if (p.url) obj["url"] = *p.url;
        out << obj.dump() << '\n';
    }
}

void write_solutions(std::ostream& out, const std::vector<Solution>& solutions) {
    for (const auto& s : solutions) {
        json obj = {{"id", s.id}, {"problem_id", s.problem_id}, {"code", s.code}, {"language", s.language},
                    {"verdict", "accepted"}};
        out << obj.dump() << '\n';
    }
}

void write_duplicate_pairs(std::ostream& out, const std::vector<DuplicatePair>& pairs) {
    for (const auto& p : pairs) {
        json obj = {{"problem_a", p.problem_a}, {"problem_b", p.problem_b}, {"level", to_string(p.level)}};
        out << obj.dump() << '\n';
    }
}

void write_simplified_pairs(std::ostream& out, const std::vector<SimplifiedPair>& pairs) {
    for (const auto& p : pairs) {
        json obj = {{"simplified_id", p.simplified_id}, {"full_id", p.full_id}};
        out << obj.dump() << '\n';
    }
}

void log_rejections(std::ostream& out, const std::vector<Rejection>& rejections) {
    for (const auto& r : rejections) out << r.to_string() << '\n';
}

CorpusStats corpus_stats(const Corpus& corpus, const std::vector<Solution>& solutions) {
    CorpusStats stats;
    stats.problem_count = corpus.size();
    stats.solution_count = solutions.size();
    for (const auto& p : corpus.problems()) {
        ++stats.by_source[p.source];
        ++stats.by_statement_language[std::string(to_string(p.statement_language))];
        ++stats.by_format[std::string(to_string(p.format))];
        ++stats.by_year[p.timestamp.year];
    }
    for (const auto& s : solutions) ++stats.by_code_language[s.language];
    return stats;
}

std::unordered_map<std::string, std::vector<const Solution*>> solutions_by_problem(
    const std::vector<Solution>& solutions) {
    std::unordered_map<std::string, std::vector<const Solution*>> grouped;
    for (const auto& s : solutions) grouped[s.problem_id].push_back(&s);
    return grouped;
}

}  // namespace cpret
