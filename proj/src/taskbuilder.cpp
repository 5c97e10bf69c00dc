#include "cpret/taskbuilder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "cpret/error.hpp"
#include "cpret/rng.hpp"

namespace cpret {

using json = nlohmann::json;

namespace {

class UnionFind {
public:
    std::size_t add(const std::string& id) {
        auto [it, inserted] = index_.emplace(id, parent_.size());
        if (inserted) {
            parent_.push_back(parent_.size());
            names_.push_back(id);
        }
        return it->second;
    }
    std::size_t root(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = root(a);
        b = root(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }
    std::size_t size() const { return parent_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    std::size_t at(const std::string& id) const { return index_.at(id); }

private:
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::size_t> parent_;
    std::vector<std::string> names_;
};

void write_records(const std::filesystem::path& path, const std::vector<TextRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) out << json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

}  // namespace

std::string_view to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::t2c: return "t2c";
        case TaskKind::c2c: return "c2c";
        case TaskKind::p2dup: return "p2dup";
        case TaskKind::s2full: return "s2full";
    }
    return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
    for (auto k : {TaskKind::t2c, TaskKind::c2c, TaskKind::p2dup, TaskKind::s2full})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

void TaskSpec::validate() const {
    if (!(cluster_test_fraction > 0.0 && cluster_test_fraction < 1.0))
        throw UsageError("cluster fraction must lie in (0, 1)");
    if (test_pair_count == 0) throw UsageError("test pair count must be positive");
}

TemporalSplit temporal_split(const Corpus& corpus, const std::vector<Solution>& solutions, Date cutoff) {
    TemporalSplit split;
    std::unordered_set<std::string> test_ids;
    for (const auto& p : corpus.problems()) {
        if (p.timestamp >= cutoff) {
            split.test_problems.push_back(p);
            test_ids.insert(p.id);
        } else {
            split.train_problems.push_back(p);
        }
    }
    for (const auto& s : solutions) {
        if (!corpus.contains(s.problem_id)) throw DataError("solution " + s.id + " references unknown problem");
        (test_ids.count(s.problem_id) ? split.test_solutions : split.train_solutions).push_back(s);
    }
    if (split.test_problems.empty())
        split.warnings.push_back("no problem dated on or after " + cutoff.to_string() + "; test split is empty");
    return split;
}

BuiltTask build_t2c(const TemporalSplit& split) {
    BuiltTask task;
    task.kind = TaskKind::t2c;
    auto by_problem = solutions_by_problem(split.test_solutions);
    for (const auto& p : split.test_problems) {
        auto it = by_problem.find(p.id);
        if (it == by_problem.end()) {
            task.warnings.push_back("problem " + p.id + " has no solution; skipped");
            continue;
        }
        task.queries.push_back({p.id, p.statement});
        for (const auto* s : it->second) task.qrels[p.id][s->id] = 1;
    }
    for (const auto& s : split.test_solutions) task.corpus.push_back({s.id, s.code});
    for (const auto& p : split.train_problems) task.train_remainder.problem_ids.push_back(p.id);
    return task;
}

BuiltTask build_c2c(const TemporalSplit& split, std::uint64_t seed) {
    BuiltTask task;
    task.kind = TaskKind::c2c;
    auto by_problem = solutions_by_problem(split.test_solutions);
    Rng rng = make_rng(seed, fnv1a64("c2c"));
    std::unordered_set<std::string> query_ids;
    for (const auto& p : split.test_problems) {
        auto it = by_problem.find(p.id);
        if (it == by_problem.end() || it->second.size() < 2) {
            task.warnings.push_back("problem " + p.id + " has fewer than 2 solutions; skipped");
            continue;
        }
        const auto& sols = it->second;
        const Solution* q = sols[uniform_index(rng, sols.size())];
        task.queries.push_back({q->id, q->code});
        query_ids.insert(q->id);
        for (const auto* s : sols)
            if (s != q) task.qrels[q->id][s->id] = 1;
    }
    for (const auto& s : split.test_solutions)
        if (!query_ids.count(s.id)) task.corpus.push_back({s.id, s.code});
    for (const auto& p : split.train_problems) task.train_remainder.problem_ids.push_back(p.id);
    return task;
}

std::vector<DupCluster> cluster_duplicates(const std::vector<DuplicatePair>& pairs) {
    UnionFind uf;
    for (const auto& p : pairs) uf.unite(uf.add(p.problem_a), uf.add(p.problem_b));
    std::map<std::size_t, DupCluster> by_root;
    for (std::size_t i = 0; i < uf.size(); ++i) by_root[uf.root(i)].members.push_back(uf.name(i));
    for (const auto& p : pairs) by_root[uf.root(uf.at(p.problem_a))].pairs.push_back(p);
    std::vector<DupCluster> out;
    for (auto& [root, c] : by_root) {
        std::sort(c.members.begin(), c.members.end());
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const DupCluster& a, const DupCluster& b) { return a.members[0] < b.members[0]; });
    return out;
}

BuiltTask build_p2dup(const std::vector<DupCluster>& clusters, const Corpus& problems, const TaskSpec& spec) {
    spec.validate();
    if (clusters.empty()) throw DataError("no duplicate clusters");
    BuiltTask task;
    task.kind = TaskKind::p2dup;

    const std::size_t n = clusters.size();
    const auto want = static_cast<std::size_t>(std::ceil(spec.cluster_test_fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(spec.seed, fnv1a64("p2dup"));
    shuffle(order, rng);
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(want, n)));
    std::sort(test.begin(), test.end());

    std::unordered_set<std::string> in_test;
    std::set<std::string> sources;
    std::set<std::string> corpus_ids;
    for (auto ci : test) {
        const auto& c = clusters[ci];
        if (c.members.size() < 2) throw DataError("duplicate cluster with fewer than 2 members");
        std::map<std::string, std::string> direct;
        const std::string& query = c.members[uniform_index(rng, c.members.size())];
        for (const auto& p : c.pairs) {
            if (p.problem_a == query) direct[p.problem_b] = std::string(to_string(p.level));
            if (p.problem_b == query) direct[p.problem_a] = std::string(to_string(p.level));
        }
        const auto& qp = problems.at(query);
        task.queries.push_back({query, qp.statement});
        for (const auto& m : c.members) {
            in_test.insert(m);
            sources.insert(problems.at(m).source);
            if (m == query) continue;
            task.qrels[query][m] = 1;
            auto lv = direct.find(m);
            task.qrel_levels[query][m] = lv == direct.end() ? "transitive" : lv->second;
            if (corpus_ids.insert(m).second) task.corpus.push_back({m, problems.at(m).statement});
        }
    }
    for (const auto& p : problems.problems()) {
        if (in_test.count(p.id)) continue;
        const bool eligible = spec.distractor_source ? p.source == *spec.distractor_source : sources.count(p.source) > 0;
        if (eligible) task.corpus.push_back({p.id, p.statement});
    }
    std::vector<bool> is_test(n, false);
    for (auto ci : test) is_test[ci] = true;
    for (std::size_t ci = 0; ci < n; ++ci)
        if (!is_test[ci])
            for (const auto& p : clusters[ci].pairs) task.train_remainder.duplicate_pairs.push_back(p);
    return task;
}

BuiltTask build_s2full(const std::vector<SimplifiedPair>& pairs, const Corpus& problems, const TaskSpec& spec) {
    spec.validate();
    if (pairs.size() < spec.test_pair_count)
        throw DataError("need " + std::to_string(spec.test_pair_count) + " simplified pairs, have " +
                        std::to_string(pairs.size()));
    BuiltTask task;
    task.kind = TaskKind::s2full;
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(spec.seed, fnv1a64("s2full"));
    shuffle(order, rng);
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.test_pair_count));
    std::sort(test.begin(), test.end());

    std::unordered_set<std::string> touched;
    std::set<std::string> corpus_ids, query_ids;
    for (auto i : test) {
        const auto& p = pairs[i];
        if (query_ids.insert(p.simplified_id).second)
            task.queries.push_back({p.simplified_id, problems.at(p.simplified_id).statement});
        if (corpus_ids.insert(p.full_id).second) task.corpus.push_back({p.full_id, problems.at(p.full_id).statement});
        task.qrels[p.simplified_id][p.full_id] = 1;
        touched.insert(p.simplified_id);
        touched.insert(p.full_id);
    }
    std::vector<bool> is_test(pairs.size(), false);
    for (auto i : test) is_test[i] = true;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (is_test[i]) continue;
        if (touched.count(pairs[i].simplified_id) || touched.count(pairs[i].full_id)) {
            ++dropped;
            continue;
        }
        task.train_remainder.simplified_pairs.push_back(pairs[i]);
    }
    if (dropped > 0)
        task.warnings.push_back(std::to_string(dropped) + " training pairs share a problem with the test split; dropped");
    return task;
}

std::filesystem::path write_task(const std::filesystem::path& out_dir, const BuiltTask& task, const TaskSpec& spec,
                                 const std::map<std::string, std::string>& input_digests) {
    const auto dir = out_dir / std::string(to_string(task.kind));
    std::filesystem::create_directories(dir);
    write_records(dir / "queries.jsonl", task.queries);
    write_records(dir / "corpus.jsonl", task.corpus);
    {
        std::ofstream out(dir / "qrels.txt", std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir / "qrels.txt").string());
        write_qrels(out, task.qrels);
    }
    {
        std::ofstream out(dir / "train_remainder.jsonl", std::ios::binary);
        for (const auto& id : task.train_remainder.problem_ids) out << json{{"problem_id", id}}.dump() << '\n';
        for (const auto& p : task.train_remainder.duplicate_pairs)
            out << json{{"problem_a", p.problem_a}, {"problem_b", p.problem_b}, {"level", to_string(p.level)}}.dump()
                << '\n';
        for (const auto& p : task.train_remainder.simplified_pairs)
            out << json{{"simplified_id", p.simplified_id}, {"full_id", p.full_id}}.dump() << '\n';
    }
    if (!task.qrel_levels.empty()) {
        std::ofstream out(dir / "qrels_levels.txt", std::ios::binary);
        for (const auto& [q, docs] : task.qrel_levels)
            for (const auto& [d, level] : docs) out << q << ' ' << d << ' ' << level << '\n';
    }
    json manifest{{"task", to_string(task.kind)},
                  {"seed", spec.seed},
                  {"queries", task.queries.size()},
                  {"corpus", task.corpus.size()},
                  {"qrels", std::accumulate(task.qrels.begin(), task.qrels.end(), std::size_t{0},
                                            [](std::size_t acc, const auto& q) { return acc + q.second.size(); })},
                  {"inputs", input_digests}};
    if (task.kind == TaskKind::t2c || task.kind == TaskKind::c2c) manifest["cutoff"] = spec.cutoff.to_string();
    if (task.kind == TaskKind::p2dup) {
        manifest["cluster_test_fraction"] = spec.cluster_test_fraction;
        if (spec.distractor_source) manifest["distractor_source"] = *spec.distractor_source;
    }
    if (task.kind == TaskKind::s2full) manifest["test_pair_count"] = spec.test_pair_count;
    std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
    return dir;
}

std::vector<TextRecord> read_text_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<TextRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            auto obj = json::parse(line);
            out.push_back({obj.at("id").get<std::string>(), obj.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw DataError(path.string() + ": LINE " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace cpret
