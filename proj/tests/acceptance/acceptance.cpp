// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Usage: cpret_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cpret/analysis.hpp"
#include "cpret/cli.hpp"
#include "cpret/corpus.hpp"
#include "cpret/embedder.hpp"
#include "cpret/index.hpp"
#include "cpret/losses.hpp"
#include "cpret/metrics.hpp"
#include "cpret/mining.hpp"
#include "cpret/rng.hpp"
#include "cpret/taskbuilder.hpp"
#include "fd_oracle.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace cpret;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Runs the command line in-process; throws with stderr on a non-zero exit.
std::string cli_run(std::vector<std::string> args) {
    args.insert(args.begin(), "cpret");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) {
        std::string joined;
        for (const auto& a : args) joined += a + " ";
        throw std::runtime_error("exit " + std::to_string(code) + ": " + joined + "\n" + err.str());
    }
    return out.str();
}

// ------------------------------------------------------------------ 1

Outcome gradients() {
    const auto t0 = Clock::now();
    Rng rng = make_rng(101);
    double worst = 0.0;
    std::size_t batches = 0;
    auto check = [&](const LossConfig& cfg, std::size_t m, bool kink_guard) {
        for (int t = 0; t < 100;) {
            const std::size_t n = 2 + uniform_index(rng, 7);
            const std::size_t dim = 2 + uniform_index(rng, 15);
            auto b = testing::random_batch(n, m, dim, rng);
            if (kink_guard) {
                // Finite differences are meaningless within h of the hinge.
                bool near_kink = false;
                for (std::size_t i = 0; i < n; ++i) {
                    const double z = dot(b.query(i), b.positive(i, 1)) - dot(b.query(i), b.positive(i, 0)) + cfg.margin;
                    near_kink |= std::abs(z) < 1e-3;
                }
                if (near_kink) continue;
            }
            worst = std::max(worst, testing::gradient_check(b, cfg, 1e-5));
            ++batches;
            ++t;
        }
    };
    LossConfig c;
    c.objective = Objective::infonce;
    check(c, 1, false);
    for (std::size_t m : {1u, 4u}) {
        c.objective = Objective::multipos;
        check(c, m, false);
        c.objective = Objective::group_infonce;
        check(c, m, false);
    }
    c.objective = Objective::triplet;
    c.margin = 0.3;
    check(c, 2, true);
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 10.0,
            std::to_string(batches) + " batches, max relative error " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) +
                " s"};
}

// ------------------------------------------------------------------ 2

EncodedBatch orthogonal_batch(std::size_t n, std::size_t m) {
    EncodedBatch b(n, m, n * (m + 1));
    std::size_t axis = 0;
    for (std::size_t i = 0; i < n; ++i) {
        b.query(i)[axis++] = 1.0;
        for (std::size_t k = 0; k < m; ++k) b.positive(i, k)[axis++] = 1.0;
    }
    return b;
}

Outcome closed_forms() {
    LossConfig c;
    c.tau = 0.07;
    c.objective = Objective::infonce;
    const double e1 = infonce(orthogonal_batch(2, 1), c).value;
    c.objective = Objective::multipos;
    const double e2 = multipos_infonce(orthogonal_batch(2, 2), c).value;
    c.objective = Objective::group_infonce;
    const double e3 = group_infonce(orthogonal_batch(2, 1), c).value;

    EncodedBatch b(2, 2, 8);
    b.query(0)[0] = 1.0;
    b.positive(0, 0)[0] = 0.8;
    b.positive(0, 0)[1] = 0.6;
    b.positive(0, 1)[0] = 0.6;
    b.positive(0, 1)[1] = 0.8;
    b.query(1)[4] = 1.0;
    b.positive(1, 0)[5] = 1.0;
    b.positive(1, 1)[6] = 1.0;
    auto without = c;
    without.variance_penalty = false;
    const double penalty = group_infonce(b, c).per_example[0] - group_infonce(b, without).per_example[0];

    const bool ok = std::abs(e1 - std::log(2.0)) <= 1e-12 && std::abs(e2 + std::log(2.0)) <= 1e-12 &&
                    std::abs(e3 - std::log(3.0)) <= 1e-12 && std::abs(penalty - 0.01 / 0.0049) <= 1e-6;
    return {ok, "infonce " + fmt("%.15f", e1) + ", multipos " + fmt("%.15f", e2) + ", group " + fmt("%.15f", e3) +
                    ", penalty " + fmt("%.6f", penalty)};
}

// ------------------------------------------------------------------ 3

Outcome table_average() {
    const std::vector<double> code{70.40, 70.59, 38.68, 81.45};
    const std::vector<double> prob{56.50, 70.68, 60.06, 90.74};
    const auto a = format2(task_average(code));
    const auto b = format2(task_average(prob));
    return {a == "65.28" && b == "69.50", "code row " + a + ", prob row " + b};
}

// ------------------------------------------------------------------ 4

Outcome ndcg_oracle() {
    Rng rng = make_rng(404);
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        const std::size_t docs = 1 + uniform_index(rng, 30);
        const std::size_t k = 1 + uniform_index(rng, 15);
        Qrels qrels;
        RunResult run;
        const std::size_t queries = 1 + uniform_index(rng, 4);
        std::vector<std::vector<std::string>> ranked(queries);
        for (std::size_t q = 0; q < queries; ++q) {
            const std::string qid = "q" + std::to_string(q);
            std::vector<std::string> ids;
            for (std::size_t d = 0; d < docs; ++d) ids.push_back("d" + std::to_string(d));
            bool any = false;
            for (const auto& id : ids) {
                if (bernoulli(rng, 0.3)) {
                    qrels[qid][id] = static_cast<int>(uniform_index(rng, 3));
                    any |= qrels[qid][id] > 0;
                }
            }
            if (!any) qrels[qid][ids[uniform_index(rng, ids.size())]] = 1;
            shuffle(ids, rng);
            ids.resize(1 + uniform_index(rng, ids.size()));
            for (std::size_t r = 0; r < ids.size(); ++r) run[qid].push_back({ids[r], 1.0 / (r + 1), r + 1});
            ranked[q] = ids;
        }
        double expected = 0.0;
        for (std::size_t q = 0; q < queries; ++q)
            expected += testing::brute_ndcg(ranked[q], qrels["q" + std::to_string(q)], k);
        expected /= static_cast<double>(queries);
        worst = std::max(worst, std::abs(ndcg_at_k(run, qrels, k) - expected));
    }
    Qrels hand{{"q", {{"b", 1}}}};
    RunResult hand_run{{"q", {{"a", 0.9, 1}, {"b", 0.8, 2}}}};
    const double h = ndcg_at_k(hand_run, hand, 10);
    const bool ok = worst <= 1e-12 && std::abs(h - 1.0 / std::log2(3.0)) <= 1e-12;
    return {ok, "500 instances, max abs diff " + fmt("%.2e", worst) + ", hand case " + fmt("%.4f", h)};
}

// ------------------------------------------------------------------ 5

Outcome search_oracle() {
    Rng rng = make_rng(505);
    std::size_t queries = 0, mismatches = 0, tie_queries = 0;
    while (queries < 1000) {
        const std::size_t n = 1 + uniform_index(rng, 1000);
        std::vector<std::string> ids;
        std::vector<float> values;
        for (std::size_t r = 0; r < n; ++r) {
            ids.push_back("d" + std::to_string(uniform_index(rng, 1u << 30)) + "_" + std::to_string(r));
            const bool dup = r > 0 && bernoulli(rng, 0.25);
            const std::size_t src = dup ? uniform_index(rng, r) : 0;
            for (std::size_t d = 0; d < 32; ++d)
                values.push_back(dup ? values[src * 32 + d] : static_cast<float>(2.0 * uniform01(rng) - 1.0));
        }
        EmbeddingMatrix m(ids, 32, values);
        SearchIndex index(m);
        std::vector<float> stored(m.values().begin(), m.values().end());
        for (int q = 0; q < 10 && queries < 1000; ++q, ++queries) {
            std::vector<double> query(32);
            if (q % 2 == 1) {
                query = to_double(m.row(uniform_index(rng, n)));
            } else {
                for (auto& x : query) x = 2.0 * uniform01(rng) - 1.0;
            }
            auto got = index.top_k(query, 10);
            auto want = testing::naive_top_k(ids, stored, 32, query, 10);
            bool same = got.size() == want.size();
            for (std::size_t i = 0; same && i < got.size(); ++i)
                same = got[i].doc_id == want[i].first && got[i].rank == i + 1;
            mismatches += same ? 0 : 1;
            for (std::size_t i = 1; i < want.size(); ++i)
                if (want[i].second == want[i - 1].second) {
                    ++tie_queries;
                    break;
                }
        }
    }
    return {mismatches == 0 && tie_queries > 0, std::to_string(queries) + " queries, " + std::to_string(mismatches) +
                                                    " mismatches, " + std::to_string(tie_queries) +
                                                    " with tied scores in the top 10"};
}

// ------------------------------------------------------------------ 6

struct TrainRun {
    double ndcg = 0.0;
    std::vector<double> val_loss;
    std::vector<fs::path> files;
};

void write_synthetic(const fs::path& dir) {
    fs::create_directories(dir);
    auto s = testing::make_synthetic_corpus(200, 5, 7, 0.2);
    std::ofstream p(dir / "problems.jsonl");
    write_problems(p, s.corpus);
    std::ofstream q(dir / "solutions.jsonl");
    write_solutions(q, s.solutions);
}

std::vector<double> read_val_losses(const fs::path& log) {
    std::ifstream in(log);
    std::string line;
    std::getline(in, line);
    std::vector<double> out;
    while (std::getline(in, line)) out.push_back(std::stod(line.substr(line.rfind(',') + 1)));
    return out;
}

TrainRun train_and_eval(const fs::path& data, const fs::path& out, const std::string& loss, unsigned threads) {
    fs::create_directories(out);
    const std::string th = std::to_string(threads);
    const auto task = data / "tasks" / "t2c";
    const std::string m = loss == "infonce" ? "1" : "4";
    cli_run({"--threads", th, "train", "--problems", (data / "problems.jsonl").string(), "--solutions",
             (data / "solutions.jsonl").string(), "--cutoff", "2023-01-01", "--loss", loss, "--m", m, "--tau", "0.07",
             "--epochs", "20", "--batch", "32", "--lr", "3e-4", "--seed", "0", "--out", (out / "model.cpmd").string()});
    for (const char* part : {"queries", "corpus"})
        cli_run({"--threads", th, "embed", "--model", (out / "model.cpmd").string(), "--input",
                 (task / (std::string(part) + ".jsonl")).string(), "--out", (out / (std::string(part) + ".cpre")).string()});
    auto printed = cli_run({"--threads", th, "eval", "--task", task.string(), "--embeddings-query",
                            (out / "queries.cpre").string(), "--embeddings-corpus", (out / "corpus.cpre").string(),
                            "--run-out", (out / "runs").string()});
    TrainRun r;
    r.ndcg = std::stod(printed.substr(printed.rfind(' ') + 1)) / 100.0;
    r.val_loss = read_val_losses(out / "model.cpmd.log.csv");
    r.files = {out / "model.cpmd", out / "model.cpmd.log.csv", out / "queries.cpre", out / "corpus.cpre",
               out / "runs" / "t2c.run.txt"};
    return r;
}

Outcome synthetic_training(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto data = work / "c6";
    write_synthetic(data);
    cli_run({"build-tasks", "--task", "t2c", "--problems", (data / "problems.jsonl").string(), "--solutions",
             (data / "solutions.jsonl").string(), "--cutoff", "2023-01-01", "--out", (data / "tasks").string()});
    auto group = train_and_eval(data, work / "c6_group", "group-infonce", 1);
    auto info = train_and_eval(data, work / "c6_infonce", "infonce", 1);
    bool decreasing = group.val_loss.size() >= 5;
    for (std::size_t e = 1; decreasing && e < 5; ++e) decreasing = group.val_loss[e] < group.val_loss[e - 1];
    const double secs = seconds_since(t0);
    const bool ok = group.ndcg >= 0.99 && decreasing && std::abs(info.ndcg - group.ndcg) <= 0.05 && secs < 300.0;
    std::string losses;
    for (std::size_t e = 0; e < 5 && e < group.val_loss.size(); ++e) losses += (e ? "," : "") + fmt("%.3f", group.val_loss[e]);
    return {ok, "group-infonce NDCG@10 " + fmt("%.4f", group.ndcg) + ", infonce " + fmt("%.4f", info.ndcg) +
                    ", val loss epochs 1-5 [" + losses + "]" + (decreasing ? " strictly decreasing" : " NOT decreasing") +
                    ", " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------------ 7

std::vector<Problem> random_problems(std::size_t n, Rng& rng) {
    std::vector<Problem> out;
    for (std::size_t i = 0; i < n; ++i) {
        Problem p;
        p.id = "q" + std::to_string(i);
        p.source = uniform_index(rng, 2) == 0 ? "codeforces" : "luogu";
        p.statement = "statement " + std::to_string(i);
        p.timestamp = Date{2018 + static_cast<int>(uniform_index(rng, 7)), 1 + static_cast<int>(uniform_index(rng, 12)),
                           1 + static_cast<int>(uniform_index(rng, 28))};
        out.push_back(p);
    }
    return out;
}

std::vector<DuplicatePair> random_dup_pairs(std::size_t nodes, std::size_t edges, Rng& rng) {
    std::vector<DuplicatePair> out;
    while (out.size() < edges) {
        auto a = uniform_index(rng, nodes), b = uniform_index(rng, nodes);
        if (a != b)
            out.push_back({"q" + std::to_string(a), "q" + std::to_string(b),
                           static_cast<DuplicateLevel>(uniform_index(rng, 3))});
    }
    return out;
}

// Writes a random corpus with duplicate pairs and builds all file-based tasks.
std::vector<fs::path> build_tasks_via_cli(const fs::path& dir, unsigned threads) {
    Rng rng = make_rng(707);
    fs::create_directories(dir);
    Corpus corpus(random_problems(300, rng));
    std::vector<Solution> sols;
    for (const auto& p : corpus.problems())
        for (std::size_t s = 0; s < 3; ++s) sols.push_back({p.id + "_s" + std::to_string(s), p.id, "code " + p.id, "cpp"});
    std::vector<SimplifiedPair> simp;
    for (int i = 0; i < 100; i += 2) simp.push_back({"q" + std::to_string(i), "q" + std::to_string(i + 1)});
    {
        std::ofstream p(dir / "problems.jsonl");
        write_problems(p, corpus);
        std::ofstream s(dir / "solutions.jsonl");
        write_solutions(s, sols);
        std::ofstream d(dir / "dup_pairs.jsonl");
        write_duplicate_pairs(d, random_dup_pairs(300, 120, rng));
        std::ofstream f(dir / "simplified_pairs.jsonl");
        write_simplified_pairs(f, simp);
    }
    std::vector<fs::path> files;
    for (const char* task : {"t2c", "c2c", "p2dup", "s2full"}) {
        cli_run({"--threads", std::to_string(threads), "build-tasks", "--task", task, "--problems",
                 (dir / "problems.jsonl").string(), "--solutions", (dir / "solutions.jsonl").string(), "--dup-pairs",
                 (dir / "dup_pairs.jsonl").string(), "--simplified-pairs", (dir / "simplified_pairs.jsonl").string(),
                 "--test-count", "20", "--seed", "11", "--cutoff", "2022-01-01", "--out", (dir / "tasks").string()});
        for (const char* f : {"queries.jsonl", "corpus.jsonl", "qrels.txt", "qrels_levels.txt", "train_remainder.jsonl",
                              "manifest.json"})
            if (fs::exists(dir / "tasks" / task / f)) files.push_back(dir / "tasks" / task / f);
    }
    return files;
}

Outcome split_invariants(const fs::path& work) {
    Rng rng = make_rng(77);
    std::size_t violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Corpus corpus(random_problems(100, rng));
        std::vector<Solution> sols;
        for (const auto& p : corpus.problems())
            for (std::size_t s = 0; s < uniform_index(rng, 4); ++s)
                sols.push_back({p.id + "_" + std::to_string(s), p.id, "x", "cpp"});
        const Date cutoff{2019 + static_cast<int>(uniform_index(rng, 5)), 1 + static_cast<int>(uniform_index(rng, 12)), 1};
        auto split = temporal_split(corpus, sols, cutoff);
        for (const auto& p : split.test_problems) violations += p.timestamp < cutoff;
        for (const auto& s : split.test_solutions) violations += corpus.at(s.problem_id).timestamp < cutoff;

        auto clusters = cluster_duplicates(random_dup_pairs(100, 5 + uniform_index(rng, 60), rng));
        TaskSpec spec;
        spec.kind = TaskKind::p2dup;
        spec.seed = static_cast<std::uint64_t>(trial);
        auto task = build_p2dup(clusters, corpus, spec);
        violations += task.queries.size() != static_cast<std::size_t>(std::ceil(0.3 * clusters.size() - 1e-9));
        std::set<std::string> corpus_ids;
        for (const auto& d : task.corpus) corpus_ids.insert(d.id);
        std::size_t qrels = 0, expected = 0;
        for (const auto& q : task.queries) {
            violations += corpus_ids.count(q.id);
            qrels += task.qrels.at(q.id).size();
            for (const auto& c : clusters)
                if (std::find(c.members.begin(), c.members.end(), q.id) != c.members.end())
                    expected += c.members.size() - 1;
        }
        violations += qrels != expected;
    }
    std::size_t graph_mismatch = 0;
    for (int g = 0; g < 1000; ++g) {
        const std::size_t nodes = 2 + uniform_index(rng, 50);
        auto pairs = random_dup_pairs(nodes, 1 + uniform_index(rng, nodes * 2), rng);
        std::vector<std::pair<std::string, std::string>> edges;
        for (const auto& p : pairs) edges.emplace_back(p.problem_a, p.problem_b);
        std::set<std::set<std::string>> ours;
        for (const auto& c : cluster_duplicates(pairs)) ours.insert({c.members.begin(), c.members.end()});
        graph_mismatch += ours != testing::dfs_components(edges);
    }
    auto files = build_tasks_via_cli(work / "c7", 1);
    return {violations == 0 && graph_mismatch == 0 && !files.empty(),
            "200 random corpora, " + std::to_string(violations) + " split/p2dup violations; 1000 graphs, " +
                std::to_string(graph_mismatch) + " union-find/DFS mismatches"};
}

// ------------------------------------------------------------------ 8

EmbeddingMatrix random_pool(std::size_t n, std::size_t dim, Rng& rng) {
    std::vector<std::string> ids;
    std::vector<float> values;
    for (std::size_t r = 0; r < n; ++r) {
        ids.push_back("x" + std::to_string(r));
        const bool copy = r > 0 && bernoulli(rng, 0.35);
        const std::size_t src = copy ? uniform_index(rng, r) : 0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double noise = 2.0 * uniform01(rng) - 1.0;
            values.push_back(static_cast<float>(copy ? values[src * dim + d] + 0.05 * noise : noise));
        }
    }
    return EmbeddingMatrix(ids, static_cast<std::uint32_t>(dim), values);
}

std::vector<std::pair<std::string, std::string>> random_pairs(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::pair<std::string, std::string>> out;
    while (out.size() < count) {
        auto a = uniform_index(rng, n), b = uniform_index(rng, n);
        if (a != b) out.emplace_back("x" + std::to_string(a), "x" + std::to_string(b));
    }
    return out;
}

std::vector<fs::path> mine_via_cli(const fs::path& dir, unsigned threads) {
    fs::create_directories(dir);
    Rng rng = make_rng(808);
    export_embeddings(dir / "pool.cpre", random_pool(500, 24, rng));
    {
        std::ofstream p(dir / "pairs.jsonl");
        for (const auto& [a, b] : random_pairs(500, 200, rng))
            p << "{\"anchor\":\"" << a << "\",\"positive\":\"" << b << "\"}\n";
    }
    cli_run({"--threads", std::to_string(threads), "mine", "--pairs", (dir / "pairs.jsonl").string(), "--pool",
             (dir / "pool.cpre").string(), "--k", "10", "--threshold", "0.95", "--seed", "5", "--out",
             (dir / "triplets.jsonl").string()});
    return {dir / "triplets.jsonl"};
}

Outcome mining_soundness(const fs::path& work) {
    Rng rng = make_rng(88);
    std::size_t accepted = 0, rejected = 0, violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 30 + uniform_index(rng, 300);
        auto pool_m = random_pool(n, 16, rng);
        SearchIndex pool(pool_m);
        auto pairs = random_pairs(n, 40, rng);
        PairSet dups;
        for (const auto& [a, b] : random_pairs(n, 40, rng)) dups.insert(a, b);
        HeuristicVerifier verifier(0.95, dups);
        auto result = mine_negatives(pool, pool_m, pairs, {10, static_cast<std::uint64_t>(trial), 1}, verifier);
        std::map<std::string, std::set<std::string>> known;
        for (const auto& [a, p] : pairs) {
            known[a].insert(p);
            known[p].insert(a);
        }
        std::vector<float> stored(pool_m.values().begin(), pool_m.values().end());
        for (const auto& t : result.attempts) {
            if (t.verdict == Verdict::rejected) {
                ++rejected;
                continue;
            }
            ++accepted;
            auto exclude = known[t.anchor];
            exclude.insert(t.anchor);
            auto top = testing::naive_top_k(pool_m.ids(), stored, 16, to_double(pool_m.row(pool_m.find(t.anchor))), 10,
                                            exclude);
            const bool in_top = std::any_of(top.begin(), top.end(), [&](const auto& h) { return h.first == t.negative; });
            violations += !in_top || known[t.anchor].count(t.negative) || dups.contains(t.anchor, t.negative) ||
                          !(t.negative_score < 0.95);
        }
    }
    auto files = mine_via_cli(work / "c8", 1);
    return {violations == 0 && accepted > 0 && rejected > 0,
            std::to_string(accepted) + " accepted negatives checked, " + std::to_string(rejected) +
                " rejected attempts, " + std::to_string(violations) + " violations"};
}

// ------------------------------------------------------------------ 9

std::vector<fs::path> analyze_via_cli(const fs::path& dir, unsigned threads) {
    fs::create_directories(dir);
    Rng rng = make_rng(909);
    const std::size_t dim = 16;
    // Historical rows plus eval rows built as noisy copies with growing noise,
    // so max similarity spreads across bins.
    std::vector<std::string> hist_ids, eval_ids;
    std::vector<float> hist, eval;
    for (std::size_t i = 0; i < 200; ++i) {
        hist_ids.push_back("h" + std::to_string(i));
        for (std::size_t d = 0; d < dim; ++d) hist.push_back(static_cast<float>(2.0 * uniform01(rng) - 1.0));
    }
    std::ofstream csv(dir / "pass_records.csv");
    csv << "problem_id,model,pass_rate,difficulty,release_date\n";
    for (std::size_t i = 0; i < 120; ++i) {
        eval_ids.push_back("e" + std::to_string(i));
        const double noise = 0.1 + 2.0 * uniform01(rng);
        const std::size_t src = uniform_index(rng, 200);
        for (std::size_t d = 0; d < dim; ++d)
            eval.push_back(static_cast<float>(hist[src * dim + d] + noise * (2.0 * uniform01(rng) - 1.0)));
        for (const char* model : {"alpha", "beta"}) {
            static const char* kDiff[] = {"easy", "medium", "hard"};
            csv << eval_ids.back() << ',' << model << ',' << fmt("%.3f", uniform01(rng)) << ',' << kDiff[i % 3]
                << ",2024-06-01\n";
        }
    }
    csv.close();
    export_embeddings(dir / "hist.cpre", EmbeddingMatrix(hist_ids, dim, hist));
    export_embeddings(dir / "eval.cpre", EmbeddingMatrix(eval_ids, dim, eval));
    cli_run({"--threads", std::to_string(threads), "analyze", "--pass-records", (dir / "pass_records.csv").string(),
             "--eval-emb", (dir / "eval.cpre").string(), "--hist-emb", (dir / "hist.cpre").string(), "--out",
             (dir / "report").string()});
    return {dir / "report" / "report.csv", dir / "report" / "bins.csv", dir / "report" / "regression.csv",
            dir / "report" / "gaps.csv"};
}

Outcome analysis_oracle(const fs::path& work) {
    Rng rng = make_rng(99);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 3 + uniform_index(rng, 80);
        std::vector<double> x(n), y(n);
        const double slope = 4.0 * uniform01(rng) - 2.0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = uniform01(rng);
            y[i] = slope * x[i] + 0.5 + 0.2 * (uniform01(rng) - 0.5);
        }
        auto fit = ols(x, y);
        auto [b, a] = testing::ols_normal_equations(x, y);
        worst = std::max({worst, std::abs(fit->slope - b), std::abs(fit->intercept - a)});
    }

    std::vector<ProblemPoint> points;
    for (int i = 0; i < 300; ++i) {
        const double sim = 0.2 + 0.7 * uniform01(rng);
        points.push_back({"p" + std::to_string(i), Difficulty::easy, 0.1 + 0.8 * sim + 0.02 * uniform01(rng), sim, "h"});
    }
    auto report = bin_and_aggregate(points, default_bin_edges({0.2, 0.9}));
    bool increasing = true;
    for (std::size_t b = 1; b < report.bins.size(); ++b) increasing &= report.bins[b].mean > report.bins[b - 1].mean;

    std::vector<PassRecord> records;
    std::vector<MaxSimilarity> sims;
    for (int i = 0; i < 100; ++i) {
        const double sim = 0.005 + 0.01 * i;
        const std::string id = "g" + std::to_string(i);
        sims.push_back({id, sim, "h"});
        records.push_back({id, "original", 0.9, Difficulty::medium, Date{2024, 6, 1}});
        records.push_back({id, "modified", 0.9 - 0.6 * (1.0 - sim), Difficulty::medium, Date{2024, 6, 1}});
    }
    auto gaps = variant_gap(records, sims, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, nullptr);
    bool shrinking = true;
    for (std::size_t b = 1; b < gaps.size(); ++b) shrinking &= gaps[b].gap < gaps[b - 1].gap;

    auto files = analyze_via_cli(work / "c9", 1);
    return {worst <= 1e-10 && increasing && shrinking,
            "OLS max diff " + fmt("%.2e", worst) + "; bin means " + (increasing ? "strictly increasing" : "NOT increasing") +
                " over " + std::to_string(report.bins.size()) + " bins; gaps " +
                (shrinking ? "strictly decreasing" : "NOT decreasing") + " over " + std::to_string(gaps.size()) + " bins"};
}

// ------------------------------------------------------------------ 10

Outcome determinism(const fs::path& work) {
    const auto t0 = Clock::now();
    std::size_t compared = 0;
    std::vector<std::string> differing;
    auto compare = [&](const std::vector<fs::path>& a, const std::vector<fs::path>& b) {
        if (a.size() != b.size()) {
            differing.push_back("file count");
            return;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            ++compared;
            const auto x = slurp(a[i]);
            if (x.empty() || x != slurp(b[i])) differing.push_back(b[i].filename().string());
        }
    };
    // Baselines are the files written by criteria 6 to 9 with one thread.
    auto rebase = [&](const std::vector<fs::path>& files, const fs::path& from, const fs::path& to) {
        std::vector<fs::path> out;
        for (const auto& f : files) out.push_back(to / fs::relative(f, from));
        return out;
    };
    for (unsigned threads : {1u, 4u}) {
        const std::string tag = "_t" + std::to_string(threads);
        auto group = train_and_eval(work / "c6", work / ("c10_group" + tag), "group-infonce", threads).files;
        compare(group, rebase(group, work / ("c10_group" + tag), work / "c6_group"));
        auto tasks = build_tasks_via_cli(work / ("c10_tasks" + tag), threads);
        compare(tasks, rebase(tasks, work / ("c10_tasks" + tag), work / "c7"));
        auto mined = mine_via_cli(work / ("c10_mine" + tag), threads);
        compare(mined, rebase(mined, work / ("c10_mine" + tag), work / "c8"));
        auto report = analyze_via_cli(work / ("c10_analyze" + tag), threads);
        compare(report, rebase(report, work / ("c10_analyze" + tag), work / "c9"));
    }
    std::string diff;
    for (const auto& d : differing) diff += " " + d;
    return {differing.empty() && compared > 0,
            std::to_string(compared) + " output files compared across reruns with 1 and 4 threads, " +
                std::to_string(differing.size()) + " differ" + diff + ", " + fmt("%.1f", seconds_since(t0)) + " s"};
}

// ------------------------------------------------------------------ 11

Outcome performance() {
    const std::size_t n = 100000, dim = 1024;
    Rng rng = make_rng(1111);
    std::vector<std::string> ids(n);
    std::vector<float> values(n * dim);
    for (std::size_t r = 0; r < n; ++r) ids[r] = "doc" + std::to_string(r);
    for (auto& v : values) v = static_cast<float>(2.0 * uniform01(rng) - 1.0);
    SearchIndex index(EmbeddingMatrix(std::move(ids), dim, std::move(values)));
    std::vector<double> times;
    for (int q = 0; q < 22; ++q) {
        std::vector<double> query(dim);
        for (auto& x : query) x = 2.0 * uniform01(rng) - 1.0;
        const auto t0 = Clock::now();
        auto hits = index.top_k(query, 10);
        const double ms = seconds_since(t0) * 1000.0;
        if (q >= 2) times.push_back(ms);  // first two queries warm caches
        if (hits.size() != 10) return {false, "short result list"};
    }
    std::sort(times.begin(), times.end());
    const double median = (times[times.size() / 2 - 1] + times[times.size() / 2]) / 2.0;
    return {median < 50.0, "median " + fmt("%.2f", median) + " ms over " + std::to_string(times.size()) +
                               " queries (100000 x 1024, k=10)"};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cpret_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"Gradient correctness", gradients},
        {"Loss closed forms", closed_forms},
        {"Task average arithmetic", table_average},
        {"NDCG oracle", ndcg_oracle},
        {"Search oracle", search_oracle},
        {"Synthetic end-to-end training", [&] { return synthetic_training(work); }},
        {"Split invariants", [&] { return split_invariants(work); }},
        {"Mining soundness", [&] { return mining_soundness(work); }},
        {"Analysis oracle", [&] { return analysis_oracle(work); }},
        {"Determinism", [&] { return determinism(work); }},
        {"Search performance", performance},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
