#include "cpret/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpret/analysis.hpp"
#include "cpret/corpus.hpp"
#include "cpret/digest.hpp"
#include "cpret/embedder.hpp"
#include "cpret/error.hpp"
#include "cpret/index.hpp"
#include "cpret/metrics.hpp"
#include "cpret/mining.hpp"
#include "cpret/parallel.hpp"
#include "cpret/taskbuilder.hpp"
#include "cpret/trainer.hpp"

#ifndef CPRET_VERSION
#define CPRET_VERSION "0.0.0"
#endif

namespace cpret::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
    unsigned threads = 0;
    std::string config;
    std::string manifest;
};

struct IngestOpts {
    std::string problems, solutions, dup_pairs, simplified_pairs, out;
    bool strict = false;
};

struct BuildOpts {
    std::string task, problems, solutions, dup_pairs, simplified_pairs, out, distractor_source, levels;
    std::string cutoff = "2023-01-01";
    double cluster_fraction = 0.30;
    std::size_t test_count = 10000;
    std::uint64_t seed = 0;
};

struct TrainOpts {
    int stage = 1;
    std::string loss = "group-infonce";
    std::size_t m = 0;
    double tau = 0.07;
    double margin = 0.2;
    std::size_t batch = 64;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    double mask_prob = 0.5;
    std::string optimizer = "adamw";
    std::string cross_negatives = "on";
    bool no_variance_penalty = false;
    double val_fraction = 0.05;
    std::uint32_t vocab_dim = EncoderModel::kDefaultVocabDim;
    std::uint32_t embed_dim = EncoderModel::kDefaultEmbedDim;
    std::string out, problems, solutions, init, cutoff, log;
    std::vector<std::string> triplets;
    std::size_t per_task_cap = 1000;
};

struct EmbedOpts {
    std::string model, input, out, import_path, field;
};

struct EvalOpts {
    std::vector<std::string> tasks, emb_query, emb_corpus;
    std::size_t k = 10;
    std::string metric = "ndcg";
    std::vector<double> scores;
    std::string run_out;
};

struct MineOpts {
    std::string pairs, pool, anchors, out, endpoint, texts, duplicates;
    std::string verifier = "heuristic";
    std::size_t k = 10;
    double threshold = 0.95;
    std::uint64_t seed = 0;
};

struct AnalyzeOpts {
    std::string pass_records, eval_emb, hist_emb, out, hist_problems, embedding_source;
    std::string bins = "auto";
    std::string stratum = "difficulty";
    bool date_guard = false;
};

struct Options {
    Globals g;
    IngestOpts ingest;
    BuildOpts build;
    TrainOpts train;
    EmbedOpts embed;
    EvalOpts eval;
    MineOpts mine;
    AnalyzeOpts analyze;
};

struct Io {
    std::ostream& out;
    std::ostream& err;
};

// ---------------------------------------------------------------- helpers

void atomic_write(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

template <typename Fn>
void atomic_write_with(const fs::path& path, Fn&& fn) {
    std::ostringstream ss(std::ios::binary);
    fn(ss);
    atomic_write(path, ss.str());
}

void warn(const Io& io, const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) io.err << "WARN: " << w << '\n';
}

Corpus load_problems(const std::string& path, bool strict, const Io& io) {
    auto r = ingest_problems(fs::path(path), strict);
    log_rejections(io.err, r.rejections);
    return std::move(r.records);
}

std::vector<Solution> load_solutions(const std::string& path, const Corpus& corpus, const Io& io) {
    auto r = ingest_solutions(fs::path(path), corpus);
    log_rejections(io.err, r.rejections);
    return std::move(r.records);
}

Date parse_date_flag(const std::string& s) {
    auto d = Date::parse(s);
    if (!d) throw UsageError("invalid date: " + s);
    return *d;
}

// id + text from a JSONL file; the text key is `field`, or the first of
// text / statement / code that is present.
std::vector<std::pair<std::string, std::string>> read_texts(const std::string& path, const std::string& field) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            auto o = json::parse(line);
            std::string key = field;
            if (key.empty())
                for (const char* k : {"text", "statement", "code"})
                    if (o.contains(k)) {
                        key = k;
                        break;
                    }
            if (key.empty() || !o.contains(key)) throw DataError("no text field");
            out.emplace_back(o.at("id").get<std::string>(), o.at(key).get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(path + ": LINE " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ": LINE " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// Pairs given as {anchor, positive}, {problem_a, problem_b} or {simplified_id, full_id}.
std::vector<std::pair<std::string, std::string>> read_id_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    static const std::pair<const char*, const char*> kKeys[] = {
        {"anchor", "positive"}, {"problem_a", "problem_b"}, {"simplified_id", "full_id"}};
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto o = json::parse(line);
            bool found = false;
            for (const auto& [a, b] : kKeys) {
                if (o.contains(a) && o.contains(b)) {
                    out.emplace_back(o.at(a).get<std::string>(), o.at(b).get<std::string>());
                    found = true;
                    break;
                }
            }
            if (!found) throw DataError("LINE " + std::to_string(line_no) + ": no recognized id pair");
        } catch (const json::exception& e) {
            throw DataError(path + ": LINE " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

class Manifest {
public:
    explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

    json config = json::object();
    std::uint64_t seed = 0;

    void input(const std::string& path) {
        if (!path.empty()) inputs_[path] = sha256_file(path);
    }

    void write(const fs::path& path) const {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json m{{"command", command_},
               {"config", config},
               {"config_digest", sha256_hex(config.dump())},
               {"input_digests", inputs_},
               {"seed", seed},
               {"toolkit_version", CPRET_VERSION},
               {"wall_time_seconds", wall}};
        atomic_write(path, m.dump(2) + "\n");
    }

private:
    std::string command_;
    std::map<std::string, std::string> inputs_;
    std::chrono::steady_clock::time_point start_;
};

fs::path manifest_path(const Globals& g, const fs::path& fallback) {
    return g.manifest.empty() ? fallback : fs::path(g.manifest);
}

fs::path beside(const std::string& file, const char* suffix) { return fs::path(file + suffix); }

// ---------------------------------------------------------------- commands

int cmd_ingest(const Options& o, const Io& io) {
    const auto& a = o.ingest;
    Manifest man("ingest");
    man.config = {{"problems", a.problems}, {"solutions", a.solutions}, {"strict", a.strict},
                  {"dup_pairs", a.dup_pairs}, {"simplified_pairs", a.simplified_pairs}};
    Corpus corpus = load_problems(a.problems, a.strict, io);
    man.input(a.problems);
    std::vector<Solution> sols;
    if (!a.solutions.empty()) {
        sols = load_solutions(a.solutions, corpus, io);
        man.input(a.solutions);
    }
    json stats;
    auto s = corpus_stats(corpus, sols);
    stats["problems"] = s.problem_count;
    stats["solutions"] = s.solution_count;
    stats["by_source"] = s.by_source;
    stats["by_statement_language"] = s.by_statement_language;
    stats["by_code_language"] = s.by_code_language;
    stats["by_format"] = s.by_format;
    json years = json::object();
    for (const auto& [y, n] : s.by_year) years[std::to_string(y)] = n;
    stats["by_year"] = years;
    if (!a.dup_pairs.empty()) {
        auto r = ingest_duplicate_pairs(fs::path(a.dup_pairs), corpus);
        log_rejections(io.err, r.rejections);
        stats["duplicate_pairs"] = r.records.size();
        man.input(a.dup_pairs);
    }
    if (!a.simplified_pairs.empty()) {
        auto r = ingest_simplified_pairs(fs::path(a.simplified_pairs), corpus);
        log_rejections(io.err, r.rejections);
        stats["simplified_pairs"] = r.records.size();
        man.input(a.simplified_pairs);
    }
    io.out << stats.dump(2) << '\n';
    if (!a.out.empty()) {
        atomic_write(fs::path(a.out) / "stats.json", stats.dump(2) + "\n");
        man.write(manifest_path(o.g, fs::path(a.out) / "run_manifest.json"));
    } else {
        man.write(manifest_path(o.g, "ingest.manifest.json"));
    }
    return kOk;
}

int cmd_build_tasks(const Options& o, const Io& io) {
    const auto& a = o.build;
    auto kind = parse_task_kind(a.task);
    if (!kind) throw UsageError("unknown task " + a.task);
    TaskSpec spec;
    spec.kind = *kind;
    spec.cutoff = parse_date_flag(a.cutoff);
    spec.cluster_test_fraction = a.cluster_fraction;
    spec.test_pair_count = a.test_count;
    spec.seed = a.seed;
    if (!a.distractor_source.empty()) spec.distractor_source = a.distractor_source;
    spec.validate();

    Manifest man("build-tasks");
    man.seed = a.seed;
    man.config = {{"task", a.task}, {"cutoff", a.cutoff}, {"cluster_fraction", a.cluster_fraction},
                  {"test_count", a.test_count}, {"seed", a.seed}, {"distractor_source", a.distractor_source},
                  {"levels", a.levels}};
    std::map<std::string, std::string> digests;
    auto use = [&](const std::string& path, const char* flag) {
        if (path.empty()) throw UsageError(std::string("--") + flag + " is required for task " + a.task);
        digests[fs::path(path).filename().string()] = sha256_file(path);
        man.input(path);
    };

    use(a.problems, "problems");
    Corpus corpus = load_problems(a.problems, false, io);
    BuiltTask task;
    if (spec.kind == TaskKind::t2c || spec.kind == TaskKind::c2c) {
        use(a.solutions, "solutions");
        auto sols = load_solutions(a.solutions, corpus, io);
        auto split = temporal_split(corpus, sols, spec.cutoff);
        warn(io, split.warnings);
        task = spec.kind == TaskKind::t2c ? build_t2c(split) : build_c2c(split, spec.seed);
    } else if (spec.kind == TaskKind::p2dup) {
        use(a.dup_pairs, "dup-pairs");
        auto r = ingest_duplicate_pairs(fs::path(a.dup_pairs), corpus);
        log_rejections(io.err, r.rejections);
        std::vector<DuplicatePair> pairs;
        if (a.levels.empty()) {
            pairs = r.records;
        } else {
            std::set<DuplicateLevel> keep;
            std::stringstream ss(a.levels);
            for (std::string tok; std::getline(ss, tok, ',');) {
                auto lv = parse_duplicate_level(tok);
                if (!lv) throw UsageError("unknown duplicate level " + tok);
                keep.insert(*lv);
            }
            for (const auto& p : r.records)
                if (keep.count(p.level)) pairs.push_back(p);
        }
        task = build_p2dup(cluster_duplicates(pairs), corpus, spec);
    } else {
        use(a.simplified_pairs, "simplified-pairs");
        auto r = ingest_simplified_pairs(fs::path(a.simplified_pairs), corpus);
        log_rejections(io.err, r.rejections);
        task = build_s2full(r.records, corpus, spec);
    }
    warn(io, task.warnings);
    const auto dir = write_task(a.out, task, spec, digests);
    std::size_t nqrels = 0;
    for (const auto& [q, d] : task.qrels) nqrels += d.size();
    io.out << a.task << ": " << task.queries.size() << " queries, " << task.corpus.size() << " corpus, " << nqrels
           << " qrels -> " << dir.string() << '\n';
    man.write(manifest_path(o.g, dir / "run_manifest.json"));
    return kOk;
}

Objective parse_objective(const std::string& s) {
    if (s == "infonce") return Objective::infonce;
    if (s == "multipos") return Objective::multipos;
    if (s == "group-infonce") return Objective::group_infonce;
    if (s == "triplet") return Objective::triplet;
    throw UsageError("unknown loss " + s);
}

int cmd_train(const Options& o, const Io& io) {
    const auto& a = o.train;
    TrainConfig cfg;
    cfg.loss.objective = parse_objective(a.loss);
    cfg.loss.tau = a.tau;
    cfg.loss.margin = a.margin;
    cfg.loss.variance_penalty = !a.no_variance_penalty;
    if (a.cross_negatives != "on" && a.cross_negatives != "off") throw UsageError("--cross-negatives takes on|off");
    cfg.loss.cross_query_negatives = a.cross_negatives == "on";
    cfg.batch_size = a.batch;
    const bool single = cfg.loss.objective == Objective::infonce || cfg.loss.objective == Objective::triplet;
    cfg.group_size = a.m != 0 ? a.m : (single ? 1 : 16);
    cfg.learning_rate = a.lr;
    cfg.weight_decay = a.weight_decay;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    cfg.masking = MaskingPolicy{a.mask_prob, a.mask_prob, a.mask_prob, a.seed};
    if (a.optimizer == "adamw") {
        cfg.optimizer = OptimizerKind::adamw;
    } else if (a.optimizer == "sgd") {
        cfg.optimizer = OptimizerKind::sgd;
    } else {
        throw UsageError("unknown optimizer " + a.optimizer);
    }
    cfg.validation_fraction = a.val_fraction;
    cfg.vocab_dim = a.vocab_dim;
    cfg.embed_dim = a.embed_dim;
    cfg.threads = o.g.threads;

    Manifest man("train");
    man.seed = a.seed;
    man.config = {{"stage", a.stage}, {"loss", a.loss}, {"m", cfg.group_size}, {"tau", a.tau},
                  {"margin", a.margin}, {"batch", a.batch}, {"lr", a.lr}, {"weight_decay", a.weight_decay},
                  {"epochs", a.epochs}, {"seed", a.seed}, {"mask_prob", a.mask_prob}, {"optimizer", a.optimizer},
                  {"cross_negatives", a.cross_negatives}, {"variance_penalty", !a.no_variance_penalty},
                  {"val_fraction", a.val_fraction}, {"vocab_dim", a.vocab_dim}, {"embed_dim", a.embed_dim},
                  {"cutoff", a.cutoff}, {"per_task_cap", a.per_task_cap}};

    TrainResult result;
    if (a.stage == 1) {
        if (a.problems.empty() || a.solutions.empty()) throw UsageError("stage 1 needs --problems and --solutions");
        cfg.validate();
        Corpus corpus = load_problems(a.problems, false, io);
        auto sols = load_solutions(a.solutions, corpus, io);
        man.input(a.problems);
        man.input(a.solutions);
        if (!a.cutoff.empty()) {
            auto split = temporal_split(corpus, sols, parse_date_flag(a.cutoff));
            corpus = Corpus(split.train_problems);
            sols = split.train_solutions;
        }
        auto groups = stage1_groups(corpus, sols);
        if (groups.empty()) throw DataError("no problem has an accepted solution");
        EncoderModel init;
        if (!a.init.empty()) {
            init = EncoderModel::load(fs::path(a.init));
            man.input(a.init);
        } else {
            init = EncoderModel::random(cfg.vocab_dim, cfg.embed_dim, cfg.seed);
        }
        result = train_stage1(init, groups, cfg);
    } else if (a.stage == 2) {
        if (a.init.empty() || a.problems.empty() || a.triplets.empty())
            throw UsageError("stage 2 needs --init, --problems and at least one --triplets file");
        Corpus corpus = load_problems(a.problems, false, io);
        man.input(a.problems);
        man.input(a.init);
        std::map<std::string, std::vector<TripletExample>> tasks;
        for (const auto& path : a.triplets) {
            std::ifstream in(path);
            if (!in) throw DataError("cannot read " + path);
            man.input(path);
            auto& list = tasks[fs::path(path).stem().string()];
            for (const auto& t : read_triplets(in)) {
                if (t.verdict != Verdict::accepted) continue;
                list.push_back({corpus.at(t.anchor).statement, corpus.at(t.positive).statement,
                                corpus.at(t.negative).statement});
            }
        }
        auto mixed = balance_tasks(tasks, a.per_task_cap, a.seed);
        result = train_stage2(EncoderModel::load(fs::path(a.init)), mixed, cfg);
    } else {
        throw UsageError("--stage takes 1 or 2");
    }

    atomic_write_with(a.out, [&](std::ostream& s) { result.model.save(s); });
    const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
    atomic_write_with(log_path, [&](std::ostream& s) { write_training_log(s, result.log); });
    for (const auto& e : result.log)
        io.out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << '\n';
    io.out << "best epoch " << result.best_epoch << " (" << result.train_count << " train, " << result.validation_count
           << " validation) -> " << a.out << '\n';
    man.write(manifest_path(o.g, beside(a.out, ".manifest.json")));
    return kOk;
}

int cmd_embed(const Options& o, const Io& io) {
    const auto& a = o.embed;
    Manifest man("embed");
    man.config = {{"model", a.model}, {"input", a.input}, {"import", a.import_path}, {"field", a.field}};
    EmbeddingMatrix matrix;
    if (!a.import_path.empty()) {
        if (!a.model.empty() || !a.input.empty()) throw UsageError("--import cannot be combined with --model/--input");
        matrix = import_embeddings(fs::path(a.import_path));
        man.input(a.import_path);
        io.out << "imported " << matrix.rows() << " rows, dim " << matrix.dim() << '\n';
    } else {
        if (a.model.empty() || a.input.empty() || a.out.empty())
            throw UsageError("embed needs --model, --input and --out (or --import)");
        auto model = EncoderModel::load(fs::path(a.model));
        auto items = read_texts(a.input, a.field);
        man.input(a.model);
        man.input(a.input);
        matrix = embed_texts(model, items, o.g.threads);
        io.out << "embedded " << matrix.rows() << " texts, dim " << matrix.dim() << '\n';
    }
    if (!a.out.empty()) {
        atomic_write_with(a.out, [&](std::ostream& s) { export_embeddings(s, matrix); });
        man.write(manifest_path(o.g, beside(a.out, ".manifest.json")));
    } else {
        man.write(manifest_path(o.g, "embed.manifest.json"));
    }
    return kOk;
}

std::string task_name(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (in) {
        try {
            auto m = json::parse(in);
            if (m.contains("task")) return m.at("task").get<std::string>();
        } catch (const json::exception&) {
        }
    }
    return dir.filename().string();
}

int cmd_eval(const Options& o, const Io& io) {
    const auto& a = o.eval;
    if (a.tasks.empty() && a.scores.empty()) throw UsageError("eval needs --task or --scores");
    if (a.emb_query.size() != a.tasks.size() || a.emb_corpus.size() != a.tasks.size())
        throw UsageError("give one --embeddings-query and one --embeddings-corpus per --task");
    if (a.metric != "ndcg" && a.metric != "recall" && a.metric != "mrr") throw UsageError("unknown metric " + a.metric);
    if (a.k == 0) throw UsageError("--k must be at least 1");

    Manifest man("eval");
    man.config = {{"tasks", a.tasks}, {"k", a.k}, {"metric", a.metric}, {"scores", a.scores}};
    std::vector<double> per_task;
    for (std::size_t t = 0; t < a.tasks.size(); ++t) {
        const fs::path dir = a.tasks[t];
        const auto qrels_path = dir / "qrels.txt";
        Qrels qrels = read_qrels(qrels_path);
        man.input(qrels_path.string());
        man.input(a.emb_query[t]);
        man.input(a.emb_corpus[t]);
        auto queries = import_embeddings(fs::path(a.emb_query[t]));
        SearchIndex index(import_embeddings(fs::path(a.emb_corpus[t])));
        for (const auto& [qid, docs] : qrels)
            for (const auto& [doc, rel] : docs)
                if (rel > 0 && index.matrix().find(doc) == EmbeddingMatrix::npos)
                    throw DataError("relevant doc " + doc + " of " + qid + " has no corpus embedding");
        std::vector<std::string> qids;
        for (const auto& [qid, _] : qrels) qids.push_back(qid);
        std::vector<std::vector<Hit>> hits(qids.size());
        for (const auto& qid : qids)
            if (queries.find(qid) == EmbeddingMatrix::npos) throw DataError("query " + qid + " has no embedding");
        parallel_for(qids.size(), o.g.threads, [&](std::size_t i) {
            auto q = to_double(queries.row(queries.find(qids[i])));
            hits[i] = index.top_k(std::span<const double>(q), a.k, IdSet{qids[i]});
        });
        RunResult run;
        for (std::size_t i = 0; i < qids.size(); ++i) run[qids[i]] = std::move(hits[i]);
        double value = 0.0;
        if (a.metric == "ndcg") value = ndcg_at_k(run, qrels, a.k);
        if (a.metric == "recall") value = recall_at_k(run, qrels, a.k);
        if (a.metric == "mrr") value = mrr_at_k(run, qrels, a.k);
        per_task.push_back(value * 100.0);
        const std::string name = task_name(dir);
        io.out << name << ' ' << a.metric << '@' << a.k << ' ' << format2(value * 100.0) << '\n';
        if (!a.run_out.empty())
            atomic_write_with(fs::path(a.run_out) / (name + ".run.txt"), [&](std::ostream& s) { write_run(s, run); });
    }
    std::vector<double> to_average = a.scores.empty() ? per_task : a.scores;
    if (!a.scores.empty() && !a.tasks.empty()) throw UsageError("--scores cannot be combined with --task");
    if (to_average.size() == 4) {
        io.out << "Avg " << format2(task_average(to_average)) << '\n';
    } else if (!a.scores.empty()) {
        throw UsageError("--scores takes exactly 4 values");
    }
    fs::path fallback = !a.run_out.empty() ? fs::path(a.run_out) / "eval.manifest.json"
                                           : fs::path("eval.manifest.json");
    man.write(manifest_path(o.g, fallback));
    return kOk;
}

int cmd_mine(const Options& o, const Io& io) {
    const auto& a = o.mine;
    Manifest man("mine");
    man.seed = a.seed;
    man.config = {{"k", a.k}, {"verifier", a.verifier}, {"threshold", a.threshold}, {"seed", a.seed},
                  {"endpoint", a.endpoint}};
    auto pairs = read_id_pairs(a.pairs);
    man.input(a.pairs);
    man.input(a.pool);
    SearchIndex pool(import_embeddings(fs::path(a.pool)));
    EmbeddingMatrix anchors = a.anchors.empty() ? pool.matrix() : import_embeddings(fs::path(a.anchors));
    man.input(a.anchors);

    std::unique_ptr<Verifier> verifier;
    std::unique_ptr<ProcessTransport> process;
    if (a.verifier == "heuristic") {
        PairSet dups;
        for (const auto& [x, y] : pairs) dups.insert(x, y);
        if (!a.duplicates.empty()) {
            for (const auto& [x, y] : read_id_pairs(a.duplicates)) dups.insert(x, y);
            man.input(a.duplicates);
        }
        verifier = std::make_unique<HeuristicVerifier>(a.threshold, std::move(dups));
    } else if (a.verifier == "external") {
        if (a.endpoint.empty() || a.texts.empty()) throw UsageError("external verifier needs --endpoint and --texts");
        TextLookup texts;
        for (auto& [id, text] : read_texts(a.texts, "")) texts.emplace(std::move(id), std::move(text));
        man.input(a.texts);
        process = std::make_unique<ProcessTransport>(a.endpoint);
        verifier = std::make_unique<ExternalVerifier>([&](const std::string& line) { return (*process)(line); },
                                                      std::move(texts));
    } else {
        throw UsageError("unknown verifier " + a.verifier);
    }

    auto result = mine_negatives(pool, anchors, pairs, MiningConfig{a.k, a.seed, o.g.threads}, *verifier);
    for (const auto& s : result.skipped) io.err << "SKIP " << s << ": no accepted negative\n";
    atomic_write_with(a.out, [&](std::ostream& s) { write_triplets(s, result.attempts); });
    const auto accepted = result.accepted().size();
    io.out << accepted << " accepted, " << result.attempts.size() - accepted << " rejected, " << result.skipped.size()
           << " skipped -> " << a.out << '\n';
    man.write(manifest_path(o.g, beside(a.out, ".manifest.json")));
    return kOk;
}

std::vector<double> parse_edges(const std::string& s) {
    std::vector<double> edges;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            std::size_t used = 0;
            edges.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw UsageError("bad bin edge `" + tok + "`");
        }
    }
    return edges;
}

// Keeps the rows of problems that have pass records, in matrix order.
EmbeddingMatrix rows_for_records(const EmbeddingMatrix& all, const std::vector<PassRecord>& records) {
    std::set<std::string> wanted;
    for (const auto& r : records) wanted.insert(r.problem_id);
    std::vector<std::string> ids;
    std::vector<float> values;
    for (std::size_t i = 0; i < all.rows(); ++i) {
        if (!wanted.count(all.ids()[i])) continue;
        ids.push_back(all.ids()[i]);
        auto row = all.row(i);
        values.insert(values.end(), row.begin(), row.end());
    }
    return EmbeddingMatrix(std::move(ids), all.dim(), std::move(values));
}

int cmd_analyze(const Options& o, const Io& io) {
    const auto& a = o.analyze;
    Manifest man("analyze");
    man.config = {{"bins", a.bins}, {"stratum", a.stratum}, {"date_guard", a.date_guard},
                  {"embedding_source", a.embedding_source}};
    auto records = read_pass_records(fs::path(a.pass_records));
    man.input(a.pass_records);
    man.input(a.eval_emb);
    man.input(a.hist_emb);
    auto eval = rows_for_records(import_embeddings(fs::path(a.eval_emb)), records);
    SearchIndex hist(import_embeddings(fs::path(a.hist_emb)));

    std::unique_ptr<DateGuard> guard;
    if (a.date_guard) {
        if (a.hist_problems.empty()) throw UsageError("--date-guard needs --hist-problems");
        guard = std::make_unique<DateGuard>();
        for (const auto& r : records) {
            auto [it, inserted] = guard->eval_dates.emplace(r.problem_id, r.release_date);
            if (!inserted && r.release_date < it->second) it->second = r.release_date;
        }
        for (const auto& p : load_problems(a.hist_problems, false, io).problems())
            guard->historical_dates.emplace(p.id, p.timestamp);
        man.input(a.hist_problems);
    }
    Stratum stratum;
    if (a.stratum == "difficulty") {
        stratum = Stratum::difficulty;
    } else if (a.stratum == "model") {
        stratum = Stratum::model;
    } else {
        throw UsageError("--stratum takes difficulty|model");
    }

    auto sims = compute_max_similarity(eval, hist, guard.get(), o.g.threads);
    std::vector<std::string> warnings;
    auto points = problem_points(records, sims, &warnings);
    std::vector<double> values;
    for (const auto& p : points) values.push_back(p.max_sim);
    const auto edges = a.bins == "auto" ? default_bin_edges(values) : parse_edges(a.bins);
    auto bins = bin_and_aggregate(points, edges);
    warnings.insert(warnings.end(), bins.warnings.begin(), bins.warnings.end());
    auto regression = stratified_regression(records, sims, stratum, &warnings);

    const fs::path dir = a.out;
    atomic_write_with(dir / "report.csv", [&](std::ostream& s) { write_report_csv(s, points, bins); });
    atomic_write_with(dir / "bins.csv", [&](std::ostream& s) { write_bins_csv(s, bins); });
    atomic_write_with(dir / "regression.csv", [&](std::ostream& s) { write_regression_csv(s, regression); });
    std::set<std::string> models;
    for (const auto& r : records) models.insert(r.model);
    if (models.size() >= 2) {
        auto gaps = variant_gap(records, sims, edges, &warnings);
        atomic_write_with(dir / "gaps.csv", [&](std::ostream& s) { write_gaps_csv(s, gaps); });
    } else {
        warnings.push_back("fewer than 2 models; gaps.csv not written");
    }
    warn(io, warnings);
    io.out << points.size() << " problems in " << bins.bins.size() << " bins -> " << dir.string() << '\n';
    man.write(manifest_path(o.g, dir / "run_manifest.json"));
    return kOk;
}

// ---------------------------------------------------------------- parsing

void build_app(CLI::App& app, Options& o) {
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--threads", o.g.threads, "Worker threads (0 = all cores)");
    app.add_option("--config", o.g.config, "Flat `key = value` file; explicit flags win");
    app.add_option("--manifest", o.g.manifest, "Where to write the run manifest");
    app.set_version_flag("--version", CPRET_VERSION);

    auto* ingest = app.add_subcommand("ingest", "Validate and summarize corpus files");
    ingest->add_option("--problems", o.ingest.problems, "problems.jsonl")->required();
    ingest->add_option("--solutions", o.ingest.solutions, "solutions.jsonl");
    ingest->add_option("--dup-pairs", o.ingest.dup_pairs, "dup_pairs.jsonl");
    ingest->add_option("--simplified-pairs", o.ingest.simplified_pairs, "simplified_pairs.jsonl");
    ingest->add_flag("--strict", o.ingest.strict, "Abort on the first malformed line");
    ingest->add_option("--out", o.ingest.out, "Directory for stats.json and the manifest");

    auto* build = app.add_subcommand("build-tasks", "Build one retrieval task");
    build->add_option("--task", o.build.task, "t2c|c2c|p2dup|s2full")->required();
    build->add_option("--problems", o.build.problems, "problems.jsonl")->required();
    build->add_option("--solutions", o.build.solutions, "solutions.jsonl (t2c, c2c)");
    build->add_option("--dup-pairs", o.build.dup_pairs, "dup_pairs.jsonl (p2dup)");
    build->add_option("--simplified-pairs", o.build.simplified_pairs, "simplified_pairs.jsonl (s2full)");
    build->add_option("--cutoff", o.build.cutoff, "Temporal cutoff YYYY-MM-DD")->capture_default_str();
    build->add_option("--cluster-fraction", o.build.cluster_fraction, "Share of duplicate clusters for test")
        ->capture_default_str();
    build->add_option("--test-count", o.build.test_count, "Simplified/full test pairs")->capture_default_str();
    build->add_option("--seed", o.build.seed, "Random seed")->capture_default_str();
    build->add_option("--out", o.build.out, "Output directory")->required();
    build->add_option("--distractor-source", o.build.distractor_source, "p2dup: distractors from this platform only");
    build->add_option("--levels", o.build.levels, "p2dup: keep only these levels, e.g. exact,near");

    auto* train = app.add_subcommand("train", "Train the encoder (stage 1 or 2)");
    train->add_option("--stage", o.train.stage, "1 = problem/code, 2 = triplet fine-tuning")->capture_default_str();
    train->add_option("--loss", o.train.loss, "infonce|multipos|group-infonce|triplet")->capture_default_str();
    train->add_option("--m", o.train.m, "Positives per group (default 16, or 1 for infonce/triplet)");
    train->add_option("--tau", o.train.tau, "Temperature")->capture_default_str();
    train->add_option("--margin", o.train.margin, "Triplet margin")->capture_default_str();
    train->add_option("--batch", o.train.batch, "Batch size")->capture_default_str();
    train->add_option("--lr", o.train.lr, "Learning rate")->capture_default_str();
    train->add_option("--weight-decay", o.train.weight_decay, "Decoupled weight decay (adamw)")->capture_default_str();
    train->add_option("--epochs", o.train.epochs, "Epochs")->capture_default_str();
    train->add_option("--seed", o.train.seed, "Random seed")->capture_default_str();
    train->add_option("--mask-prob", o.train.mask_prob, "Format masking probability per section kind")
        ->capture_default_str();
    train->add_option("--optimizer", o.train.optimizer, "adamw|sgd")->capture_default_str();
    train->add_option("--cross-negatives", o.train.cross_negatives, "on|off")->capture_default_str();
    train->add_flag("--no-variance-penalty", o.train.no_variance_penalty, "Drop the group variance penalty");
    train->add_option("--val-fraction", o.train.val_fraction, "Held-out share for model selection")
        ->capture_default_str();
    train->add_option("--vocab-dim", o.train.vocab_dim, "Hash buckets of a new model")->capture_default_str();
    train->add_option("--embed-dim", o.train.embed_dim, "Embedding size of a new model")->capture_default_str();
    train->add_option("--problems", o.train.problems, "problems.jsonl");
    train->add_option("--solutions", o.train.solutions, "solutions.jsonl (stage 1)");
    train->add_option("--cutoff", o.train.cutoff, "Stage 1: train only on problems before this date");
    train->add_option("--init", o.train.init, "Starting model (required for stage 2)");
    train->add_option("--triplets", o.train.triplets, "Mined triplets, one file per task (stage 2)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    train->add_option("--per-task-cap", o.train.per_task_cap, "Stage 2 triplets kept per task")->capture_default_str();
    train->add_option("--log", o.train.log, "Training log CSV (default <out>.log.csv)");
    train->add_option("--out", o.train.out, "Output model.cpmd")->required();

    auto* embed = app.add_subcommand("embed", "Encode texts or check an embedding file");
    embed->add_option("--model", o.embed.model, "model.cpmd");
    embed->add_option("--input", o.embed.input, "JSONL with id and text/statement/code");
    embed->add_option("--field", o.embed.field, "Text field to encode");
    embed->add_option("--import", o.embed.import_path, "Validate an external .cpre file");
    embed->add_option("--out", o.embed.out, "Output emb.cpre");

    auto* eval = app.add_subcommand("eval", "Score retrieval on built tasks");
    eval->add_option("--task", o.eval.tasks, "Task directory (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    eval->add_option("--embeddings-query", o.eval.emb_query, "Query embeddings, one per task")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    eval->add_option("--embeddings-corpus", o.eval.emb_corpus, "Corpus embeddings, one per task")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    eval->add_option("--k", o.eval.k, "Cutoff")->capture_default_str();
    eval->add_option("--metric", o.eval.metric, "ndcg|recall|mrr")->capture_default_str();
    eval->add_option("--scores", o.eval.scores, "Four per-task scores to average instead")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    eval->add_option("--run-out", o.eval.run_out, "Directory for TREC run files");

    auto* mine = app.add_subcommand("mine", "Mine verified hard negatives");
    mine->add_option("--pairs", o.mine.pairs, "Positive pairs JSONL")->required();
    mine->add_option("--pool", o.mine.pool, "Candidate pool embeddings")->required();
    mine->add_option("--anchors", o.mine.anchors, "Anchor embeddings (default: the pool)");
    mine->add_option("--k", o.mine.k, "Candidates per anchor")->capture_default_str();
    mine->add_option("--verifier", o.mine.verifier, "heuristic|external")->capture_default_str();
    mine->add_option("--threshold", o.mine.threshold, "Heuristic cosine threshold")->capture_default_str();
    mine->add_option("--duplicates", o.mine.duplicates, "Extra known duplicate pairs");
    mine->add_option("--endpoint", o.mine.endpoint, "External verifier command");
    mine->add_option("--texts", o.mine.texts, "JSONL texts for the external verifier");
    mine->add_option("--seed", o.mine.seed, "Random seed")->capture_default_str();
    mine->add_option("--out", o.mine.out, "Output triplets.jsonl")->required();

    auto* analyze = app.add_subcommand("analyze", "Similarity-aware benchmark audit");
    analyze->add_option("--pass-records", o.analyze.pass_records, "pass_records.csv")->required();
    analyze->add_option("--eval-emb", o.analyze.eval_emb, "Evaluation problem embeddings")->required();
    analyze->add_option("--hist-emb", o.analyze.hist_emb, "Historical corpus embeddings")->required();
    analyze->add_option("--bins", o.analyze.bins, "Comma-separated edges or `auto`")->capture_default_str();
    analyze->add_option("--stratum", o.analyze.stratum, "difficulty|model")->capture_default_str();
    analyze->add_flag("--date-guard", o.analyze.date_guard, "Require history to predate every eval problem");
    analyze->add_option("--hist-problems", o.analyze.hist_problems, "problems.jsonl with historical dates");
    analyze->add_option("--embedding-source", o.analyze.embedding_source, "Recorded in the manifest");
    analyze->add_option("--out", o.analyze.out, "Output directory")->required();
}

std::vector<std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config " + path);
    std::vector<std::string> args;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        std::replace(key.begin(), key.end(), '_', '-');
        args.push_back("--" + key + "=" + value);
    }
    return args;
}

int dispatch(const std::string& name, const Options& o, const Io& io) {
    if (name == "ingest") return cmd_ingest(o, io);
    if (name == "build-tasks") return cmd_build_tasks(o, io);
    if (name == "train") return cmd_train(o, io);
    if (name == "embed") return cmd_embed(o, io);
    if (name == "eval") return cmd_eval(o, io);
    if (name == "mine") return cmd_mine(o, io);
    if (name == "analyze") return cmd_analyze(o, io);
    throw UsageError("unknown command " + name);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Io io{out, err};
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        Options o;
        std::string command;
        for (int pass = 0; pass < 2; ++pass) {
            o = Options{};
            CLI::App app("Retrieval toolkit for competitive-programming corpora", "cpret");
            build_app(app, o);
            std::vector<std::string> reversed(args.rbegin(), args.rend());
            try {
                app.parse(reversed);
            } catch (const CLI::ParseError& e) {
                const int code = app.exit(e, out, err);
                return code == 0 ? kOk : kUsage;
            }
            command = app.get_subcommands().front()->get_name();
            if (o.g.config.empty() || pass == 1) break;
            // Splice config entries in right after the subcommand token so
            // that later explicit flags take precedence.
            auto extra = read_config(o.g.config);
            auto at = std::find(args.begin(), args.end(), command);
            args.insert(at + 1, extra.begin(), extra.end());
        }
        return dispatch(command, o, io);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    }
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace cpret::cli
