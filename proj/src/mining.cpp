#include "cpret/mining.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "cpret/error.hpp"
#include "cpret/parallel.hpp"
#include "cpret/rng.hpp"

namespace cpret {

using json = nlohmann::json;

std::string_view to_string(Verdict v) { return v == Verdict::accepted ? "accepted" : "rejected"; }

std::string PairSet::key(const std::string& a, const std::string& b) {
    return a < b ? a + '\n' + b : b + '\n' + a;
}

void PairSet::insert(const std::string& a, const std::string& b) { keys_.insert(key(a, b)); }

bool PairSet::contains(const std::string& a, const std::string& b) const { return keys_.count(key(a, b)) > 0; }

Verdict heuristic_verify(const VerifyRequest& request, double threshold, const PairSet& known_duplicates) {
    if (request.score >= threshold) return Verdict::rejected;
    if (request.anchor_id == request.candidate_id) return Verdict::rejected;
    if (known_duplicates.contains(request.anchor_id, request.candidate_id)) return Verdict::rejected;
    return Verdict::accepted;
}

HeuristicVerifier::HeuristicVerifier(double threshold, PairSet known_duplicates)
    : threshold_(threshold), duplicates_(std::move(known_duplicates)) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("verifier threshold must lie in (0, 1]");
}

Verdict HeuristicVerifier::verify(const VerifyRequest& request) {
    return heuristic_verify(request, threshold_, duplicates_);
}

std::string encode_verify_request(const VerifyRequest& request, const std::string& anchor_text,
                                  const std::string& candidate_text) {
    return json{{"anchor_id", request.anchor_id},
                {"candidate_id", request.candidate_id},
                {"anchor", anchor_text},
                {"candidate", candidate_text},
                {"score", request.score}}
        .dump();
}

Verdict decode_verify_response(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line == "not_equivalent") return Verdict::accepted;
    if (line == "equivalent") return Verdict::rejected;
    throw DataError("verifier answered `" + std::string(line) + "`; expected equivalent or not_equivalent");
}

ExternalVerifier::ExternalVerifier(Transport transport, TextLookup texts)
    : transport_(std::move(transport)), texts_(std::move(texts)) {}

Verdict ExternalVerifier::verify(const VerifyRequest& request) {
    auto text = [&](const std::string& id) -> const std::string& {
        auto it = texts_.find(id);
        if (it == texts_.end()) throw DataError("no text for id " + id);
        return it->second;
    };
    const std::string line = encode_verify_request(request, text(request.anchor_id), text(request.candidate_id));
    std::lock_guard lock(mutex_);
    return decode_verify_response(transport_(line));
}

ProcessTransport::ProcessTransport(const std::string& command) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw DataError("cannot create verifier pipes");
    pid_ = fork();
    if (pid_ < 0) throw DataError("cannot start verifier");
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    std::signal(SIGPIPE, SIG_IGN);
}

ProcessTransport::~ProcessTransport() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
}

std::string ProcessTransport::operator()(const std::string& request_line) {
    std::string msg = request_line + '\n';
    std::size_t sent = 0;
    while (sent < msg.size()) {
        ssize_t w = write(to_child_, msg.data() + sent, msg.size() - sent);
        if (w < 0 && errno == EINTR) continue;
        if (w <= 0) throw DataError("verifier process closed its input");
        sent += static_cast<std::size_t>(w);
    }
    for (;;) {
        auto nl = pending_.find('\n');
        if (nl != std::string::npos) {
            std::string line = pending_.substr(0, nl);
            pending_.erase(0, nl + 1);
            return line;
        }
        char buf[4096];
        ssize_t r = read(from_child_, buf, sizeof buf);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) throw DataError("verifier process exited without answering");
        pending_.append(buf, static_cast<std::size_t>(r));
    }
}

std::vector<MinedTriplet> MiningResult::accepted() const {
    std::vector<MinedTriplet> out;
    for (const auto& t : attempts)
        if (t.verdict == Verdict::accepted) out.push_back(t);
    return out;
}

MiningResult mine_negatives(const SearchIndex& pool, const EmbeddingMatrix& anchors,
                            const std::vector<std::pair<std::string, std::string>>& positive_pairs,
                            const MiningConfig& cfg, Verifier& verifier) {
    if (pool.size() == 0) throw UsageError("empty candidate pool");
    if (cfg.k == 0) throw UsageError("k must be at least 1");
    std::unordered_map<std::string, IdSet> known;
    for (const auto& [a, p] : positive_pairs) {
        known[a].insert(p);
        known[p].insert(a);
    }
    for (const auto& [a, p] : positive_pairs)
        if (anchors.find(a) == EmbeddingMatrix::npos) throw DataError("anchor " + a + " has no embedding");

    struct PerPair {
        std::vector<MinedTriplet> attempts;
        bool found = false;
    };
    std::vector<PerPair> results(positive_pairs.size());
    parallel_for(positive_pairs.size(), cfg.threads, [&](std::size_t i) {
        const auto& [anchor, positive] = positive_pairs[i];
        IdSet exclude = known.at(anchor);
        exclude.insert(anchor);
        const auto query = to_double(anchors.row(anchors.find(anchor)));
        auto candidates = pool.top_k(std::span<const double>(query), cfg.k, exclude);
        Rng rng = make_rng(cfg.seed ^ fnv1a64(anchor + '\n' + positive));
        auto& out = results[i];
        while (!candidates.empty()) {
            const std::size_t pick = uniform_index(rng, candidates.size());
            const Hit hit = candidates[pick];
            candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
            const Verdict v = verifier.verify({anchor, hit.doc_id, hit.score});
            out.attempts.push_back({anchor, positive, hit.doc_id, hit.score, v});
            if (v == Verdict::accepted) {
                out.found = true;
                break;
            }
        }
    });

    MiningResult result;
    for (std::size_t i = 0; i < results.size(); ++i) {
        for (auto& t : results[i].attempts) result.attempts.push_back(std::move(t));
        if (!results[i].found)
            result.skipped.push_back(positive_pairs[i].first + " -> " + positive_pairs[i].second);
    }
    return result;
}

void write_triplets(std::ostream& out, const std::vector<MinedTriplet>& triplets) {
    for (const auto& t : triplets)
        out << json{{"anchor", t.anchor},
                    {"positive", t.positive},
                    {"negative", t.negative},
                    {"negative_score", t.negative_score},
                    {"verdict", to_string(t.verdict)}}
                   .dump()
            << '\n';
}

std::vector<MinedTriplet> read_triplets(std::istream& in) {
    std::vector<MinedTriplet> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto o = json::parse(line);
            MinedTriplet t{o.at("anchor").get<std::string>(), o.at("positive").get<std::string>(),
                           o.at("negative").get<std::string>(), o.at("negative_score").get<double>(),
                           Verdict::accepted};
            const auto v = o.at("verdict").get<std::string>();
            if (v == "rejected") {
                t.verdict = Verdict::rejected;
            } else if (v != "accepted") {
                throw DataError("LINE " + std::to_string(line_no) + ": unknown verdict " + v);
            }
            out.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw DataError("LINE " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace cpret
