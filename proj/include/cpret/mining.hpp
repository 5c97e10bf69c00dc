#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cpret/index.hpp"

namespace cpret {

enum class Verdict { accepted, rejected };
std::string_view to_string(Verdict v);

struct VerifyRequest {
    std::string anchor_id;
    std::string candidate_id;
    double score = 0.0;  // cosine between anchor and candidate
};

/// Decides whether a retrieved candidate is a valid (non-equivalent)
/// negative. Implementations must be safe to call from several threads.
class Verifier {
public:
    virtual ~Verifier() = default;
    virtual Verdict verify(const VerifyRequest& request) = 0;
};

/// Unordered id pair set.
class PairSet {
public:
    void insert(const std::string& a, const std::string& b);
    bool contains(const std::string& a, const std::string& b) const;
    std::size_t size() const { return keys_.size(); }

private:
    static std::string key(const std::string& a, const std::string& b);
    std::unordered_set<std::string> keys_;
};

/// Rejects when cosine >= threshold or when the pair is a known duplicate.
Verdict heuristic_verify(const VerifyRequest& request, double threshold, const PairSet& known_duplicates);

class HeuristicVerifier : public Verifier {
public:
    /// Throws UsageError unless threshold lies in (0, 1].
    HeuristicVerifier(double threshold, PairSet known_duplicates);
    Verdict verify(const VerifyRequest& request) override;

private:
    double threshold_;
    PairSet duplicates_;
};

/// Line protocol shared by the external adapters. Request: one JSON object per
/// line, {"anchor_id", "candidate_id", "anchor", "candidate", "score"}.
/// Response: one line, `equivalent` (reject) or `not_equivalent` (accept).
std::string encode_verify_request(const VerifyRequest& request, const std::string& anchor_text,
                                  const std::string& candidate_text);
/// Throws DataError on any other response.
Verdict decode_verify_response(std::string_view line);

using TextLookup = std::unordered_map<std::string, std::string>;

/// Passes every request through a callable speaking the line protocol
/// (request line in, response line out). Calls are serialized.
class ExternalVerifier : public Verifier {
public:
    using Transport = std::function<std::string(const std::string&)>;
    ExternalVerifier(Transport transport, TextLookup texts);
    Verdict verify(const VerifyRequest& request) override;

private:
    Transport transport_;
    TextLookup texts_;
    std::mutex mutex_;
};

/// Transport backed by a child process (`/bin/sh -c command`) that reads
/// request lines on stdin and answers on stdout.
class ProcessTransport {
public:
    explicit ProcessTransport(const std::string& command);
    ~ProcessTransport();
    ProcessTransport(const ProcessTransport&) = delete;
    ProcessTransport& operator=(const ProcessTransport&) = delete;

    std::string operator()(const std::string& request_line);

private:
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string pending_;
};

struct MinedTriplet {
    std::string anchor;
    std::string positive;
    std::string negative;
    double negative_score = 0.0;
    Verdict verdict = Verdict::accepted;

    bool operator==(const MinedTriplet&) const = default;
};

struct MiningConfig {
    std::size_t k = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct MiningResult {
    /// Every verified candidate in (pair, attempt) order; rejected attempts included.
    std::vector<MinedTriplet> attempts;
    /// `anchor -> positive` pairs that found no accepted negative.
    std::vector<std::string> skipped;

    std::vector<MinedTriplet> accepted() const;
};

/// For each (anchor, positive) pair: retrieve the anchor's top-k from the pool
/// excluding the anchor and every known positive of it (pairs count in both
/// directions), then draw candidates uniformly without replacement until the
/// verifier accepts one or the list is exhausted. The draw order comes from an
/// RNG seeded by the global seed xor a hash of the pair, so output does not
/// depend on the thread count. Throws UsageError on an empty pool and
/// DataError when an anchor has no embedding.
MiningResult mine_negatives(const SearchIndex& pool, const EmbeddingMatrix& anchors,
                            const std::vector<std::pair<std::string, std::string>>& positive_pairs,
                            const MiningConfig& cfg, Verifier& verifier);

/// JSONL `{anchor, positive, negative, negative_score, verdict}`.
void write_triplets(std::ostream& out, const std::vector<MinedTriplet>& triplets);
std::vector<MinedTriplet> read_triplets(std::istream& in);

}  // namespace cpret
