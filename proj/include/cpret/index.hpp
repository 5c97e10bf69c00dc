#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cpret/embedder.hpp"

namespace cpret {

struct Hit {
    std::string doc_id;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based

    bool operator==(const Hit&) const = default;
};

using IdSet = std::unordered_set<std::string>;

namespace detail {
struct ScoredRow;
}

/// Exact cosine search over a unit-norm embedding matrix.
///
/// Scores are f64 dot products accumulated from the f32 rows. Ties are broken
/// by ascending doc id, so results are a pure function of (matrix, query).
/// Immutable after construction; concurrent queries are safe.
class SearchIndex {
public:
    /// Throws UsageError on an empty matrix.
    explicit SearchIndex(EmbeddingMatrix matrix);

    std::size_t size() const { return matrix_.rows(); }
    std::uint32_t dim() const { return matrix_.dim(); }
    const EmbeddingMatrix& matrix() const { return matrix_; }

    /// Returns min(k, size - |exclude ∩ ids|) hits. Throws UsageError on a
    /// dimension mismatch or k == 0.
    std::vector<Hit> top_k(std::span<const double> query, std::size_t k, const IdSet& exclude = {}) const;
    std::vector<Hit> top_k(std::span<const float> query, std::size_t k, const IdSet& exclude = {}) const;

    /// top_k with k = 1. Throws DataError when every document is excluded.
    Hit max_similarity(std::span<const double> query, const IdSet& exclude = {}) const;

    /// One result list per query row, evaluated on `threads` workers.
    std::vector<std::vector<Hit>> top_k_batch(const EmbeddingMatrix& queries, std::size_t k,
                                              unsigned threads = 1) const;

    /// Forces the plain single-pass scan (used to cross-check the filtered path).
    std::vector<Hit> top_k_full_scan(std::span<const double> query, std::size_t k, const IdSet& exclude = {}) const;

private:
    std::vector<std::uint32_t> excluded_rows(const IdSet& exclude) const;
    std::vector<Hit> finish(std::vector<detail::ScoredRow>& kept) const;
    std::vector<Hit> filtered_scan(std::span<const double> query, std::size_t want,
                                   const std::vector<std::uint32_t>& excluded) const;

    EmbeddingMatrix matrix_;
    std::vector<std::uint32_t> id_order_;  // row -> position in ascending-id order
    // bf16 shadow of the rows (stride padded to 32) for large corpora. It only
    // selects candidates; every returned score is recomputed from the f32 rows.
    std::vector<std::uint16_t> shadow_;
    std::size_t shadow_stride_ = 0;
};

/// Dot product of an f32 row with an f64 query, accumulated in f64.
double score_row(std::span<const float> row, std::span<const double> query);

std::vector<double> to_double(std::span<const float> v);

}  // namespace cpret
