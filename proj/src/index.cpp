#include "cpret/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "cpret/error.hpp"
#include "cpret/parallel.hpp"

namespace cpret {

struct detail::ScoredRow {
    double score;
    std::uint32_t order;  // ascending-id position; lower wins ties
    std::uint32_t row;
};

namespace {

using Candidate = detail::ScoredRow;

// Corpora at or above this many stored floats take the two-pass path.
constexpr std::size_t kShadowThreshold = std::size_t{1} << 22;

// True when a ranks strictly ahead of b.
bool ahead(const Candidate& a, const Candidate& b) {
    return a.score > b.score || (a.score == b.score && a.order < b.order);
}

std::uint16_t to_bf16(float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t rounding = 0x7FFFu + ((u >> 16) & 1u);  // round to nearest even
    return static_cast<std::uint16_t>((u + rounding) >> 16);
}

[[maybe_unused]] float from_bf16(std::uint16_t h) { return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16); }

// f32 dot product of a bf16 row with an f32 query; n is a multiple of 32.
float shadow_dot(const std::uint16_t* row, const float* q, std::size_t n) {
#if defined(__AVX512F__)
    __m512 a0 = _mm512_setzero_ps();
    __m512 a1 = _mm512_setzero_ps();
    for (std::size_t d = 0; d < n; d += 32) {
        const __m512i r0 = _mm512_cvtepu16_epi32(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(row + d)));
        const __m512i r1 = _mm512_cvtepu16_epi32(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(row + d + 16)));
        a0 = _mm512_fmadd_ps(_mm512_castsi512_ps(_mm512_slli_epi32(r0, 16)), _mm512_loadu_ps(q + d), a0);
        a1 = _mm512_fmadd_ps(_mm512_castsi512_ps(_mm512_slli_epi32(r1, 16)), _mm512_loadu_ps(q + d + 16), a1);
    }
    return _mm512_reduce_add_ps(_mm512_add_ps(a0, a1));
#elif defined(__AVX2__) && defined(__FMA__)
    __m256 a0 = _mm256_setzero_ps();
    __m256 a1 = _mm256_setzero_ps();
    for (std::size_t d = 0; d < n; d += 16) {
        const __m256i r0 = _mm256_cvtepu16_epi32(_mm_loadu_si128(reinterpret_cast<const __m128i*>(row + d)));
        const __m256i r1 = _mm256_cvtepu16_epi32(_mm_loadu_si128(reinterpret_cast<const __m128i*>(row + d + 8)));
        a0 = _mm256_fmadd_ps(_mm256_castsi256_ps(_mm256_slli_epi32(r0, 16)), _mm256_loadu_ps(q + d), a0);
        a1 = _mm256_fmadd_ps(_mm256_castsi256_ps(_mm256_slli_epi32(r1, 16)), _mm256_loadu_ps(q + d + 8), a1);
    }
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, _mm256_add_ps(a0, a1));
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
#else
    float acc[16] = {};
    for (std::size_t d = 0; d < n; d += 16)
        for (std::size_t l = 0; l < 16; ++l) acc[l] += from_bf16(row[d + l]) * q[d + l];
    float s = 0.0f;
    for (float v : acc) s += v;
    return s;
#endif
}

// Upper bound on |shadow_dot - score_row| for a unit-norm row (norm <= 1 + 1e-6)
// and a query of Euclidean norm qnorm. Terms: bf16 rounding of the row
// (relative 2^-8), f32 rounding of the query (2^-24), f32 accumulation over at
// most dim/8 + 6 sequential additions per lane, and the f64 reference's own
// rounding.
double shadow_error_bound(double qnorm, std::size_t dim) {
    constexpr double u32 = 0x1.0p-24;
    const double depth = static_cast<double>(dim) / 8.0 + 6.0;
    const double gamma = depth * u32 / (1.0 - depth * u32);
    const double row_norm = 1.0 + 1e-6;
    const double magnitude = row_norm * qnorm;
    const double bound = magnitude * (0x1.0p-8 + u32 + gamma * (1.0 + 0x1.0p-8) * (1.0 + u32));
    return 1.01 * bound + static_cast<double>(dim) * 0x1.0p-50 * magnitude + 1e-300;
}

}  // namespace

double score_row(std::span<const float> row, std::span<const double> query) {
    // Eight independent partial sums in a fixed order: vectorizable and
    // deterministic.
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    const std::size_t n = row.size();
    const std::size_t blocked = n - n % 8;
    for (std::size_t d = 0; d < blocked; d += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += static_cast<double>(row[d + l]) * query[d + l];
    for (std::size_t d = blocked; d < n; ++d) acc[d - blocked] += static_cast<double>(row[d]) * query[d];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

SearchIndex::SearchIndex(EmbeddingMatrix matrix) : matrix_(std::move(matrix)) {
    if (matrix_.rows() == 0) throw UsageError("cannot build a search index over zero rows");
    const auto& ids = matrix_.ids();
    std::vector<std::uint32_t> by_id(ids.size());
    std::iota(by_id.begin(), by_id.end(), 0u);
    std::sort(by_id.begin(), by_id.end(), [&](std::uint32_t a, std::uint32_t b) { return ids[a] < ids[b]; });
    id_order_.resize(ids.size());
    for (std::uint32_t pos = 0; pos < by_id.size(); ++pos) id_order_[by_id[pos]] = pos;

    if (matrix_.values().size() >= kShadowThreshold) {
        const std::size_t dim = matrix_.dim();
        shadow_stride_ = (dim + 31) / 32 * 32;
        shadow_.assign(matrix_.rows() * shadow_stride_, 0);
        for (std::size_t r = 0; r < matrix_.rows(); ++r) {
            auto src = matrix_.row(r);
            for (std::size_t d = 0; d < dim; ++d) shadow_[r * shadow_stride_ + d] = to_bf16(src[d]);
        }
    }
}

std::vector<std::uint32_t> SearchIndex::excluded_rows(const IdSet& exclude) const {
    std::vector<std::uint32_t> rows;
    for (const auto& id : exclude)
        if (auto row = matrix_.find(id); row != EmbeddingMatrix::npos) rows.push_back(static_cast<std::uint32_t>(row));
    std::sort(rows.begin(), rows.end());
    return rows;
}

std::vector<Hit> SearchIndex::finish(std::vector<detail::ScoredRow>& kept) const {
    std::sort(kept.begin(), kept.end(), ahead);
    std::vector<Hit> hits;
    hits.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) hits.push_back({matrix_.ids()[kept[i].row], kept[i].score, i + 1});
    return hits;
}

std::vector<Hit> SearchIndex::top_k(std::span<const double> query, std::size_t k, const IdSet& exclude) const {
    if (!shadow_.empty()) {
        if (query.size() != matrix_.dim())
            throw UsageError("query dimension " + std::to_string(query.size()) +
                             " does not match index dimension " + std::to_string(matrix_.dim()));
        if (k == 0) throw UsageError("k must be at least 1");
        const auto excluded = excluded_rows(exclude);
        return filtered_scan(query, std::min(k, matrix_.rows() - excluded.size()), excluded);
    }
    return top_k_full_scan(query, k, exclude);
}

std::vector<Hit> SearchIndex::top_k_full_scan(std::span<const double> query, std::size_t k,
                                              const IdSet& exclude) const {
    if (query.size() != matrix_.dim())
        throw UsageError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                         std::to_string(matrix_.dim()));
    if (k == 0) throw UsageError("k must be at least 1");
    const auto excluded = excluded_rows(exclude);
    const std::size_t want = std::min(k, matrix_.rows() - excluded.size());

    // Min-heap on "ahead": heap.front() is the weakest kept candidate.
    std::vector<Candidate> heap;
    heap.reserve(want + 1);
    const std::size_t rows = matrix_.rows();
    const float* base = matrix_.values().data();
    const std::size_t dim = matrix_.dim();
    for (std::size_t r = 0; r < rows && want > 0; ++r) {
        Candidate c{score_row({base + r * dim, dim}, query), id_order_[r], static_cast<std::uint32_t>(r)};
        if (heap.size() == want && !ahead(c, heap.front())) continue;
        if (!excluded.empty() && std::binary_search(excluded.begin(), excluded.end(), c.row)) continue;
        if (heap.size() == want) {
            std::pop_heap(heap.begin(), heap.end(), ahead);
            heap.back() = c;
        } else {
            heap.push_back(c);
        }
        std::push_heap(heap.begin(), heap.end(), ahead);
    }
    return finish(heap);
}

std::vector<Hit> SearchIndex::filtered_scan(std::span<const double> query, std::size_t want,
                                            const std::vector<std::uint32_t>& excluded) const {
    if (want == 0) return {};
    const std::size_t rows = matrix_.rows();
    const std::size_t dim = matrix_.dim();
    std::vector<float> q(shadow_stride_, 0.0f);
    double qnorm2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        q[d] = static_cast<float>(query[d]);
        qnorm2 += query[d] * query[d];
    }

    std::vector<float> approx(rows);
    for (std::size_t r = 0; r < rows; ++r) approx[r] = shadow_dot(&shadow_[r * shadow_stride_], q.data(), shadow_stride_);
    for (auto r : excluded) approx[r] = -std::numeric_limits<float>::infinity();

    // Every true top-`want` row has approx >= (want-th largest approx) - 2 * bound.
    std::vector<float> sorted = approx;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(want - 1), sorted.end(),
                     std::greater<>());
    const double threshold = static_cast<double>(sorted[want - 1]) - 2.0 * shadow_error_bound(std::sqrt(qnorm2), dim);

    std::vector<Candidate> kept;
    const float* base = matrix_.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        if (static_cast<double>(approx[r]) < threshold) continue;
        if (std::binary_search(excluded.begin(), excluded.end(), static_cast<std::uint32_t>(r))) continue;
        kept.push_back({score_row({base + r * dim, dim}, query), id_order_[r], static_cast<std::uint32_t>(r)});
    }
    std::partial_sort(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(std::min(want, kept.size())),
                      kept.end(), ahead);
    kept.resize(std::min(want, kept.size()));
    return finish(kept);
}

std::vector<Hit> SearchIndex::top_k(std::span<const float> query, std::size_t k, const IdSet& exclude) const {
    const auto q = to_double(query);
    return top_k(std::span<const double>(q), k, exclude);
}

Hit SearchIndex::max_similarity(std::span<const double> query, const IdSet& exclude) const {
    auto hits = top_k(query, 1, exclude);
    if (hits.empty()) throw DataError("every document is excluded");
    return hits.front();
}

std::vector<std::vector<Hit>> SearchIndex::top_k_batch(const EmbeddingMatrix& queries, std::size_t k,
                                                       unsigned threads) const {
    std::vector<std::vector<Hit>> results(queries.rows());
    parallel_for(queries.rows(), threads, [&](std::size_t i) { results[i] = top_k(queries.row(i), k); });
    return results;
}

}  // namespace cpret
