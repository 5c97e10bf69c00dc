#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cpret {

/// N queries with m positives each, stored as dense f64 rows.
///
/// Similarities are plain dot products of the stored rows; callers pass
/// unit-norm vectors so that dot product equals cosine. Gradients are taken
/// with respect to the rows as free variables.
class EncodedBatch {
public:
    EncodedBatch() = default;
    EncodedBatch(std::size_t n, std::size_t m, std::size_t dim);

    std::size_t size() const { return n_; }
    std::size_t group_size() const { return m_; }
    std::size_t dim() const { return dim_; }

    std::span<double> query(std::size_t i) { return {queries_.data() + i * dim_, dim_}; }
    std::span<const double> query(std::size_t i) const { return {queries_.data() + i * dim_, dim_}; }
    std::span<double> positive(std::size_t i, std::size_t k) { return {groups_.data() + (i * m_ + k) * dim_, dim_}; }
    std::span<const double> positive(std::size_t i, std::size_t k) const {
        return {groups_.data() + (i * m_ + k) * dim_, dim_};
    }

    std::vector<double>& queries() { return queries_; }
    const std::vector<double>& queries() const { return queries_; }
    std::vector<double>& groups() { return groups_; }
    const std::vector<double>& groups() const { return groups_; }

    /// True when every row has norm 1 +- tol.
    bool unit_norm(double tol = 1e-6) const;

private:
    std::size_t n_ = 0;
    std::size_t m_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> queries_;  // n x dim
    std::vector<double> groups_;   // n x m x dim
};

enum class Objective { infonce, multipos, group_infonce, triplet };

struct LossConfig {
    Objective objective = Objective::group_infonce;
    double tau = 0.07;
    double margin = 0.2;
    bool variance_penalty = true;
    /// Contrast query i against the other queries x_j (on) or against every
    /// member of the other positive groups (off) in the multipos and group
    /// denominators.
    bool cross_query_negatives = true;

    /// Throws UsageError when tau <= 0 or margin < 0.
    void validate() const;
};

/// Scalar batch loss plus gradients shaped like the batch.
struct LossOutput {
    double value = 0.0;
    std::vector<double> grad_queries;  // n x dim
    std::vector<double> grad_groups;   // n x m x dim
    /// Per-example terms before the batch mean (value == mean of these).
    std::vector<double> per_example;

    bool all_finite() const;
};

/// Mean over i of -log softmax_j(sim(x_i, x_j+)/tau)[i]. Requires m == 1, N >= 2.
LossOutput infonce(const EncodedBatch& batch, const LossConfig& cfg);

/// Mean over i of -log( sum_k exp(s_ik+/tau) / sum_{j!=i} exp(sim(x_i, x_j)/tau) ).
/// The positives are absent from the denominator, so values can be negative.
LossOutput multipos_infonce(const EncodedBatch& batch, const LossConfig& cfg);

/// Group-InfoNCE: the whole positive group enters through its mean similarity,
/// contrasted against other queries and other groups, plus the population
/// variance of the member similarities scaled by 1/tau^2 (per example, inside
/// the batch mean).
LossOutput group_infonce(const EncodedBatch& batch, const LossConfig& cfg);

/// Mean member cosine. Throws UsageError on an empty group.
double group_similarity(std::span<const double> query, std::span<const std::span<const double>> group);

/// max(0, sim(a, n) - sim(a, p) + margin). Gradient in grad_queries (anchor)
/// and grad_groups (positive row, then negative row). The hinge counts as
/// inactive at exactly zero.
LossOutput triplet_margin(std::span<const double> anchor, std::span<const double> positive,
                          std::span<const double> negative, const LossConfig& cfg);

/// Mean triplet loss over a batch laid out as queries = anchors and groups of
/// size 2 = (positive, negative).
LossOutput triplet_batch(const EncodedBatch& triplets, const LossConfig& cfg);

/// Dispatches on cfg.objective. For `triplet` the batch must have m == 2.
LossOutput compute_loss(const EncodedBatch& batch, const LossConfig& cfg);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace cpret
