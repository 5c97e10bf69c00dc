#include "cpret/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpret/error.hpp"

namespace cpret {

namespace {

// Returns log(sum exp(x)) and overwrites x with softmax(x).
double log_sum_exp_softmax(std::vector<double>& x) {
    const double hi = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double& v : x) {
        v = std::exp(v - hi);
        sum += v;
    }
    for (double& v : x) v /= sum;
    return hi + std::log(sum);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t d = 0; d < x.size(); ++d) y[d] += alpha * x[d];
}

// Accumulates d(loss)/d(dot(q, p)) = coeff into both operands' gradients.
struct GradSink {
    LossOutput& out;
    std::size_t dim;

    std::span<double> query(std::size_t i) { return {out.grad_queries.data() + i * dim, dim}; }
    std::span<double> group(std::size_t i, std::size_t k, std::size_t m) {
        return {out.grad_groups.data() + (i * m + k) * dim, dim};
    }
};

LossOutput make_output(const EncodedBatch& b) {
    LossOutput out;
    out.grad_queries.assign(b.queries().size(), 0.0);
    out.grad_groups.assign(b.groups().size(), 0.0);
    out.per_example.assign(b.size(), 0.0);
    return out;
}

void finish_mean(LossOutput& out) {
    double sum = 0.0;
    for (double v : out.per_example) sum += v;
    out.value = sum / static_cast<double>(out.per_example.size());
}

void require_batch(const EncodedBatch& b, const char* name) {
    if (b.size() < 2) throw UsageError(std::string(name) + " needs a batch of at least 2 queries");
    if (b.group_size() < 1) throw UsageError(std::string(name) + " needs at least one positive per query");
}

// Population variance, exactly zero when all values are equal.
double population_variance(std::span<const double> v, double& mean) {
    double sum = 0.0;
    for (double x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size());
}

}  // namespace

EncodedBatch::EncodedBatch(std::size_t n, std::size_t m, std::size_t dim)
    : n_(n), m_(m), dim_(dim), queries_(n * dim, 0.0), groups_(n * m * dim, 0.0) {}

bool EncodedBatch::unit_norm(double tol) const {
    auto ok = [&](std::span<const double> v) { return std::abs(std::sqrt(dot(v, v)) - 1.0) <= tol; };
    for (std::size_t i = 0; i < n_; ++i) {
        if (!ok(query(i))) return false;
        for (std::size_t k = 0; k < m_; ++k)
            if (!ok(positive(i, k))) return false;
    }
    return true;
}

void LossConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("tau must be positive");
    if (!(margin >= 0.0) || !std::isfinite(margin)) throw UsageError("margin must be non-negative");
}

bool LossOutput::all_finite() const {
    auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return std::isfinite(value) && finite(grad_queries) && finite(grad_groups);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
    return s;
}

LossOutput infonce(const EncodedBatch& b, const LossConfig& cfg) {
    cfg.validate();
    require_batch(b, "infonce");
    if (b.group_size() != 1) throw UsageError("infonce requires exactly one positive per query");
    const std::size_t n = b.size();
    LossOutput out = make_output(b);
    GradSink sink{out, b.dim()};
    const double scale = 1.0 / (static_cast<double>(n) * cfg.tau);

    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) w[j] = dot(b.query(i), b.positive(j, 0)) / cfg.tau;
        const double own = w[i];
        out.per_example[i] = log_sum_exp_softmax(w) - own;
        for (std::size_t j = 0; j < n; ++j) {
            const double coeff = scale * (w[j] - (i == j ? 1.0 : 0.0));
            axpy(coeff, b.positive(j, 0), sink.query(i));
            axpy(coeff, b.query(i), sink.group(j, 0, 1));
        }
    }
    finish_mean(out);
    return out;
}

LossOutput multipos_infonce(const EncodedBatch& b, const LossConfig& cfg) {
    cfg.validate();
    require_batch(b, "multipos_infonce");
    const std::size_t n = b.size();
    const std::size_t m = b.group_size();
    LossOutput out = make_output(b);
    GradSink sink{out, b.dim()};
    const double scale = 1.0 / (static_cast<double>(n) * cfg.tau);

    std::vector<double> pos(m);
    std::vector<double> neg;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < m; ++k) pos[k] = dot(b.query(i), b.positive(i, k)) / cfg.tau;
        neg.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (cfg.cross_query_negatives) {
                neg.push_back(dot(b.query(i), b.query(j)) / cfg.tau);
            } else {
                for (std::size_t k = 0; k < m; ++k) neg.push_back(dot(b.query(i), b.positive(j, k)) / cfg.tau);
            }
        }
        out.per_example[i] = log_sum_exp_softmax(neg) - log_sum_exp_softmax(pos);

        for (std::size_t k = 0; k < m; ++k) {
            axpy(-scale * pos[k], b.positive(i, k), sink.query(i));
            axpy(-scale * pos[k], b.query(i), sink.group(i, k, m));
        }
        std::size_t t = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (cfg.cross_query_negatives) {
                axpy(scale * neg[t], b.query(j), sink.query(i));
                axpy(scale * neg[t], b.query(i), sink.query(j));
                ++t;
            } else {
                for (std::size_t k = 0; k < m; ++k, ++t) {
                    axpy(scale * neg[t], b.positive(j, k), sink.query(i));
                    axpy(scale * neg[t], b.query(i), sink.group(j, k, m));
                }
            }
        }
    }
    finish_mean(out);
    return out;
}

LossOutput group_infonce(const EncodedBatch& b, const LossConfig& cfg) {
    cfg.validate();
    require_batch(b, "group_infonce");
    const std::size_t n = b.size();
    const std::size_t m = b.group_size();
    const double md = static_cast<double>(m);
    const double tau = cfg.tau;
    LossOutput out = make_output(b);
    GradSink sink{out, b.dim()};
    const double scale = 1.0 / static_cast<double>(n);

    // sims[j * m + k] = dot(x_i, x_j^{k+}) for the current i.
    std::vector<double> sims(n * m);
    std::vector<double> logits;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < m; ++k) sims[j * m + k] = dot(b.query(i), b.positive(j, k));
        auto group_mean = [&](std::size_t j) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += sims[j * m + k];
            return s / md;
        };

        // logits = [own group, then per j != i: query term(s), group term]
        logits.clear();
        logits.push_back(group_mean(i) / tau);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (cfg.cross_query_negatives) {
                logits.push_back(dot(b.query(i), b.query(j)) / tau);
            } else {
                for (std::size_t k = 0; k < m; ++k) logits.push_back(sims[j * m + k] / tau);
            }
            logits.push_back(group_mean(j) / tau);
        }
        const double own = logits.front();
        const double contrastive = log_sum_exp_softmax(logits) - own;

        double mean = 0.0;
        const double var =
            cfg.variance_penalty ? population_variance(std::span<const double>(sims).subspan(i * m, m), mean) : 0.0;
        out.per_example[i] = contrastive + var / (tau * tau);

        // Own group: d/ds_ik of the -log term and of the penalty.
        for (std::size_t k = 0; k < m; ++k) {
            double coeff = (logits.front() - 1.0) / (md * tau);
            if (cfg.variance_penalty) coeff += 2.0 * (sims[i * m + k] - mean) / (md * tau * tau);
            axpy(scale * coeff, b.positive(i, k), sink.query(i));
            axpy(scale * coeff, b.query(i), sink.group(i, k, m));
        }
        std::size_t t = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (cfg.cross_query_negatives) {
                const double coeff = scale * logits[t++] / tau;
                axpy(coeff, b.query(j), sink.query(i));
                axpy(coeff, b.query(i), sink.query(j));
            } else {
                for (std::size_t k = 0; k < m; ++k) {
                    const double coeff = scale * logits[t++] / tau;
                    axpy(coeff, b.positive(j, k), sink.query(i));
                    axpy(coeff, b.query(i), sink.group(j, k, m));
                }
            }
            const double coeff = scale * logits[t++] / (md * tau);
            for (std::size_t k = 0; k < m; ++k) {
                axpy(coeff, b.positive(j, k), sink.query(i));
                axpy(coeff, b.query(i), sink.group(j, k, m));
            }
        }
    }
    finish_mean(out);
    return out;
}

double group_similarity(std::span<const double> query, std::span<const std::span<const double>> group) {
    if (group.empty()) throw UsageError("group_similarity on an empty group");
    double s = 0.0;
    for (auto member : group) s += dot(query, member);
    return s / static_cast<double>(group.size());
}

LossOutput triplet_margin(std::span<const double> anchor, std::span<const double> positive,
                          std::span<const double> negative, const LossConfig& cfg) {
    cfg.validate();
    const std::size_t dim = anchor.size();
    if (positive.size() != dim || negative.size() != dim) throw UsageError("triplet dimension mismatch");
    LossOutput out;
    out.grad_queries.assign(dim, 0.0);
    out.grad_groups.assign(2 * dim, 0.0);
    const double slack = dot(anchor, negative) - dot(anchor, positive) + cfg.margin;
    out.value = slack > 0.0 ? slack : 0.0;
    out.per_example = {out.value};
    if (slack > 0.0) {
        for (std::size_t d = 0; d < dim; ++d) {
            out.grad_queries[d] = negative[d] - positive[d];
            out.grad_groups[d] = -anchor[d];
            out.grad_groups[dim + d] = anchor[d];
        }
    }
    return out;
}

LossOutput triplet_batch(const EncodedBatch& b, const LossConfig& cfg) {
    cfg.validate();
    if (b.group_size() != 2) throw UsageError("triplet batches need groups of (positive, negative)");
    if (b.size() == 0) throw UsageError("empty triplet batch");
    const std::size_t n = b.size();
    const std::size_t dim = b.dim();
    LossOutput out = make_output(b);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto one = triplet_margin(b.query(i), b.positive(i, 0), b.positive(i, 1), cfg);
        out.per_example[i] = one.value;
        for (std::size_t d = 0; d < dim; ++d) {
            out.grad_queries[i * dim + d] = scale * one.grad_queries[d];
            out.grad_groups[(i * 2) * dim + d] = scale * one.grad_groups[d];
            out.grad_groups[(i * 2 + 1) * dim + d] = scale * one.grad_groups[dim + d];
        }
    }
    finish_mean(out);
    return out;
}

LossOutput compute_loss(const EncodedBatch& batch, const LossConfig& cfg) {
    switch (cfg.objective) {
        case Objective::infonce: return infonce(batch, cfg);
        case Objective::multipos: return multipos_infonce(batch, cfg);
        case Objective::group_infonce: return group_infonce(batch, cfg);
        case Objective::triplet: return triplet_batch(batch, cfg);
    }
    throw UsageError("unknown objective");
}

}  // namespace cpret
