#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cpret {

/// Gradient of a row-major parameter matrix where only a few rows are non-zero.
/// Rows get a slot on first touch; values are summed in call order, so the
/// result depends only on the order of add() calls.
class RowGradient {
public:
    RowGradient(std::size_t rows, std::size_t width);

    std::size_t width() const { return width_; }
    std::size_t rows() const { return slot_of_.size(); }

    /// Accumulator for `row`, zero-initialized on first touch.
    std::span<double> row(std::uint32_t row);
    /// Nullptr when the row has no gradient.
    const double* find(std::uint32_t row) const;
    const std::vector<std::uint32_t>& touched() const { return touched_; }

    void clear();

private:
    std::size_t width_;
    std::vector<std::int32_t> slot_of_;
    std::vector<std::uint32_t> touched_;
    std::vector<double> values_;
};

enum class OptimizerKind { sgd, adamw };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adamw;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;  // decoupled; adamw only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// sgd:   p -= lr * g                      (rows without gradient untouched)
/// adamw: m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///        p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps) + lr * wd * p
/// The adamw update is dense: every parameter decays and carries momentum.
/// Moments are stored as f32, arithmetic is f64.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::size_t param_count);

    void step(std::span<float> params, const RowGradient& grad, unsigned threads = 1);
    std::uint64_t steps() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<float> m_;
    std::vector<float> v_;
};

}  // namespace cpret
