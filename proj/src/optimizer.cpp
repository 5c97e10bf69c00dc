#include "cpret/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "cpret/error.hpp"
#include "cpret/parallel.hpp"

namespace cpret {

RowGradient::RowGradient(std::size_t rows, std::size_t width) : width_(width), slot_of_(rows, -1) {
    if (width == 0) throw UsageError("gradient width must be positive");
}

std::span<double> RowGradient::row(std::uint32_t r) {
    if (r >= slot_of_.size()) throw UsageError("gradient row out of range");
    if (slot_of_[r] < 0) {
        slot_of_[r] = static_cast<std::int32_t>(touched_.size());
        touched_.push_back(r);
        values_.resize(values_.size() + width_, 0.0);
    }
    return {values_.data() + static_cast<std::size_t>(slot_of_[r]) * width_, width_};
}

const double* RowGradient::find(std::uint32_t r) const {
    if (r >= slot_of_.size() || slot_of_[r] < 0) return nullptr;
    return values_.data() + static_cast<std::size_t>(slot_of_[r]) * width_;
}

void RowGradient::clear() {
    for (auto r : touched_) slot_of_[r] = -1;
    touched_.clear();
    values_.clear();
}

Optimizer::Optimizer(OptimizerConfig cfg, std::size_t param_count) : cfg_(cfg) {
    if (!(cfg_.learning_rate >= 0.0) || !std::isfinite(cfg_.learning_rate))
        throw UsageError("learning rate must be finite and >= 0");
    if (!(cfg_.weight_decay >= 0.0)) throw UsageError("weight decay must be >= 0");
    if (cfg_.kind == OptimizerKind::adamw) {
        m_.assign(param_count, 0.0f);
        v_.assign(param_count, 0.0f);
    }
}

void Optimizer::step(std::span<float> params, const RowGradient& grad, unsigned threads) {
    const std::size_t width = grad.width();
    if (params.size() != grad.rows() * width) throw UsageError("gradient shape does not match parameters");
    ++t_;
    const double lr = cfg_.learning_rate;
    if (lr == 0.0) return;

    if (cfg_.kind == OptimizerKind::sgd) {
        for (auto r : grad.touched()) {
            const double* g = grad.find(r);
            float* p = params.data() + std::size_t{r} * width;
            for (std::size_t c = 0; c < width; ++c) p[c] = static_cast<float>(p[c] - lr * g[c]);
        }
        return;
    }

    if (m_.size() != params.size()) throw UsageError("optimizer was built for a different parameter count");
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double decay = lr * cfg_.weight_decay;
    const std::size_t rows = grad.rows();
    constexpr std::size_t kRowsPerTask = 4096;
    const std::size_t tasks = (rows + kRowsPerTask - 1) / kRowsPerTask;
    parallel_for(tasks, threads, [&](std::size_t task) {
        const std::size_t end = std::min(rows, (task + 1) * kRowsPerTask);
        for (std::size_t r = task * kRowsPerTask; r < end; ++r) {
            const double* g = grad.find(static_cast<std::uint32_t>(r));
            const std::size_t base = r * width;
            for (std::size_t c = 0; c < width; ++c) {
                const std::size_t i = base + c;
                const double gi = g != nullptr ? g[c] : 0.0;
                const double m = b1 * m_[i] + (1.0 - b1) * gi;
                const double v = b2 * v_[i] + (1.0 - b2) * gi * gi;
                m_[i] = static_cast<float>(m);
                v_[i] = static_cast<float>(v);
                const double p = params[i];
                params[i] = static_cast<float>(p - lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps) - decay * p);
            }
        }
    });
}

}  // namespace cpret
