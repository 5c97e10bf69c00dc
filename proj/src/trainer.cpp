#include "cpret/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>

#include "cpret/error.hpp"
#include "cpret/parallel.hpp"
#include "cpret/rng.hpp"

namespace cpret {

namespace {

constexpr std::uint64_t kValidationStream = 0x56414C49ULL;
constexpr std::uint64_t kShuffleStream = 0x5348554600000000ULL;
constexpr std::uint64_t kBatchStream = 0x4241544300000000ULL;

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

bool contrastive(Objective o) { return o != Objective::triplet; }

// Distinct texts plus the batch layout that refers to them. Several rows may
// share a slot (padding duplicates, in-batch negatives); their gradients add.
struct BatchPlan {
    std::vector<std::string> texts;
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<std::size_t> query_slot;  // n
    std::vector<std::size_t> group_slot;  // n * m
};

struct Encoded {
    std::vector<HashedFeature> features;
    std::vector<double> unit;
    double norm = 0.0;
};

Encoded encode_slot(const EncoderModel& model, const std::string& text) {
    Encoded e;
    e.features = model.features(text);
    e.unit = model.project(e.features);
    double sq = 0.0;
    for (double v : e.unit) sq += v * v;
    e.norm = std::sqrt(sq);
    if (!(e.norm > 0.0) || !std::isfinite(e.norm)) throw NumericError("degenerate embedding during training");
    for (double& v : e.unit) v /= e.norm;
    return e;
}

struct BatchEval {
    double loss = 0.0;
    double positive_cosine = 0.0;  // summed over rows
};

// Forward pass, and when `grad` is given, backpropagation into the projection.
BatchEval evaluate(const EncoderModel& model, const BatchPlan& plan, const LossConfig& loss_cfg, unsigned threads,
                   RowGradient* grad) {
    std::vector<Encoded> enc(plan.texts.size());
    parallel_for(enc.size(), threads, [&](std::size_t s) { enc[s] = encode_slot(model, plan.texts[s]); });

    const std::size_t dim = model.embed_dim();
    EncodedBatch batch(plan.n, plan.m, dim);
    for (std::size_t i = 0; i < plan.n; ++i) {
        std::copy(enc[plan.query_slot[i]].unit.begin(), enc[plan.query_slot[i]].unit.end(), batch.query(i).begin());
        for (std::size_t k = 0; k < plan.m; ++k) {
            const auto& u = enc[plan.group_slot[i * plan.m + k]].unit;
            std::copy(u.begin(), u.end(), batch.positive(i, k).begin());
        }
    }
    LossOutput out = compute_loss(batch, loss_cfg);
    if (!std::isfinite(out.value)) throw NumericError("non-finite loss");

    BatchEval result;
    result.loss = out.value;
    const std::size_t counted_members = loss_cfg.objective == Objective::triplet ? 1 : plan.m;
    for (std::size_t i = 0; i < plan.n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < counted_members; ++k) s += dot(batch.query(i), batch.positive(i, k));
        result.positive_cosine += s / static_cast<double>(counted_members);
    }
    if (grad == nullptr) return result;

    // Gradient w.r.t. each slot's unit vector.
    std::vector<double> slot_grad(plan.texts.size() * dim, 0.0);
    auto add = [&](std::size_t slot, const double* g) {
        double* dst = slot_grad.data() + slot * dim;
        for (std::size_t d = 0; d < dim; ++d) dst[d] += g[d];
    };
    for (std::size_t i = 0; i < plan.n; ++i) add(plan.query_slot[i], out.grad_queries.data() + i * dim);
    for (std::size_t r = 0; r < plan.n * plan.m; ++r) add(plan.group_slot[r], out.grad_groups.data() + r * dim);

    std::vector<double> dy(dim);
    for (std::size_t s = 0; s < enc.size(); ++s) {
        const double* g = slot_grad.data() + s * dim;
        const auto& e = enc[s].unit;
        double eg = 0.0;
        for (std::size_t d = 0; d < dim; ++d) eg += e[d] * g[d];
        bool any = false;
        for (std::size_t d = 0; d < dim; ++d) {
            dy[d] = (g[d] - e[d] * eg) / enc[s].norm;
            any = any || dy[d] != 0.0;
        }
        if (!any) continue;
        for (const auto& f : enc[s].features) {
            auto row = grad->row(f.bucket);
            for (std::size_t d = 0; d < dim; ++d) row[d] += f.weight * dy[d];
        }
    }
    return result;
}

// Contiguous chunks of `batch` indices; a trailing chunk smaller than
// `min_batch` is merged into the previous one.
std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t batch,
                                            std::size_t min_batch) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += batch)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch)));
    if (out.size() > 1 && out.back().size() < min_batch) {
        auto tail = std::move(out.back());
        out.pop_back();
        out.back().insert(out.back().end(), tail.begin(), tail.end());
    }
    return out;
}

using PlanFn = std::function<BatchPlan(const std::vector<std::size_t>& idx, std::uint64_t seed, std::size_t epoch)>;

TrainResult train_loop(const EncoderModel& init, std::size_t count, std::size_t min_batch, const TrainConfig& cfg,
                       const PlanFn& make_plan) {
    TrainResult result;
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = make_rng(cfg.seed, kValidationStream);
    shuffle(order, split_rng);

    std::size_t val = static_cast<std::size_t>(std::ceil(cfg.validation_fraction * static_cast<double>(count) - 1e-9));
    if (count < 2 * min_batch || cfg.validation_fraction <= 0.0) {
        val = 0;
    } else {
        val = std::clamp(val, min_batch, count - min_batch);
    }
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val), order.end());
    result.train_count = train_idx.size();
    result.validation_count = val_idx.size();
    if (train_idx.size() < min_batch) throw DataError("not enough training examples for one batch");

    std::vector<BatchPlan> val_plans;
    for (const auto& c : chunk(val_idx, cfg.batch_size, min_batch))
        val_plans.push_back(make_plan(c, derive(cfg.seed, kValidationStream + 1), 0));

    EncoderModel model = init;
    Optimizer opt(OptimizerConfig{cfg.optimizer, cfg.learning_rate, cfg.weight_decay}, model.projection().size());
    RowGradient grad(model.vocab_dim(), model.embed_dim());
    double best = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng = make_rng(cfg.seed, kShuffleStream + epoch);
        shuffle(train_idx, rng);
        double train_sum = 0.0;
        std::size_t b = 0;
        for (const auto& c : chunk(train_idx, cfg.batch_size, min_batch)) {
            BatchPlan plan = make_plan(c, derive(cfg.seed, kBatchStream + (epoch << 20) + b++), epoch);
            grad.clear();
            BatchEval ev = evaluate(model, plan, cfg.loss, cfg.threads, &grad);
            train_sum += ev.loss * static_cast<double>(c.size());
            opt.step(model.projection(), grad, cfg.threads);
        }
        if (!model.all_finite()) throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = train_sum / static_cast<double>(train_idx.size());
        if (val_plans.empty()) {
            log.val_loss = log.train_loss;
            log.val_positive_cosine = std::numeric_limits<double>::quiet_NaN();
        } else {
            double loss = 0.0, cosine = 0.0;
            for (const auto& plan : val_plans) {
                BatchEval ev = evaluate(model, plan, cfg.loss, cfg.threads, nullptr);
                loss += ev.loss * static_cast<double>(plan.n);
                cosine += ev.positive_cosine;
            }
            log.val_loss = loss / static_cast<double>(val_idx.size());
            log.val_positive_cosine = cosine / static_cast<double>(val_idx.size());
        }
        result.log.push_back(log);
        if (log.val_loss < best) {
            best = log.val_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    return result;
}

}  // namespace

void TrainConfig::validate() const {
    loss.validate();
    if (epochs == 0) throw UsageError("epochs must be positive");
    if (batch_size == 0) throw UsageError("batch size must be positive");
    if (contrastive(loss.objective) && batch_size < 2) throw UsageError("contrastive objectives need batch size >= 2");
    if (group_size == 0) throw UsageError("group size must be positive");
    if ((loss.objective == Objective::infonce || loss.objective == Objective::triplet) && group_size != 1)
        throw UsageError("infonce and triplet objectives use group size 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw UsageError("validation fraction must lie in [0, 1)");
    masking.validate();
}

std::vector<TrainExampleGroup> sample_groups(std::span<const TrainExampleGroup> dataset, std::size_t m,
                                             std::uint64_t seed) {
    if (m == 0) throw UsageError("group size must be positive");
    Rng rng = make_rng(seed, 0x47525053ULL);
    std::vector<TrainExampleGroup> out;
    out.reserve(dataset.size());
    for (const auto& ex : dataset) {
        const std::size_t have = ex.positives.size();
        if (have == 0) throw DataError("example without positives: " + ex.query_text.substr(0, 40));
        TrainExampleGroup g{ex.query_text, {}};
        g.positives.reserve(m);
        if (have >= m) {
            std::vector<std::size_t> idx(have);
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t k = 0; k < m; ++k) {
                std::swap(idx[k], idx[k + uniform_index(rng, have - k)]);
                g.positives.push_back(ex.positives[idx[k]]);
            }
        } else {
            g.positives = ex.positives;
            while (g.positives.size() < m) g.positives.push_back(ex.positives[uniform_index(rng, have)]);
        }
        out.push_back(std::move(g));
    }
    return out;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
    out << "epoch,train_loss,val_loss\n";
    char line[96];
    for (const auto& e : log) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss);
        out << line;
    }
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_training_log(out, log);
}

std::vector<TrainExampleGroup> stage1_groups(const Corpus& corpus, std::span<const Solution> solutions) {
    std::unordered_map<std::string, std::vector<std::string>> by_problem;
    for (const auto& s : solutions) by_problem[s.problem_id].push_back(s.code);
    std::vector<TrainExampleGroup> out;
    for (const auto& p : corpus.problems()) {
        auto it = by_problem.find(p.id);
        if (it == by_problem.end()) continue;
        out.push_back({p.statement, it->second});
    }
    return out;
}

TrainResult train_stage1(const EncoderModel& init, std::span<const TrainExampleGroup> groups, const TrainConfig& cfg) {
    cfg.validate();
    if (groups.empty()) throw DataError("empty training dataset");
    const bool triplet = cfg.loss.objective == Objective::triplet;
    const std::size_t min_batch = 2;

    PlanFn plan = [&](const std::vector<std::size_t>& idx, std::uint64_t seed, std::size_t epoch) {
        std::vector<TrainExampleGroup> picked;
        picked.reserve(idx.size());
        for (auto i : idx) picked.push_back(groups[i]);
        auto sampled = sample_groups(picked, cfg.group_size, seed);

        BatchPlan p;
        p.n = idx.size();
        p.m = triplet ? 2 : cfg.group_size;
        for (std::size_t r = 0; r < p.n; ++r) {
            std::string query = sampled[r].query_text;
            if (epoch > 0) {
                std::string masked = apply_masking(cfg.masking, query, (std::uint64_t{epoch} << 32) ^ idx[r]);
                if (masked.find_first_not_of(" \t\r\n") != std::string::npos) query = std::move(masked);
            }
            p.query_slot.push_back(p.texts.size());
            p.texts.push_back(std::move(query));
        }
        const std::size_t first_positive = p.texts.size();
        for (std::size_t r = 0; r < p.n; ++r)
            for (auto& code : sampled[r].positives) p.texts.push_back(std::move(code));
        for (std::size_t r = 0; r < p.n; ++r) {
            if (triplet) {
                p.group_slot.push_back(first_positive + r);
                p.group_slot.push_back(first_positive + (r + 1) % p.n);
            } else {
                for (std::size_t k = 0; k < cfg.group_size; ++k)
                    p.group_slot.push_back(first_positive + r * cfg.group_size + k);
            }
        }
        return p;
    };
    return train_loop(init, groups.size(), min_batch, cfg, plan);
}

TrainResult train_stage1(const Corpus& corpus, std::span<const Solution> solutions, const TrainConfig& cfg) {
    cfg.validate();
    auto groups = stage1_groups(corpus, solutions);
    if (groups.empty()) throw DataError("no problem has an accepted solution");
    return train_stage1(EncoderModel::random(cfg.vocab_dim, cfg.embed_dim, cfg.seed), groups, cfg);
}

std::vector<TripletExample> balance_tasks(const std::map<std::string, std::vector<TripletExample>>& tasks,
                                          std::size_t per_task_cap, std::uint64_t seed) {
    std::vector<std::vector<TripletExample>> kept;
    for (const auto& [name, list] : tasks) {
        std::vector<std::size_t> idx(list.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (list.size() > per_task_cap) {
            Rng rng = make_rng(seed, fnv1a64(name));
            shuffle(idx, rng);
            idx.resize(per_task_cap);
            std::sort(idx.begin(), idx.end());
        }
        std::vector<TripletExample> sel;
        for (auto i : idx) sel.push_back(list[i]);
        kept.push_back(std::move(sel));
    }
    std::vector<TripletExample> mixed;
    for (std::size_t r = 0;; ++r) {
        bool any = false;
        for (const auto& list : kept) {
            if (r < list.size()) {
                mixed.push_back(list[r]);
                any = true;
            }
        }
        if (!any) break;
    }
    return mixed;
}

TrainResult train_stage2(const EncoderModel& model, std::span<const TripletExample> triplets, const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.loss.objective = Objective::triplet;
    c.group_size = 1;
    c.masking = MaskingPolicy::none();
    c.validate();
    if (triplets.empty()) throw DataError("empty triplet set");
    for (const auto& t : triplets)
        if (t.anchor.empty() || t.positive.empty() || t.negative.empty()) throw DataError("triplet with empty text");

    PlanFn plan = [&](const std::vector<std::size_t>& idx, std::uint64_t, std::size_t) {
        BatchPlan p;
        p.n = idx.size();
        p.m = 2;
        for (auto i : idx) {
            const std::size_t base = p.texts.size();
            p.texts.push_back(triplets[i].anchor);
            p.texts.push_back(triplets[i].positive);
            p.texts.push_back(triplets[i].negative);
            p.query_slot.push_back(base);
            p.group_slot.push_back(base + 1);
            p.group_slot.push_back(base + 2);
        }
        return p;
    };
    return train_loop(model, triplets.size(), 1, c, plan);
}

}  // namespace cpret
