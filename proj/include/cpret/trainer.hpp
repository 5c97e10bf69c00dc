#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpret/corpus.hpp"
#include "cpret/embedder.hpp"
#include "cpret/losses.hpp"
#include "cpret/optimizer.hpp"

namespace cpret {

struct TrainConfig {
    LossConfig loss;
    std::size_t batch_size = 64;
    std::size_t group_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    MaskingPolicy masking = MaskingPolicy::none();
    OptimizerKind optimizer = OptimizerKind::adamw;
    /// Fraction of examples held out for model selection.
    double validation_fraction = 0.05;
    /// Shape of a freshly initialized model (ignored when an initial model is passed).
    std::uint32_t vocab_dim = EncoderModel::kDefaultVocabDim;
    std::uint32_t embed_dim = EncoderModel::kDefaultEmbedDim;
    unsigned threads = 1;

    /// Throws UsageError on inconsistent settings (batch < 2 for contrastive
    /// objectives, group size != 1 for infonce, epochs == 0, ...).
    void validate() const;
};

struct TrainExampleGroup {
    std::string query_text;
    std::vector<std::string> positives;

    bool operator==(const TrainExampleGroup&) const = default;
};

struct TripletExample {
    std::string anchor;
    std::string positive;
    std::string negative;

    bool operator==(const TripletExample&) const = default;
};

/// Draws exactly m positives per example: without replacement when at least
/// m exist, otherwise all of them padded by uniform draws with replacement.
/// Throws DataError on an example with no positives.
std::vector<TrainExampleGroup> sample_groups(std::span<const TrainExampleGroup> dataset, std::size_t m,
                                             std::uint64_t seed);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    /// Mean cosine between validation queries and their positives.
    double val_positive_cosine = 0.0;
};

struct TrainResult {
    EncoderModel model;  // lowest validation loss; earlier epoch wins ties
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    std::size_t train_count = 0;
    std::size_t validation_count = 0;
};

/// `epoch,train_loss,val_loss` with a header row.
void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);
void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

/// One group per problem that has at least one solution, in corpus order.
std::vector<TrainExampleGroup> stage1_groups(const Corpus& corpus, std::span<const Solution> solutions);

/// Problem-to-code training. Masking is applied to query statements only.
/// For the triplet objective each example's negative is the next example's
/// positive within the batch. Throws DataError on an empty dataset and
/// NumericError on a non-finite loss or parameter.
TrainResult train_stage1(const EncoderModel& init, std::span<const TrainExampleGroup> groups, const TrainConfig& cfg);
TrainResult train_stage1(const Corpus& corpus, std::span<const Solution> solutions, const TrainConfig& cfg);

/// Caps each task at `per_task_cap` triplets (seeded subsample) and
/// interleaves the tasks round-robin in key order.
std::vector<TripletExample> balance_tasks(const std::map<std::string, std::vector<TripletExample>>& tasks,
                                          std::size_t per_task_cap, std::uint64_t seed);

/// Triplet fine-tuning on an already mixed triplet list. cfg.loss.objective is
/// forced to triplet. Throws DataError on an empty triplet list.
TrainResult train_stage2(const EncoderModel& model, std::span<const TripletExample> triplets, const TrainConfig& cfg);

}  // namespace cpret
