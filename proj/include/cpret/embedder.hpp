#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cpret {

/// One non-zero entry of a hashed feature vector. Signed hashing puts the sign
/// into `weight`.
struct HashedFeature {
    std::uint32_t bucket = 0;
    double weight = 0.0;
};

/// Character n-gram feature hashing followed by a linear projection and L2
/// normalization. The projection is the only trainable state.
class EncoderModel {
public:
    static constexpr std::uint32_t kDefaultVocabDim = 1u << 18;
    static constexpr std::uint32_t kDefaultEmbedDim = 128;
    static constexpr std::pair<int, int> kDefaultNgramRange{2, 4};

    EncoderModel() = default;

    /// Projection entries drawn uniformly from [-a, a] with a = sqrt(3 / embed_dim),
    /// so that a unit feature vector maps to an expected unit-norm output.
    static EncoderModel random(std::uint32_t vocab_dim, std::uint32_t embed_dim, std::uint64_t seed,
                               std::pair<int, int> ngram_range = kDefaultNgramRange);

    std::uint32_t vocab_dim() const { return vocab_dim_; }
    std::uint32_t embed_dim() const { return embed_dim_; }
    std::pair<int, int> ngram_range() const { return ngram_range_; }
    std::uint64_t seed() const { return seed_; }

    /// Row-major vocab_dim x embed_dim.
    std::span<const float> projection() const { return projection_; }
    std::span<float> projection() { return projection_; }
    std::span<const float> row(std::uint32_t bucket) const {
        return std::span<const float>(projection_).subspan(std::size_t{bucket} * embed_dim_, embed_dim_);
    }

    /// Unit-norm sparse feature vector, sorted by bucket. Throws UsageError on
    /// empty text.
    std::vector<HashedFeature> features(std::string_view text) const;

    /// Un-normalized projection of a feature vector.
    std::vector<double> project(std::span<const HashedFeature> features) const;

    /// Unit-norm embedding. Deterministic; safe to call concurrently.
    std::vector<double> encode(std::string_view text) const;

    bool all_finite() const;

    /// "CPMD" checkpoint: magic, u32 version, u32 vocab_dim, u32 embed_dim,
    /// u64 seed, then the projection as little-endian f32.
    void save(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;
    static EncoderModel load(std::istream& in);
    static EncoderModel load(const std::filesystem::path& path);

    bool operator==(const EncoderModel&) const = default;

private:
    std::uint32_t vocab_dim_ = 0;
    std::uint32_t embed_dim_ = 0;
    std::pair<int, int> ngram_range_ = kDefaultNgramRange;
    std::uint64_t seed_ = 0;
    std::vector<float> projection_;
};

/// Splits UTF-8 text into code points (invalid bytes become single units).
std::vector<std::string_view> utf8_units(std::string_view text);

/// Row-major matrix of unit-norm f32 embeddings keyed by unique ids.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    /// Rows are normalized on construction; a zero or non-finite row throws
    /// FormatError("non-normalizable row ...").
    EmbeddingMatrix(std::vector<std::string> ids, std::uint32_t dim, std::vector<float> values);

    const std::vector<std::string>& ids() const { return ids_; }
    std::uint32_t dim() const { return dim_; }
    std::size_t rows() const { return ids_.size(); }
    std::span<const float> values() const { return values_; }
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(values_).subspan(i * dim_, dim_);
    }
    /// Row index of an id, or npos.
    std::size_t find(std::string_view id) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    bool operator==(const EmbeddingMatrix&) const = default;

private:
    std::vector<std::string> ids_;
    std::uint32_t dim_ = 0;
    std::vector<float> values_;
    std::unordered_map<std::string, std::size_t> row_of_;
};

/// Encodes every (id, text) pair with `threads` workers; row order follows input.
EmbeddingMatrix embed_texts(const EncoderModel& model, std::span<const std::pair<std::string, std::string>> items,
                            unsigned threads = 1);

/// "CPRE" file: magic, u32 version=1, u32 dim, u64 count, count*dim LE f32,
/// then count LF-terminated ids.
void export_embeddings(std::ostream& out, const EmbeddingMatrix& matrix);
void export_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix import_embeddings(std::istream& in);
EmbeddingMatrix import_embeddings(const std::filesystem::path& path);

struct MaskingPolicy {
    double mask_io_format = 0.5;
    double mask_samples = 0.5;
    double mask_constraints = 0.5;
    std::uint64_t seed = 0;

    /// Throws UsageError when a probability lies outside [0, 1].
    void validate() const;
    static MaskingPolicy none() { return {0.0, 0.0, 0.0, 0}; }
};

enum class SectionKind { narrative, io_format, samples, constraints };

/// Classifies a line as a section heading, or returns nullopt for body text.
std::optional<SectionKind> classify_heading(std::string_view line);

/// Drops each detected I/O-format, sample and constraint section with its
/// configured probability. Text before the first heading and sections under
/// unrecognized headings are always kept. `salt` selects an independent
/// random stream (the trainer passes epoch and example indices).
std::string apply_masking(const MaskingPolicy& policy, std::string_view statement, std::uint64_t salt = 0);

}  // namespace cpret
