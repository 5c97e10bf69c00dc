#include "cpret/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "binary_io.hpp"
#include "cpret/error.hpp"
#include "cpret/rng.hpp"

namespace cpret {

namespace {

constexpr char kModelMagic[5] = "CPMD";
constexpr char kEmbeddingMagic[5] = "CPRE";
constexpr std::uint32_t kFormatVersion = 1;

// Lower-cases ASCII, collapses whitespace runs to one space and trims.
std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    }
    return out;
}

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

}  // namespace

std::vector<std::string_view> utf8_units(std::string_view text) {
    std::vector<std::string_view> units;
    units.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t len = utf8_length(static_cast<unsigned char>(text[i]));
        if (i + len > text.size()) len = 1;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        units.push_back(text.substr(i, len));
        i += len;
    }
    return units;
}

EncoderModel EncoderModel::random(std::uint32_t vocab_dim, std::uint32_t embed_dim, std::uint64_t seed,
                                  std::pair<int, int> ngram_range) {
    if (vocab_dim == 0 || embed_dim == 0) throw UsageError("encoder dimensions must be positive");
    if (ngram_range.first < 1 || ngram_range.second < ngram_range.first)
        throw UsageError("invalid n-gram range");
    EncoderModel m;
    m.vocab_dim_ = vocab_dim;
    m.embed_dim_ = embed_dim;
    m.ngram_range_ = ngram_range;
    m.seed_ = seed;
    m.projection_.resize(std::size_t{vocab_dim} * embed_dim);
    const double a = std::sqrt(3.0 / embed_dim);
    Rng rng = make_rng(seed, 0x50524F4AULL);
    for (float& w : m.projection_) w = static_cast<float>((2.0 * uniform01(rng) - 1.0) * a);
    return m;
}

std::vector<HashedFeature> EncoderModel::features(std::string_view text) const {
    const std::string norm = normalize_text(text);
    if (norm.empty()) throw UsageError("cannot encode empty text");
    const auto units = utf8_units(norm);

    // Term frequency per distinct n-gram, keyed by its 64-bit hash.
    std::map<std::uint64_t, std::uint32_t> counts;
    auto add_gram = [&](std::size_t begin, std::size_t n) {
        std::string_view first = units[begin];
        std::string_view last = units[begin + n - 1];
        std::string_view gram(first.data(), static_cast<std::size_t>(last.data() + last.size() - first.data()));
        ++counts[fnv1a64(gram)];
    };
    const auto [nmin, nmax] = ngram_range_;
    if (units.size() < static_cast<std::size_t>(nmin)) {
        add_gram(0, units.size());
    } else {
        for (int n = nmin; n <= nmax; ++n) {
            if (units.size() < static_cast<std::size_t>(n)) break;
            for (std::size_t i = 0; i + n <= units.size(); ++i) add_gram(i, static_cast<std::size_t>(n));
        }
    }

    std::map<std::uint32_t, double> buckets;
    for (const auto& [hash, count] : counts) {
        const std::uint64_t mixed = splitmix64(hash);
        const double sign = (mixed >> 63) != 0 ? -1.0 : 1.0;
        buckets[static_cast<std::uint32_t>(hash % vocab_dim_)] += sign * (1.0 + std::log(static_cast<double>(count)));
    }

    std::vector<HashedFeature> out;
    out.reserve(buckets.size());
    double norm2 = 0.0;
    for (const auto& [bucket, w] : buckets) {
        if (w == 0.0) continue;
        out.push_back({bucket, w});
        norm2 += w * w;
    }
    if (norm2 == 0.0) throw NumericError("hashed features cancel out completely");
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& f : out) f.weight *= inv;
    return out;
}

std::vector<double> EncoderModel::project(std::span<const HashedFeature> features) const {
    std::vector<double> y(embed_dim_, 0.0);
    for (const auto& f : features) {
        auto r = row(f.bucket);
        for (std::uint32_t d = 0; d < embed_dim_; ++d) y[d] += f.weight * static_cast<double>(r[d]);
    }
    return y;
}

std::vector<double> EncoderModel::encode(std::string_view text) const {
    auto y = project(features(text));
    double norm2 = 0.0;
    for (double v : y) norm2 += v * v;
    if (!(norm2 > 0.0) || !std::isfinite(norm2)) throw NumericError("encoder produced a non-normalizable vector");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : y) v *= inv;
    return y;
}

bool EncoderModel::all_finite() const {
    return std::all_of(projection_.begin(), projection_.end(), [](float w) { return std::isfinite(w); });
}

void EncoderModel::save(std::ostream& out) const {
    if (ngram_range_ != kDefaultNgramRange)
        throw UsageError("checkpoint format stores only the default 2-4 n-gram range");
    out.write(kModelMagic, 4);
    detail::write_le<std::uint32_t>(out, kFormatVersion);
    detail::write_le<std::uint32_t>(out, vocab_dim_);
    detail::write_le<std::uint32_t>(out, embed_dim_);
    detail::write_le<std::uint64_t>(out, seed_);
    for (float w : projection_) detail::write_f32(out, w);
    if (!out) throw DataError("failed to write model checkpoint");
}

void EncoderModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    save(out);
}

EncoderModel EncoderModel::load(std::istream& in) {
    detail::expect_magic(in, kModelMagic);
    const auto version = detail::read_le<std::uint32_t>(in, "version");
    if (version != kFormatVersion) throw FormatError("unsupported model version " + std::to_string(version));
    EncoderModel m;
    m.vocab_dim_ = detail::read_le<std::uint32_t>(in, "vocab_dim");
    m.embed_dim_ = detail::read_le<std::uint32_t>(in, "embed_dim");
    m.seed_ = detail::read_le<std::uint64_t>(in, "seed");
    if (m.vocab_dim_ == 0 || m.embed_dim_ == 0) throw FormatError("model dimension 0");
    m.projection_.resize(std::size_t{m.vocab_dim_} * m.embed_dim_);
    for (float& w : m.projection_) w = detail::read_f32(in, "projection");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after projection");
    if (!m.all_finite()) throw FormatError("non-finite projection entry");
    return m;
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    return load(in);
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::uint32_t dim, std::vector<float> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw FormatError("embedding dimension 0");
    if (values_.size() != ids_.size() * dim_) throw FormatError("id count mismatch");
    row_of_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!row_of_.emplace(ids_[i], i).second) throw FormatError("duplicate embedding id '" + ids_[i] + "'");
        std::span<float> r(values_.data() + i * dim_, dim_);
        double norm2 = 0.0;
        for (float v : r) norm2 += static_cast<double>(v) * v;
        if (!(norm2 > 0.0) || !std::isfinite(norm2)) throw FormatError("non-normalizable row '" + ids_[i] + "'");
        const double inv = 1.0 / std::sqrt(norm2);
        for (float& v : r) v = static_cast<float>(v * inv);
    }
}

std::size_t EmbeddingMatrix::find(std::string_view id) const {
    auto it = row_of_.find(std::string(id));
    return it == row_of_.end() ? npos : it->second;
}

EmbeddingMatrix embed_texts(const EncoderModel& model, std::span<const std::pair<std::string, std::string>> items,
                            unsigned threads) {
    const std::uint32_t dim = model.embed_dim();
    std::vector<float> values(items.size() * dim);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto v = model.encode(items[i].second);
            for (std::uint32_t d = 0; d < dim; ++d) values[i * dim + d] = static_cast<float>(v[d]);
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, items.size()))));
    if (threads == 1) {
        work(0, items.size());
    } else {
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        const std::size_t chunk = (items.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t begin = std::min(items.size(), t * chunk);
            const std::size_t end = std::min(items.size(), begin + chunk);
            pool.emplace_back([&, t, begin, end] {
                try {
                    work(begin, end);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    std::vector<std::string> ids;
    ids.reserve(items.size());
    for (const auto& [id, text] : items) ids.push_back(id);
    return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

void export_embeddings(std::ostream& out, const EmbeddingMatrix& matrix) {
    out.write(kEmbeddingMagic, 4);
    detail::write_le<std::uint32_t>(out, kFormatVersion);
    detail::write_le<std::uint32_t>(out, matrix.dim());
    detail::write_le<std::uint64_t>(out, matrix.rows());
    for (float v : matrix.values()) detail::write_f32(out, v);
    for (const auto& id : matrix.ids()) out << id << '\n';
    if (!out) throw DataError("failed to write embeddings");
}

void export_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    export_embeddings(out, matrix);
}

EmbeddingMatrix import_embeddings(std::istream& in) {
    detail::expect_magic(in, kEmbeddingMagic);
    const auto version = detail::read_le<std::uint32_t>(in, "version");
    if (version != kFormatVersion) throw FormatError("unsupported embedding version " + std::to_string(version));
    const auto dim = detail::read_le<std::uint32_t>(in, "dim");
    const auto count = detail::read_le<std::uint64_t>(in, "count");
    if (dim == 0) throw FormatError("embedding dimension 0");
    std::vector<float> values;
    values.reserve(count * dim);
    for (std::uint64_t i = 0; i < count * dim; ++i) values.push_back(detail::read_f32(in, "embedding rows"));
    std::vector<std::string> ids;
    ids.reserve(count);
    std::string line;
    while (std::getline(in, line)) ids.push_back(line);
    if (ids.size() != count)
        throw FormatError("id count mismatch: header says " + std::to_string(count) + ", found " +
                          std::to_string(ids.size()));
    return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

EmbeddingMatrix import_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    return import_embeddings(in);
}

}  // namespace cpret
