#include <array>
#include <string>
#include <vector>

#include "cpret/embedder.hpp"
#include "cpret/error.hpp"
#include "cpret/rng.hpp"

namespace cpret {

namespace {

struct Marker {
    std::string_view text;
    SectionKind kind;
};

// Order matters: sample markers that begin with an I/O marker ("输入样例",
// "入力例") must be tried before the bare I/O markers.
constexpr std::array kMarkers{
    Marker{"sample", SectionKind::samples},      Marker{"example", SectionKind::samples},
    Marker{"输入输出样例", SectionKind::samples}, Marker{"输入样例", SectionKind::samples},
    Marker{"输出样例", SectionKind::samples},     Marker{"样例", SectionKind::samples},
    Marker{"入力例", SectionKind::samples},       Marker{"出力例", SectionKind::samples},
    Marker{"サンプル", SectionKind::samples},     Marker{"constraint", SectionKind::constraints},
    Marker{"数据范围", SectionKind::constraints}, Marker{"数据规模", SectionKind::constraints},
    Marker{"约束", SectionKind::constraints},     Marker{"制約", SectionKind::constraints},
    Marker{"input", SectionKind::io_format},      Marker{"output", SectionKind::io_format},
    Marker{"输入", SectionKind::io_format},       Marker{"输出", SectionKind::io_format},
    Marker{"入力", SectionKind::io_format},       Marker{"出力", SectionKind::io_format},
    Marker{"note", SectionKind::narrative},       Marker{"description", SectionKind::narrative},
    Marker{"statement", SectionKind::narrative},  Marker{"problem", SectionKind::narrative},
    Marker{"explanation", SectionKind::narrative}, Marker{"hint", SectionKind::narrative},
    Marker{"background", SectionKind::narrative}, Marker{"legend", SectionKind::narrative},
    Marker{"题目描述", SectionKind::narrative},   Marker{"题目背景", SectionKind::narrative},
    Marker{"说明", SectionKind::narrative},       Marker{"提示", SectionKind::narrative},
    Marker{"問題文", SectionKind::narrative},     Marker{"注意", SectionKind::narrative},
};

constexpr std::size_t kMaxHeadingBytes = 48;
constexpr std::size_t kMaxHeadingTailBytes = 20;

bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }
bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Strips whitespace and common markdown / bracket decoration around a heading.
std::string_view strip_decoration(std::string_view s) {
    constexpr std::string_view kAsciiTrim = " \t\r#*>_=-[]():";
    constexpr std::array<std::string_view, 4> kWide{"【", "】", "：", "　"};
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        while (!s.empty() && kAsciiTrim.find(s.front()) != std::string_view::npos) {
            s.remove_prefix(1);
            changed = true;
        }
        while (!s.empty() && kAsciiTrim.find(s.back()) != std::string_view::npos) {
            s.remove_suffix(1);
            changed = true;
        }
        for (auto w : kWide) {
            if (starts_with(s, w)) {
                s.remove_prefix(w.size());
                changed = true;
            }
            if (ends_with(s, w)) {
                s.remove_suffix(w.size());
                changed = true;
            }
        }
    }
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

}  // namespace

void MaskingPolicy::validate() const {
    for (double p : {mask_io_format, mask_samples, mask_constraints})
        if (!(p >= 0.0 && p <= 1.0)) throw UsageError("masking probability outside [0, 1]");
}

std::optional<SectionKind> classify_heading(std::string_view line) {
    std::string_view core = strip_decoration(line);
    if (core.empty() || core.size() > kMaxHeadingBytes) return std::nullopt;
    std::string lowered(core);
    for (char& c : lowered)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    for (const auto& m : kMarkers) {
        if (!starts_with(lowered, m.text)) continue;
        std::string_view tail = std::string_view(lowered).substr(m.text.size());
        // "samples", "examples", "constraints", "notes" are plural forms of a marker.
        if (!tail.empty() && tail.front() == 's' && is_ascii_alpha(m.text.back())) tail.remove_prefix(1);
        if (!tail.empty() && is_ascii_alpha(m.text.back()) && is_ascii_alpha(tail.front())) continue;
        if (tail.size() > kMaxHeadingTailBytes) continue;
        // Sentences ("Output the answer.") are body text, not headings.
        if (ends_with(tail, ".") || ends_with(tail, "。")) continue;
        return m.kind;
    }
    return std::nullopt;
}

std::string apply_masking(const MaskingPolicy& policy, std::string_view statement, std::uint64_t salt) {
    policy.validate();
    const auto lines = split_lines(statement);

    Rng rng = make_rng(policy.seed, salt ^ fnv1a64(statement));
    std::vector<bool> keep(lines.size(), true);
    bool dropping = false;
    bool any_dropped = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (auto kind = classify_heading(lines[i])) {
            double p = 0.0;
            switch (*kind) {
                case SectionKind::io_format: p = policy.mask_io_format; break;
                case SectionKind::samples: p = policy.mask_samples; break;
                case SectionKind::constraints: p = policy.mask_constraints; break;
                case SectionKind::narrative: p = 0.0; break;
            }
            // One draw per heading keeps the stream aligned across probability settings.
            const double u = uniform01(rng);
            dropping = u < p;
        }
        if (dropping) {
            keep[i] = false;
            any_dropped = true;
        }
    }
    if (!any_dropped) return std::string(statement);

    std::string out;
    out.reserve(statement.size());
    bool first = true;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (!keep[i]) continue;
        if (!first) out.push_back('\n');
        out.append(lines[i]);
        first = false;
    }
    if (!statement.empty() && statement.back() == '\n' && !out.empty()) out.push_back('\n');
    return out;
}

}  // namespace cpret
