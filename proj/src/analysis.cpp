#include "cpret/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "cpret/error.hpp"
#include "cpret/parallel.hpp"

namespace cpret {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back().push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back().push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back().push_back(c);
        }
    }
    return fields;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + '"';
}

std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::unordered_map<std::string, const MaxSimilarity*> sims_by_id(const std::vector<MaxSimilarity>& sims) {
    std::unordered_map<std::string, const MaxSimilarity*> out;
    for (const auto& s : sims) out.emplace(s.problem_id, &s);
    return out;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_edges(const std::vector<double>& edges) {
    if (edges.size() < 2) throw UsageError("need at least 2 bin edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw UsageError("bin edges must strictly increase");
}

}  // namespace

std::vector<PassRecord> read_pass_records(std::istream& in) {
    std::vector<PassRecord> out;
    std::string line;
    std::size_t line_no = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split_csv(line);
        auto fail = [&](const std::string& why) { throw DataError("LINE " + std::to_string(line_no) + ": " + why); };
        if (header) {
            header = false;
            if (f != std::vector<std::string>{"problem_id", "model", "pass_rate", "difficulty", "release_date"})
                fail("expected header problem_id,model,pass_rate,difficulty,release_date");
            continue;
        }
        if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
        PassRecord r;
        r.problem_id = f[0];
        r.model = f[1];
        if (r.problem_id.empty() || r.model.empty()) fail("empty problem_id or model");
        const char* end = f[2].data() + f[2].size();
        auto [ptr, ec] = std::from_chars(f[2].data(), end, r.pass_rate);
        if (ec != std::errc() || ptr != end) fail("pass_rate is not a number");
        if (!(r.pass_rate >= 0.0 && r.pass_rate <= 1.0)) fail("pass_rate outside [0, 1]");
        auto d = parse_difficulty(f[3]);
        if (!d) fail("unknown difficulty " + f[3]);
        r.difficulty = *d;
        auto date = Date::parse(f[4]);
        if (!date) fail("invalid release_date " + f[4]);
        r.release_date = *date;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<PassRecord> read_pass_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return read_pass_records(in);
}

std::vector<MaxSimilarity> compute_max_similarity(const EmbeddingMatrix& eval, const SearchIndex& historical,
                                                  const DateGuard* guard, unsigned threads) {
    if (historical.size() == 0) throw DataError("empty historical corpus");
    if (guard != nullptr) {
        auto date_of = [](const std::unordered_map<std::string, Date>& m, const std::string& id) {
            auto it = m.find(id);
            if (it == m.end()) throw DataError("no date for " + id);
            return it->second;
        };
        Date newest_hist{0, 1, 1};
        std::string newest_id;
        for (const auto& id : historical.matrix().ids()) {
            Date d = date_of(guard->historical_dates, id);
            if (newest_id.empty() || d > newest_hist) newest_hist = d, newest_id = id;
        }
        for (const auto& id : eval.ids()) {
            if (!(newest_hist < date_of(guard->eval_dates, id)))
                throw DataError("date guard: historical " + newest_id + " (" + newest_hist.to_string() +
                                ") does not predate eval " + id);
        }
    }
    std::vector<MaxSimilarity> out(eval.rows());
    parallel_for(eval.rows(), threads, [&](std::size_t i) {
        const auto& id = eval.ids()[i];
        const auto q = to_double(eval.row(i));
        const Hit h = historical.max_similarity(std::span<const double>(q), IdSet{id});
        out[i] = {id, h.score, h.doc_id};
    });
    return out;
}

std::vector<ProblemPoint> problem_points(const std::vector<PassRecord>& records,
                                         const std::vector<MaxSimilarity>& sims, std::vector<std::string>* warnings) {
    auto by_id = sims_by_id(sims);
    std::vector<ProblemPoint> out;
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<std::size_t> counts;
    std::set<std::string> missing;
    for (const auto& r : records) {
        auto s = by_id.find(r.problem_id);
        if (s == by_id.end()) {
            missing.insert(r.problem_id);
            continue;
        }
        auto [it, inserted] = slot.emplace(r.problem_id, out.size());
        if (inserted) {
            out.push_back({r.problem_id, r.difficulty, 0.0, s->second->max_sim, s->second->nearest_id});
            counts.push_back(0);
        }
        out[it->second].pass_rate += r.pass_rate;
        ++counts[it->second];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].pass_rate /= static_cast<double>(counts[i]);
    if (warnings != nullptr)
        for (const auto& id : missing) warnings->push_back("no similarity for problem " + id + "; dropped");
    return out;
}

std::vector<double> default_bin_edges(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.1};
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    // Integer tenths avoid accumulating 0.1 steps.
    auto lo = static_cast<long>(std::floor(*lo_it * 10.0 + 1e-9));
    auto hi = static_cast<long>(std::ceil(*hi_it * 10.0 - 1e-9));
    if (hi <= lo) hi = lo + 1;
    std::vector<double> edges;
    for (long t = lo; t <= hi; ++t) edges.push_back(static_cast<double>(t) / 10.0);
    return edges;
}

std::size_t bin_index(double value, const std::vector<double>& edges) {
    const std::size_t bins = edges.size() - 1;
    if (value <= edges.front()) return 0;
    if (value >= edges.back()) return bins - 1;
    auto it = std::upper_bound(edges.begin(), edges.end(), value);
    return static_cast<std::size_t>(it - edges.begin()) - 1;
}

BinReport bin_and_aggregate(const std::vector<ProblemPoint>& points, const std::vector<double>& edges) {
    check_edges(edges);
    BinReport report;
    const std::size_t bins = edges.size() - 1;
    std::vector<std::vector<double>> members(bins);
    for (const auto& p : points) {
        if (p.max_sim < edges.front() || p.max_sim > edges.back())
            report.warnings.push_back("similarity " + num(p.max_sim) + " of " + p.problem_id +
                                      " outside the bin range; clamped");
        const std::size_t b = bin_index(p.max_sim, edges);
        report.assignment.push_back(b);
        members[b].push_back(p.pass_rate);
    }
    for (std::size_t b = 0; b < bins; ++b) {
        BinRow row{edges[b], edges[b + 1], members[b].size(), kNaN, kNaN, kNaN, kNaN};
        if (!members[b].empty()) {
            double sum = 0.0;
            for (double v : members[b]) sum += v;
            row.mean = sum / static_cast<double>(members[b].size());
            row.median = median_of(members[b]);
            row.min = *std::min_element(members[b].begin(), members[b].end());
            row.max = *std::max_element(members[b].begin(), members[b].end());
        }
        report.bins.push_back(row);
    }
    return report;
}

std::optional<Regression> ols(const std::vector<double>& x, const std::vector<double>& y, std::string stratum) {
    if (x.size() != y.size()) throw UsageError("ols: x and y differ in length");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const bool distinct = std::any_of(x.begin(), x.end(), [&](double v) { return v != x[0]; });
    if (!distinct || sxx == 0.0) return std::nullopt;
    const double slope = sxy / sxx;
    return Regression{std::move(stratum), slope, my - slope * mx, n};
}

std::vector<Regression> stratified_regression(const std::vector<PassRecord>& records,
                                              const std::vector<MaxSimilarity>& sims, Stratum stratum,
                                              std::vector<std::string>* warnings) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::vector<double> all_x, all_y;
    if (stratum == Stratum::difficulty) {
        for (const auto& p : problem_points(records, sims, warnings)) {
            auto& g = groups[std::string(to_string(p.difficulty))];
            g.first.push_back(p.max_sim);
            g.second.push_back(p.pass_rate);
            all_x.push_back(p.max_sim);
            all_y.push_back(p.pass_rate);
        }
    } else {
        auto by_id = sims_by_id(sims);
        for (const auto& r : records) {
            auto s = by_id.find(r.problem_id);
            if (s == by_id.end()) continue;
            auto& g = groups[r.model];
            g.first.push_back(s->second->max_sim);
            g.second.push_back(r.pass_rate);
            all_x.push_back(s->second->max_sim);
            all_y.push_back(r.pass_rate);
        }
    }
    std::vector<Regression> out;
    auto add = [&](const std::string& name, const std::vector<double>& x, const std::vector<double>& y) {
        if (auto r = ols(x, y, name)) {
            out.push_back(*r);
        } else if (warnings != nullptr) {
            warnings->push_back("stratum " + name + " has fewer than 2 distinct similarities; skipped");
        }
    };
    for (const auto& [name, xy] : groups) add(name, xy.first, xy.second);
    add("all", all_x, all_y);
    return out;
}

std::vector<GapRow> variant_gap(const std::vector<PassRecord>& records, const std::vector<MaxSimilarity>& sims,
                                const std::vector<double>& edges, std::vector<std::string>* warnings) {
    check_edges(edges);
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> by_variant;
    for (const auto& r : records) {
        auto& acc = by_variant[r.model][r.problem_id];
        acc.first += r.pass_rate;
        ++acc.second;
    }
    if (by_variant.size() < 2) throw UsageError("variant gap needs at least 2 variants");

    auto by_id = sims_by_id(sims);
    std::vector<std::string> shared;
    for (const auto& [pid, _] : by_variant.begin()->second) {
        bool everywhere = std::all_of(by_variant.begin(), by_variant.end(),
                                      [&](const auto& v) { return v.second.count(pid) > 0; });
        if (everywhere && by_id.count(pid)) shared.push_back(pid);
    }
    if (shared.empty()) throw DataError("variants share no problem with a similarity");
    if (warnings != nullptr) {
        for (const auto& [name, problems] : by_variant)
            if (problems.size() > shared.size())
                warnings->push_back("variant " + name + ": " + std::to_string(problems.size() - shared.size()) +
                                    " problems outside the shared set ignored");
    }

    const std::size_t bins = edges.size() - 1;
    std::vector<GapRow> rows(bins);
    std::vector<std::map<std::string, double>> sums(bins);
    for (std::size_t b = 0; b < bins; ++b) rows[b].lo = edges[b], rows[b].hi = edges[b + 1];
    for (const auto& pid : shared) {
        const std::size_t b = bin_index(by_id.at(pid)->max_sim, edges);
        ++rows[b].count;
        for (const auto& [name, problems] : by_variant) {
            const auto& [sum, n] = problems.at(pid);
            sums[b][name] += sum / static_cast<double>(n);
        }
    }
    for (std::size_t b = 0; b < bins; ++b) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& [name, _] : by_variant) {
            const double mean = rows[b].count == 0 ? kNaN : sums[b][name] / static_cast<double>(rows[b].count);
            rows[b].means[name] = mean;
            lo = std::min(lo, mean);
            hi = std::max(hi, mean);
        }
        rows[b].gap = rows[b].count == 0 ? kNaN : hi - lo;
    }
    return rows;
}

void write_report_csv(std::ostream& out, const std::vector<ProblemPoint>& points, const BinReport& bins) {
    out << "problem_id,difficulty,pass_rate,max_sim,nearest_id,bin\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        out << csv_field(p.problem_id) << ',' << to_string(p.difficulty) << ',' << num(p.pass_rate) << ','
            << num(p.max_sim) << ',' << csv_field(p.nearest_id) << ',' << bins.assignment.at(i) << '\n';
    }
}

void write_bins_csv(std::ostream& out, const BinReport& bins) {
    out << "bin,lo,hi,count,mean_pass_rate,median_pass_rate,min_pass_rate,max_pass_rate\n";
    for (std::size_t b = 0; b < bins.bins.size(); ++b) {
        const auto& r = bins.bins[b];
        out << b << ',' << num(r.lo) << ',' << num(r.hi) << ',' << r.count << ',' << num(r.mean) << ','
            << num(r.median) << ',' << num(r.min) << ',' << num(r.max) << '\n';
    }
}

void write_regression_csv(std::ostream& out, const std::vector<Regression>& rows) {
    out << "stratum,slope,intercept,n\n";
    for (const auto& r : rows)
        out << csv_field(r.stratum) << ',' << num(r.slope) << ',' << num(r.intercept) << ',' << r.n << '\n';
}

void write_gaps_csv(std::ostream& out, const std::vector<GapRow>& rows) {
    out << "bin,lo,hi,count";
    if (!rows.empty())
        for (const auto& [name, _] : rows.front().means) out << ',' << csv_field("mean_" + name);
    out << ",gap\n";
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto& r = rows[b];
        out << b << ',' << num(r.lo) << ',' << num(r.hi) << ',' << r.count;
        for (const auto& [name, mean] : r.means) out << ',' << num(mean);
        out << ',' << num(r.gap) << '\n';
    }
}

}  // namespace cpret
