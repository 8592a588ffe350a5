#pragma once

// Preprocessing recipe: clean (dedup + fill), feature selection, label and
// categorical encoding, train-only standardization, stratified splitting,
// and stratified subsampling. Every step is deterministic given its inputs
// and the seed, so a rerun reproduces the dataset byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "dataset.hpp"
#include "rng.hpp"

namespace flowhunter {

inline const char* kLabelColumn = "Attack_type";

// Identifier and payload columns excluded from the model input, plus the
// binary Attack_label which duplicates the multi-class target. Calibrated
// together with the one-hot list so the encoded width lands on 95.
inline std::vector<std::string> default_drop_columns() {
    return {
        "frame.time",
        "ip.src_host",
        "ip.dst_host",
        "arp.src.proto_ipv4",
        "arp.dst.proto_ipv4",
        "http.file_data",
        "http.request.full_uri",
        "http.request.uri.query",
        "icmp.transmit_timestamp",
        "tcp.options",
        "tcp.payload",
        "tcp.srcport",
        "tcp.dstport",
        "udp.port",
        "Attack_label",
    };
}

// Low-cardinality protocol fields expanded to one column per seen value;
// all other categorical columns get integer codes.
inline std::vector<std::string> default_one_hot_columns() {
    return {
        "http.request.method",
        "http.referer",
        "http.request.version",
        "dns.qry.name.len",
        "mqtt.conack.flags",
        "mqtt.protoname",
        "mqtt.topic",
    };
}

namespace detail {

inline void hash_mix(std::size_t& h, std::size_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

inline bool rows_equal(const RawTable& t, std::int64_t a, std::int64_t b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    for (const auto& c : t.cols) {
        if (c.missing[ia] != c.missing[ib]) return false;
        if (c.missing[ia]) continue;
        if (c.type == ColumnType::Numeric) {
            if (c.nums[ia] != c.nums[ib]) return false;
        } else {
            if (c.strs[ia] != c.strs[ib]) return false;
        }
    }
    return true;
}

inline std::size_t row_hash(const RawTable& t, std::int64_t r) {
    const auto i = static_cast<std::size_t>(r);
    std::size_t h = 0xcbf29ce484222325ULL;
    for (const auto& c : t.cols) {
        if (c.missing[i]) {
            hash_mix(h, 0x6d697373ULL);
        } else if (c.type == ColumnType::Numeric) {
            hash_mix(h, std::hash<double>{}(c.nums[i]));
        } else {
            hash_mix(h, std::hash<std::string>{}(c.strs[i]));
        }
    }
    return h;
}

inline RawTable take_rows(const RawTable& t, const std::vector<std::int64_t>& rows) {
    RawTable out;
    out.n_rows = static_cast<std::int64_t>(rows.size());
    out.cols.reserve(t.cols.size());
    for (const auto& c : t.cols) {
        Column nc;
        nc.name = c.name;
        nc.type = c.type;
        nc.missing.reserve(rows.size());
        if (c.type == ColumnType::Numeric) nc.nums.reserve(rows.size());
        else nc.strs.reserve(rows.size());
        for (auto r : rows) {
            const auto i = static_cast<std::size_t>(r);
            nc.missing.push_back(c.missing[i]);
            if (c.type == ColumnType::Numeric) nc.nums.push_back(c.nums[i]);
            else nc.strs.push_back(c.strs[i]);
        }
        out.cols.push_back(std::move(nc));
    }
    return out;
}

inline double column_median(const Column& c) {
    std::vector<double> vals;
    vals.reserve(c.nums.size());
    for (std::size_t i = 0; i < c.nums.size(); ++i) {
        if (!c.missing[i]) vals.push_back(c.nums[i]);
    }
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    if (n % 2 == 1) return vals[n / 2];
    return 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

// Most frequent value; ties go to the value seen earliest in the column.
inline std::string column_mode(const Column& c) {
    std::unordered_map<std::string, std::int64_t> counts;
    std::vector<const std::string*> order;
    for (std::size_t i = 0; i < c.strs.size(); ++i) {
        if (c.missing[i]) continue;
        auto [it, inserted] = counts.emplace(c.strs[i], 0);
        if (inserted) order.push_back(&it->first);
        ++it->second;
    }
    const std::string* best = nullptr;
    std::int64_t best_count = -1;
    for (const auto* v : order) {
        const auto n = counts[*v];
        if (n > best_count) {
            best = v;
            best_count = n;
        }
    }
    return *best;
}

} // namespace detail

// Removes exact-duplicate rows (first occurrence kept; equality covers the
// missing mask and every cell), then fills remaining missing cells with the
// column median (numeric) or mode (categorical). Columns in skip_fill are
// exempt from filling, for callers about to drop them anyway.
inline RawTable clean(const RawTable& t,
                      const std::unordered_set<std::string>& skip_fill = {}) {
    t.validate();
    std::vector<std::int64_t> kept;
    kept.reserve(static_cast<std::size_t>(t.n_rows));
    std::unordered_map<std::size_t, std::vector<std::int64_t>> buckets;
    for (std::int64_t r = 0; r < t.n_rows; ++r) {
        auto& bucket = buckets[detail::row_hash(t, r)];
        bool dup = false;
        for (auto prev : bucket) {
            if (detail::rows_equal(t, prev, r)) {
                dup = true;
                break;
            }
        }
        if (!dup) {
            bucket.push_back(r);
            kept.push_back(r);
        }
    }
    RawTable out = detail::take_rows(t, kept);

    for (auto& c : out.cols) {
        if (skip_fill.count(c.name)) continue;
        bool any_missing = false;
        bool any_present = false;
        for (auto m : c.missing) {
            if (m) any_missing = true;
            else any_present = true;
        }
        if (!any_missing) continue;
        if (!any_present) {
            throw DataError("clean: column '" + c.name + "' is entirely missing");
        }
        if (c.type == ColumnType::Numeric) {
            const double fill = detail::column_median(c);
            for (std::size_t i = 0; i < c.missing.size(); ++i) {
                if (c.missing[i]) {
                    c.nums[i] = fill;
                    c.missing[i] = 0;
                }
            }
        } else {
            const std::string fill = detail::column_mode(c);
            for (std::size_t i = 0; i < c.missing.size(); ++i) {
                if (c.missing[i]) {
                    c.strs[i] = fill;
                    c.missing[i] = 0;
                }
            }
        }
    }
    return out;
}

// Drops the listed columns, preserving the order of the rest. The label
// column may not be dropped.
inline RawTable select_features(const RawTable& t, const std::vector<std::string>& drop_list,
                                const std::string& label_col = kLabelColumn) {
    std::unordered_set<std::string> drop;
    for (const auto& name : drop_list) {
        if (name == label_col) {
            throw DataError("select: label column '" + label_col + "' cannot be dropped");
        }
        if (t.col_index(name) < 0) {
            throw DataError("select: unknown column '" + name + "'");
        }
        drop.insert(name);
    }
    RawTable out;
    out.n_rows = t.n_rows;
    for (const auto& c : t.cols) {
        if (!drop.count(c.name)) out.cols.push_back(c);
    }
    return out;
}

// Integer codes in first-appearance order for one categorical column, or a
// one-hot expansion over the seen categories in that same order.
struct CategoryEncoder {
    std::string column;
    bool one_hot = false;
    std::vector<std::string> categories;

    int code(const std::string& v) const {
        for (std::size_t i = 0; i < categories.size(); ++i) {
            if (categories[i] == v) return static_cast<int>(i);
        }
        return -1;
    }
};

struct EncodedMatrix {
    std::int64_t n_rows = 0;
    std::int64_t n_features = 0;
    std::vector<double> X;  // row-major
    std::vector<int> y;
    std::vector<std::string> feature_names;
    LabelCodec codec;
    std::vector<CategoryEncoder> encoders;
    std::vector<std::string> warnings;

    void validate() const {
        if (n_rows < 0 || n_features <= 0) throw DataError("encoded matrix: bad dimensions");
        if (static_cast<std::int64_t>(X.size()) != n_rows * n_features) {
            throw DataError("encoded matrix: buffer size mismatch");
        }
        if (static_cast<std::int64_t>(y.size()) != n_rows) {
            throw DataError("encoded matrix: label count mismatch");
        }
        if (static_cast<std::int64_t>(feature_names.size()) != n_features) {
            throw DataError("encoded matrix: feature name count mismatch");
        }
    }
};

namespace detail {

struct EncoderIndex {
    const CategoryEncoder* enc;
    std::unordered_map<std::string, int> index;

    explicit EncoderIndex(const CategoryEncoder& e) : enc(&e) {
        for (std::size_t i = 0; i < e.categories.size(); ++i) {
            index.emplace(e.categories[i], static_cast<int>(i));
        }
    }

    int code(const std::string& v) const {
        auto it = index.find(v);
        return it == index.end() ? -1 : it->second;
    }
};

} // namespace detail

// First-appearance category tables for every categorical feature column.
inline std::vector<CategoryEncoder> fit_encoders(const RawTable& t, const std::string& label_col,
                                                 const std::set<std::string>& one_hot_cols) {
    for (const auto& name : one_hot_cols) {
        if (t.col_index(name) < 0) {
            throw DataError("encode: one-hot column '" + name + "' not in table");
        }
        if (name == label_col) throw DataError("encode: label column cannot be one-hot");
    }
    std::vector<CategoryEncoder> encoders;
    for (const auto& c : t.cols) {
        if (c.name == label_col || c.type != ColumnType::Categorical) continue;
        CategoryEncoder e;
        e.column = c.name;
        e.one_hot = one_hot_cols.count(c.name) > 0;
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < c.strs.size(); ++i) {
            if (c.missing[i]) {
                throw DataError("encode: column '" + c.name +
                                "' still has missing cells; run clean first");
            }
            if (seen.insert(c.strs[i]).second) e.categories.push_back(c.strs[i]);
        }
        if (e.categories.empty()) {
            throw DataError("encode: column '" + c.name + "' has no values to encode");
        }
        encoders.push_back(std::move(e));
    }
    return encoders;
}

// Applies previously fitted encoders. Unseen categories get code -1 (label
// encoding) or an all-zero block (one-hot), each with one warning per
// distinct value. Pass a null codec to derive class order by first
// appearance in the label column.
inline EncodedMatrix apply_encoders(const RawTable& t, const std::vector<CategoryEncoder>& encoders,
                                    const std::string& label_col = kLabelColumn,
                                    const LabelCodec* codec = nullptr) {
    t.validate();
    const int label_idx = t.col_index(label_col);
    if (label_idx < 0) throw DataError("encode: no label column '" + label_col + "'");
    const Column& label = t.cols[static_cast<std::size_t>(label_idx)];
    if (label.type != ColumnType::Categorical) {
        throw DataError("encode: label column '" + label_col + "' must be textual");
    }
    for (auto m : label.missing) {
        if (m) throw DataError("encode: label column has missing cells; run clean first");
    }

    LabelCodec resolved;
    if (codec) {
        resolved = *codec;
    } else {
        std::vector<std::string> names;
        std::unordered_set<std::string> seen;
        for (const auto& v : label.strs) {
            if (seen.insert(v).second) names.push_back(v);
        }
        resolved = LabelCodec(std::move(names));
    }

    std::unordered_map<std::string, const Column*> by_name;
    for (const auto& c : t.cols) by_name.emplace(c.name, &c);

    struct Plan {
        const Column* col;
        const detail::EncoderIndex* enc;  // null for numeric columns
        std::int64_t width;
    };
    std::vector<detail::EncoderIndex> indexes;
    indexes.reserve(encoders.size());
    std::unordered_map<std::string, const detail::EncoderIndex*> enc_by_col;
    for (const auto& e : encoders) {
        indexes.emplace_back(e);
    }
    for (const auto& ix : indexes) enc_by_col.emplace(ix.enc->column, &ix);

    EncodedMatrix m;
    m.codec = resolved;
    std::vector<Plan> plans;
    for (const auto& c : t.cols) {
        if (c.name == label_col) continue;
        if (c.type == ColumnType::Numeric) {
            for (auto miss : c.missing) {
                if (miss) {
                    throw DataError("encode: column '" + c.name +
                                    "' still has missing cells; run clean first");
                }
            }
            plans.push_back({&c, nullptr, 1});
            m.feature_names.push_back(c.name);
            continue;
        }
        auto it = enc_by_col.find(c.name);
        if (it == enc_by_col.end()) {
            throw DataError("encode: no encoder fitted for column '" + c.name + "'");
        }
        const auto& e = *it->second->enc;
        if (e.one_hot) {
            plans.push_back({&c, it->second, static_cast<std::int64_t>(e.categories.size())});
            for (const auto& cat : e.categories) m.feature_names.push_back(c.name + "=" + cat);
        } else {
            plans.push_back({&c, it->second, 1});
            m.feature_names.push_back(c.name);
        }
    }

    m.n_rows = t.n_rows;
    m.n_features = static_cast<std::int64_t>(m.feature_names.size());
    m.X.assign(static_cast<std::size_t>(m.n_rows * m.n_features), 0.0);
    m.y.resize(static_cast<std::size_t>(m.n_rows));

    std::set<std::string> warned;
    auto warn_unseen = [&](const std::string& col, const std::string& value, bool onehot) {
        if (!warned.insert(col + "\n" + value).second) return;
        m.warnings.push_back("encode: column '" + col + "': unseen value '" + value + "' -> " +
                             (onehot ? "all-zero row" : "code -1"));
    };

    for (std::int64_t r = 0; r < t.n_rows; ++r) {
        const auto i = static_cast<std::size_t>(r);
        m.y[i] = m.codec.encode(label.strs[i]);
        double* dst = m.X.data() + r * m.n_features;
        std::int64_t off = 0;
        for (const auto& p : plans) {
            if (!p.enc) {
                dst[off++] = p.col->nums[i];
                continue;
            }
            const int code = p.enc->code(p.col->strs[i]);
            if (p.enc->enc->one_hot) {
                if (code < 0) warn_unseen(p.col->name, p.col->strs[i], true);
                else dst[off + code] = 1.0;
                off += p.width;
            } else {
                if (code < 0) warn_unseen(p.col->name, p.col->strs[i], false);
                dst[off++] = code;
            }
        }
    }
    m.validate();
    return m;
}

inline EncodedMatrix encode_labels_and_categoricals(const RawTable& t,
                                                    const std::string& label_col = kLabelColumn,
                                                    const std::set<std::string>& one_hot_cols = {},
                                                    const LabelCodec* codec = nullptr) {
    auto encoders = fit_encoders(t, label_col, one_hot_cols);
    EncodedMatrix m = apply_encoders(t, encoders, label_col, codec);
    m.encoders = std::move(encoders);
    return m;
}

// Per-feature mean and population standard deviation, fitted on training
// rows only. Features whose std collapses to zero are flagged and mapped
// to zero when applied.
struct StandardStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::uint8_t> zero_std;

    std::int64_t n_features() const { return static_cast<std::int64_t>(mean.size()); }

    void validate() const {
        if (mean.size() != stddev.size() || mean.size() != zero_std.size()) {
            throw DataError("standardize: stats field lengths differ");
        }
        for (std::size_t i = 0; i < stddev.size(); ++i) {
            if (!(stddev[i] >= 0.0)) throw DataError("standardize: negative std");
            if (!std::isfinite(mean[i]) || !std::isfinite(stddev[i])) {
                throw DataError("standardize: non-finite stats");
            }
        }
    }
};

inline StandardStats standardize_fit(const std::vector<double>& X, std::int64_t n_rows,
                                     std::int64_t n_features) {
    if (n_rows <= 0) throw DataError("standardize: no rows to fit");
    if (static_cast<std::int64_t>(X.size()) != n_rows * n_features) {
        throw DataError("standardize: buffer size mismatch");
    }
    StandardStats s;
    s.mean.assign(static_cast<std::size_t>(n_features), 0.0);
    s.stddev.assign(static_cast<std::size_t>(n_features), 0.0);
    s.zero_std.assign(static_cast<std::size_t>(n_features), 0);
    for (std::int64_t r = 0; r < n_rows; ++r) {
        const double* row = X.data() + r * n_features;
        for (std::int64_t j = 0; j < n_features; ++j) s.mean[static_cast<std::size_t>(j)] += row[j];
    }
    for (auto& v : s.mean) v /= static_cast<double>(n_rows);
    for (std::int64_t r = 0; r < n_rows; ++r) {
        const double* row = X.data() + r * n_features;
        for (std::int64_t j = 0; j < n_features; ++j) {
            const double d = row[j] - s.mean[static_cast<std::size_t>(j)];
            s.stddev[static_cast<std::size_t>(j)] += d * d;
        }
    }
    for (std::size_t j = 0; j < s.stddev.size(); ++j) {
        s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n_rows));
        // Constant columns can pick up rounding dust in the variance sum;
        // treat anything at that scale as zero spread.
        if (s.stddev[j] <= 1e-12 * std::max(1.0, std::abs(s.mean[j]))) {
            s.stddev[j] = 0.0;
            s.zero_std[j] = 1;
        }
    }
    s.validate();
    return s;
}

inline void standardize_apply(std::vector<double>& X, std::int64_t n_rows, std::int64_t n_features,
                              const StandardStats& stats) {
    stats.validate();
    if (stats.n_features() != n_features) {
        throw DataError("standardize: stats cover " + std::to_string(stats.n_features()) +
                        " features, matrix has " + std::to_string(n_features));
    }
    if (static_cast<std::int64_t>(X.size()) != n_rows * n_features) {
        throw DataError("standardize: buffer size mismatch");
    }
    for (std::int64_t r = 0; r < n_rows; ++r) {
        double* row = X.data() + r * n_features;
        for (std::int64_t j = 0; j < n_features; ++j) {
            const auto i = static_cast<std::size_t>(j);
            row[j] = stats.zero_std[i] ? 0.0 : (row[j] - stats.mean[i]) / stats.stddev[i];
        }
    }
}

struct SplitSpec {
    double test_fraction = 0.2;
    bool stratified = true;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
            throw DataError("split: test_fraction must lie in (0,1)");
        }
        if (!stratified) throw DataError("split: only stratified splitting is implemented");
    }
};

namespace detail {

// Per-class row indices in original order; throws on singleton classes.
inline std::vector<std::vector<std::int64_t>> rows_by_class(const std::vector<int>& y,
                                                            const LabelCodec& codec) {
    std::vector<std::vector<std::int64_t>> per_class(static_cast<std::size_t>(codec.num_classes()));
    for (std::size_t i = 0; i < y.size(); ++i) {
        const int c = y[i];
        if (c < 0 || c >= codec.num_classes()) {
            throw DataError("split: label " + std::to_string(c) + " outside codec range");
        }
        per_class[static_cast<std::size_t>(c)].push_back(static_cast<std::int64_t>(i));
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c].size() == 1) {
            throw DataError("split: class '" + codec.decode(static_cast<int>(c)) +
                            "' has 1 row; need at least 2");
        }
    }
    return per_class;
}

inline LabeledDataset gather_rows(const EncodedMatrix& m, const std::vector<std::int64_t>& rows) {
    LabeledDataset d;
    d.n_rows = static_cast<std::int64_t>(rows.size());
    d.n_features = m.n_features;
    d.codec = m.codec;
    d.feature_names = m.feature_names;
    d.X.reserve(rows.size() * static_cast<std::size_t>(m.n_features));
    d.y.reserve(rows.size());
    d.synthetic.assign(rows.size(), 0);
    for (auto r : rows) {
        const double* src = m.X.data() + r * m.n_features;
        d.X.insert(d.X.end(), src, src + m.n_features);
        d.y.push_back(m.y[static_cast<std::size_t>(r)]);
    }
    return d;
}

} // namespace detail

// Seed-deterministic per-class split. Each class contributes
// round(test_fraction * count) rows to the test set (never the whole
// class); within each split rows keep their original relative order.
inline std::pair<LabeledDataset, LabeledDataset> stratified_split(const EncodedMatrix& m,
                                                                  const SplitSpec& spec) {
    m.validate();
    spec.validate();
    auto per_class = detail::rows_by_class(m.y, m.codec);
    SeededRng root(spec.seed);
    std::vector<std::int64_t> train_rows, test_rows;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto rows = per_class[c];
        if (rows.empty()) continue;
        SeededRng rng = root.derive(static_cast<std::uint64_t>(c));
        rng.shuffle(rows);
        const auto n = static_cast<std::int64_t>(rows.size());
        auto n_test = static_cast<std::int64_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
        n_test = std::max<std::int64_t>(0, std::min(n_test, n - 1));
        test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + n_test);
        train_rows.insert(train_rows.end(), rows.begin() + n_test, rows.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {detail::gather_rows(m, train_rows), detail::gather_rows(m, test_rows)};
}

// Seed-deterministic stratified row subsample: every non-empty class keeps
// max(1, round(fraction * count)) rows, original order preserved.
inline EncodedMatrix subsample(const EncodedMatrix& m, double fraction, std::uint64_t seed) {
    m.validate();
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw DataError("subsample: fraction must lie in (0,1]");
    }
    std::vector<std::vector<std::int64_t>> per_class(static_cast<std::size_t>(m.codec.num_classes()));
    for (std::size_t i = 0; i < m.y.size(); ++i) {
        per_class[static_cast<std::size_t>(m.y[i])].push_back(static_cast<std::int64_t>(i));
    }
    SeededRng root(seed);
    std::vector<std::int64_t> kept;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto rows = per_class[c];
        if (rows.empty()) continue;
        SeededRng rng = root.derive(static_cast<std::uint64_t>(c));
        rng.shuffle(rows);
        const auto n = static_cast<std::int64_t>(rows.size());
        auto k = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n))));
        k = std::min(k, n);
        kept.insert(kept.end(), rows.begin(), rows.begin() + k);
    }
    std::sort(kept.begin(), kept.end());

    EncodedMatrix out;
    out.n_rows = static_cast<std::int64_t>(kept.size());
    out.n_features = m.n_features;
    out.feature_names = m.feature_names;
    out.codec = m.codec;
    out.encoders = m.encoders;
    out.warnings = m.warnings;
    out.X.reserve(kept.size() * static_cast<std::size_t>(m.n_features));
    out.y.reserve(kept.size());
    for (auto r : kept) {
        const double* src = m.X.data() + r * m.n_features;
        out.X.insert(out.X.end(), src, src + m.n_features);
        out.y.push_back(m.y[static_cast<std::size_t>(r)]);
    }
    return out;
}

} // namespace flowhunter
