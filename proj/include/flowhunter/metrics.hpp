#pragma once

// Confusion matrix, one-vs-rest precision/recall/F1, macro and weighted
// averages, and the text rendering of the evaluation report.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"

namespace flowhunter {

struct EpochStats {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
};

using TrainingHistory = std::vector<EpochStats>;

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes) : k_(num_classes) {
        if (num_classes <= 0) throw DataError("confusion: class count must be positive");
        cells_.assign(static_cast<std::size_t>(k_) * static_cast<std::size_t>(k_), 0);
    }

    static ConfusionMatrix from_labels(const std::vector<int>& y_true,
                                       const std::vector<int>& y_pred, int num_classes) {
        if (y_true.size() != y_pred.size()) {
            throw DataError("confusion: " + std::to_string(y_true.size()) + " true labels vs " +
                            std::to_string(y_pred.size()) + " predictions");
        }
        ConfusionMatrix m(num_classes);
        for (std::size_t i = 0; i < y_true.size(); ++i) m.add(y_true[i], y_pred[i]);
        return m;
    }

    int num_classes() const { return k_; }

    // Rows are true classes, columns predicted classes.
    void add(int t, int p, std::int64_t count = 1) {
        check(t);
        check(p);
        cells_[static_cast<std::size_t>(t) * static_cast<std::size_t>(k_) +
               static_cast<std::size_t>(p)] += count;
        total_ += count;
    }

    std::int64_t at(int t, int p) const {
        check(t);
        check(p);
        return cells_[static_cast<std::size_t>(t) * static_cast<std::size_t>(k_) +
                      static_cast<std::size_t>(p)];
    }

    std::int64_t total() const { return total_; }

    std::int64_t support(int c) const {
        check(c);
        std::int64_t s = 0;
        for (int p = 0; p < k_; ++p) s += at(c, p);
        return s;
    }

    std::int64_t tp(int c) const { return at(c, c); }

    std::int64_t fp(int c) const {
        check(c);
        std::int64_t s = 0;
        for (int t = 0; t < k_; ++t) {
            if (t != c) s += at(t, c);
        }
        return s;
    }

    std::int64_t fn(int c) const { return support(c) - tp(c); }

    std::int64_t tn(int c) const { return total_ - tp(c) - fp(c) - fn(c); }

    double accuracy() const {
        if (total_ == 0) throw DataError("confusion: accuracy of an empty matrix");
        std::int64_t trace = 0;
        for (int c = 0; c < k_; ++c) trace += tp(c);
        return static_cast<double>(trace) / static_cast<double>(total_);
    }

private:
    void check(int c) const {
        if (c < 0 || c >= k_) {
            throw DataError("confusion: class " + std::to_string(c) + " outside [0," +
                            std::to_string(k_) + ")");
        }
    }

    int k_;
    std::vector<std::int64_t> cells_;
    std::int64_t total_ = 0;
};

struct ClassReport {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
};

struct EvaluationReport {
    std::vector<ClassReport> per_class;
    double accuracy = 0.0;
    std::int64_t total_support = 0;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
};

// 0/0 ratios are defined as 0 throughout.
inline double safe_ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline ClassReport class_report(const ConfusionMatrix& m, int c, const std::string& label) {
    ClassReport r;
    r.label = label;
    const auto tp = m.tp(c);
    r.precision = safe_ratio(tp, tp + m.fp(c));
    r.recall = safe_ratio(tp, tp + m.fn(c));
    r.f1 = (r.precision + r.recall) == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    r.support = m.support(c);
    return r;
}

inline EvaluationReport build_report(const ConfusionMatrix& m,
                                     const std::vector<std::string>& class_names) {
    if (static_cast<int>(class_names.size()) != m.num_classes()) {
        throw DataError("report: " + std::to_string(class_names.size()) + " names for " +
                        std::to_string(m.num_classes()) + " classes");
    }
    EvaluationReport rep;
    rep.total_support = m.total();
    rep.accuracy = m.accuracy();
    const int k = m.num_classes();
    for (int c = 0; c < k; ++c) {
        rep.per_class.push_back(class_report(m, c, class_names[static_cast<std::size_t>(c)]));
    }
    for (const auto& cr : rep.per_class) {
        rep.macro_precision += cr.precision / k;
        rep.macro_recall += cr.recall / k;
        rep.macro_f1 += cr.f1 / k;
        const double w = safe_ratio(cr.support, rep.total_support);
        rep.weighted_precision += w * cr.precision;
        rep.weighted_recall += w * cr.recall;
        rep.weighted_f1 += w * cr.f1;
    }
    return rep;
}

namespace detail {

inline std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
    if (s.size() >= width) return s;
    return std::string(width - s.size(), ' ') + s;
}

} // namespace detail

// Classification-report style table, two decimal places.
inline std::string format_report_text(const EvaluationReport& rep) {
    std::size_t name_w = std::string("weighted avg").size();
    for (const auto& c : rep.per_class) name_w = std::max(name_w, c.label.size());
    std::size_t sup_w = std::string("support").size();
    for (const auto& c : rep.per_class) {
        sup_w = std::max(sup_w, std::to_string(c.support).size());
    }
    sup_w = std::max(sup_w, std::to_string(rep.total_support).size());

    std::ostringstream os;
    const std::size_t col = 10;
    os << detail::pad_left("", name_w) << detail::pad_left("precision", col + 1)
       << detail::pad_left("recall", col) << detail::pad_left("f1-score", col)
       << detail::pad_left("support", sup_w + 3) << "\n\n";
    for (const auto& c : rep.per_class) {
        os << detail::pad_left(c.label, name_w)
           << detail::pad_left(detail::fixed2(c.precision), col + 1)
           << detail::pad_left(detail::fixed2(c.recall), col)
           << detail::pad_left(detail::fixed2(c.f1), col)
           << detail::pad_left(std::to_string(c.support), sup_w + 3) << "\n";
    }
    os << "\n";
    os << detail::pad_left("accuracy", name_w) << detail::pad_left("", col + 1)
       << detail::pad_left("", col) << detail::pad_left(detail::fixed2(rep.accuracy), col)
       << detail::pad_left(std::to_string(rep.total_support), sup_w + 3) << "\n";
    os << detail::pad_left("macro avg", name_w)
       << detail::pad_left(detail::fixed2(rep.macro_precision), col + 1)
       << detail::pad_left(detail::fixed2(rep.macro_recall), col)
       << detail::pad_left(detail::fixed2(rep.macro_f1), col)
       << detail::pad_left(std::to_string(rep.total_support), sup_w + 3) << "\n";
    os << detail::pad_left("weighted avg", name_w)
       << detail::pad_left(detail::fixed2(rep.weighted_precision), col + 1)
       << detail::pad_left(detail::fixed2(rep.weighted_recall), col)
       << detail::pad_left(detail::fixed2(rep.weighted_f1), col)
       << detail::pad_left(std::to_string(rep.total_support), sup_w + 3) << "\n";
    return os.str();
}

// Header row then one row per true class: name, then k predicted-class counts.
inline std::string confusion_csv(const ConfusionMatrix& m,
                                 const std::vector<std::string>& class_names) {
    if (static_cast<int>(class_names.size()) != m.num_classes()) {
        throw DataError("confusion csv: name count mismatch");
    }
    std::ostringstream os;
    os << "true\\pred";
    for (const auto& n : class_names) os << ',' << n;
    os << '\n';
    for (int t = 0; t < m.num_classes(); ++t) {
        os << class_names[static_cast<std::size_t>(t)];
        for (int p = 0; p < m.num_classes(); ++p) os << ',' << m.at(t, p);
        os << '\n';
    }
    return os.str();
}

inline std::string history_csv(const TrainingHistory& history) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,test_loss,test_acc\n";
    char buf[160];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f,%.9f\n", e.epoch, e.train_loss,
                      e.train_acc, e.test_loss, e.test_acc);
        os << buf;
    }
    return os.str();
}

} // namespace flowhunter
