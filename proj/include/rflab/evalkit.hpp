#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rflab/errors.hpp"

namespace rflab {

/// Rows are true classes, columns predictions.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(std::size_t l = 0) : num_classes(l), counts(l * l, 0) {}

    std::int64_t& at(std::size_t t, std::size_t p) { return counts[t * num_classes + p]; }
    std::int64_t at(std::size_t t, std::size_t p) const { return counts[t * num_classes + p]; }

    std::int64_t total() const {
        std::int64_t n = 0;
        for (auto v : counts) n += v;
        return n;
    }
    std::int64_t row_sum(std::size_t t) const {
        std::int64_t n = 0;
        for (std::size_t p = 0; p < num_classes; ++p) n += at(t, p);
        return n;
    }
    std::int64_t col_sum(std::size_t p) const {
        std::int64_t n = 0;
        for (std::size_t t = 0; t < num_classes; ++t) n += at(t, p);
        return n;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t l) {
    if (preds.size() != labels.size())
        throw ArgumentError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm(l);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || preds[i] < 0 || static_cast<std::size_t>(labels[i]) >= l ||
            static_cast<std::size_t>(preds[i]) >= l)
            throw ArgumentError("confusion: class out of range at example " + std::to_string(i));
        ++cm.at(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(preds[i]));
    }
    return cm;
}

/// Micro-averaged recall: sum_i TP_i / sum_i (TP_i + FN_i).
inline double tpr(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw ArgumentError("tpr: empty confusion matrix");
    std::int64_t tp = 0;
    for (std::size_t i = 0; i < cm.num_classes; ++i) tp += cm.at(i, i);
    return static_cast<double>(tp) / static_cast<double>(total);
}

/// Macro-averaged false positive rate: mean_i FP_i / (FP_i + TN_i).
inline double fpr(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw ArgumentError("fpr: empty confusion matrix");
    double sum = 0.0;
    for (std::size_t i = 0; i < cm.num_classes; ++i) {
        const std::int64_t fp = cm.col_sum(i) - cm.at(i, i);
        const std::int64_t tn = total - cm.row_sum(i) - cm.col_sum(i) + cm.at(i, i);
        if (fp + tn == 0)
            throw ArgumentError("fpr: class " + std::to_string(i) + " has no negative examples");
        sum += static_cast<double>(fp) / static_cast<double>(fp + tn);
    }
    return sum / static_cast<double>(cm.num_classes);
}

/// Balanced top-1 accuracy: arithmetic mean of per-class recall.
inline double top1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ArgumentError("top1: empty confusion matrix");
    double sum = 0.0;
    for (std::size_t i = 0; i < cm.num_classes; ++i) {
        const std::int64_t row = cm.row_sum(i);
        if (row == 0) throw ArgumentError("top1: class " + std::to_string(i) + " has no true examples");
        sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    }
    return sum / static_cast<double>(cm.num_classes);
}

/// "0.905 / 0.011 / 0.905"-style report line.
inline std::string format_kpi_line(double tpr_v, double fpr_v, double top1_v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << tpr_v << " / " << fpr_v << " / " << top1_v;
    return os.str();
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot create confusion csv: " + path);
    for (std::size_t t = 0; t < cm.num_classes; ++t) {
        for (std::size_t p = 0; p < cm.num_classes; ++p) os << cm.at(t, p) << (p + 1 < cm.num_classes ? "," : "");
        os << "\n";
    }
}

} // namespace rflab
