#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "s2d/errors.hpp"

namespace s2d {

/// Rows = true class, columns = predicted class.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const { return classes_; }

    void record(std::size_t truth, std::size_t pred) {
        if (truth >= classes_ || pred >= classes_) throw ContractError("confusion: class index out of range");
        ++counts_[truth * classes_ + pred];
    }

    std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }

    std::size_t total() const {
        std::size_t n = 0;
        for (std::size_t c : counts_) n += c;
        return n;
    }

    std::size_t row_total(std::size_t truth) const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < classes_; ++p) n += counts_[truth * classes_ + p];
        return n;
    }

private:
    std::size_t classes_ = 0;
    std::vector<std::size_t> counts_;
};

struct MetricsReport {
    double war = 0.0; // overall accuracy
    double uar = 0.0; // mean per-class recall over non-empty classes
    std::vector<double> per_class_recall;    // -1 marks an empty class
    std::vector<std::size_t> empty_classes;  // excluded from UAR, recorded
};

/// WAR = trace/total; UAR = mean per-class recall. Classes with no evaluated
/// samples are excluded from UAR and listed in the report.
inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.classes() == 0 || cm.total() == 0) throw ContractError("compute_metrics: empty confusion matrix");
    MetricsReport rep;
    std::size_t diag = 0;
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        diag += cm.at(c, c);
        const std::size_t row = cm.row_total(c);
        if (row == 0) {
            rep.per_class_recall.push_back(-1.0);
            rep.empty_classes.push_back(c);
            continue;
        }
        const double r = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        rep.per_class_recall.push_back(r);
        recall_sum += r;
        ++present;
    }
    rep.war = static_cast<double>(diag) / static_cast<double>(cm.total());
    rep.uar = recall_sum / static_cast<double>(present);
    return rep;
}

/// Argmax with ties broken toward the lower class index.
inline std::size_t argmax_class(const double* scores, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
        if (scores[c] > scores[best]) best = c;
    return best;
}

} // namespace s2d
