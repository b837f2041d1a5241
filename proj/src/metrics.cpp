#include "roct/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace roct {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names) : classes(std::move(class_names)) {
    if (classes.empty()) throw std::invalid_argument("confusion: class list is empty");
    counts.assign(static_cast<std::size_t>(k()) * k(), 0);
}

std::int64_t ConfusionMatrix::at(int true_idx, int pred_idx) const {
    if (true_idx < 0 || true_idx >= k() || pred_idx < 0 || pred_idx >= k()) {
        throw std::out_of_range("confusion: cell index outside the matrix");
    }
    return counts[static_cast<std::size_t>(true_idx) * k() + pred_idx];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

std::int64_t ConfusionMatrix::row_sum(int true_idx) const {
    std::int64_t t = 0;
    for (int p = 0; p < k(); ++p) t += at(true_idx, p);
    return t;
}

std::int64_t ConfusionMatrix::col_sum(int pred_idx) const {
    std::int64_t t = 0;
    for (int r = 0; r < k(); ++r) t += at(r, pred_idx);
    return t;
}

void ConfusionMatrix::add(const std::string& true_label, const std::string& predicted_label) {
    auto index_of = [this](const std::string& label) {
        const auto it = std::find(classes.begin(), classes.end(), label);
        if (it == classes.end()) throw std::invalid_argument("confusion: unknown label '" + label + "'");
        return static_cast<int>(it - classes.begin());
    };
    add_index(index_of(true_label), index_of(predicted_label));
}

void ConfusionMatrix::add_index(int true_idx, int pred_idx) {
    if (true_idx < 0 || true_idx >= k() || pred_idx < 0 || pred_idx >= k()) {
        throw std::invalid_argument("confusion: label index outside the class list");
    }
    counts[static_cast<std::size_t>(true_idx) * k() + pred_idx]++;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes != classes) throw std::invalid_argument("confusion: merging matrices over different classes");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

double overall_accuracy(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    std::int64_t trace = 0;
    for (int i = 0; i < cm.k(); ++i) trace += cm.at(i, i);
    return static_cast<double>(trace) / static_cast<double>(n);
}

double specificity(const ConfusionMatrix& cm, int class_idx) {
    const std::int64_t n = cm.total();
    if (n == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    const std::int64_t diag = cm.at(class_idx, class_idx);
    const std::int64_t false_pos = cm.col_sum(class_idx) - diag;
    const std::int64_t true_neg = n - cm.row_sum(class_idx) - cm.col_sum(class_idx) + diag;
    const std::int64_t denom = true_neg + false_pos;
    if (denom == 0) {
        throw std::invalid_argument("metrics: class '" + cm.classes[static_cast<std::size_t>(class_idx)] +
                                    "' has no negative samples");
    }
    return static_cast<double>(true_neg) / static_cast<double>(denom);
}

double mean_specificity(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    double acc = 0.0;
    for (int c = 0; c < cm.k(); ++c) {
        acc += specificity(cm, c) * (static_cast<double>(cm.row_sum(c)) / static_cast<double>(n));
    }
    return acc;
}

MetricsReport compute_report(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.overall_accuracy = overall_accuracy(cm);
    r.mean_sensitivity = r.overall_accuracy;
    for (int c = 0; c < cm.k(); ++c) {
        r.per_class_specificity[cm.classes[static_cast<std::size_t>(c)]] = specificity(cm, c);
    }
    r.mean_specificity = mean_specificity(cm);
    return r;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("metrics: cannot write '" + path + "'");
    os << "true\\pred";
    for (const auto& c : cm.classes) os << "," << c;
    os << "\n";
    for (int r = 0; r < cm.k(); ++r) {
        os << cm.classes[static_cast<std::size_t>(r)];
        for (int p = 0; p < cm.k(); ++p) os << "," << cm.at(r, p);
        os << "\n";
    }
    if (!os) throw std::runtime_error("metrics: write to '" + path + "' failed");
}

void write_metrics_json(const MetricsReport& report, const std::string& path) {
    nlohmann::json j;
    j["overall_accuracy"] = report.overall_accuracy;
    j["mean_sensitivity"] = report.mean_sensitivity;
    j["per_class_specificity"] = report.per_class_specificity;
    j["mean_specificity"] = report.mean_specificity;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("metrics: cannot write '" + path + "'");
    os << j.dump(2) << "\n";
}

}  // namespace roct
