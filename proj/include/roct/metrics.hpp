// Confusion matrix bookkeeping and the evaluation metrics derived from it:
// overall accuracy, per-class specificity, and count-weighted mean specificity.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace roct {

// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::int64_t> counts;  // K*K row-major

    explicit ConfusionMatrix(std::vector<std::string> class_names);

    int k() const { return static_cast<int>(classes.size()); }
    std::int64_t at(int true_idx, int pred_idx) const;
    std::int64_t total() const;
    std::int64_t row_sum(int true_idx) const;   // N_C, samples of the class
    std::int64_t col_sum(int pred_idx) const;

    void add(const std::string& true_label, const std::string& predicted_label);
    void add_index(int true_idx, int pred_idx);

    // elementwise sum, for matrices accumulated on separate shards
    void merge(const ConfusionMatrix& other);
};

struct MetricsReport {
    double overall_accuracy = 0.0;
    double mean_sensitivity = 0.0;  // equal to overall_accuracy by definition
    std::map<std::string, double> per_class_specificity;
    double mean_specificity = 0.0;
};

// trace / total
double overall_accuracy(const ConfusionMatrix& cm);

// CTN / (CTN + CFP) where CTN and CFP count samples outside the class's row
double specificity(const ConfusionMatrix& cm, int class_idx);

// Per-class specificity averaged with weights N_C / total. The raw sum of
// S_C * N_C would exceed 1; normalizing by the sample count keeps it a
// weighted average as intended.
double mean_specificity(const ConfusionMatrix& cm);

MetricsReport compute_report(const ConfusionMatrix& cm);

// Header row and column of class names, integer cells.
void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path);
void write_metrics_json(const MetricsReport& report, const std::string& path);

}  // namespace roct
