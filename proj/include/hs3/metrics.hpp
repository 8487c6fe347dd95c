#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hs3/core.hpp"

namespace hs3 {

// K x K count accumulator, counts(t, p) = pixels with true class t predicted
// as p. Ignored pixels contribute to no cell. The single source for every
// metric the harness reports.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int k)
        : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {}

    int num_classes() const { return k_; }
    std::uint64_t at(int t, int p) const {
        return counts_[static_cast<std::size_t>(t) * k_ + p];
    }
    std::uint64_t& at(int t, int p) {
        return counts_[static_cast<std::size_t>(t) * k_ + p];
    }
    std::uint64_t total() const;
    std::uint64_t row_sum(int t) const;
    std::uint64_t col_sum(int p) const;

private:
    int k_ = 0;
    std::vector<std::uint64_t> counts_;
};

void cm_update(ConfusionMatrix& cm, const LabelMap& truth, const LabelMap& pred);
ConfusionMatrix cm_merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

struct ScoreSet {
    double acc_micro = 0.0;
    double acc_macro = 0.0;
    double f1_macro = 0.0;
    double jaccard_macro = 0.0;
    std::vector<double> recall;      // length K
    std::vector<double> precision;
    std::vector<double> f1;
    std::vector<double> jaccard;
    // Classes that entered the macro means. Accuracy (mean recall) averages
    // over classes with ground-truth support; F1/Jaccard additionally admit
    // classes that were only predicted (they contribute zeros).
    std::vector<bool> in_acc_macro;      // row_sum > 0
    std::vector<bool> in_f1j_macro;      // row_sum > 0 or col_sum > 0

    double by_name(const std::string& metric) const;  // acc_micro|acc_macro|f1_macro|jaccard_macro
};

// All arithmetic in double over exact integer counts. Classes with neither
// ground-truth nor predicted pixels are excluded from every macro mean.
ScoreSet scores(const ConfusionMatrix& cm);

// Cross-dataset summary statistics: equal-weight mean and minimum.
double summary_avg(const std::map<std::string, double>& per_dataset);
double summary_worst_case(const std::map<std::string, double>& per_dataset);

// Percent rendering used everywhere a score is reported: two decimals,
// round half away from zero. Comparisons between reports operate on these
// rounded values so deltas match published tables.
double percent2(double score01);
std::string format_percent(double score01);

extern const char* kScoreCsvHeader;  // dataset,approach,data,acc_micro,...
std::string score_csv_row(const std::string& dataset, const std::string& approach,
                          const std::string& variant, const ScoreSet& s);

}  // namespace hs3
