#include "hs3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace hs3 {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
}

std::uint64_t ConfusionMatrix::row_sum(int t) const {
    std::uint64_t s = 0;
    for (int p = 0; p < k_; ++p) s += at(t, p);
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(int p) const {
    std::uint64_t s = 0;
    for (int t = 0; t < k_; ++t) s += at(t, p);
    return s;
}

void cm_update(ConfusionMatrix& cm, const LabelMap& truth, const LabelMap& pred) {
    if (truth.height != pred.height || truth.width != pred.width)
        fail_validation("shape error: truth and prediction maps differ");
    const int k = cm.num_classes();
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const label_t t = truth.labels[i];
        if (t == kIgnore) continue;
        const label_t p = pred.labels[i];
        if (static_cast<int>(p) >= k)
            fail_validation("invalid prediction " + std::to_string(p) +
                            " (K=" + std::to_string(k) + ")");
        if (static_cast<int>(t) >= k)
            fail_validation("invalid truth label " + std::to_string(t) +
                            " (K=" + std::to_string(k) + ")");
        ++cm.at(t, p);
    }
}

ConfusionMatrix cm_merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    if (a.num_classes() != b.num_classes())
        fail_validation("incompatible matrices: K mismatch");
    ConfusionMatrix out(a.num_classes());
    for (int t = 0; t < a.num_classes(); ++t)
        for (int p = 0; p < a.num_classes(); ++p)
            out.at(t, p) = a.at(t, p) + b.at(t, p);
    return out;
}

ScoreSet scores(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    const std::uint64_t total = cm.total();
    if (total == 0) fail_validation("no evaluated pixels");

    ScoreSet s;
    s.recall.assign(k, 0.0);
    s.precision.assign(k, 0.0);
    s.f1.assign(k, 0.0);
    s.jaccard.assign(k, 0.0);
    s.in_acc_macro.assign(k, false);
    s.in_f1j_macro.assign(k, false);

    std::uint64_t trace = 0;
    double recall_sum = 0.0, f1_sum = 0.0, jac_sum = 0.0;
    int n_acc = 0, n_f1j = 0;
    for (int c = 0; c < k; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t row = cm.row_sum(c);
        const std::uint64_t col = cm.col_sum(c);
        trace += tp;
        const double fp = static_cast<double>(col - tp);
        const double fn = static_cast<double>(row - tp);

        if (row > 0) {
            s.recall[c] = static_cast<double>(tp) / static_cast<double>(row);
            s.in_acc_macro[c] = true;
            recall_sum += s.recall[c];
            ++n_acc;
        }
        if (col > 0)
            s.precision[c] = static_cast<double>(tp) / static_cast<double>(col);
        if (row > 0 || col > 0) {
            const double pr = s.precision[c], rc = s.recall[c];
            s.f1[c] = (pr + rc > 0.0) ? 2.0 * pr * rc / (pr + rc) : 0.0;
            const double denom = static_cast<double>(tp) + fp + fn;
            s.jaccard[c] = (denom > 0.0) ? static_cast<double>(tp) / denom : 0.0;
            s.in_f1j_macro[c] = true;
            f1_sum += s.f1[c];
            jac_sum += s.jaccard[c];
            ++n_f1j;
        }
    }

    s.acc_micro = static_cast<double>(trace) / static_cast<double>(total);
    s.acc_macro = n_acc > 0 ? recall_sum / n_acc : 0.0;
    s.f1_macro = n_f1j > 0 ? f1_sum / n_f1j : 0.0;
    s.jaccard_macro = n_f1j > 0 ? jac_sum / n_f1j : 0.0;
    return s;
}

double ScoreSet::by_name(const std::string& metric) const {
    if (metric == "acc_micro") return acc_micro;
    if (metric == "acc_macro") return acc_macro;
    if (metric == "f1_macro") return f1_macro;
    if (metric == "jaccard_macro") return jaccard_macro;
    fail_validation("unknown metric: " + metric);
}

double summary_avg(const std::map<std::string, double>& per_dataset) {
    if (per_dataset.empty()) fail_validation("summary over empty dataset map");
    double sum = 0.0;
    for (const auto& [_, v] : per_dataset) sum += v;
    return sum / static_cast<double>(per_dataset.size());
}

double summary_worst_case(const std::map<std::string, double>& per_dataset) {
    if (per_dataset.empty()) fail_validation("summary over empty dataset map");
    double worst = per_dataset.begin()->second;
    for (const auto& [_, v] : per_dataset) worst = std::min(worst, v);
    return worst;
}

double percent2(double score01) {
    const double pct = score01 * 100.0;
    return std::round(pct * 100.0) / 100.0;
}

std::string format_percent(double score01) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", percent2(score01));
    return buf;
}

const char* kScoreCsvHeader = "dataset,approach,data,acc_micro,acc_macro,f1_macro,jaccard_macro";

std::string score_csv_row(const std::string& dataset, const std::string& approach,
                          const std::string& variant, const ScoreSet& s) {
    return dataset + "," + approach + "," + variant + "," +
           format_percent(s.acc_micro) + "," + format_percent(s.acc_macro) + "," +
           format_percent(s.f1_macro) + "," + format_percent(s.jaccard_macro);
}

}  // namespace hs3
