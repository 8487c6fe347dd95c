#include <doctest.h>

#include <cmath>
#include <map>

#include "hs3/metrics.hpp"

using namespace hs3;

namespace {

LabelMap map_from(const std::vector<label_t>& vals, int h, int w) {
    LabelMap m(h, w);
    m.labels = vals;
    return m;
}

// Independent of ConfusionMatrix: tallies TP/FP/FN per class straight from
// the pixel lists and applies the textbook formulas.
struct BruteScores {
    double acc_micro, acc_macro, f1_macro, jaccard_macro;
};

BruteScores brute_force_scores(const std::vector<label_t>& truth,
                               const std::vector<label_t>& pred, int k) {
    std::vector<double> tp(k, 0), fp(k, 0), fn(k, 0);
    double correct = 0, total = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == kIgnore) continue;
        total += 1;
        if (truth[i] == pred[i]) {
            correct += 1;
            tp[truth[i]] += 1;
        } else {
            fn[truth[i]] += 1;
            fp[pred[i]] += 1;
        }
    }
    BruteScores out{};
    out.acc_micro = correct / total;
    double rec_sum = 0, f1_sum = 0, jac_sum = 0;
    int n_rec = 0, n_f1 = 0;
    for (int c = 0; c < k; ++c) {
        const double support = tp[c] + fn[c];
        const double predicted = tp[c] + fp[c];
        if (support > 0) {
            rec_sum += tp[c] / support;
            ++n_rec;
        }
        if (support > 0 || predicted > 0) {
            const double prec = predicted > 0 ? tp[c] / predicted : 0.0;
            const double rec = support > 0 ? tp[c] / support : 0.0;
            f1_sum += (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
            jac_sum += tp[c] / (tp[c] + fp[c] + fn[c]);
            ++n_f1;
        }
    }
    out.acc_macro = rec_sum / n_rec;
    out.f1_macro = f1_sum / n_f1;
    out.jaccard_macro = jac_sum / n_f1;
    return out;
}

}  // namespace

TEST_CASE("cm_update counts direct tallies and skips ignored pixels") {
    ConfusionMatrix cm(2);
    cm_update(cm, map_from({0, 1}, 1, 2), map_from({0, 0}, 1, 2));
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.at(1, 1) == 0);

    ConfusionMatrix cm2(2);
    cm_update(cm2, map_from({kIgnore, 1}, 1, 2), map_from({0, 1}, 1, 2));
    CHECK(cm2.at(0, 0) == 0);
    CHECK(cm2.at(1, 1) == 1);
    CHECK(cm2.total() == 1);
}

TEST_CASE("cm_update rejects shape and range errors") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_WITH_AS(cm_update(cm, LabelMap(2, 2), LabelMap(2, 3)),
                         doctest::Contains("shape error"), Error);
    CHECK_THROWS_WITH_AS(
        cm_update(cm, map_from({0}, 1, 1), map_from({5}, 1, 1)),
        doctest::Contains("invalid prediction"), Error);
}

TEST_CASE("cm_update equals a brute-force per-pixel tally on random maps") {
    Rng rng(99);
    const int k = 4;
    for (int trial = 0; trial < 20; ++trial) {
        LabelMap truth(8, 8), pred(8, 8);
        for (auto& v : truth.labels)
            v = uniform_unit(rng) < 0.15 ? kIgnore
                                         : static_cast<label_t>(uniform_index(rng, k));
        for (auto& v : pred.labels) v = static_cast<label_t>(uniform_index(rng, k));
        ConfusionMatrix cm(k);
        cm_update(cm, truth, pred);
        for (int t = 0; t < k; ++t)
            for (int p = 0; p < k; ++p) {
                std::uint64_t expect = 0;
                for (std::size_t i = 0; i < truth.labels.size(); ++i)
                    if (truth.labels[i] == t && pred.labels[i] == p) ++expect;
                CHECK(cm.at(t, p) == expect);
            }
    }
}

TEST_CASE("cm_merge is commutative with zero identity and matches concatenation") {
    Rng rng(3);
    ConfusionMatrix a(3), b(3), zero(3);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) {
            a.at(t, p) = uniform_index(rng, 10);
            b.at(t, p) = uniform_index(rng, 10);
        }
    auto ab = cm_merge(a, b);
    auto ba = cm_merge(b, a);
    auto a0 = cm_merge(a, zero);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) {
            CHECK(ab.at(t, p) == ba.at(t, p));
            CHECK(ab.at(t, p) == a.at(t, p) + b.at(t, p));
            CHECK(a0.at(t, p) == a.at(t, p));
        }
    CHECK_THROWS_WITH_AS(cm_merge(a, ConfusionMatrix(4)),
                         doctest::Contains("incompatible"), Error);
}

TEST_CASE("majority-class example: micro 99 percent, macro 50 percent") {
    // 100 pixels, 99 of class 0, all predicted 0.
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 99;
    cm.at(1, 0) = 1;
    auto s = scores(cm);
    CHECK(s.acc_micro == doctest::Approx(0.99).epsilon(1e-15));
    CHECK(s.acc_macro == doctest::Approx(0.50).epsilon(1e-15));
}

TEST_CASE("perfect diagonal gives all ones") {
    ConfusionMatrix cm(3);
    for (int c = 0; c < 3; ++c) cm.at(c, c) = 7 + c;
    auto s = scores(cm);
    CHECK(s.acc_micro == 1.0);
    CHECK(s.acc_macro == 1.0);
    CHECK(s.f1_macro == 1.0);
    CHECK(s.jaccard_macro == 1.0);
}

TEST_CASE("scores equal brute-force formulas on random maps") {
    Rng rng(1234);
    for (int trial = 0; trial < 30; ++trial) {
        const int k = 6;
        std::vector<label_t> truth(64), pred(64);
        for (auto& v : truth)
            v = uniform_unit(rng) < 0.1 ? kIgnore
                                        : static_cast<label_t>(uniform_index(rng, k));
        for (auto& v : pred) v = static_cast<label_t>(uniform_index(rng, k));
        ConfusionMatrix cm(k);
        cm_update(cm, map_from(truth, 8, 8), map_from(pred, 8, 8));
        if (cm.total() == 0) continue;
        auto s = scores(cm);
        auto b = brute_force_scores(truth, pred, k);
        CHECK(std::fabs(s.acc_micro - b.acc_micro) < 1e-12);
        CHECK(std::fabs(s.acc_macro - b.acc_macro) < 1e-12);
        CHECK(std::fabs(s.f1_macro - b.f1_macro) < 1e-12);
        CHECK(std::fabs(s.jaccard_macro - b.jaccard_macro) < 1e-12);
    }
}

TEST_CASE("empty classes are excluded; predicted-only classes contribute zero") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 10;  // class 2 never appears in truth or prediction
    cm.at(1, 0) = 2;
    cm.at(1, 1) = 3;
    auto s = scores(cm);
    CHECK_FALSE(s.in_f1j_macro[2]);
    CHECK_FALSE(s.in_acc_macro[2]);
    // class 1 has truth, class 0 has truth: both in both means
    CHECK(s.in_acc_macro[0]);
    CHECK(s.in_f1j_macro[1]);

    // predicted-only class: truth never 2 but prediction sometimes 2
    ConfusionMatrix cm2(3);
    cm2.at(0, 0) = 5;
    cm2.at(1, 2) = 4;
    auto s2 = scores(cm2);
    CHECK(s2.in_f1j_macro[2]);
    CHECK_FALSE(s2.in_acc_macro[2]);
    CHECK(s2.f1[2] == 0.0);
    CHECK(s2.jaccard[2] == 0.0);
}

TEST_CASE("scores on empty matrix is an error") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_WITH_AS(scores(cm), doctest::Contains("no evaluated pixels"), Error);
}

TEST_CASE("permutation of class labels permutes per-class vectors only") {
    Rng rng(7);
    const int k = 5;
    ConfusionMatrix cm(k);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) cm.at(t, p) = uniform_index(rng, 20);
    const std::vector<int> perm = {3, 0, 4, 1, 2};
    ConfusionMatrix pm(k);
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) pm.at(perm[t], perm[p]) = cm.at(t, p);
    auto s = scores(cm);
    auto sp = scores(pm);
    CHECK(s.acc_micro == doctest::Approx(sp.acc_micro).epsilon(1e-14));
    CHECK(s.acc_macro == doctest::Approx(sp.acc_macro).epsilon(1e-14));
    CHECK(s.f1_macro == doctest::Approx(sp.f1_macro).epsilon(1e-14));
    CHECK(s.jaccard_macro == doctest::Approx(sp.jaccard_macro).epsilon(1e-14));
    for (int c = 0; c < k; ++c) {
        CHECK(s.recall[c] == doctest::Approx(sp.recall[perm[c]]).epsilon(1e-14));
        CHECK(s.jaccard[c] == doctest::Approx(sp.jaccard[perm[c]]).epsilon(1e-14));
    }
}

TEST_CASE("micro accuracy is the support-weighted mean of recalls") {
    Rng rng(11);
    ConfusionMatrix cm(4);
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 4; ++p) cm.at(t, p) = uniform_index(rng, 30);
    auto s = scores(cm);
    double weighted = 0.0;
    for (int c = 0; c < 4; ++c)
        weighted += s.recall[c] * static_cast<double>(cm.row_sum(c)) /
                    static_cast<double>(cm.total());
    CHECK(s.acc_micro == doctest::Approx(weighted).epsilon(1e-13));
}

TEST_CASE("per-class Jaccard never exceeds F1, equality only at 0 or 1") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        ConfusionMatrix cm(4);
        for (int t = 0; t < 4; ++t)
            for (int p = 0; p < 4; ++p) cm.at(t, p) = uniform_index(rng, 12);
        if (cm.total() == 0) continue;
        auto s = scores(cm);
        for (int c = 0; c < 4; ++c) {
            if (!s.in_f1j_macro[c]) continue;
            CHECK(s.jaccard[c] <= s.f1[c] + 1e-15);
            if (std::fabs(s.jaccard[c] - s.f1[c]) < 1e-15)
                CHECK((s.jaccard[c] < 1e-15 || std::fabs(s.jaccard[c] - 1.0) < 1e-15));
        }
    }
}

TEST_CASE("adding ignored pixels changes no score") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 10;
    cm.at(1, 1) = 5;
    cm.at(0, 1) = 2;
    auto before = scores(cm);
    LabelMap truth(2, 2, kIgnore), pred(2, 2, 0);
    cm_update(cm, truth, pred);
    auto after = scores(cm);
    CHECK(before.acc_micro == after.acc_micro);
    CHECK(before.acc_macro == after.acc_macro);
    CHECK(before.f1_macro == after.f1_macro);
    CHECK(before.jaccard_macro == after.jaccard_macro);
}

TEST_CASE("streaming chunked accumulation equals one pass exactly") {
    Rng rng(5);
    const int k = 3;
    LabelMap truth(16, 16), pred(16, 16);
    for (auto& v : truth.labels) v = static_cast<label_t>(uniform_index(rng, k));
    for (auto& v : pred.labels) v = static_cast<label_t>(uniform_index(rng, k));
    ConfusionMatrix whole(k);
    cm_update(whole, truth, pred);

    // Rows streamed as separate chunks, merged pairwise.
    ConfusionMatrix merged(k);
    for (int r = 0; r < 16; ++r) {
        LabelMap tr(1, 16), pr(1, 16);
        for (int c = 0; c < 16; ++c) {
            tr.at(0, c) = truth.at(r, c);
            pr.at(0, c) = pred.at(r, c);
        }
        ConfusionMatrix chunk(k);
        cm_update(chunk, tr, pr);
        merged = cm_merge(merged, chunk);
    }
    for (int t = 0; t < k; ++t)
        for (int p = 0; p < k; ++p) CHECK(merged.at(t, p) == whole.at(t, p));
}

TEST_CASE("summary statistics: mean and minimum over datasets") {
    CHECK(summary_avg({{"a", 1.0}}) == 1.0);
    CHECK(summary_worst_case({{"a", 0.3}}) == 0.3);
    CHECK(summary_avg({{"a", 0.0}, {"b", 1.0}}) == 0.5);

    // Published per-dataset Jaccard rows for the regularized U-Net.
    std::map<std::string, double> j = {
        {"hcv", 0.4223}, {"hyko2", 0.5864}, {"hsidrive", 0.7218}};
    CHECK(format_percent(summary_avg(j)) == "57.68");
    CHECK(format_percent(summary_worst_case(j)) == "42.23");
    CHECK(summary_worst_case(j) <= summary_avg(j));
}

TEST_CASE("percent rendering rounds to two decimals") {
    CHECK(format_percent(0.576833) == "57.68");
    CHECK(format_percent(1.0) == "100.00");
    CHECK(format_percent(0.0) == "0.00");
    CHECK(format_percent(0.12345) == "12.35");
}

TEST_CASE("csv row mirrors the published column layout") {
    ScoreSet s;
    s.acc_micro = 0.8763;
    s.acc_macro = 0.5414;
    s.f1_macro = 0.5326;
    s.jaccard_macro = 0.4223;
    CHECK(score_csv_row("hcv", "runet", "hsi", s) ==
          "hcv,runet,hsi,87.63,54.14,53.26,42.23");
}
