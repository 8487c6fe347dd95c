#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hs3/metrics.hpp"
#include "hs3/models.hpp"
#include "hs3/train.hpp"

namespace hs3 {

// One column of the experiment matrix: a named model recipe applied to one
// data variant on every benchmark dataset. The per-dataset architecture map
// exists so a plan can *state* a mixed design; validation rejects it.
struct ApproachSpec {
    std::string name;
    std::string variant = "hsi";  // hsi | pca1 | prgb
    ModelConfig model;            // in_channels / num_classes are set per cell
    std::map<std::string, Architecture> dataset_architecture;
    std::string pretrain_checkpoint;  // required when model.pretrain_mode != none
};

struct BenchmarkPlan {
    std::vector<ApproachSpec> approaches;
    std::vector<std::string> datasets;  // must equal the registered set
    std::string output_dir;
    std::map<std::string, TrainConfig> train_configs;  // per-dataset overrides
};

std::string plan_to_json(const BenchmarkPlan& plan);
BenchmarkPlan plan_from_json(const std::string& text);

// Fail-fast guideline enforcement: every registered dataset present, nothing
// unregistered, one architecture per approach, well-formed approaches.
// Violations raise "protocol violation" before any training starts.
void validate_plan(const BenchmarkPlan& plan,
                   const std::vector<std::string>& registered);

// The plan's override for a dataset, or the benchmark defaults.
TrainConfig resolve_train_config(const BenchmarkPlan& plan, const std::string& dataset);

// A registered benchmark dataset made runnable: the loader returns the
// samples of one (variant, split) with preprocessing already applied.
struct BenchDataset {
    std::string name;
    int num_classes = 0;
    TrainConfig train_config;
    std::function<std::vector<Sample>(const std::string& variant, const std::string& split)>
        load;
};

struct CellResult {
    std::string dataset;
    std::string approach;
    std::string variant;
    std::optional<ScoreSet> scores;  // empty = failed
    std::string failure;
    std::string run_id;
    std::optional<RunRecord> record;  // present for executed cells
};

struct ApproachSummary {
    std::string approach;
    std::string variant;
    bool complete = false;  // every cell of the approach scored
    std::map<std::string, double> avg;    // metric -> raw score in [0, 1]
    std::map<std::string, double> worst;
};

struct BenchmarkReport {
    std::vector<std::string> datasets;    // registration order
    std::vector<std::string> approaches;  // plan order
    std::vector<CellResult> cells;
    std::vector<ApproachSummary> summaries;
    std::string hardware;
};

extern const std::vector<std::string> kReportMetrics;  // four macro columns

// Recomputes the Average / Worst-Case rows from the report's own cells.
std::vector<ApproachSummary> compute_summaries(const BenchmarkReport& report);

// Trains and evaluates every (approach x dataset) cell. A failing cell is
// recorded and the run continues; the plan itself is validated first.
// When runs_dir is set each cell persists its run record underneath it.
BenchmarkReport run_benchmark(const BenchmarkPlan& plan,
                              const std::vector<BenchDataset>& datasets,
                              const std::string& runs_dir = "");

// Renderings are pure functions of the report: re-emitting is byte-identical.
// Both verify completeness (every cell present or failure-marked) and that
// the stored summaries match a recomputation before producing output.
std::string report_to_csv(const BenchmarkReport& report);
std::string report_to_markdown(const BenchmarkReport& report);
std::string provenance_markdown(const BenchmarkReport& report);

// Full-fidelity serialization (cells, failures, run records) so a report can
// be re-emitted or compared later; summaries are recomputed on load.
std::string report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const std::string& text);

// Writes report.csv / report.md / provenance.md plus report.json; format
// selects "csv", "markdown" or "all". Returns the written paths.
std::vector<std::string> emit_report(const BenchmarkReport& report,
                                     const std::string& out_dir,
                                     const std::string& format = "all");

// Signed percentage-point differences b - a over the rounded two-decimal
// values that reports display, so deltas match published tables.
struct DeltaEntry {
    std::string row;  // dataset name, "average" or "worst_case"
    std::string variant;
    std::string approach_a;
    std::string approach_b;
    std::map<std::string, double> delta;  // metric -> pp
};

struct DeltaTable {
    std::vector<DeltaEntry> rows;
};

DeltaTable compare_runs(const BenchmarkReport& a, const BenchmarkReport& b);
std::string delta_table_to_text(const DeltaTable& table);

}  // namespace hs3
