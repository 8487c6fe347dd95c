#include "hs3/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "score_json.hpp"

namespace hs3 {

const std::vector<std::string> kReportMetrics = {"acc_micro", "acc_macro", "f1_macro",
                                                 "jaccard_macro"};

namespace {

const std::set<std::string> kVariants = {"hsi", "pca1", "prgb"};

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_runtime("cannot write " + path);
    out << text;
    if (!out) fail_runtime("cannot write " + path);
}

std::string sanitize_component(std::string s) {
    for (char& c : s)
        if (c == '/' || c == '\\' || c == ' ') c = '-';
    return s;
}

std::string fmt3(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

// Every (dataset, approach) pair must appear exactly once, failure-marked or
// scored, and the stored summary rows must match a recomputation.
void verify_report(const BenchmarkReport& report) {
    std::map<std::pair<std::string, std::string>, int> seen;
    for (const auto& cell : report.cells) {
        if (std::find(report.datasets.begin(), report.datasets.end(), cell.dataset) ==
            report.datasets.end())
            fail_validation("report: cell references unknown dataset '" + cell.dataset +
                            "'");
        if (std::find(report.approaches.begin(), report.approaches.end(),
                      cell.approach) == report.approaches.end())
            fail_validation("report: cell references unknown approach '" +
                            cell.approach + "'");
        if (++seen[{cell.dataset, cell.approach}] > 1)
            fail_validation("report: duplicate cell for dataset '" + cell.dataset +
                            "' approach '" + cell.approach + "'");
        if (!cell.scores && cell.failure.empty())
            fail_validation("report: cell for dataset '" + cell.dataset +
                            "' approach '" + cell.approach +
                            "' is neither scored nor failure-marked");
    }
    for (const auto& d : report.datasets)
        for (const auto& a : report.approaches)
            if (!seen.count({d, a}))
                fail_validation("report incomplete: missing cell for dataset '" + d +
                                "' approach '" + a + "'");

    const auto recomputed = compute_summaries(report);
    if (recomputed.size() != report.summaries.size())
        fail_runtime("summary self-check failed: row count mismatch");
    for (std::size_t i = 0; i < recomputed.size(); ++i) {
        const auto& r = recomputed[i];
        const auto& s = report.summaries[i];
        if (r.approach != s.approach || r.variant != s.variant ||
            r.complete != s.complete || r.avg != s.avg || r.worst != s.worst)
            fail_runtime("summary self-check failed: stored row for approach '" +
                         s.approach + "' does not match the report's cells");
    }
}

const CellResult* find_cell(const BenchmarkReport& report, const std::string& dataset,
                            const std::string& approach) {
    for (const auto& cell : report.cells)
        if (cell.dataset == dataset && cell.approach == approach) return &cell;
    return nullptr;
}

std::string failed_csv_row(const CellResult& cell) {
    return cell.dataset + "," + cell.approach + "," + cell.variant +
           ",failed,failed,failed,failed";
}

// One comparable row of a report: a scored cell or a complete summary row.
struct CompareItem {
    std::string row;  // dataset, "average" or "worst_case"
    std::string variant;
    std::string approach;
    std::map<std::string, double> values;  // metric -> raw score
    bool matched = false;
};

std::vector<CompareItem> compare_items(const BenchmarkReport& report) {
    std::vector<CompareItem> items;
    for (const auto& cell : report.cells) {
        if (!cell.scores) continue;
        CompareItem it;
        it.row = cell.dataset;
        it.variant = cell.variant;
        it.approach = cell.approach;
        for (const auto& m : kReportMetrics) it.values[m] = cell.scores->by_name(m);
        items.push_back(std::move(it));
    }
    for (const auto& s : report.summaries) {
        if (!s.complete) continue;
        items.push_back({"average", s.variant, s.approach, s.avg, false});
        items.push_back({"worst_case", s.variant, s.approach, s.worst, false});
    }
    return items;
}

}  // namespace

std::string plan_to_json(const BenchmarkPlan& plan) {
    nlohmann::ordered_json j;
    j["datasets"] = plan.datasets;
    j["output_dir"] = plan.output_dir;
    auto& approaches = j["approaches"] = nlohmann::json::array();
    for (const auto& a : plan.approaches) {
        nlohmann::ordered_json ja;
        ja["name"] = a.name;
        ja["variant"] = a.variant;
        ja["model"] = nlohmann::json::parse(model_config_to_json(a.model));
        if (!a.dataset_architecture.empty()) {
            auto& overrides = ja["dataset_architecture"];
            for (const auto& [dataset, arch] : a.dataset_architecture)
                overrides[dataset] = to_string(arch);
        }
        if (!a.pretrain_checkpoint.empty())
            ja["pretrain_checkpoint"] = a.pretrain_checkpoint;
        approaches.push_back(std::move(ja));
    }
    if (!plan.train_configs.empty()) {
        auto& configs = j["train_configs"];
        for (const auto& [dataset, config] : plan.train_configs)
            configs[dataset] = nlohmann::json::parse(train_config_to_json(config));
    }
    return j.dump(2) + "\n";
}

BenchmarkPlan plan_from_json(const std::string& text) {
    BenchmarkPlan plan;
    try {
        const auto j = nlohmann::json::parse(text);
        plan.datasets = j.at("datasets").get<std::vector<std::string>>();
        plan.output_dir = j.value("output_dir", std::string{});
        for (const auto& ja : j.at("approaches")) {
            ApproachSpec a;
            a.name = ja.at("name").get<std::string>();
            a.variant = ja.value("variant", std::string{"hsi"});
            a.model = model_config_from_json(ja.at("model").dump());
            if (ja.contains("dataset_architecture"))
                for (const auto& [dataset, arch] :
                     ja.at("dataset_architecture").items())
                    a.dataset_architecture[dataset] =
                        architecture_from_string(arch.get<std::string>());
            a.pretrain_checkpoint = ja.value("pretrain_checkpoint", std::string{});
            plan.approaches.push_back(std::move(a));
        }
        if (j.contains("train_configs"))
            for (const auto& [dataset, config] : j.at("train_configs").items())
                plan.train_configs[dataset] = train_config_from_json(config.dump());
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("plan schema mismatch: ") + e.what());
    }
    return plan;
}

void validate_plan(const BenchmarkPlan& plan,
                   const std::vector<std::string>& registered) {
    if (plan.approaches.empty())
        fail_validation("protocol violation: plan lists no approaches");

    const std::set<std::string> planned(plan.datasets.begin(), plan.datasets.end());
    if (planned.size() != plan.datasets.size())
        fail_validation("protocol violation: duplicate dataset in plan");
    for (const auto& r : registered)
        if (!planned.count(r))
            fail_validation(
                "protocol violation: plan must cover every registered benchmark "
                "dataset; missing '" +
                r + "'");
    const std::set<std::string> known(registered.begin(), registered.end());
    for (const auto& d : plan.datasets)
        if (!known.count(d))
            fail_validation("protocol violation: dataset '" + d +
                            "' is not a registered benchmark dataset");

    std::set<std::string> names;
    for (const auto& a : plan.approaches) {
        if (a.name.empty()) fail_validation("plan: approach with empty name");
        if (!names.insert(a.name).second)
            fail_validation("protocol violation: duplicate approach name '" + a.name +
                            "'");
        if (!kVariants.count(a.variant))
            fail_validation("plan: unknown data variant '" + a.variant +
                            "' in approach '" + a.name + "'");
        a.model.validate();
        for (const auto& [dataset, arch] : a.dataset_architecture) {
            (void)arch;
            if (!planned.count(dataset))
                fail_validation("plan: approach '" + a.name +
                                "' overrides unknown dataset '" + dataset + "'");
        }
        std::set<Architecture> used;
        for (const auto& d : plan.datasets) {
            const auto it = a.dataset_architecture.find(d);
            used.insert(it != a.dataset_architecture.end() ? it->second
                                                           : a.model.architecture);
        }
        if (used.size() > 1)
            fail_validation("protocol violation: approach '" + a.name +
                            "' must use a single model architecture across all "
                            "datasets");
        if (a.model.pretrain_mode != PretrainMode::none && a.pretrain_checkpoint.empty())
            fail_validation("plan: approach '" + a.name +
                            "' needs a pretrain checkpoint for mode " +
                            to_string(a.model.pretrain_mode));
    }
}

TrainConfig resolve_train_config(const BenchmarkPlan& plan, const std::string& dataset) {
    const auto it = plan.train_configs.find(dataset);
    if (it != plan.train_configs.end()) {
        TrainConfig c = it->second;
        c.dataset = dataset;
        c.validate();
        return c;
    }
    return default_config(dataset);
}

std::vector<ApproachSummary> compute_summaries(const BenchmarkReport& report) {
    std::vector<ApproachSummary> rows;
    for (const auto& approach : report.approaches) {
        ApproachSummary row;
        row.approach = approach;
        row.complete = true;
        std::map<std::string, std::map<std::string, double>> per_metric;
        for (const auto& dataset : report.datasets) {
            const CellResult* cell = find_cell(report, dataset, approach);
            if (cell != nullptr && row.variant.empty()) row.variant = cell->variant;
            if (cell == nullptr || !cell->scores) {
                row.complete = false;
                continue;
            }
            for (const auto& m : kReportMetrics)
                per_metric[m][dataset] = cell->scores->by_name(m);
        }
        // Summary numbers exist only for fully scored approaches; a gap is
        // rendered as "incomplete" instead of a value over fewer datasets.
        if (row.complete)
            for (const auto& m : kReportMetrics) {
                row.avg[m] = summary_avg(per_metric[m]);
                row.worst[m] = summary_worst_case(per_metric[m]);
            }
        rows.push_back(std::move(row));
    }
    return rows;
}

BenchmarkReport run_benchmark(const BenchmarkPlan& plan,
                              const std::vector<BenchDataset>& datasets,
                              const std::string& runs_dir) {
    std::vector<std::string> registered;
    registered.reserve(datasets.size());
    for (const auto& d : datasets) registered.push_back(d.name);
    validate_plan(plan, registered);

    BenchmarkReport report;
    report.datasets = registered;
    for (const auto& a : plan.approaches) report.approaches.push_back(a.name);

    for (const auto& approach : plan.approaches) {
        for (const auto& dataset : datasets) {
            CellResult cell;
            cell.dataset = dataset.name;
            cell.approach = approach.name;
            cell.variant = approach.variant;
            try {
                const auto train_samples = dataset.load(approach.variant, "train");
                if (train_samples.empty()) fail_validation("no training data");
                const auto val_samples = dataset.load(approach.variant, "val");

                ModelConfig mc = approach.model;
                const auto arch_it = approach.dataset_architecture.find(dataset.name);
                if (arch_it != approach.dataset_architecture.end())
                    mc.architecture = arch_it->second;
                mc.in_channels = train_samples.front().cube.channels;
                mc.num_classes = dataset.num_classes;
                mc.validate();

                TrainConfig tc = dataset.train_config;
                tc.dataset = dataset.name;

                const std::string cell_tag = sanitize_component(
                    dataset.name + "-" + approach.name + "-" + approach.variant);
                auto model = build_model(mc, fnv1a(cell_tag));
                if (mc.pretrain_mode != PretrainMode::none)
                    apply_pretrain(*model, mc.pretrain_mode,
                                   load_checkpoint(approach.pretrain_checkpoint));

                RunContext ctx;
                ctx.variant = approach.variant;
                ctx.run_id = cell_tag + "-s" + std::to_string(tc.seed);
                if (!runs_dir.empty()) ctx.run_dir = runs_dir + "/" + ctx.run_id;
                ctx.extra_hashes["dataset"] = hex64(fnv1a(dataset.name));

                TrainResult result = train(*model, train_samples, val_samples, tc, ctx);
                const auto test_samples = dataset.load(approach.variant, "test");
                const ScoreSet scored =
                    evaluate(result.best, test_samples, &result.record);
                if (!ctx.run_dir.empty())
                    save_run(result.record, &result.best, ctx.run_dir);

                cell.scores = scored;
                cell.run_id = result.record.run_id;
                cell.record = std::move(result.record);
                if (report.hardware.empty()) report.hardware = cell.record->hardware;
            } catch (const std::exception& e) {
                cell.failure = e.what();
            }
            report.cells.push_back(std::move(cell));
        }
    }
    report.summaries = compute_summaries(report);
    return report;
}

std::string report_to_csv(const BenchmarkReport& report) {
    verify_report(report);
    std::string out = std::string(kScoreCsvHeader) + "\n";
    for (const auto& dataset : report.datasets)
        for (const auto& approach : report.approaches) {
            const CellResult* cell = find_cell(report, dataset, approach);
            out += cell->scores
                       ? score_csv_row(dataset, approach, cell->variant, *cell->scores)
                       : failed_csv_row(*cell);
            out += '\n';
        }
    for (const auto& s : report.summaries) {
        out += "average," + s.approach + "," + s.variant;
        for (const auto& m : kReportMetrics)
            out += s.complete ? "," + format_percent(s.avg.at(m)) : ",incomplete";
        out += '\n';
    }
    for (const auto& s : report.summaries) {
        out += "worst_case," + s.approach + "," + s.variant;
        for (const auto& m : kReportMetrics)
            out += s.complete ? "," + format_percent(s.worst.at(m)) : ",incomplete";
        out += '\n';
    }
    return out;
}

std::string report_to_markdown(const BenchmarkReport& report) {
    verify_report(report);
    std::string out = "# Benchmark report\n\n";
    out += "| Dataset | Approach | Data | Acc_u | Acc_M | F1_M | J_M |\n";
    out += "|---|---|---|---|---|---|---|\n";
    auto score_cells = [&](const std::optional<ScoreSet>& s) {
        if (!s) return std::string(" failed | failed | failed | failed |");
        return " " + format_percent(s->acc_micro) + " | " + format_percent(s->acc_macro) +
               " | " + format_percent(s->f1_macro) + " | " +
               format_percent(s->jaccard_macro) + " |";
    };
    for (const auto& dataset : report.datasets)
        for (const auto& approach : report.approaches) {
            const CellResult* cell = find_cell(report, dataset, approach);
            out += "| " + dataset + " | " + approach + " | " + cell->variant + " |" +
                   score_cells(cell->scores) + "\n";
        }
    auto summary_cells = [&](const ApproachSummary& s,
                             const std::map<std::string, double>& values) {
        std::string row;
        for (const auto& m : kReportMetrics)
            row += s.complete ? " " + format_percent(values.at(m)) + " |"
                              : " incomplete |";
        return row;
    };
    for (const auto& s : report.summaries)
        out += "| Average | " + s.approach + " | " + s.variant + " |" +
               summary_cells(s, s.avg) + "\n";
    for (const auto& s : report.summaries)
        out += "| Worst-Case | " + s.approach + " | " + s.variant + " |" +
               summary_cells(s, s.worst) + "\n";
    return out;
}

std::string provenance_markdown(const BenchmarkReport& report) {
    verify_report(report);
    std::string out = "# Provenance\n\n";
    out += "Hardware: " +
           (report.hardware.empty() ? std::string("unrecorded") : report.hardware) +
           "\n";
    for (const auto& dataset : report.datasets)
        for (const auto& approach : report.approaches) {
            const CellResult* cell = find_cell(report, dataset, approach);
            out += "\n## " + approach + " / " + dataset + " / " + cell->variant + "\n\n";
            if (!cell->failure.empty()) {
                out += "- failed: " + cell->failure + "\n";
                continue;
            }
            if (!cell->record) {
                out += "- no run record attached\n";
                continue;
            }
            const RunRecord& r = *cell->record;
            out += "- run id: " + r.run_id + "\n";
            out += "- status: " + r.status + "\n";
            out += "- pretrain: " + r.pretrain + "\n";
            out += "- epochs: " + std::to_string(r.trace.size()) + " (best " +
                   std::to_string(r.best_epoch) + ")\n";
            out += "- config hashes:";
            for (const auto& [scope, digest] : r.config_hashes)
                out += " " + scope + "=" + digest;
            out += "\n";
            out += "- wall clock seconds: " + fmt3(r.wall_clock_seconds) + "\n";
            out += "- peak memory kb: " + std::to_string(r.peak_memory_kb) + "\n";
            out += std::string("- test slot consumed: ") +
                   (r.test_slot_consumed ? "yes" : "no") + "\n";
            if (r.deviations.empty()) {
                out += "- deviations: none\n";
            } else {
                out += "- deviations:\n";
                for (const auto& d : r.deviations) out += "  - " + d + "\n";
            }
        }
    return out;
}

std::string report_to_json(const BenchmarkReport& report) {
    verify_report(report);
    nlohmann::ordered_json j;
    j["datasets"] = report.datasets;
    j["approaches"] = report.approaches;
    j["hardware"] = report.hardware;
    auto& cells = j["cells"] = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::ordered_json jc;
        jc["dataset"] = c.dataset;
        jc["approach"] = c.approach;
        jc["variant"] = c.variant;
        jc["scores"] = c.scores ? detail::scores_to_json(*c.scores)
                                : nlohmann::ordered_json(nullptr);
        jc["failure"] = c.failure;
        jc["run_id"] = c.run_id;
        jc["record"] = c.record
                           ? nlohmann::ordered_json::parse(run_record_to_json(*c.record))
                           : nlohmann::ordered_json(nullptr);
        cells.push_back(std::move(jc));
    }
    return j.dump(2) + "\n";
}

BenchmarkReport report_from_json(const std::string& text) {
    BenchmarkReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        r.datasets = j.at("datasets").get<std::vector<std::string>>();
        r.approaches = j.at("approaches").get<std::vector<std::string>>();
        r.hardware = j.at("hardware").get<std::string>();
        for (const auto& jc : j.at("cells")) {
            CellResult c;
            c.dataset = jc.at("dataset").get<std::string>();
            c.approach = jc.at("approach").get<std::string>();
            c.variant = jc.at("variant").get<std::string>();
            if (!jc.at("scores").is_null())
                c.scores = detail::scores_from_json(jc.at("scores"));
            c.failure = jc.at("failure").get<std::string>();
            c.run_id = jc.at("run_id").get<std::string>();
            if (!jc.at("record").is_null())
                c.record = run_record_from_json(jc.at("record").dump());
            r.cells.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("report schema mismatch: ") + e.what());
    }
    r.summaries = compute_summaries(r);
    return r;
}

std::vector<std::string> emit_report(const BenchmarkReport& report,
                                     const std::string& out_dir,
                                     const std::string& format) {
    if (format != "csv" && format != "markdown" && format != "all")
        fail_validation("emit_report: unknown format '" + format + "'");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail_runtime("cannot create report directory " + out_dir);

    std::vector<std::string> written;
    if (format == "csv" || format == "all") {
        const std::string path = out_dir + "/report.csv";
        spill(path, report_to_csv(report));
        written.push_back(path);
    }
    if (format == "markdown" || format == "all") {
        const std::string path = out_dir + "/report.md";
        spill(path, report_to_markdown(report));
        written.push_back(path);
    }
    const std::string prov = out_dir + "/provenance.md";
    spill(prov, provenance_markdown(report));
    written.push_back(prov);
    const std::string jpath = out_dir + "/report.json";
    spill(jpath, report_to_json(report));
    written.push_back(jpath);
    return written;
}

DeltaTable compare_runs(const BenchmarkReport& a, const BenchmarkReport& b) {
    auto items_a = compare_items(a);
    auto items_b = compare_items(b);

    std::vector<std::pair<const CompareItem*, const CompareItem*>> pairs;
    // Exact identity first, then a rename-tolerant pass that pairs the rows
    // left over when (row, variant) is unambiguous on both sides.
    for (auto& ia : items_a)
        for (auto& ib : items_b) {
            if (ib.matched || ia.row != ib.row || ia.variant != ib.variant ||
                ia.approach != ib.approach)
                continue;
            ia.matched = ib.matched = true;
            pairs.emplace_back(&ia, &ib);
            break;
        }
    for (auto& ia : items_a) {
        if (ia.matched) continue;
        CompareItem* only_b = nullptr;
        int hits_a = 0, hits_b = 0;
        for (const auto& other : items_a)
            if (!other.matched && other.row == ia.row && other.variant == ia.variant)
                ++hits_a;
        for (auto& ib : items_b)
            if (!ib.matched && ib.row == ia.row && ib.variant == ia.variant) {
                ++hits_b;
                only_b = &ib;
            }
        if (hits_a == 1 && hits_b == 1) {
            ia.matched = only_b->matched = true;
            pairs.emplace_back(&ia, only_b);
        }
    }
    if (pairs.empty()) fail_validation("nothing to compare: the reports share no rows");

    // Render in a's order: datasets, then average, then worst_case.
    std::vector<std::string> row_order = a.datasets;
    row_order.push_back("average");
    row_order.push_back("worst_case");

    DeltaTable table;
    for (const auto& row : row_order)
        for (const auto& [ia, ib] : pairs) {
            if (ia->row != row) continue;
            DeltaEntry entry;
            entry.row = row;
            entry.variant = ia->variant;
            entry.approach_a = ia->approach;
            entry.approach_b = ib->approach;
            for (const auto& m : kReportMetrics)
                entry.delta[m] = percent2(ib->values.at(m)) - percent2(ia->values.at(m));
            table.rows.push_back(std::move(entry));
        }
    return table;
}

std::string delta_table_to_text(const DeltaTable& table) {
    std::string out = "row,variant,approach_a,approach_b,acc_micro,acc_macro,f1_macro,"
                      "jaccard_macro\n";
    for (const auto& e : table.rows) {
        out += e.row + "," + e.variant + "," + e.approach_a + "," + e.approach_b;
        for (const auto& m : kReportMetrics) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%+.2f", e.delta.at(m));
            out += ",";
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace hs3
