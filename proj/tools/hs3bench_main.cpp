// hs3bench: command-line driver for the hyperspectral segmentation benchmark
// harness. Thin single-threaded plumbing over the hs3 library: subcommands
// resolve datasets and artifacts on disk, call one library operation and map
// hs3::Error kinds onto exit codes (0 success, 2 validation, 3 runtime).
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hs3/bench.hpp"
#include "hs3/core.hpp"
#include "hs3/dataset.hpp"
#include "hs3/metrics.hpp"
#include "hs3/models.hpp"
#include "hs3/preprocess.hpp"
#include "hs3/render.hpp"
#include "hs3/train.hpp"

namespace fs = std::filesystem;
using namespace hs3;

namespace {

bool g_quiet = false;

void log_info(const std::string& msg) {
    if (!g_quiet) std::cerr << "[hs3bench] " << msg << "\n";
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_runtime("cannot read " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spill_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_runtime("cannot write " + path);
    out << text;
    if (!out) fail_runtime("cannot write " + path);
}

std::string sanitize(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_')
            c = '_';
    return s;
}

// ---------------------------------------------------------------------------
// Dataset resolution. --dataset accepts a registered name looked up under the
// data root (HS3_DATA_ROOT or --data-root), a directory containing a
// descriptor.json, or a path to a descriptor file itself.

std::string effective_data_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("HS3_DATA_ROOT"); env != nullptr && *env)
        return env;
    return ".";
}

struct ResolvedDataset {
    DatasetDescriptor descriptor;
    fs::path root;  // directory holding the samples
};

ResolvedDataset resolve_dataset(const std::string& arg, const std::string& data_root_flag) {
    const fs::path data_root = effective_data_root(data_root_flag);
    std::vector<std::string> tried;

    auto from_dir = [](const fs::path& dir) {
        ResolvedDataset r;
        r.descriptor = load_descriptor((dir / "descriptor.json").string());
        r.root = dir;
        r.descriptor.root_path = dir.string();
        return r;
    };
    auto from_file = [&](const fs::path& file) {
        ResolvedDataset r;
        r.descriptor = load_descriptor(file.string());
        r.root = !r.descriptor.root_path.empty() ? fs::path(r.descriptor.root_path)
                                                 : data_root / r.descriptor.name;
        r.descriptor.root_path = r.root.string();
        return r;
    };

    const fs::path p(arg);
    if (p.extension() == ".json" && fs::is_regular_file(p)) return from_file(p);
    tried.push_back(arg);
    if (fs::is_regular_file(p / "descriptor.json")) return from_dir(p);
    tried.push_back((p / "descriptor.json").string());
    if (fs::is_regular_file(data_root / arg / "descriptor.json"))
        return from_dir(data_root / arg);
    tried.push_back((data_root / arg / "descriptor.json").string());
    if (fs::is_regular_file(data_root / (arg + ".json")))
        return from_file(data_root / (arg + ".json"));
    tried.push_back((data_root / (arg + ".json")).string());

    std::string msg = "dataset not found: '" + arg + "' (tried";
    for (const auto& t : tried) msg += " " + t + ";";
    msg.back() = ')';
    fail_validation(msg);
}

std::string default_manifest_path(const ResolvedDataset& ds) {
    return (ds.root / "splits.txt").string();
}

SplitManifest load_manifest_or_explain(const ResolvedDataset& ds,
                                       const std::string& explicit_path) {
    const std::string path =
        explicit_path.empty() ? default_manifest_path(ds) : explicit_path;
    if (!fs::is_regular_file(path))
        fail_validation("no split manifest for dataset '" + ds.descriptor.name +
                        "' at " + path + "; run: hs3bench split --dataset " +
                        ds.descriptor.name);
    return load_manifest(path);
}

const std::vector<std::string>& manifest_split(const SplitManifest& m,
                                               const std::string& split) {
    if (split == "train") return m.train;
    if (split == "val") return m.val;
    if (split == "test") return m.test;
    fail_validation("unknown split '" + split + "' (expected train, val or test)");
}

// ---------------------------------------------------------------------------
// Preprocessing resolution. Sidecars are searched first; when none exists the
// variant is fitted on the spot at its default scope and the sidecar is
// written next to the other run artifacts for disclosure.

FitScope default_scope(const std::string& variant) {
    return variant == "pca1" ? FitScope::train_split : FitScope::whole_dataset;
}

CubeSource make_source(const DatasetDescriptor& descriptor,
                       const std::vector<std::string>& ids) {
    return [&descriptor, ids](const std::function<void(const SpectralCube&)>& consume) {
        for (const auto& id : ids) consume(load_sample(descriptor, id).cube);
    };
}

FittedPreproc fit_now(const ResolvedDataset& ds, const std::string& variant,
                      FitScope scope, const SplitManifest* manifest,
                      std::uint64_t seed) {
    std::vector<std::string> ids;
    if (scope == FitScope::train_split) {
        if (manifest == nullptr)
            fail_validation("fit scope train_split needs a split manifest");
        ids = manifest->train;
    } else {
        ids = list_samples(ds.descriptor);
    }
    log_info("fitting preprocessing: dataset=" + ds.descriptor.name + " variant=" +
             variant + " scope=" + to_string(scope) + " over " +
             std::to_string(ids.size()) + " samples");
    return fit_variant(ds.descriptor, variant, make_source(ds.descriptor, ids), scope,
                       seed);
}

// Search order: explicit flag, run dir sidecar, dataset dir sidecar, fresh fit.
FittedPreproc resolve_preproc(const ResolvedDataset& ds, const std::string& variant,
                              const std::string& explicit_path,
                              const std::string& run_dir,
                              const SplitManifest* manifest) {
    if (!explicit_path.empty()) return load_preproc(explicit_path);
    const std::string name = "preproc-" + variant + ".json";
    if (!run_dir.empty() && fs::is_regular_file(fs::path(run_dir) / name))
        return load_preproc((fs::path(run_dir) / name).string());
    if (fs::is_regular_file(ds.root / name))
        return load_preproc((ds.root / name).string());
    return fit_now(ds, variant, default_scope(variant), manifest,
                   ds.descriptor.split_seed);
}

std::vector<Sample> load_variant_samples(const ResolvedDataset& ds,
                                         const std::vector<std::string>& ids,
                                         const FittedPreproc& fitted) {
    std::vector<Sample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        Sample s = load_sample(ds.descriptor, id);
        s.cube = apply_variant(s.cube, fitted);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Train config assembly: command-line flags override the config file, which
// overrides the per-dataset benchmark defaults (generic defaults for datasets
// outside the benchmark). The effective config is persisted with the run.

void merge_config_file(TrainConfig& c, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("train config file: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail_validation("train config file: expected a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "dataset") c.dataset = value.get<std::string>();
            else if (key == "optimizer") c.optimizer = value.get<std::string>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "optimizer_epsilon") c.optimizer_epsilon = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "max_epochs") c.max_epochs = value.get<int>();
            else if (key == "early_stopping") c.early_stopping = value.get<bool>();
            else if (key == "patience") c.patience = value.get<int>();
            else if (key == "loss") c.loss = value.get<std::string>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "augmentation_probability")
                c.augmentation = AugmentationPolicy::flip(value.get<double>());
            else fail_validation("train config file: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("train config file: ") + e.what());
    }
}

std::string fmt_g(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

// Differences against the benchmark defaults become disclosed deviations.
std::vector<std::string> config_deviations(const TrainConfig& effective) {
    std::vector<std::string> out;
    if (!has_default_config(effective.dataset)) {
        out.push_back("dataset '" + effective.dataset +
                      "' is outside the benchmark; no shipped defaults apply");
        return out;
    }
    const TrainConfig def = default_config(effective.dataset);
    auto note = [&](const std::string& field, const std::string& got,
                    const std::string& want) {
        out.push_back("train config override: " + field + "=" + got +
                      " (benchmark default " + want + ")");
    };
    if (effective.optimizer != def.optimizer)
        note("optimizer", effective.optimizer, def.optimizer);
    if (effective.learning_rate != def.learning_rate)
        note("learning_rate", fmt_g(effective.learning_rate), fmt_g(def.learning_rate));
    if (effective.optimizer_epsilon != def.optimizer_epsilon)
        note("optimizer_epsilon", fmt_g(effective.optimizer_epsilon),
             fmt_g(def.optimizer_epsilon));
    if (effective.batch_size != def.batch_size)
        note("batch_size", std::to_string(effective.batch_size),
             std::to_string(def.batch_size));
    if (effective.max_epochs != def.max_epochs)
        note("max_epochs", std::to_string(effective.max_epochs),
             std::to_string(def.max_epochs));
    if (effective.early_stopping != def.early_stopping)
        note("early_stopping", effective.early_stopping ? "true" : "false",
             def.early_stopping ? "true" : "false");
    if (effective.patience != def.patience)
        note("patience", std::to_string(effective.patience),
             std::to_string(def.patience));
    if (effective.loss != def.loss) note("loss", effective.loss, def.loss);
    if (effective.augmentation.probability != def.augmentation.probability)
        note("augmentation_probability", fmt_g(effective.augmentation.probability),
             fmt_g(def.augmentation.probability));
    return out;
}

std::unique_ptr<SegmentationModel> model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = build_model(ckpt.config, ckpt.seed);
    load_tensors(*model, ckpt, [](const std::string&) { return true; });
    return model;
}

std::string locate_report_json(const std::string& arg) {
    if (fs::is_regular_file(arg)) return arg;
    const fs::path candidate = fs::path(arg) / "report.json";
    if (fs::is_regular_file(candidate)) return candidate.string();
    fail_validation("no report found at '" + arg + "' (expected a report.json)");
}

// ---------------------------------------------------------------------------
// Subcommand options.

struct SplitOpts {
    std::string dataset;
    std::string data_root;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int run_split(const SplitOpts& o) {
    ResolvedDataset ds = resolve_dataset(o.dataset, o.data_root);
    if (o.seed_given) ds.descriptor.split_seed = o.seed;
    const auto ids = list_samples(ds.descriptor);
    const SplitManifest m = make_splits(ds.descriptor, ids);
    const fs::path out_dir = o.out.empty() ? ds.root : fs::path(o.out);
    fs::create_directories(out_dir);
    const std::string path = (out_dir / "splits.txt").string();
    save_manifest(m, path);
    log_info("split " + ds.descriptor.name + ": train=" + std::to_string(m.train.size()) +
             " val=" + std::to_string(m.val.size()) +
             " test=" + std::to_string(m.test.size()) + " seed=" +
             std::to_string(m.seed));
    std::cout << path << "\n";
    return 0;
}

struct FitPreprocOpts {
    std::string dataset;
    std::string data_root;
    std::string variant = "hsi";
    std::string scope;  // empty: per-variant default
    std::string manifest;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int run_fit_preproc(const FitPreprocOpts& o) {
    ResolvedDataset ds = resolve_dataset(o.dataset, o.data_root);
    const FitScope scope =
        o.scope.empty() ? default_scope(o.variant) : fit_scope_from_string(o.scope);
    std::optional<SplitManifest> manifest;
    if (scope == FitScope::train_split)
        manifest = load_manifest_or_explain(ds, o.manifest);
    const std::uint64_t seed = o.seed_given ? o.seed : ds.descriptor.split_seed;
    const FittedPreproc fitted =
        fit_now(ds, o.variant, scope, manifest ? &*manifest : nullptr, seed);
    const fs::path out_dir = o.out.empty() ? ds.root : fs::path(o.out);
    fs::create_directories(out_dir);
    const std::string path = (out_dir / ("preproc-" + o.variant + ".json")).string();
    save_preproc(fitted, path);
    log_info("fitted " + o.variant + " for " + ds.descriptor.name + " -> " + path);
    std::cout << path << "\n";
    return 0;
}

struct SynthFixtureOpts {
    std::string out;
    std::string name = "fixture";
    FixtureSpec spec;
};

int run_synth_fixture(const SynthFixtureOpts& o) {
    const DatasetDescriptor d = generate_fixture(o.spec, o.out, o.name);
    log_info("fixture '" + d.name + "': " + std::to_string(o.spec.n_images) +
             " images " + std::to_string(o.spec.height) + "x" +
             std::to_string(o.spec.width) + "x" + std::to_string(o.spec.channels) +
             " K=" + std::to_string(o.spec.num_classes));
    std::cout << (fs::path(o.out) / "descriptor.json").string() << "\n";
    return 0;
}

struct TrainOpts {
    std::string dataset;
    std::string data_root;
    std::string manifest;
    std::string preproc;
    std::string out;
    std::string run_id;
    std::string variant = "hsi";
    std::string config_file;

    // train config flags (presence tracked via CLI11 counts)
    double lr = 0.0;
    double eps = 0.0;
    int batch_size = 0;
    int max_epochs = 0;
    int patience = 0;
    double augment_prob = 0.0;
    std::uint64_t seed = 0;
    bool no_early_stopping = false;

    // model flags
    std::string arch = "runet";
    int base_width = 64;
    double dropout = 0.25;
    bool no_batchnorm = false;
    std::string pretrain_mode = "none";
    std::string pretrain_ckpt;
    std::uint64_t model_seed = 0;
    bool model_seed_given = false;
};

int run_train(const TrainOpts& o, const CLI::App& cmd) {
    if (o.out.empty()) fail_validation("train: --out run directory is required");
    ResolvedDataset ds = resolve_dataset(o.dataset, o.data_root);
    const SplitManifest manifest = load_manifest_or_explain(ds, o.manifest);

    // Config precedence: flags > config file > defaults.
    TrainConfig config;
    if (has_default_config(ds.descriptor.name)) {
        config = default_config(ds.descriptor.name);
    } else {
        config.dataset = ds.descriptor.name;
    }
    if (!o.config_file.empty()) merge_config_file(config, o.config_file);
    config.dataset = ds.descriptor.name;
    if (cmd.count("--lr")) config.learning_rate = o.lr;
    if (cmd.count("--optimizer-eps")) config.optimizer_epsilon = o.eps;
    if (cmd.count("--batch-size")) config.batch_size = o.batch_size;
    if (cmd.count("--max-epochs")) config.max_epochs = o.max_epochs;
    if (cmd.count("--patience")) config.patience = o.patience;
    if (cmd.count("--seed")) config.seed = o.seed;
    if (cmd.count("--augment-prob"))
        config.augmentation = AugmentationPolicy::flip(o.augment_prob);
    if (o.no_early_stopping) config.early_stopping = false;
    config.validate();

    const FittedPreproc fitted =
        resolve_preproc(ds, o.variant, o.preproc, o.out, &manifest);
    fs::create_directories(o.out);
    save_preproc(fitted, (fs::path(o.out) / ("preproc-" + o.variant + ".json")).string());

    const auto train_samples = load_variant_samples(ds, manifest.train, fitted);
    const auto val_samples = load_variant_samples(ds, manifest.val, fitted);

    ModelConfig mc;
    mc.architecture = architecture_from_string(o.arch);
    mc.in_channels = fitted.output_channels();
    mc.num_classes = ds.descriptor.catalog.evaluated_count();
    mc.dropout_p = o.dropout;
    mc.batchnorm = !o.no_batchnorm;
    mc.base_width = o.base_width;
    mc.pretrain_mode = pretrain_from_string(o.pretrain_mode);
    mc.validate();
    const std::uint64_t model_seed = o.model_seed_given ? o.model_seed : config.seed;
    auto model = build_model(mc, model_seed);
    if (mc.pretrain_mode != PretrainMode::none) {
        if (o.pretrain_ckpt.empty())
            fail_validation("train: pretrain mode '" + o.pretrain_mode +
                            "' needs --pretrain-ckpt");
        apply_pretrain(*model, mc.pretrain_mode, load_checkpoint(o.pretrain_ckpt));
    }

    RunContext ctx;
    ctx.variant = o.variant;
    ctx.run_id = o.run_id;
    ctx.run_dir = o.out;
    ctx.extra_hashes["preproc"] = hex64(fnv1a(preproc_to_json(fitted)));
    ctx.deviations = config_deviations(config);

    spill_file((fs::path(o.out) / "train_config.json").string(),
               train_config_to_json(config));
    spill_file((fs::path(o.out) / "model_config.json").string(),
               model_config_to_json(mc));

    log_info("training " + o.arch + " on " + ds.descriptor.name + "/" + o.variant +
             ": " + std::to_string(train_samples.size()) + " train / " +
             std::to_string(val_samples.size()) + " val samples");
    const TrainResult result = train(*model, train_samples, val_samples, config, ctx);
    log_info("run " + result.record.run_id + ": best epoch " +
             std::to_string(result.record.best_epoch) + ", val macro Jaccard " +
             format_percent(result.record.best_val_jaccard));
    std::cout << result.record.run_id << "\n";
    return 0;
}

struct EvalOpts {
    std::string run_dir;
    std::string dataset;
    std::string data_root;
    std::string manifest;
    std::string preproc;
    std::string split = "test";
    std::string render_dir;
    bool override_test_reuse = false;
};

int run_eval(const EvalOpts& o) {
    RunRecord record = load_run_record(o.run_dir);
    const Checkpoint ckpt = load_checkpoint((fs::path(o.run_dir) / "ckpt").string());
    ResolvedDataset ds = resolve_dataset(o.dataset, o.data_root);
    if (ds.descriptor.name != record.dataset)
        log_info("warning: run '" + record.run_id + "' was trained on '" +
                 record.dataset + "' but is being evaluated on '" +
                 ds.descriptor.name + "'");
    const SplitManifest manifest = load_manifest_or_explain(ds, o.manifest);
    const auto& ids = manifest_split(manifest, o.split);

    const FittedPreproc fitted =
        resolve_preproc(ds, record.variant, o.preproc, o.run_dir, &manifest);
    const auto samples = load_variant_samples(ds, ids, fitted);

    auto model = model_from_checkpoint(ckpt);
    const bool is_test = o.split == "test";
    const ScoreSet s =
        evaluate(*model, samples, is_test ? &record : nullptr, o.override_test_reuse);
    if (is_test) save_run(record, nullptr, o.run_dir);

    if (!o.render_dir.empty()) {
        fs::create_directories(o.render_dir);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const LabelMap pred = predict_labels(*model, samples[i].cube);
            const std::string path =
                (fs::path(o.render_dir) / (sanitize(ids[i]) + ".png")).string();
            render_side_by_side_png(samples[i].labels, pred, path);
        }
        log_info("wrote " + std::to_string(samples.size()) + " renders to " +
                 o.render_dir);
    }

    std::cout << kScoreCsvHeader << "\n"
              << score_csv_row(ds.descriptor.name, to_string(ckpt.config.architecture),
                               record.variant, s)
              << "\n";
    return 0;
}

struct BenchOpts {
    std::string plan_file;
    std::string out;
    std::string data_root;
    std::vector<std::string> datasets = {"hyko2", "hcv", "hsidrive"};
};

int run_bench(const BenchOpts& o) {
    BenchmarkPlan plan = plan_from_json(slurp_file(o.plan_file));
    const std::string out = !o.out.empty() ? o.out : plan.output_dir;
    if (out.empty())
        fail_validation("bench: no output directory (use --out or the plan's "
                        "output_dir)");
    plan.output_dir = out;
    fs::create_directories(out);

    // The registered set for this invocation; the plan must cover it exactly.
    auto cache = std::make_shared<std::map<std::string, FittedPreproc>>();
    std::vector<BenchDataset> registered;
    for (const auto& name : o.datasets) {
        const auto ds = std::make_shared<ResolvedDataset>(
            resolve_dataset(name, o.data_root));
        const auto manifest =
            std::make_shared<SplitManifest>(load_manifest_or_explain(*ds, ""));

        BenchDataset bd;
        bd.name = ds->descriptor.name;
        bd.num_classes = ds->descriptor.catalog.evaluated_count();
        bd.train_config = resolve_train_config(plan, ds->descriptor.name);
        bd.load = [ds, manifest, cache, out](const std::string& variant,
                                             const std::string& split) {
            const std::string key = ds->descriptor.name + "/" + variant;
            if (!cache->count(key)) {
                FittedPreproc fitted =
                    resolve_preproc(*ds, variant, "", "", manifest.get());
                const fs::path dir = fs::path(out) / "preproc";
                fs::create_directories(dir);
                save_preproc(fitted,
                             (dir / (ds->descriptor.name + "-" + variant + ".json"))
                                 .string());
                cache->emplace(key, std::move(fitted));
            }
            return load_variant_samples(*ds, manifest_split(*manifest, split),
                                        cache->at(key));
        };
        registered.push_back(std::move(bd));
    }

    const BenchmarkReport report = run_benchmark(plan, registered, out + "/runs");

    int failures = 0;
    for (const auto& c : report.cells)
        if (!c.failure.empty()) {
            ++failures;
            log_info("cell failed: " + c.dataset + "/" + c.approach + ": " + c.failure);
        }
    for (const auto& s : report.summaries)
        log_info("approach " + s.approach + " (" + s.variant + "): " +
                 (s.complete ? "avg J_M " + format_percent(s.avg.at("jaccard_macro")) +
                                   ", worst " + format_percent(s.worst.at("jaccard_macro"))
                             : std::string("incomplete")));
    const auto written = emit_report(report, out, "all");
    for (const auto& path : written) std::cout << path << "\n";
    if (failures > 0)
        log_info(std::to_string(failures) + " cell(s) failed; see provenance.md");
    return 0;
}

struct ReportOpts {
    std::string from;
    std::string out;
    std::string format = "all";
    std::vector<std::string> compare;
};

int run_report(const ReportOpts& o) {
    if (!o.compare.empty()) {
        const BenchmarkReport a = report_from_json(slurp_file(locate_report_json(o.compare[0])));
        const BenchmarkReport b = report_from_json(slurp_file(locate_report_json(o.compare[1])));
        std::cout << delta_table_to_text(compare_runs(a, b));
        return 0;
    }
    if (o.from.empty())
        fail_validation("report: pass --from DIR to re-emit or --compare A B");
    const std::string json_path = locate_report_json(o.from);
    const BenchmarkReport report = report_from_json(slurp_file(json_path));
    const std::string out_dir =
        !o.out.empty() ? o.out : fs::path(json_path).parent_path().string();
    const auto written = emit_report(report, out_dir, o.format);
    for (const auto& path : written) std::cout << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hs3bench: hyperspectral semantic segmentation benchmark harness"};
    app.set_version_flag("--version", "hs3bench 1.0.0");
    app.add_flag("--quiet", g_quiet, "Suppress informational logs on stderr");
    app.require_subcommand(1);

    SplitOpts split_opts;
    auto* split_cmd = app.add_subcommand(
        "split", "Write the deterministic split manifest for a dataset");
    split_cmd->add_option("--dataset", split_opts.dataset, "Dataset name or path")
        ->required();
    split_cmd->add_option("--data-root", split_opts.data_root,
                          "Dataset root (default: $HS3_DATA_ROOT or .)");
    split_cmd->add_option("--seed", split_opts.seed,
                          "Split seed (default: descriptor's split_seed)");
    split_cmd->add_option("--out", split_opts.out,
                          "Output directory (default: the dataset directory)");

    FitPreprocOpts fit_opts;
    auto* fit_cmd = app.add_subcommand(
        "fit-preproc", "Fit a data-variant preprocessing sidecar");
    fit_cmd->add_option("--dataset", fit_opts.dataset, "Dataset name or path")
        ->required();
    fit_cmd->add_option("--data-root", fit_opts.data_root, "Dataset root");
    fit_cmd->add_option("--variant", fit_opts.variant, "hsi, pca1 or prgb")
        ->required()
        ->check(CLI::IsMember({"hsi", "pca1", "prgb"}));
    fit_cmd->add_option("--scope", fit_opts.scope,
                        "whole_dataset or train_split (default: train_split for "
                        "pca1, whole_dataset otherwise)")
        ->check(CLI::IsMember({"whole_dataset", "train_split"}));
    fit_cmd->add_option("--manifest", fit_opts.manifest,
                        "Split manifest (default: <dataset>/splits.txt)");
    fit_cmd->add_option("--seed", fit_opts.seed, "Subsampling seed (pca1)");
    fit_cmd->add_option("--out", fit_opts.out,
                        "Output directory (default: the dataset directory)");

    SynthFixtureOpts synth_opts;
    auto* synth_cmd = app.add_subcommand(
        "synth-fixture", "Generate a deterministic synthetic fixture dataset");
    synth_cmd->add_option("--out", synth_opts.out, "Output directory")->required();
    synth_cmd->add_option("--name", synth_opts.name, "Dataset name");
    synth_cmd->add_option("--images", synth_opts.spec.n_images, "Image count");
    synth_cmd->add_option("--height", synth_opts.spec.height, "Image height");
    synth_cmd->add_option("--width", synth_opts.spec.width, "Image width");
    synth_cmd->add_option("--channels", synth_opts.spec.channels, "Spectral bands");
    synth_cmd->add_option("--classes", synth_opts.spec.num_classes, "Class count");
    synth_cmd->add_option("--sigma", synth_opts.spec.noise_sigma, "Noise sigma");
    synth_cmd->add_option("--seed", synth_opts.spec.seed, "Generator seed");

    TrainOpts train_opts;
    auto* train_cmd =
        app.add_subcommand("train", "Train one model on one dataset variant");
    train_cmd->add_option("--dataset", train_opts.dataset, "Dataset name or path")
        ->required();
    train_cmd->add_option("--data-root", train_opts.data_root, "Dataset root");
    train_cmd->add_option("--manifest", train_opts.manifest, "Split manifest path");
    train_cmd->add_option("--preproc", train_opts.preproc, "Preprocessing sidecar");
    train_cmd->add_option("--out", train_opts.out, "Run directory")->required();
    train_cmd->add_option("--run-id", train_opts.run_id, "Run id override");
    train_cmd->add_option("--variant", train_opts.variant, "hsi, pca1 or prgb")
        ->check(CLI::IsMember({"hsi", "pca1", "prgb"}));
    train_cmd->add_option("--config", train_opts.config_file,
                          "Train config JSON (partial; overrides defaults)");
    train_cmd->add_option("--lr", train_opts.lr, "Learning rate");
    train_cmd->add_option("--optimizer-eps", train_opts.eps, "Optimizer epsilon");
    train_cmd->add_option("--batch-size", train_opts.batch_size, "Batch size");
    train_cmd->add_option("--max-epochs", train_opts.max_epochs, "Epoch cap");
    train_cmd->add_option("--patience", train_opts.patience, "Early-stop patience");
    train_cmd->add_flag("--no-early-stopping", train_opts.no_early_stopping,
                        "Disable early stopping");
    train_cmd->add_option("--augment-prob", train_opts.augment_prob,
                          "Horizontal-flip probability");
    train_cmd->add_option("--seed", train_opts.seed, "Training seed");
    train_cmd->add_option("--arch", train_opts.arch, "runet or dl3")
        ->check(CLI::IsMember({"runet", "dl3"}));
    train_cmd->add_option("--base-width", train_opts.base_width,
                          "Encoder base width (runet)");
    train_cmd->add_option("--dropout", train_opts.dropout, "Dropout probability");
    train_cmd->add_flag("--no-batchnorm", train_opts.no_batchnorm,
                        "Build without batch normalization");
    train_cmd->add_option("--pretrain-mode", train_opts.pretrain_mode,
                          "none, backbone_bb or transfer_pt")
        ->check(CLI::IsMember({"none", "backbone_bb", "transfer_pt"}));
    train_cmd->add_option("--pretrain-ckpt", train_opts.pretrain_ckpt,
                          "Checkpoint for the pretrain mode");
    train_cmd->add_option("--model-seed", train_opts.model_seed,
                          "Weight-init seed (default: training seed)");

    EvalOpts eval_opts;
    auto* eval_cmd = app.add_subcommand(
        "eval", "Evaluate a finished run on one split (test consumes the slot)");
    eval_cmd->add_option("--run", eval_opts.run_dir, "Run directory")->required();
    eval_cmd->add_option("--dataset", eval_opts.dataset, "Dataset name or path")
        ->required();
    eval_cmd->add_option("--data-root", eval_opts.data_root, "Dataset root");
    eval_cmd->add_option("--manifest", eval_opts.manifest, "Split manifest path");
    eval_cmd->add_option("--preproc", eval_opts.preproc, "Preprocessing sidecar");
    eval_cmd->add_option("--split", eval_opts.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_flag("--override-test-reuse", eval_opts.override_test_reuse,
                       "Evaluate the test split again; recorded as a deviation");
    eval_cmd->add_option("--render", eval_opts.render_dir,
                         "Write truth|prediction side-by-side PNGs here");

    BenchOpts bench_opts;
    auto* bench_cmd = app.add_subcommand(
        "bench", "Run a benchmark plan over the registered datasets");
    bench_cmd->add_option("--plan", bench_opts.plan_file, "Plan JSON")->required();
    bench_cmd->add_option("--out", bench_opts.out,
                          "Output directory (default: the plan's output_dir)");
    bench_cmd->add_option("--data-root", bench_opts.data_root, "Dataset root");
    bench_cmd->add_option("--datasets", bench_opts.datasets,
                          "Registered benchmark datasets (default: hyko2,hcv,hsidrive)")
        ->delimiter(',');

    ReportOpts report_opts;
    auto* report_cmd = app.add_subcommand(
        "report", "Re-emit report artifacts or compare two benchmark runs");
    report_cmd->add_option("--from", report_opts.from,
                           "Directory (or report.json) to re-emit from");
    report_cmd->add_option("--format", report_opts.format, "csv, markdown or all")
        ->check(CLI::IsMember({"csv", "markdown", "all"}));
    report_cmd->add_option("--out", report_opts.out, "Output directory");
    report_cmd->add_option("--compare", report_opts.compare,
                           "Two runs (dirs or report.json files) to diff")
        ->expected(2);

    try {
        app.parse(argc, argv);
        split_opts.seed_given = split_cmd->count("--seed") > 0;
        fit_opts.seed_given = fit_cmd->count("--seed") > 0;
        train_opts.model_seed_given = train_cmd->count("--model-seed") > 0;

        if (split_cmd->parsed()) return run_split(split_opts);
        if (fit_cmd->parsed()) return run_fit_preproc(fit_opts);
        if (synth_cmd->parsed()) return run_synth_fixture(synth_opts);
        if (train_cmd->parsed()) return run_train(train_opts, *train_cmd);
        if (eval_cmd->parsed()) return run_eval(eval_opts);
        if (bench_cmd->parsed()) return run_bench(bench_opts);
        if (report_cmd->parsed()) return run_report(report_opts);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::validation ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
