#include "hs3/train.hpp"

#include <sys/resource.h>
#include <sys/utsname.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "hs3/dataset.hpp"
#include "hs3/nn/layers.hpp"
#include "hs3/nn/optim.hpp"
#include "score_json.hpp"

namespace hs3 {

namespace {

const char* transform_name(Transform t) {
    switch (t) {
        case Transform::horizontal_flip: return "horizontal_flip";
    }
    fail_runtime("unknown transform");
}

Transform transform_from_name(const std::string& s) {
    if (s == "horizontal_flip") return Transform::horizontal_flip;
    fail_validation("train config schema mismatch: unknown transform '" + s + "'");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_runtime("cannot read " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_runtime("cannot write " + path);
    out << text;
    if (!out) fail_runtime("cannot write " + path);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

namespace detail {

nlohmann::ordered_json scores_to_json(const ScoreSet& s) {
    nlohmann::ordered_json j;
    j["acc_micro"] = s.acc_micro;
    j["acc_macro"] = s.acc_macro;
    j["f1_macro"] = s.f1_macro;
    j["jaccard_macro"] = s.jaccard_macro;
    j["recall"] = s.recall;
    j["precision"] = s.precision;
    j["f1"] = s.f1;
    j["jaccard"] = s.jaccard;
    j["in_acc_macro"] = std::vector<int>(s.in_acc_macro.begin(), s.in_acc_macro.end());
    j["in_f1j_macro"] = std::vector<int>(s.in_f1j_macro.begin(), s.in_f1j_macro.end());
    return j;
}

ScoreSet scores_from_json(const nlohmann::json& j) {
    ScoreSet s;
    s.acc_micro = j.at("acc_micro").get<double>();
    s.acc_macro = j.at("acc_macro").get<double>();
    s.f1_macro = j.at("f1_macro").get<double>();
    s.jaccard_macro = j.at("jaccard_macro").get<double>();
    s.recall = j.at("recall").get<std::vector<double>>();
    s.precision = j.at("precision").get<std::vector<double>>();
    s.f1 = j.at("f1").get<std::vector<double>>();
    s.jaccard = j.at("jaccard").get<std::vector<double>>();
    for (int v : j.at("in_acc_macro").get<std::vector<int>>())
        s.in_acc_macro.push_back(v != 0);
    for (int v : j.at("in_f1j_macro").get<std::vector<int>>())
        s.in_f1j_macro.push_back(v != 0);
    return s;
}

}  // namespace detail

namespace {

std::string hardware_string() {
    std::string s = "unknown";
    utsname u{};
    if (uname(&u) == 0) s = std::string(u.sysname) + " " + u.machine;
    const unsigned hc = std::thread::hardware_concurrency();
    if (hc > 0) s += ", " + std::to_string(hc) + " hw threads";
    return s;
}

void record_footprint(RunRecord& r,
                      std::chrono::steady_clock::time_point start) {
    r.wall_clock_seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - start)
                               .count();
    rusage ru{};
    if (getrusage(RUSAGE_SELF, &ru) == 0)
        r.peak_memory_kb = static_cast<std::size_t>(ru.ru_maxrss);
}

bool has_valid_pixel(const std::vector<Sample>& samples) {
    for (const auto& s : samples)
        for (const label_t l : s.labels.labels)
            if (l != kIgnore) return true;
    return false;
}

// Stacks equally sized samples into one NCHW tensor plus NHW-ordered labels.
void assemble_batch(const std::vector<Sample>& batch, nn::Tensor& x,
                    std::vector<label_t>& labels) {
    const int h = batch.front().cube.height;
    const int w = batch.front().cube.width;
    const int c = batch.front().cube.channels;
    for (const auto& s : batch)
        if (s.cube.height != h || s.cube.width != w || s.cube.channels != c)
            fail_validation("shape error: mixed sample shapes in one batch (" +
                            std::to_string(h) + "x" + std::to_string(w) + " vs " +
                            std::to_string(s.cube.height) + "x" +
                            std::to_string(s.cube.width) + "); use batch_size 1");
    x = nn::Tensor(static_cast<int>(batch.size()), c, h, w);
    labels.resize(batch.size() * static_cast<std::size_t>(h) * w);
    std::size_t li = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col) {
                for (int b = 0; b < c; ++b)
                    x.at(static_cast<int>(i), b, r, col) = s.cube.at(r, col, b);
                labels[li++] = s.labels.at(r, col);
            }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (optimizer != "adamw")
        fail_validation("train config: unknown optimizer '" + optimizer + "'");
    if (loss != "cross_entropy")
        fail_validation("train config: unknown loss '" + loss + "'");
    if (!(learning_rate > 0)) fail_validation("train config: learning_rate must be > 0");
    if (!(optimizer_epsilon > 0))
        fail_validation("train config: optimizer_epsilon must be > 0");
    if (batch_size < 1) fail_validation("train config: batch_size must be >= 1");
    if (max_epochs < 1) fail_validation("train config: max_epochs must be >= 1");
    if (early_stopping && patience < 1)
        fail_validation("train config: patience must be >= 1 with early stopping");
    if (augmentation.probability < 0.0 || augmentation.probability > 1.0)
        fail_validation("train config: augmentation probability outside [0, 1]");
}

TrainConfig default_config(const std::string& dataset) {
    TrainConfig c;
    c.dataset = dataset;
    c.learning_rate = 1e-3;
    c.early_stopping = true;
    c.augmentation = AugmentationPolicy::flip(0.1);
    if (dataset == "hyko2") {
        c.optimizer_epsilon = 1e-8;
        c.batch_size = 16;
        c.max_epochs = 500;
        c.patience = 20;
    } else if (dataset == "hcv") {
        c.optimizer_epsilon = 1e-4;
        c.batch_size = 4;
        c.max_epochs = 100;
        c.patience = 10;
    } else if (dataset == "hsidrive") {
        c.optimizer_epsilon = 1e-8;
        c.batch_size = 32;
        c.max_epochs = 300;
        c.patience = 20;
    } else {
        fail_validation("no defaults for dataset '" + dataset + "'");
    }
    return c;
}

bool has_default_config(const std::string& dataset) {
    return dataset == "hyko2" || dataset == "hcv" || dataset == "hsidrive";
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["dataset"] = c.dataset;
    j["optimizer"] = c.optimizer;
    j["learning_rate"] = c.learning_rate;
    j["optimizer_epsilon"] = c.optimizer_epsilon;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["early_stopping"] = c.early_stopping;
    j["patience"] = c.patience;
    j["loss"] = c.loss;
    j["seed"] = c.seed;
    j["augmentation"]["probability"] = c.augmentation.probability;
    auto& names = j["augmentation"]["transforms"] = nlohmann::json::array();
    for (const Transform t : c.augmentation.transforms) names.push_back(transform_name(t));
    return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
    TrainConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.dataset = j.at("dataset").get<std::string>();
        c.optimizer = j.at("optimizer").get<std::string>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.optimizer_epsilon = j.at("optimizer_epsilon").get<double>();
        c.batch_size = j.at("batch_size").get<int>();
        c.max_epochs = j.at("max_epochs").get<int>();
        c.early_stopping = j.at("early_stopping").get<bool>();
        c.patience = j.at("patience").get<int>();
        c.loss = j.at("loss").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& a = j.at("augmentation");
        c.augmentation.probability = a.at("probability").get<double>();
        c.augmentation.transforms.clear();
        for (const auto& name : a.at("transforms"))
            c.augmentation.transforms.push_back(
                transform_from_name(name.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("train config schema mismatch: ") + e.what());
    }
    c.validate();
    return c;
}

std::string run_record_to_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["run_id"] = r.run_id;
    j["dataset"] = r.dataset;
    j["variant"] = r.variant;
    j["config_hashes"] = r.config_hashes;
    j["pretrain"] = r.pretrain;
    auto& trace = j["trace"] = nlohmann::json::array();
    for (const auto& e : r.trace) {
        nlohmann::ordered_json row;
        row["epoch"] = e.epoch;
        row["train_loss"] = e.train_loss;
        row["val_jaccard_macro"] = e.val_jaccard_macro;
        row["is_best"] = e.is_best;
        trace.push_back(std::move(row));
    }
    j["best_epoch"] = r.best_epoch;
    j["best_val_jaccard"] = r.best_val_jaccard;
    j["test_scores"] = r.test_scores ? detail::scores_to_json(*r.test_scores)
                                     : nlohmann::ordered_json(nullptr);
    j["test_slot_consumed"] = r.test_slot_consumed;
    j["wall_clock_seconds"] = r.wall_clock_seconds;
    j["peak_memory_kb"] = r.peak_memory_kb;
    j["hardware"] = r.hardware;
    j["deviations"] = r.deviations;
    j["status"] = r.status;
    return j.dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
    RunRecord r;
    try {
        const auto j = nlohmann::json::parse(text);
        r.run_id = j.at("run_id").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.config_hashes =
            j.at("config_hashes").get<std::map<std::string, std::string>>();
        r.pretrain = j.at("pretrain").get<std::string>();
        for (const auto& row : j.at("trace")) {
            EpochStats e;
            e.epoch = row.at("epoch").get<int>();
            e.train_loss = row.at("train_loss").get<double>();
            e.val_jaccard_macro = row.at("val_jaccard_macro").get<double>();
            e.is_best = row.at("is_best").get<bool>();
            r.trace.push_back(e);
        }
        r.best_epoch = j.at("best_epoch").get<int>();
        r.best_val_jaccard = j.at("best_val_jaccard").get<double>();
        if (!j.at("test_scores").is_null())
            r.test_scores = detail::scores_from_json(j.at("test_scores"));
        r.test_slot_consumed = j.at("test_slot_consumed").get<bool>();
        r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        r.peak_memory_kb = j.at("peak_memory_kb").get<std::size_t>();
        r.hardware = j.at("hardware").get<std::string>();
        r.deviations = j.at("deviations").get<std::vector<std::string>>();
        r.status = j.at("status").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("run record schema mismatch: ") + e.what());
    }
    return r;
}

std::string trace_to_csv(const std::vector<EpochStats>& trace) {
    std::string out = "epoch,train_loss,val_jaccard_macro,is_best\n";
    for (const auto& e : trace) {
        out += std::to_string(e.epoch) + ',' + fmt_double(e.train_loss) + ',' +
               fmt_double(e.val_jaccard_macro) + ',' + (e.is_best ? '1' : '0');
        out += '\n';
    }
    return out;
}

void save_run(const RunRecord& record, const Checkpoint* best,
              const std::string& run_dir) {
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) fail_runtime("cannot create run directory " + run_dir);
    spill(run_dir + "/record.json", run_record_to_json(record));
    spill(run_dir + "/trace.csv", trace_to_csv(record.trace));
    if (best != nullptr) save_checkpoint(*best, run_dir + "/ckpt");
}

RunRecord load_run_record(const std::string& run_dir) {
    return run_record_from_json(slurp(run_dir + "/record.json"));
}

TrainResult train(SegmentationModel& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& config,
                  const RunContext& ctx) {
    config.validate();
    if (train_samples.empty() || !has_valid_pixel(train_samples))
        fail_validation("no training data");
    if (val_samples.empty() || !has_valid_pixel(val_samples))
        fail_validation("no validation data");

    const ModelConfig& mc = model.config();
    for (const auto& s : train_samples)
        if (s.cube.channels != mc.in_channels)
            fail_validation("shape error: model expects " +
                            std::to_string(mc.in_channels) + " channels, sample '" +
                            s.id + "' has " + std::to_string(s.cube.channels));

    RunRecord record;
    record.dataset = config.dataset;
    record.variant = ctx.variant;
    record.run_id = !ctx.run_id.empty()
                        ? ctx.run_id
                        : config.dataset + "-" + to_string(mc.architecture) + "-" +
                              ctx.variant + "-s" + std::to_string(config.seed);
    record.pretrain = to_string(mc.pretrain_mode);
    record.deviations = ctx.deviations;
    record.config_hashes = ctx.extra_hashes;
    record.config_hashes["model"] = hex64(fnv1a(model_config_to_json(mc)));
    record.config_hashes["train"] = hex64(fnv1a(train_config_to_json(config)));
    if (!record.config_hashes.count("dataset"))
        record.config_hashes["dataset"] = hex64(fnv1a(config.dataset));
    record.hardware = hardware_string();

    const auto start = std::chrono::steady_clock::now();
    Rng rng(config.seed);
    nn::AdamW opt(model.params(), static_cast<float>(config.learning_rate),
                  static_cast<float>(config.optimizer_epsilon));

    Checkpoint best;
    double best_val = -1.0;
    int best_epoch = 0;
    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        std::size_t valid_sum = 0;

        for (std::size_t at = 0; at < order.size();) {
            std::vector<Sample> batch;
            const std::size_t take =
                std::min<std::size_t>(config.batch_size, order.size() - at);
            batch.reserve(take);
            for (std::size_t i = 0; i < take; ++i, ++at)
                batch.push_back(
                    augment(train_samples[order[at]], config.augmentation, rng));

            nn::Tensor x;
            std::vector<label_t> labels;
            assemble_batch(batch, x, labels);
            const nn::Tensor logits = model.forward(x, true);
            nn::Tensor dlogits;
            const nn::CeResult ce = nn::cross_entropy_ignore(logits, labels, dlogits);
            if (ce.valid_pixels == 0) continue;  // all-ignore batch teaches nothing
            if (!std::isfinite(ce.loss)) {
                record.status = "diverged";
                record_footprint(record, start);
                if (!ctx.run_dir.empty())
                    save_run(record, best_epoch > 0 ? &best : nullptr, ctx.run_dir);
                fail_runtime("numerical divergence: non-finite loss at epoch " +
                             std::to_string(epoch));
            }
            opt.zero_grad();
            model.backward(dlogits);
            opt.step();
            loss_sum += ce.loss * static_cast<double>(ce.valid_pixels);
            valid_sum += ce.valid_pixels;
        }

        ConfusionMatrix cm(mc.num_classes);
        for (const auto& vs : val_samples)
            cm_update(cm, vs.labels, predict_labels(model, vs.cube));
        const double val_j = scores(cm).jaccard_macro;

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = valid_sum ? loss_sum / static_cast<double>(valid_sum) : 0.0;
        stats.val_jaccard_macro = val_j;
        stats.is_best = val_j > best_val;
        record.trace.push_back(stats);

        if (stats.is_best) {
            best_val = val_j;
            best_epoch = epoch;
            best = snapshot(model);
            best.seed = config.seed;
            best.meta["dataset"] = config.dataset;
            best.meta["epoch"] = std::to_string(epoch);
            best.meta["val_jaccard_macro"] = fmt_double(val_j);
        }
        if (config.early_stopping && epoch - best_epoch >= config.patience) break;
    }

    record.best_epoch = best_epoch;
    record.best_val_jaccard = best_val;
    record.status = "completed";
    record_footprint(record, start);
    if (!ctx.run_dir.empty()) save_run(record, &best, ctx.run_dir);
    return {std::move(best), std::move(record)};
}

ScoreSet evaluate(SegmentationModel& model, const std::vector<Sample>& test_samples,
                  RunRecord* record, bool override_test_reuse) {
    if (record != nullptr && record->test_slot_consumed) {
        if (!override_test_reuse)
            fail_validation("protocol violation: test reuse (the test slot of run '" +
                            record->run_id + "' is already consumed)");
        record->deviations.push_back("test slot reused under explicit override");
    }
    ConfusionMatrix cm(model.config().num_classes);
    for (const auto& s : test_samples)
        cm_update(cm, s.labels, predict_labels(model, s.cube));
    const ScoreSet result = scores(cm);
    if (record != nullptr) {
        record->test_slot_consumed = true;
        record->test_scores = result;
    }
    return result;
}

ScoreSet evaluate(const Checkpoint& ckpt, const std::vector<Sample>& test_samples,
                  RunRecord* record, bool override_test_reuse) {
    auto model = build_model(ckpt.config, ckpt.seed);
    load_tensors(*model, ckpt, [](const std::string&) { return true; });
    return evaluate(*model, test_samples, record, override_test_reuse);
}

}  // namespace hs3
