#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hs3/core.hpp"
#include "hs3/metrics.hpp"
#include "hs3/models.hpp"
#include "hs3/preprocess.hpp"

namespace hs3 {

// Fixed hyperparameters of one training job. Defaults are per-dataset and
// come from default_config; anything a caller overrides afterwards is a
// deviation the run record must disclose.
struct TrainConfig {
    std::string dataset;
    std::string optimizer = "adamw";
    double learning_rate = 1e-3;
    double optimizer_epsilon = 1e-8;
    int batch_size = 16;
    int max_epochs = 500;
    bool early_stopping = true;
    int patience = 20;
    std::string loss = "cross_entropy";
    std::uint64_t seed = 0;
    AugmentationPolicy augmentation = AugmentationPolicy::flip(0.1);

    void validate() const;
};

// Benchmark defaults for a registered training recipe; unknown names raise
// "no defaults".
TrainConfig default_config(const std::string& dataset);
bool has_default_config(const std::string& dataset);

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_jaccard_macro = 0.0;
    bool is_best = false;
};

// Everything needed to audit one run: configuration fingerprints, the full
// epoch trace, the single test-set result and the compute footprint.
struct RunRecord {
    std::string run_id;
    std::string dataset;
    std::string variant = "hsi";  // hsi | pca1 | prgb
    std::map<std::string, std::string> config_hashes;
    std::string pretrain = "none";
    std::vector<EpochStats> trace;
    int best_epoch = 0;
    double best_val_jaccard = 0.0;
    std::optional<ScoreSet> test_scores;
    bool test_slot_consumed = false;  // the test set is a one-shot resource
    double wall_clock_seconds = 0.0;
    std::size_t peak_memory_kb = 0;
    std::string hardware;
    std::vector<std::string> deviations;
    std::string status = "pending";  // completed | diverged
};

std::string run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& text);
std::string trace_to_csv(const std::vector<EpochStats>& trace);

// Writes record.json, trace.csv and (when given) ckpt under run_dir.
void save_run(const RunRecord& record, const Checkpoint* best,
              const std::string& run_dir);
RunRecord load_run_record(const std::string& run_dir);

// Caller-supplied identity of the experiment cell; train() fills the rest.
struct RunContext {
    std::string variant = "hsi";
    std::string run_id;   // empty: derived from dataset/architecture/variant/seed
    std::string run_dir;  // empty: nothing is persisted
    std::map<std::string, std::string> extra_hashes;
    std::vector<std::string> deviations;
};

struct TrainResult {
    Checkpoint best;
    RunRecord record;
};

// Mini-batch optimization of masked pixelwise cross-entropy with per-epoch
// validation; keeps the checkpoint with the best validation macro Jaccard
// and stops early after `patience` epochs without strict improvement. A
// non-finite loss aborts with "numerical divergence" after persisting the
// partial record (when ctx.run_dir is set).
TrainResult train(SegmentationModel& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& config,
                  const RunContext& ctx = {});

// Streams predictions over the test set into one confusion matrix. When a
// record is supplied its test slot is consumed; a second evaluation is
// rejected with "protocol violation: test reuse" unless overridden, and an
// override is itself recorded as a deviation.
ScoreSet evaluate(SegmentationModel& model, const std::vector<Sample>& test_samples,
                  RunRecord* record = nullptr, bool override_test_reuse = false);
ScoreSet evaluate(const Checkpoint& ckpt, const std::vector<Sample>& test_samples,
                  RunRecord* record = nullptr, bool override_test_reuse = false);

}  // namespace hs3
