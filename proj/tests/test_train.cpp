#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "hs3/dataset.hpp"
#include "hs3/nn/layers.hpp"
#include "hs3/train.hpp"

using namespace hs3;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("hs3_test_" + tag + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::vector<Sample> load_fixture(const FixtureSpec& spec, const std::string& dir) {
    const DatasetDescriptor d = generate_fixture(spec, dir);
    std::vector<Sample> samples;
    for (const auto& id : list_samples(d)) samples.push_back(load_sample(d, id));
    return samples;
}

ModelConfig tiny_runet(int c, int k, bool bn = true) {
    ModelConfig cfg;
    cfg.architecture = Architecture::runet;
    cfg.in_channels = c;
    cfg.num_classes = k;
    cfg.base_width = 4;
    cfg.dropout_p = 0.1;
    cfg.batchnorm = bn;
    return cfg;
}

TrainConfig fixture_train_config(int batch, int max_epochs, int patience,
                                 std::uint64_t seed) {
    TrainConfig c;
    c.dataset = "fixture";
    c.batch_size = batch;
    c.max_epochs = max_epochs;
    c.patience = patience;
    c.seed = seed;
    c.augmentation = AugmentationPolicy::flip(0.1);
    return c;
}

// Nearest-mean classifier over the fixture class spectra: a 1x1 conv with
// weight row mu_k and bias -|mu_k|^2 / 2 maximizes mu_k.x - |mu_k|^2/2,
// which is exact on noise-free fixture pixels.
class NearestMeanModel : public SegmentationModel {
public:
    explicit NearestMeanModel(const FixtureSpec& spec)
        : conv_(spec.channels, spec.num_classes, 1) {
        config_.architecture = Architecture::runet;
        config_.in_channels = spec.channels;
        config_.num_classes = spec.num_classes;
        Rng rng(0);
        conv_.init(rng, "oracle");
        for (int k = 0; k < spec.num_classes; ++k) {
            const auto mu = fixture_class_spectrum(spec, k);
            double sq = 0.0;
            for (const double m : mu) sq += m * m;
            for (int c = 0; c < spec.channels; ++c)
                conv_.weight.value.v[static_cast<std::size_t>(k) * spec.channels + c] =
                    static_cast<float>(mu[c]);
            conv_.bias.value.v[k] = static_cast<float>(-0.5 * sq);
        }
        conv_.collect(params_);
    }

    nn::Tensor forward(const nn::Tensor& x, bool) override { return conv_.forward(x); }
    nn::Tensor backward(const nn::Tensor& dy) override { return conv_.backward(dy); }
    std::vector<std::string> output_layer_names() const override {
        return {"oracle.weight", "oracle.bias"};
    }
    void set_bn_frozen(bool) override {}
    void set_frozen_activations(bool) override {}

private:
    nn::Conv2d conv_;
};

// Always emits the same logits: class 0 wins every pixel.
class ConstantClassModel : public SegmentationModel {
public:
    ConstantClassModel(int in_channels, int num_classes) {
        config_.in_channels = in_channels;
        config_.num_classes = num_classes;
    }
    nn::Tensor forward(const nn::Tensor& x, bool) override {
        nn::Tensor y(x.n, config_.num_classes, x.h, x.w);
        for (int i = 0; i < y.n; ++i)
            for (int r = 0; r < y.h; ++r)
                for (int c = 0; c < y.w; ++c) y.at(i, 0, r, c) = 1.0f;
        return y;
    }
    nn::Tensor backward(const nn::Tensor&) override {
        fail_runtime("constant model has no gradient");
    }
    std::vector<std::string> output_layer_names() const override { return {}; }
    void set_bn_frozen(bool) override {}
    void set_frozen_activations(bool) override {}
};

}  // namespace

TEST_CASE("default_config reproduces the per-dataset training rows") {
    const TrainConfig hyko = default_config("hyko2");
    CHECK(hyko.optimizer == "adamw");
    CHECK(hyko.learning_rate == doctest::Approx(1e-3));
    CHECK(hyko.optimizer_epsilon == doctest::Approx(1e-8));
    CHECK(hyko.batch_size == 16);
    CHECK(hyko.max_epochs == 500);
    CHECK(hyko.early_stopping);
    CHECK(hyko.patience == 20);
    CHECK(hyko.loss == "cross_entropy");
    CHECK(hyko.augmentation.probability == doctest::Approx(0.1));
    REQUIRE(hyko.augmentation.transforms.size() == 1);
    CHECK(hyko.augmentation.transforms[0] == Transform::horizontal_flip);

    const TrainConfig hcv = default_config("hcv");
    CHECK(hcv.learning_rate == doctest::Approx(1e-3));
    CHECK(hcv.optimizer_epsilon == doctest::Approx(1e-4));
    CHECK(hcv.batch_size == 4);
    CHECK(hcv.max_epochs == 100);
    CHECK(hcv.patience == 10);

    const TrainConfig drive = default_config("hsidrive");
    CHECK(drive.optimizer_epsilon == doctest::Approx(1e-8));
    CHECK(drive.batch_size == 32);
    CHECK(drive.max_epochs == 300);
    CHECK(drive.patience == 20);

    CHECK_THROWS_WITH_AS(default_config("cityscapes"), doctest::Contains("no defaults"),
                         Error);
}

TEST_CASE("train config invariants are enforced") {
    TrainConfig c = default_config("hyko2");
    CHECK_NOTHROW(c.validate());

    TrainConfig bad = c;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.early_stopping = true;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.optimizer = "sgd";
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.loss = "dice";
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.augmentation.probability = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("train config JSON round trip") {
    TrainConfig c = default_config("hcv");
    c.seed = 4242;
    const TrainConfig back = train_config_from_json(train_config_to_json(c));
    CHECK(back.dataset == c.dataset);
    CHECK(back.optimizer == c.optimizer);
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.optimizer_epsilon == c.optimizer_epsilon);
    CHECK(back.batch_size == c.batch_size);
    CHECK(back.max_epochs == c.max_epochs);
    CHECK(back.early_stopping == c.early_stopping);
    CHECK(back.patience == c.patience);
    CHECK(back.loss == c.loss);
    CHECK(back.seed == c.seed);
    CHECK(back.augmentation.probability == c.augmentation.probability);
    CHECK(back.augmentation.transforms == c.augmentation.transforms);
}

TEST_CASE("ignored pixels change the loss by exactly zero") {
    Rng rng(9);
    nn::Tensor logits(1, 3, 2, 2);
    for (auto& v : logits.v) v = static_cast<float>(gaussian(rng));
    const std::vector<label_t> labels{0, 2, kIgnore, 1};
    nn::Tensor grad;
    const nn::CeResult base = nn::cross_entropy_ignore(logits, labels, grad);
    CHECK(base.valid_pixels == 3);

    // Same valid pixels plus one extra ignored column of arbitrary logits.
    nn::Tensor wider(1, 3, 2, 3);
    std::vector<label_t> wider_labels(6, kIgnore);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            for (int ch = 0; ch < 3; ++ch) wider.at(0, ch, r, c) = logits.at(0, ch, r, c);
            wider_labels[static_cast<std::size_t>(r) * 3 + c] =
                labels[static_cast<std::size_t>(r) * 2 + c];
        }
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 2; ++r)
            wider.at(0, ch, r, 2) = static_cast<float>(gaussian(rng) * 10.0);

    nn::Tensor wider_grad;
    const nn::CeResult masked = nn::cross_entropy_ignore(wider, wider_labels, wider_grad);
    CHECK(masked.valid_pixels == base.valid_pixels);
    CHECK(masked.loss == base.loss);  // bit-identical, not merely close
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 2; ++r) CHECK(wider_grad.at(0, ch, r, 2) == 0.0f);

    // An all-ignore batch reports zero valid pixels instead of a loss.
    const std::vector<label_t> all_ignore(4, kIgnore);
    nn::Tensor g2;
    const nn::CeResult empty = nn::cross_entropy_ignore(logits, all_ignore, g2);
    CHECK(empty.valid_pixels == 0);
    CHECK(empty.loss == 0.0);
}

TEST_CASE("evaluate: a nearest-mean oracle scores 1.0 on the noise-free fixture") {
    TempDir dir("eval_oracle");
    FixtureSpec spec;
    spec.n_images = 3;
    spec.height = 12;
    spec.width = 12;
    spec.channels = 5;
    spec.num_classes = 4;
    spec.noise_sigma = 0.0;
    spec.seed = 21;
    const auto samples = load_fixture(spec, dir.str());

    NearestMeanModel oracle(spec);
    const ScoreSet s = evaluate(oracle, samples);
    CHECK(s.acc_micro == doctest::Approx(1.0));
    CHECK(s.acc_macro == doctest::Approx(1.0));
    CHECK(s.f1_macro == doctest::Approx(1.0));
    CHECK(s.jaccard_macro == doctest::Approx(1.0));
}

TEST_CASE("evaluate: constant predictor on a 99:1 two-class image") {
    Sample sample;
    sample.id = "imbalanced";
    sample.cube = SpectralCube(10, 10, 2);
    sample.labels = LabelMap(10, 10, 0);
    sample.labels.at(9, 9) = 1;  // single positive pixel

    ConstantClassModel model(2, 2);
    const ScoreSet s = evaluate(model, {sample});
    CHECK(s.acc_micro == doctest::Approx(0.99));
    CHECK(s.acc_macro == doctest::Approx(0.50));
}

TEST_CASE("evaluate consumes the test slot exactly once") {
    Sample sample;
    sample.cube = SpectralCube(4, 4, 2);
    sample.labels = LabelMap(4, 4, 0);
    ConstantClassModel model(2, 2);

    RunRecord record;
    record.run_id = "slot-test";
    const ScoreSet first = evaluate(model, {sample}, &record);
    CHECK(record.test_slot_consumed);
    REQUIRE(record.test_scores.has_value());
    CHECK(record.test_scores->acc_micro == doctest::Approx(first.acc_micro));

    CHECK_THROWS_WITH_AS(evaluate(model, {sample}, &record),
                         doctest::Contains("protocol violation: test reuse"), Error);
    try {
        evaluate(model, {sample}, &record);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::validation);
    }

    CHECK(record.deviations.empty());
    CHECK_NOTHROW(evaluate(model, {sample}, &record, /*override_test_reuse=*/true));
    REQUIRE(record.deviations.size() == 1);
    CHECK(record.deviations[0] == "test slot reused under explicit override");
}

TEST_CASE("train fits the fixture and returns the best-validation checkpoint") {
    TempDir dir("train_fit");
    FixtureSpec spec;
    spec.n_images = 6;
    spec.height = 16;
    spec.width = 16;
    spec.channels = 4;
    spec.num_classes = 3;
    spec.noise_sigma = 0.05;
    spec.seed = 11;
    const auto all = load_fixture(spec, dir.str() + "/data");
    const std::vector<Sample> train_set(all.begin(), all.begin() + 4);
    const std::vector<Sample> val_set(all.begin() + 4, all.end());

    auto model = build_runet(tiny_runet(4, 3), 5);
    TrainConfig cfg = fixture_train_config(2, 60, 15, 3);
    cfg.learning_rate = 3e-3;
    RunContext ctx;
    ctx.run_dir = dir.str() + "/run";
    ctx.extra_hashes["splits"] = "feedfeedfeedfeed";
    auto [best, record] = train(*model, train_set, val_set, cfg, ctx);

    REQUIRE(!record.trace.empty());
    CHECK(record.status == "completed");
    CHECK(record.trace.size() <= 60);
    CHECK(record.trace.front().train_loss > record.trace.back().train_loss);
    CHECK(record.best_val_jaccard > 0.5);

    // The recorded best is the max of the validation trace, and early
    // stopping fired exactly `patience` epochs past it when it fired.
    double best_seen = -1.0;
    int best_epoch = 0;
    for (const auto& e : record.trace)
        if (e.val_jaccard_macro > best_seen) {
            best_seen = e.val_jaccard_macro;
            best_epoch = e.epoch;
        }
    CHECK(record.best_val_jaccard == best_seen);
    CHECK(record.best_epoch == best_epoch);
    if (record.trace.size() < 60)
        CHECK(record.trace.back().epoch == record.best_epoch + cfg.patience);

    // Run bookkeeping.
    CHECK(record.run_id == "fixture-runet-hsi-s3");
    CHECK(record.pretrain == "none");
    CHECK(record.config_hashes.count("model") == 1);
    CHECK(record.config_hashes.count("train") == 1);
    CHECK(record.config_hashes.at("splits") == "feedfeedfeedfeed");
    CHECK(record.wall_clock_seconds > 0.0);
    CHECK(record.peak_memory_kb > 0);
    CHECK(!record.hardware.empty());
    CHECK(!record.test_slot_consumed);

    // The returned checkpoint reproduces the recorded best validation score.
    CHECK(best.meta.at("epoch") == std::to_string(record.best_epoch));
    const ScoreSet revalidated = evaluate(best, val_set);
    CHECK(revalidated.jaccard_macro == record.best_val_jaccard);

    // Persistence: record and trace round-trip from the run directory.
    const RunRecord reloaded = load_run_record(ctx.run_dir);
    CHECK(run_record_to_json(reloaded) == run_record_to_json(record));
    CHECK(fs::exists(fs::path(ctx.run_dir) / "trace.csv"));
    const Checkpoint saved = load_checkpoint(ctx.run_dir + "/ckpt");
    CHECK(saved.tensors.size() == best.tensors.size());
}

TEST_CASE("identical seeds give identical training traces") {
    TempDir dir("train_det");
    FixtureSpec spec;
    spec.n_images = 4;
    spec.height = 16;
    spec.width = 16;
    spec.channels = 3;
    spec.num_classes = 2;
    spec.noise_sigma = 0.1;
    spec.seed = 2;
    const auto all = load_fixture(spec, dir.str());
    const std::vector<Sample> train_set(all.begin(), all.begin() + 3);
    const std::vector<Sample> val_set(all.begin() + 3, all.end());

    TrainConfig cfg = fixture_train_config(2, 3, 3, 17);
    cfg.early_stopping = false;

    auto run_once = [&]() {
        auto model = build_runet(tiny_runet(3, 2), 9);
        return train(*model, train_set, val_set, cfg).record;
    };
    const RunRecord a = run_once();
    const RunRecord b = run_once();
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].train_loss == b.trace[i].train_loss);
        CHECK(a.trace[i].val_jaccard_macro == b.trace[i].val_jaccard_macro);
    }
}

TEST_CASE("train rejects unusable splits") {
    TempDir dir("train_empty");
    FixtureSpec spec;
    spec.n_images = 2;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 3;
    spec.num_classes = 2;
    spec.seed = 5;
    const auto all = load_fixture(spec, dir.str());

    auto model = build_runet(tiny_runet(3, 2), 1);
    const TrainConfig cfg = fixture_train_config(2, 2, 1, 0);

    CHECK_THROWS_WITH_AS(train(*model, {}, all, cfg),
                         doctest::Contains("no training data"), Error);

    // All-ignore training labels are as unusable as no samples at all.
    std::vector<Sample> masked = {all[0]};
    std::fill(masked[0].labels.labels.begin(), masked[0].labels.labels.end(), kIgnore);
    CHECK_THROWS_WITH_AS(train(*model, masked, all, cfg),
                         doctest::Contains("no training data"), Error);

    CHECK_THROWS_WITH_AS(train(*model, all, {}, cfg),
                         doctest::Contains("no validation data"), Error);
}

TEST_CASE("divergence aborts with a partial record on disk") {
    TempDir dir("train_div");
    FixtureSpec spec;
    spec.n_images = 4;
    spec.height = 16;
    spec.width = 16;
    spec.channels = 3;
    spec.num_classes = 2;
    spec.noise_sigma = 0.05;
    spec.seed = 13;
    const auto all = load_fixture(spec, dir.str() + "/data");
    const std::vector<Sample> train_set(all.begin(), all.begin() + 3);
    const std::vector<Sample> val_set(all.begin() + 3, all.end());

    // Without normalization an absurd learning rate overflows float32
    // activations within an epoch or two.
    auto model = build_runet(tiny_runet(3, 2, /*bn=*/false), 2);
    TrainConfig cfg = fixture_train_config(3, 8, 8, 1);
    cfg.learning_rate = 1e20;
    RunContext ctx;
    ctx.run_dir = dir.str() + "/run";

    CHECK_THROWS_WITH_AS(train(*model, train_set, val_set, cfg, ctx),
                         doctest::Contains("numerical divergence"), Error);
    const RunRecord partial = load_run_record(ctx.run_dir);
    CHECK(partial.status == "diverged");
}

TEST_CASE("run record JSON round trip is lossless") {
    RunRecord r;
    r.run_id = "hyko2-runet-hsi-s7";
    r.dataset = "hyko2";
    r.variant = "hsi";
    r.config_hashes = {{"dataset", "aa"}, {"model", "bb"}, {"train", "cc"}};
    r.pretrain = "transfer_pt";
    r.trace = {{1, 1.25, 0.25, true}, {2, 0.75, 0.5, true}, {3, 0.8, 0.4, false}};
    r.best_epoch = 2;
    r.best_val_jaccard = 0.5;
    ScoreSet s;
    s.acc_micro = 0.9;
    s.acc_macro = 0.8;
    s.f1_macro = 0.7;
    s.jaccard_macro = 0.6;
    s.recall = {1.0, 0.6};
    s.precision = {0.9, 0.7};
    s.f1 = {0.94, 0.64};
    s.jaccard = {0.9, 0.3};
    s.in_acc_macro = {true, true};
    s.in_f1j_macro = {true, true};
    r.test_scores = s;
    r.test_slot_consumed = true;
    r.wall_clock_seconds = 12.5;
    r.peak_memory_kb = 70000;
    r.hardware = "Linux x86_64, 1 hw threads";
    r.deviations = {"batch_size overridden: 4 -> 2"};
    r.status = "completed";

    const RunRecord back = run_record_from_json(run_record_to_json(r));
    CHECK(run_record_to_json(back) == run_record_to_json(r));
    CHECK(back.trace.size() == 3);
    CHECK(back.trace[1].is_best);
    REQUIRE(back.test_scores.has_value());
    CHECK(back.test_scores->jaccard == s.jaccard);
    CHECK(back.test_scores->in_f1j_macro == s.in_f1j_macro);

    // Rejects structurally broken documents.
    CHECK_THROWS_WITH_AS(run_record_from_json("{\"run_id\": 3}"),
                         doctest::Contains("schema mismatch"), Error);

    const std::string csv = trace_to_csv(r.trace);
    CHECK(csv.rfind("epoch,train_loss,val_jaccard_macro,is_best\n", 0) == 0);
    CHECK(csv.find("2,0.75,0.5,1") != std::string::npos);
}
