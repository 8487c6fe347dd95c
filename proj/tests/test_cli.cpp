// End-to-end tests of the hs3bench executable: every case drives the real
// binary through std::system and asserts on exit codes, streams and the
// artifacts left on disk.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hs3/bench.hpp"
#include "hs3/dataset.hpp"
#include "hs3/train.hpp"

using namespace hs3;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("hs3_cli_" + tag + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << text;
}

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs the CLI with `args` using `cwd` as working directory and HS3_DATA_ROOT.
CmdResult run_cli(const std::string& args, const std::string& cwd) {
    static int counter = 0;
    const std::string tag = std::to_string(counter++);
    const std::string out_file = cwd + "/.stdout." + tag;
    const std::string err_file = cwd + "/.stderr." + tag;
    const std::string cmd = "cd '" + cwd + "' && HS3_DATA_ROOT='" + cwd + "' '" +
                            HS3_CLI_PATH + "' " + args + " >'" + out_file + "' 2>'" +
                            err_file + "'";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

CmdResult expect_ok(const std::string& args, const std::string& cwd) {
    const CmdResult r = run_cli(args, cwd);
    CAPTURE(args);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    return r;
}

void make_fixture(const std::string& cwd, const std::string& name, int images = 10,
                  int channels = 5, int classes = 3, double sigma = 0.01,
                  int seed = 9) {
    std::ostringstream cmd;
    cmd << "synth-fixture --out " << name << " --name " << name << " --images "
        << images << " --height 12 --width 12 --channels " << channels
        << " --classes " << classes << " --sigma " << sigma << " --seed " << seed;
    expect_ok(cmd.str(), cwd);
}

const std::string kTinyTrain =
    "--base-width 4 --dropout 0.1 --lr 0.003 --batch-size 4 --max-epochs 8 "
    "--patience 4 --seed 3";

}  // namespace

TEST_CASE("cli: help and version exit 0; bad usage exits 2") {
    TempDir dir("usage");
    CHECK(run_cli("--help", dir.str()).code == 0);
    CHECK(run_cli("--version", dir.str()).code == 0);
    CHECK(run_cli("", dir.str()).code == 2);           // missing subcommand
    CHECK(run_cli("split", dir.str()).code == 2);      // missing --dataset
    CHECK(run_cli("frobnicate", dir.str()).code == 2);  // unknown subcommand

    const CmdResult bad = run_cli("eval --run nowhere --dataset nowhere", dir.str());
    CHECK(bad.code == 3);  // unreadable record.json is an IO failure
}

TEST_CASE("cli: split is deterministic and respects --seed") {
    TempDir dir("split");
    make_fixture(dir.str(), "fx");

    const CmdResult first = expect_ok("split --dataset fx", dir.str());
    CHECK(first.out == "fx/splits.txt\n");  // artifact path echoed on stdout
    const std::string bytes = slurp(dir.str() + "/fx/splits.txt");

    expect_ok("split --dataset fx --out again", dir.str());
    CHECK(slurp(dir.str() + "/again/splits.txt") == bytes);

    // 10 samples at (0.5, 0.3, 0.2) -> 5/3/2, pairwise disjoint.
    const SplitManifest m = load_manifest(dir.str() + "/fx/splits.txt");
    CHECK(m.train.size() == 5);
    CHECK(m.val.size() == 3);
    CHECK(m.test.size() == 2);

    expect_ok("split --dataset fx --seed 99 --out other", dir.str());
    CHECK(slurp(dir.str() + "/other/splits.txt") != bytes);

    const CmdResult missing = run_cli("split --dataset nosuch", dir.str());
    CHECK(missing.code == 2);
    CHECK(missing.err.find("dataset not found") != std::string::npos);
}

TEST_CASE("cli: fit-preproc writes sidecars and surfaces degenerate spectra") {
    TempDir dir("fitpre");
    make_fixture(dir.str(), "fx");
    expect_ok("split --dataset fx", dir.str());

    expect_ok("fit-preproc --dataset fx --variant hsi", dir.str());
    expect_ok("fit-preproc --dataset fx --variant prgb", dir.str());
    expect_ok("fit-preproc --dataset fx --variant pca1", dir.str());
    for (const std::string v : {"hsi", "prgb", "pca1"})
        CHECK(fs::is_regular_file(dir.str() + "/fx/preproc-" + v + ".json"));

    // pca1 defaults to the train split and needs the manifest.
    TempDir fresh("fitpre2");
    make_fixture(fresh.str(), "fx");
    const CmdResult nomanifest = run_cli("fit-preproc --dataset fx --variant pca1",
                                         fresh.str());
    CHECK(nomanifest.code == 2);
    CHECK(nomanifest.err.find("no split manifest") != std::string::npos);

    // A single-class noise-free fixture has zero spectral variance.
    make_fixture(fresh.str(), "flat", 4, 5, 1, 0.0);
    expect_ok("split --dataset flat", fresh.str());
    const CmdResult degenerate =
        run_cli("fit-preproc --dataset flat --variant pca1", fresh.str());
    CHECK(degenerate.code == 2);
    CHECK(degenerate.err.find("degenerate spectra") != std::string::npos);
}

TEST_CASE("cli: train produces a complete run directory and is rerunnable") {
    TempDir dir("train");
    make_fixture(dir.str(), "fx");
    expect_ok("split --dataset fx", dir.str());

    const CmdResult r =
        expect_ok("train --dataset fx --out run1 " + kTinyTrain, dir.str());
    CHECK(r.out == "fx-runet-hsi-s3\n");
    for (const std::string f :
         {"record.json", "trace.csv", "ckpt", "train_config.json",
          "model_config.json", "preproc-hsi.json"})
        CHECK(fs::is_regular_file(dir.str() + "/run1/" + f));

    const RunRecord record = load_run_record(dir.str() + "/run1");
    CHECK(record.status == "completed");
    CHECK(record.run_id == "fx-runet-hsi-s3");
    CHECK_FALSE(record.test_slot_consumed);
    CHECK(!record.trace.empty());
    CHECK(record.config_hashes.count("preproc") == 1);

    // Identical invocation in a second directory: bit-identical trace.
    expect_ok("train --dataset fx --out run2 " + kTinyTrain, dir.str());
    CHECK(slurp(dir.str() + "/run2/trace.csv") == slurp(dir.str() + "/run1/trace.csv"));

    // Flags override the config file, which overrides defaults.
    spill(dir.str() + "/cfg.json", "{\"max_epochs\": 2, \"seed\": 3}");
    expect_ok("train --dataset fx --out run3 --config cfg.json --base-width 4 "
              "--dropout 0.1 --lr 0.003 --batch-size 4 --patience 4",
              dir.str());
    CHECK(load_run_record(dir.str() + "/run3").trace.size() == 2);
    expect_ok("train --dataset fx --out run4 --config cfg.json --base-width 4 "
              "--dropout 0.1 --lr 0.003 --batch-size 4 --patience 4 --max-epochs 1",
              dir.str());
    CHECK(load_run_record(dir.str() + "/run4").trace.size() == 1);

    const CmdResult badkey = run_cli(
        "train --dataset fx --out run5 --config bad.json", dir.str());
    CHECK(badkey.code == 3);  // missing file is an IO failure
    spill(dir.str() + "/bad.json", "{\"learning_rat\": 1.0}");
    const CmdResult badkey2 = run_cli(
        "train --dataset fx --out run5 --config bad.json", dir.str());
    CHECK(badkey2.code == 2);
    CHECK(badkey2.err.find("unknown key") != std::string::npos);
}

TEST_CASE("cli: eval consumes the test slot exactly once and renders PNGs") {
    TempDir dir("eval");
    make_fixture(dir.str(), "fx");
    expect_ok("split --dataset fx", dir.str());
    expect_ok("train --dataset fx --out run1 " + kTinyTrain, dir.str());

    const CmdResult first =
        expect_ok("eval --run run1 --dataset fx --render pics", dir.str());
    std::istringstream lines(first.out);
    std::string header, row;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row));
    CHECK(header == kScoreCsvHeader);
    CHECK(row.rfind("fx,runet,hsi,", 0) == 0);

    // One side-by-side render per test sample.
    int pngs = 0;
    for (const auto& entry : fs::directory_iterator(dir.str() + "/pics"))
        if (entry.path().extension() == ".png") ++pngs;
    CHECK(pngs == 2);

    const CmdResult reuse = run_cli("eval --run run1 --dataset fx", dir.str());
    CHECK(reuse.code == 2);
    CHECK(reuse.err.find("protocol violation: test reuse") != std::string::npos);

    // val split does not touch the slot; an explicit override does, and the
    // deviation lands in the persisted record.
    CHECK(run_cli("eval --run run1 --dataset fx --split val", dir.str()).code == 0);
    const CmdResult forced =
        run_cli("eval --run run1 --dataset fx --override-test-reuse", dir.str());
    CHECK(forced.code == 0);
    const RunRecord record = load_run_record(dir.str() + "/run1");
    CHECK(record.test_slot_consumed);
    bool disclosed = false;
    for (const auto& d : record.deviations)
        if (d.find("override") != std::string::npos) disclosed = true;
    CHECK(disclosed);
}

TEST_CASE("cli: bench runs the full matrix and enforces the plan guidelines") {
    TempDir dir("bench");
    make_fixture(dir.str(), "fxa", 8, 4, 3, 0.01, 11);
    make_fixture(dir.str(), "fxb", 8, 4, 3, 0.01, 12);
    expect_ok("split --dataset fxa", dir.str());
    expect_ok("split --dataset fxb", dir.str());

    BenchmarkPlan plan;
    plan.datasets = {"fxa", "fxb"};
    ApproachSpec a;
    a.name = "net-a";
    a.variant = "hsi";
    a.model.base_width = 4;
    a.model.dropout_p = 0.1;
    ApproachSpec b = a;
    b.name = "net-b";
    b.variant = "pca1";
    plan.approaches = {a, b};
    for (const std::string d : {"fxa", "fxb"}) {
        TrainConfig tc;
        tc.dataset = d;
        tc.learning_rate = 3e-3;
        tc.batch_size = 4;
        tc.max_epochs = 6;
        tc.patience = 3;
        plan.train_configs[d] = tc;
    }
    spill(dir.str() + "/plan.json", plan_to_json(plan));

    const CmdResult r =
        expect_ok("bench --plan plan.json --out bench1 --datasets fxa,fxb", dir.str());
    for (const std::string f :
         {"report.csv", "report.md", "provenance.md", "report.json"})
        CHECK(fs::is_regular_file(dir.str() + "/bench1/" + f));

    const std::string csv = slurp(dir.str() + "/bench1/report.csv");
    for (const std::string needle :
         {"fxa,net-a,hsi,", "fxa,net-b,pca1,", "fxb,net-a,hsi,", "fxb,net-b,pca1,",
          "average,net-a,hsi,", "worst_case,net-b,pca1,"})
        CHECK(csv.find(needle) != std::string::npos);

    // Four persisted runs, each with its test slot consumed.
    int runs = 0;
    for (const auto& entry : fs::directory_iterator(dir.str() + "/bench1/runs")) {
        CHECK(load_run_record(entry.path().string()).test_slot_consumed);
        ++runs;
    }
    CHECK(runs == 4);

    // Guideline 1: the plan must cover the registered set exactly.
    BenchmarkPlan narrow = plan;
    narrow.datasets = {"fxa"};
    spill(dir.str() + "/narrow.json", plan_to_json(narrow));
    const CmdResult g1 = run_cli(
        "bench --plan narrow.json --out nope --datasets fxa,fxb", dir.str());
    CHECK(g1.code == 2);
    CHECK(g1.err.find("every registered benchmark dataset") != std::string::npos);

    // Guideline 2: one architecture per approach.
    BenchmarkPlan mixed = plan;
    mixed.approaches[0].dataset_architecture = {{"fxa", Architecture::runet},
                                                {"fxb", Architecture::dl3}};
    spill(dir.str() + "/mixed.json", plan_to_json(mixed));
    const CmdResult g2 = run_cli(
        "bench --plan mixed.json --out nope --datasets fxa,fxb", dir.str());
    CHECK(g2.code == 2);
    CHECK(g2.err.find("single model architecture") != std::string::npos);

    // The default registered set is the real benchmark, absent on this disk.
    const CmdResult real = run_cli("bench --plan plan.json --out nope", dir.str());
    CHECK(real.code == 2);
    CHECK(real.err.find("dataset not found") != std::string::npos);
}

TEST_CASE("cli: bench twice then report --compare shows all-zero deltas") {
    TempDir dir("cmp");
    make_fixture(dir.str(), "fxa", 8, 4, 3, 0.01, 11);
    expect_ok("split --dataset fxa", dir.str());

    BenchmarkPlan plan;
    plan.datasets = {"fxa"};
    ApproachSpec a;
    a.name = "net-a";
    a.model.base_width = 4;
    a.model.dropout_p = 0.1;
    plan.approaches = {a};
    TrainConfig tc;
    tc.dataset = "fxa";
    tc.learning_rate = 3e-3;
    tc.batch_size = 4;
    tc.max_epochs = 5;
    tc.patience = 3;
    plan.train_configs["fxa"] = tc;
    spill(dir.str() + "/plan.json", plan_to_json(plan));

    expect_ok("bench --plan plan.json --out b1 --datasets fxa", dir.str());
    expect_ok("bench --plan plan.json --out b2 --datasets fxa", dir.str());
    CHECK(slurp(dir.str() + "/b1/report.csv") == slurp(dir.str() + "/b2/report.csv"));

    const CmdResult cmp = expect_ok("report --compare b1 b2", dir.str());
    CHECK(cmp.out.find("fxa,hsi,net-a,net-a,+0.00,+0.00,+0.00,+0.00") !=
          std::string::npos);

    // Re-emitting from report.json is byte-identical.
    expect_ok("report --from b1 --out re1", dir.str());
    CHECK(slurp(dir.str() + "/re1/report.csv") == slurp(dir.str() + "/b1/report.csv"));
    CHECK(slurp(dir.str() + "/re1/report.md") == slurp(dir.str() + "/b1/report.md"));

    const CmdResult neither = run_cli("report", dir.str());
    CHECK(neither.code == 2);
}

TEST_CASE("cli: report --compare reproduces a published-style average delta") {
    TempDir dir("delta");

    // Hand-built single-approach reports carrying per-dataset macro Jaccard
    // values; the rounded average delta must match hand arithmetic.
    auto scored_report = [](const std::string& approach,
                            const std::map<std::string, double>& jm) {
        BenchmarkReport report;
        report.approaches = {approach};
        for (const auto& [dataset, v] : jm) {
            report.datasets.push_back(dataset);
            CellResult cell;
            cell.dataset = dataset;
            cell.approach = approach;
            cell.variant = "hsi";
            ScoreSet s;
            s.acc_micro = s.acc_macro = s.f1_macro = s.jaccard_macro = v;
            cell.scores = s;
            report.cells.push_back(cell);
        }
        report.summaries = compute_summaries(report);
        return report;
    };

    const BenchmarkReport unet = scored_report(
        "U-Net", {{"hcv", 0.3773}, {"hyko2", 0.5739}, {"hsidrive", 0.6495}});
    const BenchmarkReport runet = scored_report(
        "RU-Net", {{"hcv", 0.4223}, {"hyko2", 0.5864}, {"hsidrive", 0.7218}});
    fs::create_directories(dir.str() + "/a");
    fs::create_directories(dir.str() + "/b");
    spill(dir.str() + "/a/report.json", report_to_json(unet));
    spill(dir.str() + "/b/report.json", report_to_json(runet));

    const CmdResult cmp = expect_ok("report --compare a b", dir.str());
    CHECK(cmp.out.find("average,hsi,U-Net,RU-Net,+4.32,+4.32,+4.32,+4.32") !=
          std::string::npos);
    CHECK(cmp.out.find("worst_case,hsi,U-Net,RU-Net,+4.50,+4.50,+4.50,+4.50") !=
          std::string::npos);
    CHECK(cmp.out.find("hcv,hsi,U-Net,RU-Net,+4.50") != std::string::npos);

    const CmdResult self = expect_ok("report --compare a a", dir.str());
    CHECK(self.out.find("average,hsi,U-Net,U-Net,+0.00") != std::string::npos);
}
