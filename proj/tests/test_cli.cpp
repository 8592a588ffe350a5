// Drives the installed binary end to end on the synthetic corpus: exit
// codes, artifact layout, rerun determinism and the documented failure
// modes. FLOWHUNTER_CLI is injected by the build.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "flowhunter/checkpoint.hpp"
#include "flowhunter/io.hpp"
#include "support/synthetic_dataset.hpp"
#include "support/temp_dir.hpp"

using namespace flowhunter;
using Catch::Matchers::ContainsSubstring;

namespace {

struct CmdResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct CliEnv {
    fixture::TempDir dir;
    std::string csv;
    std::string bundle;
    int cmd_counter = 0;
};

CliEnv& env() {
    static CliEnv e;
    return e;
}

CmdResult run_cli(const std::string& args, const std::string& prefix = "") {
    auto& e = env();
    const std::string tag = std::to_string(e.cmd_counter++);
    const std::string so = e.dir.str("cmd" + tag + ".out");
    const std::string se = e.dir.str("cmd" + tag + ".err");
    const std::string cmd =
        prefix + "\"" + FLOWHUNTER_CLI + "\" " + args + " >\"" + so + "\" 2>\"" + se + "\"";
    const int rc = std::system(cmd.c_str());
    CmdResult r;
    r.code = (rc >= 0 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(so);
    r.err = slurp(se);
    return r;
}

const std::string& fixture_csv() {
    auto& e = env();
    if (e.csv.empty()) {
        e.csv = e.dir.str("fixture.csv");
        fixture::write_edge_like_csv(e.csv, fixture::FixtureSpec{});
    }
    return e.csv;
}

// A preprocessed bundle shared across cases; built once.
const std::string& shared_bundle() {
    auto& e = env();
    if (e.bundle.empty()) {
        const std::string out = e.dir.str("shared_bundle");
        const CmdResult r =
            run_cli("preprocess --dataset \"" + fixture_csv() + "\" --out \"" + out + "\"");
        if (r.code != 0) {
            throw std::runtime_error("shared bundle preprocess failed: " + r.err);
        }
        e.bundle = out;
    }
    return e.bundle;
}

const char* kTinyTrain = " --epochs 1 --blocks 1 --heads 2 --head-size 8 --filters 16"
                         " --batch-size 128";

} // namespace

TEST_CASE("cli: help exits 0, usage mistakes exit 2") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("bogus").code == 2);

    const CmdResult no_data = run_cli("preprocess --out /tmp/never", "env -u EDGE_IIOT_CSV ");
    CHECK(no_data.code == 2);
    CHECK_THAT(no_data.err, ContainsSubstring("EDGE_IIOT_CSV"));

    const CmdResult no_ckpt = run_cli("evaluate --bundle x --out y");
    CHECK(no_ckpt.code == 2);
    CHECK_THAT(no_ckpt.err, ContainsSubstring("--checkpoint"));
}

TEST_CASE("cli: preprocess rejects a missing input and names the path") {
    const CmdResult r = run_cli("preprocess --dataset /no/such/file.csv --out /tmp/never");
    CHECK(r.code == 2);
    CHECK_THAT(r.err, ContainsSubstring("/no/such/file.csv"));
}

TEST_CASE("cli: preprocess writes a complete bundle and reruns byte-identically") {
    fixture::TempDir dir;
    const std::string b1 = dir.str("b1"), b2 = dir.str("b2");
    const CmdResult r1 =
        run_cli("preprocess --dataset \"" + fixture_csv() + "\" --out \"" + b1 + "\"");
    REQUIRE(r1.code == 0);
    CHECK_THAT(r1.out, ContainsSubstring("95 features"));

    const Bundle b = read_bundle(b1);
    CHECK(b.train.n_features == 95);
    CHECK(b.manifest.at("n_features").get<int>() == 95);
    CHECK(b.manifest.contains("stats"));
    CHECK(b.manifest.contains("encoders"));
    CHECK(b.manifest.at("preprocess").at("duplicates_removed").get<int>() == 30);

    const CmdResult r2 =
        run_cli("preprocess --dataset \"" + fixture_csv() + "\" --out \"" + b2 + "\"");
    REQUIRE(r2.code == 0);
    for (const char* f : {"manifest.json", "train_features.bin", "train_labels.bin",
                          "train_flags.bin", "test_features.bin", "test_labels.bin",
                          "test_flags.bin"}) {
        CHECK(slurp(b1 + "/" + f) == slurp(b2 + "/" + f));
    }
}

TEST_CASE("cli: augment grows targeted classes and reports refusals without failing") {
    fixture::TempDir dir;
    const std::string out = dir.str("aug");
    const CmdResult r = run_cli("augment --bundle \"" + shared_bundle() + "\" --out \"" + out +
                                "\" --times Fingerprinting=3 --target MITM=200 --gan-steps 120");
    REQUIRE(r.code == 0);
    CHECK_THAT(r.err, ContainsSubstring("MITM") && ContainsSubstring("refused"));
    CHECK_THAT(r.out, ContainsSubstring("Fingerprinting"));

    const Bundle before = read_bundle(shared_bundle());
    const Bundle after = read_bundle(out);
    const int fp = after.train.codec.encode("Fingerprinting");
    const int mitm = after.train.codec.encode("MITM");
    const auto counts_before = before.train.class_counts();
    const auto counts_after = after.train.class_counts();
    CHECK(counts_after[static_cast<std::size_t>(fp)] ==
          3 * counts_before[static_cast<std::size_t>(fp)]);
    CHECK(counts_after[static_cast<std::size_t>(mitm)] ==
          counts_before[static_cast<std::size_t>(mitm)]);
    CHECK(after.test.n_rows == before.test.n_rows);

    std::int64_t generated = 0;
    for (auto f : after.train.synthetic) generated += f;
    CHECK(generated == 2 * counts_before[static_cast<std::size_t>(fp)]);

    const json sidecar = json::parse(slurp(out + "/augment.json"));
    CHECK(sidecar.at("format") == "flowhunter-augment-v1");
    CHECK(sidecar.at("total_generated").get<std::int64_t>() == generated);
    bool saw_refusal = false;
    for (const auto& c : sidecar.at("classes")) {
        if (c.at("class") == "MITM") saw_refusal = c.at("refused").get<bool>();
    }
    CHECK(saw_refusal);
}

TEST_CASE("cli: train and evaluate produce loadable, consistent artifacts") {
    fixture::TempDir dir;
    const std::string run = dir.str("run");
    const CmdResult t = run_cli("train --bundle \"" + shared_bundle() + "\" --out \"" + run +
                                "\"" + kTinyTrain);
    REQUIRE(t.code == 0);
    CHECK_THAT(t.out, ContainsSubstring("epoch 1/1"));

    const LoadedCheckpoint ck = load_checkpoint(run + "/checkpoint.json");
    CHECK(ck.model.config().input_len == 95);
    CHECK(ck.codec.num_classes() == 15);

    const std::string history = slurp(run + "/history.csv");
    CHECK_THAT(history, ContainsSubstring("epoch,train_loss,train_acc,test_loss,test_acc"));
    CHECK(std::count(history.begin(), history.end(), '\n') == 2);

    const std::string rep_dir = dir.str("report");
    const CmdResult ev = run_cli("evaluate --bundle \"" + shared_bundle() + "\" --checkpoint \"" +
                                 run + "/checkpoint.json\" --out \"" + rep_dir + "\"");
    REQUIRE(ev.code == 0);
    CHECK_THAT(ev.out, ContainsSubstring("overall accuracy"));

    const ParsedReport parsed = report_from_json(json::parse(slurp(rep_dir + "/report.json")));
    CHECK(parsed.report.accuracy >= 0.0);
    CHECK(parsed.report.accuracy <= 1.0);
    CHECK(parsed.report.per_class.size() == 15);

    const Bundle b = read_bundle(shared_bundle());
    CHECK(parsed.report.total_support == b.test.n_rows);
    for (std::size_t c = 0; c < parsed.confusion.size(); ++c) {
        std::int64_t row_sum = 0;
        for (auto v : parsed.confusion[c]) row_sum += v;
        CHECK(row_sum == parsed.report.per_class[c].support);
    }
    CHECK(!slurp(rep_dir + "/report.txt").empty());
    CHECK(!slurp(rep_dir + "/confusion.csv").empty());
}

TEST_CASE("cli: seed-fixed training reruns write identical artifacts") {
    fixture::TempDir dir;
    const std::string r1 = dir.str("r1"), r2 = dir.str("r2");
    REQUIRE(run_cli("train --bundle \"" + shared_bundle() + "\" --out \"" + r1 + "\"" +
                    kTinyTrain + " --seed 9")
                .code == 0);
    REQUIRE(run_cli("train --bundle \"" + shared_bundle() + "\" --out \"" + r2 + "\"" +
                    kTinyTrain + " --seed 9")
                .code == 0);
    CHECK(slurp(r1 + "/checkpoint.json") == slurp(r2 + "/checkpoint.json"));
    CHECK(slurp(r1 + "/history.csv") == slurp(r2 + "/history.csv"));
}

TEST_CASE("cli: evaluate refuses a checkpoint trained against other labels") {
    fixture::TempDir dir;
    // first-appearance label order differs from the built-in list
    const std::string alt = dir.str("alt_bundle");
    REQUIRE(run_cli("preprocess --dataset \"" + fixture_csv() + "\" --out \"" + alt +
                    "\" --derive-labels")
                .code == 0);
    const std::string run = dir.str("run");
    REQUIRE(run_cli("train --bundle \"" + alt + "\" --out \"" + run + "\"" + kTinyTrain).code ==
            0);

    const CmdResult ev = run_cli("evaluate --bundle \"" + shared_bundle() + "\" --checkpoint \"" +
                                 run + "/checkpoint.json\" --out \"" + dir.str("rep") + "\"");
    CHECK(ev.code == 2);
    CHECK_THAT(ev.err, ContainsSubstring("label mismatch") &&
                           ContainsSubstring(kCheckpointFormat) &&
                           ContainsSubstring(kBundleFormat));
}

TEST_CASE("cli: config file applies under flag precedence") {
    fixture::TempDir dir;
    const std::string cfg = dir.str("cfg.json");
    std::ofstream(cfg) << R"({"seed": 5, "train": {"epochs": 2},
                             "model": {"num_blocks": 1, "num_heads": 2,
                                       "head_size": 8, "filters": 16}})";

    const std::string run = dir.str("run");
    const CmdResult t = run_cli("train --bundle \"" + shared_bundle() + "\" --out \"" + run +
                                "\" --config \"" + cfg + "\" --epochs 1 --batch-size 128");
    REQUIRE(t.code == 0);
    const std::string history = slurp(run + "/history.csv");
    CHECK(std::count(history.begin(), history.end(), '\n') == 2); // header + one epoch

    const std::string bad = dir.str("bad.json");
    std::ofstream(bad) << R"({"train": {"epochs": 1}, "typo_section": {}})";
    const CmdResult r = run_cli("train --bundle \"" + shared_bundle() + "\" --out \"" +
                                dir.str("never") + "\" --config \"" + bad + "\"");
    CHECK(r.code == 2);
    CHECK_THAT(r.err, ContainsSubstring("typo_section"));
}

TEST_CASE("cli: gradcheck passes clean and catches an injected fault") {
    const CmdResult ok = run_cli("gradcheck");
    CHECK(ok.code == 0);
    CHECK_THAT(ok.out, ContainsSubstring("PASS classifier-tiny"));
    CHECK_THAT(ok.out, !ContainsSubstring("FAIL"));

    const CmdResult bad = run_cli("gradcheck --inject-fault");
    CHECK(bad.code == 1);
    CHECK_THAT(bad.out, ContainsSubstring("FAIL fault-injection"));
}
