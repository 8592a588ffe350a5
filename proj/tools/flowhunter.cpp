// flowhunter: batch front end for the flow-classification pipeline.
//
//   preprocess  raw CSV -> dataset bundle (clean, encode, split, standardize)
//   augment     bundle -> bundle with GAN-generated minority rows
//   train       bundle -> checkpoint + per-epoch history CSV
//   evaluate    bundle + checkpoint -> report JSON/text + confusion CSV
//   gradcheck   finite-difference verification of every backward rule
//
// Settings resolve as flags > config file > built-in defaults. A top-level
// "seed" (file) or --seed fans out to the split, training and GAN seeds
// unless a section pins its own. Exit codes: 0 ok, 1 runtime failure,
// 2 usage or input error. All artifacts are written atomically.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "flowhunter/checkpoint.hpp"
#include "flowhunter/csv.hpp"
#include "flowhunter/gan.hpp"
#include "flowhunter/gradcheck.hpp"
#include "flowhunter/io.hpp"
#include "flowhunter/metrics.hpp"
#include "flowhunter/pipeline.hpp"
#include "flowhunter/transformer.hpp"

namespace {

using namespace flowhunter;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr int kExpectedWidth = 95;

struct RunConfig {
    std::string dataset;
    std::string bundle;
    std::string checkpoint;
    std::string out;
    std::string config_path;

    std::uint64_t seed = 42;
    SplitSpec split;
    ModelConfig model;
    TrainConfig train;
    GanConfig gan;

    double subsample = 1.0;
    bool allow_any_width = false;
    bool derive_labels = false;

    std::map<std::string, std::int64_t> targets; // class name -> absolute count
    std::map<std::string, double> times;         // class name -> multiple of real count

    bool input_len_set = false;
    bool num_classes_set = false;
};

json parse_config_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config: " + path + " must hold a JSON object");
    return j;
}

void apply_config_file(RunConfig& cfg, const json& j) {
    static const std::set<std::string> known = {
        "seed", "dataset", "bundle", "checkpoint", "out",
        "split", "model", "train", "gan", "preprocess", "augment"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) detail::unknown_key("top-level", key);
    }

    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.bundle = j.value("bundle", cfg.bundle);
    cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
    cfg.out = j.value("out", cfg.out);

    if (j.contains("model")) {
        cfg.model = model_config_from_json(j.at("model"), cfg.model);
        cfg.input_len_set = cfg.input_len_set || j.at("model").contains("input_len");
        cfg.num_classes_set = cfg.num_classes_set || j.at("model").contains("num_classes");
    }
    if (j.contains("split")) cfg.split = split_spec_from_json(j.at("split"), cfg.split);
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), cfg.train);
    if (j.contains("gan")) cfg.gan = gan_config_from_json(j.at("gan"), cfg.gan);

    if (j.contains("seed")) {
        cfg.seed = j.at("seed").get<std::uint64_t>();
        if (!(j.contains("split") && j.at("split").contains("seed"))) cfg.split.seed = cfg.seed;
        if (!(j.contains("train") && j.at("train").contains("seed"))) cfg.train.seed = cfg.seed;
        if (!(j.contains("gan") && j.at("gan").contains("seed"))) cfg.gan.seed = cfg.seed;
    }

    if (j.contains("preprocess")) {
        const auto& p = j.at("preprocess");
        for (const auto& [key, _] : p.items()) {
            if (key != "subsample" && key != "allow_any_width" && key != "derive_labels") {
                detail::unknown_key("preprocess", key);
            }
        }
        cfg.subsample = p.value("subsample", cfg.subsample);
        cfg.allow_any_width = p.value("allow_any_width", cfg.allow_any_width);
        cfg.derive_labels = p.value("derive_labels", cfg.derive_labels);
    }

    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        for (const auto& [key, _] : a.items()) {
            if (key != "targets" && key != "times") detail::unknown_key("augment", key);
        }
        if (a.contains("targets")) {
            for (const auto& [name, v] : a.at("targets").items()) {
                cfg.targets[name] = v.get<std::int64_t>();
            }
        }
        if (a.contains("times")) {
            for (const auto& [name, v] : a.at("times").items()) {
                cfg.times[name] = v.get<double>();
            }
        }
    }
}

// "Name=123" -> pair; used by --target and --times.
template <typename T>
std::pair<std::string, T> parse_assignment(const std::string& s, const char* flag) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
        throw UsageError(std::string(flag) + ": expected CLASS=VALUE, got '" + s + "'");
    }
    const std::string name = s.substr(0, eq);
    const std::string val = s.substr(eq + 1);
    try {
        if constexpr (std::is_integral_v<T>) {
            std::size_t used = 0;
            const long long v = std::stoll(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
            return {name, static_cast<T>(v)};
        } else {
            std::size_t used = 0;
            const double v = std::stod(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
            return {name, static_cast<T>(v)};
        }
    } catch (const std::exception&) {
        throw UsageError(std::string(flag) + ": '" + val + "' is not a number");
    }
}

void require_path_arg(const std::string& value, const char* what) {
    if (value.empty()) throw UsageError(std::string("missing required ") + what);
}

// config validation failures are the caller's mistake, not a runtime fault
template <typename F>
void validate_usage(F&& f) {
    try {
        f();
    } catch (const TensorError& e) {
        throw UsageError(e.what());
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
}

void require_input_file(const std::string& path, const char* what) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
        throw UsageError(std::string(what) + " not found: " + path);
    }
}

std::string resolve_dataset_path(const RunConfig& cfg) {
    if (!cfg.dataset.empty()) return cfg.dataset;
    if (const char* env = std::getenv("EDGE_IIOT_CSV"); env && *env) return env;
    throw UsageError("no dataset given: pass --dataset, set it in the config file, "
                     "or export EDGE_IIOT_CSV");
}

// ---- preprocess ---------------------------------------------------------------

int cmd_preprocess(const RunConfig& cfg) {
    const std::string source = resolve_dataset_path(cfg);
    require_path_arg(cfg.out, "--out bundle directory");
    require_input_file(source, "dataset");
    validate_usage([&] { cfg.split.validate(); });
    if (!(cfg.subsample > 0.0 && cfg.subsample <= 1.0)) {
        throw UsageError("--subsample must lie in (0,1]");
    }

    LoadOptions load_opt;
    load_opt.require_columns = {kLabelColumn};
    RawTable raw = load_csv(source, load_opt);
    const std::int64_t rows_loaded = raw.n_rows;
    std::fprintf(stderr, "loaded %" PRId64 " rows, %" PRId64 " columns from %s\n", rows_loaded,
                 raw.n_cols(), source.c_str());

    const auto drop_list = default_drop_columns();
    const std::unordered_set<std::string> drop_set(drop_list.begin(), drop_list.end());
    RawTable cleaned = clean(raw, drop_set);
    const std::int64_t dups = rows_loaded - cleaned.n_rows;
    raw = RawTable{};

    RawTable selected = select_features(cleaned, drop_list);
    cleaned = RawTable{};

    const auto one_hot_list = default_one_hot_columns();
    const std::set<std::string> one_hot(one_hot_list.begin(), one_hot_list.end());
    const LabelCodec codec = LabelCodec::edge_iiot();
    EncodedMatrix m = encode_labels_and_categoricals(selected, kLabelColumn, one_hot,
                                                     cfg.derive_labels ? nullptr : &codec);
    selected = RawTable{};
    for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    if (!cfg.allow_any_width && m.n_features != kExpectedWidth) {
        throw UsageError("encoded width is " + std::to_string(m.n_features) + ", expected " +
                         std::to_string(kExpectedWidth) +
                         " (pass --allow-any-width to keep going)");
    }

    if (cfg.subsample < 1.0) m = subsample(m, cfg.subsample, cfg.seed);

    auto [train, test] = stratified_split(m, cfg.split);
    StandardStats stats = standardize_fit(train.X, train.n_rows, train.n_features);
    standardize_apply(train.X, train.n_rows, train.n_features, stats);
    standardize_apply(test.X, test.n_rows, test.n_features, stats);
    std::int64_t flat = 0;
    for (auto z : stats.zero_std) flat += z;
    if (flat > 0) {
        std::fprintf(stderr, "note: %" PRId64 " constant features mapped to zero\n", flat);
    }

    json meta;
    meta["stats"] = stats_json(stats);
    meta["encoders"] = encoders_json(m.encoders);
    meta["split"] = split_spec_json(cfg.split);
    meta["preprocess"] = json{{"source", source},
                              {"label_column", kLabelColumn},
                              {"drop_columns", drop_list},
                              {"one_hot_columns", one_hot_list},
                              {"derive_labels", cfg.derive_labels},
                              {"subsample", cfg.subsample},
                              {"seed", cfg.seed},
                              {"rows_loaded", rows_loaded},
                              {"duplicates_removed", dups},
                              {"encode_warnings", m.warnings}};
    write_bundle(cfg.out, train, test, meta);

    std::printf("wrote bundle to %s: %" PRId64 " train rows, %" PRId64
                " test rows, %" PRId64 " features\n",
                cfg.out.c_str(), train.n_rows, test.n_rows, train.n_features);
    return 0;
}

// ---- augment ------------------------------------------------------------------

int cmd_augment(const RunConfig& cfg) {
    require_path_arg(cfg.bundle, "--bundle input directory");
    require_path_arg(cfg.out, "--out bundle directory");
    require_input_file(cfg.bundle + "/manifest.json", "bundle manifest");
    if (cfg.targets.empty() && cfg.times.empty()) {
        throw UsageError("augment: no targets given (use --target CLASS=N or --times CLASS=K)");
    }
    validate_usage([&] { cfg.gan.validate(); });

    Bundle b = read_bundle(cfg.bundle);
    const LabelCodec& codec = b.train.codec;

    std::vector<std::int64_t> real_counts(static_cast<std::size_t>(codec.num_classes()), 0);
    for (std::int64_t i = 0; i < b.train.n_rows; ++i) {
        if (!b.train.synthetic[static_cast<std::size_t>(i)]) {
            real_counts[static_cast<std::size_t>(b.train.y[static_cast<std::size_t>(i)])]++;
        }
    }

    std::map<int, std::int64_t> targets;
    for (const auto& [name, factor] : cfg.times) {
        if (cfg.targets.count(name)) {
            throw UsageError("augment: class '" + name + "' has both --target and --times");
        }
        if (!(factor > 0.0)) throw UsageError("augment: --times factor must be positive");
        const int cls = codec.encode(name);
        targets[cls] = static_cast<std::int64_t>(
            std::llround(factor * static_cast<double>(real_counts[static_cast<std::size_t>(cls)])));
    }
    for (const auto& [name, count] : cfg.targets) {
        if (count < 0) throw UsageError("augment: --target count must be non-negative");
        targets[codec.encode(name)] = count;
    }

    AugmentReport report;
    LabeledDataset augmented = augment_dataset(b.train, targets, cfg.gan, &report);

    for (const auto& c : report.classes) {
        if (c.refused) {
            std::fprintf(stderr, "warning: class %s refused: %s\n", c.class_name.c_str(),
                         c.reason.c_str());
        } else {
            std::printf("class %s: %" PRId64 " real rows, target %" PRId64 ", generated %" PRId64
                        "\n",
                        c.class_name.c_str(), c.real_rows, c.target, c.generated);
        }
    }

    json meta;
    for (const char* key : {"stats", "encoders", "split", "preprocess"}) {
        if (b.manifest.contains(key)) meta[key] = b.manifest.at(key);
    }
    json targets_j = json::object();
    for (const auto& [cls, count] : targets) targets_j[codec.decode(cls)] = count;
    meta["augment"] = json{{"source_bundle", cfg.bundle},
                           {"gan", gan_config_json(cfg.gan)},
                           {"targets", targets_j}};
    write_bundle(cfg.out, augmented, b.test, meta);

    json sidecar = augment_report_json(report);
    sidecar["source_bundle"] = cfg.bundle;
    sidecar["gan"] = gan_config_json(cfg.gan);
    atomic_write_file(cfg.out + "/augment.json", sidecar.dump(2) + "\n");

    std::printf("wrote bundle to %s: %" PRId64 " train rows (%" PRId64
                " generated), %" PRId64 " test rows\n",
                cfg.out.c_str(), augmented.n_rows, report.total_generated(), b.test.n_rows);
    return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(RunConfig cfg) {
    require_path_arg(cfg.bundle, "--bundle input directory");
    require_path_arg(cfg.out, "--out directory");
    require_input_file(cfg.bundle + "/manifest.json", "bundle manifest");

    Bundle b = read_bundle(cfg.bundle);
    if (!cfg.input_len_set) cfg.model.input_len = static_cast<int>(b.train.n_features);
    if (!cfg.num_classes_set) cfg.model.num_classes = b.train.codec.num_classes();
    validate_usage([&] {
        cfg.model.validate();
        cfg.train.validate();
    });
    if (cfg.model.num_classes != b.train.codec.num_classes()) {
        throw DataError("train: model config has " + std::to_string(cfg.model.num_classes) +
                        " classes, bundle has " + std::to_string(b.train.codec.num_classes()));
    }

    SeededRng init_rng = SeededRng(cfg.train.seed).derive(0);
    TransformerClassifier model(cfg.model, init_rng);

    const auto t0 = std::clock();
    TrainingHistory history =
        train_classifier(model, b.train, b.test, cfg.train, [&](const EpochStats& s) {
            std::printf("epoch %d/%d train_loss=%.6f train_acc=%.4f test_loss=%.6f "
                        "test_acc=%.4f\n",
                        s.epoch, cfg.train.epochs, s.train_loss, s.train_acc, s.test_loss,
                        s.test_acc);
            std::fflush(stdout);
        });
    const double secs = static_cast<double>(std::clock() - t0) / CLOCKS_PER_SEC;

    std::filesystem::create_directories(cfg.out);
    save_checkpoint(cfg.out + "/checkpoint.json", model, b.train.codec);
    atomic_write_file(cfg.out + "/history.csv", history_csv(history));

    std::printf("trained %d epochs in %.1fs; wrote %s/checkpoint.json and %s/history.csv\n",
                cfg.train.epochs, secs, cfg.out.c_str(), cfg.out.c_str());
    return 0;
}

// ---- evaluate -----------------------------------------------------------------

int cmd_evaluate(const RunConfig& cfg) {
    require_path_arg(cfg.bundle, "--bundle input directory");
    require_path_arg(cfg.checkpoint, "--checkpoint path");
    require_path_arg(cfg.out, "--out directory");
    require_input_file(cfg.bundle + "/manifest.json", "bundle manifest");
    require_input_file(cfg.checkpoint, "checkpoint");

    Bundle b = read_bundle(cfg.bundle);
    LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
    if (ck.codec != b.test.codec) {
        throw DataError(std::string("evaluate: label mismatch between checkpoint (") +
                        kCheckpointFormat + ") and bundle (" + kBundleFormat +
                        "); retrain or re-preprocess with matching labels");
    }
    if (ck.model.config().input_len != b.test.n_features) {
        throw DataError("evaluate: checkpoint expects " +
                        std::to_string(ck.model.config().input_len) + " features, bundle has " +
                        std::to_string(b.test.n_features));
    }

    const std::vector<int> preds = predict_dataset(ck.model, b.test, cfg.train.batch_size);
    ConfusionMatrix cm = ConfusionMatrix::from_labels(b.test.y, preds, ck.codec.num_classes());
    EvaluationReport rep = build_report(cm, ck.codec.names());

    std::filesystem::create_directories(cfg.out);
    atomic_write_file(cfg.out + "/report.json", report_json(rep, cm).dump(2) + "\n");
    atomic_write_file(cfg.out + "/report.txt", format_report_text(rep));
    atomic_write_file(cfg.out + "/confusion.csv", confusion_csv(cm, ck.codec.names()));

    std::fputs(format_report_text(rep).c_str(), stdout);
    std::printf("\noverall accuracy %.4f macro_f1 %.4f weighted_f1 %.4f on %" PRId64
                " test rows\nwrote report.json, report.txt, confusion.csv to %s\n",
                rep.accuracy, rep.macro_f1, rep.weighted_f1, rep.total_support, cfg.out.c_str());
    return 0;
}

// ---- gradcheck ----------------------------------------------------------------

Tensor seeded_tensor(Shape shape, std::uint64_t seed, const std::string& name) {
    SeededRng rng(seed);
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.normal() * 0.5;
    Tensor t = Tensor::from(std::move(shape), std::move(v));
    t.set_name(name);
    return t;
}

struct Suite {
    std::string name;
    double tol;
    std::function<Tensor(Tape&)> loss;
    std::vector<Tensor> params;
};

int cmd_gradcheck(bool inject_fault) {
    std::vector<Suite> suites;

    {
        Tensor q = seeded_tensor({4, 3}, 11, "q");
        Tensor k = seeded_tensor({4, 3}, 12, "k");
        Tensor v = seeded_tensor({4, 3}, 13, "v");
        suites.push_back({"attention", 1e-4,
                          [=](Tape& t) { return t.sum(attention(t, q, k, v)); },
                          {q, k, v}});
    }
    {
        SeededRng rng(21);
        AttentionParams p = AttentionParams::make(3, 2, 2, rng, "mha");
        Tensor x = seeded_tensor({5, 3}, 22, "x");
        auto params = std::vector<Tensor>{x};
        for (std::size_t h = 0; h < p.wq.size(); ++h) {
            params.push_back(p.wq[h]);
            params.push_back(p.wk[h]);
            params.push_back(p.wv[h]);
        }
        params.push_back(p.wo);
        suites.push_back({"multi-head", 1e-4,
                          [=](Tape& t) { return t.sum(multi_head(t, x, p)); }, params});
    }
    {
        SeededRng rng(31);
        FfnParams p = FfnParams::make(3, 5, rng, "ffn");
        Tensor x = seeded_tensor({4, 3}, 32, "x");
        suites.push_back({"ffn", 1e-4,
                          [=](Tape& t) { return t.sum(position_ffn(t, x, p)); },
                          {x, p.w1, p.b1, p.w2, p.b2}});
    }
    {
        LayerNormParams p = LayerNormParams::make(4, "ln");
        Tensor x = seeded_tensor({6, 4}, 41, "x");
        suites.push_back({"layer-norm", 1e-4,
                          [=](Tape& t) { return t.sum(layer_norm(t, x, p, 1e-6)); },
                          {x, p.gain, p.bias}});
    }
    {
        Tensor z = seeded_tensor({3, 2}, 51, "z");
        Tensor w = seeded_tensor({2, 4}, 52, "w");
        Tensor bias = seeded_tensor({4}, 53, "b");
        suites.push_back({"dense-head", 1e-4,
                          [=](Tape& t) {
                              return t.sum(t.relu(t.add_rowvec(t.matmul(z, w), bias)));
                          },
                          {z, w, bias}});
    }
    {
        Tensor logits = seeded_tensor({4, 3}, 61, "logits");
        const std::vector<int> y = {0, 2, 1, 2};
        suites.push_back({"cross-entropy", 1e-4,
                          [=](Tape& t) { return t.cross_entropy(t.softmax_rows(logits), y); },
                          {logits}});
    }
    {
        GanConfig gc;
        gc.latent_dim = 3;
        gc.gen_hidden = {4};
        gc.disc_hidden = {4};
        SeededRng rng(71);
        GanPair pair = init_gan(gc, 2, rng);
        Tensor real = seeded_tensor({5, 2}, 72, "real");
        Tensor fake = seeded_tensor({5, 2}, 73, "fake");
        suites.push_back({"gan-d-loss", 1e-4,
                          [=](Tape& t) {
                              return t.gan_disc_loss(disc_forward(t, pair, real),
                                                     disc_forward(t, pair, fake));
                          },
                          pair.disc.params()});

        Tensor z = seeded_tensor({5, 3}, 74, "z");
        auto gparams = pair.gen.params();
        const auto dparams = pair.disc.params();
        gparams.insert(gparams.end(), dparams.begin(), dparams.end());
        suites.push_back({"gan-g-loss", 1e-4,
                          [=](Tape& t) {
                              return t.gan_gen_loss(
                                  disc_forward(t, pair, gen_forward(t, pair, z)));
                          },
                          gparams});
    }
    {
        ModelConfig mc;
        mc.input_len = 6;
        mc.head_size = 3;
        mc.num_heads = 2;
        mc.filters = 4;
        mc.num_blocks = 1;
        mc.dropout = 0.0;
        mc.mlp_units = {5};
        mc.num_classes = 3;
        SeededRng rng(81);
        auto model = std::make_shared<TransformerClassifier>(mc, rng);
        Tensor x = seeded_tensor({4, 6}, 82, "x");
        const std::vector<int> y = {0, 1, 2, 1};
        suites.push_back({"classifier-tiny", 1e-3,
                          [=](Tape& t) {
                              return t.cross_entropy(model->forward(t, x, false, nullptr), y);
                          },
                          model->parameters()});
    }
    if (inject_fault) {
        // doubles the loss only while the tape records, so the analytic
        // gradient disagrees with the re-evaluations; the checker must flag it
        Tensor w = seeded_tensor({3}, 91, "w");
        suites.push_back({"fault-injection", 1e-4,
                          [=](Tape& t) {
                              Tensor s = t.sum(t.mul(w, w));
                              return t.recording() ? t.scale(s, 2.0) : s;
                          },
                          {w}});
    }

    const auto t0 = std::clock();
    bool all_pass = true;
    double worst = 0.0;
    for (const auto& s : suites) {
        const GradCheckResult r = check_gradients(s.loss, s.params);
        worst = std::max(worst, r.max_rel_err);
        const bool ok = r.pass(s.tol);
        all_pass = all_pass && ok;
        std::printf("%s %-16s checked=%-5" PRId64 " worst=%.3e (tol %.0e)", ok ? "PASS" : "FAIL",
                    s.name.c_str(), r.checked, r.max_rel_err, s.tol);
        if (!ok) {
            std::printf("  at %s[%" PRId64 "] analytic=%.6g numeric=%.6g", r.worst.param.c_str(),
                        r.worst.index, r.worst.analytic, r.worst.numeric);
        }
        std::printf("\n");
    }
    const double secs = static_cast<double>(std::clock() - t0) / CLOCKS_PER_SEC;
    std::printf("gradcheck: %zu suites, worst rel err %.3e, %.1fs\n", suites.size(), worst, secs);
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowhunter: GAN-augmented transformer pipeline for IoT flow classification"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::vector<std::string> target_args, times_args;
    bool inject_fault = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", cfg.config_path, "JSON config file (flags override it)");
        sub->add_option("--seed", cfg.seed, "master seed; fans out to split, train and GAN seeds");
    };

    CLI::App* pre = app.add_subcommand("preprocess", "raw CSV -> dataset bundle");
    add_common(pre);
    pre->add_option("--dataset", cfg.dataset, "raw CSV path (or set EDGE_IIOT_CSV)");
    pre->add_option("--out", cfg.out, "bundle output directory");
    pre->add_option("--test-fraction", cfg.split.test_fraction, "held-out fraction per class");
    pre->add_option("--subsample", cfg.subsample, "stratified row fraction kept before splitting");
    pre->add_flag("--allow-any-width", cfg.allow_any_width,
                  "skip the 95-feature width check");
    pre->add_flag("--derive-labels", cfg.derive_labels,
                  "take class order from the CSV instead of the built-in list");

    CLI::App* aug = app.add_subcommand("augment", "bundle -> bundle with GAN rows");
    add_common(aug);
    aug->add_option("--bundle", cfg.bundle, "input bundle directory");
    aug->add_option("--out", cfg.out, "output bundle directory");
    aug->add_option("--target", target_args, "CLASS=N absolute train-row target (repeatable)");
    aug->add_option("--times", times_args, "CLASS=K target as K x real rows (repeatable)");
    aug->add_option("--gan-steps", cfg.gan.steps, "GAN training steps per class");
    aug->add_option("--gan-batch", cfg.gan.batch_size, "GAN batch size");
    aug->add_option("--gan-lr", cfg.gan.learning_rate, "GAN learning rate");
    aug->add_option("--latent-dim", cfg.gan.latent_dim, "generator latent dimension");

    CLI::App* tr = app.add_subcommand("train", "bundle -> checkpoint + history");
    add_common(tr);
    tr->add_option("--bundle", cfg.bundle, "input bundle directory");
    tr->add_option("--out", cfg.out, "output directory for checkpoint.json and history.csv");
    tr->add_option("--epochs", cfg.train.epochs, "training epochs");
    tr->add_option("--batch-size", cfg.train.batch_size, "minibatch size");
    tr->add_option("--lr", cfg.train.adam.lr, "Adam learning rate");
    tr->add_option("--blocks", cfg.model.num_blocks, "encoder blocks");
    tr->add_option("--heads", cfg.model.num_heads, "attention heads");
    tr->add_option("--head-size", cfg.model.head_size, "per-head projection width");
    tr->add_option("--filters", cfg.model.filters, "feed-forward hidden width");
    tr->add_option("--dropout", cfg.model.dropout, "dropout probability");
    tr->add_option("--mlp-units", cfg.model.mlp_units, "classifier head hidden widths");

    CLI::App* ev = app.add_subcommand("evaluate", "bundle + checkpoint -> report files");
    add_common(ev);
    ev->add_option("--bundle", cfg.bundle, "input bundle directory");
    ev->add_option("--checkpoint", cfg.checkpoint, "checkpoint path");
    ev->add_option("--out", cfg.out, "output directory for report files");
    ev->add_option("--batch-size", cfg.train.batch_size, "prediction batch size");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_flag("--inject-fault", inject_fault,
                 "add a deliberately corrupted rule to prove the checker catches it");

    // remember which flags the user passed before the config file is merged in
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return (code == 0) ? 0 : 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();

        if (!cfg.config_path.empty()) {
            require_input_file(cfg.config_path, "config file");
            RunConfig from_file;
            apply_config_file(from_file, parse_config_file(cfg.config_path));

            // flags > file > defaults: refill only fields the flags left alone
            auto keep = [&](const char* flag) {
                return sub->count(flag) > 0;
            };
            RunConfig merged = from_file;
            merged.config_path = cfg.config_path;
            if (keep("--seed")) {
                merged.seed = cfg.seed;
                merged.split.seed = cfg.seed;
                merged.train.seed = cfg.seed;
                merged.gan.seed = cfg.seed;
            }
            if (sub->get_option_no_throw("--dataset") && keep("--dataset"))
                merged.dataset = cfg.dataset;
            if (sub->get_option_no_throw("--bundle") && keep("--bundle"))
                merged.bundle = cfg.bundle;
            if (sub->get_option_no_throw("--checkpoint") && keep("--checkpoint"))
                merged.checkpoint = cfg.checkpoint;
            if (sub->get_option_no_throw("--out") && keep("--out")) merged.out = cfg.out;
            if (sub->get_option_no_throw("--test-fraction") && keep("--test-fraction"))
                merged.split.test_fraction = cfg.split.test_fraction;
            if (sub->get_option_no_throw("--subsample") && keep("--subsample"))
                merged.subsample = cfg.subsample;
            if (sub->get_option_no_throw("--allow-any-width") && keep("--allow-any-width"))
                merged.allow_any_width = cfg.allow_any_width;
            if (sub->get_option_no_throw("--derive-labels") && keep("--derive-labels"))
                merged.derive_labels = cfg.derive_labels;
            if (sub->get_option_no_throw("--epochs") && keep("--epochs"))
                merged.train.epochs = cfg.train.epochs;
            if (sub->get_option_no_throw("--batch-size") && keep("--batch-size"))
                merged.train.batch_size = cfg.train.batch_size;
            if (sub->get_option_no_throw("--lr") && keep("--lr"))
                merged.train.adam.lr = cfg.train.adam.lr;
            if (sub->get_option_no_throw("--blocks") && keep("--blocks"))
                merged.model.num_blocks = cfg.model.num_blocks;
            if (sub->get_option_no_throw("--heads") && keep("--heads"))
                merged.model.num_heads = cfg.model.num_heads;
            if (sub->get_option_no_throw("--head-size") && keep("--head-size"))
                merged.model.head_size = cfg.model.head_size;
            if (sub->get_option_no_throw("--filters") && keep("--filters"))
                merged.model.filters = cfg.model.filters;
            if (sub->get_option_no_throw("--dropout") && keep("--dropout"))
                merged.model.dropout = cfg.model.dropout;
            if (sub->get_option_no_throw("--mlp-units") && keep("--mlp-units"))
                merged.model.mlp_units = cfg.model.mlp_units;
            if (sub->get_option_no_throw("--gan-steps") && keep("--gan-steps"))
                merged.gan.steps = cfg.gan.steps;
            if (sub->get_option_no_throw("--gan-batch") && keep("--gan-batch"))
                merged.gan.batch_size = cfg.gan.batch_size;
            if (sub->get_option_no_throw("--gan-lr") && keep("--gan-lr"))
                merged.gan.learning_rate = cfg.gan.learning_rate;
            if (sub->get_option_no_throw("--latent-dim") && keep("--latent-dim"))
                merged.gan.latent_dim = cfg.gan.latent_dim;
            cfg = merged;
        }

        for (const auto& s : target_args) {
            const auto [name, count] = parse_assignment<std::int64_t>(s, "--target");
            cfg.targets[name] = count;
        }
        for (const auto& s : times_args) {
            const auto [name, factor] = parse_assignment<double>(s, "--times");
            cfg.times[name] = factor;
        }

        const std::string name = sub->get_name();
        if (name == "preprocess") return cmd_preprocess(cfg);
        if (name == "augment") return cmd_augment(cfg);
        if (name == "train") return cmd_train(cfg);
        if (name == "evaluate") return cmd_evaluate(cfg);
        return cmd_gradcheck(inject_fault);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "flowhunter: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "flowhunter: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "flowhunter: %s\n", e.what());
        return 1;
    }
}
