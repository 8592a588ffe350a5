#pragma once

// File plumbing: atomic writes, flat binary arrays, the dataset bundle
// directory, JSON report serialization and JSON config parsing. Bundle
// binaries are raw little-endian host layout (float64 / int32 / uint8);
// the manifest records every shape so readers can validate sizes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "gan.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "transformer.hpp"

namespace flowhunter {

using json = nlohmann::json;

inline const char* kBundleFormat = "flowhunter-bundle-v1";
inline const char* kReportFormat = "flowhunter-report-v1";

// ---- atomic files ----------------------------------------------------------

// Writes via a sibling .tmp file and renames into place, so a crashed or
// failed run never leaves a partial artifact under the final name.
template <typename WriteFn>
void atomic_write_stream(const std::string& path, WriteFn&& fn) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("io: cannot open " + tmp + " for writing");
        fn(out);
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw DataError("io: write to " + tmp + " failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw DataError("io: cannot rename " + tmp + " to " + path);
    }
}

inline void atomic_write_file(const std::string& path, const std::string& bytes) {
    atomic_write_stream(path, [&](std::ofstream& out) {
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    });
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("io: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("io: read from " + path + " failed");
    return bytes;
}

// ---- flat binary arrays ----------------------------------------------------

namespace detail {

template <typename T>
void write_array(const std::string& path, const std::vector<T>& v) {
    atomic_write_stream(path, [&](std::ofstream& out) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)));
    });
}

template <typename T>
std::vector<T> read_array(const std::string& path, std::int64_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("io: cannot open " + path);
    const auto bytes = static_cast<std::int64_t>(in.tellg());
    const auto want = expected_count * static_cast<std::int64_t>(sizeof(T));
    if (bytes != want) {
        throw DataError("io: " + path + " holds " + std::to_string(bytes) +
                        " bytes, expected " + std::to_string(want));
    }
    std::vector<T> v(static_cast<std::size_t>(expected_count));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(want));
    if (!in) throw DataError("io: read from " + path + " failed");
    return v;
}

} // namespace detail

// ---- dataset bundle --------------------------------------------------------

namespace detail {

inline void write_split(const std::string& dir, const std::string& split,
                        const LabeledDataset& d) {
    write_array(dir + "/" + split + "_features.bin", d.X);
    std::vector<std::int32_t> labels(d.y.begin(), d.y.end());
    write_array(dir + "/" + split + "_labels.bin", labels);
    write_array(dir + "/" + split + "_flags.bin", d.synthetic);
}

inline LabeledDataset read_split(const std::string& dir, const std::string& split,
                                 std::int64_t rows, std::int64_t features,
                                 const LabelCodec& codec,
                                 const std::vector<std::string>& feature_names) {
    LabeledDataset d;
    d.n_rows = rows;
    d.n_features = features;
    d.codec = codec;
    d.feature_names = feature_names;
    d.X = read_array<double>(dir + "/" + split + "_features.bin", rows * features);
    const auto labels = read_array<std::int32_t>(dir + "/" + split + "_labels.bin", rows);
    d.y.assign(labels.begin(), labels.end());
    d.synthetic = read_array<std::uint8_t>(dir + "/" + split + "_flags.bin", rows);
    d.validate();
    return d;
}

} // namespace detail

struct Bundle {
    LabeledDataset train;
    LabeledDataset test;
    json manifest;
};

// Writes binaries first and the manifest last, each atomically, so a
// directory with a manifest is always a complete bundle. extra_meta keys
// (stats, encoders, provenance and so on) are merged into the manifest.
inline void write_bundle(const std::string& dir, const LabeledDataset& train,
                         const LabeledDataset& test, const json& extra_meta = json::object()) {
    train.validate();
    test.validate();
    if (train.n_features != test.n_features) {
        throw DataError("bundle: train and test feature widths differ");
    }
    if (train.codec != test.codec) throw DataError("bundle: train and test codecs differ");
    std::filesystem::create_directories(dir);

    detail::write_split(dir, "train", train);
    detail::write_split(dir, "test", test);

    json manifest = extra_meta;
    manifest["format"] = kBundleFormat;
    manifest["n_features"] = train.n_features;
    manifest["feature_names"] = train.feature_names;
    manifest["labels"] = train.codec.names();
    manifest["train"] = json{{"rows", train.n_rows}};
    manifest["test"] = json{{"rows", test.n_rows}};
    atomic_write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline Bundle read_bundle(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.json";
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw DataError("bundle: " + manifest_path + " is not valid JSON: " + e.what());
    }
    const auto format = manifest.value("format", std::string());
    if (format != kBundleFormat) {
        throw DataError("bundle: " + manifest_path + " has format '" + format +
                        "'; this build reads " + kBundleFormat);
    }
    Bundle b;
    b.manifest = manifest;
    const LabelCodec codec(manifest.at("labels").get<std::vector<std::string>>());
    const auto features = manifest.at("n_features").get<std::int64_t>();
    const auto names = manifest.at("feature_names").get<std::vector<std::string>>();
    b.train = detail::read_split(dir, "train", manifest.at("train").at("rows").get<std::int64_t>(),
                                 features, codec, names);
    b.test = detail::read_split(dir, "test", manifest.at("test").at("rows").get<std::int64_t>(),
                                features, codec, names);
    return b;
}

// ---- pipeline metadata <-> JSON ---------------------------------------------

inline json stats_json(const StandardStats& s) {
    return json{{"mean", s.mean},
                {"std", s.stddev},
                {"zero_std", std::vector<int>(s.zero_std.begin(), s.zero_std.end())}};
}

inline StandardStats stats_from_json(const json& j) {
    StandardStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("std").get<std::vector<double>>();
    const auto z = j.at("zero_std").get<std::vector<int>>();
    s.zero_std.assign(z.begin(), z.end());
    s.validate();
    return s;
}

inline json encoders_json(const std::vector<CategoryEncoder>& encoders) {
    json arr = json::array();
    for (const auto& e : encoders) {
        arr.push_back(json{{"column", e.column}, {"one_hot", e.one_hot},
                           {"categories", e.categories}});
    }
    return arr;
}

inline std::vector<CategoryEncoder> encoders_from_json(const json& arr) {
    std::vector<CategoryEncoder> encoders;
    for (const auto& j : arr) {
        CategoryEncoder e;
        e.column = j.at("column").get<std::string>();
        e.one_hot = j.at("one_hot").get<bool>();
        e.categories = j.at("categories").get<std::vector<std::string>>();
        encoders.push_back(std::move(e));
    }
    return encoders;
}

// ---- evaluation report <-> JSON ---------------------------------------------

inline json report_json(const EvaluationReport& rep, const ConfusionMatrix& m) {
    json classes = json::array();
    for (const auto& c : rep.per_class) {
        classes.push_back(json{{"name", c.label},
                               {"precision", c.precision},
                               {"recall", c.recall},
                               {"f1", c.f1},
                               {"support", c.support}});
    }
    json confusion = json::array();
    for (int t = 0; t < m.num_classes(); ++t) {
        json row = json::array();
        for (int p = 0; p < m.num_classes(); ++p) row.push_back(m.at(t, p));
        confusion.push_back(std::move(row));
    }
    return json{{"format", kReportFormat},
                {"accuracy", rep.accuracy},
                {"total_support", rep.total_support},
                {"classes", classes},
                {"macro", json{{"precision", rep.macro_precision},
                               {"recall", rep.macro_recall},
                               {"f1", rep.macro_f1}}},
                {"weighted", json{{"precision", rep.weighted_precision},
                                  {"recall", rep.weighted_recall},
                                  {"f1", rep.weighted_f1}}},
                {"confusion", confusion}};
}

inline json augment_report_json(const AugmentReport& rep) {
    json classes = json::array();
    for (const auto& c : rep.classes) {
        classes.push_back(json{{"class", c.class_name},
                               {"class_index", c.class_index},
                               {"real_rows", c.real_rows},
                               {"target", c.target},
                               {"generated", c.generated},
                               {"refused", c.refused},
                               {"reason", c.reason}});
    }
    return json{{"format", "flowhunter-augment-v1"},
                {"classes", classes},
                {"total_generated", rep.total_generated()}};
}

struct ParsedReport {
    EvaluationReport report;
    std::vector<std::vector<std::int64_t>> confusion;
};

inline ParsedReport report_from_json(const json& j) {
    const auto format = j.value("format", std::string());
    if (format != kReportFormat) {
        throw DataError("report: format '" + format + "'; this build reads " +
                        std::string(kReportFormat));
    }
    ParsedReport out;
    out.report.accuracy = j.at("accuracy").get<double>();
    out.report.total_support = j.at("total_support").get<std::int64_t>();
    for (const auto& c : j.at("classes")) {
        ClassReport cr;
        cr.label = c.at("name").get<std::string>();
        cr.precision = c.at("precision").get<double>();
        cr.recall = c.at("recall").get<double>();
        cr.f1 = c.at("f1").get<double>();
        cr.support = c.at("support").get<std::int64_t>();
        out.report.per_class.push_back(std::move(cr));
    }
    out.report.macro_precision = j.at("macro").at("precision").get<double>();
    out.report.macro_recall = j.at("macro").at("recall").get<double>();
    out.report.macro_f1 = j.at("macro").at("f1").get<double>();
    out.report.weighted_precision = j.at("weighted").at("precision").get<double>();
    out.report.weighted_recall = j.at("weighted").at("recall").get<double>();
    out.report.weighted_f1 = j.at("weighted").at("f1").get<double>();
    out.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    return out;
}

// ---- config parsing ----------------------------------------------------------

namespace detail {

[[noreturn]] inline void unknown_key(const std::string& section, const std::string& key) {
    throw DataError("config: unknown " + section + " key '" + key + "'");
}

} // namespace detail

inline json model_config_json(const ModelConfig& c) {
    return json{{"input_len", c.input_len},   {"head_size", c.head_size},
                {"num_heads", c.num_heads},   {"filters", c.filters},
                {"num_blocks", c.num_blocks}, {"dropout", c.dropout},
                {"mlp_units", c.mlp_units},   {"num_classes", c.num_classes},
                {"ln_eps", c.ln_eps}};
}

inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
    for (const auto& [key, value] : j.items()) {
        if (key == "input_len") base.input_len = value.get<int>();
        else if (key == "head_size") base.head_size = value.get<int>();
        else if (key == "num_heads") base.num_heads = value.get<int>();
        else if (key == "filters") base.filters = value.get<int>();
        else if (key == "num_blocks") base.num_blocks = value.get<int>();
        else if (key == "dropout") base.dropout = value.get<double>();
        else if (key == "mlp_units") base.mlp_units = value.get<std::vector<int>>();
        else if (key == "num_classes") base.num_classes = value.get<int>();
        else if (key == "ln_eps") base.ln_eps = value.get<double>();
        else detail::unknown_key("model", key);
    }
    base.validate();
    return base;
}

inline json train_config_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.adam.lr},
                {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
    for (const auto& [key, value] : j.items()) {
        if (key == "epochs") base.epochs = value.get<int>();
        else if (key == "batch_size") base.batch_size = value.get<int>();
        else if (key == "learning_rate") base.adam.lr = value.get<double>();
        else if (key == "seed") base.seed = value.get<std::uint64_t>();
        else detail::unknown_key("train", key);
    }
    base.validate();
    return base;
}

inline json gan_config_json(const GanConfig& c) {
    return json{{"latent_dim", c.latent_dim},       {"gen_hidden", c.gen_hidden},
                {"disc_hidden", c.disc_hidden},     {"learning_rate", c.learning_rate},
                {"steps", c.steps},                 {"batch_size", c.batch_size},
                {"seed", c.seed}};
}

inline GanConfig gan_config_from_json(const json& j, GanConfig base = {}) {
    for (const auto& [key, value] : j.items()) {
        if (key == "latent_dim") base.latent_dim = value.get<int>();
        else if (key == "gen_hidden") base.gen_hidden = value.get<std::vector<int>>();
        else if (key == "disc_hidden") base.disc_hidden = value.get<std::vector<int>>();
        else if (key == "learning_rate") base.learning_rate = value.get<double>();
        else if (key == "steps") base.steps = value.get<int>();
        else if (key == "batch_size") base.batch_size = value.get<int>();
        else if (key == "seed") base.seed = value.get<std::uint64_t>();
        else detail::unknown_key("gan", key);
    }
    base.validate();
    return base;
}

inline json split_spec_json(const SplitSpec& s) {
    return json{{"test_fraction", s.test_fraction}, {"stratified", s.stratified},
                {"seed", s.seed}};
}

inline SplitSpec split_spec_from_json(const json& j, SplitSpec base = {}) {
    for (const auto& [key, value] : j.items()) {
        if (key == "test_fraction") base.test_fraction = value.get<double>();
        else if (key == "stratified") base.stratified = value.get<bool>();
        else if (key == "seed") base.seed = value.get<std::uint64_t>();
        else detail::unknown_key("split", key);
    }
    base.validate();
    return base;
}

} // namespace flowhunter
