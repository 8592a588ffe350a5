#pragma once

// Classifier checkpoints: model config, label codec and every parameter
// tensor (name, shape, values) in one JSON file. Values round-trip exactly
// because the serializer emits shortest-form doubles that parse back to the
// same bits, which keeps checkpoints byte-stable across save/load cycles.

#include <cstdint>
#include <string>
#include <vector>

#include "io.hpp"
#include "transformer.hpp"

namespace flowhunter {

inline const char* kCheckpointFormat = "flowhunter-checkpoint-v1";

inline void save_checkpoint(const std::string& path, const TransformerClassifier& model,
                            const LabelCodec& codec) {
    if (codec.num_classes() != model.config().num_classes) {
        throw DataError("checkpoint: codec has " + std::to_string(codec.num_classes()) +
                        " classes, model config has " +
                        std::to_string(model.config().num_classes));
    }
    json params = json::array();
    for (const auto& p : model.parameters()) {
        params.push_back(json{{"name", p.name()},
                              {"shape", p.shape()},
                              {"data", p.values()}});
    }
    const json j{{"format", kCheckpointFormat},
                 {"config", model_config_json(model.config())},
                 {"labels", codec.names()},
                 {"params", params}};
    atomic_write_file(path, j.dump(2) + "\n");
}

struct LoadedCheckpoint {
    TransformerClassifier model;
    LabelCodec codec;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("checkpoint: " + path + " is not valid JSON: " + e.what());
    }
    const auto format = j.value("format", std::string());
    if (format != kCheckpointFormat) {
        throw DataError("checkpoint: " + path + " has format '" + format +
                        "'; this build reads " + std::string(kCheckpointFormat));
    }
    const ModelConfig cfg = model_config_from_json(j.at("config"));
    LabelCodec codec(j.at("labels").get<std::vector<std::string>>());
    if (codec.num_classes() != cfg.num_classes) {
        throw DataError("checkpoint: " + path + " label list does not match num_classes");
    }

    // Parameters are stored and restored in the model's stable declaration
    // order; name and shape are cross-checked entry by entry.
    TransformerClassifier model(cfg, SeededRng(0));
    auto params = model.parameters();
    const auto& stored = j.at("params");
    if (stored.size() != params.size()) {
        throw DataError("checkpoint: " + path + " holds " + std::to_string(stored.size()) +
                        " parameters, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& s = stored[i];
        const auto name = s.at("name").get<std::string>();
        if (name != params[i].name()) {
            throw DataError("checkpoint: parameter " + std::to_string(i) + " is '" + name +
                            "', model expects '" + params[i].name() + "'");
        }
        const auto shape = s.at("shape").get<Shape>();
        if (shape != params[i].shape()) {
            throw DataError("checkpoint: parameter '" + name + "' has shape " +
                            shape_str(shape) + ", model expects " +
                            shape_str(params[i].shape()));
        }
        const auto data = s.at("data").get<std::vector<double>>();
        if (data.size() != params[i].values().size()) {
            throw DataError("checkpoint: parameter '" + name + "' has " +
                            std::to_string(data.size()) + " values, expected " +
                            std::to_string(params[i].values().size()));
        }
        std::copy(data.begin(), data.end(), params[i].data());
        const std::string what = "checkpoint parameter " + name;
        params[i].ensure_finite(what.c_str());
    }
    return LoadedCheckpoint{std::move(model), std::move(codec)};
}

} // namespace flowhunter
