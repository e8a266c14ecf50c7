#pragma once

// A trained model on disk: "<prefix>.cfg" holds the task, architecture,
// training settings and label scaler as key=value text; "<prefix>.ckpt"
// holds the weights stamped with the FNV-1a digest of that text.

#include <filesystem>
#include <optional>
#include <string>

#include "sinspec/checkpoint.hpp"
#include "sinspec/config.hpp"
#include "sinspec/encoder.hpp"
#include "sinspec/properties.hpp"
#include "sinspec/similarity.hpp"

namespace sinspec {

inline constexpr std::uint64_t kModelSchemaVersion = 1;

enum class TaskKind { Siamese, Properties, PropertiesBaseline };

inline const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Siamese: return "siamese";
        case TaskKind::Properties: return "properties";
        case TaskKind::PropertiesBaseline: return "properties-baseline";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& s) {
    if (s == "siamese") return TaskKind::Siamese;
    if (s == "properties") return TaskKind::Properties;
    if (s == "properties-baseline") return TaskKind::PropertiesBaseline;
    throw ConfigError("mode must be siamese, properties or properties-baseline, got '" + s + "'");
}

struct ModelSpec {
    TaskKind task = TaskKind::Siamese;
    EncoderConfig encoder;
    BaselineConfig baseline;
    TrainConfig train;
    std::optional<LabelScaler> scaler;  // property tasks only

    std::string text() const {
        KeyValues kv;
        kv.set("schema_version", std::to_string(kModelSchemaVersion));
        kv.set("task", task_name(task));
        encoder.write(kv);
        train.write(kv);
        if (task == TaskKind::PropertiesBaseline) baseline.write(kv);
        if (scaler) scaler->write(kv);
        return "# sinspec model\n" + kv.text();
    }

    std::uint64_t digest() const { return fnv1a64(text()); }

    static ModelSpec parse(std::string_view text) {
        const auto kv = KeyValues::parse(text);
        if (kv.integer_or("schema_version", 0) != kModelSchemaVersion)
            throw ConfigError("model config schema_version must be " + std::to_string(kModelSchemaVersion));
        ModelSpec m;
        m.task = task_from_name(kv.str("task"));
        m.encoder = EncoderConfig::read(kv);
        m.train = TrainConfig::read(kv);
        if (m.task == TaskKind::PropertiesBaseline) m.baseline = BaselineConfig::read(kv, m.encoder.dim);
        if (m.task != TaskKind::Siamese) m.scaler = LabelScaler::read(kv);
        return m;
    }
};

/// Weights for whichever task the spec names; only that member is built.
template <typename T>
struct TrainedModel {
    ModelSpec spec;
    SpectrumEncoder<T> encoder;
    PropertyModel<T> properties;
    BaselineModel<T> baseline;

    static TrainedModel create(const ModelSpec& spec, std::uint64_t seed) {
        TrainedModel m;
        m.spec = spec;
        switch (spec.task) {
            case TaskKind::Siamese: m.encoder = SpectrumEncoder<T>(spec.encoder, seed); break;
            case TaskKind::Properties: m.properties = PropertyModel<T>(spec.encoder, seed); break;
            case TaskKind::PropertiesBaseline: m.baseline = BaselineModel<T>(spec.baseline, seed); break;
        }
        return m;
    }

    ParamList<T> parameters() const {
        switch (spec.task) {
            case TaskKind::Siamese: return encoder.parameters();
            case TaskKind::Properties: return properties.parameters();
            case TaskKind::PropertiesBaseline: return baseline.parameters();
        }
        return {};
    }

    /// The spectrum encoder, for tasks that have one.
    const SpectrumEncoder<T>& spectrum_encoder() const {
        if (spec.task == TaskKind::Siamese) return encoder;
        if (spec.task == TaskKind::Properties) return properties.encoder();
        throw ConfigError("the binned baseline has no spectrum encoder");
    }
};

inline std::filesystem::path config_path(const std::filesystem::path& prefix) { return prefix.string() + ".cfg"; }
inline std::filesystem::path weights_path(const std::filesystem::path& prefix) { return prefix.string() + ".ckpt"; }

template <typename T>
void save_model(const std::filesystem::path& prefix, const TrainedModel<T>& model) {
    const auto text = model.spec.text();
    save_checkpoint(weights_path(prefix), snapshot(model.parameters(), fnv1a64(text)));
    write_file_atomic(config_path(prefix), text);
}

/// Refuses weights whose digest does not match the config text.
template <typename T>
TrainedModel<T> load_model(const std::filesystem::path& prefix) {
    const auto text = read_file(config_path(prefix));
    auto model = TrainedModel<T>::create(ModelSpec::parse(text), 0);
    auto params = model.parameters();
    restore(params, load_checkpoint(weights_path(prefix)), fnv1a64(text));
    return model;
}

}  // namespace sinspec
