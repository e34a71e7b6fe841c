#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "s2d/datagen.hpp"
#include "s2d/model.hpp"

namespace s2d {

/// Full hyperparameter record for one run. JSON (de)serialization starts from
/// the defaults and applies whatever keys are present, so partial config
/// files stay valid.
struct RunConfig {
    ModelConfig model;
    DatasetSpec data;

    // distillation
    bool sdl_enabled = true;
    std::size_t queue_size = 16; // S
    std::size_t top_k = 2;       // K
    double label_smoothing = 0.0;

    // optimization
    double lr_base = 4e-3;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    bool oversample = true;
    std::uint64_t seed = 1;

    std::size_t train_frames = 8; // evenly sampled from each stored clip
    std::size_t eval_frames = 8;
    Mode mode = Mode::Dfer;

    /// Base learning rate linearly scaled by batch size (identity at 8).
    double lr() const { return lr_base * static_cast<double>(batch_size) / 8.0; }

    void validate() const {
        model.validate();
        data.validate();
        if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
        if (queue_size == 0 || top_k == 0) throw ConfigError("queue size and top-K must be positive");
        if (train_frames == 0 || train_frames > data.frames)
            throw ConfigError("train_frames must be in [1, stored clip length]");
        if (eval_frames == 0 || eval_frames > data.frames)
            throw ConfigError("eval_frames must be in [1, stored clip length]");
        if (model.classes != data.classes && mode == Mode::Dfer)
            throw ConfigError("model classes != dataset classes");
        if (model.fusion != FusionKind::None) {
            if (model.lmk_size != data.lmk_size)
                throw ConfigError("model landmark grid != dataset landmark grid");
            if (model.lmk_channels != data.lmk_channels())
                throw ConfigError("model landmark channels != dataset landmark channels");
        }
        if (lr_base <= 0.0) throw ConfigError("lr_base must be positive");
    }
};

// -- JSON mapping -------------------------------------------------------------

namespace cfg_detail {
template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
} // namespace cfg_detail

inline std::string to_string(FusionKind f) {
    switch (f) {
        case FusionKind::None: return "none";
        case FusionKind::Prompt: return "prompt";
        case FusionKind::Concat: return "concat";
    }
    return "none";
}

inline FusionKind fusion_from_string(const std::string& s) {
    if (s == "none") return FusionKind::None;
    if (s == "prompt") return FusionKind::Prompt;
    if (s == "concat") return FusionKind::Concat;
    throw ConfigError("unknown fusion kind: " + s);
}

inline std::string to_string(AdapterKind a) {
    switch (a) {
        case AdapterKind::None: return "none";
        case AdapterKind::Vanilla: return "vanilla";
        case AdapterKind::Temporal: return "temporal";
        case AdapterKind::TemporalModeling: return "temporal_modeling";
    }
    return "none";
}

inline AdapterKind adapter_from_string(const std::string& s) {
    if (s == "none") return AdapterKind::None;
    if (s == "vanilla") return AdapterKind::Vanilla;
    if (s == "temporal") return AdapterKind::Temporal;
    if (s == "temporal_modeling") return AdapterKind::TemporalModeling;
    throw ConfigError("unknown adapter kind: " + s);
}

inline std::string to_string(Mode m) { return m == Mode::Sfer ? "sfer" : "dfer"; }

inline Mode mode_from_string(const std::string& s) {
    if (s == "sfer") return Mode::Sfer;
    if (s == "dfer") return Mode::Dfer;
    throw ConfigError("unknown mode: " + s);
}

inline nlohmann::json to_json(const RunConfig& rc) {
    nlohmann::json j;
    auto& b = j["model"]["backbone"];
    b["image"] = rc.model.backbone.image;
    b["patch"] = rc.model.backbone.patch;
    b["channels"] = rc.model.backbone.channels;
    b["embed"] = rc.model.backbone.embed;
    b["layers"] = rc.model.backbone.layers;
    b["heads"] = rc.model.backbone.heads;
    b["mlp_ratio"] = rc.model.backbone.mlp_ratio;
    auto& m = j["model"];
    m["classes"] = rc.model.classes;
    m["prompt_dim"] = rc.model.prompt_dim;
    m["gamma"] = rc.model.gamma;
    m["tmsa_heads"] = rc.model.tmsa_heads;
    m["lmk_size"] = rc.model.lmk_size;
    m["lmk_patch"] = rc.model.lmk_patch;
    m["lmk_channels"] = rc.model.lmk_channels;
    m["fusion"] = to_string(rc.model.fusion);
    m["adapter"] = to_string(rc.model.adapter);
    auto& d = j["data"];
    d["classes"] = rc.data.classes;
    d["train_samples"] = rc.data.train_samples;
    d["test_samples"] = rc.data.test_samples;
    d["frames"] = rc.data.frames;
    d["image"] = rc.data.image;
    d["channels"] = rc.data.channels;
    d["keypoints"] = rc.data.keypoints;
    d["lmk_size"] = rc.data.lmk_size;
    d["heatmap_sigma"] = rc.data.heatmap_sigma;
    d["blob_sigma"] = rc.data.blob_sigma;
    d["drift"] = rc.data.drift;
    d["margin"] = rc.data.margin;
    d["amp_lo"] = rc.data.amp_lo;
    d["amp_hi"] = rc.data.amp_hi;
    d["noise"] = rc.data.noise;
    d["color_jitter"] = rc.data.color_jitter;
    d["occlusion"] = rc.data.occlusion;
    auto& s = j["sdl"];
    s["enabled"] = rc.sdl_enabled;
    s["queue_size"] = rc.queue_size;
    s["top_k"] = rc.top_k;
    s["label_smoothing"] = rc.label_smoothing;
    auto& o = j["optim"];
    o["lr_base"] = rc.lr_base;
    o["batch_size"] = rc.batch_size;
    o["epochs"] = rc.epochs;
    o["beta1"] = rc.beta1;
    o["beta2"] = rc.beta2;
    o["weight_decay"] = rc.weight_decay;
    o["oversample"] = rc.oversample;
    o["seed"] = rc.seed;
    j["train_frames"] = rc.train_frames;
    j["eval_frames"] = rc.eval_frames;
    j["mode"] = to_string(rc.mode);
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using cfg_detail::get_if;
    RunConfig rc;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("backbone")) {
            const auto& b = m.at("backbone");
            get_if(b, "image", rc.model.backbone.image);
            get_if(b, "patch", rc.model.backbone.patch);
            get_if(b, "channels", rc.model.backbone.channels);
            get_if(b, "embed", rc.model.backbone.embed);
            get_if(b, "layers", rc.model.backbone.layers);
            get_if(b, "heads", rc.model.backbone.heads);
            get_if(b, "mlp_ratio", rc.model.backbone.mlp_ratio);
        }
        get_if(m, "classes", rc.model.classes);
        get_if(m, "prompt_dim", rc.model.prompt_dim);
        get_if(m, "gamma", rc.model.gamma);
        get_if(m, "tmsa_heads", rc.model.tmsa_heads);
        get_if(m, "lmk_size", rc.model.lmk_size);
        get_if(m, "lmk_patch", rc.model.lmk_patch);
        get_if(m, "lmk_channels", rc.model.lmk_channels);
        if (m.contains("fusion")) rc.model.fusion = fusion_from_string(m.at("fusion").get<std::string>());
        if (m.contains("adapter")) rc.model.adapter = adapter_from_string(m.at("adapter").get<std::string>());
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_if(d, "classes", rc.data.classes);
        get_if(d, "train_samples", rc.data.train_samples);
        get_if(d, "test_samples", rc.data.test_samples);
        get_if(d, "frames", rc.data.frames);
        get_if(d, "image", rc.data.image);
        get_if(d, "channels", rc.data.channels);
        get_if(d, "keypoints", rc.data.keypoints);
        get_if(d, "lmk_size", rc.data.lmk_size);
        get_if(d, "heatmap_sigma", rc.data.heatmap_sigma);
        get_if(d, "blob_sigma", rc.data.blob_sigma);
        get_if(d, "drift", rc.data.drift);
        get_if(d, "margin", rc.data.margin);
        get_if(d, "amp_lo", rc.data.amp_lo);
        get_if(d, "amp_hi", rc.data.amp_hi);
        get_if(d, "noise", rc.data.noise);
        get_if(d, "color_jitter", rc.data.color_jitter);
        get_if(d, "occlusion", rc.data.occlusion);
    }
    if (j.contains("sdl")) {
        const auto& s = j.at("sdl");
        get_if(s, "enabled", rc.sdl_enabled);
        get_if(s, "queue_size", rc.queue_size);
        get_if(s, "top_k", rc.top_k);
        get_if(s, "label_smoothing", rc.label_smoothing);
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        get_if(o, "lr_base", rc.lr_base);
        get_if(o, "batch_size", rc.batch_size);
        get_if(o, "epochs", rc.epochs);
        get_if(o, "beta1", rc.beta1);
        get_if(o, "beta2", rc.beta2);
        get_if(o, "weight_decay", rc.weight_decay);
        get_if(o, "oversample", rc.oversample);
        get_if(o, "seed", rc.seed);
    }
    get_if(j, "train_frames", rc.train_frames);
    get_if(j, "eval_frames", rc.eval_frames);
    if (j.contains("mode")) rc.mode = mode_from_string(j.at("mode").get<std::string>());
    return rc;
}

} // namespace s2d
