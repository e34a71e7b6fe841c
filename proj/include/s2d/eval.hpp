#pragma once

#include <string>
#include <vector>

#include "s2d/datagen.hpp"
#include "s2d/metrics.hpp"
#include "s2d/model.hpp"
#include "s2d/tensor_io.hpp"

namespace s2d {

/// A clip ready for the model: frames plus precomputed landmark features.
struct VideoSample {
    Tensor frames; // [T,C,H,W]
    Tensor lmk;    // [T,C',H',W']
    std::size_t label = 0;
    std::size_t clip_id = 0;
};

inline std::vector<VideoSample> to_video_dataset(const std::vector<SyntheticSample>& samples,
                                                 const DatasetSpec& spec) {
    std::vector<VideoSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples)
        out.push_back(VideoSample{s.frames, landmark_features(s, spec), s.label, s.clip_id});
    return out;
}

/// Value-only forward of one clip.
struct ClipOutput {
    Tensor logits;    // [C]
    Tensor feature;   // [D]
    Tensor attention; // optional [T,h,S,S]
};

inline ClipOutput forward_clip(const ParameterStore& ps, const ModelConfig& cfg, const Tensor& frames,
                               const Tensor& lmk, Mode mode, bool collect_attention = false) {
    Graph g;
    BoundParams bp(g, ps, /*with_grads=*/false);
    ForwardOptions opts;
    opts.collect_attention = collect_attention;
    ModelOutput out = forward_video(g, bp, frames, lmk, mode, cfg, opts);
    return {out.video_logits.value(), out.video_feature.value(), out.attention};
}

struct EvalResult {
    ConfusionMatrix cm;
    MetricsReport metrics;
};

/// Deterministic evaluation in clip-id (dataset) order. Two-clip mode samples
/// two phase-offset clips per video and averages their logits before the
/// argmax; ties break toward the lower class index.
inline EvalResult evaluate(const ParameterStore& ps, const ModelConfig& cfg,
                           const std::vector<VideoSample>& dataset, std::size_t eval_frames, ClipMode clip_mode,
                           Mode mode = Mode::Dfer) {
    if (dataset.empty()) throw ContractError("evaluate: empty dataset");
    EvalResult res;
    res.cm = ConfusionMatrix(cfg.classes);
    for (const auto& s : dataset) {
        auto clips = clip_indices(s.frames.extent(0), eval_frames, clip_mode);
        Tensor mean_logits({cfg.classes});
        for (const auto& idx : clips) {
            ClipOutput out = forward_clip(ps, cfg, select_frames(s.frames, idx), select_frames(s.lmk, idx), mode);
            for (std::size_t c = 0; c < cfg.classes; ++c) mean_logits[c] += out.logits[c];
        }
        for (std::size_t c = 0; c < cfg.classes; ++c) mean_logits[c] /= static_cast<double>(clips.size());
        res.cm.record(s.label, argmax_class(mean_logits.data(), cfg.classes));
    }
    res.metrics = compute_metrics(res.cm);
    return res;
}

/// Writes per-sample class features [n,D] and last-layer spatial attention
/// averaged over frames [n,h,N+1,N+1] as tensor files.
inline void dump_features_attention(const ParameterStore& ps, const ModelConfig& cfg,
                                    const std::vector<VideoSample>& dataset, std::size_t eval_frames,
                                    const std::string& features_path, const std::string& attention_path) {
    if (dataset.empty()) throw ContractError("dump: empty dataset");
    const std::size_t n = dataset.size();
    const std::size_t D = cfg.backbone.embed;
    const std::size_t S = cfg.backbone.tokens() + 1;
    const std::size_t h = cfg.backbone.heads;
    Tensor features({n, D});
    Tensor attention({n, h, S, S});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = dataset[i];
        auto idx = clip_indices(s.frames.extent(0), eval_frames, ClipMode::Uniform1)[0];
        ClipOutput out = forward_clip(ps, cfg, select_frames(s.frames, idx), select_frames(s.lmk, idx), Mode::Dfer,
                                      /*collect_attention=*/true);
        for (std::size_t d = 0; d < D; ++d) features[i * D + d] = out.feature[d];
        const std::size_t T = out.attention.extent(0);
        for (std::size_t hh = 0; hh < h; ++hh)
            for (std::size_t a = 0; a < S; ++a)
                for (std::size_t b = 0; b < S; ++b) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < T; ++t) acc += out.attention[((t * h + hh) * S + a) * S + b];
                    attention[((i * h + hh) * S + a) * S + b] = acc / static_cast<double>(T);
                }
    }
    write_tensor_file(features_path, features);
    write_tensor_file(attention_path, attention);
}

} // namespace s2d
