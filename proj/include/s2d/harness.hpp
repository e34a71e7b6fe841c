#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s2d/ablate.hpp"
#include "s2d/train.hpp"

namespace s2d {

/// Config for the end-to-end gradient check: a 2-frame clip through the full
/// adaptation stack at N=4 tokens, D=8 embed.
inline RunConfig gradcheck_config() {
    RunConfig rc;
    rc.model.backbone.image = 8;
    rc.model.backbone.patch = 4;
    rc.model.backbone.channels = 3;
    rc.model.backbone.embed = 8;
    rc.model.backbone.layers = 2;
    rc.model.backbone.heads = 2;
    rc.model.backbone.mlp_ratio = 4;
    rc.model.classes = 6;
    rc.model.prompt_dim = 1;
    rc.model.gamma = 0.25;
    rc.model.tmsa_heads = 2;
    rc.model.lmk_size = 4;
    rc.model.lmk_patch = 2;
    rc.model.lmk_channels = 6;
    rc.data.image = 8;
    rc.data.frames = 4;
    rc.data.lmk_size = 4;
    rc.data.margin = 2.0;
    rc.data.drift = 0.8;
    rc.data.blob_sigma = 1.0;
    rc.data.keypoints = 5;
    rc.train_frames = 2;
    rc.eval_frames = 2;
    return rc;
}

struct FullLossGradCheck {
    GradCheckReport report;
    std::size_t tunable_params = 0;
    std::size_t frozen_params = 0;
};

/// Central-difference check of the whole adaptation loss: prompts + adapters
/// + classifier + landmark embedding against CE + eta*BCE with warm anchor
/// queues. The soft labels are synthesized once at the base point and then
/// frozen, matching their stop-gradient label semantics. Zero-initialized up
/// projections are perturbed first so every tunable path carries gradient.
inline FullLossGradCheck gradcheck_full_loss(const RunConfig& rc, double h = 1e-5, double tol = 1e-4) {
    rc.model.validate();
    ParameterStore params = build_parameters(rc.model, rc.seed);
    Rng rng(Rng::mix(rc.seed, 0x6C));
    for (std::size_t l = 0; l < rc.model.backbone.layers; ++l) {
        for (const char* n : {"t_up.weight", "t_up.bias", "v_up.weight", "v_up.bias"}) {
            const std::string name = adapter_prefix(l) + n;
            if (!params.has(name)) continue;
            Tensor& t = params.at(name).value;
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.4, 0.4);
        }
        for (const char* n : {"g3.weight", "g3.bias"}) {
            const std::string name = prompt_prefix(l) + n;
            if (!params.has(name)) continue;
            Tensor& t = params.at(name).value;
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.4, 0.4);
        }
    }
    freeze_for_adaptation(params);

    // a toy batch of two 2-frame clips
    DatasetSpec dspec = rc.data;
    std::vector<VideoSample> batch;
    for (std::size_t i = 0; i < 2; ++i) {
        SyntheticSample s = make_sample(dspec, rc.seed, 1 + i * 2); // one appearance, one motion clip
        const auto idx = clip_indices(s.frames.extent(0), rc.train_frames, ClipMode::Uniform1)[0];
        batch.push_back(VideoSample{select_frames(s.frames, idx),
                                    select_frames(landmark_features(s, dspec), idx), s.label, s.clip_id});
    }

    // warm queues from model outputs at nearby parameter draws
    AnchorQueues queues(rc.model.classes, rc.queue_size);
    for (std::size_t c = 0; c < rc.model.classes; ++c) {
        for (std::size_t k = 0; k < 2; ++k) {
            Tensor feat({rc.model.backbone.embed});
            for (std::size_t d = 0; d < feat.numel(); ++d) feat[d] = rng.uniform(-1.0, 1.0);
            Tensor logits({rc.model.classes});
            for (std::size_t d = 0; d < logits.numel(); ++d) logits[d] = rng.uniform(-1.0, 1.0);
            logits[c] += 2.0;
            queues.enqueue(feat, softmax_values(logits, 0), c);
        }
    }
    const double eta = 0.7;

    // soft labels frozen at the base point (they are labels, not graph nodes)
    std::vector<std::optional<Tensor>> soft;
    for (const auto& s : batch) {
        ClipOutput out = forward_clip(params, rc.model, s.frames, s.lmk, Mode::Dfer);
        soft.push_back(synthesize_soft_label(out.feature, queues, rc.top_k));
    }

    auto build = [&](Graph& g, const BoundParams& bp) {
        Var total;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ModelOutput out = forward_video(g, bp, batch[i].frames, batch[i].lmk, Mode::Dfer, rc.model);
            LossTerms lt = total_loss(out.video_logits, batch[i].label, soft[i], eta);
            Var scaled = cmul(lt.total, 1.0 / static_cast<double>(batch.size()));
            total = total.valid() ? add(total, scaled) : scaled;
        }
        return total;
    };

    FullLossGradCheck res;
    res.report = finite_diff_check(build, params, h, tol);
    res.tunable_params = params.count_scalars(ParamFilter::Tunable);
    res.frozen_params = params.count_scalars(ParamFilter::Frozen);
    return res;
}

// -- dataset files ------------------------------------------------------------

/// Writes clips + landmark features as tensor files with a JSON-lines
/// manifest; returns the manifest path.
inline std::string save_video_dataset(const std::string& dir, const std::string& split,
                                      const std::vector<VideoSample>& samples, DType dtype = DType::F32) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "clips");
    std::vector<ManifestRecord> records;
    for (const auto& s : samples) {
        ManifestRecord r;
        r.clip_id = s.clip_id;
        r.label = s.label;
        r.frames_path = "clips/" + split + "_" + std::to_string(s.clip_id) + "_frames.s2dt";
        r.landmarks_path = "clips/" + split + "_" + std::to_string(s.clip_id) + "_lmk.s2dt";
        write_tensor_file((fs::path(dir) / r.frames_path).string(), s.frames, dtype);
        write_tensor_file((fs::path(dir) / r.landmarks_path).string(), s.lmk, dtype);
        records.push_back(std::move(r));
    }
    const std::string manifest = (fs::path(dir) / (split + "_manifest.jsonl")).string();
    write_manifest(manifest, records);
    return manifest;
}

inline std::vector<VideoSample> load_video_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<VideoSample> out;
    for (const auto& r : read_manifest(manifest_path)) {
        VideoSample s;
        s.clip_id = r.clip_id;
        s.label = r.label;
        s.frames = read_tensor_file((base / r.frames_path).string());
        s.lmk = read_tensor_file((base / r.landmarks_path).string());
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace s2d
