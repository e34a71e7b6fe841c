#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "s2d/backbone.hpp"
#include "s2d/prompter.hpp"
#include "s2d/temporal_adapter.hpp"

namespace s2d {

enum class FusionKind { None, Prompt, Concat };
enum class Mode { Sfer, Dfer };

struct ModelConfig {
    BackboneConfig backbone;
    std::size_t classes = 6;
    std::size_t prompt_dim = 4;      // bottleneck D' of the prompt blocks
    double gamma = 0.25;             // adapter downsampling rate
    std::size_t tmsa_heads = 4;      // temporal attention heads
    std::size_t lmk_size = 8;        // landmark feature H' = W'
    std::size_t lmk_patch = 2;
    std::size_t lmk_channels = 6;
    FusionKind fusion = FusionKind::Prompt;
    AdapterKind adapter = AdapterKind::TemporalModeling;

    std::size_t lmk_patch_dim() const { return lmk_channels * lmk_patch * lmk_patch; }

    void validate() const {
        backbone.validate();
        if (classes < 2) throw ConfigError("need at least 2 classes");
        if (fusion != FusionKind::None) {
            if (lmk_patch == 0 || lmk_size % lmk_patch != 0)
                throw ConfigError("landmark size " + std::to_string(lmk_size) + " not divisible by patch " +
                                  std::to_string(lmk_patch));
            const std::size_t n = (lmk_size / lmk_patch) * (lmk_size / lmk_patch);
            if (n != backbone.tokens())
                throw ConfigError("landmark grid yields " + std::to_string(n) + " tokens, backbone has " +
                                  std::to_string(backbone.tokens()));
            if (fusion == FusionKind::Prompt && prompt_dim >= backbone.embed)
                throw ConfigError("prompt bottleneck must be smaller than embed dim");
        }
        if (adapter != AdapterKind::None) {
            const std::size_t g = adapter_bottleneck(backbone.embed, gamma);
            if (adapter != AdapterKind::Vanilla && g % tmsa_heads != 0)
                throw ConfigError("adapter bottleneck " + std::to_string(g) + " not divisible by temporal heads " +
                                  std::to_string(tmsa_heads));
        }
    }
};

/// Builds the full parameter table in a fixed order (also the init-RNG
/// consumption order): backbone, landmark embedding, per-layer fusion and
/// adapter blocks, classifier.
inline ParameterStore build_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, 0xBADD1CE));
    ParameterStore ps;
    register_backbone_params(ps, cfg.backbone, rng);
    if (cfg.fusion != FusionKind::None) {
        const std::size_t PD = cfg.lmk_patch_dim();
        ps.add("lmk_embed.weight", xavier_uniform({PD, cfg.backbone.embed}, PD, cfg.backbone.embed, rng));
        ps.add("lmk_embed.bias", Tensor::zeros({cfg.backbone.embed}));
        for (std::size_t l = 0; l < cfg.backbone.layers; ++l) {
            if (cfg.fusion == FusionKind::Prompt)
                register_prompter_params(ps, l, cfg.backbone.embed, cfg.prompt_dim, rng);
            else
                register_concat_fusion_params(ps, l, cfg.backbone.embed);
        }
    }
    if (cfg.adapter != AdapterKind::None)
        for (std::size_t l = 0; l < cfg.backbone.layers; ++l)
            register_adapter_params(ps, l, cfg.backbone.embed, cfg.gamma, cfg.tmsa_heads, cfg.adapter, rng);
    ps.add("classifier.weight",
           xavier_uniform({cfg.backbone.embed, cfg.classes}, cfg.backbone.embed, cfg.classes, rng));
    ps.add("classifier.bias", Tensor::zeros({cfg.classes}));
    return ps;
}

/// Adaptation freezing: prompt/fusion blocks, adapters, classifier and the
/// landmark embedding stay tunable; the SFER-trained backbone (patch
/// embedding, class token, position table, encoder layers) is frozen.
/// Rejects names it cannot classify.
inline void freeze_for_adaptation(ParameterStore& ps) {
    static const char* tunable_prefixes[] = {"prompt", "fuse", "adapter", "classifier.", "lmk_embed."};
    static const char* frozen_prefixes[] = {"patch_embed.", "cls_token", "pos_embed", "enc"};
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps.at(i);
        bool matched = false;
        for (const char* pre : tunable_prefixes)
            if (p.name.rfind(pre, 0) == 0) {
                p.tunable = true;
                matched = true;
                break;
            }
        if (!matched)
            for (const char* pre : frozen_prefixes)
                if (p.name.rfind(pre, 0) == 0) {
                    p.tunable = false;
                    matched = true;
                    break;
                }
        if (!matched) throw ContractError("unknown parameter name: " + p.name);
    }
}

inline std::size_t count_parameters(const ParameterStore& ps, ParamFilter f = ParamFilter::All) {
    return ps.count_scalars(f);
}

struct ForwardOptions {
    bool collect_attention = false; // last layer's spatial attention
};

struct ModelOutput {
    Var video_logits;          // [C], mean of per-frame logits
    Var video_feature;         // [D], mean of final class tokens
    Var frame_logits;          // [T,C] diagnostic
    Tensor attention;          // [T,h,N+1,N+1] when requested
};

/// Full forward pass over one clip. frames [T,C,H,W]; lmk [T,C',H',W'] may be
/// empty when fusion is disabled. In Sfer mode T must be 1 and the adapter
/// path is skipped.
inline ModelOutput forward_video(Graph& g, const BoundParams& bp, const Tensor& frames, const Tensor& lmk,
                                 Mode mode, const ModelConfig& cfg, const ForwardOptions& opts = {}) {
    if (frames.rank() != 4)
        throw ShapeError("forward_video: frames must be [T,C,H,W], got " + shape_str(frames.shape()));
    const std::size_t T = frames.extent(0);
    if (mode == Mode::Sfer && T != 1)
        throw ContractError("sfer mode expects a single frame, got T=" + std::to_string(T));
    const std::size_t N = cfg.backbone.tokens();
    const std::size_t D = cfg.backbone.embed;

    Var tokens = patch_embed(g.constant(frames), bp("patch_embed.weight"), bp("patch_embed.bias"),
                             cfg.backbone.patch);                       // [T,N,D]
    Var lmk_tokens;
    if (cfg.fusion != FusionKind::None) {
        if (lmk.rank() != 4)
            throw ShapeError("forward_video: landmark features must be [T,C',H',W'], got " + shape_str(lmk.shape()));
        if (lmk.extent(0) != T)
            throw ShapeError("forward_video: landmark frames " + std::to_string(lmk.extent(0)) +
                             " != image frames " + std::to_string(T));
        lmk_tokens = patch_embed(g.constant(lmk), bp("lmk_embed.weight"), bp("lmk_embed.bias"), cfg.lmk_patch);
    }

    Var cls = broadcast0(bp("cls_token"), T);                           // [T,1,D]
    Var combined = add_bcast(concat(cls, tokens, 1), bp("pos_embed")); // [T,N+1,D]

    const bool use_adapter = mode == Mode::Dfer && cfg.adapter != AdapterKind::None;
    Tensor* attn_sink = nullptr;
    ModelOutput out;
    for (std::size_t l = 0; l < cfg.backbone.layers; ++l) {
        Var cls_l = narrow(combined, 1, 0, 1);
        Var patches = narrow(combined, 1, 1, N);
        Var injected = patches;
        if (cfg.fusion == FusionKind::Prompt)
            injected = add(injected, generate_prompts(patches, lmk_tokens, bp, l));
        else if (cfg.fusion == FusionKind::Concat)
            injected = concat_fusion(patches, lmk_tokens, bp, l);
        if (use_adapter) {
            Var t = adapter_tokens(patches, bp, l, cfg.tmsa_heads, cfg.adapter);
            if (t.valid()) injected = add(injected, t);
        }
        if (opts.collect_attention && l + 1 == cfg.backbone.layers) attn_sink = &out.attention;
        combined = encoder_block(concat(cls_l, injected, 1), bp, l, cfg.backbone, attn_sink);
    }

    Var cls_final = reshape(narrow(combined, 1, 0, 1), {T, D});
    out.frame_logits = add_bcast(matmul(cls_final, bp("classifier.weight")), bp("classifier.bias"));
    out.video_logits = mean_axis(out.frame_logits, 0);
    out.video_feature = mean_axis(cls_final, 0);
    return out;
}

} // namespace s2d
