#pragma once

#include <cstddef>
#include <string>

#include "s2d/backbone.hpp"
#include "s2d/ops.hpp"
#include "s2d/params.hpp"

namespace s2d {

enum class AdapterKind { None, Vanilla, Temporal, TemporalModeling };

inline std::string adapter_prefix(std::size_t layer) { return "adapter" + std::to_string(layer) + "."; }

/// Bottleneck width gamma*D; must divide evenly into the temporal heads.
inline std::size_t adapter_bottleneck(std::size_t embed, double gamma) {
    const double exact = gamma * static_cast<double>(embed);
    const std::size_t b = static_cast<std::size_t>(std::llround(exact));
    if (b == 0 || std::fabs(exact - static_cast<double>(b)) > 1e-9)
        throw ConfigError("gamma * embed must be a positive integer, got gamma=" + std::to_string(gamma));
    return b;
}

/// Registers one adapter block. The block's output gate (the last
/// up-projection of the configured stack, weight and bias) starts at zero, so
/// the adapted model computes exactly the frozen image model at step 0.
/// Interior projections keep a standard init: zeroing the t-up projection of
/// the full stack as well would park the in-between LayerNorm at its
/// zero-variance singularity (inverse stddev 1/sqrt(eps)), which measurably
/// stalls adaptation. The temporal attention projections carry no biases.
inline void register_adapter_params(ParameterStore& ps, std::size_t layer, std::size_t embed,
                                    double gamma, std::size_t tmsa_heads, AdapterKind kind, Rng& rng) {
    const std::size_t g = adapter_bottleneck(embed, gamma);
    if (kind == AdapterKind::None) return;
    const bool temporal = kind == AdapterKind::Temporal || kind == AdapterKind::TemporalModeling;
    const bool vanilla = kind == AdapterKind::Vanilla || kind == AdapterKind::TemporalModeling;
    if (temporal && (tmsa_heads == 0 || g % tmsa_heads != 0))
        throw ConfigError("adapter bottleneck " + std::to_string(g) + " not divisible by " +
                          std::to_string(tmsa_heads) + " temporal heads");
    const std::string p = adapter_prefix(layer);
    if (temporal) {
        ps.add(p + "t_down.weight", xavier_uniform({embed, g}, embed, g, rng));
        ps.add(p + "t_down.bias", Tensor::zeros({g}));
        for (const char* w : {"t_msa.wq", "t_msa.wk", "t_msa.wv", "t_msa.wo"})
            ps.add(p + w, xavier_uniform({g, g}, g, g, rng));
        if (kind == AdapterKind::Temporal) {
            ps.add(p + "t_up.weight", Tensor::zeros({g, embed}));
            ps.add(p + "t_up.bias", Tensor::zeros({embed}));
        } else {
            ps.add(p + "t_up.weight", xavier_uniform({g, embed}, g, embed, rng));
            ps.add(p + "t_up.bias", Tensor::zeros({embed}));
        }
    }
    if (kind == AdapterKind::TemporalModeling) {
        ps.add(p + "norm.gain", Tensor::full({embed}, 1.0));
        ps.add(p + "norm.bias", Tensor::zeros({embed}));
    }
    if (vanilla) {
        ps.add(p + "v_down.weight", xavier_uniform({embed, g}, embed, g, rng));
        ps.add(p + "v_down.bias", Tensor::zeros({g}));
        ps.add(p + "v_up.weight", Tensor::zeros({g, embed}));
        ps.add(p + "v_up.bias", Tensor::zeros({embed}));
    }
}

/// Multi-head self-attention along the frame axis, independently per spatial
/// token: x [N,T,g] -> [N,T,g]. No temporal position embedding, so the result
/// is equivariant under frame permutation.
inline Var temporal_msa(Var x, const BoundParams& bp, std::size_t layer, std::size_t heads,
                        Tensor* attn_out = nullptr) {
    const std::string p = adapter_prefix(layer);
    return multi_head_attention_nobias(x, bp(p + "t_msa.wq"), bp(p + "t_msa.wk"), bp(p + "t_msa.wv"),
                                       bp(p + "t_msa.wo"), heads, attn_out);
}

/// T-Adapter: reshape to [N,T,D], down-project + GELU, attention over frames,
/// up-project, reshape back to [T,N,D].
inline Var t_adapter(Var tokens, const BoundParams& bp, std::size_t layer, std::size_t heads) {
    const std::string p = adapter_prefix(layer);
    const Shape& s = tokens.shape();
    if (s.size() != 3) throw ShapeError("t_adapter: expected [T,N,D], got " + shape_str(s));
    Var x = permute(tokens, {1, 0, 2}); // [N,T,D]
    x = gelu(add_bcast(matmul(x, bp(p + "t_down.weight")), bp(p + "t_down.bias")));
    x = temporal_msa(x, bp, layer, heads);
    x = add_bcast(matmul(x, bp(p + "t_up.weight")), bp(p + "t_up.bias"));
    return permute(x, {1, 0, 2});
}

/// Vanilla bottleneck adapter: up(GELU(down(x))), frame-wise.
inline Var vanilla_adapter(Var tokens, const BoundParams& bp, std::size_t layer) {
    const std::string p = adapter_prefix(layer);
    Var x = gelu(add_bcast(matmul(tokens, bp(p + "v_down.weight")), bp(p + "v_down.bias")));
    return add_bcast(matmul(x, bp(p + "v_up.weight")), bp(p + "v_up.bias"));
}

/// Full temporal-modeling stack: vanilla_adapter(LayerNorm(t_adapter(x))).
inline Var temporal_modeling_adapter(Var tokens, const BoundParams& bp, std::size_t layer, std::size_t heads) {
    const std::string p = adapter_prefix(layer);
    Var x = t_adapter(tokens, bp, layer, heads);
    x = layer_norm(x, bp(p + "norm.gain"), bp(p + "norm.bias"), 2);
    return vanilla_adapter(x, bp, layer);
}

/// Residual tokens contributed by the configured adapter variant, or an
/// invalid Var for AdapterKind::None.
inline Var adapter_tokens(Var tokens, const BoundParams& bp, std::size_t layer, std::size_t heads, AdapterKind kind) {
    switch (kind) {
        case AdapterKind::None: return Var();
        case AdapterKind::Vanilla: return vanilla_adapter(tokens, bp, layer);
        case AdapterKind::Temporal: return t_adapter(tokens, bp, layer, heads);
        case AdapterKind::TemporalModeling: return temporal_modeling_adapter(tokens, bp, layer, heads);
    }
    return Var();
}

} // namespace s2d
