#pragma once

#include <cstddef>
#include <string>

#include "s2d/ops.hpp"
#include "s2d/params.hpp"

namespace s2d {

inline std::string prompt_prefix(std::size_t layer) { return "prompt" + std::to_string(layer) + "."; }
inline std::string fuse_prefix(std::size_t layer) { return "fuse" + std::to_string(layer) + "."; }

/// One per-layer prompt block: two bottleneck channel projections (g1 for the
/// expression view, g2 for the landmark view), a spatial fovea attention with
/// a learnable scalar weight, and an output projection g3 back to D. g3 is
/// zero-initialized so an inserted block leaves the backbone's function
/// unchanged until trained.
inline void register_prompter_params(ParameterStore& ps, std::size_t layer, std::size_t embed,
                                     std::size_t prompt_dim, Rng& rng) {
    if (prompt_dim >= embed) throw ConfigError("prompt bottleneck must be smaller than embed dim");
    const std::string p = prompt_prefix(layer);
    ps.add(p + "g1.weight", xavier_uniform({prompt_dim, embed}, embed, prompt_dim, rng));
    ps.add(p + "g1.bias", Tensor::zeros({prompt_dim}));
    ps.add(p + "g2.weight", xavier_uniform({prompt_dim, embed}, embed, prompt_dim, rng));
    ps.add(p + "g2.bias", Tensor::zeros({prompt_dim}));
    ps.add(p + "g3.weight", Tensor::zeros({embed, prompt_dim}));
    ps.add(p + "g3.bias", Tensor::zeros({embed}));
    ps.add(p + "lambda", Tensor::full({1}, 1.0));
}

/// Concat-project fusion baseline: weight [2D,D] initialized to [I;0] so the
/// fused tokens start as the unmodified expression tokens.
inline void register_concat_fusion_params(ParameterStore& ps, std::size_t layer, std::size_t embed) {
    const std::string p = fuse_prefix(layer);
    Tensor w({2 * embed, embed});
    for (std::size_t i = 0; i < embed; ++i) w[i * embed + i] = 1.0;
    ps.add(p + "weight", std::move(w));
    ps.add(p + "bias", Tensor::zeros({embed}));
}

/// Tokens [T,N,D] -> channel-first spatial grid [T,D,r,r] in the same
/// row-major patch order used by patch_embed.
inline Var tokens_to_grid(Var tokens) {
    const Shape& s = tokens.shape();
    if (s.size() != 3) throw ShapeError("tokens_to_grid: expected [T,N,D], got " + shape_str(s));
    const std::size_t T = s[0], N = s[1], D = s[2];
    const std::size_t r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(N))));
    if (r * r != N) throw ShapeError("tokens_to_grid: token count " + std::to_string(N) + " is not a perfect square");
    return reshape(permute(tokens, {0, 2, 1}), {T, D, r, r});
}

inline Var grid_to_tokens(Var grid) {
    const Shape& s = grid.shape();
    const std::size_t T = s[0], D = s[1], N = s[2] * s[3];
    return permute(reshape(grid, {T, D, N}), {0, 2, 1});
}

/// Both views projected to the bottleneck grid: (Mh, Ma), each [T,D',r,r].
inline std::pair<Var, Var> project_views(Var expr_tokens, Var lmk_tokens, const BoundParams& bp, std::size_t layer) {
    const std::string p = prompt_prefix(layer);
    Var mh = conv1x1(tokens_to_grid(expr_tokens), bp(p + "g1.weight"), bp(p + "g1.bias"));
    Var ma = conv1x1(tokens_to_grid(lmk_tokens), bp(p + "g2.weight"), bp(p + "g2.bias"));
    return {mh, ma};
}

/// Spatial softmax per (frame, channel) slice scaled by the learnable scalar:
/// every slice of the result sums to lambda.
inline Var fovea_attention(Var mh, Var lambda) {
    const Shape s = mh.shape(); // copy: creating ops may reallocate node storage
    if (s.size() != 4) throw ShapeError("fovea_attention: expected [T,C,r,r], got " + shape_str(s));
    const std::size_t T = s[0], C = s[1], N = s[2] * s[3];
    Var flat = reshape(mh, {T, C, N});
    Var soft = softmax(flat, 2);
    return reshape(scale(soft, lambda), s);
}

/// P = g3(Mh ⊙ Mfovea + Ma) reshaped back to [T,N,D]. Frame-wise pure: every
/// step treats T as a batch axis.
inline Var generate_prompts(Var expr_tokens, Var lmk_tokens, const BoundParams& bp, std::size_t layer) {
    const std::string p = prompt_prefix(layer);
    auto [mh, ma] = project_views(expr_tokens, lmk_tokens, bp, layer);
    Var fovea = fovea_attention(mh, bp(p + "lambda"));
    Var enhanced = mul(mh, fovea);
    Var fusedg = conv1x1(add(enhanced, ma), bp(p + "g3.weight"), bp(p + "g3.bias"));
    return grid_to_tokens(fusedg);
}

/// Concat+project baseline: replaces the expression tokens instead of adding
/// a residual prompt.
inline Var concat_fusion(Var expr_tokens, Var lmk_tokens, const BoundParams& bp, std::size_t layer) {
    const std::string p = fuse_prefix(layer);
    return add_bcast(matmul(concat(expr_tokens, lmk_tokens, 2), bp(p + "weight")), bp(p + "bias"));
}

} // namespace s2d
