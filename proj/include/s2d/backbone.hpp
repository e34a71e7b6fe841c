#pragma once

#include <cstddef>
#include <string>

#include "s2d/ops.hpp"
#include "s2d/params.hpp"

namespace s2d {

/// Image-encoder geometry. N = (image/patch)^2 must be a perfect square grid
/// because the prompter reshapes tokens onto a sqrt(N) x sqrt(N) plane.
struct BackboneConfig {
    std::size_t image = 32;      // H = W
    std::size_t patch = 8;
    std::size_t channels = 3;
    std::size_t embed = 32;      // D
    std::size_t layers = 2;      // L
    std::size_t heads = 4;
    std::size_t mlp_ratio = 8;

    std::size_t grid() const { return image / patch; }
    std::size_t tokens() const { return grid() * grid(); } // N
    std::size_t patch_dim() const { return channels * patch * patch; }

    void validate() const {
        if (patch == 0 || image % patch != 0)
            throw ConfigError("image size " + std::to_string(image) + " not divisible by patch " + std::to_string(patch));
        if (heads == 0 || embed % heads != 0)
            throw ConfigError("embed dim " + std::to_string(embed) + " not divisible by heads " + std::to_string(heads));
        const std::size_t n = tokens();
        const std::size_t r = grid();
        if (r * r != n) throw ConfigError("token count must be a perfect square");
    }
};

inline std::string enc_prefix(std::size_t layer) { return "enc" + std::to_string(layer) + "."; }

/// Registers patch embedding, class token, position table and L pre-norm
/// encoder layers. Weights get Xavier-uniform init, embeddings small normal,
/// biases zero, norm gains one.
inline void register_backbone_params(ParameterStore& ps, const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.embed;
    const std::size_t PD = cfg.patch_dim();
    const std::size_t M = cfg.mlp_ratio * D;
    ps.add("patch_embed.weight", xavier_uniform({PD, D}, PD, D, rng));
    ps.add("patch_embed.bias", Tensor::zeros({D}));
    ps.add("cls_token", normal_init({1, D}, 0.02, rng));
    ps.add("pos_embed", normal_init({cfg.tokens() + 1, D}, 0.02, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = enc_prefix(l);
        ps.add(p + "ln1.gain", Tensor::full({D}, 1.0));
        ps.add(p + "ln1.bias", Tensor::zeros({D}));
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            ps.add(p + w + std::string(".weight"), xavier_uniform({D, D}, D, D, rng));
            ps.add(p + w + std::string(".bias"), Tensor::zeros({D}));
        }
        ps.add(p + "ln2.gain", Tensor::full({D}, 1.0));
        ps.add(p + "ln2.bias", Tensor::zeros({D}));
        ps.add(p + "mlp.w1", xavier_uniform({D, M}, D, M, rng));
        ps.add(p + "mlp.b1", Tensor::zeros({M}));
        ps.add(p + "mlp.w2", xavier_uniform({M, D}, M, D, rng));
        ps.add(p + "mlp.b2", Tensor::zeros({D}));
    }
}

/// frames [T,C,H,W] -> tokens [T,N,D], patches in row-major grid order.
inline Var patch_embed(Var frames, Var weight, Var bias, std::size_t patch) {
    Var t = extract_patches(frames, patch);
    return add_bcast(matmul(t, weight), bias);
}

/// Element-wise add of the position table [(S),D] broadcast over frames.
inline Var add_position_embedding(Var tokens, Var pos) {
    return add_bcast(tokens, pos);
}

/// Multi-head self-attention over the middle (sequence) axis of [B,S,D].
/// Optionally copies the attention probabilities [B,h,S,S] to `attn_out`.
inline Var multi_head_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo, Var bo,
                                std::size_t heads, Tensor* attn_out = nullptr) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("attention expects [B,S,D], got " + shape_str(s));
    const std::size_t B = s[0], S = s[1], D = s[2];
    if (D % heads != 0)
        throw ShapeError("attention: embed " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dk = D / heads;

    auto split_heads = [&](Var v) {
        return permute(reshape(v, {B, S, heads, dk}), {0, 2, 1, 3}); // [B,h,S,dk]
    };
    Var q = split_heads(add_bcast(matmul(x, wq), bq));
    Var k = split_heads(add_bcast(matmul(x, wk), bk));
    Var v = split_heads(add_bcast(matmul(x, wv), bv));

    Var scores = cmul(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dk)));
    Var attn = softmax(scores, 3);
    if (attn_out) *attn_out = attn.value();
    Var ctx = matmul(attn, v);                                   // [B,h,S,dk]
    Var merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, S, D}); // [B,S,D]
    return add_bcast(matmul(merged, wo), bo);
}

/// Bias-free attention variant (temporal adapter uses this form).
inline Var multi_head_attention_nobias(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads,
                                       Tensor* attn_out = nullptr) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("attention expects [B,S,D], got " + shape_str(s));
    const std::size_t B = s[0], S = s[1], D = s[2];
    if (D % heads != 0)
        throw ShapeError("attention: embed " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dk = D / heads;
    auto split_heads = [&](Var v) { return permute(reshape(v, {B, S, heads, dk}), {0, 2, 1, 3}); };
    Var q = split_heads(matmul(x, wq));
    Var k = split_heads(matmul(x, wk));
    Var v = split_heads(matmul(x, wv));
    Var scores = cmul(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(dk)));
    Var attn = softmax(scores, 3);
    if (attn_out) *attn_out = attn.value();
    Var ctx = matmul(attn, v);
    Var merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, S, D});
    return matmul(merged, wo);
}

/// Pre-norm transformer block on combined tokens [T, N+1, D]:
/// x + MSA(LN(x)), then x + MLP(LN(x)). Attention mixes tokens within each
/// frame only; frames never interact here.
inline Var encoder_block(Var x, const BoundParams& bp, std::size_t layer, const BackboneConfig& cfg,
                         Tensor* attn_out = nullptr) {
    const std::string p = enc_prefix(layer);
    Var n1 = layer_norm(x, bp(p + "ln1.gain"), bp(p + "ln1.bias"), 2);
    Var att = multi_head_attention(n1, bp(p + "attn.wq.weight"), bp(p + "attn.wq.bias"),
                                   bp(p + "attn.wk.weight"), bp(p + "attn.wk.bias"),
                                   bp(p + "attn.wv.weight"), bp(p + "attn.wv.bias"),
                                   bp(p + "attn.wo.weight"), bp(p + "attn.wo.bias"), cfg.heads, attn_out);
    Var h = add(x, att);
    Var n2 = layer_norm(h, bp(p + "ln2.gain"), bp(p + "ln2.bias"), 2);
    Var m = add_bcast(matmul(n2, bp(p + "mlp.w1")), bp(p + "mlp.b1"));
    m = gelu(m);
    m = add_bcast(matmul(m, bp(p + "mlp.w2")), bp(p + "mlp.b2"));
    return add(h, m);
}

/// Spec-shaped layer entry point: class tokens [T,1,D] + patch tokens
/// [T,N,D] in, updated pair out.
inline std::pair<Var, Var> encoder_layer_forward(Var cls, Var patches, const BoundParams& bp,
                                                 std::size_t layer, const BackboneConfig& cfg,
                                                 Tensor* attn_out = nullptr) {
    const std::size_t N = patches.shape()[1];
    Var combined = concat(cls, patches, 1);
    Var out = encoder_block(combined, bp, layer, cfg, attn_out);
    return {narrow(out, 1, 0, 1), narrow(out, 1, 1, N)};
}

} // namespace s2d
