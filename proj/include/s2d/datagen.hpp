#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "s2d/rng.hpp"
#include "s2d/tensor.hpp"

namespace s2d {

/// Synthetic spatiotemporal dataset: 6 classes over T-frame clips of soft
/// blob clusters.
///   0,1  appearance classes - static formations with distinct color tints,
///        decidable from any single frame;
///   2..5 motion classes - a neutral cluster drifting up/down/left/right.
///
/// Motion classes are frame-wise undecidable by construction: the cluster
/// center drifts on a torus (wrapping inside the placement strip), so its
/// position is uniform over the strip at every frame index and all four
/// classes share one per-frame pixel distribution exactly. Every clip carries
/// the same monotone brightness ramp, which acts as an in-frame time stamp:
/// the *set* of frames then determines the drift direction even though frame
/// order carries no extra information (the model is invariant under frame
/// permutation).
struct DatasetSpec {
    std::size_t classes = 6;
    std::size_t train_samples = 600;
    std::size_t test_samples = 120;
    std::size_t frames = 16;      // stored clip length
    std::size_t image = 32;       // H = W
    std::size_t channels = 3;
    std::size_t keypoints = 5;    // J
    std::size_t lmk_size = 8;     // H' = W'
    double heatmap_sigma = 1.0;   // in landmark-grid cells
    double blob_sigma = 1.6;      // in image pixels
    double drift = 1.3;           // px per frame for motion classes
    double margin = 4.5;
    double amp_lo = 0.45;
    double amp_hi = 1.0;
    double noise = 0.05;
    double color_jitter = 0.4;    // per-clip channel scale in [1-j, 1+j]; the image set uses 0
    bool occlusion = false;       // occlusion + distractor variant

    std::size_t lmk_channels() const { return keypoints + 1; } // heatmaps + low-pass luminance

    void validate() const {
        if (classes != 6) throw ConfigError("dataset is defined for 6 classes (2 appearance + 4 motion)");
        if (frames < 2) throw ConfigError("clips need at least 2 frames");
        if (keypoints == 0) throw ConfigError("need at least one keypoint");
        if (lmk_size == 0 || image % lmk_size != 0) throw ConfigError("landmark grid must divide the image size");
        if (2.0 * margin + 2.0 >= static_cast<double>(image - 1))
            throw ConfigError("margins leave no room for the placement strip");
        if (drift <= 0.0) throw ConfigError("drift must be positive");
    }
};

struct SyntheticSample {
    Tensor frames;    // [T,C,H,W], values in [0,1]
    Tensor keypoints; // [T,J,2] as (x,y) image coordinates
    std::size_t label = 0;
    std::size_t clip_id = 0;
};

namespace datagen_detail {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline std::vector<Vec2> formation_plus(double r) {
    return {{0, 0}, {r, 0}, {-r, 0}, {0, r}, {0, -r}};
}

inline std::vector<Vec2> formation_cross(double r) {
    return {{0, 0}, {r, r}, {-r, r}, {r, -r}, {-r, -r}};
}

inline std::vector<Vec2> formation_random(std::size_t n, Rng& rng) {
    std::vector<Vec2> f(n);
    for (auto& v : f) {
        v.x = rng.uniform(-2.5, 2.5);
        v.y = rng.uniform(-2.5, 2.5);
    }
    return f;
}

inline std::vector<Vec2> resize_formation(std::vector<Vec2> f, std::size_t n, Rng& rng) {
    while (f.size() < n) f.push_back({rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5)});
    f.resize(n);
    return f;
}

inline void splat(Tensor& frames, const DatasetSpec& spec, std::size_t t, double cx, double cy, double amp,
                  const std::array<double, 3>& tint) {
    const std::size_t H = spec.image;
    const double s2 = 2.0 * spec.blob_sigma * spec.blob_sigma;
    const int rad = static_cast<int>(std::ceil(3.5 * spec.blob_sigma));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - rad);
    const int x1 = std::min(static_cast<int>(H) - 1, static_cast<int>(std::floor(cx)) + rad);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - rad);
    const int y1 = std::min(static_cast<int>(H) - 1, static_cast<int>(std::floor(cy)) + rad);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double v = amp * std::exp(-d2 / s2);
            for (std::size_t c = 0; c < spec.channels && c < 3; ++c)
                frames[((t * spec.channels + c) * H + y) * H + x] += tint[c] * v;
        }
}

inline void fill_rect(Tensor& frames, const DatasetSpec& spec, std::size_t t, double cx, double cy, double w,
                      double h, Rng& rng) {
    const std::size_t H = spec.image;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - w / 2)));
    const int x1 = std::min(static_cast<int>(H) - 1, static_cast<int>(std::floor(cx + w / 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - h / 2)));
    const int y1 = std::min(static_cast<int>(H) - 1, static_cast<int>(std::floor(cy + h / 2)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double v = 0.45 + rng.uniform(-0.15, 0.15);
            for (std::size_t c = 0; c < spec.channels; ++c)
                frames[((t * spec.channels + c) * H + y) * H + x] = v;
        }
}

inline constexpr std::array<double, 3> kWarmTint = {1.0, 0.55, 0.25};
inline constexpr std::array<double, 3> kCoolTint = {0.25, 0.55, 1.0};
inline constexpr std::array<double, 3> kNeutralTint = {0.55, 1.0, 0.55};

// motion direction per class id (2..5): up, down, left, right (dy is screen-down)
inline Vec2 motion_dir(std::size_t label) {
    switch (label) {
        case 2: return {0, -1};
        case 3: return {0, 1};
        case 4: return {-1, 0};
        case 5: return {1, 0};
        default: throw ContractError("motion_dir: label " + std::to_string(label) + " is not a motion class");
    }
}

/// Position on the wrapped placement strip [lo, hi): uniform start plus a
/// drift offset, folded back into the strip. Uniform at every step, for every
/// drift direction.
inline double wrap_coord(double start, double offset, double lo, double hi) {
    const double range = hi - lo;
    double v = std::fmod(start - lo + offset, range);
    if (v < 0) v += range;
    return lo + v;
}

} // namespace datagen_detail

/// Amplitude ramp shared by every clip: amp_lo at the first frame, amp_hi at
/// the last.
inline double amp_ramp(const DatasetSpec& spec, std::size_t t) {
    return spec.amp_lo + (spec.amp_hi - spec.amp_lo) * static_cast<double>(t) / static_cast<double>(spec.frames - 1);
}

/// Pure per (spec, seed, index): every call regenerates the same sample.
inline SyntheticSample make_sample(const DatasetSpec& spec, std::uint64_t seed, std::size_t index) {
    namespace dd = datagen_detail;
    spec.validate();
    const std::size_t T = spec.frames, H = spec.image, J = spec.keypoints;
    Rng rng(Rng::mix(seed, 0x5A11 + index));

    SyntheticSample s;
    s.clip_id = index;
    s.label = index % spec.classes;
    s.frames = Tensor({T, spec.channels, H, H});
    s.keypoints = Tensor({T, J, 2});

    // background noise
    for (std::size_t i = 0; i < s.frames.numel(); ++i) s.frames[i] = rng.uniform(0.0, spec.noise);

    const double lo = spec.margin, hi = static_cast<double>(H - 1) - spec.margin;

    std::vector<dd::Vec2> formation;
    std::array<double, 3> tint{};
    std::vector<dd::Vec2> centers(T);

    // per-clip color shift, identical in law for every class
    std::array<double, 3> jitter{1.0, 1.0, 1.0};
    for (double& jch : jitter) jch = rng.uniform(1.0 - spec.color_jitter, 1.0 + spec.color_jitter);

    if (s.label <= 1) {
        formation = s.label == 0 ? dd::resize_formation(dd::formation_plus(3.0), J, rng)
                                 : dd::resize_formation(dd::formation_cross(2.6), J, rng);
        tint = s.label == 0 ? dd::kWarmTint : dd::kCoolTint;
        const double cx = rng.uniform(lo, hi), cy = rng.uniform(lo, hi);
        for (std::size_t t = 0; t < T; ++t) centers[t] = {cx, cy};
    } else {
        formation = dd::formation_random(J, rng);
        tint = dd::kNeutralTint;
        const dd::Vec2 dir = dd::motion_dir(s.label);
        const double x0 = rng.uniform(lo, hi), y0 = rng.uniform(lo, hi);
        for (std::size_t t = 0; t < T; ++t)
            centers[t] = {dd::wrap_coord(x0, dir.x * spec.drift * static_cast<double>(t), lo, hi),
                          dd::wrap_coord(y0, dir.y * spec.drift * static_cast<double>(t), lo, hi)};
    }
    for (std::size_t c = 0; c < 3; ++c) tint[c] *= jitter[c];

    for (std::size_t t = 0; t < T; ++t) {
        const double amp = amp_ramp(spec, t);
        for (std::size_t j = 0; j < J; ++j) {
            double kx = centers[t].x + formation[j].x;
            double ky = centers[t].y + formation[j].y;
            if (s.label <= 1) { // appearance classes carry small per-frame jitter
                kx += rng.uniform(-0.5, 0.5);
                ky += rng.uniform(-0.5, 0.5);
            }
            kx = std::clamp(kx, 0.0, static_cast<double>(H - 1));
            ky = std::clamp(ky, 0.0, static_cast<double>(H - 1));
            s.keypoints[(t * J + j) * 2 + 0] = kx;
            s.keypoints[(t * J + j) * 2 + 1] = ky;
            dd::splat(s.frames, spec, t, kx, ky, amp, tint);
        }
    }

    if (spec.occlusion) {
        // A decoy cluster, identical in appearance to the labeled one,
        // drifting in its own random direction. Only the landmark stream
        // (rendered from the true keypoints) can tell the two apart.
        auto decoy_formation = dd::formation_random(J, rng);
        const dd::Vec2 ddir = dd::motion_dir(2 + rng.index(4));
        const double dx0 = rng.uniform(lo, hi), dy0 = rng.uniform(lo, hi);
        for (std::size_t t = 0; t < T; ++t) {
            const double cx = dd::wrap_coord(dx0, ddir.x * spec.drift * static_cast<double>(t), lo, hi);
            const double cy = dd::wrap_coord(dy0, ddir.y * spec.drift * static_cast<double>(t), lo, hi);
            const double amp = amp_ramp(spec, t);
            for (std::size_t j = 0; j < J; ++j)
                dd::splat(s.frames, spec, t, cx + decoy_formation[j].x, cy + decoy_formation[j].y, amp, tint);
            // occluder over the labeled cluster on roughly half the frames
            if (rng.uniform() < 0.5) {
                const double w = rng.uniform(9.0, 14.0), h = rng.uniform(9.0, 14.0);
                dd::fill_rect(s.frames, spec, t, centers[t].x + rng.uniform(-2.0, 2.0),
                              centers[t].y + rng.uniform(-2.0, 2.0), w, h, rng);
            }
        }
    }

    for (std::size_t i = 0; i < s.frames.numel(); ++i) s.frames[i] = std::clamp(s.frames[i], 0.0, 1.0);
    return s;
}

inline std::vector<SyntheticSample> generate_split(const DatasetSpec& spec, std::uint64_t seed, std::size_t count,
                                                   std::uint64_t salt) {
    std::vector<SyntheticSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(spec, Rng::mix(seed, salt), i));
    return out;
}

struct DatasetBundle {
    std::vector<SyntheticSample> train;
    std::vector<SyntheticSample> test;
};

inline DatasetBundle generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    return {generate_split(spec, seed, spec.train_samples, 1), generate_split(spec, seed, spec.test_samples, 2)};
}

/// Single-frame two-class image set for pre-training the image model: the
/// appearance classes only, rendered at full amplitude (no ramp) from a
/// narrower placement region. The distribution shift against video clips is
/// deliberate.
inline std::vector<SyntheticSample> generate_sfer_split(const DatasetSpec& video_spec, std::uint64_t seed,
                                                        std::size_t count, std::uint64_t salt) {
    namespace dd = datagen_detail;
    DatasetSpec spec = video_spec;
    spec.occlusion = false;
    spec.color_jitter = 0.0;
    const std::size_t H = spec.image, J = spec.keypoints;
    std::vector<SyntheticSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(Rng::mix(Rng::mix(seed, salt), 0xF0E0 + i));
        SyntheticSample s;
        s.clip_id = i;
        s.label = i % 2;
        s.frames = Tensor({1, spec.channels, H, H});
        s.keypoints = Tensor({1, J, 2});
        for (std::size_t p = 0; p < s.frames.numel(); ++p) s.frames[p] = rng.uniform(0.0, spec.noise);
        auto formation = s.label == 0 ? dd::resize_formation(dd::formation_plus(3.0), J, rng)
                                      : dd::resize_formation(dd::formation_cross(2.6), J, rng);
        const auto tint = s.label == 0 ? dd::kWarmTint : dd::kCoolTint;
        const double lo = spec.margin + 3.0, hi = static_cast<double>(H - 1) - spec.margin - 3.0;
        const double cx = rng.uniform(lo, hi), cy = rng.uniform(lo, hi);
        for (std::size_t j = 0; j < J; ++j) {
            const double kx = std::clamp(cx + formation[j].x, 0.0, double(H - 1));
            const double ky = std::clamp(cy + formation[j].y, 0.0, double(H - 1));
            s.keypoints[j * 2 + 0] = kx;
            s.keypoints[j * 2 + 1] = ky;
            dd::splat(s.frames, spec, 0, kx, ky, spec.amp_hi, tint);
        }
        for (std::size_t p = 0; p < s.frames.numel(); ++p) s.frames[p] = std::clamp(s.frames[p], 0.0, 1.0);
        out.push_back(std::move(s));
    }
    return out;
}

/// Landmark-aware features for one sample: J per-keypoint Gaussian heatmaps
/// (peak exactly 1.0 at the keypoint's cell) plus one low-pass luminance
/// channel, on the H'xW' grid. Derived from the true keypoints, so it stays
/// clean under the occlusion variant - the stand-in for a landmark detector
/// that is robust to appearance corruption.
inline Tensor landmark_features(const SyntheticSample& sample, const DatasetSpec& spec) {
    const std::size_t T = sample.frames.extent(0);
    const std::size_t J = sample.keypoints.extent(1);
    if (J == 0) throw ContractError("landmark_features: sample has no keypoints");
    const std::size_t G = spec.lmk_size;
    const double scale = static_cast<double>(G) / static_cast<double>(spec.image);
    const std::size_t C = J + 1;
    Tensor out({T, C, G, G});
    const double s2 = 2.0 * spec.heatmap_sigma * spec.heatmap_sigma;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < J; ++j) {
            const double kx = sample.keypoints[(t * J + j) * 2 + 0] * scale;
            const double ky = sample.keypoints[(t * J + j) * 2 + 1] * scale;
            double mx = 0.0;
            for (std::size_t y = 0; y < G; ++y)
                for (std::size_t x = 0; x < G; ++x) {
                    const double cxx = static_cast<double>(x) + 0.5;
                    const double cyy = static_cast<double>(y) + 0.5;
                    const double d2 = (cxx - kx) * (cxx - kx) + (cyy - ky) * (cyy - ky);
                    const double v = std::exp(-d2 / s2);
                    out[((t * C + j) * G + y) * G + x] = v;
                    mx = std::max(mx, v);
                }
            for (std::size_t y = 0; y < G; ++y)
                for (std::size_t x = 0; x < G; ++x) out[((t * C + j) * G + y) * G + x] /= mx;
        }
        // low-pass luminance: block mean over channels and pixels
        const std::size_t B = spec.image / G;
        for (std::size_t y = 0; y < G; ++y)
            for (std::size_t x = 0; x < G; ++x) {
                double acc = 0.0;
                for (std::size_t c = 0; c < spec.channels; ++c)
                    for (std::size_t by = 0; by < B; ++by)
                        for (std::size_t bx = 0; bx < B; ++bx)
                            acc += sample.frames[((t * spec.channels + c) * spec.image + y * B + by) * spec.image +
                                                 x * B + bx];
                out[((t * C + J) * G + y) * G + x] = acc / static_cast<double>(spec.channels * B * B);
            }
    }
    return out;
}

enum class ClipMode { Uniform1, Uniform2 };

/// Evenly spaced frame indices. Uniform2 returns a second clip at a half-step
/// phase offset (identical to the first when the clip already spans the
/// sequence).
inline std::vector<std::vector<std::size_t>> clip_indices(std::size_t sequence_len, std::size_t T, ClipMode mode) {
    if (T == 0 || T > sequence_len)
        throw ContractError("sample_clip: cannot take " + std::to_string(T) + " frames from " +
                            std::to_string(sequence_len));
    std::vector<std::size_t> a(T);
    for (std::size_t k = 0; k < T; ++k) a[k] = k * sequence_len / T;
    if (mode == ClipMode::Uniform1) return {a};
    const std::size_t offset = sequence_len / (2 * T);
    std::vector<std::size_t> b(T);
    for (std::size_t k = 0; k < T; ++k) b[k] = std::min(a[k] + offset, sequence_len - 1);
    return {a, b};
}

/// Gathers the given frame indices from a [T,...] tensor.
inline Tensor select_frames(const Tensor& t, const std::vector<std::size_t>& indices) {
    const std::size_t block = t.numel() / t.extent(0);
    Shape os = t.shape();
    os[0] = indices.size();
    Tensor out(os);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= t.extent(0)) throw ContractError("select_frames: index out of range");
        for (std::size_t i = 0; i < block; ++i) out[k * block + i] = t[indices[k] * block + i];
    }
    return out;
}

} // namespace s2d
