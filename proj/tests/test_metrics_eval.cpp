#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s2d/eval.hpp"
#include "s2d/rng.hpp"

using namespace s2d;

TEST_CASE("compute_metrics hand examples") {
    SECTION("diagonal matrix is perfect") {
        ConfusionMatrix cm(3);
        cm.record(0, 0);
        cm.record(1, 1);
        cm.record(1, 1);
        cm.record(2, 2);
        MetricsReport m = compute_metrics(cm);
        CHECK(m.war == 1.0);
        CHECK(m.uar == 1.0);
    }
    SECTION("[[3,1],[0,1]] gives WAR 0.8, UAR 0.875") {
        ConfusionMatrix cm(2);
        for (int i = 0; i < 3; ++i) cm.record(0, 0);
        cm.record(0, 1);
        cm.record(1, 1);
        MetricsReport m = compute_metrics(cm);
        CHECK(m.war == 0.8);
        CHECK(m.uar == 0.875);
    }
    SECTION("class sizes 4 and 1 with 3 and 0 correct: WAR 0.6, UAR 0.375") {
        ConfusionMatrix cm(2);
        for (int i = 0; i < 3; ++i) cm.record(0, 0);
        cm.record(0, 1);
        cm.record(1, 0);
        MetricsReport m = compute_metrics(cm);
        CHECK(m.war == 0.6);
        CHECK(m.uar == 0.375);
    }
    SECTION("empty class excluded from UAR and recorded") {
        ConfusionMatrix cm(3);
        cm.record(0, 0);
        cm.record(1, 0);
        MetricsReport m = compute_metrics(cm);
        REQUIRE(m.empty_classes.size() == 1);
        CHECK(m.empty_classes[0] == 2);
        CHECK(m.per_class_recall[2] == -1.0);
        CHECK(m.uar == 0.5);
    }
    SECTION("empty matrix rejected") {
        ConfusionMatrix cm(2);
        CHECK_THROWS_AS(compute_metrics(cm), ContractError);
    }
}

TEST_CASE("metrics match a brute-force per-sample oracle on 1000 random trials") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.index(6);
        const std::size_t n = 1 + rng.index(60);
        std::vector<std::size_t> truth(n), pred(n);
        ConfusionMatrix cm(classes);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = rng.index(classes);
            pred[i] = rng.index(classes);
            cm.record(truth[i], pred[i]);
        }
        MetricsReport m = compute_metrics(cm);

        // independent oracle straight from the label/prediction lists
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) hits += truth[i] == pred[i];
        const double war = static_cast<double>(hits) / static_cast<double>(n);
        double recall_sum = 0.0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            std::size_t tot = 0, hit = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (truth[i] == c) {
                    ++tot;
                    hit += pred[i] == c;
                }
            if (tot == 0) continue;
            recall_sum += static_cast<double>(hit) / static_cast<double>(tot);
            ++present;
        }
        const double uar = recall_sum / static_cast<double>(present);
        REQUIRE(m.war == war);
        REQUIRE(m.uar == uar);
    }
}

TEST_CASE("argmax ties break toward the lower class index") {
    const double flat[3] = {0.5, 0.5, 0.5};
    CHECK(argmax_class(flat, 3) == 0);
    const double pair[4] = {0.1, 0.7, 0.7, 0.2};
    CHECK(argmax_class(pair, 4) == 1);
}

TEST_CASE("averaging logits differs from averaging probabilities") {
    // two 3-class clip outputs where the two rules disagree
    const double z1[3] = {10.0, 0.0, 0.0};
    const double z2[3] = {-10.0, 1.0, 0.0};
    double mean_logits[3], mean_probs[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c) mean_logits[c] = 0.5 * (z1[c] + z2[c]);
    for (const double* z : {z1, z2}) {
        double den = 0.0, e[3];
        const double mx = std::max({z[0], z[1], z[2]});
        for (int c = 0; c < 3; ++c) {
            e[c] = std::exp(z[c] - mx);
            den += e[c];
        }
        for (int c = 0; c < 3; ++c) mean_probs[c] += 0.5 * e[c] / den;
    }
    CHECK(argmax_class(mean_logits, 3) == 1);
    CHECK(argmax_class(mean_probs, 3) == 0); // probability averaging would flip the call
}

namespace {

ModelConfig eval_model_config() {
    ModelConfig cfg;
    cfg.backbone.image = 8;
    cfg.backbone.patch = 4;
    cfg.backbone.channels = 3;
    cfg.backbone.embed = 8;
    cfg.backbone.layers = 1;
    cfg.backbone.heads = 2;
    cfg.backbone.mlp_ratio = 2;
    cfg.classes = 6;
    cfg.prompt_dim = 1;
    cfg.tmsa_heads = 2;
    cfg.lmk_size = 4;
    cfg.lmk_patch = 2;
    cfg.lmk_channels = 6;
    return cfg;
}

std::vector<VideoSample> eval_dataset(std::size_t n) {
    DatasetSpec spec;
    spec.image = 8;
    spec.frames = 8;
    spec.lmk_size = 4;
    spec.margin = 2.0;
    spec.drift = 0.8;
    spec.blob_sigma = 1.0;
    std::vector<SyntheticSample> raw;
    for (std::size_t i = 0; i < n; ++i) raw.push_back(make_sample(spec, 5, i));
    return to_video_dataset(raw, spec);
}

} // namespace

TEST_CASE("evaluate") {
    ModelConfig cfg = eval_model_config();
    ParameterStore ps = build_parameters(cfg, 123);
    auto dataset = eval_dataset(12);

    SECTION("two-clip evaluation averages logits (oracle comparison)") {
        EvalResult ev = evaluate(ps, cfg, dataset, 4, ClipMode::Uniform2);
        ConfusionMatrix oracle(cfg.classes);
        for (const auto& s : dataset) {
            auto clips = clip_indices(s.frames.extent(0), 4, ClipMode::Uniform2);
            Tensor acc({cfg.classes});
            for (const auto& idx : clips) {
                ClipOutput out = forward_clip(ps, cfg, select_frames(s.frames, idx), select_frames(s.lmk, idx),
                                              Mode::Dfer);
                for (std::size_t c = 0; c < cfg.classes; ++c) acc[c] += out.logits[c];
            }
            for (std::size_t c = 0; c < cfg.classes; ++c) acc[c] /= 2.0;
            oracle.record(s.label, argmax_class(acc.data(), cfg.classes));
        }
        for (std::size_t t = 0; t < cfg.classes; ++t)
            for (std::size_t p = 0; p < cfg.classes; ++p) REQUIRE(ev.cm.at(t, p) == oracle.at(t, p));
    }
    SECTION("identical clips make two-clip mode equal one-clip mode") {
        // static first frames: build a dataset of repeated frames
        std::vector<VideoSample> frozen = dataset;
        for (auto& s : frozen) {
            const std::size_t fn = s.frames.numel() / s.frames.extent(0);
            const std::size_t ln = s.lmk.numel() / s.lmk.extent(0);
            for (std::size_t t = 1; t < s.frames.extent(0); ++t) {
                for (std::size_t i = 0; i < fn; ++i) s.frames[t * fn + i] = s.frames[i];
                for (std::size_t i = 0; i < ln; ++i) s.lmk[t * ln + i] = s.lmk[i];
            }
        }
        EvalResult one = evaluate(ps, cfg, frozen, 4, ClipMode::Uniform1);
        EvalResult two = evaluate(ps, cfg, frozen, 4, ClipMode::Uniform2);
        for (std::size_t t = 0; t < cfg.classes; ++t)
            for (std::size_t p = 0; p < cfg.classes; ++p) CHECK(one.cm.at(t, p) == two.cm.at(t, p));
    }
    SECTION("evaluation is deterministic") {
        EvalResult a = evaluate(ps, cfg, dataset, 4, ClipMode::Uniform2);
        EvalResult b = evaluate(ps, cfg, dataset, 4, ClipMode::Uniform2);
        CHECK(a.metrics.war == b.metrics.war);
        CHECK(a.metrics.uar == b.metrics.uar);
    }
}

TEST_CASE("feature and attention dumps") {
    ModelConfig cfg = eval_model_config();
    ParameterStore ps = build_parameters(cfg, 321);
    auto dataset = eval_dataset(6);
    const std::string fpath = "/tmp/s2d_test_features.s2dt";
    const std::string apath = "/tmp/s2d_test_attention.s2dt";
    dump_features_attention(ps, cfg, dataset, 4, fpath, apath);
    Tensor features = read_tensor_file(fpath);
    Tensor attention = read_tensor_file(apath);
    const std::size_t S = cfg.backbone.tokens() + 1;
    CHECK(features.shape() == Shape{6, cfg.backbone.embed});
    CHECK(attention.shape() == Shape{6, cfg.backbone.heads, S, S});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t h = 0; h < cfg.backbone.heads; ++h)
            for (std::size_t a = 0; a < S; ++a) {
                double sum = 0.0;
                for (std::size_t b = 0; b < S; ++b) sum += attention[((i * cfg.backbone.heads + h) * S + a) * S + b];
                CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
            }
    // deterministic across runs
    dump_features_attention(ps, cfg, dataset, 4, fpath + "2", apath + "2");
    CHECK(read_tensor_file(fpath + "2").bit_equal(features));
    CHECK(read_tensor_file(apath + "2").bit_equal(attention));
}
