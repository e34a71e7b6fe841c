#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s2d/checkpoint.hpp"
#include "s2d/config.hpp"
#include "s2d/distill.hpp"
#include "s2d/eval.hpp"
#include "s2d/gradcheck.hpp"
#include "s2d/optim.hpp"

namespace s2d {

struct TrainStepRow {
    std::size_t epoch = 0;
    std::size_t step = 0; // global step
    double loss_ce = 0.0;
    double loss_bce = 0.0;
    double eta = 0.0;
    double lr = 0.0;
    double war = -1.0; // filled on the last step of each epoch (train-set)
    double uar = -1.0;
};

struct TrainOptions {
    const Checkpoint* resume = nullptr;          // continue a saved run
    const ParameterStore* init_from = nullptr;   // copy matching weights before training
    std::optional<std::size_t> stop_after_global_step; // save state and stop mid-run
};

struct TrainResult {
    std::vector<TrainStepRow> curve;
    Checkpoint state; // parameters, optimizer, queues, position
    bool finished = true;
};

inline void write_curve_csv(const std::string& path, const std::vector<TrainStepRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "epoch,step,loss_ce,loss_bce,eta,lr,war,uar\n";
    os.precision(17);
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.step << ',' << r.loss_ce << ',' << r.loss_bce << ',' << r.eta << ',' << r.lr << ',';
        if (r.war >= 0.0) os << r.war;
        os << ',';
        if (r.uar >= 0.0) os << r.uar;
        os << '\n';
    }
}

/// Deterministic epoch driver. One optimizer step per mini-batch of clips;
/// gradients are averaged by scaling each sample's loss by 1/batch. Anchor
/// queues are updated after the optimizer step from the batch's detached
/// features and probabilities. Per-epoch sample order comes from a stateless
/// seed mix, so a resumed run replays the exact order.
inline TrainResult train(const RunConfig& run, const std::vector<VideoSample>& train_set,
                         const TrainOptions& opts = {}) {
    run.validate();
    if (train_set.empty()) throw ConfigError("train: empty dataset");

    TrainResult result;
    Checkpoint& st = result.state;
    st.config_json = to_json(run).dump();

    if (opts.resume) {
        if (opts.resume->config_json != st.config_json)
            throw ConfigError("resume: checkpoint was written by a different config");
        st.params = opts.resume->params;
        st.optim = opts.resume->optim;
        st.queues = opts.resume->queues;
        st.epoch = opts.resume->epoch;
        st.step_in_epoch = opts.resume->step_in_epoch;
        st.global_step = opts.resume->global_step;
    } else {
        st.params = build_parameters(run.model, run.seed);
        if (opts.init_from) load_matching_params(st.params, *opts.init_from);
        if (run.mode == Mode::Dfer) freeze_for_adaptation(st.params);
        st.queues = AnchorQueues(run.model.classes, run.queue_size);
    }

    std::vector<std::size_t> labels(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) labels[i] = train_set[i].label;

    const std::size_t steps_per_epoch = (train_set.size() + run.batch_size - 1) / run.batch_size;
    const std::size_t total_steps = steps_per_epoch * run.epochs;
    const double lr0 = run.lr();
    AdamWConfig ocfg;
    ocfg.beta1 = run.beta1;
    ocfg.beta2 = run.beta2;
    ocfg.weight_decay = run.weight_decay;

    struct PendingAnchor {
        Tensor feature, probs;
        std::size_t label;
    };

    for (std::size_t epoch = st.epoch; epoch < run.epochs; ++epoch) {
        const double eta = run.sdl_enabled ? eta_schedule(epoch, run.epochs) : 0.0;
        const std::uint64_t order_seed = Rng::mix(run.seed, 0xE60C + epoch);
        const std::vector<std::size_t> order = run.oversample
                                                   ? oversample_indices(labels, run.model.classes, order_seed)
                                                   : shuffled_indices(train_set.size(), order_seed);
        ConfusionMatrix epoch_cm(run.model.classes);
        bool epoch_cm_complete = st.step_in_epoch == 0;

        for (std::size_t step = st.step_in_epoch; step < steps_per_epoch; ++step) {
            const std::size_t lo = step * run.batch_size;
            const std::size_t hi = std::min(lo + run.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(hi - lo);

            st.params.zero_grads();
            double ce_sum = 0.0, bce_sum = 0.0;
            std::vector<PendingAnchor> pending;
            for (std::size_t bi = lo; bi < hi; ++bi) {
                const VideoSample& s = train_set[order[bi]];
                const auto idx = clip_indices(s.frames.extent(0), run.train_frames, ClipMode::Uniform1)[0];
                Graph g;
                BoundParams bp(g, st.params, true);
                ModelOutput out = forward_video(g, bp, select_frames(s.frames, idx), select_frames(s.lmk, idx),
                                                run.mode, run.model);

                std::optional<Tensor> soft;
                if (run.sdl_enabled && eta > 0.0)
                    soft = synthesize_soft_label(out.video_feature.value(), st.queues, run.top_k);
                LossTerms lt = total_loss(out.video_logits, s.label, soft, eta, run.label_smoothing);
                ce_sum += lt.ce;
                bce_sum += lt.bce;
                g.backward(cmul(lt.total, inv_batch));
                bp.accumulate_grads(st.params);

                if (run.sdl_enabled)
                    pending.push_back(PendingAnchor{out.video_feature.value(),
                                                    softmax_values(out.video_logits.value(), 0), s.label});
                epoch_cm.record(s.label, argmax_class(out.video_logits.value().data(), run.model.classes));
            }

            const double lr_t = cosine_lr(st.global_step, total_steps, lr0);
            adamw_step(st.params, st.optim, lr_t, ocfg);
            for (const auto& a : pending) st.queues.enqueue(a.feature, a.probs, a.label);

            TrainStepRow row;
            row.epoch = epoch;
            row.step = st.global_step;
            row.loss_ce = ce_sum * inv_batch;
            row.loss_bce = bce_sum * inv_batch;
            row.eta = eta;
            row.lr = lr_t;
            if (step + 1 == steps_per_epoch && epoch_cm_complete) {
                MetricsReport m = compute_metrics(epoch_cm);
                row.war = m.war;
                row.uar = m.uar;
            }
            result.curve.push_back(row);

            ++st.global_step;
            if (opts.stop_after_global_step && st.global_step >= *opts.stop_after_global_step) {
                st.epoch = epoch;
                st.step_in_epoch = step + 1;
                if (st.step_in_epoch == steps_per_epoch) {
                    st.epoch = epoch + 1;
                    st.step_in_epoch = 0;
                }
                result.finished = false;
                return result;
            }
        }
        st.step_in_epoch = 0;
        st.epoch = epoch + 1;
    }
    return result;
}

} // namespace s2d
