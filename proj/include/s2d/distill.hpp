#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <optional>
#include <vector>

#include "s2d/ops.hpp"
#include "s2d/tensor.hpp"

namespace s2d {

/// Per-class FIFO pair of reference samples: feature vectors v and their
/// softmax probabilities p, capacity S each, paired by insertion. Entries are
/// plain value tensors, so nothing stored here ever links back into a
/// computation graph (stop-gradient by construction).
class AnchorQueues {
public:
    struct Entry {
        Tensor feature;
        Tensor probs;
    };

    AnchorQueues() = default;
    AnchorQueues(std::size_t classes, std::size_t capacity) : capacity_(capacity), queues_(classes) {}

    std::size_t classes() const { return queues_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::deque<Entry>& queue(std::size_t c) const { return queues_.at(c); }

    bool warm() const {
        for (const auto& q : queues_)
            if (q.empty()) return false;
        return !queues_.empty();
    }

    /// FIFO append of detached copies; oldest entries leave first.
    void enqueue(const Tensor& feature, const Tensor& probs, std::size_t label) {
        if (label >= queues_.size())
            throw ContractError("enqueue: label " + std::to_string(label) + " out of range " +
                                std::to_string(queues_.size()));
        const double norm1 = std::accumulate(probs.data(), probs.data() + probs.numel(), 0.0);
        if (std::fabs(norm1 - 1.0) > 1e-6)
            throw ContractError("enqueue: probabilities must sum to 1, got " + std::to_string(norm1));
        auto& q = queues_[label];
        q.push_back(Entry{feature, probs});
        if (q.size() > capacity_) q.pop_front();
    }

    void clear() {
        for (auto& q : queues_) q.clear();
    }

private:
    std::size_t capacity_ = 0;
    std::vector<std::deque<Entry>> queues_;
};

/// Cosine similarity; rejects zero-norm vectors instead of fudging an epsilon.
inline double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel())
        throw ShapeError("cosine_similarity: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Per-class cosine scores of `v` against every anchor, in queue order.
inline std::vector<std::vector<double>> similarity_scores(const Tensor& v, const AnchorQueues& queues) {
    std::vector<std::vector<double>> scores(queues.classes());
    for (std::size_t c = 0; c < queues.classes(); ++c) {
        scores[c].reserve(queues.queue(c).size());
        for (const auto& e : queues.queue(c)) scores[c].push_back(cosine_similarity(v, e.feature));
    }
    return scores;
}

struct TopKSelection {
    std::vector<double> sigma;          // selected scores, classes-major, descending per class
    std::vector<const Tensor*> probs;   // paired anchor probability vectors
};

/// Takes the K best-scoring anchors per class (all of them when a queue holds
/// fewer than K); ties break toward the older queue entry.
inline TopKSelection top_k_scores(const std::vector<std::vector<double>>& scores, const AnchorQueues& queues,
                                  std::size_t k) {
    if (k == 0) throw ContractError("top_k_scores: K must be at least 1");
    bool any = false;
    for (std::size_t c = 0; c < queues.classes(); ++c) any = any || !queues.queue(c).empty();
    if (!any) throw ContractError("top_k_scores: all anchor queues are empty");
    TopKSelection sel;
    for (std::size_t c = 0; c < queues.classes(); ++c) {
        const auto& qs = scores.at(c);
        std::vector<std::size_t> idx(qs.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return qs[a] > qs[b]; });
        const std::size_t take = std::min(k, idx.size());
        for (std::size_t i = 0; i < take; ++i) {
            sel.sigma.push_back(qs[idx[i]]);
            sel.probs.push_back(&queues.queue(c)[idx[i]].probs);
        }
    }
    return sel;
}

/// Convex combination of the selected anchor probabilities weighted by their
/// scores, normalized by the score sum. Cosine scores can be negative, which
/// would make the combination a non-probability; negative scores are floored
/// at zero, and when nothing positive remains the label falls back to
/// uniform. With all-positive scores this is the plain weighted mean.
inline Tensor soft_label(const TopKSelection& sel, std::size_t classes) {
    Tensor y({classes});
    double sum = 0.0;
    for (double s : sel.sigma) sum += std::max(s, 0.0);
    if (sum <= 0.0) {
        y.fill(1.0 / static_cast<double>(classes));
        return y;
    }
    for (std::size_t i = 0; i < sel.sigma.size(); ++i) {
        const double w = std::max(sel.sigma[i], 0.0);
        if (w == 0.0) continue;
        const Tensor& p = *sel.probs[i];
        for (std::size_t c = 0; c < classes; ++c) y[c] += w * p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) y[c] /= sum;
    return y;
}

/// Synthesizes the soft label for one feature vector, or nothing while any
/// class queue is still empty (cold start).
inline std::optional<Tensor> synthesize_soft_label(const Tensor& v, const AnchorQueues& queues, std::size_t k) {
    if (!queues.warm()) return std::nullopt;
    return soft_label(top_k_scores(similarity_scores(v, queues), queues, k), queues.classes());
}

struct LossTerms {
    Var total;
    double ce = 0.0;
    double bce = 0.0;
};

/// L = CE(softmax(logits), Y) + eta * BCE(softmax(logits), Y_soft).
/// The BCE term is skipped outright when eta == 0 or no soft label is
/// available, which keeps the graph (and so the training trajectory)
/// bit-identical to a run without the distillation loss.
inline LossTerms total_loss(Var logits, std::size_t hard_label, const std::optional<Tensor>& y_soft, double eta,
                            double label_smoothing = 0.0) {
    if (eta < 0.0) throw ContractError("total_loss: eta must be non-negative");
    const std::size_t classes = logits.value().numel();
    Tensor target = one_hot(hard_label, classes);
    if (label_smoothing > 0.0) {
        for (std::size_t c = 0; c < classes; ++c)
            target[c] = target[c] * (1.0 - label_smoothing) + label_smoothing / static_cast<double>(classes);
    }
    LossTerms out;
    Var ce = cross_entropy(logits, target);
    out.ce = ce.value().item();
    if (eta > 0.0 && y_soft.has_value()) {
        Var bce = soft_bce(logits, *y_soft);
        out.bce = bce.value().item();
        out.total = add(ce, cmul(bce, eta));
    } else {
        out.total = ce;
    }
    return out;
}

/// Linear ramp 0 -> 1 across epochs; exact at both endpoints.
inline double eta_schedule(std::size_t epoch, std::size_t total_epochs) {
    if (total_epochs == 0 || epoch >= total_epochs)
        throw ContractError("eta_schedule: epoch " + std::to_string(epoch) + " out of " + std::to_string(total_epochs));
    if (total_epochs == 1) return 0.0;
    return static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
}

} // namespace s2d
