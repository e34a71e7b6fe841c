#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2d/params.hpp"

namespace s2d {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool skipped_frozen = false;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = true;
    double seconds = 0.0;
};

/// Builds a scalar loss over a graph whose parameter leaves come from the
/// given store. The checker calls it twice per perturbed scalar (value only)
/// and once at the base point for the analytic gradients.
using LossBuilder = std::function<Var(Graph&, const BoundParams&)>;

/// Central-difference comparison of analytic gradients for every tunable
/// parameter in `params`. Frozen parameters are reported as skipped. The
/// finite-difference side never touches the tape's backward machinery, so the
/// two routes stay independent.
inline GradCheckReport finite_diff_check(const LossBuilder& build, ParameterStore& params,
                                         double h = 1e-5, double tol = 1e-4) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport report;

    // analytic gradients at the base point
    Graph g;
    BoundParams bound(g, params, /*with_grads=*/true);
    Var loss = build(g, bound);
    g.backward(loss);
    params.zero_grads();
    bound.accumulate_grads(params);

    auto eval = [&](ParameterStore& ps) {
        Graph gg;
        BoundParams b(gg, ps, /*with_grads=*/false);
        return build(gg, b).value().item();
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params.at(pi);
        GradCheckEntry e;
        e.name = p.name;
        if (!p.tunable) {
            e.skipped_frozen = true;
            report.entries.push_back(e);
            continue;
        }
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + h;
            const double fp = eval(params);
            p.value[i] = saved - h;
            const double fm = eval(params);
            p.value[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = p.grad[i];
            // The 1e-5 floor turns the comparison into an absolute tolerance of
            // tol*1e-5 for mathematically-zero gradients (e.g. attention key
            // biases, which cancel in softmax); central-difference noise sits
            // two orders below that.
            const double denom = std::max({1e-5, std::fabs(fd), std::fabs(an)});
            const double rel = std::fabs(fd - an) / denom;
            e.max_rel_err = std::max(e.max_rel_err, rel);
            ++e.checked;
        }
        e.pass = e.max_rel_err <= tol;
        report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
        report.pass = report.pass && e.pass;
        report.entries.push_back(e);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace s2d
