#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "s2d/train.hpp"

namespace s2d {

enum class AblationAxis { Adapter, Fusion, Sdl, Oversample };

inline AblationAxis axis_from_string(const std::string& s) {
    if (s == "adapter") return AblationAxis::Adapter;
    if (s == "fusion") return AblationAxis::Fusion;
    if (s == "sdl") return AblationAxis::Sdl;
    if (s == "oversample") return AblationAxis::Oversample;
    throw ConfigError("unknown ablation axis: " + s);
}

inline std::vector<std::string> default_cells(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Adapter: return {"none", "vanilla", "temporal", "temporal_modeling"};
        case AblationAxis::Fusion: return {"none", "prompt", "concat"};
        case AblationAxis::Sdl: return {"one_hot", "label_smoothing", "sdl"};
        case AblationAxis::Oversample: return {"on", "off"};
    }
    return {};
}

/// Applies exactly one toggle to the base config.
inline RunConfig derive_cell_config(const RunConfig& base, AblationAxis axis, const std::string& cell) {
    RunConfig rc = base;
    switch (axis) {
        case AblationAxis::Adapter:
            rc.model.adapter = adapter_from_string(cell);
            break;
        case AblationAxis::Fusion:
            rc.model.fusion = fusion_from_string(cell);
            break;
        case AblationAxis::Sdl:
            if (cell == "one_hot") {
                rc.sdl_enabled = false;
                rc.label_smoothing = 0.0;
            } else if (cell == "label_smoothing") {
                rc.sdl_enabled = false;
                rc.label_smoothing = 0.1;
            } else if (cell == "sdl") {
                rc.sdl_enabled = true;
                rc.label_smoothing = 0.0;
            } else {
                throw ConfigError("unknown sdl cell: " + cell);
            }
            break;
        case AblationAxis::Oversample:
            if (cell == "on")
                rc.oversample = true;
            else if (cell == "off")
                rc.oversample = false;
            else
                throw ConfigError("unknown oversample cell: " + cell);
            break;
    }
    return rc;
}

namespace ablate_detail {
inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    } else {
        out[prefix] = j.dump();
    }
}
} // namespace ablate_detail

/// Flattened key-level diff between two config JSONs.
inline std::vector<std::string> config_diff_keys(const nlohmann::json& a, const nlohmann::json& b) {
    std::map<std::string, std::string> fa, fb;
    ablate_detail::flatten(a, "", fa);
    ablate_detail::flatten(b, "", fb);
    std::vector<std::string> diff;
    for (const auto& [k, v] : fa) {
        auto it = fb.find(k);
        if (it == fb.end() || it->second != v) diff.push_back(k);
    }
    for (const auto& [k, v] : fb)
        if (!fa.count(k)) diff.push_back(k);
    return diff;
}

struct AblationRow {
    std::string cell;
    std::uint64_t seed = 0;
    double war = 0.0;
    double uar = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::map<std::string, double> mean_war;
    std::map<std::string, double> mean_uar;
    nlohmann::json audit; // per-cell flattened config diff vs the base
};

/// Trains every (cell, seed) pair with an identical budget and reports
/// two-clip test WAR/UAR. Each seed regenerates its own train/test split;
/// `init_from` (typically an image-model checkpoint) is shared by all cells.
inline AblationResult run_ablation(const RunConfig& base, AblationAxis axis, const std::vector<std::string>& cells,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ParameterStore* init_from = nullptr, std::ostream* log = nullptr) {
    AblationResult result;
    const nlohmann::json base_json = to_json(base);
    for (const auto& cell : cells) {
        RunConfig rc = derive_cell_config(base, axis, cell);
        result.audit[cell] = config_diff_keys(base_json, to_json(rc));
        double war_acc = 0.0, uar_acc = 0.0;
        for (std::uint64_t seed : seeds) {
            rc.seed = seed;
            rc.validate();
            DatasetBundle data = generate_dataset(rc.data, seed);
            const auto train_set = to_video_dataset(data.train, rc.data);
            const auto test_set = to_video_dataset(data.test, rc.data);
            TrainOptions opts;
            opts.init_from = init_from;
            TrainResult tr = train(rc, train_set, opts);
            EvalResult ev = evaluate(tr.state.params, rc.model, test_set, rc.eval_frames, ClipMode::Uniform2);
            AblationRow row{cell, seed, ev.metrics.war, ev.metrics.uar};
            result.rows.push_back(row);
            war_acc += row.war;
            uar_acc += row.uar;
            if (log)
                (*log) << "[ablate] cell=" << cell << " seed=" << seed << " WAR=" << row.war << " UAR=" << row.uar
                       << std::endl;
        }
        result.mean_war[cell] = war_acc / static_cast<double>(seeds.size());
        result.mean_uar[cell] = uar_acc / static_cast<double>(seeds.size());
    }
    return result;
}

inline void write_ablation_csv(const std::string& path, const AblationResult& res) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "cell,seed,war,uar\n";
    os.precision(17);
    for (const auto& r : res.rows) os << r.cell << ',' << r.seed << ',' << r.war << ',' << r.uar << '\n';
    for (const auto& [cell, war] : res.mean_war)
        os << cell << ",mean," << war << ',' << res.mean_uar.at(cell) << '\n';
}

} // namespace s2d
