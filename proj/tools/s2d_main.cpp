// s2d command line: synthetic data generation, training, evaluation,
// gradient checking, ablation grids and feature/attention dumps. One JSON
// config file drives everything; a few flags override the common fields.
// Exit code 0 means every asserted invariant held.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2d/harness.hpp"
#include "s2d/s2d.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

s2d::RunConfig load_config(const std::string& path) {
    if (path.empty()) return s2d::RunConfig{};
    std::ifstream is(path);
    if (!is) throw s2d::ConfigError("cannot open config: " + path);
    json j = json::parse(is, nullptr, true, true); // allow comments
    return s2d::run_config_from_json(j);
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw s2d::FormatError("cannot open for writing: " + path);
    os << j.dump(2) << '\n';
}

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::string> mode;

    s2d::RunConfig resolve() const {
        s2d::RunConfig rc = load_config(config);
        if (seed) rc.seed = *seed;
        if (epochs) rc.epochs = *epochs;
        if (mode) rc.mode = s2d::mode_from_string(*mode);
        return rc;
    }
};

void add_common(CLI::App* cmd, CommonFlags& cf) {
    cmd->add_option("--config", cf.config, "JSON run configuration");
    cmd->add_option("--seed", cf.seed, "override optim.seed");
    cmd->add_option("--epochs", cf.epochs, "override optim.epochs");
    cmd->add_option("--mode", cf.mode, "override mode (sfer|dfer)");
}

std::vector<s2d::VideoSample> dataset_for(const s2d::RunConfig& rc, const std::string& data_dir,
                                          const std::string& split) {
    if (!data_dir.empty()) {
        const std::string manifest = (fs::path(data_dir) / (split + "_manifest.jsonl")).string();
        return s2d::load_video_dataset(manifest);
    }
    if (rc.mode == s2d::Mode::Sfer) {
        const std::size_t count = split == "train" ? rc.data.train_samples : rc.data.test_samples;
        const auto samples = s2d::generate_sfer_split(rc.data, rc.seed, count, split == "train" ? 11 : 12);
        s2d::DatasetSpec spec = rc.data;
        spec.frames = 1;
        return s2d::to_video_dataset(samples, spec);
    }
    s2d::DatasetBundle data = s2d::generate_dataset(rc.data, rc.seed);
    return s2d::to_video_dataset(split == "train" ? data.train : data.test, rc.data);
}

json metrics_to_json(const s2d::MetricsReport& m) {
    json j;
    j["war"] = m.war;
    j["uar"] = m.uar;
    j["per_class_recall"] = m.per_class_recall;
    j["empty_classes"] = m.empty_classes;
    return j;
}

int cmd_gen_data(const CommonFlags& cf, const std::string& out_dir, bool sfer, bool occlusion) {
    s2d::RunConfig rc = cf.resolve();
    if (occlusion) rc.data.occlusion = true;
    rc.data.validate();
    fs::create_directories(out_dir);
    if (sfer) {
        s2d::DatasetSpec spec = rc.data;
        spec.frames = 1;
        const auto train = s2d::to_video_dataset(s2d::generate_sfer_split(rc.data, rc.seed, rc.data.train_samples, 11), spec);
        const auto test = s2d::to_video_dataset(s2d::generate_sfer_split(rc.data, rc.seed, rc.data.test_samples, 12), spec);
        s2d::save_video_dataset(out_dir, "train", train);
        s2d::save_video_dataset(out_dir, "test", test);
    } else {
        s2d::DatasetBundle data = s2d::generate_dataset(rc.data, rc.seed);
        s2d::save_video_dataset(out_dir, "train", s2d::to_video_dataset(data.train, rc.data));
        s2d::save_video_dataset(out_dir, "test", s2d::to_video_dataset(data.test, rc.data));
    }
    write_json((fs::path(out_dir) / "spec.json").string(), s2d::to_json(rc));
    std::cout << "wrote dataset to " << out_dir << std::endl;
    return 0;
}

int cmd_train(const CommonFlags& cf, const std::string& out_dir, const std::string& data_dir,
              const std::string& init_from, const std::string& resume, std::optional<std::size_t> stop_after) {
    s2d::RunConfig rc = cf.resolve();
    rc.validate();
    fs::create_directories(out_dir);
    const auto train_set = dataset_for(rc, data_dir, "train");

    s2d::TrainOptions opts;
    s2d::Checkpoint resume_ck;
    s2d::ParameterStore init_params;
    if (!resume.empty()) {
        resume_ck = s2d::load_checkpoint(resume);
        opts.resume = &resume_ck;
    }
    if (!init_from.empty()) {
        s2d::Checkpoint ck = s2d::load_checkpoint(init_from);
        init_params = std::move(ck.params);
        opts.init_from = &init_params;
    }
    opts.stop_after_global_step = stop_after;

    s2d::TrainResult tr = s2d::train(rc, train_set, opts);
    s2d::write_curve_csv((fs::path(out_dir) / "curve.csv").string(), tr.curve);
    s2d::save_checkpoint((fs::path(out_dir) / "checkpoint.s2dc").string(), tr.state);

    json rep;
    rep["finished"] = tr.finished;
    rep["global_step"] = tr.state.global_step;
    rep["tunable_params"] = s2d::count_parameters(tr.state.params, s2d::ParamFilter::Tunable);
    rep["total_params"] = s2d::count_parameters(tr.state.params, s2d::ParamFilter::All);
    if (!tr.curve.empty()) {
        rep["final_loss_ce"] = tr.curve.back().loss_ce;
        rep["final_loss_bce"] = tr.curve.back().loss_bce;
    }
    if (tr.finished) {
        const auto test_set = dataset_for(rc, data_dir, "test");
        s2d::EvalResult ev = s2d::evaluate(tr.state.params, rc.model, test_set, rc.eval_frames,
                                           s2d::ClipMode::Uniform2, rc.mode);
        rep["test"] = metrics_to_json(ev.metrics);
        std::cout << "test WAR=" << ev.metrics.war << " UAR=" << ev.metrics.uar << std::endl;
    }
    write_json((fs::path(out_dir) / "report.json").string(), rep);
    std::cout << "wrote " << out_dir << "/curve.csv, checkpoint.s2dc, report.json" << std::endl;
    return 0;
}

int cmd_eval(const CommonFlags& cf, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir, int clips) {
    s2d::RunConfig rc = cf.resolve();
    rc.validate();
    s2d::Checkpoint ck = s2d::load_checkpoint(checkpoint);
    const auto test_set = dataset_for(rc, data_dir, "test");
    const auto mode = clips == 2 ? s2d::ClipMode::Uniform2 : s2d::ClipMode::Uniform1;
    s2d::EvalResult ev = s2d::evaluate(ck.params, rc.model, test_set, rc.eval_frames, mode, rc.mode);

    fs::create_directories(out_dir);
    write_json((fs::path(out_dir) / "report.json").string(), metrics_to_json(ev.metrics));
    std::ofstream cm((fs::path(out_dir) / "confusion.csv").string());
    for (std::size_t t = 0; t < ev.cm.classes(); ++t) {
        for (std::size_t p = 0; p < ev.cm.classes(); ++p) cm << (p ? "," : "") << ev.cm.at(t, p);
        cm << '\n';
    }
    std::cout << "WAR=" << ev.metrics.war << " UAR=" << ev.metrics.uar << std::endl;
    return 0;
}

int cmd_gradcheck(const std::string& out_path, double h, double tol) {
    s2d::RunConfig rc = s2d::gradcheck_config();
    s2d::FullLossGradCheck res = s2d::gradcheck_full_loss(rc, h, tol);
    for (const auto& e : res.report.entries) {
        if (e.skipped_frozen)
            std::cout << "  [skip] " << e.name << " (frozen)\n";
        else
            std::cout << "  [" << (e.pass ? "ok" : "FAIL") << "]   " << e.name << " rel_err=" << e.max_rel_err
                      << " (" << e.checked << " scalars)\n";
    }
    std::cout << "gradcheck: max_rel_err=" << res.report.max_rel_err << " tunable_scalars=" << res.tunable_params
              << " runtime=" << res.report.seconds << "s -> " << (res.report.pass ? "PASS" : "FAIL") << std::endl;
    if (!out_path.empty()) {
        json j;
        j["pass"] = res.report.pass;
        j["max_rel_err"] = res.report.max_rel_err;
        j["seconds"] = res.report.seconds;
        j["tunable_scalars"] = res.tunable_params;
        j["frozen_scalars"] = res.frozen_params;
        json entries = json::array();
        for (const auto& e : res.report.entries) {
            json je;
            je["name"] = e.name;
            je["max_rel_err"] = e.max_rel_err;
            je["checked"] = e.checked;
            je["skipped_frozen"] = e.skipped_frozen;
            entries.push_back(je);
        }
        j["entries"] = entries;
        write_json(out_path, j);
    }
    return res.report.pass ? 0 : 1;
}

int cmd_ablate(const CommonFlags& cf, const std::string& axis_name, std::string cells_csv, std::size_t n_seeds,
               const std::string& init_from, const std::string& out_dir) {
    s2d::RunConfig rc = cf.resolve();
    const s2d::AblationAxis axis = s2d::axis_from_string(axis_name);
    std::vector<std::string> cells;
    if (cells_csv.empty()) {
        cells = s2d::default_cells(axis);
    } else {
        std::stringstream ss(cells_csv);
        std::string item;
        while (std::getline(ss, item, ',')) cells.push_back(item);
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(rc.seed + i);

    s2d::ParameterStore init_params;
    const s2d::ParameterStore* init_ptr = nullptr;
    if (!init_from.empty()) {
        s2d::Checkpoint ck = s2d::load_checkpoint(init_from);
        init_params = std::move(ck.params);
        init_ptr = &init_params;
    }
    s2d::AblationResult res = s2d::run_ablation(rc, axis, cells, seeds, init_ptr, &std::cout);
    fs::create_directories(out_dir);
    s2d::write_ablation_csv((fs::path(out_dir) / "table.csv").string(), res);
    write_json((fs::path(out_dir) / "audit.json").string(), res.audit);
    for (const auto& cell : cells)
        std::cout << "mean[" << cell << "]: WAR=" << res.mean_war[cell] << " UAR=" << res.mean_uar[cell] << std::endl;
    return 0;
}

int cmd_dump(const CommonFlags& cf, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir) {
    s2d::RunConfig rc = cf.resolve();
    rc.validate();
    s2d::Checkpoint ck = s2d::load_checkpoint(checkpoint);
    const auto test_set = dataset_for(rc, data_dir, "test");
    fs::create_directories(out_dir);
    s2d::dump_features_attention(ck.params, rc.model, test_set, rc.eval_frames,
                                 (fs::path(out_dir) / "features.s2dt").string(),
                                 (fs::path(out_dir) / "attention.s2dt").string());
    std::cout << "wrote " << out_dir << "/features.s2dt and attention.s2dt" << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"s2d: static-to-video transformer adaptation at desk scale"};
    app.require_subcommand(1);

    CommonFlags cf_gen, cf_train, cf_eval, cf_ablate, cf_dump;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset to disk");
    std::string gen_out = "data";
    bool gen_sfer = false, gen_occlusion = false;
    add_common(gen, cf_gen);
    gen->add_option("--out", gen_out, "output directory");
    gen->add_flag("--sfer", gen_sfer, "single-frame two-class image set");
    gen->add_flag("--occlusion", gen_occlusion, "occlusion + distractor variant");

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_out = "run", train_data, train_init, train_resume;
    std::optional<std::size_t> train_stop;
    add_common(train, cf_train);
    train->add_option("--out", train_out, "output directory");
    train->add_option("--data", train_data, "dataset directory (default: generate in memory)");
    train->add_option("--init-from", train_init, "checkpoint whose matching weights seed this run");
    train->add_option("--resume", train_resume, "checkpoint to continue");
    train->add_option("--stop-after-steps", train_stop, "stop after this many global steps");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ck, eval_data, eval_out = "eval";
    int eval_clips = 2;
    add_common(eval, cf_eval);
    eval->add_option("--checkpoint", eval_ck, "trained checkpoint")->required();
    eval->add_option("--data", eval_data, "dataset directory (default: generate in memory)");
    eval->add_option("--out", eval_out, "output directory");
    eval->add_option("--clips", eval_clips, "1 or 2 uniformly sampled clips")->check(CLI::IsMember({1, 2}));

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full adaptation loss");
    std::string gc_out;
    double gc_h = 1e-5, gc_tol = 1e-4;
    gc->add_option("--out", gc_out, "write a JSON report here");
    gc->add_option("--fd-step", gc_h, "central difference step");
    gc->add_option("--tol", gc_tol, "max relative error");

    auto* ab = app.add_subcommand("ablate", "train an ablation grid");
    std::string ab_axis = "adapter", ab_cells, ab_init, ab_out = "ablation";
    std::size_t ab_seeds = 3;
    add_common(ab, cf_ablate);
    ab->add_option("--axis", ab_axis, "adapter|fusion|sdl|oversample");
    ab->add_option("--cells", ab_cells, "comma-separated cell list (default: all)");
    ab->add_option("--seeds", ab_seeds, "number of seeds");
    ab->add_option("--init-from", ab_init, "shared image-model checkpoint");
    ab->add_option("--out", ab_out, "output directory");

    auto* dump = app.add_subcommand("dump", "dump per-sample features and attention maps");
    std::string dump_ck, dump_data, dump_out = "dump";
    add_common(dump, cf_dump);
    dump->add_option("--checkpoint", dump_ck, "trained checkpoint")->required();
    dump->add_option("--data", dump_data, "dataset directory (default: generate in memory)");
    dump->add_option("--out", dump_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(cf_gen, gen_out, gen_sfer, gen_occlusion);
        if (train->parsed()) return cmd_train(cf_train, train_out, train_data, train_init, train_resume, train_stop);
        if (eval->parsed()) return cmd_eval(cf_eval, eval_ck, eval_data, eval_out, eval_clips);
        if (gc->parsed()) return cmd_gradcheck(gc_out, gc_h, gc_tol);
        if (ab->parsed()) return cmd_ablate(cf_ablate, ab_axis, ab_cells, ab_seeds, ab_init, ab_out);
        if (dump->parsed()) return cmd_dump(cf_dump, dump_ck, dump_data, dump_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
