// Experiment orchestration: executes the curriculum from an
// ExperimentConfig, writes every run artifact (manifest, epoch logs,
// checkpoints, predictions, evaluation report, ensemble model) into the run
// directory, and implements run comparison with paired significance against
// a baseline. All outputs are deterministic functions of the config.

#pragma once

#include <distillkit/config.hpp>
#include <distillkit/ensemble.hpp>
#include <distillkit/mining.hpp>
#include <distillkit/stats.hpp>
#include <distillkit/trainer.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace distillkit {

/// Canonical content hash of a dataset split (pixels, targets, split sizes).
inline std::string dataset_hash(const DatasetSplit& split) {
    Sha1 h;
    auto put_u64 = [&](std::uint64_t v) { h.update(&v, sizeof v); };
    auto put_f64 = [&](double v) { h.update(&v, sizeof v); };
    put_u64(split.task.is_classification() ? 1 : 2);
    put_u64(split.task.num_classes);
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
        put_u64(part->size());
        for (const auto& img : *part) {
            put_u64(img.height);
            put_u64(img.width);
            put_u64(static_cast<std::uint64_t>(img.label));
            put_f64(img.target);
            for (double p : img.pixels) put_f64(p);
        }
    }
    return h.hex_digest();
}

inline DatasetSplit materialize_dataset(const ExperimentConfig& cfg) {
    if (cfg.synthetic)
        return generate_synthetic(cfg.run.task, cfg.synthetic_n, cfg.synthetic_noise, cfg.run.seed, cfg.image_size);
    DatasetSplit split = load_directory(cfg.data_directory);
    if (split.task.is_classification() != cfg.run.task.is_classification() ||
        (split.task.is_classification() && split.task.num_classes != cfg.run.task.num_classes))
        throw std::runtime_error("dataset at '" + cfg.data_directory + "' does not match the configured task");
    return split;
}

struct ExperimentOutput {
    std::string run_id;
    std::string config_hash;
    std::string data_hash;
    std::string out_dir;
    EvalReport report;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline std::vector<int> truth_labels(const std::vector<LabeledImage>& images) {
    std::vector<int> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = images[i].label;
    return out;
}

inline std::vector<double> truth_values(const std::vector<LabeledImage>& images) {
    std::vector<double> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = images[i].target;
    return out;
}

}  // namespace detail

/// Runs the full curriculum (plus the triplet pass and SVM/SVR ensemble when
/// enabled) and writes all artifacts under `out_dir`.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create run directory '" + out_dir + "': " + ec.message());

    DatasetSplit data = materialize_dataset(cfg);
    const std::string data_digest = dataset_hash(data);

    nlohmann::json manifest{{"format", "distillkit-run"},
                            {"version", 1},
                            {"run_id", cfg.run_id()},
                            {"config_hash", cfg.content_hash()},
                            {"dataset_hash", data_digest},
                            {"task", cfg.task_name},
                            {"config", cfg.raw}};
    detail::write_json(fs::path(out_dir) / "manifest.json", manifest);

    auto [teacher, report1] = train_stage1_teacher(cfg.run, data);
    report1.checkpoint_id = "teacher.checkpoint.json";
    save_params(teacher, (fs::path(out_dir) / report1.checkpoint_id).string());
    detail::write_text(fs::path(out_dir) / "stage1.jsonl", report1.to_jsonl());

    auto [student2, report2] = train_stage2_student(teacher, cfg.run, data);
    report2.checkpoint_id = "student_stage2.checkpoint.json";
    save_params(student2, (fs::path(out_dir) / report2.checkpoint_id).string());
    detail::write_text(fs::path(out_dir) / "stage2.jsonl", report2.to_jsonl());

    auto [student3, report3] = train_stage3_distill(teacher, student2, cfg.run, data);
    report3.checkpoint_id = "student_stage3.checkpoint.json";
    save_params(student3, (fs::path(out_dir) / report3.checkpoint_id).string());
    detail::write_text(fs::path(out_dir) / "stage3.jsonl", report3.to_jsonl());

    NetworkParams student_triplet;
    bool have_triplet = cfg.run.distill.mode == DistillMode::triplet_kd;
    if (have_triplet) student_triplet = student3.clone(Role::student);
    if (cfg.ensemble_enabled) {
        RunConfig triplet_cfg = cfg.run;
        triplet_cfg.distill = cfg.distill_triplet;
        triplet_cfg.stage_lr[2] = cfg.triplet_stage_lr;
        auto [tl, report_tl] = train_stage3_distill(teacher, student2, triplet_cfg, data);
        report_tl.checkpoint_id = "student_stage3_triplet.checkpoint.json";
        save_params(tl, (fs::path(out_dir) / report_tl.checkpoint_id).string());
        detail::write_text(fs::path(out_dir) / "stage3_triplet.jsonl", report_tl.to_jsonl());
        student_triplet = std::move(tl);
        have_triplet = true;
    }

    // audit dump of one mined triplet list for triplet-bearing runs
    if (have_triplet) {
        MiningConfig mining = cfg.run.mining;
        mining.seed = cfg.run.seed;
        auto occluded_train = occlude_all(data.train, cfg.run.occlusion_mode);
        auto triplets =
            mine_epoch(student_triplet, teacher, cfg.run.spec, data.train, occluded_train, cfg.run.task, mining);
        detail::write_text(fs::path(out_dir) / "triplets.csv", dump_triplets(triplets));
    }

    // evaluation
    const auto& spec = cfg.run.spec;
    auto test_occluded = occlude_all(data.test, cfg.run.occlusion_mode);
    EvalReport report;
    report.n_samples = data.test.size();
    nlohmann::json predictions{{"dataset_hash", data_digest}};

    if (cfg.run.task.is_classification()) {
        const auto truth = detail::truth_labels(data.test);
        const std::size_t k = cfg.run.task.num_classes;
        auto eval_model = [&](const char* name, const NetworkParams& params,
                              const std::vector<LabeledImage>& images) {
            auto pred = predict_labels(params, spec, images);
            report.metrics[std::string(name) + "_accuracy"] = accuracy(pred, truth);
            report.metrics[std::string(name) + "_weighted_accuracy"] = weighted_accuracy(pred, truth, k);
            predictions["models"][name] = pred;
            return pred;
        };
        eval_model("teacher_full", teacher, data.test);
        eval_model("teacher_occluded", teacher, test_occluded);
        auto pred_s2 = eval_model("stage2_occluded", student2, test_occluded);
        eval_model("stage2_full", student2, data.test);
        auto pred_s3 = eval_model("stage3_occluded", student3, test_occluded);
        if (have_triplet) eval_model("stage3_triplet_occluded", student_triplet, test_occluded);

        auto mc = mcnemar_test(pred_s3, pred_s2, truth);
        report.metrics["stage3_vs_stage2_p"] = mc.p_value;
        report.paired["stage3_vs_stage2"] = paired_counts(pred_s3, pred_s2, truth);
        predictions["truth"] = truth;
    } else {
        const auto truth = detail::truth_values(data.test);
        auto eval_model = [&](const char* name, const NetworkParams& params,
                              const std::vector<LabeledImage>& images) {
            auto pred = predict_values(params, spec, images);
            report.metrics[std::string(name) + "_mae"] = mae(pred, truth);
            predictions["models"][name] = pred;
        };
        eval_model("teacher_full", teacher, data.test);
        eval_model("teacher_occluded", teacher, test_occluded);
        eval_model("stage2_occluded", student2, test_occluded);
        eval_model("stage2_full", student2, data.test);
        eval_model("stage3_occluded", student3, test_occluded);
        if (have_triplet) eval_model("stage3_triplet_occluded", student_triplet, test_occluded);
        predictions["truth"] = truth;
    }

    if (cfg.ensemble_enabled) {
        auto train_occluded = occlude_all(data.train, cfg.run.occlusion_mode);
        auto val_occluded = occlude_all(data.validation, cfg.run.occlusion_mode);
        const auto kind = cfg.run.task.is_classification() ? MarginModelKind::hinge_classifier
                                                           : MarginModelKind::epsilon_regressor;
        FitOptions opts;
        opts.standardize = cfg.standardize_embeddings;
        auto embed = [&](const NetworkParams& params, const std::vector<LabeledImage>& images, const char* tag) {
            return extract_embeddings(params, spec, images, cfg.run.task, tag);
        };
        auto es_tr = embed(student3, train_occluded, "standard_kd");
        auto es_va = embed(student3, val_occluded, "standard_kd");
        auto es_te = embed(student3, test_occluded, "standard_kd");
        auto et_tr = embed(student_triplet, train_occluded, "triplet_kd");
        auto et_va = embed(student_triplet, val_occluded, "triplet_kd");
        auto et_te = embed(student_triplet, test_occluded, "triplet_kd");

        auto model_s = fit_margin_model(es_tr, es_va, kind, cfg.c_grid, opts);
        auto model_t = fit_margin_model(et_tr, et_va, kind, cfg.c_grid, opts);
        auto model_c = fit_ensemble_model(es_tr, es_va, et_tr, et_va, model_s, model_t, kind, cfg.c_grid, opts);

        const char* suffix = cfg.run.task.is_classification() ? "_accuracy" : "_mae";
        report.metrics[std::string("svm_standard") + suffix] = evaluate_margin_model(model_s, es_te);
        report.metrics[std::string("svm_triplet") + suffix] = evaluate_margin_model(model_t, et_te);
        report.metrics[std::string("svm_concat") + suffix] =
            evaluate_margin_model(model_c, concat_embeddings(es_te, et_te));
        detail::write_json(fs::path(out_dir) / "ensemble_model.json", margin_model_to_json(model_c));

        auto ens_pred = ensemble_predict(model_c, es_te, et_te);
        if (cfg.run.task.is_classification()) {
            predictions["models"]["ensemble_occluded"] = ens_pred.labels;
            const auto truth = detail::truth_labels(data.test);
            report.paired["ensemble_vs_stage2"] =
                paired_counts(ens_pred.labels, predictions["models"]["stage2_occluded"].get<std::vector<int>>(),
                              truth);
        } else {
            predictions["models"]["ensemble_occluded"] = ens_pred.values;
        }
    }

    detail::write_json(fs::path(out_dir) / "predictions.json", predictions);
    nlohmann::json report_json = report.to_json();
    report_json["run_id"] = cfg.run_id();
    report_json["dataset_hash"] = data_digest;
    detail::write_json(fs::path(out_dir) / "eval_report.json", report_json);

    return {cfg.run_id(), cfg.content_hash(), data_digest, out_dir, report};
}

// -- run comparison -------------------------------------------------------------

struct LoadedRun {
    std::string dir;
    std::string run_id;
    std::string data_digest;
    bool classification = true;
    std::vector<int> primary_labels;
    std::vector<double> primary_values;
    std::vector<int> truth_labels;
    EvalReport report;
};

inline LoadedRun load_run(const std::string& dir) {
    namespace fs = std::filesystem;
    auto read_json = [](const fs::path& p) {
        std::ifstream in(p);
        if (!in) throw std::runtime_error("cannot open '" + p.string() + "'");
        nlohmann::json j;
        in >> j;
        return j;
    };
    LoadedRun run;
    run.dir = dir;
    auto manifest = read_json(fs::path(dir) / "manifest.json");
    run.run_id = manifest.at("run_id").get<std::string>();
    run.data_digest = manifest.at("dataset_hash").get<std::string>();
    run.classification = manifest.at("task").get<std::string>() != "age";
    auto predictions = read_json(fs::path(dir) / "predictions.json");
    const auto& models = predictions.at("models");
    const char* primary = models.contains("ensemble_occluded") ? "ensemble_occluded" : "stage3_occluded";
    if (run.classification) {
        run.primary_labels = models.at(primary).get<std::vector<int>>();
        run.truth_labels = predictions.at("truth").get<std::vector<int>>();
    } else {
        run.primary_values = models.at(primary).get<std::vector<double>>();
    }
    run.report = EvalReport::from_json(read_json(fs::path(dir) / "eval_report.json"));
    return run;
}

/// Metric table for a set of runs against a baseline: CSV written to
/// `csv_path` (when non-empty), pretty text returned. Significantly better
/// runs (paired McNemar, p < 0.05) get a dagger marker.
inline std::string compare_runs(const std::string& baseline_dir, const std::vector<std::string>& run_dirs,
                                const std::string& csv_path) {
    LoadedRun baseline = load_run(baseline_dir);
    std::vector<LoadedRun> runs;
    runs.push_back(baseline);
    for (const auto& dir : run_dirs)
        if (dir != baseline_dir) runs.push_back(load_run(dir));
    for (const auto& run : runs)
        if (run.data_digest != baseline.data_digest)
            throw std::runtime_error("compare: run " + run.run_id + " was evaluated on a different test set than " +
                                     baseline.run_id);

    std::ostringstream csv, pretty;
    const bool classification = baseline.classification;
    if (classification)
        csv << "run_id,accuracy,weighted_accuracy,p,significant\n";
    else
        csv << "run_id,mae\n";
    pretty << std::left << std::setw(14) << "run" << std::right;
    if (classification)
        pretty << std::setw(10) << "acc" << std::setw(10) << "w-acc" << std::setw(10) << "p" << "  marker\n";
    else
        pretty << std::setw(10) << "mae" << '\n';

    const std::size_t num_classes =
        classification ? static_cast<std::size_t>(
                             *std::max_element(baseline.truth_labels.begin(), baseline.truth_labels.end())) + 1
                       : 0;
    for (const auto& run : runs) {
        if (classification) {
            const double acc = accuracy(run.primary_labels, baseline.truth_labels);
            const double wacc = weighted_accuracy(run.primary_labels, baseline.truth_labels, num_classes);
            auto mc = mcnemar_test(run.primary_labels, baseline.primary_labels, baseline.truth_labels);
            const bool better = acc > accuracy(baseline.primary_labels, baseline.truth_labels);
            const bool significant = mc.p_value < kSignificanceLevel && better;
            csv << run.run_id << ',' << acc << ',' << wacc << ',' << mc.p_value << ','
                << (significant ? "yes" : "no") << '\n';
            pretty << std::left << std::setw(14) << run.run_id << std::right << std::fixed << std::setprecision(4)
                   << std::setw(10) << acc << std::setw(10) << wacc << std::setw(10) << mc.p_value << "  "
                   << (significant ? "†" : "") << '\n';
        } else {
            auto it = run.report.metrics.find(run.report.metrics.count("svm_concat_mae") ? "svm_concat_mae"
                                                                                         : "stage3_occluded_mae");
            const double err = it == run.report.metrics.end() ? 0.0 : it->second;
            csv << run.run_id << ',' << err << '\n';
            pretty << std::left << std::setw(14) << run.run_id << std::right << std::fixed << std::setprecision(4)
                   << std::setw(10) << err << '\n';
        }
    }
    if (!csv_path.empty()) detail::write_text(csv_path, csv.str());
    return pretty.str();
}

}  // namespace distillkit
