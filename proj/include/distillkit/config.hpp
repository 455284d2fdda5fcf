// Experiment configuration: JSON schema parsing/validation and the manifest
// content hash. Validation errors carry a JSON-pointer-style path to the
// offending field.

#pragma once

#include <distillkit/sha1.hpp>
#include <distillkit/trainer.hpp>

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace distillkit {

struct ConfigError : std::runtime_error {
    std::string path;  // JSON-pointer-ish, e.g. "/distill/lambda"

    ConfigError(std::string pointer, const std::string& message)
        : std::runtime_error(pointer + ": " + message), path(std::move(pointer)) {}
};

/// Everything a `run` needs: the trainer RunConfig plus data source and
/// ensemble settings. `raw` keeps the parsed JSON for hashing and echoing.
struct ExperimentConfig {
    RunConfig run;
    std::string task_name;  // expression | gender | age

    bool synthetic = true;
    std::size_t synthetic_n = 2000;
    double synthetic_noise = 0.3;
    std::size_t image_size = 16;
    std::string data_directory;

    std::string network_preset = "plain_small";

    bool ensemble_enabled = false;
    std::vector<double> c_grid{0.1, 1, 10, 100, 1000};
    bool standardize_embeddings = false;
    DistillConfig distill_triplet;   // second stage-3 pass when ensembling
    double triplet_stage_lr = 0.015;

    nlohmann::json raw;

    std::string content_hash() const { return Sha1::of(raw.dump()); }
    std::string run_id() const { return content_hash().substr(0, 12); }
};

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& pointer, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(pointer + "/" + key, "wrong type");
    }
}

template <typename T>
T require_field(const nlohmann::json& j, const std::string& pointer, const std::string& key) {
    if (!j.contains(key)) throw ConfigError(pointer + "/" + key, "missing required field");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(pointer + "/" + key, "wrong type");
    }
}

inline DistillConfig parse_distill(const nlohmann::json& j, const std::string& pointer, DistillConfig base) {
    DistillConfig cfg = base;
    if (j.contains("mode")) {
        try {
            cfg.mode = distill_mode_from_name(j.at("mode").get<std::string>());
        } catch (const std::exception&) {
            throw ConfigError(pointer + "/mode", "expected standard_kd, hint_kd or triplet_kd");
        }
    }
    cfg.lambda = get_field(j, pointer, "lambda", cfg.lambda);
    cfg.tau = get_field(j, pointer, "tau", cfg.tau);
    cfg.margin_alpha = get_field(j, pointer, "margin_alpha", cfg.margin_alpha);
    cfg.normalize_embeddings = get_field(j, pointer, "normalize_embeddings", cfg.normalize_embeddings);
    if (j.contains("triplet_reduction")) {
        const auto name = j.at("triplet_reduction").get<std::string>();
        if (name == "mean") cfg.triplet_reduction = TripletReduction::mean;
        else if (name == "sum") cfg.triplet_reduction = TripletReduction::sum;
        else throw ConfigError(pointer + "/triplet_reduction", "expected mean or sum");
    }
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
        throw ConfigError(pointer + "/lambda", "must be in [0,1]");
    if (!(cfg.tau >= 1.0)) throw ConfigError(pointer + "/tau", "must be >= 1");
    if (!(cfg.margin_alpha >= 0.0)) throw ConfigError(pointer + "/margin_alpha", "must be >= 0");
    return cfg;
}

}  // namespace detail

/// Parses and validates the documented run-config schema.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("/", "config must be a JSON object");
    ExperimentConfig cfg;
    cfg.raw = j;

    cfg.task_name = detail::require_field<std::string>(j, "", "task");
    Occlusion default_occlusion;
    DistillMode default_mode;
    if (cfg.task_name == "expression") {
        cfg.run.task = expression_like();
        default_occlusion = Occlusion::upper_half_hidden;  // VR-headset style
        default_mode = DistillMode::standard_kd;
    } else if (cfg.task_name == "gender") {
        cfg.run.task = gender_like();
        default_occlusion = Occlusion::lower_half_hidden;  // surgical-mask style
        default_mode = DistillMode::hint_kd;
    } else if (cfg.task_name == "age") {
        cfg.run.task = age_like();
        default_occlusion = Occlusion::lower_half_hidden;
        default_mode = DistillMode::hint_kd;
    } else {
        throw ConfigError("/task", "expected expression, gender or age");
    }

    if (j.contains("data")) {
        const auto& data = j.at("data");
        if (data.contains("synthetic")) {
            const auto& syn = data.at("synthetic");
            cfg.synthetic = true;
            cfg.synthetic_n = detail::get_field<std::size_t>(syn, "/data/synthetic", "n", cfg.synthetic_n);
            cfg.synthetic_noise = detail::get_field(syn, "/data/synthetic", "noise", cfg.synthetic_noise);
            cfg.image_size = detail::get_field<std::size_t>(syn, "/data/synthetic", "image_size", cfg.image_size);
            if (!(cfg.synthetic_noise >= 0.0 && cfg.synthetic_noise < 1.0))
                throw ConfigError("/data/synthetic/noise", "must be in [0,1)");
        } else if (data.contains("directory")) {
            cfg.synthetic = false;
            cfg.data_directory = data.at("directory").get<std::string>();
        } else {
            throw ConfigError("/data", "expected a synthetic or directory source");
        }
    }

    cfg.network_preset = detail::get_field<std::string>(j, "", "network", cfg.network_preset);
    const HeadKind head = cfg.run.task.is_classification() ? HeadKind::classifier : HeadKind::regressor;
    const Shape input{1, cfg.image_size, cfg.image_size};
    if (cfg.network_preset == "plain_small") {
        cfg.run.spec = plain_small(input, head, cfg.run.task.num_classes);
    } else if (cfg.network_preset == "residual_small") {
        cfg.run.spec = residual_small(input, head, cfg.run.task.num_classes);
    } else {
        throw ConfigError("/network", "expected plain_small or residual_small");
    }
    // optimizer pairing: adam for the residual preset unless overridden
    cfg.run.optimizer =
        cfg.network_preset == "residual_small" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
    if (j.contains("optimizer")) {
        try {
            cfg.run.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
        } catch (const std::exception&) {
            throw ConfigError("/optimizer", "expected sgd_momentum or adam");
        }
    }

    cfg.run.occlusion_mode = default_occlusion;
    if (j.contains("occlusion")) {
        try {
            cfg.run.occlusion_mode = occlusion_from_name(j.at("occlusion").get<std::string>());
        } catch (const std::exception&) {
            throw ConfigError("/occlusion", "expected none, upper_half_hidden or lower_half_hidden");
        }
    }

    if (j.contains("stage_epochs")) {
        const auto epochs = detail::require_field<std::vector<std::size_t>>(j, "", "stage_epochs");
        if (epochs.size() != 3) throw ConfigError("/stage_epochs", "expected exactly 3 entries");
        std::copy(epochs.begin(), epochs.end(), cfg.run.stage_epochs.begin());
    }
    if (j.contains("stage_lr")) {
        const auto lr = detail::require_field<std::vector<double>>(j, "", "stage_lr");
        if (lr.size() != 3) throw ConfigError("/stage_lr", "expected exactly 3 entries");
        for (double v : lr)
            if (!(v > 0.0)) throw ConfigError("/stage_lr", "learning rates must be positive");
        std::copy(lr.begin(), lr.end(), cfg.run.stage_lr.begin());
    }
    cfg.run.lr_patience = detail::get_field<std::size_t>(j, "", "lr_patience", cfg.run.lr_patience);
    if (cfg.run.lr_patience == 0) throw ConfigError("/lr_patience", "must be >= 1");
    cfg.run.batch_size = detail::get_field<std::size_t>(j, "", "batch_size", cfg.run.batch_size);
    if (cfg.run.batch_size == 0) throw ConfigError("/batch_size", "must be >= 1");
    cfg.run.seed = detail::get_field<std::uint64_t>(j, "", "seed", cfg.run.seed);

    cfg.run.distill.mode = default_mode;
    if (j.contains("distill")) cfg.run.distill = detail::parse_distill(j.at("distill"), "/distill", cfg.run.distill);
    if (cfg.run.distill.mode == DistillMode::standard_kd && !cfg.run.task.is_classification())
        throw ConfigError("/distill/mode", "standard_kd is incompatible with regression tasks");

    if (j.contains("mining")) {
        const auto& m = j.at("mining");
        cfg.run.mining.pos_subset_fraction =
            detail::get_field(m, "/mining", "pos_subset_fraction", cfg.run.mining.pos_subset_fraction);
        cfg.run.mining.neg_subset_fraction =
            detail::get_field(m, "/mining", "neg_subset_fraction", cfg.run.mining.neg_subset_fraction);
        cfg.run.mining.regression_pos_threshold =
            detail::get_field(m, "/mining", "regression_pos_threshold", cfg.run.mining.regression_pos_threshold);
        cfg.run.mining.fresh_subset_per_anchor =
            detail::get_field(m, "/mining", "fresh_subset_per_anchor", cfg.run.mining.fresh_subset_per_anchor);
        if (!(cfg.run.mining.pos_subset_fraction > 0.0 && cfg.run.mining.pos_subset_fraction <= 1.0))
            throw ConfigError("/mining/pos_subset_fraction", "must be in (0,1]");
        if (!(cfg.run.mining.neg_subset_fraction > 0.0 && cfg.run.mining.neg_subset_fraction <= 1.0))
            throw ConfigError("/mining/neg_subset_fraction", "must be in (0,1]");
    }
    // defaults per task family: 10% for expression-like, 20% for age/gender-like
    if (!j.contains("mining") && cfg.task_name != "expression") {
        cfg.run.mining.pos_subset_fraction = 0.20;
        cfg.run.mining.neg_subset_fraction = 0.20;
    }

    // tuned defaults for the second (triplet) stage-3 pass of ensemble runs
    cfg.distill_triplet = cfg.run.distill;
    cfg.distill_triplet.mode = DistillMode::triplet_kd;
    cfg.distill_triplet.lambda = 0.3;
    cfg.distill_triplet.margin_alpha = 0.2;
    cfg.distill_triplet.normalize_embeddings = true;
    if (j.contains("ensemble")) {
        const auto& e = j.at("ensemble");
        cfg.ensemble_enabled = detail::get_field(e, "/ensemble", "enabled", false);
        cfg.c_grid = detail::get_field(e, "/ensemble", "c_grid", cfg.c_grid);
        if (cfg.c_grid.empty()) throw ConfigError("/ensemble/c_grid", "must be non-empty");
        for (double c : cfg.c_grid)
            if (!(c > 0.0)) throw ConfigError("/ensemble/c_grid", "C values must be positive");
        cfg.standardize_embeddings = detail::get_field(e, "/ensemble", "standardize", false);
        cfg.triplet_stage_lr = detail::get_field(e, "/ensemble", "triplet_stage_lr", cfg.triplet_stage_lr);
        if (!(cfg.triplet_stage_lr > 0.0)) throw ConfigError("/ensemble/triplet_stage_lr", "must be positive");
        if (e.contains("distill_triplet"))
            cfg.distill_triplet =
                detail::parse_distill(e.at("distill_triplet"), "/ensemble/distill_triplet", cfg.distill_triplet);
        if (cfg.distill_triplet.mode != DistillMode::triplet_kd)
            throw ConfigError("/ensemble/distill_triplet", "mode must be triplet_kd");
        if (cfg.ensemble_enabled && cfg.run.distill.mode == DistillMode::triplet_kd)
            throw ConfigError("/distill/mode",
                              "ensemble runs pair a standard/hint distillation with the triplet pass");
    }

    try {
        cfg.run.validate();
    } catch (const std::exception& e) {
        throw ConfigError("/", e.what());
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace distillkit
