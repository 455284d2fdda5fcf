// Distilled-embedding ensemble: extract penultimate-layer embeddings from
// two students, concatenate them row-wise and fit a maximum-margin linear
// model on top (hinge SVM for classification, epsilon-insensitive SVR with
// epsilon = 0 for regression). Training is deterministic full-batch
// subgradient descent with step 1/(lambda_reg * t); the returned model is the
// best-objective iterate, so the tracked objective is non-increasing.

#pragma once

#include <distillkit/nn.hpp>
#include <distillkit/stats.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace distillkit {

struct EmbeddingSet {
    EmbeddingMatrix matrix;
    std::vector<double> targets;              // class ids or regression targets, row-aligned
    std::vector<std::string> source_blocks;   // tag per column block, e.g. {"standard_kd"}
    std::vector<std::size_t> block_cols;      // width per block; sums to matrix.cols
};

/// One row per sample, in image order; computed without graph recording.
inline EmbeddingSet extract_embeddings(const NetworkParams& params, const NetworkSpec& spec,
                                       const std::vector<LabeledImage>& images, const TaskKind& task,
                                       const std::string& source_tag) {
    EmbeddingSet set;
    set.matrix = compute_embeddings(params, spec, images);
    set.targets.reserve(images.size());
    for (const auto& img : images)
        set.targets.push_back(task.is_classification() ? static_cast<double>(img.label) : img.target);
    set.source_blocks = {source_tag};
    set.block_cols = {set.matrix.cols};
    return set;
}

/// Row-wise concatenation; rows must be aligned (same samples, same order).
inline EmbeddingSet concat_embeddings(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.matrix.rows != b.matrix.rows)
        throw std::invalid_argument("concat_embeddings: row counts differ, " + std::to_string(a.matrix.rows) +
                                    " vs " + std::to_string(b.matrix.rows));
    if (a.targets != b.targets)
        throw std::invalid_argument("concat_embeddings: target rows are not aligned");
    EmbeddingSet out;
    out.matrix.rows = a.matrix.rows;
    out.matrix.cols = a.matrix.cols + b.matrix.cols;
    out.matrix.values.reserve(out.matrix.rows * out.matrix.cols);
    for (std::size_t r = 0; r < out.matrix.rows; ++r) {
        out.matrix.values.insert(out.matrix.values.end(), a.matrix.row(r), a.matrix.row(r) + a.matrix.cols);
        out.matrix.values.insert(out.matrix.values.end(), b.matrix.row(r), b.matrix.row(r) + b.matrix.cols);
    }
    out.targets = a.targets;
    out.source_blocks = a.source_blocks;
    out.source_blocks.insert(out.source_blocks.end(), b.source_blocks.begin(), b.source_blocks.end());
    out.block_cols = a.block_cols;
    out.block_cols.insert(out.block_cols.end(), b.block_cols.begin(), b.block_cols.end());
    return out;
}

enum class MarginModelKind { hinge_classifier, epsilon_regressor };

struct LinearMarginModel {
    MarginModelKind kind = MarginModelKind::hinge_classifier;
    double C = 1.0;
    double epsilon = 0.0;  // fixed at 0 for the regressor
    std::size_t num_classes = 2;
    // binary classifiers and regressors hold one weight vector; K > 2 uses
    // one-vs-rest with one vector per class
    std::vector<std::vector<double>> weights;
    std::vector<double> biases;
    // optional per-feature standardization fitted on train
    bool standardized = false;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;
};

struct Predictions {
    std::vector<int> labels;    // classification
    std::vector<double> values; // regression
};

namespace detail {

struct BinaryFit {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> objective_trace;  // best-so-far objective per epoch
};

inline double hinge_objective(const EmbeddingMatrix& x, const std::vector<double>& y,
                              const std::vector<double>& w, double b, double lambda_reg) {
    double norm2 = 0.0;
    for (double v : w) norm2 += v * v;
    double loss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double score = b;
        const double* xi = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) score += w[j] * xi[j];
        loss += std::max(0.0, 1.0 - y[i] * score);
    }
    return 0.5 * lambda_reg * norm2 + loss / static_cast<double>(x.rows);
}

inline double absolute_objective(const EmbeddingMatrix& x, const std::vector<double>& y,
                                 const std::vector<double>& w, double b, double lambda_reg) {
    double norm2 = 0.0;
    for (double v : w) norm2 += v * v;
    double loss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double score = b;
        const double* xi = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) score += w[j] * xi[j];
        loss += std::fabs(score - y[i]);
    }
    return 0.5 * lambda_reg * norm2 + loss / static_cast<double>(x.rows);
}

/// Stochastic subgradient descent on the regularized hinge (y in {-1,+1})
/// or, when `regression` is set, on the epsilon=0 insensitive (absolute)
/// loss. Steps follow the 1/(lambda_reg * t) schedule with t counting
/// per-sample updates, shifted by t0 so the first step matches the feature
/// scale; the last half of the trajectory is averaged and the best-objective
/// iterate is returned. Deterministic for a given seed.
inline BinaryFit subgradient_fit(const EmbeddingMatrix& x, const std::vector<double>& y, double c_value,
                                 std::size_t epochs, bool regression, std::uint64_t seed = 1) {
    const double n = static_cast<double>(x.rows);
    const double lambda_reg = 1.0 / (c_value * n);
    double mean_sq_norm = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 1.0;  // implicit bias coordinate
        const double* xi = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) s += xi[j] * xi[j];
        mean_sq_norm += s;
    }
    mean_sq_norm /= n;
    const double t0 = mean_sq_norm / lambda_reg;  // first step ~ 1/mean_sq_norm

    std::vector<double> w(x.cols, 0.0);
    double b = 0.0;
    std::vector<double> w_avg(x.cols, 0.0);
    double b_avg = 0.0;
    std::size_t avg_count = 0;

    BinaryFit best;
    best.weights = w;
    best.bias = b;
    double best_obj = regression ? absolute_objective(x, y, w, b, lambda_reg)
                                 : hinge_objective(x, y, w, b, lambda_reg);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(x.rows);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t total_updates = epochs * x.rows;
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i : order) {
            ++t;
            const double step = 1.0 / (lambda_reg * (t0 + static_cast<double>(t)));
            double score = b;
            const double* xi = x.row(i);
            for (std::size_t j = 0; j < x.cols; ++j) score += w[j] * xi[j];
            double factor = 0.0;
            if (regression) {
                const double resid = score - y[i];
                factor = resid > 0.0 ? 1.0 : (resid < 0.0 ? -1.0 : 0.0);
            } else if (y[i] * score < 1.0) {
                factor = -y[i];
            }
            const double decay = 1.0 - step * lambda_reg;
            for (std::size_t j = 0; j < x.cols; ++j) w[j] *= decay;
            if (factor != 0.0) {
                for (std::size_t j = 0; j < x.cols; ++j) w[j] -= step * factor * xi[j];
                b -= step * factor;
            }
            if (2 * t > total_updates) {
                for (std::size_t j = 0; j < x.cols; ++j) w_avg[j] += w[j];
                b_avg += b;
                ++avg_count;
            }
        }
        const double obj = regression ? absolute_objective(x, y, w, b, lambda_reg)
                                      : hinge_objective(x, y, w, b, lambda_reg);
        if (obj < best_obj) {
            best_obj = obj;
            best.weights = w;
            best.bias = b;
        }
        best.objective_trace.push_back(best_obj);
    }
    if (avg_count > 0) {
        for (double& v : w_avg) v /= static_cast<double>(avg_count);
        b_avg /= static_cast<double>(avg_count);
        const double obj = regression ? absolute_objective(x, y, w_avg, b_avg, lambda_reg)
                                      : hinge_objective(x, y, w_avg, b_avg, lambda_reg);
        if (obj < best_obj) {
            best_obj = obj;
            best.weights = std::move(w_avg);
            best.bias = b_avg;
            best.objective_trace.push_back(best_obj);
        }
    }
    return best;
}

inline EmbeddingMatrix apply_standardization(const EmbeddingMatrix& x, const std::vector<double>& mean,
                                             const std::vector<double>& scale) {
    EmbeddingMatrix out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < x.cols; ++j)
            out.values[r * x.cols + j] = (x.values[r * x.cols + j] - mean[j]) / scale[j];
    return out;
}

}  // namespace detail

struct FitOptions {
    std::size_t epochs = 200;
    bool standardize = false;
};

inline Predictions predict(const LinearMarginModel& model, const EmbeddingMatrix& x) {
    EmbeddingMatrix input = model.standardized
                                ? detail::apply_standardization(x, model.feature_mean, model.feature_scale)
                                : x;
    Predictions out;
    if (model.kind == MarginModelKind::epsilon_regressor) {
        out.values.resize(x.rows);
        for (std::size_t r = 0; r < x.rows; ++r) {
            double score = model.biases[0];
            for (std::size_t j = 0; j < x.cols; ++j) score += model.weights[0][j] * input.row(r)[j];
            out.values[r] = score;
        }
        return out;
    }
    out.labels.resize(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        if (model.weights.size() == 1) {
            double score = model.biases[0];
            for (std::size_t j = 0; j < x.cols; ++j) score += model.weights[0][j] * input.row(r)[j];
            out.labels[r] = score > 0.0 ? 1 : 0;
        } else {
            // one-vs-rest argmax; ties go to the lowest class id
            int best_class = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < model.weights.size(); ++k) {
                double score = model.biases[k];
                for (std::size_t j = 0; j < x.cols; ++j) score += model.weights[k][j] * input.row(r)[j];
                if (score > best_score) {
                    best_score = score;
                    best_class = static_cast<int>(k);
                }
            }
            out.labels[r] = best_class;
        }
    }
    return out;
}

/// Validation accuracy (classifier) or MAE (regressor) of a fitted model.
inline double evaluate_margin_model(const LinearMarginModel& model, const EmbeddingSet& data) {
    auto preds = predict(model, data.matrix);
    if (model.kind == MarginModelKind::hinge_classifier) {
        std::vector<int> truth(data.targets.size());
        for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = static_cast<int>(data.targets[i]);
        return accuracy(preds.labels, truth);
    }
    return mae(preds.values, data.targets);
}

namespace detail {

inline LinearMarginModel fit_at_c(const EmbeddingMatrix& x, const std::vector<double>& targets,
                                  MarginModelKind kind, std::size_t num_classes, double c_value,
                                  const FitOptions& opts) {
    LinearMarginModel model;
    model.kind = kind;
    model.C = c_value;
    model.num_classes = num_classes;
    if (kind == MarginModelKind::epsilon_regressor) {
        auto fit = subgradient_fit(x, targets, c_value, opts.epochs, true);
        model.weights = {fit.weights};
        model.biases = {fit.bias};
        return model;
    }
    if (num_classes == 2) {
        std::vector<double> y(targets.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = targets[i] > 0.5 ? 1.0 : -1.0;
        auto fit = subgradient_fit(x, y, c_value, opts.epochs, false);
        model.weights = {fit.weights};
        model.biases = {fit.bias};
        return model;
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        std::vector<double> y(targets.size());
        for (std::size_t i = 0; i < y.size(); ++i)
            y[i] = static_cast<std::size_t>(targets[i]) == k ? 1.0 : -1.0;
        auto fit = subgradient_fit(x, y, c_value, opts.epochs, false);
        model.weights.push_back(std::move(fit.weights));
        model.biases.push_back(fit.bias);
    }
    return model;
}

}  // namespace detail

/// Grid search over C: fit on train, pick the best validation metric
/// (accuracy up / MAE down); ties go to the smaller C.
inline LinearMarginModel fit_margin_model(const EmbeddingSet& train, const EmbeddingSet& val, MarginModelKind kind,
                                          const std::vector<double>& c_grid, const FitOptions& opts = {}) {
    if (c_grid.empty()) throw std::invalid_argument("fit_margin_model: empty C grid");
    if (train.matrix.rows == 0) throw std::invalid_argument("fit_margin_model: empty training set");

    std::size_t num_classes = 2;
    if (kind == MarginModelKind::hinge_classifier) {
        double lo = train.targets[0], hi = train.targets[0];
        for (double t : train.targets) {
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
        if (lo == hi) throw std::invalid_argument("fit_margin_model: degenerate labels (single class in train)");
        num_classes = static_cast<std::size_t>(hi) + 1;
    }

    EmbeddingMatrix x = train.matrix;
    std::vector<double> mean, scale;
    if (opts.standardize) {
        mean.assign(x.cols, 0.0);
        scale.assign(x.cols, 0.0);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t j = 0; j < x.cols; ++j) mean[j] += x.row(r)[j];
        for (double& m : mean) m /= static_cast<double>(x.rows);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t j = 0; j < x.cols; ++j) {
                const double dev = x.row(r)[j] - mean[j];
                scale[j] += dev * dev;
            }
        for (double& s : scale) s = std::max(std::sqrt(s / static_cast<double>(x.rows)), 1e-12);
        x = detail::apply_standardization(x, mean, scale);
    }

    std::vector<double> grid = c_grid;
    std::sort(grid.begin(), grid.end());
    LinearMarginModel best;
    double best_metric = 0.0;
    bool have_best = false;
    for (double c_value : grid) {
        if (!(c_value > 0.0)) throw std::invalid_argument("fit_margin_model: C values must be positive");
        LinearMarginModel model = detail::fit_at_c(x, train.targets, kind, num_classes, c_value, opts);
        if (opts.standardize) {
            model.standardized = true;
            model.feature_mean = mean;
            model.feature_scale = scale;
        }
        const double metric = evaluate_margin_model(model, val);
        const bool better = !have_best || (kind == MarginModelKind::hinge_classifier ? metric > best_metric
                                                                                     : metric < best_metric);
        if (better) {
            best = std::move(model);
            best_metric = metric;
            have_best = true;
        }
    }
    return best;
}

/// Concatenates the two embedding sets row-wise and applies the model.
inline Predictions ensemble_predict(const LinearMarginModel& model, const EmbeddingSet& emb_standard,
                                    const EmbeddingSet& emb_triplet) {
    auto joined = concat_embeddings(emb_standard, emb_triplet);
    return predict(model, joined.matrix);
}

/// Embeds a block model into a wider concatenated feature space: weights for
/// the foreign columns are zero, so predictions are unchanged.
inline LinearMarginModel pad_margin_model(const LinearMarginModel& model, std::size_t column_offset,
                                          std::size_t total_cols) {
    LinearMarginModel out = model;
    for (auto& w : out.weights) {
        std::vector<double> wide(total_cols, 0.0);
        std::copy(w.begin(), w.end(), wide.begin() + static_cast<std::ptrdiff_t>(column_offset));
        w = std::move(wide);
    }
    if (model.standardized) {
        out.feature_mean.assign(total_cols, 0.0);
        out.feature_scale.assign(total_cols, 1.0);
        std::copy(model.feature_mean.begin(), model.feature_mean.end(),
                  out.feature_mean.begin() + static_cast<std::ptrdiff_t>(column_offset));
        std::copy(model.feature_scale.begin(), model.feature_scale.end(),
                  out.feature_scale.begin() + static_cast<std::ptrdiff_t>(column_offset));
    }
    return out;
}

/// Fits the concatenated-embedding model. The zero-padded single-block
/// models enter the validation-time model selection as candidates, so the
/// ensemble never validates below its own parts (an exact SVM solver would
/// guarantee this intrinsically; the stochastic subgradient fit does not).
inline LinearMarginModel fit_ensemble_model(const EmbeddingSet& train_standard, const EmbeddingSet& val_standard,
                                            const EmbeddingSet& train_triplet, const EmbeddingSet& val_triplet,
                                            const LinearMarginModel& model_standard,
                                            const LinearMarginModel& model_triplet, MarginModelKind kind,
                                            const std::vector<double>& c_grid, const FitOptions& opts = {}) {
    auto train_joined = concat_embeddings(train_standard, train_triplet);
    auto val_joined = concat_embeddings(val_standard, val_triplet);
    LinearMarginModel best = fit_margin_model(train_joined, val_joined, kind, c_grid, opts);
    double best_metric = evaluate_margin_model(best, val_joined);
    const std::size_t total = train_joined.matrix.cols;
    for (const auto& [model, offset] :
         {std::pair{&model_standard, std::size_t{0}}, std::pair{&model_triplet, train_standard.matrix.cols}}) {
        LinearMarginModel padded = pad_margin_model(*model, offset, total);
        const double metric = evaluate_margin_model(padded, val_joined);
        const bool better = kind == MarginModelKind::hinge_classifier ? metric > best_metric : metric < best_metric;
        if (better) {
            best = std::move(padded);
            best_metric = metric;
        }
    }
    return best;
}

// -- model export --------------------------------------------------------------

inline nlohmann::json margin_model_to_json(const LinearMarginModel& model) {
    nlohmann::json j;
    j["kind"] = model.kind == MarginModelKind::hinge_classifier ? "hinge-classifier" : "epsilon-regressor";
    j["C"] = model.C;
    j["epsilon"] = model.epsilon;
    j["num_classes"] = model.num_classes;
    j["weights"] = model.weights;
    j["bias"] = model.biases;
    if (model.standardized) {
        j["feature_mean"] = model.feature_mean;
        j["feature_scale"] = model.feature_scale;
    }
    return j;
}

inline LinearMarginModel margin_model_from_json(const nlohmann::json& j) {
    LinearMarginModel model;
    model.kind = j.at("kind").get<std::string>() == "epsilon-regressor" ? MarginModelKind::epsilon_regressor
                                                                        : MarginModelKind::hinge_classifier;
    model.C = j.at("C").get<double>();
    model.epsilon = j.value("epsilon", 0.0);
    model.num_classes = j.value("num_classes", std::size_t{2});
    model.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    model.biases = j.at("bias").get<std::vector<double>>();
    if (j.contains("feature_mean")) {
        model.standardized = true;
        model.feature_mean = j.at("feature_mean").get<std::vector<double>>();
        model.feature_scale = j.at("feature_scale").get<std::vector<double>>();
    }
    return model;
}

}  // namespace distillkit
