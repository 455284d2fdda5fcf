// The three-step curriculum: (1) teacher on fully-visible images, (2)
// fine-tune on occluded images into the pre-distillation student, (3)
// distill via standard, hint or triplet KD. The teacher is frozen in step 3;
// teacher inputs stay fully visible (privileged pairing) while the student
// sees the occluded copy of the same sample.

#pragma once

#include <distillkit/losses.hpp>
#include <distillkit/mining.hpp>
#include <distillkit/optim.hpp>

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace distillkit {

struct RunConfig {
    NetworkSpec spec;
    TaskKind task;
    Occlusion occlusion_mode = Occlusion::upper_half_hidden;  // stages 2 and 3; stage 1 is none
    std::array<std::size_t, 3> stage_epochs{30, 20, 10};
    std::array<double, 3> stage_lr{0.05, 0.02, 0.01};
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    std::size_t lr_patience = 10;
    std::size_t batch_size = 32;
    DistillConfig distill;
    MiningConfig mining;
    std::uint64_t seed = 1;

    void validate() const {
        spec.validate();
        distill.validate();
        mining.validate();
        if (batch_size == 0) throw std::invalid_argument("run config: batch_size must be positive");
        if (lr_patience == 0) throw std::invalid_argument("run config: lr_patience must be >= 1");
        for (double lr : stage_lr)
            if (!(lr > 0.0)) throw std::invalid_argument("run config: learning rates must be positive");
        if (task.is_classification() != (spec.head == HeadKind::classifier))
            throw std::invalid_argument("run config: task kind and network head disagree");
        if (task.is_classification() && task.num_classes != spec.num_classes)
            throw std::invalid_argument("run config: class counts disagree between task and network head");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // error rate (classification) or MAE (regression)
    std::size_t triplets_mined = 0;
};

struct StageReport {
    std::string stage;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_metric = 0.0;
    std::string checkpoint_id;

    /// One JSON record per epoch.
    std::string to_jsonl() const {
        std::ostringstream os;
        for (const auto& e : epochs) {
            nlohmann::json j{{"stage", stage},      {"epoch", e.epoch},           {"lr", e.lr},
                             {"train_loss", e.train_loss}, {"val_metric", e.val_metric}};
            if (e.triplets_mined > 0) j["triplets_mined"] = e.triplets_mined;
            os << j.dump() << '\n';
        }
        return os.str();
    }
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Error rate for classifiers (lower is better), MAE for regressors.
inline double validation_metric(const NetworkParams& params, const NetworkSpec& spec, const TaskKind& task,
                                const std::vector<LabeledImage>& images) {
    if (images.empty()) throw std::invalid_argument("validation_metric: empty image set");
    if (task.is_classification()) {
        auto preds = predict_labels(params, spec, images);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < images.size(); ++i) hits += preds[i] == images[i].label;
        return 1.0 - static_cast<double>(hits) / static_cast<double>(images.size());
    }
    auto preds = predict_values(params, spec, images);
    double total = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) total += std::fabs(preds[i] - images[i].target);
    return total / static_cast<double>(images.size());
}

namespace detail {

inline std::vector<double> batch_targets(const std::vector<LabeledImage>& images,
                                         const std::vector<std::size_t>& indices, const TaskKind& task) {
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        out[i] = task.is_classification() ? static_cast<double>(images[indices[i]].label)
                                          : images[indices[i]].target;
    return out;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t stage,
                                            std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(seed, stage * 100003 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

inline void check_finite(double loss, std::size_t stage, std::size_t epoch) {
    if (!std::isfinite(loss))
        throw DivergenceError("stage " + std::to_string(stage) + " diverged at epoch " + std::to_string(epoch));
}

// Shared stage skeleton: shuffles, batches, tracks the best-validation
// checkpoint, applies plateau decay. `batch_loss` builds the differentiable
// loss for one batch of indices; `on_epoch_start` can mine triplets etc.
template <typename BatchLoss, typename EpochHook>
std::pair<NetworkParams, StageReport> run_stage(NetworkParams params, const RunConfig& cfg, std::size_t stage_index,
                                                std::size_t epochs, double lr0,
                                                const std::vector<LabeledImage>& train_view,
                                                const std::vector<LabeledImage>& val_view, BatchLoss&& batch_loss,
                                                EpochHook&& on_epoch_start, const char* stage_name) {
    StageReport report;
    report.stage = stage_name;
    NetworkParams best = params.clone(params.role);
    double best_metric = epochs > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    if (epochs == 0) {
        report.best_val_metric = val_view.empty() ? 0.0 : validation_metric(params, cfg.spec, cfg.task, val_view);
        return {std::move(best), report};
    }

    Optimizer opt(cfg.optimizer);
    double lr = lr0;
    std::vector<double> history;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        EpochRecord record;
        record.epoch = epoch;
        record.lr = lr;
        record.triplets_mined = on_epoch_start(params, epoch);

        const auto order = epoch_order(train_view.size(), cfg.seed, stage_index, epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor loss = batch_loss(params, batch);
            check_finite(loss.item(), stage_index, epoch);
            loss_sum += loss.item() * static_cast<double>(batch.size());
            seen += batch.size();
            params.zero_grads();
            loss.backward();
            opt.step(params, lr);
        }
        record.train_loss = loss_sum / static_cast<double>(seen);
        record.val_metric = validation_metric(params, cfg.spec, cfg.task, val_view);
        check_finite(record.val_metric, stage_index, epoch);
        history.push_back(record.val_metric);
        if (record.val_metric < best_metric) {
            best_metric = record.val_metric;
            best = params.clone(params.role);
            report.best_epoch = epoch;
        }
        lr = lr_plateau_step(history, lr, cfg.lr_patience);
        report.epochs.push_back(record);
    }
    report.best_val_metric = best_metric;
    return {std::move(best), report};
}

inline std::size_t no_mining(NetworkParams&, std::size_t) { return 0; }

}  // namespace detail

/// Step 1: the teacher, trained with the task loss on fully-visible data.
inline std::pair<NetworkParams, StageReport> train_stage1_teacher(const RunConfig& cfg, const DatasetSplit& data) {
    cfg.validate();
    for (const auto& img : data.train)
        if (img.occlusion != Occlusion::none)
            throw std::invalid_argument("train_stage1_teacher: data must be unoccluded");
    NetworkParams params = build(cfg.spec, cfg.seed, Role::teacher);
    auto batch_loss = [&](NetworkParams& p, const std::vector<std::size_t>& batch) {
        auto fwd = forward(p, cfg.spec, images_to_tensor(data.train, batch));
        return task_loss_batch(fwd.logits, detail::batch_targets(data.train, batch, cfg.task), cfg.task);
    };
    return detail::run_stage(std::move(params), cfg, 1, cfg.stage_epochs[0], cfg.stage_lr[0], data.train,
                             data.validation, batch_loss, detail::no_mining, "stage1");
}

/// Step 2: fine-tune a copy of the teacher on occluded data; this is the
/// no-distillation baseline.
inline std::pair<NetworkParams, StageReport> train_stage2_student(const NetworkParams& teacher, const RunConfig& cfg,
                                                                  const DatasetSplit& data) {
    cfg.validate();
    NetworkParams student = teacher.clone(Role::student);
    auto train_occluded = occlude_all(data.train, cfg.occlusion_mode);
    auto val_occluded = occlude_all(data.validation, cfg.occlusion_mode);
    auto batch_loss = [&](NetworkParams& p, const std::vector<std::size_t>& batch) {
        auto fwd = forward(p, cfg.spec, images_to_tensor(train_occluded, batch));
        return task_loss_batch(fwd.logits, detail::batch_targets(train_occluded, batch, cfg.task), cfg.task);
    };
    return detail::run_stage(std::move(student), cfg, 2, cfg.stage_epochs[1], cfg.stage_lr[1], train_occluded,
                             val_occluded, batch_loss, detail::no_mining, "stage2");
}

/// Step 3: distill the frozen teacher into the stage-2 student. The teacher
/// consumes the fully-visible copy of each sample while the student consumes
/// the occluded copy. Triplet mode mines one triplet list per epoch.
inline std::pair<NetworkParams, StageReport> train_stage3_distill(const NetworkParams& teacher,
                                                                  const NetworkParams& student, const RunConfig& cfg,
                                                                  const DatasetSplit& data) {
    cfg.validate();
    if (cfg.distill.mode == DistillMode::standard_kd && !cfg.task.is_classification())
        throw std::invalid_argument("train_stage3_distill: standard_kd is incompatible with regression tasks");

    auto train_occluded = occlude_all(data.train, cfg.occlusion_mode);
    auto val_occluded = occlude_all(data.validation, cfg.occlusion_mode);
    NetworkParams working = student.clone(Role::student);

    if (cfg.distill.mode == DistillMode::triplet_kd) {
        // teacher embeddings of the fully-visible train set are constant all stage
        EmbeddingMatrix teacher_emb = compute_embeddings(teacher, cfg.spec, data.train);
        std::vector<Triplet> triplets;
        auto mine_hook = [&](NetworkParams& p, std::size_t epoch) {
            MiningConfig mining = cfg.mining;
            mining.seed = detail::mix_seed(cfg.seed, 777 + epoch);
            triplets = mine_epoch(p, teacher, cfg.spec, data.train, train_occluded, cfg.task, mining);
            return triplets.size();
        };
        auto batch_loss = [&](NetworkParams& p, const std::vector<std::size_t>& batch) {
            // batches index the triplet list (one triplet per anchor, in anchor order)
            std::vector<std::size_t> anchor_idx, negative_idx;
            std::vector<double> pos_emb;
            for (std::size_t b : batch) {
                const Triplet& t = triplets[b];
                anchor_idx.push_back(t.anchor_idx);
                negative_idx.push_back(t.negative_idx);
                pos_emb.insert(pos_emb.end(), teacher_emb.row(t.positive_idx),
                               teacher_emb.row(t.positive_idx) + teacher_emb.cols);
            }
            auto anchor_fwd = forward(p, cfg.spec, images_to_tensor(train_occluded, anchor_idx));
            auto negative_fwd = forward(p, cfg.spec, images_to_tensor(train_occluded, negative_idx));
            Tensor positives = Tensor::from_data({batch.size(), teacher_emb.cols}, std::move(pos_emb));
            return triplet_kd_loss_batched(anchor_fwd.embedding, positives, negative_fwd.embedding,
                                           anchor_fwd.logits, detail::batch_targets(train_occluded, anchor_idx,
                                                                                    cfg.task),
                                           cfg.task, cfg.distill);
        };
        return detail::run_stage(std::move(working), cfg, 3, cfg.stage_epochs[2], cfg.stage_lr[2], train_occluded,
                                 val_occluded, batch_loss, mine_hook, "stage3");
    }

    auto batch_loss = [&](NetworkParams& p, const std::vector<std::size_t>& batch) {
        auto student_fwd = forward(p, cfg.spec, images_to_tensor(train_occluded, batch));
        ForwardOutput teacher_fwd;
        {
            NoGradGuard frozen;
            teacher_fwd = forward(teacher, cfg.spec, images_to_tensor(data.train, batch));
        }
        auto targets = detail::batch_targets(train_occluded, batch, cfg.task);
        if (cfg.distill.mode == DistillMode::standard_kd)
            return standard_kd_loss_batch(student_fwd.logits, teacher_fwd.logits, targets, cfg.task, cfg.distill);
        return hint_kd_loss_batch(student_fwd.hint, teacher_fwd.hint, student_fwd.logits, targets, cfg.task,
                                  cfg.distill, batch.size());
    };
    return detail::run_stage(std::move(working), cfg, 3, cfg.stage_epochs[2], cfg.stage_lr[2], train_occluded,
                             val_occluded, batch_loss, detail::no_mining, "stage3");
}

}  // namespace distillkit
