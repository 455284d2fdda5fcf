// The distillation objectives as differentiable scalars: task losses
// (cross-entropy / MAE), the weighted teacher-student loss with temperature
// softening, the L1 hint loss, the triplet loss with margin, and the combined
// triplet objective. Teacher-produced tensors are detached inside every loss,
// so no gradient can reach teacher parameters.

#pragma once

#include <distillkit/data.hpp>
#include <distillkit/tensor.hpp>

#include <string>
#include <vector>

namespace distillkit {

enum class DistillMode { standard_kd, hint_kd, triplet_kd };

inline std::string distill_mode_name(DistillMode m) {
    switch (m) {
        case DistillMode::standard_kd: return "standard_kd";
        case DistillMode::hint_kd: return "hint_kd";
        case DistillMode::triplet_kd: return "triplet_kd";
    }
    return "standard_kd";
}

inline DistillMode distill_mode_from_name(const std::string& name) {
    if (name == "standard_kd") return DistillMode::standard_kd;
    if (name == "hint_kd") return DistillMode::hint_kd;
    if (name == "triplet_kd") return DistillMode::triplet_kd;
    throw std::invalid_argument("unknown distill mode '" + name + "'");
}

enum class TripletReduction { mean, sum };

struct DistillConfig {
    double lambda = 0.7;
    double tau = 2.0;
    double margin_alpha = 0.2;
    DistillMode mode = DistillMode::standard_kd;
    TripletReduction triplet_reduction = TripletReduction::mean;
    bool normalize_embeddings = false;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw std::invalid_argument("distill config: lambda must be in [0,1], got " + std::to_string(lambda));
        if (!(tau >= 1.0))
            throw std::invalid_argument("distill config: tau must be >= 1, got " + std::to_string(tau));
        if (!(margin_alpha >= 0.0))
            throw std::invalid_argument("distill config: margin_alpha must be >= 0, got " +
                                        std::to_string(margin_alpha));
    }
};

namespace detail {

inline void require_mode(const DistillConfig& cfg, DistillMode expected, const char* fn) {
    if (cfg.mode != expected)
        throw std::invalid_argument(std::string(fn) + ": config mode is " + distill_mode_name(cfg.mode) +
                                    ", expected " + distill_mode_name(expected));
}

// Row-wise L2 normalization (small epsilon keeps zero rows finite).
inline Tensor normalize_rows(const Tensor& x) {
    Tensor sq = sum(mul(x, x), 1);
    Tensor inv = exp(scalar_scale(log(scalar_add(sq, 1e-12)), -0.5));
    return scale_rows(x, inv);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// task losses
// ---------------------------------------------------------------------------

/// Batched task loss. Classification: scores are logits (N,K), reduced as the
/// mean of -log softmax(scores)[target] rows (stable log-softmax form).
/// Regression: scores are (N,1) or (N), loss is mean |prediction - target|.
inline Tensor task_loss_batch(const Tensor& scores, const std::vector<double>& targets, const TaskKind& task) {
    if (task.is_classification()) {
        detail::require(scores.shape().size() == 2, "task_loss: classification scores must be (N,K), got " +
                                                        shape_str(scores.shape()));
        const std::size_t n = scores.shape()[0], k = scores.shape()[1];
        detail::require(targets.size() == n, "task_loss: target count does not match batch");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = targets[i];
            if (t < 0 || t >= static_cast<double>(k) || t != std::floor(t))
                throw std::invalid_argument("task_loss: target " + std::to_string(t) + " out of range for " +
                                            std::to_string(k) + " classes");
            idx[i] = static_cast<std::size_t>(t);
        }
        Tensor picked = take_per_row(log_softmax(scores), idx);
        return scalar_scale(sum(picked), -1.0 / static_cast<double>(n));
    }
    const std::size_t n = scores.shape()[0];
    detail::require(scores.size() == n, "task_loss: regression scores must be (N,1) or (N), got " +
                                            shape_str(scores.shape()));
    detail::require(targets.size() == n, "task_loss: target count does not match batch");
    Tensor flat = scores.shape().size() == 1 ? scores : reshape(scores, {n});
    Tensor t = Tensor::from_data({n}, targets, false);
    return mean(abs(sub(flat, t)));
}

/// Single-sample convenience: classification target is a class id,
/// regression target a real scalar.
inline Tensor task_loss(const Tensor& scores, double target, const TaskKind& task) {
    if (task.is_classification()) {
        detail::require(scores.shape().size() == 1,
                        "task_loss: single-sample logits must be a vector, got " + shape_str(scores.shape()));
        return task_loss_batch(reshape(scores, {1, scores.size()}), {target}, task);
    }
    detail::require(scores.size() == 1, "task_loss: regression prediction must be a scalar");
    return task_loss_batch(reshape(scores, {1}), {target}, task);
}

// ---------------------------------------------------------------------------
// standard teacher-student loss (temperature-softened)
// ---------------------------------------------------------------------------

/// lambda * CE(softmax(teacher/tau), softmax(student/tau))
///   + (1-lambda) * CE(target, softmax(student)),
/// both terms batch means; the soft term is the full-distribution
/// cross-entropy. Teacher logits are treated as constants.
inline Tensor standard_kd_loss_batch(const Tensor& student_logits, const Tensor& teacher_logits,
                                     const std::vector<double>& targets, const TaskKind& task,
                                     const DistillConfig& cfg) {
    detail::require_mode(cfg, DistillMode::standard_kd, "standard_kd_loss");
    cfg.validate();
    detail::require(task.is_classification(), "standard_kd_loss: regression tasks are not supported");
    detail::require(student_logits.shape() == teacher_logits.shape(),
                    "standard_kd_loss: logit shapes differ, " + shape_str(student_logits.shape()) + " vs " +
                        shape_str(teacher_logits.shape()));
    const std::size_t n = student_logits.shape()[0];

    Tensor teacher_soft;
    {
        NoGradGuard frozen;
        teacher_soft = softmax_with_temperature(teacher_logits.detach(), cfg.tau);
    }
    Tensor student_log_soft = log_softmax(scalar_scale(student_logits, 1.0 / cfg.tau));
    Tensor soft_term = scalar_scale(sum(mul(teacher_soft, student_log_soft)), -1.0 / static_cast<double>(n));
    Tensor hard_term = task_loss_batch(student_logits, targets, task);
    return add(scalar_scale(soft_term, cfg.lambda), scalar_scale(hard_term, 1.0 - cfg.lambda));
}

inline Tensor standard_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double target,
                               const TaskKind& task, const DistillConfig& cfg) {
    const std::size_t k = student_logits.size();
    return standard_kd_loss_batch(reshape(student_logits, {1, k}), reshape(teacher_logits, {1, k}), {target}, task,
                                  cfg);
}

// ---------------------------------------------------------------------------
// hint loss
// ---------------------------------------------------------------------------

/// lambda * ||H_T - H_S||_1 + (1-lambda) * task loss; the L1 norm sums over
/// all hint elements of a sample and is batch-mean reduced. `n_samples`
/// tells how many samples the hint tensors stack.
inline Tensor hint_kd_loss_batch(const Tensor& student_hint, const Tensor& teacher_hint, const Tensor& scores,
                                 const std::vector<double>& targets, const TaskKind& task, const DistillConfig& cfg,
                                 std::size_t n_samples) {
    detail::require_mode(cfg, DistillMode::hint_kd, "hint_kd_loss");
    cfg.validate();
    detail::require(student_hint.shape() == teacher_hint.shape(),
                    "hint_kd_loss: hint shapes differ, " + shape_str(student_hint.shape()) + " vs " +
                        shape_str(teacher_hint.shape()));
    detail::require(n_samples >= 1, "hint_kd_loss: empty batch");
    Tensor hint_term =
        scalar_scale(sum(abs(sub(teacher_hint.detach(), student_hint))), 1.0 / static_cast<double>(n_samples));
    Tensor hard_term = task_loss_batch(scores, targets, task);
    return add(scalar_scale(hint_term, cfg.lambda), scalar_scale(hard_term, 1.0 - cfg.lambda));
}

inline Tensor hint_kd_loss(const Tensor& student_hint, const Tensor& teacher_hint, const Tensor& scores,
                           double target, const TaskKind& task, const DistillConfig& cfg) {
    Tensor batch_scores = task.is_classification() ? reshape(scores, {1, scores.size()}) : reshape(scores, {1});
    return hint_kd_loss_batch(student_hint, teacher_hint, batch_scores, {target}, task, cfg, 1);
}

// ---------------------------------------------------------------------------
// triplet loss
// ---------------------------------------------------------------------------

/// max(0, ||E_S(a') - E_T(p)||^2 - ||E_S(a') - E_S(n')||^2 + alpha).
/// The positive embedding comes from the teacher and is kept constant;
/// gradients flow to the anchor and negative only.
inline Tensor triplet_term(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double alpha) {
    detail::require(anchor.shape() == positive.shape() && anchor.shape() == negative.shape(),
                    "triplet_term: embedding shapes differ, " + shape_str(anchor.shape()) + " / " +
                        shape_str(positive.shape()) + " / " + shape_str(negative.shape()));
    detail::require(alpha >= 0.0, "triplet_term: alpha must be >= 0");
    Tensor d_pos = squared_l2_distance(anchor, positive.detach());
    Tensor d_neg = squared_l2_distance(anchor, negative);
    return relu(scalar_add(sub(d_pos, d_neg), alpha));
}

struct EmbeddingTriple {
    Tensor anchor;    // student embedding of the occluded anchor
    Tensor positive;  // teacher embedding of the fully-visible positive
    Tensor negative;  // student embedding of the occluded negative
};

/// (1-lambda) * mean task loss + lambda * reduce(triplet terms); the triplet
/// sum is divided by the triplet count under the default mean reduction.
inline Tensor triplet_kd_loss(const std::vector<EmbeddingTriple>& triples, const Tensor& scores,
                              const std::vector<double>& targets, const TaskKind& task, const DistillConfig& cfg) {
    detail::require_mode(cfg, DistillMode::triplet_kd, "triplet_kd_loss");
    cfg.validate();
    if (triples.empty()) throw std::invalid_argument("triplet_kd_loss: empty batch");
    Tensor total;
    for (const auto& t : triples) {
        Tensor anchor = t.anchor, positive = t.positive, negative = t.negative;
        if (cfg.normalize_embeddings) {
            auto as_row = [](const Tensor& e) {
                return e.shape().size() == 2 ? e : reshape(e, {1, e.size()});
            };
            anchor = detail::normalize_rows(as_row(anchor));
            positive = detail::normalize_rows(as_row(positive));
            negative = detail::normalize_rows(as_row(negative));
        }
        Tensor term = triplet_term(anchor, positive, negative, cfg.margin_alpha);
        total = total.defined() ? add(total, term) : term;
    }
    if (cfg.triplet_reduction == TripletReduction::mean)
        total = scalar_scale(total, 1.0 / static_cast<double>(triples.size()));
    Tensor hard_term = task_loss_batch(scores, targets, task);
    return add(scalar_scale(hard_term, 1.0 - cfg.lambda), scalar_scale(total, cfg.lambda));
}

/// Matrix form used by the trainer: anchors/positives/negatives are (m,d)
/// stacks, one triplet per row.
inline Tensor triplet_kd_loss_batched(const Tensor& anchors, const Tensor& positives, const Tensor& negatives,
                                      const Tensor& scores, const std::vector<double>& targets, const TaskKind& task,
                                      const DistillConfig& cfg) {
    detail::require_mode(cfg, DistillMode::triplet_kd, "triplet_kd_loss");
    cfg.validate();
    detail::require(anchors.shape().size() == 2, "triplet_kd_loss: anchors must be (m,d)");
    detail::require(anchors.shape() == positives.shape() && anchors.shape() == negatives.shape(),
                    "triplet_kd_loss: embedding stack shapes differ");
    const std::size_t m = anchors.shape()[0];
    if (m == 0) throw std::invalid_argument("triplet_kd_loss: empty batch");

    Tensor a = anchors, p = positives.detach(), n = negatives;
    if (cfg.normalize_embeddings) {
        a = detail::normalize_rows(a);
        p = detail::normalize_rows(p);
        n = detail::normalize_rows(n);
    }
    Tensor diff_p = sub(a, p);
    Tensor diff_n = sub(a, n);
    Tensor d_pos = sum(mul(diff_p, diff_p), 1);
    Tensor d_neg = sum(mul(diff_n, diff_n), 1);
    Tensor hinge = relu(scalar_add(sub(d_pos, d_neg), cfg.margin_alpha));
    Tensor total = sum(hinge);
    if (cfg.triplet_reduction == TripletReduction::mean)
        total = scalar_scale(total, 1.0 / static_cast<double>(m));
    Tensor hard_term = task_loss_batch(scores, targets, task);
    return add(scalar_scale(hard_term, 1.0 - cfg.lambda), scalar_scale(total, cfg.lambda));
}

}  // namespace distillkit
