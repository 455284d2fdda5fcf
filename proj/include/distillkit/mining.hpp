// Offline hard-example mining, run once at the start of every epoch. Each
// occluded training sample becomes an anchor exactly once; the positive is
// the farthest same-class fully-visible candidate under the teacher
// embedding, the negative the closest different-class occluded candidate
// under the student embedding. Candidate subsets are drawn once per
// (epoch, class pool); ties break toward the lowest candidate index.

#pragma once

#include <distillkit/nn.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace distillkit {

struct MiningConfig {
    double pos_subset_fraction = 0.10;
    double neg_subset_fraction = 0.10;
    double regression_pos_threshold = 5.0;
    bool fresh_subset_per_anchor = false;  // alternative reading of the protocol
    std::uint64_t seed = 0;

    void validate() const {
        if (!(pos_subset_fraction > 0.0 && pos_subset_fraction <= 1.0))
            throw std::invalid_argument("mining config: pos_subset_fraction must be in (0,1]");
        if (!(neg_subset_fraction > 0.0 && neg_subset_fraction <= 1.0))
            throw std::invalid_argument("mining config: neg_subset_fraction must be in (0,1]");
        if (!(regression_pos_threshold > 0.0))
            throw std::invalid_argument("mining config: regression_pos_threshold must be positive");
    }
};

struct Triplet {
    std::size_t anchor_idx;    // into the occluded train view
    std::size_t positive_idx;  // into the fully-visible train view
    std::size_t negative_idx;  // into the occluded train view

    bool operator==(const Triplet&) const = default;
};

inline std::string dump_triplets(const std::vector<Triplet>& triplets) {
    std::ostringstream os;
    for (const auto& t : triplets) os << t.anchor_idx << ',' << t.positive_idx << ',' << t.negative_idx << '\n';
    return os.str();
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// first ceil(fraction * pool) elements of a seeded shuffle, returned sorted
inline std::vector<std::size_t> sample_subset(const std::vector<std::size_t>& pool, double fraction,
                                              std::uint64_t seed) {
    if (pool.empty()) return {};
    std::size_t want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pool.size())));
    want = std::clamp<std::size_t>(want, 1, pool.size());
    if (want == pool.size()) return pool;
    std::vector<std::size_t> shuffled = pool;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < want; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, shuffled.size() - 1);
        std::swap(shuffled[i], shuffled[pick(rng)]);
    }
    shuffled.resize(want);
    std::sort(shuffled.begin(), shuffled.end());
    return shuffled;
}

inline double sqdist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

/// Embedding-level mining core. `anchor_embeddings` are the student's
/// embeddings of the occluded train view (anchors and negatives);
/// `positive_embeddings` are the teacher's embeddings of the fully-visible
/// view, index-aligned with the anchors. `targets` holds class ids
/// (classification) or regression targets per index.
inline std::vector<Triplet> mine_from_embeddings(const EmbeddingMatrix& anchor_embeddings,
                                                 const EmbeddingMatrix& positive_embeddings,
                                                 const std::vector<double>& targets, const TaskKind& task,
                                                 const MiningConfig& cfg) {
    cfg.validate();
    const std::size_t n = anchor_embeddings.rows;
    if (positive_embeddings.rows != n || targets.size() != n)
        throw std::invalid_argument("mine: views must index the same samples");
    if (anchor_embeddings.cols != positive_embeddings.cols)
        throw std::invalid_argument("mine: embedding dimensions differ");
    const std::size_t d = anchor_embeddings.cols;

    // per-class candidate pools (classification) or global pools (regression)
    std::vector<std::vector<std::size_t>> pos_pool, neg_pool;
    std::vector<std::size_t> labels(n, 0);
    if (task.is_classification()) {
        const std::size_t k = task.num_classes;
        pos_pool.assign(k, {});
        neg_pool.assign(k, {});
        for (std::size_t i = 0; i < n; ++i) {
            const double t = targets[i];
            if (t < 0 || t >= static_cast<double>(k) || t != std::floor(t))
                throw std::invalid_argument("mine: class target " + std::to_string(t) + " out of range");
            labels[i] = static_cast<std::size_t>(t);
        }
        for (std::size_t i = 0; i < n; ++i) {
            pos_pool[labels[i]].push_back(i);
            for (std::size_t c = 0; c < k; ++c)
                if (c != labels[i]) neg_pool[c].push_back(i);
        }
    } else {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        pos_pool.push_back(all);
        neg_pool.push_back(all);
    }

    // one sampled subset per (epoch, pool); salts keep streams independent
    std::vector<std::vector<std::size_t>> pos_subset(pos_pool.size()), neg_subset(neg_pool.size());
    if (!cfg.fresh_subset_per_anchor) {
        for (std::size_t c = 0; c < pos_pool.size(); ++c) {
            pos_subset[c] = detail::sample_subset(pos_pool[c], cfg.pos_subset_fraction,
                                                  detail::mix_seed(cfg.seed, 2 * c));
            neg_subset[c] = detail::sample_subset(neg_pool[c], cfg.neg_subset_fraction,
                                                  detail::mix_seed(cfg.seed, 2 * c + 1));
        }
    }

    std::vector<Triplet> out;
    out.reserve(n);
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
        const std::size_t pool_id = task.is_classification() ? labels[anchor] : 0;
        std::vector<std::size_t> fresh_pos, fresh_neg;
        if (cfg.fresh_subset_per_anchor) {
            fresh_pos = detail::sample_subset(pos_pool[pool_id], cfg.pos_subset_fraction,
                                              detail::mix_seed(cfg.seed, 2 * anchor));
            fresh_neg = detail::sample_subset(neg_pool[pool_id], cfg.neg_subset_fraction,
                                              detail::mix_seed(cfg.seed, 2 * anchor + 1));
        }
        const auto& pos_candidates = cfg.fresh_subset_per_anchor ? fresh_pos : pos_subset[pool_id];
        const auto& neg_candidates = cfg.fresh_subset_per_anchor ? fresh_neg : neg_subset[pool_id];

        const double* a = anchor_embeddings.row(anchor);
        bool have_pos = false, have_neg = false;
        std::size_t best_pos = 0, best_neg = 0;
        double worst_dist = -1.0, best_dist = 0.0;
        for (std::size_t j : pos_candidates) {
            if (!task.is_classification() &&
                std::fabs(targets[anchor] - targets[j]) >= cfg.regression_pos_threshold)
                continue;
            const double dist = detail::sqdist(a, positive_embeddings.row(j), d);
            if (!have_pos || dist > worst_dist) {
                worst_dist = dist;
                best_pos = j;
                have_pos = true;
            }
        }
        for (std::size_t j : neg_candidates) {
            if (!task.is_classification() &&
                std::fabs(targets[anchor] - targets[j]) < cfg.regression_pos_threshold)
                continue;
            const double dist = detail::sqdist(a, anchor_embeddings.row(j), d);
            if (!have_neg || dist < best_dist) {
                best_dist = dist;
                best_neg = j;
                have_neg = true;
            }
        }
        if (!have_pos)
            throw std::runtime_error("mine: no positive candidate for anchor " + std::to_string(anchor));
        if (!have_neg)
            throw std::runtime_error("mine: no negative candidate for anchor " + std::to_string(anchor));
        out.push_back({anchor, best_pos, best_neg});
    }
    return out;
}

/// Network-level mining: embeds both views with the frozen networks, then
/// runs the embedding-level selection.
inline std::vector<Triplet> mine_epoch(const NetworkParams& student, const NetworkParams& teacher,
                                       const NetworkSpec& spec, const std::vector<LabeledImage>& train_full,
                                       const std::vector<LabeledImage>& train_occluded, const TaskKind& task,
                                       const MiningConfig& cfg) {
    if (train_full.size() != train_occluded.size())
        throw std::invalid_argument("mine_epoch: full and occluded views must index the same samples");
    std::vector<double> targets(train_full.size());
    for (std::size_t i = 0; i < train_full.size(); ++i) {
        const auto& f = train_full[i];
        const auto& o = train_occluded[i];
        if (task.is_classification()) {
            if (f.label != o.label) throw std::invalid_argument("mine_epoch: views disagree on sample targets");
            targets[i] = static_cast<double>(f.label);
        } else {
            if (f.target != o.target) throw std::invalid_argument("mine_epoch: views disagree on sample targets");
            targets[i] = f.target;
        }
    }
    EmbeddingMatrix student_emb = compute_embeddings(student, spec, train_occluded);
    EmbeddingMatrix teacher_emb = compute_embeddings(teacher, spec, train_full);
    return mine_from_embeddings(student_emb, teacher_emb, targets, task, cfg);
}

}  // namespace distillkit
