// Evaluation metrics and the paired McNemar significance test.
//
// McNemar's two branches are public on purpose: the chi-square form with
// continuity correction, and the exact binomial form used for small
// discordant counts (b + c < 25).

#pragma once

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace distillkit {

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("accuracy: prediction/truth lengths differ or are empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Macro-averaged per-class recall over the classes present in `truth`.
inline double weighted_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                                std::size_t num_classes) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("weighted_accuracy: prediction/truth lengths differ or are empty");
    std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes)
            throw std::invalid_argument("weighted_accuracy: class id " + std::to_string(truth[i]) + " out of range");
        total[static_cast<std::size_t>(truth[i])]++;
        correct[static_cast<std::size_t>(truth[i])] += pred[i] == truth[i];
    }
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (total[k] == 0) continue;
        recall_sum += static_cast<double>(correct[k]) / static_cast<double>(total[k]);
        ++present;
    }
    return recall_sum / static_cast<double>(present);
}

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("mae: prediction/truth lengths differ or are empty");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::fabs(pred[i] - truth[i]);
    return total / static_cast<double>(pred.size());
}

/// Two-sided exact binomial p for discordant counts (b, c) under p = 1/2.
inline double mcnemar_exact_p(std::size_t b, std::size_t c) {
    const std::size_t n = b + c;
    if (n == 0) return 1.0;
    const std::size_t m = std::min(b, c);
    // term_k = C(n,k) * 2^-n, accumulated incrementally
    double term = std::exp(-static_cast<double>(n) * std::log(2.0));
    double tail = term;
    for (std::size_t k = 0; k < m; ++k) {
        term *= static_cast<double>(n - k) / static_cast<double>(k + 1);
        tail += term;
    }
    return std::min(1.0, 2.0 * tail);
}

/// Continuity-corrected chi-square form: ((|b-c|-1)^2/(b+c), p) with 1 dof.
inline std::pair<double, double> mcnemar_chi2(std::size_t b, std::size_t c) {
    if (b + c == 0) return {0.0, 1.0};
    const double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
    const double statistic = diff * diff / static_cast<double>(b + c);
    const double p = std::erfc(std::sqrt(statistic / 2.0));
    return {statistic, p};
}

struct McNemarResult {
    std::size_t b = 0;  // A right, B wrong
    std::size_t c = 0;  // A wrong, B right
    double statistic = 0.0;
    double p_value = 1.0;
    bool degenerate = false;  // no discordant pairs
    bool exact = false;       // exact-binomial branch used
};

inline constexpr double kSignificanceLevel = 0.05;
inline constexpr std::size_t kExactBranchThreshold = 25;

inline McNemarResult mcnemar_test(const std::vector<int>& pred_a, const std::vector<int>& pred_b,
                                  const std::vector<int>& truth) {
    if (pred_a.size() != pred_b.size() || pred_a.size() != truth.size() || truth.empty())
        throw std::invalid_argument("mcnemar_test: inputs must be aligned and non-empty");
    McNemarResult r;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool a_right = pred_a[i] == truth[i];
        const bool b_right = pred_b[i] == truth[i];
        if (a_right && !b_right) ++r.b;
        if (!a_right && b_right) ++r.c;
    }
    if (r.b + r.c == 0) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }
    r.statistic = mcnemar_chi2(r.b, r.c).first;
    if (r.b + r.c < kExactBranchThreshold) {
        r.exact = true;
        r.p_value = mcnemar_exact_p(r.b, r.c);
    } else {
        r.p_value = mcnemar_chi2(r.b, r.c).second;
    }
    return r;
}

// -- evaluation report ---------------------------------------------------------

struct PairedCounts {
    std::size_t both_right = 0;
    std::size_t a_only = 0;
    std::size_t b_only = 0;
    std::size_t both_wrong = 0;

    std::size_t total() const { return both_right + a_only + b_only + both_wrong; }
};

inline PairedCounts paired_counts(const std::vector<int>& pred_a, const std::vector<int>& pred_b,
                                  const std::vector<int>& truth) {
    PairedCounts counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool a = pred_a[i] == truth[i];
        const bool b = pred_b[i] == truth[i];
        if (a && b) ++counts.both_right;
        else if (a) ++counts.a_only;
        else if (b) ++counts.b_only;
        else ++counts.both_wrong;
    }
    return counts;
}

struct EvalReport {
    std::size_t n_samples = 0;
    std::map<std::string, double> metrics;
    std::map<std::string, PairedCounts> paired;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n_samples"] = n_samples;
        j["metrics"] = metrics;
        nlohmann::json p = nlohmann::json::object();
        for (const auto& [name, counts] : paired)
            p[name] = {{"both_right", counts.both_right},
                       {"a_only", counts.a_only},
                       {"b_only", counts.b_only},
                       {"both_wrong", counts.both_wrong}};
        j["paired"] = std::move(p);
        return j;
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.n_samples = j.at("n_samples").get<std::size_t>();
        r.metrics = j.at("metrics").get<std::map<std::string, double>>();
        for (const auto& [name, counts] : j.at("paired").items()) {
            PairedCounts c;
            c.both_right = counts.at("both_right").get<std::size_t>();
            c.a_only = counts.at("a_only").get<std::size_t>();
            c.b_only = counts.at("b_only").get<std::size_t>();
            c.both_wrong = counts.at("both_wrong").get<std::size_t>();
            r.paired.emplace(name, c);
        }
        return r;
    }
};

}  // namespace distillkit
