// Optimizers and the plateau learning-rate rule.

#pragma once

#include <distillkit/nn.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace distillkit {

enum class OptimizerKind { sgd_momentum, adam };

inline std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam";
}

inline OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "'");
}

inline constexpr double kMomentum = 0.9;  // fixed for sgd_momentum
inline constexpr double kLrFloor = 1e-7;

/// Divide the rate by 10 once the best validation metric (lower is better)
/// is at least `patience` epochs old, at most once per patience window.
inline double lr_plateau_step(const std::vector<double>& history, double current_lr, std::size_t patience) {
    if (patience < 1) throw std::invalid_argument("lr_plateau_step: patience must be >= 1");
    if (history.empty()) return current_lr;
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i] < history[best]) best = i;
    const std::size_t age = history.size() - best;
    if (age >= patience && (age - patience) % patience == 0) return std::max(current_lr / 10.0, kLrFloor);
    return current_lr;
}

/// Per-parameter optimizer state; step() consumes the gradients currently
/// stored on the parameter tensors.
class Optimizer {
 public:
    explicit Optimizer(OptimizerKind kind) : kind_(kind) {}

    void step(NetworkParams& params, double lr) {
        ++t_;
        for (auto& [id, tensor] : params.values) {
            if (!tensor.has_grad()) continue;
            const auto& g = tensor.grad();
            auto& w = tensor.mutable_data();
            if (kind_ == OptimizerKind::sgd_momentum) {
                auto& v = state_[id];
                if (v.size() != w.size()) v.assign(w.size(), 0.0);
                for (std::size_t i = 0; i < w.size(); ++i) {
                    v[i] = kMomentum * v[i] - lr * g[i];
                    w[i] += v[i];
                }
            } else {
                auto& m = state_[id];
                auto& v = second_[id];
                if (m.size() != w.size()) m.assign(w.size(), 0.0);
                if (v.size() != w.size()) v.assign(w.size(), 0.0);
                const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
                    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
                    w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
                }
            }
        }
    }

 private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    OptimizerKind kind_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> state_;   // velocity / first moment
    std::map<std::string, std::vector<double>> second_;  // adam second moment
};

}  // namespace distillkit
