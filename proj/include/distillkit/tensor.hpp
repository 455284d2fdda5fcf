// Minimal reverse-mode autodiff over dense double tensors.
//
// Define-by-run: every differentiable op records its inputs and a backward
// rule on the result node; Tensor::backward() on a scalar root replays the
// tape in reverse topological order. Dense row-major storage, double
// precision throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace distillkit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this node

    // graph edges; empty for leaves and no-grad results
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const TensorNode&)> backward_fn;

    TensorNode(Shape s, std::vector<double> d, bool rg)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {}

    void accumulate(const std::vector<double>& contribution) {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        for (std::size_t i = 0; i < contribution.size(); ++i) grad[i] += contribution[i];
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// RAII switch that disables graph recording (evaluation passes).
class NoGradGuard {
 public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape.empty()) throw std::invalid_argument("tensor: shape must be non-empty");
        for (std::size_t d : shape) {
            if (d == 0) throw std::invalid_argument("tensor: shape dimensions must be positive, got " + shape_str(shape));
        }
        if (numel(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        }
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>(std::move(shape), std::move(data), requires_grad);
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return checked()->shape; }
    std::size_t size() const { return checked()->data.size(); }
    const std::vector<double>& data() const { return checked()->data; }
    std::vector<double>& mutable_data() { return checked()->data; }
    bool requires_grad() const { return checked()->requires_grad; }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::runtime_error("tensor: no gradient present");
        return node_->grad;
    }
    void zero_grad() {
        if (defined()) node_->grad.clear();
    }

    double item() const {
        if (size() != 1) throw std::invalid_argument("tensor: item() requires a scalar, got " + shape_str(shape()));
        return node_->data[0];
    }

    /// Copy of the values with no graph history.
    Tensor detach() const { return from_data(shape(), data(), false); }

    /// Deep copy preserving requires_grad, dropping graph history.
    Tensor clone() const { return from_data(shape(), data(), requires_grad()); }

    bool is_leaf() const { return checked()->parents.empty() && !checked()->backward_fn; }

    /// Reverse pass from a scalar root. Every requires_grad leaf reachable
    /// from the root ends up holding d(root)/d(leaf).
    void backward() const {
        const auto& root = checked();
        if (root->data.size() != 1) {
            throw std::invalid_argument("backward: root must be a scalar, got " + shape_str(root->shape));
        }
        if (!root->backward_fn && root->parents.empty()) {
            throw std::runtime_error("backward: root was not produced by a forward pass");
        }
        // iterative post-order topological sort
        std::vector<detail::TensorNode*> order;
        std::unordered_set<detail::TensorNode*> visited;
        std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
        stack.emplace_back(root.get(), 0);
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next_child] = stack.back();
            if (next_child < node->parents.size()) {
                detail::TensorNode* child = node->parents[next_child].get();
                ++next_child;
                if (visited.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        root->grad.assign(1, 1.0);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::TensorNode* node = *it;
            if (node->grad.empty() || !node->backward_fn) continue;
            node->backward_fn(*node);
        }
    }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
    const std::shared_ptr<detail::TensorNode>& checked() const {
        if (!node_) throw std::runtime_error("tensor: operation on an empty tensor");
        return node_;
    }

    std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          std::function<void(const TensorNode&)> backward_fn) {
    bool needs = grad_mode_flag();
    if (needs) {
        needs = false;
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    }
    Tensor out = Tensor::from_data(std::move(shape), std::move(data), needs);
    if (needs) {
        auto node = out.node();
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

// true when `suffix` equals the trailing dimensions of `shape`
inline bool is_suffix(const Shape& suffix, const Shape& shape) {
    if (suffix.size() > shape.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), shape.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise primitives
// ---------------------------------------------------------------------------

/// Elementwise sum. The second operand may be a trailing-suffix shape of the
/// first (e.g. a bias row added to every row); its gradient is reduced over
/// the broadcast leading dimensions.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool broadcast = a.shape() != b.shape();
    if (broadcast) {
        detail::require(detail::is_suffix(b.shape(), a.shape()),
                        "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto& av = a.data();
    const auto& bv = b.data();
    const std::size_t bn = bv.size();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % bn];
    auto an = a.node();
    auto bnode = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bnode, bn](const detail::TensorNode& self) {
        if (an->requires_grad) an->accumulate(self.grad);
        if (bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bnode->grad[i % bn] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    auto an = a.node();
    auto bnode = b.node();
    return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bnode](const detail::TensorNode& self) {
        if (an->requires_grad) an->accumulate(self.grad);
        if (bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bnode->grad[i] -= self.grad[i];
        }
    });
}

/// Elementwise product. Either operand may be a scalar (shape {1}).
inline Tensor mul(const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    detail::require(a.shape() == b.shape() || a_scalar || b_scalar,
                    "mul-elementwise: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    const std::size_t n = std::max(av.size(), bv.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = av[a_scalar ? 0 : i] * bv[b_scalar ? 0 : i];
    Shape out_shape = a_scalar ? b.shape() : a.shape();
    auto an = a.node();
    auto bnode = b.node();
    return detail::make_result(out_shape, std::move(out), {a, b},
                               [an, bnode, a_scalar, b_scalar, n](const detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                an->grad[a_scalar ? 0 : i] += self.grad[i] * bnode->data[b_scalar ? 0 : i];
        }
        if (bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                bnode->grad[b_scalar ? 0 : i] += self.grad[i] * an->data[a_scalar ? 0 : i];
        }
    });
}

inline Tensor scalar_scale(const Tensor& a, double factor) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [an, factor](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * factor;
    });
}

inline Tensor scalar_add(const Tensor& a, double offset) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + offset;
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [an](const detail::TensorNode& self) {
        if (an->requires_grad) an->accumulate(self.grad);
    });
}

inline Tensor relu(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [an](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

inline Tensor abs(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::fabs(av[i]);
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [an](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double x = an->data[i];
            if (x > 0.0) an->grad[i] += self.grad[i];
            else if (x < 0.0) an->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor log(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a}, [an](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / an->data[i];
    });
}

inline Tensor exp(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    auto an = a.node();
    auto cached = std::make_shared<std::vector<double>>(out);
    return detail::make_result(a.shape(), std::move(out), {a}, [an, cached](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * (*cached)[i];
    });
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    auto an = a.node();
    return detail::make_result({1}, {total}, {a}, [an](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (double& g : an->grad) g += self.grad[0];
    });
}

/// Axis reduction on a 2D tensor: axis 0 collapses rows, axis 1 collapses
/// columns.
inline Tensor sum(const Tensor& a, std::size_t axis) {
    detail::require(a.shape().size() == 2, "sum: axis reduction requires a 2D tensor, got " + shape_str(a.shape()));
    detail::require(axis < 2, "sum: axis out of range");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    const auto& av = a.data();
    std::vector<double> out(axis == 0 ? cols : rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += av[r * cols + c];
    auto an = a.node();
    Shape out_shape{axis == 0 ? cols : rows};
    return detail::make_result(out_shape, std::move(out), {a}, [an, rows, cols, axis](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) an->grad[r * cols + c] += self.grad[axis == 0 ? c : r];
    });
}

inline Tensor mean(const Tensor& a) { return scalar_scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor mean(const Tensor& a, std::size_t axis) {
    detail::require(a.shape().size() == 2, "mean: axis reduction requires a 2D tensor, got " + shape_str(a.shape()));
    const double denom = static_cast<double>(a.shape()[axis]);
    return scalar_scale(sum(a, axis), 1.0 / denom);
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    detail::require(numel(new_shape) == a.size(), "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                                      shape_str(new_shape) + " (element count differs)");
    auto an = a.node();
    return detail::make_result(std::move(new_shape), a.data(), {a}, [an](const detail::TensorNode& self) {
        if (an->requires_grad) an->accumulate(self.grad);
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    detail::require(!parts.empty(), "concat: needs at least one input");
    const Shape& base = parts.front().shape();
    detail::require(axis < base.size(), "concat: axis out of range for " + shape_str(base));
    Shape out_shape = base;
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        detail::require(s.size() == base.size(), "concat: rank mismatch " + shape_str(base) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            detail::require(d == axis || s[d] == base[d],
                            "concat: shape mismatch " + shape_str(base) + " vs " + shape_str(s));
        axis_total += s[axis];
    }
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= base[d];
    for (std::size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

    std::vector<double> out(numel(out_shape));
    std::size_t axis_offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(axis_offset);
        const std::size_t pa = p.shape()[axis];
        const auto& pv = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * pa * inner), pa * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * axis_total + axis_offset) * inner));
        axis_offset += pa;
    }
    std::vector<std::shared_ptr<detail::TensorNode>> part_nodes;
    std::vector<std::size_t> part_axis;
    for (const auto& p : parts) {
        part_nodes.push_back(p.node());
        part_axis.push_back(p.shape()[axis]);
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts,
                               [part_nodes, part_axis, offsets, outer, inner, axis_total](const detail::TensorNode& self) {
        for (std::size_t k = 0; k < part_nodes.size(); ++k) {
            auto& node = part_nodes[k];
            if (!node->requires_grad) continue;
            node->ensure_grad();
            const std::size_t pa = part_axis[k];
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < pa * inner; ++j)
                    node->grad[o * pa * inner + j] += self.grad[(o * axis_total + offsets[k]) * inner + j];
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra and spatial primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.shape().size() == 2 && b.shape().size() == 2,
                    "matmul: expects 2D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    detail::require(b.shape()[0] == k,
                    "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
        }
    auto an = a.node();
    auto bnode = b.node();
    return detail::make_result({n, m}, std::move(out), {a, b}, [an, bnode, n, k, m](const detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = self.grad[i * m + j];
                    for (std::size_t p = 0; p < k; ++p) an->grad[i * k + p] += g * bnode->data[p * m + j];
                }
        }
        if (bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = an->data[i * k + p];
                    for (std::size_t j = 0; j < m; ++j) bnode->grad[p * m + j] += aip * self.grad[i * m + j];
                }
        }
    });
}

/// Direct-loop 2D convolution. Input (N,Ci,H,W), kernel (Co,Ci,kh,kw),
/// optional bias (Co). Output spatial size (H + 2*pad - kh)/stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias = Tensor(),
                     std::size_t stride = 1, std::size_t pad = 0) {
    detail::require(input.shape().size() == 4, "conv2d: input must be (N,C,H,W), got " + shape_str(input.shape()));
    detail::require(kernel.shape().size() == 4,
                    "conv2d: kernel must be (Co,Ci,kh,kw), got " + shape_str(kernel.shape()));
    detail::require(stride >= 1, "conv2d: stride must be positive");
    const std::size_t N = input.shape()[0], Ci = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
    const std::size_t Co = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
    detail::require(kernel.shape()[1] == Ci, "conv2d: channel mismatch, input " + shape_str(input.shape()) +
                                                 " vs kernel " + shape_str(kernel.shape()));
    detail::require(H + 2 * pad >= kh && W + 2 * pad >= kw,
                    "conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                        shape_str(input.shape()));
    const bool has_bias = bias.defined();
    if (has_bias)
        detail::require(bias.shape() == Shape{Co}, "conv2d: bias must be (Co), got " + shape_str(bias.shape()));
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;

    const auto& x = input.data();
    const auto& w = kernel.data();
    std::vector<double> out(N * Co * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co) {
            const double b0 = has_bias ? bias.data()[co] : 0.0;
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    double acc = b0;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + r) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            const double* xrow = &x[((n * Ci + ci) * H + static_cast<std::size_t>(ih)) * W];
                            const double* wrow = &w[((co * Ci + ci) * kh + r) * kw];
                            for (std::size_t c = 0; c < kw; ++c) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + c) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += xrow[iw] * wrow[c];
                            }
                        }
                    out[((n * Co + co) * Ho + oh) * Wo + ow] = acc;
                }
        }

    std::vector<Tensor> inputs{input, kernel};
    if (has_bias) inputs.push_back(bias);
    auto xn = input.node();
    auto wn = kernel.node();
    auto bn = has_bias ? bias.node() : nullptr;
    return detail::make_result({N, Co, Ho, Wo}, std::move(out), inputs,
                               [=](const detail::TensorNode& self) {
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn && bn->requires_grad) bn->ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const double g = self.grad[((n * Co + co) * Ho + oh) * Wo + ow];
                        if (g == 0.0) continue;
                        if (bn && bn->requires_grad) bn->grad[co] += g;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            for (std::size_t r = 0; r < kh; ++r) {
                                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + r) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t c = 0; c < kw; ++c) {
                                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + c) -
                                                              static_cast<std::ptrdiff_t>(pad);
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t xi =
                                        ((n * Ci + ci) * H + static_cast<std::size_t>(ih)) * W +
                                        static_cast<std::size_t>(iw);
                                    const std::size_t wi = ((co * Ci + ci) * kh + r) * kw + c;
                                    if (xn->requires_grad) xn->grad[xi] += g * wn->data[wi];
                                    if (wn->requires_grad) wn->grad[wi] += g * xn->data[xi];
                                }
                            }
                    }
    });
}

/// Non-overlapping max pooling with square window (stride == window). Ties
/// break toward the first maximal element in row-major order.
inline Tensor max_pool2d(const Tensor& input, std::size_t window) {
    detail::require(input.shape().size() == 4,
                    "max-pool2d: input must be (N,C,H,W), got " + shape_str(input.shape()));
    detail::require(window >= 1, "max-pool2d: window must be positive");
    const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
    detail::require(H % window == 0 && W % window == 0,
                    "max-pool2d: window " + std::to_string(window) + " does not divide input " +
                        shape_str(input.shape()));
    const std::size_t Ho = H / window, Wo = W / window;
    const auto& x = input.data();
    std::vector<double> out(N * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t r = 0; r < window; ++r)
                    for (std::size_t c = 0; c < window; ++c) {
                        const std::size_t idx = (nc * H + oh * window + r) * W + ow * window + c;
                        if (x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                const std::size_t oi = (nc * Ho + oh) * Wo + ow;
                out[oi] = best;
                (*argmax)[oi] = best_idx;
            }
    auto xn = input.node();
    return detail::make_result({N, C, Ho, Wo}, std::move(out), {input},
                               [xn, argmax](const detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[(*argmax)[i]] += self.grad[i];
    });
}

/// (N,C,H,W) -> (N,C) spatial mean.
inline Tensor global_avg_pool(const Tensor& input) {
    detail::require(input.shape().size() == 4,
                    "global-avg-pool: input must be (N,C,H,W), got " + shape_str(input.shape()));
    const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
    const double inv = 1.0 / static_cast<double>(H * W);
    const auto& x = input.data();
    std::vector<double> out(N * C, 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) acc += x[nc * H * W + i];
        out[nc] = acc * inv;
    }
    auto xn = input.node();
    return detail::make_result({N, C}, std::move(out), {input}, [xn, H, W, inv](const detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
            const double g = self.grad[nc] * inv;
            for (std::size_t i = 0; i < H * W; ++i) xn->grad[nc * H * W + i] += g;
        }
    });
}

/// Multiplies row i of a 2D tensor by factors[i].
inline Tensor scale_rows(const Tensor& a, const Tensor& factors) {
    detail::require(a.shape().size() == 2, "scale-rows: expects a 2D tensor, got " + shape_str(a.shape()));
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    detail::require(factors.shape() == Shape{rows},
                    "scale-rows: factor shape " + shape_str(factors.shape()) + " does not match rows");
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a.data()[r * cols + c] * factors.data()[r];
    auto an = a.node();
    auto fn = factors.node();
    return detail::make_result(a.shape(), std::move(out), {a, factors},
                               [an, fn, rows, cols](const detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    an->grad[r * cols + c] += self.grad[r * cols + c] * fn->data[r];
        }
        if (fn->requires_grad) {
            fn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    fn->grad[r] += self.grad[r * cols + c] * an->data[r * cols + c];
        }
    });
}

/// Sum of squared differences over all elements, as one scalar.
inline Tensor squared_l2_distance(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "squared-l2-distance: shape mismatch " + shape_str(a.shape()) + " vs " +
                                                shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        total += d * d;
    }
    auto an = a.node();
    auto bnode = b.node();
    return detail::make_result({1}, {total}, {a, b}, [an, bnode](const detail::TensorNode& self) {
        const double g = self.grad[0];
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < an->data.size(); ++i)
                an->grad[i] += 2.0 * g * (an->data[i] - bnode->data[i]);
        }
        if (bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t i = 0; i < bnode->data.size(); ++i)
                bnode->grad[i] -= 2.0 * g * (an->data[i] - bnode->data[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

/// Row-wise log-softmax (1D treated as a single row). Stable via
/// max-subtraction; the shift is a constant so gradients are unaffected.
inline Tensor log_softmax(const Tensor& a) {
    detail::require(a.shape().size() == 1 || a.shape().size() == 2,
                    "log-softmax: expects a vector or a batch of rows, got " + shape_str(a.shape()));
    const std::size_t rows = a.shape().size() == 2 ? a.shape()[0] : 1;
    const std::size_t cols = a.shape().size() == 2 ? a.shape()[1] : a.shape()[0];
    const auto& x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = &x[r * cols];
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (std::size_t c = 0; c < cols; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
    }
    auto softmax_cache = std::make_shared<std::vector<double>>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) (*softmax_cache)[i] = std::exp(out[i]);
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), {a},
                               [an, softmax_cache, rows, cols](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double gsum = 0.0;
            for (std::size_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                an->grad[r * cols + c] += self.grad[r * cols + c] - (*softmax_cache)[r * cols + c] * gsum;
        }
    });
}

/// softmax(logits / tau), row-wise. tau = 1 is the plain softmax.
inline Tensor softmax_with_temperature(const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_with_temperature: tau must be positive");
    return exp(log_softmax(scalar_scale(logits, 1.0 / tau)));
}

inline Tensor softmax(const Tensor& logits) { return softmax_with_temperature(logits, 1.0); }

/// out[i] = x[i, indices[i]] for a 2D input; used to select per-sample
/// log-probabilities by target class.
inline Tensor take_per_row(const Tensor& a, const std::vector<std::size_t>& indices) {
    detail::require(a.shape().size() == 2, "take-per-row: expects a 2D tensor, got " + shape_str(a.shape()));
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    detail::require(indices.size() == rows, "take-per-row: index count does not match row count");
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        detail::require(indices[r] < cols, "take-per-row: index " + std::to_string(indices[r]) +
                                               " out of range for " + shape_str(a.shape()));
        out[r] = a.data()[r * cols + indices[r]];
    }
    auto an = a.node();
    auto idx = std::make_shared<std::vector<std::size_t>>(indices);
    return detail::make_result({rows}, std::move(out), {a}, [an, idx, cols](const detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < self.grad.size(); ++r) an->grad[r * cols + (*idx)[r]] += self.grad[r];
    });
}

// ---------------------------------------------------------------------------
// string-keyed primitive dispatcher
// ---------------------------------------------------------------------------

struct PrimitiveAttrs {
    double scale = 1.0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t window = 2;
    int axis = -1;  // -1 means full reduction for sum/mean, required for concat
    Shape new_shape;
};

/// Applies one named primitive to `inputs`. Kinds match the operation set of
/// the library; unknown names raise.
inline Tensor forward_primitive(const std::string& kind, const std::vector<Tensor>& inputs,
                                const PrimitiveAttrs& attrs = {}) {
    auto arity = [&](std::size_t n) {
        detail::require(inputs.size() == n,
                        kind + ": expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    };
    if (kind == "add") { arity(2); return add(inputs[0], inputs[1]); }
    if (kind == "sub") { arity(2); return sub(inputs[0], inputs[1]); }
    if (kind == "mul-elementwise") { arity(2); return mul(inputs[0], inputs[1]); }
    if (kind == "matmul") { arity(2); return matmul(inputs[0], inputs[1]); }
    if (kind == "conv2d") {
        detail::require(inputs.size() == 2 || inputs.size() == 3, "conv2d: expected 2 or 3 inputs");
        return conv2d(inputs[0], inputs[1], inputs.size() == 3 ? inputs[2] : Tensor(), attrs.stride, attrs.pad);
    }
    if (kind == "relu") { arity(1); return relu(inputs[0]); }
    if (kind == "max-pool2d") { arity(1); return max_pool2d(inputs[0], attrs.window); }
    if (kind == "global-avg-pool") { arity(1); return global_avg_pool(inputs[0]); }
    if (kind == "reshape") { arity(1); return reshape(inputs[0], attrs.new_shape); }
    if (kind == "concat") {
        detail::require(attrs.axis >= 0, "concat: axis attribute required");
        return concat(inputs, static_cast<std::size_t>(attrs.axis));
    }
    if (kind == "scalar-scale") { arity(1); return scalar_scale(inputs[0], attrs.scale); }
    if (kind == "log") { arity(1); return log(inputs[0]); }
    if (kind == "exp") { arity(1); return exp(inputs[0]); }
    if (kind == "sum") {
        arity(1);
        return attrs.axis < 0 ? sum(inputs[0]) : sum(inputs[0], static_cast<std::size_t>(attrs.axis));
    }
    if (kind == "mean") {
        arity(1);
        return attrs.axis < 0 ? mean(inputs[0]) : mean(inputs[0], static_cast<std::size_t>(attrs.axis));
    }
    if (kind == "squared-l2-distance") { arity(2); return squared_l2_distance(inputs[0], inputs[1]); }
    if (kind == "abs") { arity(1); return abs(inputs[0]); }
    throw std::invalid_argument("forward_primitive: unknown kind '" + kind + "'");
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace distillkit
