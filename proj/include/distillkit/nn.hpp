// Small configurable conv nets exposing logits, a penultimate embedding and
// an optional hint activation. Plain stacks and residual stacks share one
// spec format; teacher and student are the same architecture by construction.

#pragma once

#include <distillkit/data.hpp>
#include <distillkit/tensor.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace distillkit {

enum class Role { teacher, student };

inline std::string role_name(Role r) { return r == Role::teacher ? "teacher" : "student"; }

struct ConvBlock {
    std::size_t out_channels = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
};

struct ResidualBlock {
    std::size_t out_channels = 8;
};

struct MaxPoolBlock {
    std::size_t window = 2;
};

using Block = std::variant<ConvBlock, ResidualBlock, MaxPoolBlock>;

enum class HeadKind { classifier, regressor };

struct NetworkSpec {
    Shape input_shape;  // (C, H, W)
    std::vector<Block> blocks;
    std::size_t embedding_dim = 64;
    HeadKind head = HeadKind::classifier;
    std::size_t num_classes = 2;  // classifier heads only
    std::optional<std::size_t> hint_block_index;

    std::size_t output_dim() const { return head == HeadKind::classifier ? num_classes : 1; }

    /// Walks the block stack checking channel/spatial consistency. Throws
    /// with the offending block index. Returns (channels, H, W) at the end.
    Shape validate() const {
        if (input_shape.size() != 3)
            throw std::invalid_argument("network spec: input_shape must be (C,H,W), got " + shape_str(input_shape));
        if (embedding_dim == 0) throw std::invalid_argument("network spec: embedding_dim must be positive");
        if (head == HeadKind::classifier && num_classes < 2)
            throw std::invalid_argument("network spec: classifier needs at least 2 classes");
        std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string where = "network spec: invalid block " + std::to_string(i) + ": ";
            if (const auto* conv = std::get_if<ConvBlock>(&blocks[i])) {
                if (conv->kernel % 2 == 0 || conv->kernel == 0)
                    throw std::invalid_argument(where + "conv kernel must be odd");
                if (conv->stride == 0) throw std::invalid_argument(where + "conv stride must be positive");
                const std::size_t pad = conv->kernel / 2;
                if (h + 2 * pad < conv->kernel || w + 2 * pad < conv->kernel)
                    throw std::invalid_argument(where + "kernel larger than feature map");
                h = (h + 2 * pad - conv->kernel) / conv->stride + 1;
                w = (w + 2 * pad - conv->kernel) / conv->stride + 1;
                c = conv->out_channels;
            } else if (const auto* res = std::get_if<ResidualBlock>(&blocks[i])) {
                if (res->out_channels == 0) throw std::invalid_argument(where + "residual needs channels");
                if (h < 3 || w < 3) throw std::invalid_argument(where + "feature map too small for 3x3 residual");
                c = res->out_channels;
            } else {
                const auto& pool = std::get<MaxPoolBlock>(blocks[i]);
                if (pool.window == 0 || h % pool.window != 0 || w % pool.window != 0)
                    throw std::invalid_argument(where + "pool window " + std::to_string(pool.window) +
                                                " does not divide " + std::to_string(h) + "x" + std::to_string(w));
                h /= pool.window;
                w /= pool.window;
            }
        }
        if (hint_block_index && *hint_block_index >= blocks.size())
            throw std::invalid_argument("network spec: hint_block_index out of range");
        return {c, h, w};
    }
};

struct NetworkParams {
    std::map<std::string, Tensor> values;  // ordered: deterministic iteration
    Role role = Role::teacher;

    Tensor& at(const std::string& id) {
        auto it = values.find(id);
        if (it == values.end()) throw std::runtime_error("network params: missing tensor '" + id + "'");
        return it->second;
    }
    const Tensor& at(const std::string& id) const {
        auto it = values.find(id);
        if (it == values.end()) throw std::runtime_error("network params: missing tensor '" + id + "'");
        return it->second;
    }

    NetworkParams clone(Role new_role) const {
        NetworkParams copy;
        copy.role = new_role;
        for (const auto& [id, t] : values) copy.values.emplace(id, t.clone());
        return copy;
    }

    void zero_grads() {
        for (auto& [id, t] : values) t.zero_grad();
    }

    bool bit_equal(const NetworkParams& other) const {
        if (values.size() != other.values.size()) return false;
        for (const auto& [id, t] : values) {
            auto it = other.values.find(id);
            if (it == other.values.end() || it->second.shape() != t.shape() || it->second.data() != t.data())
                return false;
        }
        return true;
    }
};

struct ForwardOutput {
    Tensor logits;      // pre-softmax scores, (N, K) or (N, 1)
    Tensor embedding;   // penultimate activations, (N, embedding_dim)
    Tensor hint;        // hint-layer activations (defaults to the embedding)
    Tensor prediction;  // softmax rows for classifiers, raw scalars for regressors
};

namespace detail {

inline Tensor he_init(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(values), true);
}

inline bool residual_needs_projection(const NetworkSpec& spec, std::size_t block_index) {
    std::size_t c = spec.input_shape[0];
    for (std::size_t i = 0; i < block_index; ++i) {
        if (const auto* conv = std::get_if<ConvBlock>(&spec.blocks[i])) c = conv->out_channels;
        else if (const auto* res = std::get_if<ResidualBlock>(&spec.blocks[i])) c = res->out_channels;
    }
    return std::get<ResidualBlock>(spec.blocks[block_index]).out_channels != c;
}

}  // namespace detail

/// Fan-in-scaled Gaussian (He) weights, zero biases; deterministic per seed.
inline NetworkParams build(const NetworkSpec& spec, std::uint64_t seed, Role role = Role::teacher) {
    Shape tail = spec.validate();
    std::mt19937_64 rng(seed);
    NetworkParams params;
    params.role = role;
    std::size_t c = spec.input_shape[0];
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const std::string prefix = "b" + std::to_string(i);
        if (const auto* conv = std::get_if<ConvBlock>(&spec.blocks[i])) {
            const std::size_t k = conv->kernel;
            params.values.emplace(prefix + ".w", detail::he_init(rng, {conv->out_channels, c, k, k}, c * k * k));
            params.values.emplace(prefix + ".b", Tensor::zeros({conv->out_channels}, true));
            c = conv->out_channels;
        } else if (const auto* res = std::get_if<ResidualBlock>(&spec.blocks[i])) {
            const std::size_t co = res->out_channels;
            params.values.emplace(prefix + ".c1.w", detail::he_init(rng, {co, c, 3, 3}, c * 9));
            params.values.emplace(prefix + ".c1.b", Tensor::zeros({co}, true));
            params.values.emplace(prefix + ".c2.w", detail::he_init(rng, {co, co, 3, 3}, co * 9));
            params.values.emplace(prefix + ".c2.b", Tensor::zeros({co}, true));
            if (detail::residual_needs_projection(spec, i)) {
                params.values.emplace(prefix + ".proj.w", detail::he_init(rng, {co, c, 1, 1}, c));
                params.values.emplace(prefix + ".proj.b", Tensor::zeros({co}, true));
            }
            c = co;
        }
    }
    params.values.emplace("embed.w", detail::he_init(rng, {tail[0], spec.embedding_dim}, tail[0]));
    params.values.emplace("embed.b", Tensor::zeros({spec.embedding_dim}, true));
    params.values.emplace("head.w", detail::he_init(rng, {spec.embedding_dim, spec.output_dim()}, spec.embedding_dim));
    params.values.emplace("head.b", Tensor::zeros({spec.output_dim()}, true));
    return params;
}

/// End-to-end differentiable forward pass on a (N,C,H,W) batch.
inline ForwardOutput forward(const NetworkParams& params, const NetworkSpec& spec, const Tensor& batch) {
    if (batch.shape().size() != 4 || batch.shape()[1] != spec.input_shape[0] ||
        batch.shape()[2] != spec.input_shape[1] || batch.shape()[3] != spec.input_shape[2]) {
        throw std::invalid_argument("forward: batch " + shape_str(batch.shape()) + " does not match spec input " +
                                    shape_str(spec.input_shape));
    }
    Tensor x = batch;
    Tensor hint;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const std::string prefix = "b" + std::to_string(i);
        if (const auto* conv = std::get_if<ConvBlock>(&spec.blocks[i])) {
            x = relu(conv2d(x, params.at(prefix + ".w"), params.at(prefix + ".b"), conv->stride, conv->kernel / 2));
        } else if (std::get_if<ResidualBlock>(&spec.blocks[i])) {
            Tensor branch = relu(conv2d(x, params.at(prefix + ".c1.w"), params.at(prefix + ".c1.b"), 1, 1));
            branch = conv2d(branch, params.at(prefix + ".c2.w"), params.at(prefix + ".c2.b"), 1, 1);
            Tensor shortcut = x;
            if (params.values.count(prefix + ".proj.w"))
                shortcut = conv2d(x, params.at(prefix + ".proj.w"), params.at(prefix + ".proj.b"), 1, 0);
            x = relu(add(branch, shortcut));
        } else {
            x = max_pool2d(x, std::get<MaxPoolBlock>(spec.blocks[i]).window);
        }
        if (spec.hint_block_index && *spec.hint_block_index == i) hint = x;
    }
    Tensor features = global_avg_pool(x);
    Tensor embedding = relu(add(matmul(features, params.at("embed.w")), params.at("embed.b")));
    Tensor logits = add(matmul(embedding, params.at("head.w")), params.at("head.b"));
    ForwardOutput out;
    out.logits = logits;
    out.embedding = embedding;
    out.hint = hint.defined() ? hint : embedding;
    out.prediction = spec.head == HeadKind::classifier ? softmax(logits) : logits;
    return out;
}

// -- desk-scale presets ------------------------------------------------------

/// 3 conv blocks, VGG-style plain stack.
inline NetworkSpec plain_small(Shape input_shape, HeadKind head, std::size_t num_classes = 2) {
    NetworkSpec spec;
    spec.input_shape = std::move(input_shape);
    spec.blocks = {ConvBlock{8, 3, 1}, MaxPoolBlock{2}, ConvBlock{16, 3, 1}, MaxPoolBlock{2}, ConvBlock{32, 3, 1}};
    spec.embedding_dim = 64;
    spec.head = head;
    spec.num_classes = num_classes;
    return spec;
}

/// 3 residual blocks behind a stem conv, ResNet-style.
inline NetworkSpec residual_small(Shape input_shape, HeadKind head, std::size_t num_classes = 2) {
    NetworkSpec spec;
    spec.input_shape = std::move(input_shape);
    spec.blocks = {ConvBlock{16, 3, 1}, ResidualBlock{16}, MaxPoolBlock{2},
                   ResidualBlock{16},  MaxPoolBlock{2},   ResidualBlock{16}};
    spec.embedding_dim = 64;
    spec.head = head;
    spec.num_classes = num_classes;
    return spec;
}

// -- batching helpers ---------------------------------------------------------

/// Stacks the selected images into a (N,1,H,W) input tensor.
inline Tensor images_to_tensor(const std::vector<LabeledImage>& images, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const std::size_t h = images[indices[0]].height, w = images[indices[0]].width;
    std::vector<double> data;
    data.reserve(indices.size() * h * w);
    for (std::size_t idx : indices) {
        const auto& img = images.at(idx);
        if (img.height != h || img.width != w)
            throw std::invalid_argument("images_to_tensor: inconsistent image sizes in batch");
        data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    return Tensor::from_data({indices.size(), 1, h, w}, std::move(data));
}

inline Tensor images_to_tensor(const std::vector<LabeledImage>& images) {
    std::vector<std::size_t> all(images.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return images_to_tensor(images, all);
}

/// Row-major stack of per-sample embeddings.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    const double* row(std::size_t r) const { return &values[r * cols]; }
};

/// Embeddings for every image, computed without graph recording.
inline EmbeddingMatrix compute_embeddings(const NetworkParams& params, const NetworkSpec& spec,
                                          const std::vector<LabeledImage>& images, std::size_t batch_size = 128) {
    NoGradGuard frozen;
    EmbeddingMatrix out;
    out.rows = images.size();
    out.cols = spec.embedding_dim;
    out.values.reserve(out.rows * out.cols);
    for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
        const std::size_t end = std::min(images.size(), begin + batch_size);
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        auto fwd = forward(params, spec, images_to_tensor(images, idx));
        out.values.insert(out.values.end(), fwd.embedding.data().begin(), fwd.embedding.data().end());
    }
    return out;
}

/// Argmax class per sample (ties to the lowest class id), without grad.
inline std::vector<int> predict_labels(const NetworkParams& params, const NetworkSpec& spec,
                                       const std::vector<LabeledImage>& images, std::size_t batch_size = 128) {
    NoGradGuard frozen;
    std::vector<int> out;
    out.reserve(images.size());
    for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
        const std::size_t end = std::min(images.size(), begin + batch_size);
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        auto fwd = forward(params, spec, images_to_tensor(images, idx));
        const std::size_t k = fwd.logits.shape()[1];
        for (std::size_t r = 0; r < idx.size(); ++r) {
            int best = 0;
            double best_score = fwd.logits.data()[r * k];
            for (std::size_t c = 1; c < k; ++c)
                if (fwd.logits.data()[r * k + c] > best_score) {
                    best_score = fwd.logits.data()[r * k + c];
                    best = static_cast<int>(c);
                }
            out.push_back(best);
        }
    }
    return out;
}

/// Scalar predictions of a regressor head, without grad.
inline std::vector<double> predict_values(const NetworkParams& params, const NetworkSpec& spec,
                                          const std::vector<LabeledImage>& images, std::size_t batch_size = 128) {
    NoGradGuard frozen;
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
        const std::size_t end = std::min(images.size(), begin + batch_size);
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        auto fwd = forward(params, spec, images_to_tensor(images, idx));
        out.insert(out.end(), fwd.prediction.data().begin(), fwd.prediction.data().end());
    }
    return out;
}

// -- checkpoint format -------------------------------------------------------
//
// JSON object: {"format": "distillkit-params", "version": 1, "role": ...,
// "params": {id: {"shape": [...], "data": [...]}}}. Doubles are written with
// shortest round-trip precision so save/load is bit-exact.

inline nlohmann::json params_to_json(const NetworkParams& params) {
    nlohmann::json j;
    j["format"] = "distillkit-params";
    j["version"] = 1;
    j["role"] = role_name(params.role);
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [id, t] : params.values) {
        values[id] = {{"shape", t.shape()}, {"data", t.data()}};
    }
    j["params"] = std::move(values);
    return j;
}

inline NetworkParams params_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "distillkit-params")
        throw std::runtime_error("checkpoint: not a distillkit parameter file");
    if (j.value("version", 0) != 1)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(j.value("version", 0)));
    NetworkParams params;
    params.role = j.value("role", "teacher") == "student" ? Role::student : Role::teacher;
    for (const auto& [id, entry] : j.at("params").items()) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        params.values.emplace(id, Tensor::from_data(std::move(shape), std::move(data), true));
    }
    return params;
}

inline void save_params(const NetworkParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out << params_to_json(params).dump(2) << '\n';
}

inline NetworkParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return params_from_json(j);
}

}  // namespace distillkit
