#include <catch2/catch.hpp>

#include <distillkit/nn.hpp>

#include "helpers.hpp"

#include <cstdio>
#include <random>

using namespace distillkit;

namespace {

NetworkSpec tiny_classifier() {
    NetworkSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.blocks = {ConvBlock{2, 3, 1}};
    spec.embedding_dim = 3;
    spec.head = HeadKind::classifier;
    spec.num_classes = 2;
    return spec;
}

}  // namespace

TEST_CASE("build is deterministic per seed") {
    auto spec = plain_small({1, 16, 16}, HeadKind::classifier, 4);
    auto a = build(spec, 42);
    auto b = build(spec, 42);
    CHECK(a.bit_equal(b));
    auto c = build(spec, 43);
    CHECK_FALSE(a.bit_equal(c));
}

TEST_CASE("conv weight shapes follow the spec") {
    NetworkSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.blocks = {ConvBlock{4, 3, 1}};
    spec.embedding_dim = 8;
    spec.num_classes = 2;
    auto params = build(spec, 1);
    CHECK(params.at("b0.w").shape() == Shape{4, 1, 3, 3});
    CHECK(params.at("b0.b").shape() == Shape{4});
}

TEST_CASE("initializer mean is near zero") {
    NetworkSpec spec;
    spec.input_shape = {16, 8, 8};
    spec.blocks = {ConvBlock{128, 3, 1}};
    spec.embedding_dim = 8;
    spec.num_classes = 2;
    auto params = build(spec, 5);
    const auto& w = params.at("b0.w").data();
    REQUIRE(w.size() >= 10000);
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    const double sigma = std::sqrt(2.0 / (16.0 * 9.0));
    const double standard_error = sigma / std::sqrt(static_cast<double>(w.size()));
    CHECK(std::fabs(mean) <= 3.0 * standard_error);
}

TEST_CASE("teacher and student share parameter shapes") {
    auto spec = residual_small({1, 16, 16}, HeadKind::classifier, 4);
    auto teacher = build(spec, 7, Role::teacher);
    auto student = build(spec, 8, Role::student);
    REQUIRE(teacher.values.size() == student.values.size());
    for (const auto& [id, t] : teacher.values) CHECK(student.at(id).shape() == t.shape());
}

TEST_CASE("zeroed head gives zero logits and uniform prediction") {
    auto spec = tiny_classifier();
    auto params = build(spec, 3);
    for (double& v : params.at("head.w").mutable_data()) v = 0.0;
    for (double& v : params.at("head.b").mutable_data()) v = 0.0;
    auto out = forward(params, spec, Tensor::zeros({2, 1, 4, 4}));
    for (double v : out.logits.data()) CHECK(v == 0.0);
    for (double v : out.prediction.data()) CHECK(v == Approx(0.5).epsilon(1e-12));
}

TEST_CASE("batched forward keeps the batch dimension") {
    auto spec = tiny_classifier();
    auto params = build(spec, 4);
    std::mt19937_64 rng(10);
    auto batch = testutil::random_tensor(rng, {3, 1, 4, 4}, false, 0.0, 1.0);
    auto out = forward(params, spec, batch);
    CHECK(out.logits.shape() == Shape{3, 2});
    CHECK(out.embedding.shape() == Shape{3, 3});
    double row0 = out.prediction.data()[0] + out.prediction.data()[1];
    CHECK(row0 == Approx(1.0).margin(1e-9));
    double row2 = out.prediction.data()[4] + out.prediction.data()[5];
    CHECK(row2 == Approx(1.0).margin(1e-9));
}

TEST_CASE("prediction rows are normalized on random input") {
    auto spec = plain_small({1, 8, 8}, HeadKind::classifier, 4);
    auto params = build(spec, 11);
    std::mt19937_64 rng(11);
    auto batch = testutil::random_tensor(rng, {5, 1, 8, 8}, false, 0.0, 1.0);
    auto out = forward(params, spec, batch);
    for (std::size_t r = 0; r < 5; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) total += out.prediction.data()[r * 4 + c];
        CHECK(total == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("residual blocks with zero branch weights are the identity") {
    NetworkSpec with_res;
    with_res.input_shape = {1, 8, 8};
    with_res.blocks = {ConvBlock{4, 3, 1}, ResidualBlock{4}, ResidualBlock{4}};
    with_res.embedding_dim = 6;
    with_res.num_classes = 3;

    NetworkSpec shortcut_only = with_res;
    shortcut_only.blocks = {ConvBlock{4, 3, 1}};

    auto params = build(with_res, 21);
    for (const std::string& id : {"b1.c1.w", "b1.c1.b", "b1.c2.w", "b1.c2.b",
                                  "b2.c1.w", "b2.c1.b", "b2.c2.w", "b2.c2.b"})
        for (double& v : params.at(id).mutable_data()) v = 0.0;

    NetworkParams plain;
    plain.role = params.role;
    for (const std::string& id : {"b0.w", "b0.b", "embed.w", "embed.b", "head.w", "head.b"})
        plain.values.emplace(id, params.at(id).clone());

    std::mt19937_64 rng(33);
    auto batch = testutil::random_tensor(rng, {2, 1, 8, 8}, false, 0.0, 1.0);
    auto a = forward(params, with_res, batch);
    auto b = forward(plain, shortcut_only, batch);
    for (std::size_t i = 0; i < a.logits.size(); ++i)
        CHECK(a.logits.data()[i] == Approx(b.logits.data()[i]).margin(1e-12));
}

TEST_CASE("hint defaults to the embedding and honors hint_block_index") {
    auto spec = tiny_classifier();
    auto params = build(spec, 14);
    std::mt19937_64 rng(14);
    auto batch = testutil::random_tensor(rng, {1, 1, 4, 4}, false, 0.0, 1.0);
    auto out = forward(params, spec, batch);
    CHECK(out.hint.data() == out.embedding.data());

    spec.hint_block_index = 0;
    auto out2 = forward(params, spec, batch);
    CHECK(out2.hint.shape() == Shape{1, 2, 4, 4});
}

TEST_CASE("network gradients pass finite differences") {
    auto spec = tiny_classifier();
    auto params = build(spec, 17);
    std::mt19937_64 rng(17);
    auto batch = testutil::random_tensor(rng, {2, 1, 4, 4}, false, 0.0, 1.0);

    std::vector<Tensor> leaves;
    for (auto& [id, t] : params.values) leaves.push_back(t);
    auto r = testutil::gradcheck(
        [&](const std::vector<Tensor>&) {
            auto out = forward(params, spec, batch);
            return sum(mul(out.logits, out.logits));
        },
        leaves);
    INFO("max rel err " << r.max_rel_error);
    CHECK(r.ok);
}

TEST_CASE("invalid specs report the offending block") {
    NetworkSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.blocks = {ConvBlock{4, 3, 1}, MaxPoolBlock{3}};
    spec.embedding_dim = 4;
    spec.num_classes = 2;
    CHECK_THROWS_WITH(spec.validate(), Catch::Contains("block 1"));
    spec.blocks = {ConvBlock{4, 4, 1}};
    CHECK_THROWS_WITH(spec.validate(), Catch::Contains("block 0"));
}

TEST_CASE("forward rejects mismatched batches") {
    auto spec = tiny_classifier();
    auto params = build(spec, 2);
    CHECK_THROWS_WITH(forward(params, spec, Tensor::zeros({2, 1, 5, 5})), Catch::Contains("does not match"));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    auto spec = plain_small({1, 8, 8}, HeadKind::regressor);
    auto params = build(spec, 77, Role::student);
    const std::string path = "nn_roundtrip_test.json";
    save_params(params, path);
    auto loaded = load_params(path);
    std::remove(path.c_str());
    CHECK(loaded.role == Role::student);
    CHECK(params.bit_equal(loaded));
}
