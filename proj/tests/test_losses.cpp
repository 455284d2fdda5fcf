#include <catch2/catch.hpp>

#include <distillkit/losses.hpp>

#include "helpers.hpp"

#include <cmath>
#include <random>

using namespace distillkit;
using testutil::random_tensor;

namespace {

// plain-double reference evaluations, independent of the autograd path
std::vector<double> ref_softmax(std::vector<double> logits, double tau) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : logits) {
        v = std::exp(v / tau - mx / tau);
        z += v;
    }
    for (double& v : logits) v /= z;
    return logits;
}

double ref_cross_entropy(const std::vector<double>& logits, std::size_t target) {
    auto p = ref_softmax(logits, 1.0);
    return -std::log(p[target]);
}

double ref_soft_cross_entropy(const std::vector<double>& teacher, const std::vector<double>& student, double tau) {
    auto t = ref_softmax(teacher, tau);
    auto s = ref_softmax(student, tau);
    double loss = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) loss -= t[i] * std::log(s[i]);
    return loss;
}

double ref_sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

DistillConfig kd_cfg(double lambda, double tau) {
    DistillConfig cfg;
    cfg.mode = DistillMode::standard_kd;
    cfg.lambda = lambda;
    cfg.tau = tau;
    return cfg;
}

DistillConfig hint_cfg(double lambda) {
    DistillConfig cfg;
    cfg.mode = DistillMode::hint_kd;
    cfg.lambda = lambda;
    return cfg;
}

DistillConfig triplet_cfg(double lambda, double alpha) {
    DistillConfig cfg;
    cfg.mode = DistillMode::triplet_kd;
    cfg.lambda = lambda;
    cfg.margin_alpha = alpha;
    return cfg;
}

}  // namespace

TEST_CASE("task loss basics") {
    auto task4 = TaskKind::make_classification(4);
    // near-one-hot prediction at the target drives the loss to zero
    auto confident = task_loss(Tensor::from_data({4}, {50, 0, 0, 0}), 0, task4);
    CHECK(confident.item() == Approx(0.0).margin(1e-9));

    auto uniform = task_loss(Tensor::from_data({4}, {0, 0, 0, 0}), 2, task4);
    CHECK(uniform.item() == Approx(std::log(4.0)).epsilon(1e-12));

    auto reg = task_loss(Tensor::scalar(30.0), 25.0, age_like());
    CHECK(reg.item() == 5.0);

    CHECK_THROWS_WITH(task_loss(Tensor::from_data({4}, {0, 0, 0, 0}), 7, task4), Catch::Contains("out of range"));
    CHECK_THROWS_WITH(task_loss(Tensor::from_data({4}, {0, 0, 0, 0}), -1, task4), Catch::Contains("out of range"));
}

TEST_CASE("standard KD loss reduces to the task loss at lambda 0") {
    std::mt19937_64 rng(2);
    auto s = random_tensor(rng, {3, 4}, true, -2.0, 2.0);
    auto t = random_tensor(rng, {3, 4}, false, -2.0, 2.0);
    std::vector<double> targets{0, 3, 1};
    auto task4 = TaskKind::make_classification(4);
    auto kd = standard_kd_loss_batch(s, t, targets, task4, kd_cfg(0.0, 2.0));
    auto plain = task_loss_batch(s, targets, task4);
    CHECK(kd.item() == plain.item());  // exact
}

TEST_CASE("standard KD with identical logits at lambda 1 tau 1 is the softmax entropy") {
    auto logits = Tensor::from_data({2}, {0, 0});
    auto loss = standard_kd_loss(logits, logits.detach(), 0, gender_like(), kd_cfg(1.0, 1.0));
    CHECK(loss.item() == Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("standard KD matches the scalar oracle") {
    // spec's derived example: S=[1,0], T=[0,1], y=0, lambda=0.7, tau=2
    std::vector<double> s{1, 0}, t{0, 1};
    const double expected = 0.7 * ref_soft_cross_entropy(t, s, 2.0) + 0.3 * ref_cross_entropy(s, 0);
    auto loss = standard_kd_loss(Tensor::from_data({2}, s), Tensor::from_data({2}, t), 0, gender_like(),
                                 kd_cfg(0.7, 2.0));
    CHECK(loss.item() == Approx(expected).epsilon(1e-12));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto sl = random_tensor(rng, {5}, false, -3.0, 3.0);
        auto tl = random_tensor(rng, {5}, false, -3.0, 3.0);
        const double want =
            0.4 * ref_soft_cross_entropy(tl.data(), sl.data(), 3.0) + 0.6 * ref_cross_entropy(sl.data(), 2);
        auto got = standard_kd_loss(sl, tl, 2, TaskKind::make_classification(5), kd_cfg(0.4, 3.0));
        CHECK(got.item() == Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("standard KD rejects regression and mismatched modes") {
    auto cfg = kd_cfg(0.5, 2.0);
    CHECK_THROWS_WITH(standard_kd_loss(Tensor::scalar(1.0), Tensor::scalar(1.0), 30.0, age_like(), cfg),
                      Catch::Contains("regression"));
    cfg.mode = DistillMode::hint_kd;
    CHECK_THROWS_WITH(
        standard_kd_loss(Tensor::from_data({2}, {0, 1}), Tensor::from_data({2}, {1, 0}), 0, gender_like(), cfg),
        Catch::Contains("config mode"));
    auto bad = kd_cfg(1.5, 2.0);
    CHECK_THROWS_WITH(
        standard_kd_loss(Tensor::from_data({2}, {0, 1}), Tensor::from_data({2}, {1, 0}), 0, gender_like(), bad),
        Catch::Contains("lambda"));
    auto cold = kd_cfg(0.5, 0.5);
    CHECK_THROWS_WITH(
        standard_kd_loss(Tensor::from_data({2}, {0, 1}), Tensor::from_data({2}, {1, 0}), 0, gender_like(), cold),
        Catch::Contains("tau"));
}

TEST_CASE("standard KD is invariant to constant logit shifts") {
    std::mt19937_64 rng(4);
    auto s = random_tensor(rng, {4}, false, -2.0, 2.0);
    auto t = random_tensor(rng, {4}, false, -2.0, 2.0);
    auto cfg = kd_cfg(0.6, 2.5);
    auto task4 = TaskKind::make_classification(4);
    const double base = standard_kd_loss(s, t, 1, task4, cfg).item();
    const double shifted_s = standard_kd_loss(scalar_add(s, 7.5), t, 1, task4, cfg).item();
    const double shifted_t = standard_kd_loss(s, scalar_add(t, -4.25), 1, task4, cfg).item();
    CHECK(shifted_s == Approx(base).margin(1e-9));
    CHECK(shifted_t == Approx(base).margin(1e-9));
}

TEST_CASE("hint loss basics and oracle") {
    auto task = gender_like();
    auto scores = Tensor::from_data({2}, {2.0, -1.0});

    // identical hints leave only the weighted task term
    auto h = Tensor::from_data({3}, {0.5, -0.25, 1.0});
    auto only_task = hint_kd_loss(h, h.detach(), scores, 0, task, hint_cfg(0.3));
    CHECK(only_task.item() == Approx(0.7 * ref_cross_entropy(scores.data(), 0)).epsilon(1e-12));

    auto l1 = hint_kd_loss(Tensor::from_data({2}, {0, 0}), Tensor::from_data({2}, {1, 2}), scores, 0, task,
                           hint_cfg(1.0));
    CHECK(l1.item() == Approx(3.0).epsilon(1e-12));

    std::mt19937_64 rng(5);
    auto hs = random_tensor(rng, {4}, false);
    auto ht = random_tensor(rng, {4}, false);
    double l1_ref = 0.0;
    for (std::size_t i = 0; i < 4; ++i) l1_ref += std::fabs(ht.data()[i] - hs.data()[i]);
    const double want = 0.45 * l1_ref + 0.55 * ref_cross_entropy(scores.data(), 1);
    auto got = hint_kd_loss(hs, ht, scores, 1, task, hint_cfg(0.45));
    CHECK(got.item() == Approx(want).epsilon(1e-10));

    CHECK_THROWS_WITH(
        hint_kd_loss(Tensor::from_data({3}, {0, 0, 0}), Tensor::from_data({2}, {1, 2}), scores, 0, task,
                     hint_cfg(0.5)),
        Catch::Contains("hint shapes differ"));
}

TEST_CASE("triplet term follows the hinge definition") {
    auto a0 = Tensor::from_data({2}, {0, 0});
    CHECK(triplet_term(a0, Tensor::from_data({2}, {1, 0}), Tensor::from_data({2}, {1, 0}), 0.0).item() == 0.0);
    CHECK(triplet_term(a0, Tensor::from_data({2}, {1, 0}), Tensor::from_data({2}, {3, 0}), 0.0).item() == 0.0);
    CHECK(triplet_term(a0, Tensor::from_data({2}, {2, 0}), Tensor::from_data({2}, {1, 0}), 0.5).item() == 3.5);
    CHECK_THROWS_WITH(triplet_term(a0, Tensor::from_data({3}, {1, 0, 0}), a0, 0.0),
                      Catch::Contains("shapes differ"));
}

TEST_CASE("triplet term is invariant under a common rotation") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> angle(0.0, 6.28);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_tensor(rng, {2}, false);
        auto p = random_tensor(rng, {2}, false);
        auto n = random_tensor(rng, {2}, false);
        const double base = triplet_term(a, p, n, 0.3).item();
        const double th = angle(rng);
        auto rotate = [&](const Tensor& v) {
            const double x = v.data()[0], y = v.data()[1];
            return Tensor::from_data({2}, {std::cos(th) * x - std::sin(th) * y,
                                           std::sin(th) * x + std::cos(th) * y});
        };
        CHECK(triplet_term(rotate(a), rotate(p), rotate(n), 0.3).item() == Approx(base).margin(1e-9));
    }
}

TEST_CASE("triplet KD loss composes hinge terms and the task term") {
    auto task = gender_like();
    std::mt19937_64 rng(7);
    auto scores = random_tensor(rng, {3, 2}, false);
    std::vector<double> targets{0, 1, 0};

    std::vector<EmbeddingTriple> triples;
    for (int i = 0; i < 3; ++i)
        triples.push_back({random_tensor(rng, {4}, false), random_tensor(rng, {4}, false),
                           random_tensor(rng, {4}, false)});

    // lambda = 0 is exactly the mean task loss
    auto at0 = triplet_kd_loss(triples, scores, targets, task, triplet_cfg(0.0, 0.2));
    CHECK(at0.item() == task_loss_batch(scores, targets, task).item());

    // satisfied triplets at lambda 1 vanish
    std::vector<EmbeddingTriple> satisfied;
    for (int i = 0; i < 3; ++i)
        satisfied.push_back({Tensor::from_data({2}, {0, 0}), Tensor::from_data({2}, {0.1, 0}),
                             Tensor::from_data({2}, {5, 0})});
    CHECK(triplet_kd_loss(satisfied, scores, targets, task, triplet_cfg(1.0, 0.2)).item() == 0.0);

    // derived oracle for 3 hand-built triplets at lambda 0.5 (mean reduction)
    double hinge_sum = 0.0;
    for (const auto& t : triples) {
        const double d = ref_sqdist(t.anchor.data(), t.positive.data()) -
                         ref_sqdist(t.anchor.data(), t.negative.data()) + 0.4;
        hinge_sum += std::max(0.0, d);
    }
    double task_ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> row{scores.data()[i * 2], scores.data()[i * 2 + 1]};
        task_ref += ref_cross_entropy(row, static_cast<std::size_t>(targets[i]));
    }
    task_ref /= 3.0;
    const double want = 0.5 * task_ref + 0.5 * (hinge_sum / 3.0);
    auto got = triplet_kd_loss(triples, scores, targets, task, triplet_cfg(0.5, 0.4));
    CHECK(got.item() == Approx(want).epsilon(1e-10));

    // batched form agrees with the list form
    std::vector<double> a_cat, p_cat, n_cat;
    for (const auto& t : triples) {
        a_cat.insert(a_cat.end(), t.anchor.data().begin(), t.anchor.data().end());
        p_cat.insert(p_cat.end(), t.positive.data().begin(), t.positive.data().end());
        n_cat.insert(n_cat.end(), t.negative.data().begin(), t.negative.data().end());
    }
    auto batched = triplet_kd_loss_batched(Tensor::from_data({3, 4}, a_cat), Tensor::from_data({3, 4}, p_cat),
                                           Tensor::from_data({3, 4}, n_cat), scores, targets, task,
                                           triplet_cfg(0.5, 0.4));
    CHECK(batched.item() == Approx(got.item()).epsilon(1e-12));

    CHECK_THROWS_WITH(triplet_kd_loss({}, scores, targets, task, triplet_cfg(0.5, 0.2)),
                      Catch::Contains("empty batch"));
}

TEST_CASE("sum reduction and normalized embeddings are supported") {
    auto task = gender_like();
    std::mt19937_64 rng(8);
    auto scores = random_tensor(rng, {2, 2}, false);
    std::vector<double> targets{0, 1};
    std::vector<EmbeddingTriple> triples;
    for (int i = 0; i < 2; ++i)
        triples.push_back({random_tensor(rng, {3}, false), random_tensor(rng, {3}, false),
                           random_tensor(rng, {3}, false)});

    auto cfg_mean = triplet_cfg(1.0, 0.1);
    auto cfg_sum = cfg_mean;
    cfg_sum.triplet_reduction = TripletReduction::sum;
    const double mean_val = triplet_kd_loss(triples, scores, targets, task, cfg_mean).item();
    const double sum_val = triplet_kd_loss(triples, scores, targets, task, cfg_sum).item();
    CHECK(sum_val == Approx(2.0 * mean_val).epsilon(1e-12));

    auto cfg_norm = triplet_cfg(1.0, 0.1);
    cfg_norm.normalize_embeddings = true;
    // with unit-normalized embeddings every squared distance is at most 4
    std::vector<EmbeddingTriple> wild;
    wild.push_back({Tensor::from_data({2}, {100, 0}), Tensor::from_data({2}, {0, 50}),
                    Tensor::from_data({2}, {-80, 0})});
    const double val = triplet_kd_loss(wild, scores, {0, 1}, task, cfg_norm).item();
    CHECK(val <= 4.0 + 0.1);
}

TEST_CASE("no gradient reaches teacher tensors through any loss") {
    std::mt19937_64 rng(9);
    auto teacher_logits = random_tensor(rng, {2, 3}, true);
    auto student_logits = random_tensor(rng, {2, 3}, true);
    auto task3 = TaskKind::make_classification(3);
    standard_kd_loss_batch(student_logits, teacher_logits, {0, 2}, task3, kd_cfg(0.8, 2.0)).backward();
    CHECK(student_logits.has_grad());
    CHECK_FALSE(teacher_logits.has_grad());

    auto teacher_hint = random_tensor(rng, {4}, true);
    auto student_hint = random_tensor(rng, {4}, true);
    auto scores = random_tensor(rng, {3}, true);
    hint_kd_loss(student_hint, teacher_hint, scores, 1, task3, hint_cfg(0.5)).backward();
    CHECK(student_hint.has_grad());
    CHECK_FALSE(teacher_hint.has_grad());

    auto anchor = random_tensor(rng, {4}, true);
    auto positive = random_tensor(rng, {4}, true);
    auto negative = random_tensor(rng, {4}, true);
    // force an active hinge so gradients flow
    triplet_term(anchor, positive, negative, 50.0).backward();
    CHECK(anchor.has_grad());
    CHECK(negative.has_grad());
    CHECK_FALSE(positive.has_grad());
}

TEST_CASE("losses are non-negative on random inputs") {
    std::mt19937_64 rng(10);
    auto task3 = TaskKind::make_classification(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_tensor(rng, {2, 3}, false, -4.0, 4.0);
        auto t = random_tensor(rng, {2, 3}, false, -4.0, 4.0);
        CHECK(standard_kd_loss_batch(s, t, {1, 2}, task3, kd_cfg(0.5, 2.0)).item() >= 0.0);
        auto hs = random_tensor(rng, {5}, false);
        auto ht = random_tensor(rng, {5}, false);
        CHECK(hint_kd_loss(hs, ht, random_tensor(rng, {3}, false), 0, task3, hint_cfg(0.5)).item() >= 0.0);
        CHECK(triplet_term(random_tensor(rng, {3}, false), random_tensor(rng, {3}, false),
                           random_tensor(rng, {3}, false), 0.25)
                  .item() >= 0.0);
    }
}

TEST_CASE("every loss passes finite differences", "[gradcheck]") {
    std::mt19937_64 rng(11);
    auto task3 = TaskKind::make_classification(3);
    for (int trial = 0; trial < 8; ++trial) {
        auto s = random_tensor(rng, {2, 3}, true, -1.5, 1.5);
        auto t = random_tensor(rng, {2, 3}, false, -1.5, 1.5);
        auto r1 = testutil::gradcheck(
            [&](const std::vector<Tensor>& in) {
                return standard_kd_loss_batch(in[0], t, {0, 2}, task3, kd_cfg(0.6, 2.0));
            },
            {s});
        CHECK(r1.ok);

        auto hs = random_tensor(rng, {4}, true);
        auto ht = random_tensor(rng, {4}, false);
        auto sc = random_tensor(rng, {3}, true, -1.0, 1.0);
        auto r2 = testutil::gradcheck(
            [&](const std::vector<Tensor>& in) {
                return hint_kd_loss(in[0], ht, in[1], 1, task3, hint_cfg(0.4));
            },
            {hs, sc});
        CHECK(r2.ok);

        auto reg_pred = random_tensor(rng, {3, 1}, true, 25.0, 27.0);
        auto r3 = testutil::gradcheck(
            [&](const std::vector<Tensor>& in) { return task_loss_batch(in[0], {30.0, 20.0, 40.0}, age_like()); },
            {reg_pred});
        CHECK(r3.ok);

        auto a = random_tensor(rng, {2, 4}, true);
        auto p = random_tensor(rng, {2, 4}, false);
        auto n = random_tensor(rng, {2, 4}, true);
        auto logits = random_tensor(rng, {2, 3}, true, -1.0, 1.0);
        auto cfg = triplet_cfg(0.5, 5.0);  // large margin keeps hinges active and away from the kink
        auto r4 = testutil::gradcheck(
            [&](const std::vector<Tensor>& in) {
                return triplet_kd_loss_batched(in[0], p, in[1], in[2], {0, 2}, task3, cfg);
            },
            {a, n, logits});
        CHECK(r4.ok);
    }
}
