#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "vqarat/ops.hpp"
#include "vqarat/tensor.hpp"

using namespace vqarat;

TEST_CASE("tensor shape/data invariants") {
    CHECK_THROWS_AS(Tensor::leaf({2, 3}, {1.0, 2.0}, false), std::invalid_argument);
    Tensor t = Tensor::leaf({2, 2}, {1, 2, 3, 4}, true);
    CHECK(t.size() == 4);
    CHECK(t.grad().size() == 4);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);
}

TEST_CASE("softmax symmetric cases") {
    auto run = [](std::vector<double> logits) {
        return ops::softmax(Tensor::leaf({logits.size()}, logits, false)).data();
    };
    auto p = run({2, 2});
    CHECK(p[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(p[1] == Catch::Approx(0.5).margin(1e-15));
    auto q = run({0, 0, 0, 0});
    for (double v : q) CHECK(v == Catch::Approx(0.25).margin(1e-15));
    CHECK_THROWS_AS(ops::softmax(Tensor::leaf({0}, {}, false)), std::invalid_argument);
}

TEST_CASE("softmax matches direct exponentiation oracle") {
    // long-double direct evaluation of softmax([1,2,3])
    long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    long double z = e1 + e2 + e3;
    auto p = ops::softmax(Tensor::leaf({3}, {1, 2, 3}, false)).data();
    CHECK(p[0] == Catch::Approx(double(e1 / z)).margin(1e-14));
    CHECK(p[1] == Catch::Approx(double(e2 / z)).margin(1e-14));
    CHECK(p[2] == Catch::Approx(double(e3 / z)).margin(1e-14));
}

TEST_CASE("softmax properties: normalization and shift invariance") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(5);
        for (double& x : logits) x = dist(rng);
        auto p = ops::softmax(Tensor::leaf({5}, logits, false)).data();
        double sum = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
        double c = dist(rng);
        std::vector<double> shifted = logits;
        for (double& x : shifted) x += c;
        auto ps = ops::softmax(Tensor::leaf({5}, shifted, false)).data();
        for (std::size_t i = 0; i < 5; ++i) CHECK(ps[i] == Catch::Approx(p[i]).margin(1e-12));
    }
}

TEST_CASE("cross_entropy examples") {
    // uniform logits over 4 classes -> ln 4 for any target
    for (std::size_t t = 0; t < 4; ++t) {
        Tensor loss = ops::cross_entropy(Tensor::leaf({4}, {1.5, 1.5, 1.5, 1.5}, false), t);
        CHECK(loss.item() == Catch::Approx(std::log(4.0)).margin(1e-12));
    }
    // saturated target logit
    Tensor sat = ops::cross_entropy(Tensor::leaf({4}, {100, 0, 0, 0}, false), 0);
    CHECK(sat.item() >= 0.0);
    CHECK(sat.item() <= 1e-6);
    // [1,2,3] target 1 vs the direct-exponentiation oracle
    long double z = expl(1.0L) + expl(2.0L) + expl(3.0L);
    double expected = double(-logl(expl(2.0L) / z));
    Tensor ce = ops::cross_entropy(Tensor::leaf({3}, {1, 2, 3}, false), 1);
    CHECK(ce.item() == Catch::Approx(expected).margin(1e-13));
    CHECK_THROWS_AS(ops::cross_entropy(Tensor::leaf({3}, {1, 2, 3}, false), 3), std::invalid_argument);
}

TEST_CASE("cross_entropy is -log softmax[target]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> logits(6);
        for (double& x : logits) x = dist(rng);
        std::size_t t = rng() % 6;
        double ce = ops::cross_entropy(Tensor::leaf({6}, logits, false), t).item();
        double lp = std::log(ops::softmax(Tensor::leaf({6}, logits, false)).data()[t]);
        CHECK(ce + lp == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("backward: sum gives ones, scale-by-zero gives zeros") {
    Tensor x = Tensor::leaf({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    {
        Tape tape;
        Tensor loss = ops::sum(x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    x.zero_grad();
    {
        Tape tape;
        Tensor loss = ops::sum(ops::scale(x, 0.0));
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("backward: unused parameter gets exactly zero gradient") {
    Tensor x = Tensor::leaf({3}, {1, 2, 3}, true);
    Tensor unused = Tensor::leaf({2}, {5, 6}, true);
    Tape tape;
    Tensor loss = ops::sum(ops::mul(x, x));
    tape.backward(loss);
    for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward error paths") {
    Tensor x = Tensor::leaf({2}, {1, 2}, true);
    {
        Tape tape;
        Tensor y = ops::scale(x, 2.0);  // non-scalar
        CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    }
    {
        Tape tape;
        CHECK_THROWS_AS(tape.backward(ops::sum(Tensor::leaf({1}, {0.0}, false))), std::logic_error);
    }
}

TEST_CASE("op shape checks fail fast") {
    Tensor a = Tensor::leaf({2, 3}, std::vector<double>(6, 1.0), false);
    Tensor b = Tensor::leaf({2, 2}, std::vector<double>(4, 1.0), false);
    CHECK_THROWS_AS(ops::matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ops::mul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ops::concat({a, b}, 0), std::invalid_argument);
    CHECK_THROWS_AS(ops::slice_cols(a, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(ops::embedding(a, {7}), std::invalid_argument);
}

TEST_CASE("matmul against hand-computed product") {
    Tensor a = Tensor::leaf({2, 2}, {1, 2, 3, 4}, false);
    Tensor b = Tensor::leaf({2, 2}, {5, 6, 7, 8}, false);
    auto c = ops::matmul(a, b).data();
    CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("no active tape means pure forward") {
    Tensor x = Tensor::leaf({2}, {1, 2}, true);
    Tensor y = ops::scale(x, 3.0);
    CHECK_FALSE(y.requires_grad());
}
