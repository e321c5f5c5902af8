#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stconv/ops.hpp"
#include "support/oracles.hpp"

using namespace stconv;
using stconv::testing::random_tensor;

TEST_CASE("grad of sum(w*x) with constant x is x") {
    Rng rng(1);
    Tensor<double> xv = random_tensor<double>({6}, rng);
    Var<double> w = Var<double>::param(random_tensor<double>({6}, rng));
    Var<double> x = Var<double>::constant(xv);
    Var<double> loss = sum_all(mul(w, x));
    backward(loss);
    CHECK(max_abs_diff(w.grad(), xv) == 0.0);
}

TEST_CASE("disconnected parameter keeps a zero gradient") {
    Rng rng(2);
    Var<double> used = Var<double>::param(random_tensor<double>({4}, rng));
    Var<double> unused = Var<double>::param(random_tensor<double>({4}, rng));
    Var<double> loss = sum_all(used);
    backward(loss);
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(used.grad()[i] == 1.0);
        CHECK(unused.grad()[i] == 0.0);
    }
}

TEST_CASE("repeated backward accumulates leaf gradients") {
    Rng rng(3);
    Tensor<double> xv = random_tensor<double>({5}, rng);
    Var<double> w = Var<double>::param(random_tensor<double>({5}, rng));
    Var<double> loss = sum_all(mul(w, Var<double>::constant(xv)));
    backward(loss);
    backward(loss);
    Tensor<double> twice(xv.shape());
    for (std::int64_t i = 0; i < 5; ++i) twice[i] = 2 * xv[i];
    CHECK(max_abs_diff(w.grad(), twice) < 1e-15);

    w.zero_grad();
    backward(loss);
    CHECK(max_abs_diff(w.grad(), xv) == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
    Rng rng(4);
    Var<double> w = Var<double>::param(random_tensor<double>({3}, rng));
    Var<double> y = mul(w, w);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("a variable used twice receives both contributions") {
    Rng rng(5);
    Tensor<double> xv = random_tensor<double>({4}, rng);
    Var<double> w = Var<double>::param(xv);
    Var<double> loss = sum_all(mul(w, w)); // d/dw sum(w^2) = 2w
    backward(loss);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * xv[i]));
}

TEST_CASE("no-grad scope detaches results") {
    Rng rng(6);
    Var<double> w = Var<double>::param(random_tensor<double>({4}, rng));
    NoGradGuard guard;
    Var<double> y = mul(w, w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->inputs.empty());
}

TEST_CASE("identical runs are bitwise identical") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor<double> x = random_tensor<double>({2, 2, 4, 5, 5}, rng);
        Tensor<double> wv = random_tensor<double>({3, 2, 2, 3, 3}, rng);
        Var<double> w = Var<double>::param(wv);
        Var<double> b = Var<double>::param(Tensor<double>({3}));
        Var<double> y = conv3d(Var<double>::constant(x), w, b, {1, 1, 1}, PadSpec{{1, 0}, {1, 1}, {1, 1}});
        Var<double> loss = mse_loss(y, Tensor<double>(y.shape(), 0.5));
        backward(loss);
        return std::make_pair(y.value(), w.grad());
    };
    auto [y1, g1] = run(99);
    auto [y2, g2] = run(99);
    CHECK(bitwise_equal(y1, y2));
    CHECK(bitwise_equal(g1, g2));
}
