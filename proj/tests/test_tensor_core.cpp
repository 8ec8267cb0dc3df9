#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracle.hpp"
#include "spiro/ops.hpp"
#include "spiro/optim.hpp"

using namespace spiro;
using oracle::TensorD;

namespace {

double max_diff(const TensorD& a, const TensorD& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d identity kernel scales ones") {
    TensorD x({1, 1, 3, 3}, 1.0), w({1, 1, 1, 1}, 2.0), b({1, 1, 1, 1}, 0.0);
    const TensorD y = conv2d(x, w, b);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("conv2d impulse response is the kernel (cross-correlation)") {
    TensorD x({1, 1, 3, 3}, 0.0);
    x.at(0, 0, 1, 1) = 1;
    std::vector<double> k(9);
    for (int i = 0; i < 9; ++i) k[i] = i + 1;
    const TensorD w({1, 1, 3, 3}, k), b({1, 1, 1, 1}, 0.0);
    const TensorD y = conv2d(x, w, b, 1, 1);
    // out[i][j] = sum_k w[k] x[i+k-1]: the impulse at the centre reads the kernel back flipped
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(y.at(0, 0, i, j) == k[(2 - i) * 3 + (2 - j)]);
}

TEST_CASE("conv2d matches the loop oracle on random shapes") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> d(1, 4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = d(rng), cin = d(rng), cout = d(rng), h = 3 + d(rng) * 2, w = 3 + d(rng);
        const int k = trial % 3 == 0 ? 1 : (trial % 3 == 1 ? 3 : 5);
        const int stride = 1 + trial % 2, pad = k / 2;
        const TensorD x = oracle::random_tensor({n, cin, h, w}, rng);
        const TensorD wt = oracle::random_tensor({cout, cin, std::size_t(k), std::size_t(k)}, rng);
        const TensorD b = oracle::random_tensor({1, cout, 1, 1}, rng);
        CHECK(max_diff(conv2d(x, wt, b, stride, pad), oracle::conv2d(x, wt, b, stride, pad)) < 1e-12);
    }
}

TEST_CASE("conv2d on inputs narrower than the kernel") {
    std::mt19937_64 rng(21);
    for (std::size_t w : {1, 2, 3}) {
        for (int k : {3, 5}) {
            for (int pad = k / 2; pad <= k; ++pad) {
                for (int stride : {1, 2}) {
                    CAPTURE(w);
                    CAPTURE(k);
                    CAPTURE(pad);
                    CAPTURE(stride);
                    const TensorD x = oracle::random_tensor({2, 2, 2, w}, rng);
                    const TensorD wt = oracle::random_tensor({3, 2, std::size_t(k), std::size_t(k)}, rng);
                    const TensorD b = oracle::random_tensor({1, 3, 1, 1}, rng);
                    const TensorD ref = oracle::conv2d(x, wt, b, stride, pad);
                    CHECK(max_diff(conv2d(x, wt, b, stride, pad), ref) < 1e-12);

                    // <C x, y> == <x, C^T y>, the second side from the backward pass
                    TensorD xg = x.detach();
                    xg.set_requires_grad();
                    const TensorD no_bias({1, 3, 1, 1}, 0.0);
                    const TensorD y = oracle::random_tensor(ref.shape(), rng);
                    backward(sum(mul(conv2d(xg, wt, no_bias, stride, pad), y)));
                    const TensorD cx = oracle::conv2d(x, wt, no_bias, stride, pad);
                    double lhs = 0, rhs = 0;
                    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
                    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * xg.grad()[i];
                    CHECK(std::abs(lhs - rhs) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("conv2d reports the offending dimension") {
    TensorD x({1, 3, 5, 5}), w({2, 4, 3, 3}), b({1, 2, 1, 1});
    CHECK_THROWS_WITH_AS(conv2d(x, w, b), doctest::Contains("dim 1"), ShapeError);
    TensorD even({2, 3, 2, 2});
    CHECK_THROWS_AS(conv2d(x, even, b), ShapeError);
}

TEST_CASE("conv2d_transpose places disjoint blocks") {
    TensorD x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), w({1, 1, 2, 2}, 1.0), b({1, 1, 1, 1}, 0.0);
    const TensorD y = conv2d_transpose(x, w, b, 2);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(y.at(0, 0, i, j) == x.at(0, 0, i / 2, j / 2));
    TensorD zero({1, 1, 2, 2}, 0.0), rw({1, 1, 2, 2}, 3.5);
    const TensorD z = conv2d_transpose(zero, rw, b, 2);
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d_transpose matches the adjoint oracle") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> d(1, 4);
    for (int trial = 0; trial < 100; ++trial) {
        const int s = trial % 2 ? 2 : 4;
        const std::size_t n = d(rng), cin = d(rng), h = d(rng), w = d(rng);
        const bool depthwise = trial % 3 == 0;
        const std::size_t per = depthwise ? 1 : d(rng);
        const TensorD x = oracle::random_tensor({n, cin, h, w}, rng);
        const TensorD wt = oracle::random_tensor({cin, per, std::size_t(s), std::size_t(s)}, rng);
        const std::size_t cout = depthwise ? cin : per;
        const TensorD b = oracle::random_tensor({1, cout, 1, 1}, rng);
        const int groups = depthwise ? int(cin) : 1;
        CHECK(max_diff(conv2d_transpose(x, wt, b, s, groups), oracle::conv2d_transpose(x, wt, b, s, groups)) < 1e-12);
    }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d: <y, T x> == <C y, x>") {
    std::mt19937_64 rng(3);
    const TensorD x = oracle::random_tensor({2, 3, 4, 4}, rng), w = oracle::random_tensor({3, 5, 2, 2}, rng);
    const TensorD y = oracle::random_tensor({2, 5, 8, 8}, rng);
    const TensorD no_bias;
    const TensorD tx = conv2d_transpose(x, w, TensorD({1, 5, 1, 1}, 0.0), 2);
    // the forward conv with stride 2 and kernel 2 has weight w viewed as [Cin=3 out, 5 in]
    const TensorD cy = oracle::conv2d(y, w, no_bias, 2, 0);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += y.data()[i] * tx.data()[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += cy.data()[i] * x.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d_transpose rejects unsupported strides") {
    TensorD x({1, 1, 2, 2}), w({1, 1, 3, 3}), b({1, 1, 1, 1});
    CHECK_THROWS_AS(conv2d_transpose(x, w, b, 3), ShapeError);
}

TEST_CASE("maxpool2d routes gradient to the first maximum") {
    TensorD x({1, 1, 2, 2}, std::vector<double>{5, 5, 1, 5});
    x.set_requires_grad(true);
    const TensorD y = maxpool2d(x, 2, 2);
    CHECK(y.item() == 5);
    backward(sum(y));
    CHECK(x.grad()[0] == 1);
    CHECK(x.grad()[1] == 0);
    CHECK(x.grad()[3] == 0);
}

TEST_CASE("maxpool2d and adaptive pooling match oracles") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = 4 * (1 + trial % 4), w = 4 * (1 + trial % 3);
        const TensorD x = oracle::random_tensor({1 + std::size_t(trial % 2), 2, h, w}, rng);
        const int k = trial % 2 ? 2 : 4;
        CHECK(max_diff(maxpool2d(x, k, k), oracle::maxpool2d(x, k, k)) == 0.0);
        const std::size_t oh = 1 + trial % 8, ow = 1 + (trial / 8) % 8;
        CHECK(max_diff(adaptive_avgpool2d(x, oh, ow), oracle::adaptive_avgpool2d(x, oh, ow)) < 1e-12);
    }
    CHECK_THROWS_AS(maxpool2d(TensorD({1, 1, 5, 4}), 2, 2), ShapeError);
}

TEST_CASE("batchnorm2d train statistics and running buffers") {
    std::mt19937_64 rng(5);
    const TensorD x = oracle::random_tensor({4, 3, 5, 5}, rng, -2, 3);
    TensorD g({1, 3, 1, 1}, 1.0), b({1, 3, 1, 1}, 0.0);
    BatchNormState<double> st{TensorD({1, 3, 1, 1}, 0.0), TensorD({1, 3, 1, 1}, 1.0)};
    const TensorD y = batchnorm2d(x, g, b, st, Mode::train);
    CHECK(max_diff(y, oracle::batchnorm_train(x, g, b)) < 1e-12);
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0, var = 0, xmu = 0, xsq = 0;
        const double m = 100;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t p = 0; p < 25; ++p) {
                mu += y.at(n, c, p / 5, p % 5) / m;
                xmu += x.at(n, c, p / 5, p % 5) / m;
            }
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t p = 0; p < 25; ++p) {
                var += std::pow(y.at(n, c, p / 5, p % 5) - mu, 2) / m;
                xsq += std::pow(x.at(n, c, p / 5, p % 5) - xmu, 2);
            }
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1) < 1e-4);
        CHECK(st.running_mean.data()[c] == doctest::Approx(0.1 * xmu).epsilon(1e-12));
        CHECK(st.running_var.data()[c] == doctest::Approx(0.9 + 0.1 * xsq / (m - 1)).epsilon(1e-12));
    }
    // eval mode reads the buffers
    const TensorD e = batchnorm2d(x, g, b, st, Mode::eval);
    const double expect = (x.data()[0] - st.running_mean.data()[0]) / std::sqrt(st.running_var.data()[0] + 1e-5);
    CHECK(e.data()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("matmul and softmax match oracles") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + trial % 3, r = 1 + trial % 7, k = 1 + trial % 5, c = 1 + trial % 4;
        const TensorD a = oracle::random_tensor({n, 1, r, k}, rng);
        const TensorD b = oracle::random_tensor({trial % 2 ? n : 1, 1, k, c}, rng);
        CHECK(max_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
        CHECK(max_diff(softmax_rows(a), oracle::softmax_rows(a)) < 1e-12);
    }
}

TEST_CASE("tape is topological and visits each node once") {
    TensorD a({1, 1, 2, 2}, 1.0), b({1, 1, 2, 2}, 2.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const TensorD c = mul(a, b);
    const TensorD d = add(c, c);  // diamond
    const TensorD loss = sum(add(d, a));
    const auto tape = Tape<double>::record(loss);
    std::set<const Node<double>*> seen;
    for (const auto* node : tape.order()) {
        CHECK(seen.insert(node).second);
        for (const auto& p : node->parents) CHECK(seen.count(p.get()) == 1);
    }
    backward(loss);
    for (double g : a.grad()) CHECK(g == 2 * 2.0 + 1);
    for (double g : b.grad()) CHECK(g == 2 * 1.0);
}

TEST_CASE("backward requires a scalar and non-finite results are errors") {
    TensorD a({1, 1, 2, 2}, 1.0);
    a.set_requires_grad(true);
    CHECK_THROWS_AS(backward(mul(a, a)), ShapeError);
    TensorD big({1, 1, 1, 1}, 1e308);
    CHECK_THROWS_AS(scale(big, 10.0), NumericError);
}

TEST_CASE("no-grad guard records nothing") {
    TensorD a({1, 1, 1, 2}, 1.0);
    a.set_requires_grad(true);
    NoGradGuard guard;
    const TensorD y = mul(a, a);
    CHECK(y.node().parents.empty());
}

TEST_CASE("sgd single step from zero velocity") {
    TensorD p({1, 1, 1, 3}, std::vector<double>{1, -2, 3});
    ParamList<double> params{{"p", p}};
    SgdMomentum<double> opt(params, {});
    backward(sum(mul(p, p)));  // grad = 2p
    const std::vector<double> before(p.data().begin(), p.data().end());
    opt.step(0.1);
    for (std::size_t i = 0; i < 3; ++i) {
        const double g = 2 * before[i];
        CHECK(p.data()[i] == doctest::Approx(before[i] - 0.1 * (g + 1e-4 * before[i])).epsilon(1e-15));
    }
    CHECK(opt.velocity().size() == 1);
    CHECK(opt.velocity()[0].size() == 3);
}

TEST_CASE("poly lr matches the closed form") {
    CHECK(poly_lr(0.05, 0, 60) == 0.05);
    double prev = 1;
    for (int e = 0; e < 60; ++e) {
        const double lr = poly_lr(0.05, e, 60);
        CHECK(lr == 0.05 * std::pow(1.0 - e / 60.0, 0.9));
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK(poly_lr(0.05, 59, 60) == doctest::Approx(0.05 * std::pow(1.0 / 60.0, 0.9)).epsilon(1e-12));
    CHECK_THROWS(poly_lr(0.1, 0, 0));
}
