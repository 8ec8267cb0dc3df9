#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "spiro/blocks.hpp"

using namespace spiro;
using oracle::TensorD;

namespace {

ParamList<double> params_of(const auto& blk) {
    ParamList<double> p;
    blk.params("b", p);
    return p;
}

void zero(TensorD& t) {
    for (auto& v : t.data()) v = 0;
}

}  // namespace

TEST_CASE("spatial block projects only when channels change") {
    Initializer init(1);
    const auto same = SpatialBlock<double>::make(4, 4, init);
    const auto grow = SpatialBlock<double>::make(3, 8, init);
    CHECK_FALSE(same.projection.conv.weight.defined());
    CHECK(grow.projection.conv.weight.shape() == Shape{8, 3, 1, 1});
    CHECK(count_params(params_of(same)) == 2 * (4 * 4 * 9 + 4) + 2 * 2 * 4);
    std::mt19937_64 rng(2);
    const TensorD x = oracle::random_tensor({2, 3, 8, 8}, rng);
    const TensorD y = grow(x, Mode::train);
    CHECK(y.shape() == Shape{2, 8, 8, 8});
    for (double v : y.data()) CHECK(v >= 0);
}

TEST_CASE("spatial block with a zeroed branch is relu of its input") {
    Initializer init(3);
    auto blk = SpatialBlock<double>::make(2, 2, init);
    zero(blk.second.bn.gamma);
    std::mt19937_64 rng(4);
    const TensorD x = oracle::random_tensor({1, 2, 4, 4}, rng);
    const TensorD y = blk(x, Mode::train);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == std::max(0.0, x.data()[i]));
}

TEST_CASE("frequency block with identity-like weights doubles its input") {
    Initializer init(5);
    auto blk = FrequencyBlock<double>::make(3, 3, init);
    for (SpectralFilter<double>* f : {&blk.conv_amp, &blk.conv_pha}) {
        zero(f->first.conv.weight);
        zero(f->first.conv.bias);
        zero(f->second.weight);
        zero(f->second.bias);
    }
    zero(blk.conv_channel.weight);
    zero(blk.conv_channel.bias);
    for (std::size_t c = 0; c < 3; ++c) blk.conv_channel.weight.data()[c * 3 + c] = 1;
    std::mt19937_64 rng(6);
    const TensorD x = oracle::random_tensor({2, 3, 8, 16}, rng);
    const TensorD y = blk(x, Mode::eval);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.data()[i] - 2 * x.data()[i]) < 1e-9);
}

TEST_CASE("frequency block changes channels through the 1x1 conv") {
    Initializer init(7);
    const auto blk = FrequencyBlock<double>::make(4, 8, init);
    CHECK(blk.conv_channel.weight.shape() == Shape{8, 4, 1, 1});
    std::mt19937_64 rng(8);
    CHECK(blk(oracle::random_tensor({1, 4, 8, 8}, rng), Mode::train).shape() == Shape{1, 8, 8, 8});
    CHECK_THROWS_AS(blk(oracle::random_tensor({1, 4, 6, 8}, rng), Mode::train), ShapeError);
}

TEST_CASE("ppm sampling emits sum of squared bins tokens") {
    std::mt19937_64 rng(9);
    const TensorD f = oracle::random_tensor({2, 5, 16, 16}, rng);
    const TensorD t = ppm_sample(f, kDefaultPpmBins);
    CHECK(t.shape() == Shape{2, 1, 1 + 4 + 16 + 64, 5});
    // the first token is the global average
    double m = 0;
    for (std::size_t p = 0; p < 256; ++p) m += f.at(1, 3, p / 16, p % 16) / 256;
    CHECK(t.at(1, 0, 0, 3) == doctest::Approx(m).epsilon(1e-12));
}

TEST_CASE("cross attention rows sum to one and output keeps the input shape") {
    Initializer init(10);
    const auto ca = CrossAttention<double>::make(16, embed_dim_for(16), kDefaultPpmBins, init);
    CHECK(ca.embed_dim == 8);
    std::mt19937_64 rng(11);
    const TensorD a = oracle::random_tensor({2, 16, 8, 8}, rng), b = oracle::random_tensor({2, 16, 8, 8}, rng);
    const auto tr = ca.trace(a, b, Mode::train);
    CHECK(tr.output.shape() == a.shape());
    CHECK(tr.attention.shape() == Shape{2, 1, 64, 85});
    CHECK(tr.context.shape() == Shape{2, 8, 8, 8});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t r = 0; r < 64; ++r) {
            double s = 0;
            for (std::size_t k = 0; k < 85; ++k) {
                const double v = tr.attention.at(n, 0, r, k);
                CHECK(v >= 0);
                s += v;
            }
            CHECK(std::abs(s - 1) < 1e-9);
        }
}

TEST_CASE("cross attention with a zero output projection is the plain sum") {
    Initializer init(12);
    auto ca = CrossAttention<double>::make(4, 8, {1, 2}, init);
    zero(ca.w_out.weight);
    zero(ca.w_out.bias);
    std::mt19937_64 rng(13);
    const TensorD a = oracle::random_tensor({1, 4, 4, 4}, rng), b = oracle::random_tensor({1, 4, 4, 4}, rng);
    const TensorD y = ca(a, b, Mode::eval);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == a.data()[i] + b.data()[i]);
}

TEST_CASE("embed width has a floor of eight") {
    CHECK(embed_dim_for(4) == 8);
    CHECK(embed_dim_for(16) == 8);
    CHECK(embed_dim_for(64) == 32);
}

TEST_CASE("cosine adjacency on hand-built embeddings") {
    // rows: e0 = (1,0), e1 = (2,0), e2 = (0,3), e3 = 0
    const TensorD e({1, 1, 4, 2}, std::vector<double>{1, 0, 2, 0, 0, 3, 0, 0});
    const TensorD a = channel_cosine_adjacency(e);
    CHECK(a.at(0, 0, 0, 1) == doctest::Approx(1.0));
    CHECK(a.at(0, 0, 0, 2) == 0.0);
    CHECK(a.at(0, 0, 3, 0) == 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.at(0, 0, i, i) == 1.0);
        for (std::size_t j = 0; j < 4; ++j) CHECK(a.at(0, 0, i, j) == a.at(0, 0, j, i));
    }
}

TEST_CASE("improved laplacian of two disconnected nodes is zero") {
    const TensorD eye({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
    const TensorD l0 = improved_laplacian(eye);
    for (double v : l0.data()) CHECK(v == 0.0);
    // fully connected pair: D = 3, L = I - (A + I) / 3
    const TensorD full({1, 1, 2, 2}, 1.0);
    const TensorD l = improved_laplacian(full);
    CHECK(l.at(0, 0, 0, 0) == doctest::Approx(1.0 / 3));
    CHECK(l.at(0, 0, 0, 1) == doctest::Approx(-1.0 / 3));
}

TEST_CASE("random adjacency spectra stay in the unit interval") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 1 + trial % 16;
        // embeddings follow a ReLU, so cosines are non-negative
        const TensorD e = oracle::random_tensor({1, 1, c, 6}, rng, 0, 1);
        const TensorD a = channel_cosine_adjacency(e);
        const TensorD l = improved_laplacian(a);
        std::vector<double> norm_adj(c * c);
        for (std::size_t i = 0; i < c * c; ++i) norm_adj[i] = (i % (c + 1) == 0 ? 1.0 : 0.0) - l.data()[i];
        for (double ev : oracle::symmetric_eigenvalues(norm_adj, c)) {
            CHECK(ev >= -1 - 1e-9);
            CHECK(ev <= 1 + 1e-9);
        }
    }
}

TEST_CASE("tci leaves input unchanged at init and for a single channel") {
    std::mt19937_64 rng(15);
    Initializer init(16);
    const auto t = Tci<double>::make(8, 16, 16, 0, init);
    CHECK(t.theta.shape() == Shape{1, 1, 16, 16});
    CHECK_FALSE(t.theta_back.defined());
    const TensorD x = oracle::random_tensor({2, 8, 16, 16}, rng);
    const auto tr = t.trace(x);
    CHECK(tr.adjacency.shape() == Shape{2, 1, 8, 8});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(tr.output.data()[i] == x.data()[i]);

    auto single = Tci<double>::make(1, 8, 8, 0, init);
    for (auto& v : single.upsample.weight.data()) v = 1;
    const TensorD x1 = oracle::random_tensor({1, 1, 8, 8}, rng);
    const auto tr1 = single.trace(x1);
    CHECK(tr1.laplacian.data()[0] == 0.0);
    for (std::size_t i = 0; i < x1.numel(); ++i) CHECK(tr1.output.data()[i] == x1.data()[i]);
}

TEST_CASE("tci factored graph weight and size checks") {
    Initializer init(17);
    const auto t = Tci<double>::make(4, 16, 16, 5, init);
    CHECK(t.theta.shape() == Shape{1, 1, 16, 5});
    CHECK(t.theta_back.shape() == Shape{1, 1, 5, 16});
    std::mt19937_64 rng(18);
    CHECK_THROWS_AS(t(oracle::random_tensor({1, 4, 8, 8}, rng)), ShapeError);
}
