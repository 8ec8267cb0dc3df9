#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spiro/train.hpp"

using namespace spiro;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    auto p = fs::temp_directory_path() / ("spiro_test_train_" + leaf);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TrainConfig toy_config(std::uint64_t seed, int epochs) {
    TrainConfig c;
    c.net.input_size = 32;
    c.net.stages = 3;
    c.net.base_channels = 4;
    c.epochs = epochs;
    c.batch_size = 4;
    c.augment = false;
    c.seed = c.net.seed = seed;
    return c;
}

const Dataset& toy_data() {
    static const Dataset ds = [] {
        SynthConfig s;
        s.size = 32;
        s.seed = 11;
        return generate_dataset(s, 24, 8);
    }();
    return ds;
}

}  // namespace

TEST_CASE("kv parsing trims, strips comments and keeps the last value") {
    std::istringstream is("# header\n lr = 0.01 \nepochs=3 # trailing\n\nlr=0.02\n");
    const auto kv = parse_kv(is);
    CHECK(kv.at("lr") == "0.02");
    CHECK(kv.at("epochs") == "3");
    CHECK(kv.size() == 2);
    std::istringstream bad("novalue\n");
    CHECK_THROWS_AS(parse_kv(bad), ConfigError);
}

TEST_CASE("train config applies known keys and rejects unknown ones") {
    TrainConfig c;
    c.apply({{"lr", "0.1"}, {"epochs", "7"}, {"variant", "III"}, {"base_channels", "8"}, {"seed", "4"}});
    CHECK(c.lr_init == 0.1);
    CHECK(c.epochs == 7);
    CHECK(c.net.ablation == ablation_variant("III").ablation);
    CHECK(c.net.base_channels == 8);
    CHECK(c.seed == 4);
    CHECK(c.net.seed == 4);
    CHECK_THROWS_AS(c.apply({{"learning_rate", "1"}}), ConfigError);
    CHECK_THROWS_AS(c.apply({{"batch_size", "0"}}), ConfigError);
    CHECK_THROWS_AS(c.apply({{"augment", "maybe"}}), ConfigError);
    TrainConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("toy training lowers the loss and follows the poly schedule") {
    for (std::uint64_t seed : {0, 1, 2}) {
        CAPTURE(seed);
        const auto dir = scratch("toy_" + std::to_string(seed));
        const TrainConfig cfg = toy_config(seed, 5);
        const TrainResult r = train_model<float>(cfg, toy_data(), dir);
        REQUIRE(r.log.size() == 5);
        CHECK(r.log.front().lr == cfg.lr_init);
        CHECK(r.log.back().lr == doctest::Approx(cfg.lr_init * std::pow(1.0 / 5, 0.9)).epsilon(1e-12));
        int decreases = 0;
        for (std::size_t e = 1; e < 5; ++e) {
            CHECK(r.log[e].lr < r.log[e - 1].lr);
            decreases += r.log[e].train_loss < r.log[e - 1].train_loss;
        }
        CHECK(decreases == 4);
        const auto logged = read_train_log(dir / "train_log.csv");
        REQUIRE(logged.size() == 5);
        for (std::size_t e = 0; e < 5; ++e) {
            CHECK(logged[e].lr == poly_lr(cfg.lr_init, int(e), 5));
            CHECK(logged[e].train_loss == r.log[e].train_loss);
        }
        CHECK(fs::exists(dir / "best.ckpt"));
        CHECK(fs::exists(dir / "summary.txt"));
        CHECK(r.best_val_iou == r.log[std::size_t(r.best_epoch)].val_iou);

        // re-evaluating the best checkpoint on the training split reproduces the logged value
        const auto net = SpiroNet<float>::load(dir / "best.ckpt");
        CHECK(std::abs(evaluate_dataset(net, toy_data().train).mean.iou - r.final_train_iou) <= 1e-6);
    }
}

TEST_CASE("identical seeds give identical f64 runs") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    TrainConfig cfg = toy_config(3, 2);
    cfg.augment = true;
    cfg.net.precision = Precision::f64;
    train_model<double>(cfg, toy_data(), a);
    train_model<double>(cfg, toy_data(), b);
    auto bytes = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    };
    CHECK(bytes(a / "best.ckpt") == bytes(b / "best.ckpt"));
    CHECK(bytes(a / "train_log.csv") == bytes(b / "train_log.csv"));
}

TEST_CASE("training rejects mismatched data") {
    const auto dir = scratch("mismatch");
    TrainConfig cfg = toy_config(0, 1);
    cfg.net.input_size = 64;
    CHECK_THROWS(train_model<float>(cfg, toy_data(), dir));
}
