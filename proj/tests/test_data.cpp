#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "oracle.hpp"
#include "spiro/data.hpp"

using namespace spiro;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    auto p = fs::temp_directory_path() / ("spiro_test_data_" + leaf);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Sample ramp(std::size_t s) {
    Sample out;
    out.id = "ramp";
    out.height = out.width = s;
    out.image.resize(s * s);
    out.mask.resize(s * s);
    for (std::size_t i = 0; i < s * s; ++i) {
        out.image[i] = double(i) / double(s * s);
        out.mask[i] = i % 3 == 0;
    }
    return out;
}

}  // namespace

TEST_CASE("horizontal segment rasterizes to a dark band") {
    SynthConfig cfg;
    cfg.noise_sigma = 0;
    const BezierSegment seg{{10, 20}, {30, 20}, {50, 20}, 3.0};
    const Raster r = rasterize(64, {seg});
    for (std::size_t x = 12; x <= 48; ++x) {
        for (std::size_t y = 19; y <= 21; ++y) CHECK(r.mask[y * 64 + x] == 1);
        CHECK(r.mask[18 * 64 + x] == 0);
        CHECK(r.mask[22 * 64 + x] == 0);
    }
    std::size_t n = 0;
    for (auto m : r.mask) n += m;
    CHECK(std::abs(double(n) - 40.0 * 3.0) <= 0.1 * 120.0);

    std::mt19937_64 rng(1);
    const Sample s = compose_sample(cfg, {seg}, {}, rng);
    CHECK(s.mask == r.mask);
    for (std::size_t x = 12; x <= 48; ++x) {
        CHECK(s.image[20 * 64 + x] < s.image[16 * 64 + x]);
        CHECK(s.image[20 * 64 + x] < s.image[24 * 64 + x]);
    }
}

TEST_CASE("mask area tracks length times width on random segments") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> pos(12, 52), wid(1.5, 3.5);
    double ratio_sum = 0;
    const int n = 40;
    for (int i = 0; i < n; ++i) {
        BezierSegment seg{{pos(rng), pos(rng)}, {pos(rng), pos(rng)}, {pos(rng), pos(rng)}, wid(rng)};
        const double analytic = oracle::bezier_length(seg) * seg.width;
        if (analytic < 40) {
            --i;
            continue;
        }
        std::size_t count = 0;
        for (auto m : rasterize(64, {seg}).mask) count += m;
        ratio_sum += double(count) / analytic;
    }
    CHECK(std::abs(ratio_sum / n - 1) <= 0.1);
}

TEST_CASE("generation is reproducible per seed and index") {
    SynthConfig cfg;
    auto r1 = sample_rng(7, 3), r2 = sample_rng(7, 3), r3 = sample_rng(7, 4);
    const Sample a = generate_sample(cfg, r1), b = generate_sample(cfg, r2), c = generate_sample(cfg, r3);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK(a.image != c.image);
    CHECK_NOTHROW(a.check());
    for (double v : a.image) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
    std::size_t fg = 0;
    for (auto m : a.mask) fg += m;
    CHECK(fg > 0);
    CHECK(fg < a.pixels() / 2);
}

TEST_CASE("synth config validation") {
    SynthConfig cfg;
    cfg.size = 48;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = SynthConfig{};
    cfg.width_min = 3;
    cfg.width_max = 2;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = SynthConfig{};
    cfg.noise_sigma = -1;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("augmentation identities") {
    const Sample s = ramp(16);
    const Sample id = apply_augment(s, {});
    CHECK(id.image == s.image);
    CHECK(id.mask == s.mask);

    for (auto p : {AugmentParams{true, false, 0}, AugmentParams{false, true, 0}}) {
        const Sample twice = apply_augment(apply_augment(s, p), p);
        CHECK(twice.image == s.image);
        CHECK(twice.mask == s.mask);
    }

    const Sample h = apply_augment(s, {true, false, 0});
    CHECK(h.image[0 * 16 + 0] == s.image[0 * 16 + 15]);
    const Sample v = apply_augment(s, {false, true, 0});
    CHECK(v.image[0 * 16 + 3] == s.image[15 * 16 + 3]);
}

TEST_CASE("quarter turn is an index permutation") {
    const Sample s = ramp(8);
    const Sample r = apply_augment(s, {false, false, 90});
    // src = (c dx + s dy + cx, -s dx + c dy + cy) with c = 0, s = 1
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
            const std::size_t sx = y, sy = 7 - x;
            CHECK(r.image[y * 8 + x] == s.image[sy * 8 + sx]);
            CHECK(r.mask[y * 8 + x] == s.mask[sy * 8 + sx]);
        }
    const Sample four = apply_augment(apply_augment(apply_augment(r, {false, false, 90}), {false, false, 90}),
                                      {false, false, 90});
    CHECK(four.image == s.image);
}

TEST_CASE("small rotations keep values in range and masks binary") {
    std::mt19937_64 rng(3);
    SynthConfig cfg;
    const Sample s = generate_sample(cfg, rng);
    for (int i = 0; i < 20; ++i) {
        const AugmentParams p = draw_augment(rng);
        CHECK(std::abs(p.angle_deg) <= kMaxRotationDeg);
        const Sample a = apply_augment(s, p);
        CHECK_NOTHROW(a.check());
        for (double v : a.image) CHECK((v >= 0 && v <= 1));
    }
}

TEST_CASE("pgm quantization example") {
    const auto dir = scratch("pgm");
    write_pgm(dir / "a.pgm", {0, 1, 0.5, 1}, 2, 2);
    const std::string bytes = file_bytes(dir / "a.pgm");
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK((unsigned char)bytes[header.size() + 0] == 0);
    CHECK((unsigned char)bytes[header.size() + 1] == 255);
    CHECK((unsigned char)bytes[header.size() + 2] == 128);
    CHECK((unsigned char)bytes[header.size() + 3] == 255);
    const GrayImage g = read_pgm(dir / "a.pgm");
    CHECK(g.values == std::vector<double>{0, 1, 128 / 255.0, 1});
    CHECK_THROWS_AS(write_pgm(dir / "b.pgm", {1.5}, 1, 1), DataError);
    CHECK(quantize8(0.5) == 128);
    CHECK(quantize8(127.5 / 255) == 128);
}

TEST_CASE("pgm reader handles comments and rejects bad files") {
    const auto dir = scratch("pgm_fixture");
    {
        std::ofstream os(dir / "c.pgm", std::ios::binary);
        os << "P5\n# made by hand\n3 # width\n1\n# maxval next\n15\n";
        os.put(char(0)).put(char(15)).put(char(5));
    }
    const GrayImage g = read_pgm(dir / "c.pgm");
    CHECK(g.width == 3);
    CHECK(g.height == 1);
    CHECK(g.values == std::vector<double>{0, 1, 5 / 15.0});
    {
        std::ofstream os(dir / "t.pgm", std::ios::binary);
        os << "P5\n4 4\n255\n" << "abc";
    }
    CHECK_THROWS_WITH_AS(read_pgm(dir / "t.pgm"), doctest::Contains("truncated"), DataError);
    {
        std::ofstream os(dir / "m.pgm", std::ios::binary);
        os << "P2\n1 1\n255\n0";
    }
    CHECK_THROWS_AS(read_pgm(dir / "m.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), DataError);
}

TEST_CASE("pgm round-trip equals quantization") {
    const auto dir = scratch("pgm_rt");
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 100; ++t) {
        const std::size_t h = 1 + t % 7, w = 1 + t % 5;
        std::vector<double> v(h * w);
        for (auto& x : v) x = u(rng);
        write_pgm(dir / "r.pgm", v, h, w);
        const GrayImage g = read_pgm(dir / "r.pgm");
        CHECK(g.height == h);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(g.values[i] == quantize8(v[i]) / 255.0);
    }
}

TEST_CASE("split sizes and disjointness") {
    std::vector<Sample> all(10);
    for (std::size_t i = 0; i < 10; ++i) all[i].id = std::to_string(i);
    const auto [tr, te] = split_dataset(all, 0.8, 1);
    CHECK(tr.size() == 8);
    CHECK(te.size() == 2);
    std::set<std::string> ids;
    for (const auto& s : tr) ids.insert(s.id);
    for (const auto& s : te) CHECK(ids.insert(s.id).second);
    const auto again = split_dataset(all, 0.8, 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(again.first[i].id == tr[i].id);
    CHECK(split_dataset(all, 0.01, 1).first.size() == 1);
    CHECK_THROWS_AS(split_dataset(all, 1.0, 1), DataError);
    CHECK_THROWS_AS(split_dataset({all[0]}, 0.5, 1), DataError);
}

TEST_CASE("dataset directory round-trip") {
    const auto dir = scratch("ds");
    SynthConfig cfg;
    cfg.size = 32;
    cfg.seed = 5;
    const Dataset ds = generate_dataset(cfg, 6, 3);
    CHECK(ds.train.size() == 6);
    CHECK(ds.test.size() == 3);
    write_dataset(dir, ds);
    const Dataset back = read_dataset(dir);
    REQUIRE(back.train.size() == 6);
    REQUIRE(back.test.size() == 3);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(back.train[i].id == ds.train[i].id);
        CHECK(back.train[i].mask == ds.train[i].mask);
        for (std::size_t p = 0; p < back.train[i].pixels(); ++p)
            CHECK(back.train[i].image[p] == quantize8(ds.train[i].image[p]) / 255.0);
    }
    fs::remove(dir / "masks" / (ds.test[0].id + ".pgm"));
    CHECK_THROWS_AS(read_dataset(dir), DataError);
}

TEST_CASE("batches stack samples in index order") {
    const Sample a = ramp(32);
    Sample b = ramp(32);
    for (auto& v : b.image) v = 1 - v;
    const auto [x, y] = make_batch<float>({a, b}, {1, 0});
    CHECK(x.shape() == Shape{2, 1, 32, 32});
    CHECK(x.data()[0] == float(b.image[0]));
    CHECK(x.data()[1024 + 5] == float(a.image[5]));
    CHECK(y.data()[3] == float(a.mask[3]));
}
