#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "spiro/data.hpp"
#include "spiro/train.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path p = [] {
        auto d = fs::temp_directory_path() / "spiro_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const fs::path log = root() / "last_output.txt";
    const std::string cmd = std::string(SPIRONET_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(log);
    r.out.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return r;
}

std::string bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> kv_file(const fs::path& p) { return spiro::read_kv_file(p); }

double csv_field(const fs::path& p, const std::string& row, int column) {
    std::ifstream is(p);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind(row + ",", 0) != 0) continue;
        std::stringstream ss(line);
        std::string cell;
        for (int i = 0; i <= column; ++i) std::getline(ss, cell, ',');
        return std::stod(cell);
    }
    FAIL("row " << row << " missing in " << p.string());
    return 0;
}

// small network and data shared by the train/eval/infer/bench cases
const fs::path& toy_config() {
    static const fs::path p = [] {
        const fs::path f = root() / "toy.cfg";
        std::ofstream os(f);
        os << "# toy run\nsize=32\nn_train=12\nn_test=4\ninput_size=32\nstages=2\nbase_channels=4\nepochs=2\n";
        return f;
    }();
    return p;
}

const fs::path& toy_run() {
    static const fs::path p = [] {
        const fs::path data = root() / "toy_data", out = root() / "toy_train";
        REQUIRE(run("generate --config " + toy_config().string() + " --seed 2 --out " + data.string()).code == 0);
        const Run r = run("train --config " + toy_config().string() + " --data " + data.string() + " --seed 5 --out " +
                          out.string());
        INFO(r.out);
        REQUIRE(r.code == 0);
        return out / "seed_5";
    }();
    return p;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("generate").code == 1);
    CHECK(run("train --precision f16 --out x").code == 1);
    CHECK(run("verify --suite nope").code == 1);
    CHECK(run("--help").code == 0);
}

TEST_CASE("generate default config writes 250 pairs and a matching manifest") {
    const fs::path a = root() / "gen_a", b = root() / "gen_b";
    REQUIRE(run("generate --seed 9 --out " + a.string()).code == 0);
    REQUIRE(run("generate --seed 9 --out " + b.string()).code == 0);
    std::size_t images = 0, masks = 0;
    for (const auto& e : fs::directory_iterator(a / "images")) {
        ++images;
        const auto rel = fs::relative(e.path(), a);
        CHECK(bytes(e.path()) == bytes(b / rel));
    }
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(a / "masks")) ++masks;
    CHECK(images == 250);
    CHECK(masks == 250);
    std::ifstream manifest(a / "manifest.csv");
    std::string line;
    std::size_t rows = 0, train = 0;
    std::getline(manifest, line);
    CHECK(line == "id,split");
    while (std::getline(manifest, line)) {
        ++rows;
        train += line.ends_with(",train");
    }
    CHECK(rows == images);
    CHECK(train == 200);
    CHECK(bytes(a / "manifest.csv") == bytes(b / "manifest.csv"));
    // refuses to overwrite, and a bad size is a usage error
    CHECK(run("generate --seed 9 --out " + a.string()).code == 2);
    CHECK(run("generate --size 48 --out " + (root() / "gen_c").string()).code == 1);
}

TEST_CASE("train logs the poly schedule and eval reproduces the train IoU") {
    const fs::path dir = toy_run();
    const auto log = spiro::read_train_log(dir / "train_log.csv");
    REQUIRE(log.size() == 2);
    CHECK(log[0].lr == 0.05);
    CHECK(log[1].lr == 0.05 * std::pow(0.5, 0.9));
    const auto summary = kv_file(dir / "summary.txt");
    const double train_iou = std::stod(summary.at("final_train_iou"));

    const fs::path ev = root() / "eval_train";
    const std::string ck = (dir / "best.ckpt").string();
    const Run r = run("eval --data " + (root() / "toy_data").string() + " --split train --ckpt " + ck + " --ckpt " + ck +
                      " --out " + ev.string());
    INFO(r.out);
    REQUIRE(r.code == 0);
    CHECK(std::abs(csv_field(ev / "summary.csv", "mean", 3) - train_iou) <= 1e-6);
    CHECK(csv_field(ev / "summary.csv", "std", 3) == 0.0);
    CHECK(fs::exists(ev / "metrics_0.csv"));
    CHECK(fs::exists(ev / "metrics_1.csv"));

    CHECK(run("eval --data " + (root() / "toy_data").string() + " --ckpt missing.ckpt --out " + ev.string()).code == 2);
    CHECK(run("eval --data " + (root() / "toy_data").string() + " --out " + ev.string()).code == 1);
}

TEST_CASE("infer is repeatable and writes a binary mask") {
    const fs::path dir = toy_run();
    const fs::path input = root() / "toy_data" / "images";
    const fs::path first = fs::directory_iterator(input)->path();
    const fs::path a = root() / "infer_a", b = root() / "infer_b";
    const std::string base = "infer --ckpt " + (dir / "best.ckpt").string() + " --input " + first.string() + " --prob";
    REQUIRE(run(base + " --out " + a.string()).code == 0);
    REQUIRE(run(base + " --out " + b.string()).code == 0);
    const std::string stem = first.stem().string();
    CHECK(bytes(a / (stem + "_mask.pgm")) == bytes(b / (stem + "_mask.pgm")));
    CHECK(bytes(a / (stem + "_prob.pgm")) == bytes(b / (stem + "_prob.pgm")));
    const spiro::GrayImage mask = spiro::read_pgm(a / (stem + "_mask.pgm"));
    for (double v : mask.values) CHECK((v == 0.0 || v == 1.0));

    // a 64x64 input does not fit the 32x32 network
    const fs::path big = root() / "big.pgm";
    spiro::write_pgm(big, std::vector<double>(64 * 64, 0.5), 64, 64);
    const Run bad = run("infer --ckpt " + (dir / "best.ckpt").string() + " --input " + big.string() + " --out " +
                        a.string());
    CHECK(bad.code == 2);
    CHECK(bad.out.find("32") != std::string::npos);
}

TEST_CASE("bench reports positive throughput with a spread") {
    const fs::path dir = toy_run();
    const fs::path out = root() / "bench";
    const Run r = run("bench --ckpt " + (dir / "best.ckpt").string() + " --repeats 3 --iters 2 --out " + out.string());
    INFO(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("+-") != std::string::npos);
    std::ifstream is(out / "bench.csv");
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) {
        CHECK(std::stod(line.substr(line.find(',') + 1)) > 0);
        ++rows;
    }
    CHECK(rows == 3);
}

TEST_CASE("deterministic f64 training is byte-identical") {
    const fs::path data = root() / "det_data";
    REQUIRE(run("generate --config " + toy_config().string() + " --seed 3 --out " + data.string()).code == 0);
    const std::string base = "train --config " + toy_config().string() + " --data " + data.string() +
                             " --seed 1 --precision f64 --deterministic --out ";
    REQUIRE(run(base + (root() / "det_a").string()).code == 0);
    REQUIRE(run(base + (root() / "det_b").string()).code == 0);
    for (const char* f : {"best.ckpt", "train_log.csv", "summary.txt"})
        CHECK(bytes(root() / "det_a" / "seed_1" / f) == bytes(root() / "det_b" / "seed_1" / f));
}

TEST_CASE("verify passes clean and fails the named suite under an injected fault") {
    const Run clean = run("verify --suite metrics --suite roundtrip --suite frequency_identity");
    CHECK(clean.code == 0);
    for (const char* suite : {"metrics", "roundtrip", "frequency_identity", "tci_identity", "attention_graph", "fft"}) {
        CAPTURE(suite);
        const Run r = run(std::string("verify --suite ") + suite + " --inject-fault " + suite);
        CHECK(r.code == 3);
        CHECK(r.out.find(std::string("[FAIL] ") + suite) != std::string::npos);
    }
    // a fault in one suite leaves the others green
    const Run other = run("verify --suite metrics --inject-fault fft");
    CHECK(other.code == 0);
    CHECK(run("verify --inject-fault nothing").code == 1);
    CHECK(run("verify --list").out.find("gradients") != std::string::npos);
}
