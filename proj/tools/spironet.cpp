// spironet: dataset generation, training, evaluation, inference, benchmarking and verification.
//
// Exit codes: 0 ok, 1 usage error, 2 runtime failure, 3 verification failure.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>

#include "spiro/checkpoint.hpp"
#include "spiro/data.hpp"
#include "spiro/metrics.hpp"
#include "spiro/network.hpp"
#include "spiro/train.hpp"
#include "suites.hpp"

namespace fs = std::filesystem;
using namespace spiro;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

class UsageError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string precision;
    bool deterministic = false;

    std::map<std::string, std::string> kv() const { return config.empty() ? std::map<std::string, std::string>{} : read_kv_file(config); }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key=value config file; flags override its values");
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--precision", c.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_flag("--deterministic", c.deterministic, "serial execution for reproducibility runs");
}

fs::path require_out(const Common& c, const char* cmd) {
    if (c.out.empty()) throw UsageError(std::string(cmd) + ": --out is required");
    return c.out;
}

std::map<std::string, std::string> pick(const std::map<std::string, std::string>& kv, const std::set<std::string>& keys) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : kv)
        if (keys.count(k)) out[k] = v;
    return out;
}

const std::set<std::string> kSynthKeys = {"size",          "n_branches", "width_min", "width_max", "noise_sigma",
                                          "gradient_amplitude", "distractors", "n_train", "n_test"};
const std::set<std::string> kTrainKeys = {"lr",  "epochs", "batch_size", "augment", "momentum", "weight_decay",
                                          "seed", "variant", "input_size", "stages", "base_channels", "ppm_bins",
                                          "tci_inner_dim", "use_spatial_encoder", "use_frequency_encoder",
                                          "use_cross_attention", "use_tci", "precision", "seeds", "data"};

void reject_unknown(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) {
        if (!kSynthKeys.count(k) && !kTrainKeys.count(k) && k != "ckpt") throw ConfigError("unknown config key '" + k + "'");
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw UsageError("bad seed '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("empty seed list");
    return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::optional<std::size_t> n_train, n_test, size;
    bool force = false;
};

int cmd_generate(const Common& c, const GenerateArgs& g) {
    const auto kv = c.kv();
    reject_unknown(kv);
    SynthConfig sc;
    std::size_t n_train = 200, n_test = 50;
    auto num = [&](const char* k, auto& dst) {
        if (auto it = kv.find(k); it != kv.end()) {
            std::istringstream is(it->second);
            is >> dst;
            if (!is || !is.eof()) throw ConfigError(std::string("config key '") + k + "': bad value " + it->second);
        }
    };
    num("size", sc.size);
    num("n_branches", sc.n_branches);
    num("width_min", sc.width_min);
    num("width_max", sc.width_max);
    num("noise_sigma", sc.noise_sigma);
    num("gradient_amplitude", sc.gradient_amplitude);
    num("distractors", sc.distractors);
    num("n_train", n_train);
    num("n_test", n_test);
    if (g.size) sc.size = *g.size;
    if (g.n_train) n_train = *g.n_train;
    if (g.n_test) n_test = *g.n_test;
    sc.seed = c.seed.value_or(0);
    try {
        sc.validate();
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }

    const fs::path out = require_out(c, "generate");
    if (fs::exists(out) && !fs::is_empty(out) && !g.force) {
        throw DataError("generate: target " + out.string() + " exists and is not empty (use --force)");
    }
    const Dataset ds = generate_dataset(sc, n_train, n_test);
    if (g.force && fs::exists(out)) {
        fs::remove_all(out / "images");
        fs::remove_all(out / "masks");
    }
    write_dataset(out, ds);
    std::cout << "wrote " << ds.train.size() << " train + " << ds.test.size() << " test samples (" << sc.size << "x"
              << sc.size << ", seed " << sc.seed << ") to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string seeds;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<std::size_t> batch_size;
    std::string variant;
    bool no_augment = false;
};

template <typename T>
int run_train(const TrainConfig& base, const Dataset& data, const std::vector<std::uint64_t>& seeds, const fs::path& out) {
    std::vector<double> best;
    for (std::uint64_t s : seeds) {
        TrainConfig tc = base;
        tc.seed = s;
        tc.net.seed = s;
        const fs::path dir = out / ("seed_" + std::to_string(s));
        std::cout << "== seed " << s << " -> " << dir.string() << "\n";
        const TrainResult r = train_model<T>(tc, data, dir, &std::cout);
        std::cout << "seed " << s << ": best val IoU " << r.best_val_iou << " at epoch " << r.best_epoch
                  << ", final train IoU " << r.final_train_iou << ", " << r.params << " parameters\n";
        best.push_back(r.best_val_iou);
    }
    const double mean = std::accumulate(best.begin(), best.end(), 0.0) / static_cast<double>(best.size());
    double var = 0;
    for (double b : best) var += (b - mean) * (b - mean) / static_cast<double>(best.size());
    std::cout << "best val IoU over " << best.size() << " seed(s): " << mean << " +- " << std::sqrt(var) << "\n";
    return 0;
}

int cmd_train(const Common& c, const TrainArgs& a) {
    auto kv = c.kv();
    reject_unknown(kv);
    std::string data_dir = a.data;
    if (data_dir.empty() && kv.count("data")) data_dir = kv["data"];
    if (data_dir.empty()) throw UsageError("train: --data is required");
    std::string seeds_text = a.seeds;
    if (seeds_text.empty() && kv.count("seeds")) seeds_text = kv["seeds"];

    TrainConfig tc;
    auto tkv = pick(kv, kTrainKeys);
    tkv.erase("seeds");
    tkv.erase("data");
    if (!a.variant.empty()) tkv["variant"] = a.variant;
    if (!c.precision.empty()) tkv["precision"] = c.precision;
    tc.apply(tkv);
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.lr) tc.lr_init = *a.lr;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.no_augment) tc.augment = false;
    tc.validate();

    std::vector<std::uint64_t> seeds;
    if (!seeds_text.empty()) seeds = parse_seed_list(seeds_text);
    else seeds = {c.seed.value_or(tc.seed)};
    const fs::path out = require_out(c, "train");
    if (!fs::is_directory(data_dir)) throw DataError("train: dataset directory not found: " + data_dir);
    const Dataset data = read_dataset(data_dir);
    std::cout << "dataset " << data_dir << ": " << data.train.size() << " train, " << data.test.size() << " test\n";
    return tc.net.precision == Precision::f64 ? run_train<double>(tc, data, seeds, out)
                                              : run_train<float>(tc, data, seeds, out);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string data;
    std::vector<std::string> ckpts;
    std::string split = "test";
};

std::size_t value_bytes(const fs::path& ckpt) {
    for (const auto& [k, v] : read_checkpoint_header(ckpt))
        if (k == "__value_bytes") return std::stoul(v);
    throw CheckpointError("checkpoint " + ckpt.string() + " has no value width");
}

/// A config file that names network keys must agree with the checkpoint.
void check_config_matches(const std::map<std::string, std::string>& kv, const fs::path& ckpt) {
    const ConfigHeader header = read_checkpoint_header(ckpt);
    const SpiroNetConfig stored = SpiroNetConfig::from_header(header);
    if (kv.empty()) return;
    TrainConfig probe;
    probe.net = stored;
    auto nkv = pick(kv, {"input_size", "stages", "base_channels", "ppm_bins", "tci_inner_dim", "use_spatial_encoder",
                         "use_frequency_encoder", "use_cross_attention", "use_tci", "variant"});
    if (nkv.empty()) return;
    probe.apply(nkv);
    probe.net.seed = stored.seed;
    probe.net.precision = stored.precision;
    if (probe.net.to_header() != stored.to_header()) {
        throw ConfigError("config does not match checkpoint " + ckpt.string() + " (architecture keys differ)");
    }
}

template <typename T>
MetricReport eval_one(const fs::path& ckpt, const std::vector<Sample>& samples) {
    const SpiroNet<T> net = SpiroNet<T>::load(ckpt);
    for (const auto& s : samples) {
        if (s.height != net.config().input_size || s.width != net.config().input_size) {
            throw DataError("sample '" + s.id + "' is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                            ", checkpoint expects input_size " + std::to_string(net.config().input_size));
        }
    }
    return evaluate_dataset(net, samples);
}

int cmd_eval(const Common& c, const EvalArgs& a) {
    auto kv = c.kv();
    reject_unknown(kv);
    std::vector<std::string> ckpts = a.ckpts;
    if (ckpts.empty() && kv.count("ckpt")) ckpts.push_back(kv["ckpt"]);
    if (ckpts.empty()) throw UsageError("eval: at least one --ckpt is required");
    std::string data_dir = a.data.empty() && kv.count("data") ? kv["data"] : a.data;
    if (data_dir.empty()) throw UsageError("eval: --data is required");
    if (a.split != "test" && a.split != "train") throw UsageError("eval: --split must be test or train");
    const fs::path out = require_out(c, "eval");
    const Dataset data = read_dataset(data_dir);
    const auto& samples = a.split == "test" ? data.test : data.train;
    fs::create_directories(out);

    std::vector<ImageMetrics> per_ckpt;
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
        const fs::path ck = ckpts[i];
        if (!fs::exists(ck)) throw CheckpointError("checkpoint not found: " + ck.string());
        check_config_matches(kv, ck);
        const MetricReport rep = value_bytes(ck) == 8 ? eval_one<double>(ck, samples) : eval_one<float>(ck, samples);
        write_metrics_csv(out / ("metrics_" + std::to_string(i) + ".csv"), rep);
        ImageMetrics m = rep.mean;
        m.id = ck.string();
        per_ckpt.push_back(m);
        std::cout << ck.string() << " [" << a.split << ", " << samples.size() << " images]: sen " << m.sen << " f1 "
                  << m.f1 << " iou " << m.iou << " mcc " << m.mcc << "\n";
    }
    const MetricReport agg = summarize(per_ckpt);
    std::ofstream os(out / "summary.csv", std::ios::binary);
    os << "checkpoint,sen,f1,iou,mcc\n" << std::setprecision(17);
    for (const auto& m : agg.per_image) os << m.id << "," << m.sen << "," << m.f1 << "," << m.iou << "," << m.mcc << "\n";
    for (const auto* m : {&agg.mean, &agg.std}) os << m->id << "," << m->sen << "," << m->f1 << "," << m->iou << "," << m->mcc << "\n";
    std::cout << "over " << ckpts.size() << " checkpoint(s): iou " << agg.mean.iou << " +- " << agg.std.iou << ", f1 "
              << agg.mean.f1 << " +- " << agg.std.f1 << "\n";
    return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
    std::string ckpt;
    std::string input;
    bool prob = false;
};

template <typename T>
int run_infer(const InferArgs& a, const fs::path& out) {
    const SpiroNet<T> net = SpiroNet<T>::load(a.ckpt);
    const GrayImage img = read_pgm(a.input);
    const std::size_t S = net.config().input_size;
    if (img.height != S || img.width != S) {
        throw DataError("infer: input is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        "; the checkpoint was configured for input_size " + std::to_string(S) + " (resize to " +
                        std::to_string(S) + "x" + std::to_string(S) + ")");
    }
    std::vector<T> xv(img.values.begin(), img.values.end());
    const Tensor<T> x(Shape{1, 1, S, S}, std::move(xv));
    Tensor<T> logits;
    {
        NoGradGuard guard;
        logits = net.forward(x, Mode::eval);
    }
    const Tensor<T> mask = threshold_logits(logits);
    fs::create_directories(out);
    const std::string stem = fs::path(a.input).stem().string();
    std::vector<double> mv(mask.data().begin(), mask.data().end());
    write_pgm(out / (stem + "_mask.pgm"), mv, S, S);
    std::size_t fg = 0;
    for (double v : mv) fg += v > 0;
    if (a.prob) {
        std::vector<double> pv(logits.numel());
        for (std::size_t i = 0; i < pv.size(); ++i) pv[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data()[i])));
        write_pgm(out / (stem + "_prob.pgm"), pv, S, S);
    }
    std::cout << "wrote " << (out / (stem + "_mask.pgm")).string() << " (" << fg << " foreground pixels of " << S * S
              << ")\n";
    return 0;
}

int cmd_infer(const Common& c, const InferArgs& a) {
    if (a.ckpt.empty() || a.input.empty()) throw UsageError("infer: --ckpt and --input are required");
    const fs::path out = require_out(c, "infer");
    if (!fs::exists(a.ckpt)) throw CheckpointError("checkpoint not found: " + a.ckpt);
    return value_bytes(a.ckpt) == 8 ? run_infer<double>(a, out) : run_infer<float>(a, out);
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string ckpt;
    std::size_t batch_size = 1;
    int repeats = 5;
    int iters = 10;
    int warmup = 2;
};

template <typename T>
int run_bench(const Common& c, const BenchArgs& a) {
    const SpiroNet<T> net = SpiroNet<T>::load(a.ckpt);
    SynthConfig sc;
    sc.size = net.config().input_size;
    sc.seed = c.seed.value_or(0);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < a.batch_size; ++i) {
        auto rng = sample_rng(sc.seed, i);
        samples.push_back(generate_sample(sc, rng));
    }
    std::vector<std::size_t> idx(a.batch_size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const Tensor<T> x = make_batch<T>(samples, idx).first;
    NoGradGuard guard;
    for (int i = 0; i < a.warmup; ++i) net.forward(x, Mode::eval);
    std::vector<double> fps;
    for (int r = 0; r < a.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < a.iters; ++i) net.forward(x, Mode::eval);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fps.push_back(static_cast<double>(a.batch_size * static_cast<std::size_t>(a.iters)) / secs);
    }
    const double mean = std::accumulate(fps.begin(), fps.end(), 0.0) / static_cast<double>(fps.size());
    double var = 0;
    for (double f : fps) var += (f - mean) * (f - mean) / static_cast<double>(fps.size());
    std::cout << "input " << sc.size << "x" << sc.size << ", batch " << a.batch_size << ", " << net.count_params()
              << " parameters, " << to_string(net.config().precision) << "\n";
    std::cout << std::fixed << std::setprecision(2) << "FPS " << mean << " +- " << std::sqrt(var) << " over "
              << a.repeats << " repeats of " << a.iters << " forwards\n";
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        std::ofstream os(fs::path(c.out) / "bench.csv", std::ios::binary);
        os << "repeat,fps\n" << std::setprecision(6);
        for (std::size_t i = 0; i < fps.size(); ++i) os << i << "," << fps[i] << "\n";
    }
    return 0;
}

int cmd_bench(const Common& c, const BenchArgs& a) {
    if (a.ckpt.empty()) throw UsageError("bench: --ckpt is required");
    if (a.batch_size < 1 || a.repeats < 1 || a.iters < 1) throw UsageError("bench: sizes must be >= 1");
    if (!fs::exists(a.ckpt)) throw CheckpointError("checkpoint not found: " + a.ckpt);
    return value_bytes(a.ckpt) == 8 ? run_bench<double>(c, a) : run_bench<float>(c, a);
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
    std::vector<std::string> suites;
    std::string fault;
    bool list = false;
};

int cmd_verify(const Common& c, const VerifyArgs& a) {
    if (a.list) {
        for (const auto& s : verify::suite_names()) std::cout << s << "\n";
        return 0;
    }
    const auto& names = verify::suite_names();
    if (!a.fault.empty() && std::find(names.begin(), names.end(), a.fault) == names.end()) {
        throw UsageError("verify: unknown fault '" + a.fault + "' (choose a suite name from --list)");
    }
    for (const auto& s : a.suites) {
        if (std::find(names.begin(), names.end(), s) == names.end()) throw UsageError("verify: unknown suite '" + s + "'");
    }
    verify::VerifyOptions opt;
    opt.seed = c.seed.value_or(0);
    opt.inject_fault = a.fault;
    if (!c.out.empty()) opt.scratch = c.out;
    bool ok = true;
    for (const auto& s : a.suites.empty() ? names : a.suites) {
        const auto rep = verify::run_suite(s, opt);
        verify::print_report(std::cout, rep);
        ok = ok && rep.pass();
    }
    std::cout << (ok ? "verify: all suites passed\n" : "verify: FAILED\n");
    return ok ? 0 : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
    spiro::retain_freed_memory();
    CLI::App app{"spironet: dual-domain vessel segmentation network"};
    app.require_subcommand(1);
    Common common;

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "write a synthetic vessel dataset");
    add_common(g, common);
    g->add_option("--n-train", gen.n_train, "training samples (200)");
    g->add_option("--n-test", gen.n_test, "test samples (50)");
    g->add_option("--size", gen.size, "image side, power of two >= 32 (64)");
    g->add_flag("--force", gen.force, "overwrite a non-empty target");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train one model per seed");
    add_common(t, common);
    t->add_option("--data", tr.data, "dataset directory");
    t->add_option("--seeds", tr.seeds, "comma-separated seeds; overrides --seed");
    t->add_option("--epochs", tr.epochs, "epochs (60)");
    t->add_option("--lr", tr.lr, "initial learning rate (0.05)");
    t->add_option("--batch-size", tr.batch_size, "batch size (4)");
    t->add_option("--variant", tr.variant, "ablation row: I..VII or full");
    t->add_flag("--no-augment", tr.no_augment, "disable flips and rotation");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "per-image metrics, aggregated across checkpoints");
    add_common(e, common);
    e->add_option("--data", ev.data, "dataset directory");
    e->add_option("--ckpt", ev.ckpts, "checkpoint; repeat for several seeds");
    e->add_option("--split", ev.split, "test or train");

    InferArgs in;
    auto* i = app.add_subcommand("infer", "segment one PGM image");
    add_common(i, common);
    i->add_option("--ckpt", in.ckpt, "checkpoint");
    i->add_option("--input", in.input, "input PGM");
    i->add_flag("--prob", in.prob, "also write the probability map");

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "eval-mode forward throughput");
    add_common(b, common);
    b->add_option("--ckpt", be.ckpt, "checkpoint");
    b->add_option("--batch-size", be.batch_size, "images per forward (1)");
    b->add_option("--repeats", be.repeats, "timed repeats (5)");
    b->add_option("--iters", be.iters, "forwards per repeat (10)");
    b->add_option("--warmup", be.warmup, "untimed warm-up forwards (2)");

    VerifyArgs ve;
    auto* v = app.add_subcommand("verify", "oracle and invariant suites");
    add_common(v, common);
    v->add_option("--suite", ve.suites, "run only these suites");
    v->add_option("--inject-fault", ve.fault, "test hook: perturb the named suite");
    v->add_flag("--list", ve.list, "list suite names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*g) return cmd_generate(common, gen);
        if (*t) return cmd_train(common, tr);
        if (*e) return cmd_eval(common, ev);
        if (*i) return cmd_infer(common, in);
        if (*b) return cmd_bench(common, be);
        if (*v) return cmd_verify(common, ve);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
