#include "suites.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "oracle.hpp"
#include "spiro/blocks.hpp"
#include "spiro/checkpoint.hpp"
#include "spiro/data.hpp"
#include "spiro/fourier.hpp"
#include "spiro/metrics.hpp"
#include "spiro/network.hpp"
#include "spiro/ops.hpp"

namespace spiro::verify {

using oracle::TensorD;

bool SuiteReport::pass() const {
    for (const auto& c : checks) {
        if (!c.pass) return false;
    }
    return !checks.empty();
}

double SuiteReport::max_observed() const {
    double m = 0;
    for (const auto& c : checks) m = std::max(m, c.observed);
    return m;
}

const CheckResult* SuiteReport::find(const std::string& check) const {
    for (const auto& c : checks) {
        if (c.name == check) return &c;
    }
    return nullptr;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"fft",     "gradients", "frequency_identity", "tci_identity",
                                                   "attention_graph", "metrics", "roundtrip"};
    return names;
}

const std::vector<std::string>& fault_names() { return suite_names(); }

namespace {

class Timer {
   public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

bool faulted(const VerifyOptions& opt, const char* suite) { return opt.inject_fault == suite; }

CheckResult bounded(std::string name, double observed, double tol, std::string detail = {}) {
    return {std::move(name), observed <= tol, observed, tol, std::move(detail)};
}

CheckResult exact(std::string name, std::size_t mismatches, std::string detail = {}) {
    return {std::move(name), mismatches == 0, static_cast<double>(mismatches), 0, std::move(detail)};
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

std::filesystem::path scratch_dir(const VerifyOptions& opt, const std::string& leaf) {
    std::filesystem::path base = opt.scratch;
    if (base.empty()) base = std::filesystem::temp_directory_path() / ("spiro_verify_" + std::to_string(::getpid()));
    std::filesystem::create_directories(base / leaf);
    return base / leaf;
}

SpiroNetConfig toy_config() {
    SpiroNetConfig c;
    c.input_size = 8;
    c.stages = 3;
    c.base_channels = 4;
    return c;
}

void randomize(Tensor<double>& t, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
}

}  // namespace

SuiteReport fft_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"fft", {}, 0};
    NoGradGuard guard;
    std::mt19937_64 rng(opt.seed + 101);
    const std::size_t sizes[] = {4, 8, 16, 32};
    double err_naive = 0, err_oracle = 0, err_library_naive = 0, err_roundtrip = 0, err_inverse = 0;
    std::size_t covered = 0;
    for (std::size_t k = 0; k < opt.fft_cases; ++k) {
        const std::size_t combo = k % 16;
        const std::size_t H = sizes[combo / 4], W = sizes[combo % 4];
        const Shape s{1 + k % 2, 1 + (k / 16) % 2, H, W};
        const TensorD x = oracle::random_tensor(s, rng);
        ComplexSpectrum<double> spec = rfft2(x);
        if (faulted(opt, "fft") && k == 0) spec.re.data()[0] += 1e-6;
        const auto naive = dft2_naive(x);
        const auto ref = oracle::dft2(x);
        const std::size_t wf = W / 2 + 1;
        for (std::size_t p = 0; p < s.n * s.c; ++p)
            for (std::size_t u = 0; u < H; ++u)
                for (std::size_t v = 0; v < wf; ++v) {
                    const std::size_t iw = (p * H + u) * W + v, ir = (p * H + u) * wf + v;
                    err_naive = std::max({err_naive, std::abs(spec.re.data()[ir] - naive.re.data()[iw]),
                                          std::abs(spec.im.data()[ir] - naive.im.data()[iw])});
                    err_oracle = std::max({err_oracle, std::abs(spec.re.data()[ir] - ref.re.data()[iw]),
                                           std::abs(spec.im.data()[ir] - ref.im.data()[iw])});
                }
        err_library_naive = std::max({err_library_naive, max_abs_diff(naive.re.data(), ref.re.data()),
                                      max_abs_diff(naive.im.data(), ref.im.data())});
        const TensorD back = irfft2(spec);
        err_roundtrip = std::max(err_roundtrip, max_abs_diff(back.data(), x.data()));
        err_inverse = std::max(err_inverse, max_abs_diff(back.data(), oracle::idft2_real(ref).data()));
        ++covered;
    }
    r.checks.push_back(bounded("rfft2_vs_dft2_naive", err_naive, 1e-9));
    r.checks.push_back(bounded("rfft2_vs_direct_oracle", err_oracle, 1e-9));
    r.checks.push_back(bounded("dft2_naive_vs_direct_oracle", err_library_naive, 1e-9));
    r.checks.push_back(bounded("irfft2_roundtrip", err_roundtrip, 1e-9));
    r.checks.push_back(bounded("irfft2_vs_direct_inverse", err_inverse, 1e-9));
    r.checks.push_back({"random_cases", covered >= 100, static_cast<double>(covered), 100,
                        "all 16 (H,W) pairs over {4,8,16,32}"});
    r.seconds = timer.seconds();
    return r;
}

namespace {

/// Gradient check of sum(f() * R) for a fixed random R.
CheckResult projected_check(const std::string& name, const std::function<TensorD()>& f,
                            const std::vector<TensorD>& inputs, double tol, std::size_t samples,
                            const VerifyOptions& opt) {
    TensorD weights;
    {
        NoGradGuard guard;
        weights = oracle::projection_weights(f().shape(), opt.seed + std::hash<std::string>{}(name) % 1000);
    }
    oracle::GradCheckOptions go;
    go.samples = samples;
    go.seed = opt.seed + 7;
    if (faulted(opt, "gradients")) go.analytic_scale = 1.001;
    const auto res = oracle::gradcheck([&] { return sum(mul(f(), weights)); }, inputs, go);
    std::ostringstream detail;
    detail << res.checked << " coordinates, " << res.nonsmooth << " skipped at kinks";
    CheckResult c = bounded(name, res.max_rel_error, tol, detail.str());
    if (res.checked == 0 || res.nonsmooth * 10 > res.checked + res.nonsmooth) c.pass = false;
    return c;
}

std::vector<TensorD> tensors_of(const ParamList<double>& params) {
    std::vector<TensorD> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

}  // namespace

SuiteReport gradient_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"gradients", {}, 0};
    std::mt19937_64 rng(opt.seed + 202);
    constexpr double block_tol = 1e-5, net_tol = 1e-4;
    const Mode train = Mode::train;

    {
        TensorD x = oracle::random_tensor({2, 3, 6, 6}, rng), w = oracle::random_tensor({4, 3, 3, 3}, rng),
                b = oracle::random_tensor({1, 4, 1, 1}, rng);
        r.checks.push_back(projected_check("conv2d", [&] { return conv2d(x, w, b, 1, 1); }, {x, w, b}, block_tol, 32, opt));
        r.checks.push_back(
            projected_check("conv2d_stride2", [&] { return conv2d(x, w, b, 2, 1); }, {x, w, b}, block_tol, 32, opt));
    }
    {
        TensorD x = oracle::random_tensor({2, 3, 3, 3}, rng), w = oracle::random_tensor({3, 2, 2, 2}, rng),
                b = oracle::random_tensor({1, 2, 1, 1}, rng), wd = oracle::random_tensor({3, 1, 4, 4}, rng),
                bd = oracle::random_tensor({1, 3, 1, 1}, rng);
        r.checks.push_back(projected_check("conv2d_transpose", [&] { return conv2d_transpose(x, w, b, 2); },
                                           {x, w, b}, block_tol, 32, opt));
        r.checks.push_back(projected_check("conv2d_transpose_depthwise",
                                           [&] { return conv2d_transpose(x, wd, bd, 4, 3); }, {x, wd, bd}, block_tol,
                                           32, opt));
    }
    {
        TensorD x = oracle::random_tensor({2, 3, 8, 8}, rng);
        r.checks.push_back(projected_check("maxpool2d", [&] { return maxpool2d(x, 2, 2); }, {x}, block_tol, 64, opt));
        r.checks.push_back(projected_check("adaptive_avgpool2d", [&] { return adaptive_avgpool2d(x, 3, 5); }, {x},
                                           block_tol, 64, opt));
        TensorD g = oracle::random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5), be = oracle::random_tensor({1, 3, 1, 1}, rng);
        BatchNormState<double> st{TensorD({1, 3, 1, 1}, 0.0), TensorD({1, 3, 1, 1}, 1.0)};
        r.checks.push_back(projected_check("batchnorm2d", [&] { return batchnorm2d(x, g, be, st, train); },
                                           {x, g, be}, block_tol, 48, opt));
    }
    {
        TensorD a = oracle::random_tensor({2, 1, 5, 4}, rng), b = oracle::random_tensor({2, 1, 4, 6}, rng);
        r.checks.push_back(projected_check("matmul_softmax", [&] { return softmax_rows(matmul(a, b)); }, {a, b},
                                           block_tol, 48, opt));
    }
    {
        TensorD x = oracle::random_tensor({1, 2, 8, 8}, rng);
        TensorD amp_gain = oracle::random_tensor({1, 2, 8, 5}, rng, 0.5, 1.5);
        TensorD pha_shift = oracle::random_tensor({1, 2, 8, 5}, rng, -0.5, 0.5);
        r.checks.push_back(projected_check(
            "fourier_chain",
            [&] {
                auto [amp, pha] = amplitude_phase(rfft2(x));
                return irfft2(from_amplitude_phase(mul(amp, amp_gain), add(pha, pha_shift), 8));
            },
            {x, amp_gain, pha_shift}, block_tol, 64, opt));
    }

    Initializer init(opt.seed + 5);
    {
        auto blk = SpatialBlock<double>::make(3, 4, init);
        TensorD x = oracle::random_tensor({2, 3, 8, 8}, rng);
        auto in = tensors_of([&] { ParamList<double> p; blk.params("b", p); return p; }());
        in.push_back(x);
        r.checks.push_back(projected_check("spatial_block", [&] { return blk(x, train); }, in, block_tol, 16, opt));
    }
    {
        auto blk = FrequencyBlock<double>::make(3, 4, init);
        TensorD x = oracle::random_tensor({2, 3, 8, 8}, rng);
        auto in = tensors_of([&] { ParamList<double> p; blk.params("b", p); return p; }());
        in.push_back(x);
        r.checks.push_back(projected_check("frequency_block", [&] { return blk(x, train); }, in, block_tol, 16, opt));
    }
    {
        auto blk = CrossAttention<double>::make(4, 8, kDefaultPpmBins, init);
        TensorD a = oracle::random_tensor({2, 4, 8, 8}, rng), b = oracle::random_tensor({2, 4, 8, 8}, rng);
        auto in = tensors_of([&] { ParamList<double> p; blk.params("b", p); return p; }());
        in.push_back(a);
        in.push_back(b);
        r.checks.push_back(projected_check("cross_attention", [&] { return blk(a, b, train); }, in, block_tol, 12, opt));
    }
    {
        auto blk = Tci<double>::make(4, 8, 8, 0, init);
        randomize(blk.upsample.weight, rng, -1, 1);
        randomize(blk.upsample.bias, rng, -1, 1);
        TensorD x = oracle::random_tensor({2, 4, 8, 8}, rng);
        auto in = tensors_of([&] { ParamList<double> p; blk.params("b", p); return p; }());
        in.push_back(x);
        r.checks.push_back(projected_check("tci", [&] { return blk(x); }, in, block_tol, 16, opt));
    }
    {
        auto net = SpiroNet<double>::build(toy_config(), opt.seed + 11);
        randomize(net.tci->upsample.weight, rng, -0.5, 0.5);
        TensorD x = oracle::random_tensor({3, 1, 8, 8}, rng, 0, 1);
        std::vector<double> gt(3 * 64);
        std::bernoulli_distribution coin(0.3);
        for (auto& v : gt) v = coin(rng) ? 1.0 : 0.0;
        TensorD y({3, 1, 8, 8}, gt);
        auto in = tensors_of(net.parameters());
        oracle::GradCheckOptions go;
        go.samples = 3;
        go.seed = opt.seed + 9;
        if (faulted(opt, "gradients")) go.analytic_scale = 1.001;
        const auto res = oracle::gradcheck([&] { return loss_bce(net.forward(x, train), y); }, in, go);
        std::ostringstream detail;
        detail << res.checked << " parameter coordinates, " << res.nonsmooth << " skipped at kinks";
        CheckResult c = bounded("toy_network_8x8", res.max_rel_error, net_tol, detail.str());
        if (res.checked < 200 || res.nonsmooth * 10 > res.checked + res.nonsmooth) c.pass = false;
        r.checks.push_back(c);
    }
    r.seconds = timer.seconds();
    return r;
}

namespace {

template <typename T>
double frequency_identity_error(const VerifyOptions& opt, Shape s, Mode mode, bool fault) {
    Initializer init(opt.seed + 3);
    auto blk = FrequencyBlock<T>::make(s.c, s.c, init);
    for (SpectralFilter<T>* f : {&blk.conv_amp, &blk.conv_pha}) {
        for (auto* t : {&f->first.conv.weight, &f->first.conv.bias, &f->second.weight, &f->second.bias}) {
            for (auto& v : t->data()) v = T(0);
        }
    }
    for (auto& v : blk.conv_channel.weight.data()) v = T(0);
    for (std::size_t c = 0; c < s.c; ++c) blk.conv_channel.weight.data()[c * s.c + c] = T(1);
    for (auto& v : blk.conv_channel.bias.data()) v = T(0);

    std::mt19937_64 rng(opt.seed + 303);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<T> xv(s.numel());
    for (auto& v : xv) v = static_cast<T>(u(rng));
    const Tensor<T> x(s, xv);
    NoGradGuard guard;
    Tensor<T> y = blk(x, mode);
    if (fault) y.data()[0] += T(1e-3);
    double err = 0;
    for (std::size_t i = 0; i < xv.size(); ++i)
        err = std::max(err, std::abs(static_cast<double>(y.data()[i]) - 2.0 * static_cast<double>(xv[i])));
    return err;
}

}  // namespace

SuiteReport frequency_identity_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"frequency_identity", {}, 0};
    const bool fault = faulted(opt, "frequency_identity");
    double e64 = 0, e32 = 0;
    for (Shape s : {Shape{2, 4, 8, 8}, Shape{1, 3, 16, 32}, Shape{2, 2, 4, 4}}) {
        for (Mode m : {Mode::eval, Mode::train}) {
            e64 = std::max(e64, frequency_identity_error<double>(opt, s, m, fault));
            e32 = std::max(e32, frequency_identity_error<float>(opt, s, m, fault));
        }
    }
    r.checks.push_back(bounded("zeroed_filters_give_2x_f64", e64, 1e-9));
    r.checks.push_back(bounded("zeroed_filters_give_2x_f32", e32, 1e-5));
    r.seconds = timer.seconds();
    return r;
}

SuiteReport tci_identity_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"tci_identity", {}, 0};
    const bool fault = faulted(opt, "tci_identity");
    NoGradGuard guard;
    std::mt19937_64 rng(opt.seed + 404);
    std::size_t zero_theta = 0, zero_up = 0, lap_nonzero = 0, graph_nonzero = 0, single_mismatch = 0;
    for (Shape s : {Shape{2, 4, 8, 8}, Shape{1, 16, 16, 16}, Shape{3, 8, 4, 12}}) {
        Initializer init(opt.seed + s.c);
        auto t = Tci<double>::make(s.c, s.h, s.w, 0, init);
        const TensorD x = oracle::random_tensor(s, rng);
        // default: zero-initialized upsample with Kaiming theta
        TensorD y = t(x);
        if (fault) y.data()[1] += 1e-12;
        for (std::size_t i = 0; i < x.numel(); ++i) zero_up += y.data()[i] != x.data()[i];
        // theta = 0 with a random upsample
        for (auto& v : t.theta.data()) v = 0;
        randomize(t.upsample.weight, rng, -1, 1);
        const TensorD y2 = t(x);
        for (std::size_t i = 0; i < x.numel(); ++i) zero_theta += y2.data()[i] != x.data()[i];
    }
    for (Shape s : {Shape{2, 1, 8, 8}, Shape{1, 1, 16, 16}}) {
        Initializer init(opt.seed + 77);
        auto t = Tci<double>::make(1, s.h, s.w, 0, init);
        randomize(t.upsample.weight, rng, -1, 1);
        const TensorD x = oracle::random_tensor(s, rng);
        const auto tr = t.trace(x);
        for (double v : tr.laplacian.data()) lap_nonzero += v != 0.0;
        for (double v : tr.graph_out.data()) graph_nonzero += v != 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) single_mismatch += tr.output.data()[i] != x.data()[i];
    }
    r.checks.push_back(exact("zero_upsample_output_equals_input", zero_up));
    r.checks.push_back(exact("zero_theta_output_equals_input", zero_theta));
    r.checks.push_back(exact("single_channel_laplacian_is_zero", lap_nonzero));
    r.checks.push_back(exact("single_channel_graph_term_vanishes", graph_nonzero + single_mismatch));
    r.seconds = timer.seconds();
    return r;
}

SuiteReport attention_graph_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"attention_graph", {}, 0};
    const bool fault = faulted(opt, "attention_graph");
    NoGradGuard guard;
    std::mt19937_64 rng(opt.seed + 505);

    double row_err = 0;
    Initializer init(opt.seed + 6);
    for (auto [c, h] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 4}, {4, 16}}) {
        auto ca = CrossAttention<double>::make(c, embed_dim_for(c), kDefaultPpmBins, init);
        const TensorD a = oracle::random_tensor({2, c, h, h}, rng), b = oracle::random_tensor({2, c, h, h}, rng);
        auto tr = ca.trace(a, b, Mode::train);
        if (fault) tr.attention.data()[0] += 1e-6;
        const std::size_t width = tr.attention.shape().w;
        for (std::size_t row = 0; row < tr.attention.numel() / width; ++row) {
            long double acc = 0;
            for (std::size_t j = 0; j < width; ++j) acc += tr.attention.data()[row * width + j];
            row_err = std::max(row_err, static_cast<double>(std::abs(acc - 1.0L)));
        }
    }
    r.checks.push_back(bounded("attention_rows_sum_to_one", row_err, 1e-9));

    std::size_t asym = 0, diag = 0, lsym = 0;
    double spectrum_excess = 0;
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t trial = 0; trial < 48; ++trial) {
        const std::size_t C = 1 + trial % 16, D = 1 + (trial * 7) % 12;
        std::vector<double> e(C * D);
        for (auto& v : e) v = u(rng) < 0.3 ? 0.0 : u(rng);
        if (C > 2 && trial % 3 == 0) std::fill(e.begin(), e.begin() + static_cast<long>(D), 0.0);  // zero row
        const TensorD emb({1, 1, C, D}, e);
        const TensorD A = channel_cosine_adjacency(emb);
        const TensorD L = improved_laplacian(A);
        std::vector<double> norm_adj(C * C);
        for (std::size_t i = 0; i < C; ++i) {
            diag += A.data()[i * C + i] != 1.0;
            for (std::size_t j = 0; j < C; ++j) {
                asym += A.data()[i * C + j] != A.data()[j * C + i];
                lsym += L.data()[i * C + j] != L.data()[j * C + i];
                norm_adj[i * C + j] = (i == j ? 1.0 : 0.0) - L.data()[i * C + j];
            }
        }
        if (fault && trial == 0) norm_adj[0] += 0.5;
        for (double ev : oracle::symmetric_eigenvalues(norm_adj, C))
            spectrum_excess = std::max(spectrum_excess, std::abs(ev) - 1.0);
    }
    r.checks.push_back(exact("adjacency_symmetric", asym));
    r.checks.push_back(exact("adjacency_unit_diagonal", diag));
    r.checks.push_back(exact("laplacian_symmetric", lsym));
    r.checks.push_back(bounded("normalized_adjacency_eigenvalues_in_unit_interval", std::max(0.0, spectrum_excess),
                               1e-12, "dense symmetric eigensolver, C = 1..16"));
    r.seconds = timer.seconds();
    return r;
}

SuiteReport metric_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"metrics", {}, 0};
    const bool fault = faulted(opt, "metrics");
    std::mt19937_64 rng(opt.seed + 606);
    std::uniform_int_distribution<std::uint64_t> count(0, 5000);
    double identity_err = 0;
    std::size_t rational_mismatch = 0, range_violations = 0, symmetry_mismatch = 0;
    for (int k = 0; k < 1000; ++k) {
        ConfusionCounts c{count(rng), count(rng), count(rng), count(rng)};
        if (k % 50 == 0) c.tp = 0;
        const double i = iou(c);
        double f = f1(c);
        if (fault && k == 0) f += 1e-9;
        identity_err = std::max(identity_err, std::abs(f - 2 * i / (1 + i)));
        // F1 = 2tp/(2tp+fp+fn) and 2 IoU/(1+IoU) = 2tp/(tp+fp+fn+tp): same numerator and denominator
        const unsigned __int128 lhs = static_cast<unsigned __int128>(2 * c.tp) * (c.tp + c.fp + c.fn + c.tp);
        const unsigned __int128 rhs = static_cast<unsigned __int128>(2 * c.tp) * (2 * c.tp + c.fp + c.fn);
        rational_mismatch += lhs != rhs;
        for (double v : {sensitivity(c), f, i}) range_violations += v < 0 || v > 1;
        range_violations += mcc(c) < -1 || mcc(c) > 1;
        const ConfusionCounts sw{c.tp, c.fn, c.tn, c.fp};
        symmetry_mismatch += f1(sw) != f1(c) || iou(sw) != iou(c) || mcc(sw) != mcc(c) ||
                             sensitivity(sw) != precision(c);
    }
    r.checks.push_back(bounded("f1_equals_2iou_over_1_plus_iou", identity_err, 1e-12, "1000 random tables"));
    r.checks.push_back(exact("f1_iou_identity_exact_rational", rational_mismatch));
    r.checks.push_back(exact("metric_ranges", range_violations));
    r.checks.push_back(exact("pred_gt_swap_symmetry", symmetry_mismatch));

    const ConfusionCounts perfect{10, 0, 30, 0}, ones{1, 1, 1, 1}, inverted{0, 7, 0, 7};
    double hand = 0;
    for (double v : {sensitivity(perfect), f1(perfect), iou(perfect), mcc(perfect)}) hand = std::max(hand, std::abs(v - 1));
    hand = std::max({hand, std::abs(f1(ones) - 0.5), std::abs(iou(ones) - 1.0 / 3), std::abs(sensitivity(ones) - 0.5),
                     std::abs(mcc(ones))});
    hand = std::max({hand, std::abs(mcc(inverted) + 1), f1(inverted), iou(inverted), sensitivity(inverted)});
    if (fault) hand += 1e-9;
    r.checks.push_back(bounded("hand_cases", hand, 1e-12, "perfect; tp=fp=fn=tn=1; inverted"));

    std::size_t conf_mismatch = 0;
    std::bernoulli_distribution coin(0.4);
    for (int k = 0; k < 20; ++k) {
        std::vector<std::uint8_t> p(256), g(256);
        std::vector<double> pd(256), gd(256);
        for (std::size_t i = 0; i < 256; ++i) {
            p[i] = coin(rng);
            g[i] = coin(rng);
            pd[i] = p[i];
            gd[i] = g[i];
        }
        conf_mismatch += !(confusion<double>(pd, gd) == oracle::confusion(p, g));
    }
    r.checks.push_back(exact("confusion_vs_loop_oracle", conf_mismatch));
    r.seconds = timer.seconds();
    return r;
}

namespace {

template <typename T>
std::size_t checkpoint_mismatches(const VerifyOptions& opt, const std::filesystem::path& dir, bool fault) {
    auto net = SpiroNet<T>::build(toy_config(), opt.seed + 13);
    std::mt19937_64 rng(opt.seed + 707);
    std::uniform_real_distribution<double> u(0.1, 2);
    for (auto& b : net.buffers())
        for (auto& v : b.tensor.data()) v = static_cast<T>(u(rng));
    const auto path = dir / (std::string("toy_") + (sizeof(T) == 4 ? "f32" : "f64") + ".ckpt");
    net.save(path, {{"note", "round trip"}});
    auto loaded = SpiroNet<T>::load(path);
    const auto a = net.state();
    auto b = loaded.state();
    if (fault) b[0].tensor.data()[0] = std::nextafter(b[0].tensor.data()[0], T(10));
    std::size_t bad = a.size() != b.size();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        bad += a[i].name != b[i].name || a[i].tensor.numel() != b[i].tensor.numel() ||
               std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.numel() * sizeof(T)) != 0;
    }
    // Re-encoding the loaded state reproduces the file byte for byte.
    std::ifstream is(path, std::ios::binary);
    const std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    ConfigHeader h = net.config().to_header();
    h.emplace_back("note", "round trip");
    bad += encode_checkpoint(loaded.state(), h) != file;
    return bad;
}

}  // namespace

SuiteReport roundtrip_suite(const VerifyOptions& opt) {
    Timer timer;
    SuiteReport r{"roundtrip", {}, 0};
    const bool fault = faulted(opt, "roundtrip");
    const auto dir = scratch_dir(opt, "roundtrip");
    r.checks.push_back(exact("checkpoint_f32_bit_exact", checkpoint_mismatches<float>(opt, dir, fault)));
    r.checks.push_back(exact("checkpoint_f64_bit_exact", checkpoint_mismatches<double>(opt, dir, false)));

    write_pgm(dir / "example.pgm", {0.0, 1.0, 0.5, 1.0}, 2, 2);
    {
        std::ifstream is(dir / "example.pgm", std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        const std::string expect = std::string("P5\n2 2\n255\n") + '\x00' + '\xff' + '\x80' + '\xff';
        r.checks.push_back(exact("pgm_quantization_example", bytes == expect ? 0 : 1, "[[0,1],[0.5,1]] -> 0,255,128,255"));
    }
    std::size_t rt_bad = 0;
    std::mt19937_64 rng(opt.seed + 808);
    std::uniform_real_distribution<double> u(0, 1);
    for (int k = 0; k < 10; ++k) {
        const std::size_t h = 1 + static_cast<std::size_t>(u(rng) * 40), w = 1 + static_cast<std::size_t>(u(rng) * 40);
        std::vector<double> v(h * w);
        for (auto& x : v) x = u(rng);
        write_pgm(dir / "rt.pgm", v, h, w);
        GrayImage img = read_pgm(dir / "rt.pgm");
        if (fault && k == 0) img.values[0] += 1.0 / 255;
        rt_bad += img.height != h || img.width != w;
        for (std::size_t i = 0; i < v.size(); ++i) rt_bad += img.values[i] != quantize8(v[i]) / 255.0;
    }
    r.checks.push_back(exact("pgm_roundtrip_equals_quantize8", rt_bad));
    {
        std::ofstream os(dir / "fixture.pgm", std::ios::binary);
        os << "P5\n# written by hand\n3 # width\n2\n# maxval next\n255\n";
        const unsigned char px[] = {0, 51, 102, 153, 204, 255};
        os.write(reinterpret_cast<const char*>(px), sizeof px);
    }
    const GrayImage fx = read_pgm(dir / "fixture.pgm");
    std::size_t fx_bad = fx.width != 3 || fx.height != 2;
    for (std::size_t i = 0; i < fx.values.size(); ++i) fx_bad += fx.values[i] != static_cast<double>(i * 51) / 255.0;
    r.checks.push_back(exact("pgm_comment_fixture", fx_bad));
    {
        std::ofstream os(dir / "short.pgm", std::ios::binary);
        os << "P5\n4 4\n255\n" << "abc";
    }
    bool rejected = false;
    try {
        read_pgm(dir / "short.pgm");
    } catch (const DataError&) {
        rejected = true;
    }
    r.checks.push_back(exact("pgm_truncated_rejected", rejected ? 0 : 1));
    r.seconds = timer.seconds();
    return r;
}

SuiteReport run_suite(const std::string& name, const VerifyOptions& opt) {
    if (name == "fft") return fft_suite(opt);
    if (name == "gradients") return gradient_suite(opt);
    if (name == "frequency_identity") return frequency_identity_suite(opt);
    if (name == "tci_identity") return tci_identity_suite(opt);
    if (name == "attention_graph") return attention_graph_suite(opt);
    if (name == "metrics") return metric_suite(opt);
    if (name == "roundtrip") return roundtrip_suite(opt);
    throw std::invalid_argument("unknown verify suite '" + name + "'");
}

void print_report(std::ostream& os, const SuiteReport& report) {
    os << (report.pass() ? "[PASS] " : "[FAIL] ") << report.name << "  max observed " << std::scientific
       << std::setprecision(3) << report.max_observed() << std::defaultfloat << "  (" << std::fixed
       << std::setprecision(2) << report.seconds << " s)" << std::defaultfloat << "\n";
    for (const auto& c : report.checks) {
        os << "    " << (c.pass ? "ok   " : "FAIL ") << std::left << std::setw(52) << c.name << std::right
           << std::scientific << std::setprecision(3) << c.observed << " <= " << c.tolerance << std::defaultfloat;
        if (!c.detail.empty()) os << "  " << c.detail;
        os << "\n";
    }
}

}  // namespace spiro::verify
