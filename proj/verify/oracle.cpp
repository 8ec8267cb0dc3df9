#include "oracle.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace spiro::oracle {

namespace {

std::size_t idx(const Shape& s, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return ((n * s.c + c) * s.h + h) * s.w + w;
}

}  // namespace

TensorD random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = u(rng);
    return TensorD(s, std::move(v));
}

TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD& bias, int stride, int padding) {
    const Shape xs = x.shape(), ws = w.shape();
    const long H = static_cast<long>(xs.h), W = static_cast<long>(xs.w), k = static_cast<long>(ws.h);
    const long Ho = (H + 2 * padding - k) / stride + 1, Wo = (W + 2 * padding - k) / stride + 1;
    const Shape ys{xs.n, ws.n, static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)};
    std::vector<double> y(ys.numel());
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t co = 0; co < ws.n; ++co)
            for (long oy = 0; oy < Ho; ++oy)
                for (long ox = 0; ox < Wo; ++ox) {
                    long double acc = bias.defined() ? bias.data()[co] : 0.0;
                    for (std::size_t ci = 0; ci < xs.c; ++ci)
                        for (long ky = 0; ky < k; ++ky)
                            for (long kx = 0; kx < k; ++kx) {
                                const long iy = oy * stride + ky - padding, ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += static_cast<long double>(
                                           x.data()[idx(xs, n, ci, static_cast<std::size_t>(iy),
                                                        static_cast<std::size_t>(ix))]) *
                                       w.data()[idx(ws, co, ci, static_cast<std::size_t>(ky),
                                                    static_cast<std::size_t>(kx))];
                            }
                    y[idx(ys, n, co, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox))] =
                        static_cast<double>(acc);
                }
    return TensorD(ys, std::move(y));
}

TensorD conv2d_transpose(const TensorD& x, const TensorD& w, const TensorD& bias, int stride, int groups) {
    // The forward conv maps [N,Cout,H*s,W*s] -> [N,Cin,H,W] with taps w[ci, co, ky, kx]; this is
    // its adjoint: every gather becomes a scatter.
    const Shape xs = x.shape(), ws = w.shape();
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t per_group_out = ws.c;
    const std::size_t cout = groups == 1 ? per_group_out : per_group_out * xs.c;
    const Shape ys{xs.n, cout, xs.h * s, xs.w * s};
    std::vector<long double> acc(ys.numel(), 0.0L);
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t j = 0; j < per_group_out; ++j) {
                const std::size_t co = groups == 1 ? j : ci * per_group_out + j;
                for (std::size_t y = 0; y < xs.h; ++y)
                    for (std::size_t xx = 0; xx < xs.w; ++xx)
                        for (std::size_t ky = 0; ky < s; ++ky)
                            for (std::size_t kx = 0; kx < s; ++kx)
                                acc[idx(ys, n, co, y * s + ky, xx * s + kx)] +=
                                    static_cast<long double>(x.data()[idx(xs, n, ci, y, xx)]) *
                                    w.data()[idx(ws, ci, j, ky, kx)];
            }
    std::vector<double> out(acc.size());
    for (std::size_t n = 0; n < ys.n; ++n)
        for (std::size_t c = 0; c < ys.c; ++c)
            for (std::size_t p = 0; p < ys.plane(); ++p) {
                const std::size_t i = (n * ys.c + c) * ys.plane() + p;
                out[i] = static_cast<double>(acc[i] + (bias.defined() ? bias.data()[c] : 0.0));
            }
    return TensorD(ys, std::move(out));
}

TensorD maxpool2d(const TensorD& x, int k, int stride) {
    const Shape xs = x.shape();
    const std::size_t K = static_cast<std::size_t>(k), S = static_cast<std::size_t>(stride);
    const Shape ys{xs.n, xs.c, (xs.h - K) / S + 1, (xs.w - K) / S + 1};
    std::vector<double> y(ys.numel());
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t oy = 0; oy < ys.h; ++oy)
                for (std::size_t ox = 0; ox < ys.w; ++ox) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (std::size_t a = 0; a < K; ++a)
                        for (std::size_t b = 0; b < K; ++b)
                            m = std::max(m, x.data()[idx(xs, n, c, oy * S + a, ox * S + b)]);
                    y[idx(ys, n, c, oy, ox)] = m;
                }
    return TensorD(ys, std::move(y));
}

TensorD adaptive_avgpool2d(const TensorD& x, std::size_t out_h, std::size_t out_w) {
    const Shape xs = x.shape();
    const Shape ys{xs.n, xs.c, out_h, out_w};
    std::vector<double> y(ys.numel());
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t i = 0; i < out_h; ++i)
                for (std::size_t j = 0; j < out_w; ++j) {
                    const auto h0 = static_cast<std::size_t>(std::floor(static_cast<double>(i * xs.h) / out_h));
                    const auto h1 = static_cast<std::size_t>(std::ceil(static_cast<double>((i + 1) * xs.h) / out_h));
                    const auto w0 = static_cast<std::size_t>(std::floor(static_cast<double>(j * xs.w) / out_w));
                    const auto w1 = static_cast<std::size_t>(std::ceil(static_cast<double>((j + 1) * xs.w) / out_w));
                    long double acc = 0;
                    for (std::size_t a = h0; a < h1; ++a)
                        for (std::size_t b = w0; b < w1; ++b) acc += x.data()[idx(xs, n, c, a, b)];
                    y[idx(ys, n, c, i, j)] = static_cast<double>(acc / static_cast<long double>((h1 - h0) * (w1 - w0)));
                }
    return TensorD(ys, std::move(y));
}

TensorD batchnorm_train(const TensorD& x, const TensorD& gamma, const TensorD& beta) {
    const Shape xs = x.shape();
    const long double m = static_cast<long double>(xs.n * xs.plane());
    std::vector<double> y(xs.numel());
    for (std::size_t c = 0; c < xs.c; ++c) {
        long double mu = 0, var = 0;
        for (std::size_t n = 0; n < xs.n; ++n)
            for (std::size_t p = 0; p < xs.plane(); ++p) mu += x.data()[(n * xs.c + c) * xs.plane() + p];
        mu /= m;
        for (std::size_t n = 0; n < xs.n; ++n)
            for (std::size_t p = 0; p < xs.plane(); ++p) {
                const long double d = x.data()[(n * xs.c + c) * xs.plane() + p] - mu;
                var += d * d;
            }
        var /= m;
        const long double inv = 1.0L / std::sqrt(var + 1e-5L);
        for (std::size_t n = 0; n < xs.n; ++n)
            for (std::size_t p = 0; p < xs.plane(); ++p) {
                const std::size_t i = (n * xs.c + c) * xs.plane() + p;
                y[i] = static_cast<double>((x.data()[i] - mu) * inv * gamma.data()[c] + beta.data()[c]);
            }
    }
    return TensorD(xs, std::move(y));
}

TensorD matmul(const TensorD& a, const TensorD& b) {
    const Shape as = a.shape(), bs = b.shape();
    const Shape ys{as.n, 1, as.h, bs.w};
    std::vector<double> y(ys.numel());
    for (std::size_t n = 0; n < as.n; ++n) {
        const std::size_t nb = bs.n == 1 ? 0 : n;
        for (std::size_t r = 0; r < as.h; ++r)
            for (std::size_t c = 0; c < bs.w; ++c) {
                long double acc = 0;
                for (std::size_t k = 0; k < as.w; ++k)
                    acc += static_cast<long double>(a.data()[(n * as.h + r) * as.w + k]) *
                           b.data()[(nb * bs.h + k) * bs.w + c];
                y[(n * ys.h + r) * ys.w + c] = static_cast<double>(acc);
            }
    }
    return TensorD(ys, std::move(y));
}

TensorD softmax_rows(const TensorD& x) {
    const Shape s = x.shape();
    std::vector<double> y(s.numel());
    const std::size_t rows = s.numel() / s.w;
    for (std::size_t r = 0; r < rows; ++r) {
        long double m = -std::numeric_limits<long double>::infinity(), z = 0;
        for (std::size_t j = 0; j < s.w; ++j) m = std::max<long double>(m, x.data()[r * s.w + j]);
        for (std::size_t j = 0; j < s.w; ++j) z += std::exp(static_cast<long double>(x.data()[r * s.w + j]) - m);
        for (std::size_t j = 0; j < s.w; ++j)
            y[r * s.w + j] = static_cast<double>(std::exp(static_cast<long double>(x.data()[r * s.w + j]) - m) / z);
    }
    return TensorD(s, std::move(y));
}

FullSpectrum dft2(const TensorD& x) {
    const Shape s = x.shape();
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    std::vector<double> re(s.numel()), im(s.numel());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const double* f = x.data().data() + p * s.plane();
        for (std::size_t u = 0; u < s.h; ++u)
            for (std::size_t v = 0; v < s.w; ++v) {
                long double ar = 0, ai = 0;
                for (std::size_t a = 0; a < s.h; ++a)
                    for (std::size_t b = 0; b < s.w; ++b) {
                        const long double th = two_pi * (static_cast<long double>((u * a) % s.h) / s.h +
                                                         static_cast<long double>((v * b) % s.w) / s.w);
                        ar += f[a * s.w + b] * std::cos(th);
                        ai -= f[a * s.w + b] * std::sin(th);
                    }
                re[p * s.plane() + u * s.w + v] = static_cast<double>(ar);
                im[p * s.plane() + u * s.w + v] = static_cast<double>(ai);
            }
    }
    return {TensorD(s, std::move(re)), TensorD(s, std::move(im))};
}

TensorD idft2_real(const FullSpectrum& spec) {
    const Shape s = spec.re.shape();
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    std::vector<double> out(s.numel());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const double* r = spec.re.data().data() + p * s.plane();
        const double* i = spec.im.data().data() + p * s.plane();
        for (std::size_t a = 0; a < s.h; ++a)
            for (std::size_t b = 0; b < s.w; ++b) {
                long double acc = 0;
                for (std::size_t u = 0; u < s.h; ++u)
                    for (std::size_t v = 0; v < s.w; ++v) {
                        const long double th = two_pi * (static_cast<long double>((u * a) % s.h) / s.h +
                                                         static_cast<long double>((v * b) % s.w) / s.w);
                        acc += r[u * s.w + v] * std::cos(th) - i[u * s.w + v] * std::sin(th);
                    }
                out[p * s.plane() + a * s.w + b] = static_cast<double>(acc / static_cast<long double>(s.plane()));
            }
    }
    return TensorD(s, std::move(out));
}

std::vector<double> symmetric_eigenvalues(const std::vector<double>& m, std::size_t n) {
    if (m.size() != n * n) throw std::invalid_argument("symmetric_eigenvalues: size mismatch");
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r * n + c];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw std::runtime_error("symmetric_eigenvalues: solver failed");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = solver.eigenvalues()(static_cast<Eigen::Index>(i));
    return out;
}

std::size_t param_count(const SpiroNetConfig& cfg) {
    auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; };
    auto conv_bn = [&](std::size_t cin, std::size_t cout, std::size_t k) { return conv(cin, cout, k) + 2 * cout; };
    auto spatial = [&](std::size_t cin, std::size_t cout) {
        return conv_bn(cin, cout, 3) + conv_bn(cout, cout, 3) + (cin != cout ? conv_bn(cin, cout, 1) : 0);
    };
    auto frequency = [&](std::size_t cin, std::size_t cout) {
        return 2 * (conv_bn(cin, cin, 3) + conv(cin, cin, 3)) + conv(cin, cout, 1);
    };
    auto width = [&](std::size_t i) { return cfg.base_channels << i; };

    std::size_t total = conv_bn(1, cfg.base_channels, 3);
    for (std::size_t i = 0; i < cfg.stages; ++i) {
        const std::size_t cin = i == 0 ? cfg.base_channels : width(i - 1), cout = width(i);
        if (cfg.ablation.spatial) total += spatial(cin, cout);
        if (cfg.ablation.frequency) total += frequency(cin, cout);
        if (cfg.ablation.cross_attention) {
            const std::size_t d = std::max<std::size_t>(cout / 2, 8);
            total += 4 * conv_bn(cout, d, 1) + conv_bn(2 * cout, d, 1) + conv(d, cout, 1);
        }
    }
    total += spatial(width(cfg.stages - 1), width(cfg.stages));
    for (std::size_t i = 0; i < cfg.stages; ++i) {
        const std::size_t cin = width(i + 1), cout = width(i);
        total += cin * cout * 4 + cout + conv_bn(2 * cout, cout, 3) + conv_bn(cout, cout, 3) + conv_bn(2 * cout, cout, 1);
    }
    if (cfg.ablation.tci) {
        const std::size_t c = cfg.base_channels, d = (cfg.input_size / 4) * (cfg.input_size / 4);
        total += conv(c, c, 1) + (cfg.tci_inner_dim == 0 ? d * d : 2 * d * cfg.tci_inner_dim) + c * 16 + c;
    }
    total += conv(cfg.base_channels, 1, 1);
    return total;
}

double bezier_length(const BezierSegment& seg, int intervals) {
    if (intervals % 2) ++intervals;
    auto speed = [&](double t) {
        const double dx = 2 * (1 - t) * (seg.p1.x - seg.p0.x) + 2 * t * (seg.p2.x - seg.p1.x);
        const double dy = 2 * (1 - t) * (seg.p1.y - seg.p0.y) + 2 * t * (seg.p2.y - seg.p1.y);
        return std::sqrt(dx * dx + dy * dy);
    };
    const double hh = 1.0 / intervals;
    double acc = speed(0) + speed(1);
    for (int i = 1; i < intervals; ++i) acc += (i % 2 ? 4 : 2) * speed(i * hh);
    return acc * hh / 3;
}

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && gt[i]) ++c.tp;
        if (pred[i] && !gt[i]) ++c.fp;
        if (!pred[i] && gt[i]) ++c.fn;
        if (!pred[i] && !gt[i]) ++c.tn;
    }
    return c;
}

GradCheckResult gradcheck(const std::function<TensorD()>& loss, const std::vector<TensorD>& inputs,
                          const GradCheckOptions& opt) {
    std::vector<TensorD> ins = inputs;
    for (auto& t : ins) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const TensorD l = loss();
    backward(l);
    std::vector<std::vector<double>> analytic;
    for (auto& t : ins) analytic.emplace_back(t.grad().begin(), t.grad().end());

    NoGradGuard guard;
    const double f0 = loss().item();
    std::mt19937_64 rng(opt.seed);
    GradCheckResult res;
    for (std::size_t ti = 0; ti < ins.size(); ++ti) {
        auto data = ins[ti].data();
        std::vector<std::size_t> coords;
        if (data.size() <= opt.samples) {
            for (std::size_t i = 0; i < data.size(); ++i) coords.push_back(i);
        } else {
            std::set<std::size_t> picked;
            std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
            while (picked.size() < opt.samples) picked.insert(pick(rng));
            coords.assign(picked.begin(), picked.end());
        }
        for (std::size_t i : coords) {
            const double orig = data[i];
            data[i] = orig + opt.h;
            const double fp = loss().item();
            data[i] = orig - opt.h;
            const double fm = loss().item();
            data[i] = orig;
            const double numeric = (fp - fm) / (2 * opt.h);
            const double a = analytic[ti][i] * opt.analytic_scale;
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
            const double fwd = (fp - f0) / opt.h, bwd = (f0 - fm) / opt.h;
            const bool kink =
                std::abs(fwd - bwd) > opt.kink_tolerance * std::max({std::abs(fwd), std::abs(bwd), opt.floor});
            if (rel > 1e-7 && kink) {
                ++res.nonsmooth;
                continue;
            }
            ++res.checked;
            res.max_rel_error = std::max(res.max_rel_error, rel);
        }
    }
    return res;
}

TensorD projection_weights(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_tensor(s, rng, -1, 1);
}

}  // namespace spiro::oracle
