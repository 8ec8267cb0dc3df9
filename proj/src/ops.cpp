#include "spiro/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace spiro {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

using detail::grad_of;
using detail::make_result;
using detail::needs_grad;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
    throw ShapeError(op + ": " + what);
}

void require_same(const char* op, const Shape& a, const Shape& b) {
    if (!(a == b)) shape_fail(op, "shape mismatch " + a.str() + " vs " + b.str());
}

// Output columns ow whose input column ow*s - p + kj lands inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t w, int s, int p, int kj, std::size_t ow_n) {
    const long off = kj - p;
    const long last = static_cast<long>(w) - 1 - off;
    const long n = static_cast<long>(ow_n);
    const long lo = std::min(n, off >= 0 ? 0 : (-off + s - 1) / s);
    const long hi = last < 0 ? lo : std::max(lo, std::min(n, last / s + 1));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// col[(ci*k + ki)*k + kj][oh*ow_n + ow] = x[ci][oh*s - p + ki][ow*s - p + kj], zero outside.
template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, int k, int s, int p,
            std::size_t oh_n, std::size_t ow_n, T* col) {
    const std::size_t plane = oh_n * ow_n;
    for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xc = x + ci * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + ((ci * k + ki) * k + kj) * plane;
                const auto [lo, hi] = valid_cols(w, s, p, kj, ow_n);
                for (std::size_t oh = 0; oh < oh_n; ++oh) {
                    const long ih = static_cast<long>(oh) * s - p + ki;
                    T* dst = row + oh * ow_n;
                    if (ih < 0 || ih >= static_cast<long>(h)) {
                        std::fill(dst, dst + ow_n, T(0));
                        continue;
                    }
                    const T* src = xc + ih * w;
                    const long off = kj - p;
                    std::fill(dst, dst + lo, T(0));
                    if (s == 1) {
                        std::copy(src + (long(lo) + off), src + (long(hi) + off), dst + lo);
                    } else {
                        for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[long(ow) * s + off];
                    }
                    std::fill(dst + hi, dst + ow_n, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, int k, int s, int p,
            std::size_t oh_n, std::size_t ow_n, T* gx) {
    const std::size_t plane = oh_n * ow_n;
    for (std::size_t ci = 0; ci < cin; ++ci) {
        T* gc = gx + ci * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + ((ci * k + ki) * k + kj) * plane;
                const auto [lo, hi] = valid_cols(w, s, p, kj, ow_n);
                for (std::size_t oh = 0; oh < oh_n; ++oh) {
                    const long ih = static_cast<long>(oh) * s - p + ki;
                    if (ih < 0 || ih >= static_cast<long>(h)) continue;
                    const T* src = row + oh * ow_n;
                    T* dst = gc + ih * w;
                    const long off = kj - p;
                    for (std::size_t ow = lo; ow < hi; ++ow) dst[long(ow) * s + off] += src[ow];
                }
            }
        }
    }
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
    const auto& in = x.node().data;
    Buffer<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    auto xp = x.node_ptr();
    return make_result<T>(
        x.shape(), std::move(out), {xp},
        [xp, df](const Node<T>& self) {
            auto& gx = grad_of(xp);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += self.grad[i] * df(xp->data[i], self.data[i]);
            }
        },
        op);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.h != ws.w || ws.h % 2 == 0) shape_fail("conv2d", "kernel must be square and odd, got " + ws.str());
    if (xs.c != ws.c) {
        shape_fail("conv2d", "input channels (dim 1) " + std::to_string(xs.c) +
                                 " != weight Cin (dim 1) " + std::to_string(ws.c));
    }
    if (stride < 1 || padding < 0) shape_fail("conv2d", "stride must be >= 1 and padding >= 0");
    const int k = static_cast<int>(ws.h);
    if (xs.h + 2 * padding < static_cast<std::size_t>(k) || xs.w + 2 * padding < static_cast<std::size_t>(k)) {
        shape_fail("conv2d", "kernel larger than padded input " + xs.str());
    }
    if (bias.defined() && bias.numel() != ws.n) {
        shape_fail("conv2d", "bias length " + std::to_string(bias.numel()) + " != Cout " +
                                 std::to_string(ws.n));
    }
    const std::size_t cout = ws.n, cin = xs.c;
    const std::size_t oh = (xs.h + 2 * padding - k) / stride + 1;
    const std::size_t ow = (xs.w + 2 * padding - k) / stride + 1;
    const std::size_t kk = cin * k * k, plane = oh * ow;
    const bool pointwise = (k == 1 && stride == 1 && padding == 0);

    Buffer<T> out(xs.n * cout * plane);
    Buffer<T> col(pointwise ? 0 : kk * plane);
    CMapMat<T> wm(weight.node().data.data(), cout, kk);
    for (std::size_t n = 0; n < xs.n; ++n) {
        const T* xn = x.node().data.data() + n * cin * xs.h * xs.w;
        if (!pointwise) im2col(xn, cin, xs.h, xs.w, k, stride, padding, oh, ow, col.data());
        CMapMat<T> cm(pointwise ? xn : col.data(), kk, plane);
        MapMat<T> ym(out.data() + n * cout * plane, cout, plane);
        ym.noalias() = wm * cm;
        if (bias.defined()) {
            for (std::size_t co = 0; co < cout; ++co) ym.row(co).array() += bias.node().data[co];
        }
    }

    auto xp = x.node_ptr(), wp = weight.node_ptr(), bp = bias.node_ptr();
    return make_result<T>(
        Shape{xs.n, cout, oh, ow}, std::move(out), {xp, wp, bp},
        [=](const Node<T>& self) {
            Buffer<T> colb(pointwise ? 0 : kk * plane);
            Buffer<T> gcol(kk * plane);
            CMapMat<T> wmb(wp->data.data(), cout, kk);
            for (std::size_t n = 0; n < xs.n; ++n) {
                CMapMat<T> gy(self.grad.data() + n * cout * plane, cout, plane);
                const T* xn = xp->data.data() + n * cin * xs.h * xs.w;
                if (needs_grad(wp)) {
                    if (!pointwise) im2col(xn, cin, xs.h, xs.w, k, stride, padding, oh, ow, colb.data());
                    CMapMat<T> cm(pointwise ? xn : colb.data(), kk, plane);
                    MapMat<T> gw(grad_of(wp).data(), cout, kk);
                    gw.noalias() += gy * cm.transpose();
                }
                if (needs_grad(bp)) {
                    auto& gb = grad_of(bp);
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += gy.row(co).sum();
                }
                if (needs_grad(xp)) {
                    T* gx = grad_of(xp).data() + n * cin * xs.h * xs.w;
                    if (pointwise) {
                        MapMat<T> gxm(gx, kk, plane);
                        gxm.noalias() += wmb.transpose() * gy;
                    } else {
                        MapMat<T> gc(gcol.data(), kk, plane);
                        gc.noalias() = wmb.transpose() * gy;
                        col2im(gcol.data(), cin, xs.h, xs.w, k, stride, padding, oh, ow, gx);
                    }
                }
            }
        },
        "conv2d");
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int groups) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (stride != 2 && stride != 4) shape_fail("conv2d_transpose", "stride must be 2 or 4");
    if (ws.h != static_cast<std::size_t>(stride) || ws.w != static_cast<std::size_t>(stride)) {
        shape_fail("conv2d_transpose", "kernel side must equal stride, got " + ws.str());
    }
    if (ws.n != xs.c) {
        shape_fail("conv2d_transpose", "input channels (dim 1) " + std::to_string(xs.c) +
                                           " != weight Cin (dim 0) " + std::to_string(ws.n));
    }
    const bool depthwise = groups != 1;
    if (depthwise && groups != static_cast<int>(xs.c)) {
        shape_fail("conv2d_transpose", "groups must be 1 or the input channel count");
    }
    const std::size_t cin = xs.c, cg = ws.c, s = stride;
    const std::size_t cout = depthwise ? cin * cg : cg;
    if (bias.defined() && bias.numel() != cout) {
        shape_fail("conv2d_transpose", "bias length " + std::to_string(bias.numel()) + " != Cout " +
                                           std::to_string(cout));
    }
    const std::size_t h = xs.h, w = xs.w, oh = h * s, ow = w * s, plane = h * w;
    const std::size_t rows = cout * s * s;

    Buffer<T> out(xs.n * cout * oh * ow);
    const T* wd = weight.node().data.data();
    const T* bd = bias.defined() ? bias.node().data.data() : nullptr;

    // Dense path: Y[(co,i,j), hw] = sum_ci W[ci,(co,i,j)] X[ci,hw].
    Buffer<T> ybuf(depthwise ? 0 : rows * plane);
    for (std::size_t n = 0; n < xs.n; ++n) {
        const T* xn = x.node().data.data() + n * cin * plane;
        T* on = out.data() + n * cout * oh * ow;
        if (depthwise) {
            for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t g = 0; g < cg; ++g) {
                    const std::size_t co = ci * cg + g;
                    const T* kern = wd + (ci * cg + g) * s * s;
                    const T b = bd ? bd[co] : T(0);
                    for (std::size_t hh = 0; hh < h; ++hh) {
                        for (std::size_t ww = 0; ww < w; ++ww) {
                            const T v = xn[ci * plane + hh * w + ww];
                            for (std::size_t i = 0; i < s; ++i) {
                                for (std::size_t j = 0; j < s; ++j) {
                                    on[(co * oh + hh * s + i) * ow + ww * s + j] = v * kern[i * s + j] + b;
                                }
                            }
                        }
                    }
                }
            }
        } else {
            CMapMat<T> wm(wd, cin, rows);
            CMapMat<T> xm(xn, cin, plane);
            MapMat<T> ym(ybuf.data(), rows, plane);
            ym.noalias() = wm.transpose() * xm;
            for (std::size_t co = 0; co < cout; ++co) {
                const T b = bd ? bd[co] : T(0);
                for (std::size_t i = 0; i < s; ++i) {
                    for (std::size_t j = 0; j < s; ++j) {
                        const T* yr = ybuf.data() + ((co * s + i) * s + j) * plane;
                        for (std::size_t hh = 0; hh < h; ++hh) {
                            for (std::size_t ww = 0; ww < w; ++ww) {
                                on[(co * oh + hh * s + i) * ow + ww * s + j] = yr[hh * w + ww] + b;
                            }
                        }
                    }
                }
            }
        }
    }

    auto xp = x.node_ptr(), wp = weight.node_ptr(), bp = bias.node_ptr();
    return make_result<T>(
        Shape{xs.n, cout, oh, ow}, std::move(out), {xp, wp, bp},
        [=](const Node<T>& self) {
            Buffer<T> gybuf(depthwise ? 0 : rows * plane);
            for (std::size_t n = 0; n < xs.n; ++n) {
                const T* gon = self.grad.data() + n * cout * oh * ow;
                const T* xn = xp->data.data() + n * cin * plane;
                if (needs_grad(bp)) {
                    auto& gb = grad_of(bp);
                    for (std::size_t co = 0; co < cout; ++co) {
                        T acc = 0;
                        for (std::size_t q = 0; q < oh * ow; ++q) acc += gon[co * oh * ow + q];
                        gb[co] += acc;
                    }
                }
                if (depthwise) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t g = 0; g < cg; ++g) {
                            const std::size_t co = ci * cg + g;
                            const T* kern = wp->data.data() + (ci * cg + g) * s * s;
                            for (std::size_t hh = 0; hh < h; ++hh) {
                                for (std::size_t ww = 0; ww < w; ++ww) {
                                    T gxacc = 0;
                                    const T v = xn[ci * plane + hh * w + ww];
                                    for (std::size_t i = 0; i < s; ++i) {
                                        for (std::size_t j = 0; j < s; ++j) {
                                            const T go = gon[(co * oh + hh * s + i) * ow + ww * s + j];
                                            gxacc += go * kern[i * s + j];
                                            if (needs_grad(wp)) grad_of(wp)[(ci * cg + g) * s * s + i * s + j] += go * v;
                                        }
                                    }
                                    if (needs_grad(xp)) grad_of(xp)[n * cin * plane + ci * plane + hh * w + ww] += gxacc;
                                }
                            }
                        }
                    }
                    continue;
                }
                for (std::size_t co = 0; co < cout; ++co) {
                    for (std::size_t i = 0; i < s; ++i) {
                        for (std::size_t j = 0; j < s; ++j) {
                            T* yr = gybuf.data() + ((co * s + i) * s + j) * plane;
                            for (std::size_t hh = 0; hh < h; ++hh) {
                                for (std::size_t ww = 0; ww < w; ++ww) {
                                    yr[hh * w + ww] = gon[(co * oh + hh * s + i) * ow + ww * s + j];
                                }
                            }
                        }
                    }
                }
                CMapMat<T> gy(gybuf.data(), rows, plane);
                if (needs_grad(xp)) {
                    CMapMat<T> wm(wp->data.data(), cin, rows);
                    MapMat<T> gx(grad_of(xp).data() + n * cin * plane, cin, plane);
                    gx.noalias() += wm * gy;
                }
                if (needs_grad(wp)) {
                    CMapMat<T> xm(xn, cin, plane);
                    MapMat<T> gw(grad_of(wp).data(), cin, rows);
                    gw.noalias() += xm * gy.transpose();
                }
            }
        },
        "conv2d_transpose");
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride) {
    const Shape xs = x.shape();
    if (kernel < 1 || stride < 1) shape_fail("maxpool2d", "kernel and stride must be >= 1");
    if (kernel == stride && (xs.h % stride != 0 || xs.w % stride != 0)) {
        shape_fail("maxpool2d", "spatial dims " + std::to_string(xs.h) + "x" + std::to_string(xs.w) +
                                    " not divisible by stride " + std::to_string(stride));
    }
    if (xs.h < static_cast<std::size_t>(kernel) || xs.w < static_cast<std::size_t>(kernel)) {
        shape_fail("maxpool2d", "kernel larger than input " + xs.str());
    }
    const std::size_t oh = (xs.h - kernel) / stride + 1, ow = (xs.w - kernel) / stride + 1;
    const std::size_t planes = xs.n * xs.c;
    Buffer<T> out(planes * oh * ow);
    std::vector<std::size_t> arg(out.size());
    const auto& in = x.node().data;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = p * xs.h * xs.w + (i * stride) * xs.w + j * stride;
                for (int a = 0; a < kernel; ++a) {
                    for (int b = 0; b < kernel; ++b) {
                        const std::size_t idx = p * xs.h * xs.w + (i * stride + a) * xs.w + j * stride + b;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                const std::size_t o = (p * oh + i) * ow + j;
                out[o] = in[best];
                arg[o] = best;
            }
        }
    }
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{xs.n, xs.c, oh, ow}, std::move(out), {xp},
        [xp, arg = std::move(arg)](const Node<T>& self) {
            auto& gx = grad_of(xp);
            for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[o];
        },
        "maxpool2d");
}

template <typename T>
Tensor<T> adaptive_avgpool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    const Shape xs = x.shape();
    if (out_h == 0 || out_w == 0) shape_fail("adaptive_avgpool2d", "output grid must be non-empty");
    auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; };
    auto hi = [](std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; };
    const std::size_t planes = xs.n * xs.c;
    Buffer<T> out(planes * out_h * out_w);
    const auto& in = x.node().data;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < out_h; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) {
                const std::size_t h0 = lo(i, xs.h, out_h), h1 = hi(i, xs.h, out_h);
                const std::size_t w0 = lo(j, xs.w, out_w), w1 = hi(j, xs.w, out_w);
                T acc = 0;
                for (std::size_t a = h0; a < h1; ++a)
                    for (std::size_t b = w0; b < w1; ++b) acc += in[p * xs.h * xs.w + a * xs.w + b];
                out[(p * out_h + i) * out_w + j] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
        }
    }
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{xs.n, xs.c, out_h, out_w}, std::move(out), {xp},
        [=](const Node<T>& self) {
            auto& gx = grad_of(xp);
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < out_h; ++i) {
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const std::size_t h0 = lo(i, xs.h, out_h), h1 = hi(i, xs.h, out_h);
                        const std::size_t w0 = lo(j, xs.w, out_w), w1 = hi(j, xs.w, out_w);
                        const T g = self.grad[(p * out_h + i) * out_w + j] /
                                    static_cast<T>((h1 - h0) * (w1 - w0));
                        for (std::size_t a = h0; a < h1; ++a)
                            for (std::size_t b = w0; b < w1; ++b) gx[p * xs.h * xs.w + a * xs.w + b] += g;
                    }
                }
            }
        },
        "adaptive_avgpool2d");
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode) {
    const Shape xs = x.shape();
    if (xs.numel() == 0) shape_fail("batchnorm2d", "empty batch");
    if (gamma.numel() != xs.c || beta.numel() != xs.c) {
        shape_fail("batchnorm2d", "gamma/beta length must equal channel count " + std::to_string(xs.c));
    }
    if (!state.running_mean.defined()) {
        state.running_mean = Tensor<T>(Shape{1, xs.c, 1, 1}, T(0));
        state.running_var = Tensor<T>(Shape{1, xs.c, 1, 1}, T(1));
    }
    if (state.running_mean.numel() != xs.c) shape_fail("batchnorm2d", "running stats channel mismatch");
    const std::size_t c_n = xs.c, plane = xs.plane(), count = xs.n * plane;
    const T eps = static_cast<T>(kBatchNormEps);
    Buffer<T> mu(c_n), inv_std(c_n);
    const auto& in = x.node().data;
    auto& rm = state.running_mean.node().data;
    auto& rv = state.running_var.node().data;
    if (mode == Mode::train) {
        const T momentum = static_cast<T>(kBatchNormMomentum);
        for (std::size_t c = 0; c < c_n; ++c) {
            T acc = 0;
            for (std::size_t n = 0; n < xs.n; ++n)
                for (std::size_t q = 0; q < plane; ++q) acc += in[(n * c_n + c) * plane + q];
            const T m = acc / static_cast<T>(count);
            T var = 0;
            for (std::size_t n = 0; n < xs.n; ++n) {
                for (std::size_t q = 0; q < plane; ++q) {
                    const T d = in[(n * c_n + c) * plane + q] - m;
                    var += d * d;
                }
            }
            const T biased = var / static_cast<T>(count);
            const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : biased;
            mu[c] = m;
            inv_std[c] = T(1) / std::sqrt(biased + eps);
            rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
            rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < c_n; ++c) {
            mu[c] = rm[c];
            inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
        }
    }
    Buffer<T> xhat(in.size()), out(in.size());
    const auto& g = gamma.node().data;
    const auto& b = beta.node().data;
    for (std::size_t n = 0; n < xs.n; ++n) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const std::size_t base = (n * c_n + c) * plane;
            for (std::size_t q = 0; q < plane; ++q) {
                const T v = (in[base + q] - mu[c]) * inv_std[c];
                xhat[base + q] = v;
                out[base + q] = g[c] * v + b[c];
            }
        }
    }
    auto xp = x.node_ptr(), gp = gamma.node_ptr(), bp = beta.node_ptr();
    const bool train = mode == Mode::train;
    return make_result<T>(
        xs, std::move(out), {xp, gp, bp},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node<T>& self) {
            const auto& gy = self.grad;
            Buffer<T> sum_gy(c_n, T(0)), sum_gy_xhat(c_n, T(0));
            for (std::size_t n = 0; n < xs.n; ++n) {
                for (std::size_t c = 0; c < c_n; ++c) {
                    const std::size_t base = (n * c_n + c) * plane;
                    for (std::size_t q = 0; q < plane; ++q) {
                        sum_gy[c] += gy[base + q];
                        sum_gy_xhat[c] += gy[base + q] * xhat[base + q];
                    }
                }
            }
            if (needs_grad(gp)) {
                auto& gg = grad_of(gp);
                for (std::size_t c = 0; c < c_n; ++c) gg[c] += sum_gy_xhat[c];
            }
            if (needs_grad(bp)) {
                auto& gb = grad_of(bp);
                for (std::size_t c = 0; c < c_n; ++c) gb[c] += sum_gy[c];
            }
            if (!needs_grad(xp)) return;
            auto& gx = grad_of(xp);
            const auto& gam = gp->data;
            const T m = static_cast<T>(count);
            for (std::size_t n = 0; n < xs.n; ++n) {
                for (std::size_t c = 0; c < c_n; ++c) {
                    const std::size_t base = (n * c_n + c) * plane;
                    const T k = gam[c] * inv_std[c];
                    for (std::size_t q = 0; q < plane; ++q) {
                        if (train) {
                            gx[base + q] += k * (gy[base + q] - sum_gy[c] / m -
                                                 xhat[base + q] * sum_gy_xhat[c] / m);
                        } else {
                            gx[base + q] += k * gy[base + q];
                        }
                    }
                }
            }
        },
        "batchnorm2d");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary<T>(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
    return unary<T>(
        "cos", x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
    return unary<T>(
        "sin", x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const Shape xs = x.shape();
    const std::size_t cols = xs.w, rows = xs.numel() / std::max<std::size_t>(cols, 1);
    const auto& in = x.node().data;
    Buffer<T> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = in.data() + r * cols;
        T* dst = out.data() + r * cols;
        const T mx = *std::max_element(src, src + cols);
        T z = 0;
        for (std::size_t j = 0; j < cols; ++j) z += (dst[j] = std::exp(src[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) dst[j] /= z;
    }
    auto xp = x.node_ptr();
    return make_result<T>(
        xs, std::move(out), {xp},
        [xp, rows, cols](const Node<T>& self) {
            auto& gx = grad_of(xp);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * cols;
                const T* gy = self.grad.data() + r * cols;
                T dot = 0;
                for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (gy[j] - dot);
            }
        },
        "softmax_rows");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("add", a.shape(), b.shape());
    Buffer<T> out(a.numel());
    const auto &ad = a.node().data, &bd = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        a.shape(), std::move(out), {ap, bp},
        [ap, bp](const Node<T>& self) {
            for (const auto& p : {ap, bp}) {
                if (!needs_grad(p)) continue;
                auto& g = grad_of(p);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        },
        "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("sub", a.shape(), b.shape());
    Buffer<T> out(a.numel());
    const auto &ad = a.node().data, &bd = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        a.shape(), std::move(out), {ap, bp},
        [ap, bp](const Node<T>& self) {
            if (needs_grad(ap)) {
                auto& g = grad_of(ap);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (needs_grad(bp)) {
                auto& g = grad_of(bp);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        },
        "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same("mul", a.shape(), b.shape());
    Buffer<T> out(a.numel());
    const auto &ad = a.node().data, &bd = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        a.shape(), std::move(out), {ap, bp},
        [ap, bp](const Node<T>& self) {
            if (needs_grad(ap)) {
                auto& g = grad_of(ap);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bp->data[i];
            }
            if (needs_grad(bp)) {
                auto& g = grad_of(bp);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ap->data[i];
            }
        },
        "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return unary<T>(
        "scale", a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.node().data) acc += v;
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{}, {acc}, {xp},
        [xp](const Node<T>& self) {
            auto& g = grad_of(xp);
            for (auto& v : g) v += self.grad[0];
        },
        "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.numel());
    T acc = 0;
    for (T v : x.node().data) acc += v;
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{}, {acc * inv}, {xp},
        [xp, inv](const Node<T>& self) {
            auto& g = grad_of(xp);
            for (auto& v : g) v += self.grad[0] * inv;
        },
        "mean");
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.c != 1 || bs.c != 1) shape_fail("matmul", "operands must have a unit channel axis");
    if (as.w != bs.h) {
        shape_fail("matmul", "inner dims differ: a cols (dim 3) " + std::to_string(as.w) +
                                 " vs b rows (dim 2) " + std::to_string(bs.h));
    }
    if (bs.n != as.n && bs.n != 1) shape_fail("matmul", "batch dims differ " + as.str() + " vs " + bs.str());
    const std::size_t r = as.h, k = as.w, c = bs.w;
    Buffer<T> out(as.n * r * c);
    const bool shared_b = bs.n == 1 && as.n != 1;
    for (std::size_t n = 0; n < as.n; ++n) {
        CMapMat<T> am(a.node().data.data() + n * r * k, r, k);
        CMapMat<T> bm(b.node().data.data() + (shared_b ? 0 : n) * k * c, k, c);
        MapMat<T> ym(out.data() + n * r * c, r, c);
        ym.noalias() = am * bm;
    }
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        Shape{as.n, 1, r, c}, std::move(out), {ap, bp},
        [=](const Node<T>& self) {
            for (std::size_t n = 0; n < as.n; ++n) {
                const std::size_t bofs = (shared_b ? 0 : n) * k * c;
                CMapMat<T> gy(self.grad.data() + n * r * c, r, c);
                if (needs_grad(ap)) {
                    CMapMat<T> bm(bp->data.data() + bofs, k, c);
                    MapMat<T> ga(grad_of(ap).data() + n * r * k, r, k);
                    ga.noalias() += gy * bm.transpose();
                }
                if (needs_grad(bp)) {
                    CMapMat<T> am(ap->data.data() + n * r * k, r, k);
                    MapMat<T> gb(grad_of(bp).data() + bofs, k, c);
                    gb.noalias() += am.transpose() * gy;
                }
            }
        },
        "matmul");
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    const Shape xs = x.shape();
    const std::size_t planes = xs.n * xs.c, h = xs.h, w = xs.w;
    Buffer<T> out(xs.numel());
    const auto& in = x.node().data;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out[p * h * w + j * h + i] = in[p * h * w + i * w + j];
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{xs.n, xs.c, w, h}, std::move(out), {xp},
        [=](const Node<T>& self) {
            auto& g = grad_of(xp);
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) g[p * h * w + i * w + j] += self.grad[p * h * w + j * h + i];
        },
        "transpose");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape.numel() != x.numel()) {
        shape_fail("reshape", "cannot view " + x.shape().str() + " as " + shape.str());
    }
    auto xp = x.node_ptr();
    return make_result<T>(
        shape, x.node().data, {xp},
        [xp](const Node<T>& self) {
            auto& g = grad_of(xp);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        },
        "reshape");
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    const Shape xs = x.shape();
    return transpose(reshape(x, Shape{xs.n, 1, xs.c, xs.plane()}));
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, std::size_t h, std::size_t w) {
    const Shape xs = x.shape();
    if (xs.c != 1 || xs.h != h * w) {
        shape_fail("from_tokens", "token tensor " + xs.str() + " does not hold " + std::to_string(h) +
                                      "x" + std::to_string(w) + " positions");
    }
    return reshape(transpose(x), Shape{xs.n, xs.w, h, w});
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
        shape_fail("concat_channels", "non-channel dims differ " + as.str() + " vs " + bs.str());
    }
    const std::size_t plane = as.plane(), ca = as.c * plane, cb = bs.c * plane;
    Buffer<T> out(as.numel() + bs.numel());
    for (std::size_t n = 0; n < as.n; ++n) {
        std::copy_n(a.node().data.data() + n * ca, ca, out.data() + n * (ca + cb));
        std::copy_n(b.node().data.data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
    }
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        Shape{as.n, as.c + bs.c, as.h, as.w}, std::move(out), {ap, bp},
        [=](const Node<T>& self) {
            for (std::size_t n = 0; n < as.n; ++n) {
                const T* g = self.grad.data() + n * (ca + cb);
                if (needs_grad(ap)) {
                    T* ga = grad_of(ap).data() + n * ca;
                    for (std::size_t i = 0; i < ca; ++i) ga[i] += g[i];
                }
                if (needs_grad(bp)) {
                    T* gb = grad_of(bp).data() + n * cb;
                    for (std::size_t i = 0; i < cb; ++i) gb[i] += g[ca + i];
                }
            }
        },
        "concat_channels");
}

template <typename T>
Tensor<T> concat_width(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.c != bs.c || as.h != bs.h) {
        shape_fail("concat_width", "leading dims differ " + as.str() + " vs " + bs.str());
    }
    const std::size_t rows = as.n * as.c * as.h, wa = as.w, wb = bs.w;
    Buffer<T> out(rows * (wa + wb));
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.node().data.data() + r * wa, wa, out.data() + r * (wa + wb));
        std::copy_n(b.node().data.data() + r * wb, wb, out.data() + r * (wa + wb) + wa);
    }
    auto ap = a.node_ptr(), bp = b.node_ptr();
    return make_result<T>(
        Shape{as.n, as.c, as.h, wa + wb}, std::move(out), {ap, bp},
        [=](const Node<T>& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* g = self.grad.data() + r * (wa + wb);
                if (needs_grad(ap)) {
                    T* ga = grad_of(ap).data() + r * wa;
                    for (std::size_t i = 0; i < wa; ++i) ga[i] += g[i];
                }
                if (needs_grad(bp)) {
                    T* gb = grad_of(bp).data() + r * wb;
                    for (std::size_t i = 0; i < wb; ++i) gb[i] += g[wa + i];
                }
            }
        },
        "concat_width");
}

template <typename T>
Tensor<T> slice_width(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const Shape xs = x.shape();
    if (begin + count > xs.w || count == 0) {
        shape_fail("slice_width", "range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                      ") outside width " + std::to_string(xs.w));
    }
    const std::size_t rows = xs.n * xs.c * xs.h, w = xs.w;
    Buffer<T> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.node().data.data() + r * w + begin, count, out.data() + r * count);
    auto xp = x.node_ptr();
    return make_result<T>(
        Shape{xs.n, xs.c, xs.h, count}, std::move(out), {xp},
        [=](const Node<T>& self) {
            auto& g = grad_of(xp);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < count; ++i) g[r * w + begin + i] += self.grad[r * count + i];
        },
        "slice_width");
}

template <typename T>
Tensor<T> magnitude(const Tensor<T>& re, const Tensor<T>& im) {
    require_same("magnitude", re.shape(), im.shape());
    Buffer<T> out(re.numel());
    const auto &rd = re.node().data, &id = im.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(rd[i], id[i]);
    auto rp = re.node_ptr(), ip = im.node_ptr();
    return make_result<T>(
        re.shape(), std::move(out), {rp, ip},
        [rp, ip](const Node<T>& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const T a = self.data[i];
                if (a == T(0)) continue;
                if (needs_grad(rp)) grad_of(rp)[i] += self.grad[i] * rp->data[i] / a;
                if (needs_grad(ip)) grad_of(ip)[i] += self.grad[i] * ip->data[i] / a;
            }
        },
        "magnitude");
}

template <typename T>
Tensor<T> phase(const Tensor<T>& re, const Tensor<T>& im, T mask_below) {
    require_same("phase", re.shape(), im.shape());
    Buffer<T> out(re.numel());
    const auto &rd = re.node().data, &id = im.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (rd[i] == T(0) && id[i] == T(0)) {
            out[i] = T(0);
        } else if (id[i] == T(0) && rd[i] < T(0)) {
            out[i] = std::numbers::pi_v<T>;  // both signed zeros map to +pi
        } else {
            out[i] = std::atan2(id[i], rd[i]);
        }
    }
    auto rp = re.node_ptr(), ip = im.node_ptr();
    return make_result<T>(
        re.shape(), std::move(out), {rp, ip},
        [rp, ip, mask_below](const Node<T>& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const T r = rp->data[i], m = ip->data[i];
                const T a2 = r * r + m * m;
                if (std::sqrt(a2) < mask_below || a2 == T(0)) continue;
                if (needs_grad(rp)) grad_of(rp)[i] += self.grad[i] * (-m / a2);
                if (needs_grad(ip)) grad_of(ip)[i] += self.grad[i] * (r / a2);
            }
        },
        "phase");
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
    require_same("bce_with_logits", logits.shape(), target.shape());
    const auto &z = logits.node().data, &y = target.node().data;
    T acc = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        acc += std::max(z[i], T(0)) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    const T inv = T(1) / static_cast<T>(z.size());
    auto zp = logits.node_ptr(), yp = target.node_ptr();
    return make_result<T>(
        Shape{}, {acc * inv}, {zp, yp},
        [zp, yp, inv](const Node<T>& self) {
            if (!needs_grad(zp)) return;
            auto& g = grad_of(zp);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = zp->data[i];
                const T p = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
                g[i] += self.grad[0] * inv * (p - yp->data[i]);
            }
        },
        "bce_with_logits");
}

#define SPIRO_INSTANTIATE_OPS(T)                                                                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
    template Tensor<T> conv2d_transpose(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                        int);                                                      \
    template Tensor<T> maxpool2d(const Tensor<T>&, int, int);                                      \
    template Tensor<T> adaptive_avgpool2d(const Tensor<T>&, std::size_t, std::size_t);             \
    template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                   BatchNormState<T>&, Mode);                                      \
    template Tensor<T> relu(const Tensor<T>&);                                                     \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
    template Tensor<T> cos(const Tensor<T>&);                                                      \
    template Tensor<T> sin(const Tensor<T>&);                                                      \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                             \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> scale(const Tensor<T>&, T);                                                 \
    template Tensor<T> sum(const Tensor<T>&);                                                      \
    template Tensor<T> mean(const Tensor<T>&);                                                     \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> transpose(const Tensor<T>&);                                                \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
    template Tensor<T> to_tokens(const Tensor<T>&);                                                \
    template Tensor<T> from_tokens(const Tensor<T>&, std::size_t, std::size_t);                    \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> concat_width(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> slice_width(const Tensor<T>&, std::size_t, std::size_t);                    \
    template Tensor<T> magnitude(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> phase(const Tensor<T>&, const Tensor<T>&, T);                               \
    template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);

SPIRO_INSTANTIATE_OPS(float)
SPIRO_INSTANTIATE_OPS(double)

}  // namespace spiro
