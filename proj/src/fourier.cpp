#include "spiro/fourier.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "spiro/ops.hpp"

namespace spiro {

using cd = std::complex<double>;

namespace {

// tw[k] = exp(-+ j 2 pi k / n), exact at k = 0 and k = n/4. Cached per thread.
const std::vector<cd>& twiddles(std::size_t n, bool inverse) {
    thread_local std::map<std::pair<std::size_t, bool>, std::vector<cd>> cache;
    auto [it, fresh] = cache.try_emplace({n, inverse});
    if (!fresh) return it->second;
    std::vector<cd>& tw = it->second;
    tw.resize(n / 2);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n / 2; ++k) {
        if (k == 0) {
            tw[k] = cd(1.0, 0.0);
        } else if (4 * k == n) {
            tw[k] = cd(0.0, sign);
        } else {
            const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            tw[k] = cd(std::cos(ang), sign * std::sin(ang));
        }
    }
    return tw;
}

}  // namespace

void fft_inplace(std::span<cd> a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_power_of_two(n)) throw ShapeError("fft: length " + std::to_string(n) + " is not a power of two");
    if (n == 1) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const std::vector<cd>& tw = twiddles(n, inverse);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2, stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const cd w = tw[k * stride];
                const cd u = a[i + k];
                const cd b = a[i + k + half];
                // plain product; std::complex operator* goes through the NaN-recovering libgcc path
                const cd v(b.real() * w.real() - b.imag() * w.imag(), b.real() * w.imag() + b.imag() * w.real());
                a[i + k] = u + v;
                a[i + k + half] = u - v;
            }
        }
    }
}

namespace {

void check_fft_dims(const Shape& s, const char* op) {
    if (!is_power_of_two(s.h) || !is_power_of_two(s.w)) {
        throw ShapeError(std::string(op) + ": spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " must be powers of two");
    }
}

// Forward real-to-half-complex transform of one H x W plane into z (H x Wf).
void rfft2_plane(const double* x, std::size_t h, std::size_t w, std::vector<cd>& z) {
    const std::size_t wf = w / 2 + 1;
    z.assign(h * wf, cd{});
    std::vector<cd> row(w), col(h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) row[c] = cd(x[r * w + c], 0.0);
        fft_inplace(row, false);
        for (std::size_t v = 0; v < wf; ++v) z[r * wf + v] = row[v];
    }
    for (std::size_t v = 0; v < wf; ++v) {
        for (std::size_t r = 0; r < h; ++r) col[r] = z[r * wf + v];
        fft_inplace(col, false);
        for (std::size_t r = 0; r < h; ++r) z[r * wf + v] = col[r];
    }
}

// Unnormalized inverse along H for every column, then along W with either the Hermitian
// extension (c2r) or zero fill for the missing columns. Returns the real part.
void half_to_real(std::vector<cd> z, std::size_t h, std::size_t w, bool hermitian, double* out) {
    const std::size_t wf = w / 2 + 1;
    std::vector<cd> col(h), row(w);
    for (std::size_t v = 0; v < wf; ++v) {
        for (std::size_t r = 0; r < h; ++r) col[r] = z[r * wf + v];
        fft_inplace(col, true);
        for (std::size_t r = 0; r < h; ++r) z[r * wf + v] = col[r];
    }
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t v = 0; v < w; ++v) {
            if (v < wf) {
                const cd val = z[r * wf + v];
                const bool self_conjugate = (v == 0 || 2 * v == w);
                row[v] = (hermitian && self_conjugate) ? cd(val.real(), 0.0) : val;
            } else {
                row[v] = hermitian ? std::conj(z[r * wf + (w - v)]) : cd{};
            }
        }
        fft_inplace(row, true);
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = row[c].real();
    }
}

}  // namespace

template <typename T>
ComplexSpectrum<T> dft2_naive(const Tensor<T>& x) {
    const Shape s = x.shape();
    const std::size_t planes = s.n * s.c, h = s.h, w = s.w;
    Buffer<T> re(planes * h * w), im(planes * h * w);
    const auto& in = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t u = 0; u < h; ++u) {
            for (std::size_t v = 0; v < w; ++v) {
                double ar = 0, ai = 0;
                for (std::size_t hh = 0; hh < h; ++hh) {
                    for (std::size_t ww = 0; ww < w; ++ww) {
                        const double turns = static_cast<double>((u * hh) % h) / h + static_cast<double>((v * ww) % w) / w;
                        const double ang = -2.0 * std::numbers::pi * turns;
                        const double val = in[p * h * w + hh * w + ww];
                        ar += val * std::cos(ang);
                        ai += val * std::sin(ang);
                    }
                }
                re[p * h * w + u * w + v] = static_cast<T>(ar);
                im[p * h * w + u * w + v] = static_cast<T>(ai);
            }
        }
    }
    return {Tensor<T>(s, std::move(re)), Tensor<T>(s, std::move(im)), w};
}

template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x) {
    const Shape s = x.shape();
    check_fft_dims(s, "rfft2");
    const std::size_t planes = s.n * s.c, h = s.h, w = s.w, wf = w / 2 + 1;
    // Packed layout per row: wf real parts followed by wf imaginary parts.
    Buffer<T> packed(planes * h * 2 * wf);
    std::vector<double> buf(h * w);
    std::vector<cd> z;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < h * w; ++i) buf[i] = x.data()[p * h * w + i];
        rfft2_plane(buf.data(), h, w, z);
        for (std::size_t r = 0; r < h; ++r) {
            T* dst = packed.data() + (p * h + r) * 2 * wf;
            for (std::size_t v = 0; v < wf; ++v) {
                dst[v] = static_cast<T>(z[r * wf + v].real());
                dst[wf + v] = static_cast<T>(z[r * wf + v].imag());
            }
        }
    }
    auto xp = x.node_ptr();
    Tensor<T> joined = detail::make_result<T>(
        Shape{s.n, s.c, h, 2 * wf}, std::move(packed), {xp},
        [=](const Node<T>& self) {
            auto& gx = detail::grad_of(xp);
            std::vector<cd> g(h * wf);
            std::vector<double> out(h * w);
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t r = 0; r < h; ++r) {
                    const T* src = self.grad.data() + (p * h + r) * 2 * wf;
                    for (std::size_t v = 0; v < wf; ++v) g[r * wf + v] = cd(src[v], src[wf + v]);
                }
                half_to_real(g, h, w, false, out.data());
                for (std::size_t i = 0; i < h * w; ++i) gx[p * h * w + i] += static_cast<T>(out[i]);
            }
        },
        "rfft2");
    return {slice_width(joined, 0, wf), slice_width(joined, wf, wf), w};
}

template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& spectrum) {
    const Shape s = spectrum.re.shape();
    const std::size_t w = spectrum.origin_width;
    if (!(spectrum.im.shape() == s)) throw ShapeError("irfft2: re/im shapes differ");
    if (w == 0 || s.w != w / 2 + 1) {
        throw ShapeError("irfft2: spectrum width " + std::to_string(s.w) + " inconsistent with origin width " +
                         std::to_string(w));
    }
    const Shape out_shape{s.n, s.c, s.h, w};
    check_fft_dims(out_shape, "irfft2");
    const std::size_t planes = s.n * s.c, h = s.h, wf = s.w;
    const double norm = 1.0 / static_cast<double>(h * w);
    Tensor<T> joined = concat_width(spectrum.re, spectrum.im);
    Buffer<T> out(planes * h * w);
    std::vector<cd> z(h * wf);
    std::vector<double> buf(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
            const T* src = joined.data().data() + (p * h + r) * 2 * wf;
            for (std::size_t v = 0; v < wf; ++v) z[r * wf + v] = cd(src[v], src[wf + v]);
        }
        half_to_real(z, h, w, true, buf.data());
        for (std::size_t i = 0; i < h * w; ++i) out[p * h * w + i] = static_cast<T>(buf[i] * norm);
    }
    auto jp = joined.node_ptr();
    return detail::make_result<T>(
        out_shape, std::move(out), {jp},
        [=](const Node<T>& self) {
            // Adjoint: c_v / (H W) * rfft2(grad), c_v = 1 on self-conjugate columns, 2 elsewhere.
            auto& gj = detail::grad_of(jp);
            std::vector<double> g(h * w);
            std::vector<cd> zz;
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < h * w; ++i) g[i] = self.grad[p * h * w + i];
                rfft2_plane(g.data(), h, w, zz);
                for (std::size_t r = 0; r < h; ++r) {
                    T* dst = gj.data() + (p * h + r) * 2 * wf;
                    for (std::size_t v = 0; v < wf; ++v) {
                        const double cv = (v == 0 || 2 * v == w) ? 1.0 : 2.0;
                        dst[v] += static_cast<T>(cv * norm * zz[r * wf + v].real());
                        dst[wf + v] += static_cast<T>(cv * norm * zz[r * wf + v].imag());
                    }
                }
            }
        },
        "irfft2");
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> amplitude_phase(const ComplexSpectrum<T>& spectrum) {
    return {magnitude(spectrum.re, spectrum.im),
            phase(spectrum.re, spectrum.im, static_cast<T>(kPhaseGradMask))};
}

template <typename T>
ComplexSpectrum<T> from_amplitude_phase(const Tensor<T>& amplitude, const Tensor<T>& phase_map,
                                        std::size_t origin_width) {
    if (!(amplitude.shape() == phase_map.shape())) {
        throw ShapeError("from_amplitude_phase: amplitude " + amplitude.shape().str() + " vs phase " +
                         phase_map.shape().str());
    }
    return {mul(amplitude, cos(phase_map)), mul(amplitude, sin(phase_map)), origin_width};
}

template <typename T>
ComplexSpectrum<T> hermitian_full(const ComplexSpectrum<T>& reduced) {
    const Shape s = reduced.shape();
    const std::size_t w = reduced.origin_width, h = s.h, wf = s.w;
    if (wf != w / 2 + 1) throw ShapeError("hermitian_full: input is not a reduced spectrum");
    const std::size_t planes = s.n * s.c;
    Buffer<T> re(planes * h * w), im(planes * h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t u = 0; u < h; ++u) {
            for (std::size_t v = 0; v < w; ++v) {
                T r, i;
                if (v < wf) {
                    r = reduced.re.data()[(p * h + u) * wf + v];
                    i = reduced.im.data()[(p * h + u) * wf + v];
                } else {
                    const std::size_t uu = (h - u) % h, vv = w - v;
                    r = reduced.re.data()[(p * h + uu) * wf + vv];
                    i = -reduced.im.data()[(p * h + uu) * wf + vv];
                }
                re[(p * h + u) * w + v] = r;
                im[(p * h + u) * w + v] = i;
            }
        }
    }
    const Shape full{s.n, s.c, h, w};
    return {Tensor<T>(full, std::move(re)), Tensor<T>(full, std::move(im)), w};
}

#define SPIRO_INSTANTIATE_FOURIER(T)                                                           \
    template ComplexSpectrum<T> dft2_naive(const Tensor<T>&);                                  \
    template ComplexSpectrum<T> rfft2(const Tensor<T>&);                                       \
    template Tensor<T> irfft2(const ComplexSpectrum<T>&);                                      \
    template std::pair<Tensor<T>, Tensor<T>> amplitude_phase(const ComplexSpectrum<T>&);       \
    template ComplexSpectrum<T> from_amplitude_phase(const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template ComplexSpectrum<T> hermitian_full(const ComplexSpectrum<T>&);

SPIRO_INSTANTIATE_FOURIER(float)
SPIRO_INSTANTIATE_FOURIER(double)

}  // namespace spiro
