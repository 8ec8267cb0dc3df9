#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <utility>

#include "spiro/tensor.hpp"

namespace spiro {

/// Frequency-domain feature map. Reduced form (from rfft2) keeps W/2+1 columns; full form keeps W.
template <typename T>
struct ComplexSpectrum {
    Tensor<T> re;
    Tensor<T> im;
    std::size_t origin_width = 0;

    const Shape& shape() const { return re.shape(); }
};

/// Phase gradients are dropped for bins whose amplitude is below this.
inline constexpr double kPhaseGradMask = 1e-6;

constexpr bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// In-place radix-2 Cooley-Tukey transform. Forward uses exp(-j...), inverse exp(+j...);
/// neither direction is normalized.
void fft_inplace(std::span<std::complex<double>> values, bool inverse);

/// Direct quadruple-loop DFT of every (n, c) plane, full width. O(H^2 W^2).
template <typename T>
ComplexSpectrum<T> dft2_naive(const Tensor<T>& x);

/// Real-input 2D FFT per (n, c) plane; output width W/2+1. Differentiable.
template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x);

/// Inverse of rfft2 with 1/(H*W) normalization. Imaginary parts of the DC and Nyquist columns are
/// ignored, as in the usual c2r convention. Differentiable.
template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& spectrum);

/// (amplitude, phase) with phase in (-pi, pi] and phase 0 where amplitude is 0.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> amplitude_phase(const ComplexSpectrum<T>& spectrum);

template <typename T>
ComplexSpectrum<T> from_amplitude_phase(const Tensor<T>& amplitude, const Tensor<T>& phase,
                                        std::size_t origin_width);

/// Expands a reduced spectrum of a real signal to full width using Hermitian symmetry. Not
/// differentiable.
template <typename T>
ComplexSpectrum<T> hermitian_full(const ComplexSpectrum<T>& reduced);

}  // namespace spiro
