#pragma once

// Reference implementations used only by tests and the verify command. Everything here is written
// as direct loops in long double or double so it shares no code path with the library kernels.

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "spiro/data.hpp"
#include "spiro/metrics.hpp"
#include "spiro/network.hpp"
#include "spiro/tensor.hpp"

namespace spiro::oracle {

using TensorD = Tensor<double>;

TensorD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1);

TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD& bias, int stride, int padding);
/// Scatter form of the conv2d loop: the adjoint of a stride == kernel convolution.
TensorD conv2d_transpose(const TensorD& x, const TensorD& w, const TensorD& bias, int stride, int groups);
TensorD maxpool2d(const TensorD& x, int k, int stride);
TensorD adaptive_avgpool2d(const TensorD& x, std::size_t out_h, std::size_t out_w);
/// Training-mode normalization with biased variance, eps 1e-5.
TensorD batchnorm_train(const TensorD& x, const TensorD& gamma, const TensorD& beta);
TensorD matmul(const TensorD& a, const TensorD& b);
TensorD softmax_rows(const TensorD& x);

struct FullSpectrum {
    TensorD re, im;  // [N,C,H,W]
};
/// Direct O(H^2 W^2) DFT-2 in long double, X[u,v] = sum f[x,y] exp(-2 pi j (ux/H + vy/W)).
FullSpectrum dft2(const TensorD& x);
/// Inverse of a full Hermitian spectrum, real part only, 1/(HW) normalization.
TensorD idft2_real(const FullSpectrum& s);

/// Eigenvalues of a dense symmetric matrix (row-major, n x n), ascending.
std::vector<double> symmetric_eigenvalues(const std::vector<double>& m, std::size_t n);

/// Parameter count from closed-form per-layer formulas.
std::size_t param_count(const SpiroNetConfig& cfg);

/// Arc length of a quadratic Bezier by composite Simpson integration.
double bezier_length(const BezierSegment& seg, int intervals = 2048);

/// Confusion table with plain counting loops.
ConfusionCounts confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::size_t nonsmooth = 0;  // samples skipped because one-sided slopes disagree (ReLU/max kink)
};

struct GradCheckOptions {
    std::size_t samples = 64;    // coordinates per tensor, or all when smaller
    double h = 1e-5;
    double floor = 1e-3;         // denominator floor: near-zero gradients are held to 1e-3 * tol absolute
    double kink_tolerance = 1e-3;
    std::uint64_t seed = 0;
    double analytic_scale = 1;   // fault hook: scales analytic gradients
};

/// Central finite differences of a scalar `loss` w.r.t. sampled entries of `inputs`. `loss` must
/// rebuild its graph from the current values of the tensors on every call.
GradCheckResult gradcheck(const std::function<TensorD()>& loss, const std::vector<TensorD>& inputs,
                          const GradCheckOptions& options = {});

/// sum(y * r) with a fixed random r, a generic scalarization for vector-valued ops.
TensorD projection_weights(Shape s, std::uint64_t seed);

}  // namespace spiro::oracle
