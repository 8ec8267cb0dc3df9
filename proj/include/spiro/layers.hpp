#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "spiro/ops.hpp"
#include "spiro/optim.hpp"

namespace spiro {

/// Deterministic parameter initializer. One engine per model build.
class Initializer {
   public:
    explicit Initializer(std::uint64_t seed) : engine_(seed) {}

    /// He normal: N(0, gain^2 * 2 / fan_in).
    template <typename T>
    Tensor<T> kaiming(Shape shape, std::size_t fan_in, double gain = 1.0);

    std::mt19937_64& engine() { return engine_; }

   private:
    std::mt19937_64 engine_;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [Cout, Cin, k, k]
    Tensor<T> bias;    // [1, Cout, 1, 1]
    int stride = 1;
    int padding = 0;

    static Conv2d make(std::size_t cin, std::size_t cout, int kernel, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
    void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct ConvTranspose2d {
    Tensor<T> weight;  // [Cin, Cout/groups, s, s]
    Tensor<T> bias;
    int stride = 2;
    int groups = 1;

    static ConvTranspose2d make(std::size_t cin, std::size_t cout, int stride, Initializer& init);
    /// Per-channel upsampler with zero weights and bias.
    static ConvTranspose2d make_depthwise_zero(std::size_t channels, int stride);
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d_transpose(x, weight, bias, stride, groups); }
    void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma;
    Tensor<T> beta;
    mutable BatchNormState<T> state;

    static BatchNorm2d make(std::size_t channels);
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
        return batchnorm2d(x, gamma, beta, state, mode);
    }
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

/// Conv -> BN, optionally followed by ReLU.
template <typename T>
struct ConvBn {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    bool activate = true;

    static ConvBn make(std::size_t cin, std::size_t cout, int kernel, bool activate, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) const;
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

}  // namespace spiro
