#include "spiro/layers.hpp"

#include <cmath>

namespace spiro {

template <typename T>
Tensor<T> Initializer::kaiming(Shape shape, std::size_t fan_in, double gain) {
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = static_cast<T>(dist(engine_));
    return Tensor<T>(shape, std::move(v));
}

template <typename T>
Conv2d<T> Conv2d<T>::make(std::size_t cin, std::size_t cout, int kernel, Initializer& init) {
    Conv2d c;
    const std::size_t k = static_cast<std::size_t>(kernel);
    c.weight = init.kaiming<T>(Shape{cout, cin, k, k}, cin * k * k);
    c.bias = Tensor<T>(Shape{1, cout, 1, 1}, T(0));
    c.padding = kernel / 2;
    return c;
}

template <typename T>
void Conv2d<T>::params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
ConvTranspose2d<T> ConvTranspose2d<T>::make(std::size_t cin, std::size_t cout, int stride, Initializer& init) {
    ConvTranspose2d c;
    const std::size_t s = static_cast<std::size_t>(stride);
    c.weight = init.kaiming<T>(Shape{cin, cout, s, s}, cin);
    c.bias = Tensor<T>(Shape{1, cout, 1, 1}, T(0));
    c.stride = stride;
    return c;
}

template <typename T>
ConvTranspose2d<T> ConvTranspose2d<T>::make_depthwise_zero(std::size_t channels, int stride) {
    ConvTranspose2d c;
    const std::size_t s = static_cast<std::size_t>(stride);
    c.weight = Tensor<T>(Shape{channels, 1, s, s}, T(0));
    c.bias = Tensor<T>(Shape{1, channels, 1, 1}, T(0));
    c.stride = stride;
    c.groups = static_cast<int>(channels);
    return c;
}

template <typename T>
void ConvTranspose2d<T>::params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
BatchNorm2d<T> BatchNorm2d<T>::make(std::size_t channels) {
    BatchNorm2d b;
    b.gamma = Tensor<T>(Shape{1, channels, 1, 1}, T(1));
    b.beta = Tensor<T>(Shape{1, channels, 1, 1}, T(0));
    b.state.running_mean = Tensor<T>(Shape{1, channels, 1, 1}, T(0));
    b.state.running_var = Tensor<T>(Shape{1, channels, 1, 1}, T(1));
    return b;
}

template <typename T>
void BatchNorm2d<T>::params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

template <typename T>
void BatchNorm2d<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".running_mean", state.running_mean});
    out.push_back({prefix + ".running_var", state.running_var});
}

template <typename T>
ConvBn<T> ConvBn<T>::make(std::size_t cin, std::size_t cout, int kernel, bool activate, Initializer& init) {
    return ConvBn{Conv2d<T>::make(cin, cout, kernel, init), BatchNorm2d<T>::make(cout), activate};
}

template <typename T>
Tensor<T> ConvBn<T>::operator()(const Tensor<T>& x, Mode mode) const {
    Tensor<T> y = bn(conv(x), mode);
    return activate ? relu(y) : y;
}

template <typename T>
void ConvBn<T>::params(const std::string& prefix, ParamList<T>& out) const {
    conv.params(prefix + ".conv", out);
    bn.params(prefix + ".bn", out);
}

template <typename T>
void ConvBn<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    bn.buffers(prefix + ".bn", out);
}

template Tensor<float> Initializer::kaiming<float>(Shape, std::size_t, double);
template Tensor<double> Initializer::kaiming<double>(Shape, std::size_t, double);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2d<float>;
template struct ConvTranspose2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template struct ConvBn<float>;
template struct ConvBn<double>;

}  // namespace spiro
