#include "spiro/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace spiro {

template <typename T>
std::size_t count_params(const ParamList<T>& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.tensor.numel();
    return total;
}

template <typename T>
SgdMomentum<T>::SgdMomentum(const ParamList<T>& params, SgdConfig config)
    : params_(params), config_(config) {
    velocity_.reserve(params_.size());
    for (auto& p : params_) {
        if (!p.tensor.requires_grad()) p.tensor.set_requires_grad(true);
        velocity_.emplace_back(p.tensor.numel(), T(0));
    }
}

template <typename T>
void SgdMomentum<T>::step(double lr) {
    const T mom = static_cast<T>(config_.momentum);
    const T wd = static_cast<T>(config_.weight_decay);
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto data = params_[i].tensor.data();
        auto grad = params_[i].tensor.grad();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            v[j] = mom * v[j] + (grad[j] + wd * data[j]);
            data[j] -= rate * v[j];
        }
    }
}

template <typename T>
void SgdMomentum<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

double poly_lr(double lr_init, int epoch, int total_epochs, double power) {
    if (total_epochs < 1) throw std::invalid_argument("poly_lr: total_epochs must be >= 1");
    return lr_init * std::pow(1.0 - static_cast<double>(epoch) / total_epochs, power);
}

template std::size_t count_params(const ParamList<float>&);
template std::size_t count_params(const ParamList<double>&);
template class SgdMomentum<float>;
template class SgdMomentum<double>;

}  // namespace spiro
