#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spiro/tensor.hpp"

namespace spiro {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

/// Total element count over all learnable tensors.
template <typename T>
std::size_t count_params(const ParamList<T>& params);

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// Classic momentum with L2 decay folded into the gradient:
///   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
template <typename T>
class SgdMomentum {
   public:
    SgdMomentum(const ParamList<T>& params, SgdConfig config = {});

    void step(double lr);
    void zero_grad();

    const SgdConfig& config() const { return config_; }
    const std::vector<std::vector<T>>& velocity() const { return velocity_; }

   private:
    ParamList<T> params_;
    SgdConfig config_;
    std::vector<std::vector<T>> velocity_;
};

/// lr_init * (1 - epoch / total_epochs)^power, evaluated in double precision.
double poly_lr(double lr_init, int epoch, int total_epochs, double power = 0.9);

extern template class SgdMomentum<float>;
extern template class SgdMomentum<double>;

}  // namespace spiro
