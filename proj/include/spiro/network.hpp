#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spiro/blocks.hpp"
#include "spiro/checkpoint.hpp"

namespace spiro {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(std::string_view text);

/// Which of the four components are active. Cross-attention needs both encoders.
struct Ablation {
    bool spatial = true;
    bool frequency = true;
    bool cross_attention = true;
    bool tci = true;

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct SpiroNetConfig {
    std::size_t input_size = 64;  // square, power of two
    std::size_t stages = 4;
    std::size_t base_channels = 16;
    std::vector<std::size_t> ppm_bins = kDefaultPpmBins;
    std::size_t tci_inner_dim = 0;  // 0: square D x D graph weight
    Ablation ablation;
    Precision precision = Precision::f32;
    std::uint64_t seed = 0;

    std::size_t width(std::size_t stage) const { return base_channels << stage; }
    std::size_t embed_dim(std::size_t stage) const { return embed_dim_for(width(stage)); }

    /// Throws ConfigError naming the violated rule.
    void validate() const;

    ConfigHeader to_header() const;
    static SpiroNetConfig from_header(const ConfigHeader& header);
};

/// Flags of one ablation row: "I".."VII" or "full".
SpiroNetConfig ablation_variant(std::string_view name);
const std::vector<std::string>& ablation_variant_names();

/// Transposed-conv upsample, skip concat, then a residual Conv-BN-ReLU / Conv-BN pair.
template <typename T>
struct DecoderBlock {
    ConvTranspose2d<T> up;
    ConvBn<T> first;
    ConvBn<T> second;
    ConvBn<T> projection;  // 1x1, no activation

    static DecoderBlock make(std::size_t cin, std::size_t cout, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& skip, Mode mode) const;
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
class SpiroNet {
   public:
    static SpiroNet build(const SpiroNetConfig& config);
    static SpiroNet build(const SpiroNetConfig& config, std::uint64_t seed);

    /// x [N,1,S,S] -> logits [N,1,S,S].
    Tensor<T> forward(const Tensor<T>& x, Mode mode) const;

    /// Learnable tensors in a fixed, documented order.
    ParamList<T> parameters() const;
    /// BN running statistics.
    ParamList<T> buffers() const;
    /// Parameters followed by buffers; what a checkpoint stores.
    ParamList<T> state() const;
    std::size_t count_params() const { return spiro::count_params(parameters()); }

    const SpiroNetConfig& config() const { return config_; }

    void save(const std::filesystem::path& path, const ConfigHeader& extra = {}) const;
    static SpiroNet load(const std::filesystem::path& path);

    // Components are public so tests can zero or inspect individual weights.
    ConvBn<T> stem;
    std::vector<SpatialBlock<T>> spatial;
    std::vector<FrequencyBlock<T>> frequency;
    std::vector<CrossAttention<T>> fusion;
    SpatialBlock<T> bottleneck;
    std::vector<DecoderBlock<T>> decoder;
    std::optional<Tci<T>> tci;
    Conv2d<T> head;

   private:
    SpiroNetConfig config_;
};

/// Mean BCE over all pixels; gt must be exactly 0 or 1.
template <typename T>
Tensor<T> loss_bce(const Tensor<T>& logits, const Tensor<T>& gt);

/// Eval-mode forward thresholded at sigmoid >= 0.5 (logit 0 maps to 1).
template <typename T>
Tensor<T> predict(const SpiroNet<T>& net, const Tensor<T>& x);

template <typename T>
Tensor<T> threshold_logits(const Tensor<T>& logits);

extern template class SpiroNet<float>;
extern template class SpiroNet<double>;

}  // namespace spiro
