#pragma once

#include <cstddef>
#include <vector>

#include "spiro/fourier.hpp"
#include "spiro/layers.hpp"

namespace spiro {

/// Residual spatial encoder block:
///   relu( BN(conv3x3(relu(BN(conv3x3(f))))) + residual(f) ),
/// residual is a 1x1 conv + BN projection when Cin != Cout, identity otherwise.
template <typename T>
struct SpatialBlock {
    ConvBn<T> first;
    ConvBn<T> second;  // no activation
    ConvBn<T> projection;  // no activation; undefined weight when Cin == Cout

    static SpatialBlock make(std::size_t cin, std::size_t cout, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& f, Mode mode) const;
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

/// Channel-preserving Conv3x3-BN-ReLU-Conv3x3 stack used on amplitude and phase maps.
template <typename T>
struct SpectralFilter {
    ConvBn<T> first;
    Conv2d<T> second;

    static SpectralFilter make(std::size_t channels, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) const { return second(first(x, mode)); }
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

/// Frequency encoder block. Filters amplitude and phase on the half-spectrum grid with residual
/// paths, inverts, adds the input back and adjusts channels with a 1x1 conv.
template <typename T>
struct FrequencyBlock {
    SpectralFilter<T> conv_amp;
    SpectralFilter<T> conv_pha;
    Conv2d<T> conv_channel;

    static FrequencyBlock make(std::size_t cin, std::size_t cout, Initializer& init);
    Tensor<T> operator()(const Tensor<T>& f, Mode mode) const;
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

/// Adaptive average pooling to each b x b grid; tokens concatenated in bin order.
/// f [N,d,H,W] -> [N,1,sum(b^2),d].
template <typename T>
Tensor<T> ppm_sample(const Tensor<T>& f, const std::vector<std::size_t>& bins);

inline const std::vector<std::size_t> kDefaultPpmBins = {1, 2, 4, 8};

/// Embedding width for a stage with `channels` channels: channels/2, at least 8.
constexpr std::size_t embed_dim_for(std::size_t channels) { return channels / 2 < 8 ? 8 : channels / 2; }

template <typename T>
struct CrossAttentionTrace {
    Tensor<T> output;     // [N,C,H,W]
    Tensor<T> attention;  // [N,1,H*W,S], rows sum to 1
    Tensor<T> context;    // attention-weighted values, [N,d0,H,W]
};

/// Spatial/frequency cross-attention fusion with PPM-sampled keys and values.
/// Output = W_out(CA) + f_spa + f_freq.
template <typename T>
struct CrossAttention {
    ConvBn<T> w_sq, w_fq, w_sk, w_fk, w_v;
    Conv2d<T> w_out;
    std::size_t embed_dim = 8;
    std::vector<std::size_t> bins = kDefaultPpmBins;

    static CrossAttention make(std::size_t channels, std::size_t embed_dim, std::vector<std::size_t> bins,
                               Initializer& init);
    CrossAttentionTrace<T> trace(const Tensor<T>& f_spa, const Tensor<T>& f_freq, Mode mode) const;
    Tensor<T> operator()(const Tensor<T>& f_spa, const Tensor<T>& f_freq, Mode mode) const {
        return trace(f_spa, f_freq, mode).output;
    }
    void params(const std::string& prefix, ParamList<T>& out) const;
    void buffers(const std::string& prefix, ParamList<T>& out) const;
};

/// Cosine similarity between the rows of e [N,1,C,D] -> [N,1,C,C]. Rows with zero norm get 0
/// off-diagonal; the diagonal is always 1. Exactly symmetric.
template <typename T>
Tensor<T> channel_cosine_adjacency(const Tensor<T>& embedded);

/// I - D^-1/2 (A + I) D^-1/2 with D the row sums of A + I. A [N,1,C,C].
template <typename T>
Tensor<T> improved_laplacian(const Tensor<T>& adjacency);

template <typename T>
struct TciTrace {
    Tensor<T> output;     // [N,C,H,W]
    Tensor<T> adjacency;  // [N,1,C,C]
    Tensor<T> laplacian;  // [N,1,C,C]
    Tensor<T> graph_out;  // ReLU(L f Theta), [N,1,C,D]
};

/// Topological channel interaction: graph convolution over channels of the 4x4-maxpooled map,
/// upsampled per channel by a stride-4 transposed conv and added to the input.
template <typename T>
struct Tci {
    Conv2d<T> embed;       // 1x1, followed by ReLU
    Tensor<T> theta;       // [1,1,D,D], or [1,1,D,D'] when factored
    Tensor<T> theta_back;  // [1,1,D',D] when factored, otherwise undefined
    ConvTranspose2d<T> upsample;

    /// inner_dim == 0 keeps the square D x D weight.
    static Tci make(std::size_t channels, std::size_t height, std::size_t width, std::size_t inner_dim,
                    Initializer& init);
    TciTrace<T> trace(const Tensor<T>& f_in) const;
    Tensor<T> operator()(const Tensor<T>& f_in) const { return trace(f_in).output; }
    void params(const std::string& prefix, ParamList<T>& out) const;
};

}  // namespace spiro
