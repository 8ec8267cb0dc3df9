#include "spiro/blocks.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace spiro {

template <typename T>
SpatialBlock<T> SpatialBlock<T>::make(std::size_t cin, std::size_t cout, Initializer& init) {
    SpatialBlock b;
    b.first = ConvBn<T>::make(cin, cout, 3, true, init);
    b.second = ConvBn<T>::make(cout, cout, 3, false, init);
    if (cin != cout) b.projection = ConvBn<T>::make(cin, cout, 1, false, init);
    return b;
}

template <typename T>
Tensor<T> SpatialBlock<T>::operator()(const Tensor<T>& f, Mode mode) const {
    const std::size_t cin = first.conv.weight.shape().c;
    if (f.shape().c != cin) {
        throw ShapeError("spatial_encoder_block: input has " + std::to_string(f.shape().c) +
                         " channels, block expects " + std::to_string(cin));
    }
    Tensor<T> y = second(first(f, mode), mode);
    Tensor<T> residual = projection.conv.weight.defined() ? projection(f, mode) : f;
    return relu(add(y, residual));
}

template <typename T>
void SpatialBlock<T>::params(const std::string& prefix, ParamList<T>& out) const {
    first.params(prefix + ".conv1", out);
    second.params(prefix + ".conv2", out);
    if (projection.conv.weight.defined()) projection.params(prefix + ".proj", out);
}

template <typename T>
void SpatialBlock<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    first.buffers(prefix + ".conv1", out);
    second.buffers(prefix + ".conv2", out);
    if (projection.conv.weight.defined()) projection.buffers(prefix + ".proj", out);
}

template <typename T>
SpectralFilter<T> SpectralFilter<T>::make(std::size_t channels, Initializer& init) {
    return SpectralFilter{ConvBn<T>::make(channels, channels, 3, true, init),
                          Conv2d<T>::make(channels, channels, 3, init)};
}

template <typename T>
void SpectralFilter<T>::params(const std::string& prefix, ParamList<T>& out) const {
    first.params(prefix + ".0", out);
    second.params(prefix + ".1", out);
}

template <typename T>
void SpectralFilter<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    first.buffers(prefix + ".0", out);
}

template <typename T>
FrequencyBlock<T> FrequencyBlock<T>::make(std::size_t cin, std::size_t cout, Initializer& init) {
    return FrequencyBlock{SpectralFilter<T>::make(cin, init), SpectralFilter<T>::make(cin, init),
                          Conv2d<T>::make(cin, cout, 1, init)};
}

template <typename T>
Tensor<T> FrequencyBlock<T>::operator()(const Tensor<T>& f, Mode mode) const {
    const Shape s = f.shape();
    if (!is_power_of_two(s.h) || !is_power_of_two(s.w)) {
        throw ShapeError("frequency_encoder_block: spatial dims " + std::to_string(s.h) + "x" +
                         std::to_string(s.w) + " must be powers of two");
    }
    if (s.c != conv_channel.weight.shape().c) {
        throw ShapeError("frequency_encoder_block: input has " + std::to_string(s.c) + " channels, block expects " +
                         std::to_string(conv_channel.weight.shape().c));
    }
    const ComplexSpectrum<T> spectrum = rfft2(f);
    auto [amp, pha] = amplitude_phase(spectrum);
    Tensor<T> amp_fuse = add(conv_amp(amp, mode), amp);
    Tensor<T> pha_fuse = add(conv_pha(pha, mode), pha);
    Tensor<T> restored = irfft2(from_amplitude_phase(amp_fuse, pha_fuse, s.w));
    return conv_channel(add(restored, f));
}

template <typename T>
void FrequencyBlock<T>::params(const std::string& prefix, ParamList<T>& out) const {
    conv_amp.params(prefix + ".conv_amp", out);
    conv_pha.params(prefix + ".conv_pha", out);
    conv_channel.params(prefix + ".conv_channel", out);
}

template <typename T>
void FrequencyBlock<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    conv_amp.buffers(prefix + ".conv_amp", out);
    conv_pha.buffers(prefix + ".conv_pha", out);
}

template <typename T>
Tensor<T> ppm_sample(const Tensor<T>& f, const std::vector<std::size_t>& bins) {
    if (bins.empty()) throw std::invalid_argument("ppm_sample: bin list is empty");
    // Tokens are gathered as columns ([N,1,d,S]) and transposed once at the end.
    Tensor<T> columns;
    for (std::size_t b : bins) {
        if (b == 0) throw std::invalid_argument("ppm_sample: bin size must be positive");
        Tensor<T> pooled = adaptive_avgpool2d(f, b, b);
        const Shape ps = pooled.shape();
        Tensor<T> part = reshape(pooled, Shape{ps.n, 1, ps.c, b * b});
        columns = columns.defined() ? concat_width(columns, part) : part;
    }
    return transpose(columns);
}

template <typename T>
CrossAttention<T> CrossAttention<T>::make(std::size_t channels, std::size_t embed_dim,
                                          std::vector<std::size_t> bins, Initializer& init) {
    CrossAttention a;
    a.w_sq = ConvBn<T>::make(channels, embed_dim, 1, true, init);
    a.w_fq = ConvBn<T>::make(channels, embed_dim, 1, true, init);
    a.w_sk = ConvBn<T>::make(channels, embed_dim, 1, true, init);
    a.w_fk = ConvBn<T>::make(channels, embed_dim, 1, true, init);
    a.w_v = ConvBn<T>::make(2 * channels, embed_dim, 1, true, init);
    a.w_out = Conv2d<T>::make(embed_dim, channels, 1, init);
    a.embed_dim = embed_dim;
    a.bins = std::move(bins);
    return a;
}

template <typename T>
CrossAttentionTrace<T> CrossAttention<T>::trace(const Tensor<T>& f_spa, const Tensor<T>& f_freq, Mode mode) const {
    if (!(f_spa.shape() == f_freq.shape())) {
        throw ShapeError("cross_attention_fuse: spatial stream " + f_spa.shape().str() +
                         " vs frequency stream " + f_freq.shape().str());
    }
    const Shape s = f_spa.shape();
    Tensor<T> q_spa = to_tokens(w_sq(f_spa, mode));
    Tensor<T> q_freq = to_tokens(w_fq(f_freq, mode));
    Tensor<T> k_spa = ppm_sample(w_sk(f_spa, mode), bins);
    Tensor<T> k_freq = ppm_sample(w_fk(f_freq, mode), bins);
    Tensor<T> values = ppm_sample(w_v(concat_channels(f_spa, f_freq), mode), bins);
    Tensor<T> logits = add(matmul(q_spa, transpose(k_freq)), matmul(q_freq, transpose(k_spa)));
    Tensor<T> attention = softmax_rows(scale(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(embed_dim)))));
    Tensor<T> context = from_tokens(matmul(attention, values), s.h, s.w);
    Tensor<T> output = add(add(w_out(context), f_spa), f_freq);
    return {output, attention, context};
}

template <typename T>
void CrossAttention<T>::params(const std::string& prefix, ParamList<T>& out) const {
    w_sq.params(prefix + ".w_sq", out);
    w_fq.params(prefix + ".w_fq", out);
    w_sk.params(prefix + ".w_sk", out);
    w_fk.params(prefix + ".w_fk", out);
    w_v.params(prefix + ".w_v", out);
    w_out.params(prefix + ".w_out", out);
}

template <typename T>
void CrossAttention<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    w_sq.buffers(prefix + ".w_sq", out);
    w_fq.buffers(prefix + ".w_fq", out);
    w_sk.buffers(prefix + ".w_sk", out);
    w_fk.buffers(prefix + ".w_fk", out);
    w_v.buffers(prefix + ".w_v", out);
}

template <typename T>
Tensor<T> channel_cosine_adjacency(const Tensor<T>& embedded) {
    const Shape s = embedded.shape();
    if (s.c != 1) throw ShapeError("channel_cosine_adjacency: expects [N,1,C,D], got " + s.str());
    const std::size_t batch = s.n, ch = s.h, dim = s.w;
    if (dim == 0) throw ShapeError("channel_cosine_adjacency: empty feature rows");
    Buffer<T> out(batch * ch * ch, T(0));
    Buffer<T> norms(batch * ch);
    const auto& e = embedded.node().data;
    for (std::size_t n = 0; n < batch; ++n) {
        const T* en = e.data() + n * ch * dim;
        for (std::size_t i = 0; i < ch; ++i) {
            T acc = 0;
            for (std::size_t d = 0; d < dim; ++d) acc += en[i * dim + d] * en[i * dim + d];
            norms[n * ch + i] = std::sqrt(acc);
        }
        T* a = out.data() + n * ch * ch;
        for (std::size_t i = 0; i < ch; ++i) {
            a[i * ch + i] = T(1);
            const T ni = norms[n * ch + i];
            for (std::size_t j = i + 1; j < ch; ++j) {
                const T nj = norms[n * ch + j];
                T v = 0;
                if (ni > T(0) && nj > T(0)) {
                    T dot = 0;
                    for (std::size_t d = 0; d < dim; ++d) dot += en[i * dim + d] * en[j * dim + d];
                    v = dot / (ni * nj);
                }
                a[i * ch + j] = v;
                a[j * ch + i] = v;
            }
        }
    }
    auto ep = embedded.node_ptr();
    return detail::make_result<T>(
        Shape{batch, 1, ch, ch}, std::move(out), {ep},
        [=, norms = std::move(norms)](const Node<T>& self) {
            auto& ge = detail::grad_of(ep);
            for (std::size_t n = 0; n < batch; ++n) {
                const T* en = ep->data.data() + n * ch * dim;
                const T* a = self.data.data() + n * ch * ch;
                const T* g = self.grad.data() + n * ch * ch;
                T* gn = ge.data() + n * ch * dim;
                for (std::size_t i = 0; i < ch; ++i) {
                    const T ni = norms[n * ch + i];
                    if (ni == T(0)) continue;
                    for (std::size_t j = 0; j < ch; ++j) {
                        const T nj = norms[n * ch + j];
                        if (j == i || nj == T(0)) continue;
                        const T coef = g[i * ch + j] + g[j * ch + i];
                        const T aij = a[i * ch + j];
                        for (std::size_t d = 0; d < dim; ++d) {
                            gn[i * dim + d] += coef * (en[j * dim + d] / (ni * nj) - aij * en[i * dim + d] / (ni * ni));
                        }
                    }
                }
            }
        },
        "channel_cosine_adjacency");
}

template <typename T>
Tensor<T> improved_laplacian(const Tensor<T>& adjacency) {
    const Shape s = adjacency.shape();
    if (s.c != 1 || s.h != s.w) throw ShapeError("improved_laplacian: expects [N,1,C,C], got " + s.str());
    const std::size_t batch = s.n, ch = s.h;
    Buffer<T> out(batch * ch * ch);
    Buffer<T> inv_sqrt_deg(batch * ch);
    Buffer<T> deg(ch);
    const auto& a = adjacency.node().data;
    for (std::size_t n = 0; n < batch; ++n) {
        const T* an = a.data() + n * ch * ch;
        for (std::size_t i = 0; i < ch; ++i) {
            deg[i] = 1;  // self loop
            for (std::size_t j = 0; j < ch; ++j) deg[i] += an[i * ch + j];
            if (!(deg[i] > T(0))) throw NumericError("improved_laplacian: non-positive degree");
            inv_sqrt_deg[n * ch + i] = T(1) / std::sqrt(deg[i]);
        }
        T* ln = out.data() + n * ch * ch;
        for (std::size_t i = 0; i < ch; ++i) {
            for (std::size_t j = 0; j < ch; ++j) {
                const T at = an[i * ch + j] + (i == j ? T(1) : T(0));
                // sqrt of the product keeps a lone self loop at exactly 2 / sqrt(4) = 1
                const T sym = at / std::sqrt(deg[i] * deg[j]);
                ln[i * ch + j] = (i == j ? T(1) : T(0)) - sym;
            }
        }
    }
    auto ap = adjacency.node_ptr();
    return detail::make_result<T>(
        s, std::move(out), {ap},
        [=, inv_sqrt_deg = std::move(inv_sqrt_deg)](const Node<T>& self) {
            auto& ga = detail::grad_of(ap);
            Buffer<T> gdeg(ch);
            for (std::size_t n = 0; n < batch; ++n) {
                const T* an = ap->data.data() + n * ch * ch;
                const T* gl = self.grad.data() + n * ch * ch;
                const T* r = inv_sqrt_deg.data() + n * ch;
                // gS = -gL; gdeg_k = -1/2 d_k^{-3/2} (sum_j gS_kj At_kj r_j + sum_i gS_ik At_ik r_i)
                for (std::size_t k = 0; k < ch; ++k) {
                    T acc = 0;
                    for (std::size_t j = 0; j < ch; ++j) {
                        const T at_kj = an[k * ch + j] + (k == j ? T(1) : T(0));
                        const T at_jk = an[j * ch + k] + (k == j ? T(1) : T(0));
                        acc += -gl[k * ch + j] * at_kj * r[j] + -gl[j * ch + k] * at_jk * r[j];
                    }
                    gdeg[k] = T(-0.5) * r[k] * r[k] * r[k] * acc;
                }
                T* g = ga.data() + n * ch * ch;
                for (std::size_t k = 0; k < ch; ++k)
                    for (std::size_t l = 0; l < ch; ++l) g[k * ch + l] += -gl[k * ch + l] * r[k] * r[l] + gdeg[k];
            }
        },
        "improved_laplacian");
}

template <typename T>
Tci<T> Tci<T>::make(std::size_t channels, std::size_t height, std::size_t width, std::size_t inner_dim,
                    Initializer& init) {
    if (height % 4 != 0 || width % 4 != 0) {
        throw ShapeError("tci: spatial dims " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by 4");
    }
    Tci t;
    const std::size_t d = (height / 4) * (width / 4);
    t.embed = Conv2d<T>::make(channels, channels, 1, init);
    const double shrink = 1.0 / std::sqrt(static_cast<double>(d));
    if (inner_dim == 0) {
        t.theta = init.kaiming<T>(Shape{1, 1, d, d}, d, shrink);
    } else {
        t.theta = init.kaiming<T>(Shape{1, 1, d, inner_dim}, d, shrink);
        t.theta_back = init.kaiming<T>(Shape{1, 1, inner_dim, d}, inner_dim);
    }
    t.upsample = ConvTranspose2d<T>::make_depthwise_zero(channels, 4);
    return t;
}

template <typename T>
TciTrace<T> Tci<T>::trace(const Tensor<T>& f_in) const {
    const Shape s = f_in.shape();
    if (s.h % 4 != 0 || s.w % 4 != 0) {
        throw ShapeError("tci_forward: spatial dims " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " not divisible by 4");
    }
    const std::size_t h = s.h / 4, w = s.w / 4, d = h * w;
    if (theta.shape().h != d) {
        throw ShapeError("tci_forward: theta expects D=" + std::to_string(theta.shape().h) + ", input gives D=" +
                         std::to_string(d));
    }
    Tensor<T> pooled = maxpool2d(f_in, 4, 4);
    Tensor<T> embedded = reshape(relu(embed(pooled)), Shape{s.n, 1, s.c, d});
    Tensor<T> adjacency = channel_cosine_adjacency(embedded);
    Tensor<T> laplacian = improved_laplacian(adjacency);
    Tensor<T> mixed = matmul(matmul(laplacian, reshape(pooled, Shape{s.n, 1, s.c, d})), theta);
    if (theta_back.defined()) mixed = matmul(mixed, theta_back);
    Tensor<T> graph_out = relu(mixed);
    Tensor<T> output = add(upsample(reshape(graph_out, Shape{s.n, s.c, h, w})), f_in);
    return {output, adjacency, laplacian, graph_out};
}

template <typename T>
void Tci<T>::params(const std::string& prefix, ParamList<T>& out) const {
    embed.params(prefix + ".embed", out);
    out.push_back({prefix + ".theta", theta});
    if (theta_back.defined()) out.push_back({prefix + ".theta_back", theta_back});
    upsample.params(prefix + ".upsample", out);
}

#define SPIRO_INSTANTIATE_BLOCKS(T)                                                    \
    template struct SpatialBlock<T>;                                                   \
    template struct SpectralFilter<T>;                                                 \
    template struct FrequencyBlock<T>;                                                 \
    template struct CrossAttention<T>;                                                 \
    template struct Tci<T>;                                                            \
    template Tensor<T> ppm_sample(const Tensor<T>&, const std::vector<std::size_t>&);  \
    template Tensor<T> channel_cosine_adjacency(const Tensor<T>&);                     \
    template Tensor<T> improved_laplacian(const Tensor<T>&);

SPIRO_INSTANTIATE_BLOCKS(float)
SPIRO_INSTANTIATE_BLOCKS(double)

}  // namespace spiro
