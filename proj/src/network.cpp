#include "spiro/network.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace spiro {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view text) {
    if (text == "f32") return Precision::f32;
    if (text == "f64") return Precision::f64;
    throw ConfigError("precision must be f32 or f64, got '" + std::string(text) + "'");
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': not an integer: " + value);
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config key '" + key + "': not a boolean: " + value);
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

}  // namespace

void SpiroNetConfig::validate() const {
    if (stages < 1) throw ConfigError("stages must be >= 1");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (!is_power_of_two(input_size)) throw ConfigError("input_size must be a power of two");
    if (input_size % (std::size_t{1} << stages) != 0) {
        throw ConfigError("input_size " + std::to_string(input_size) + " not divisible by 2^stages = " +
                          std::to_string(std::size_t{1} << stages));
    }
    if (ablation.tci && input_size % 4 != 0) throw ConfigError("input_size must be divisible by 4 for TCI");
    if (!ablation.spatial && !ablation.frequency) throw ConfigError("at least one encoder must be enabled");
    if (ablation.cross_attention && !(ablation.spatial && ablation.frequency)) {
        throw ConfigError("cross-attention fusion requires both encoders");
    }
    if (ppm_bins.empty()) throw ConfigError("ppm_bins must be non-empty");
    for (std::size_t b : ppm_bins) {
        if (b == 0) throw ConfigError("ppm_bins entries must be positive");
    }
}

ConfigHeader SpiroNetConfig::to_header() const {
    return {
        {"input_size", std::to_string(input_size)},
        {"stages", std::to_string(stages)},
        {"base_channels", std::to_string(base_channels)},
        {"ppm_bins", join(ppm_bins)},
        {"tci_inner_dim", std::to_string(tci_inner_dim)},
        {"use_spatial_encoder", ablation.spatial ? "1" : "0"},
        {"use_frequency_encoder", ablation.frequency ? "1" : "0"},
        {"use_cross_attention", ablation.cross_attention ? "1" : "0"},
        {"use_tci", ablation.tci ? "1" : "0"},
        {"precision", to_string(precision)},
        {"seed", std::to_string(seed)},
    };
}

SpiroNetConfig SpiroNetConfig::from_header(const ConfigHeader& header) {
    SpiroNetConfig c;
    for (const auto& [k, v] : header) {
        if (k == "input_size") c.input_size = parse_size(k, v);
        else if (k == "stages") c.stages = parse_size(k, v);
        else if (k == "base_channels") c.base_channels = parse_size(k, v);
        else if (k == "tci_inner_dim") c.tci_inner_dim = parse_size(k, v);
        else if (k == "use_spatial_encoder") c.ablation.spatial = parse_bool(k, v);
        else if (k == "use_frequency_encoder") c.ablation.frequency = parse_bool(k, v);
        else if (k == "use_cross_attention") c.ablation.cross_attention = parse_bool(k, v);
        else if (k == "use_tci") c.ablation.tci = parse_bool(k, v);
        else if (k == "precision") c.precision = parse_precision(v);
        else if (k == "seed") c.seed = parse_size(k, v);
        else if (k == "ppm_bins") {
            c.ppm_bins.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) c.ppm_bins.push_back(parse_size(k, item));
        }
    }
    return c;
}

const std::vector<std::string>& ablation_variant_names() {
    static const std::vector<std::string> names = {"I", "II", "III", "IV", "V", "VI", "VII", "full"};
    return names;
}

SpiroNetConfig ablation_variant(std::string_view name) {
    // SE, FE, CA, TCI
    static const std::map<std::string, Ablation, std::less<>> rows = {
        {"I", {true, false, false, false}},  {"II", {false, true, false, false}},
        {"III", {true, true, false, false}}, {"IV", {true, true, true, false}},
        {"V", {true, false, false, true}},   {"VI", {false, true, false, true}},
        {"VII", {true, true, false, true}},  {"full", {true, true, true, true}},
    };
    auto it = rows.find(name);
    if (it == rows.end()) throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
    SpiroNetConfig c;
    c.ablation = it->second;
    return c;
}

template <typename T>
DecoderBlock<T> DecoderBlock<T>::make(std::size_t cin, std::size_t cout, Initializer& init) {
    DecoderBlock d;
    d.up = ConvTranspose2d<T>::make(cin, cout, 2, init);
    d.first = ConvBn<T>::make(2 * cout, cout, 3, true, init);
    d.second = ConvBn<T>::make(cout, cout, 3, false, init);
    d.projection = ConvBn<T>::make(2 * cout, cout, 1, false, init);
    return d;
}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& skip, Mode mode) const {
    Tensor<T> cat = concat_channels(up(x), skip);
    return relu(add(second(first(cat, mode), mode), projection(cat, mode)));
}

template <typename T>
void DecoderBlock<T>::params(const std::string& prefix, ParamList<T>& out) const {
    up.params(prefix + ".up", out);
    first.params(prefix + ".conv1", out);
    second.params(prefix + ".conv2", out);
    projection.params(prefix + ".proj", out);
}

template <typename T>
void DecoderBlock<T>::buffers(const std::string& prefix, ParamList<T>& out) const {
    first.buffers(prefix + ".conv1", out);
    second.buffers(prefix + ".conv2", out);
    projection.buffers(prefix + ".proj", out);
}

template <typename T>
SpiroNet<T> SpiroNet<T>::build(const SpiroNetConfig& config) {
    return build(config, config.seed);
}

template <typename T>
SpiroNet<T> SpiroNet<T>::build(const SpiroNetConfig& config, std::uint64_t seed) {
    config.validate();
    SpiroNet net;
    net.config_ = config;
    net.config_.seed = seed;
    Initializer init(seed);
    const Ablation& ab = config.ablation;
    const std::size_t base = config.base_channels;

    net.stem = ConvBn<T>::make(1, base, 3, true, init);
    for (std::size_t i = 0; i < config.stages; ++i) {
        const std::size_t cin = i == 0 ? base : config.width(i - 1);
        const std::size_t cout = config.width(i);
        if (ab.spatial) net.spatial.push_back(SpatialBlock<T>::make(cin, cout, init));
        if (ab.frequency) net.frequency.push_back(FrequencyBlock<T>::make(cin, cout, init));
        if (ab.cross_attention) {
            net.fusion.push_back(CrossAttention<T>::make(cout, config.embed_dim(i), config.ppm_bins, init));
        }
    }
    const std::size_t deepest = config.width(config.stages - 1);
    net.bottleneck = SpatialBlock<T>::make(deepest, 2 * deepest, init);
    net.decoder.resize(config.stages);
    for (std::size_t i = config.stages; i-- > 0;) {
        net.decoder[i] = DecoderBlock<T>::make(config.width(i + 1), config.width(i), init);
    }
    if (ab.tci) net.tci = Tci<T>::make(base, config.input_size, config.input_size, config.tci_inner_dim, init);
    net.head = Conv2d<T>::make(base, 1, 1, init);
    return net;
}

template <typename T>
Tensor<T> SpiroNet<T>::forward(const Tensor<T>& x, Mode mode) const {
    const Shape s = x.shape();
    if (s.c != 1 || s.h != config_.input_size || s.w != config_.input_size) {
        throw ShapeError("forward: expected [N,1," + std::to_string(config_.input_size) + "," +
                         std::to_string(config_.input_size) + "], got " + s.str());
    }
    const Ablation& ab = config_.ablation;
    Tensor<T> features = stem(x, mode);
    Tensor<T> spa = features, freq = features;
    std::vector<Tensor<T>> skips;
    for (std::size_t i = 0; i < config_.stages; ++i) {
        Tensor<T> spa_hat, freq_hat, skip;
        if (ab.spatial) spa_hat = spatial[i](spa, mode);
        if (ab.frequency) freq_hat = frequency[i](freq, mode);
        if (ab.cross_attention) {
            skip = fusion[i](spa_hat, freq_hat, mode);
        } else if (ab.spatial && ab.frequency) {
            skip = add(spa_hat, freq_hat);
        } else {
            skip = ab.spatial ? spa_hat : freq_hat;
        }
        skips.push_back(skip);
        if (ab.spatial) spa = maxpool2d(spa_hat, 2, 2);
        if (ab.frequency) freq = maxpool2d(freq_hat, 2, 2);
    }
    Tensor<T> y = bottleneck(maxpool2d(skips.back(), 2, 2), mode);
    for (std::size_t i = config_.stages; i-- > 0;) y = decoder[i](y, skips[i], mode);
    if (tci) y = (*tci)(y);
    return head(y);
}

template <typename T>
ParamList<T> SpiroNet<T>::parameters() const {
    ParamList<T> out;
    stem.params("stem", out);
    for (std::size_t i = 0; i < spatial.size(); ++i) spatial[i].params("spatial." + std::to_string(i), out);
    for (std::size_t i = 0; i < frequency.size(); ++i) frequency[i].params("frequency." + std::to_string(i), out);
    for (std::size_t i = 0; i < fusion.size(); ++i) fusion[i].params("fusion." + std::to_string(i), out);
    bottleneck.params("bottleneck", out);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].params("decoder." + std::to_string(i), out);
    if (tci) tci->params("tci", out);
    head.params("head", out);
    return out;
}

template <typename T>
ParamList<T> SpiroNet<T>::buffers() const {
    ParamList<T> out;
    stem.buffers("stem", out);
    for (std::size_t i = 0; i < spatial.size(); ++i) spatial[i].buffers("spatial." + std::to_string(i), out);
    for (std::size_t i = 0; i < frequency.size(); ++i) frequency[i].buffers("frequency." + std::to_string(i), out);
    for (std::size_t i = 0; i < fusion.size(); ++i) fusion[i].buffers("fusion." + std::to_string(i), out);
    bottleneck.buffers("bottleneck", out);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].buffers("decoder." + std::to_string(i), out);
    return out;
}

template <typename T>
ParamList<T> SpiroNet<T>::state() const {
    ParamList<T> out = parameters();
    ParamList<T> b = buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

template <typename T>
void SpiroNet<T>::save(const std::filesystem::path& path, const ConfigHeader& extra) const {
    ConfigHeader header = config_.to_header();
    header.insert(header.end(), extra.begin(), extra.end());
    save_checkpoint(path, state(), header);
}

template <typename T>
SpiroNet<T> SpiroNet<T>::load(const std::filesystem::path& path) {
    Checkpoint<T> ck = load_checkpoint<T>(path);
    SpiroNetConfig config = SpiroNetConfig::from_header(ck.header);
    SpiroNet net = build(config);
    ParamList<T> dst = net.state();
    assign_tensors(ck.tensors, dst);
    return net;
}

template <typename T>
Tensor<T> loss_bce(const Tensor<T>& logits, const Tensor<T>& gt) {
    if (!(logits.shape() == gt.shape())) {
        throw ShapeError("loss_bce: logits " + logits.shape().str() + " vs ground truth " + gt.shape().str());
    }
    for (T v : gt.data()) {
        if (v != T(0) && v != T(1)) throw std::invalid_argument("loss_bce: ground truth must be binary");
    }
    return bce_with_logits(logits, gt);
}

template <typename T>
Tensor<T> threshold_logits(const Tensor<T>& logits) {
    Buffer<T> out(logits.numel());
    const auto z = logits.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T p = z[i] >= T(0) ? T(1) / (T(1) + std::exp(-z[i])) : std::exp(z[i]) / (T(1) + std::exp(z[i]));
        out[i] = p >= T(0.5) ? T(1) : T(0);
    }
    return Tensor<T>(logits.shape(), std::move(out));
}

template <typename T>
Tensor<T> predict(const SpiroNet<T>& net, const Tensor<T>& x) {
    NoGradGuard guard;
    return threshold_logits(net.forward(x, Mode::eval));
}

#define SPIRO_INSTANTIATE_NETWORK(T)                                        \
    template struct DecoderBlock<T>;                                        \
    template class SpiroNet<T>;                                             \
    template Tensor<T> loss_bce(const Tensor<T>&, const Tensor<T>&);        \
    template Tensor<T> threshold_logits(const Tensor<T>&);                  \
    template Tensor<T> predict(const SpiroNet<T>&, const Tensor<T>&);

SPIRO_INSTANTIATE_NETWORK(float)
SPIRO_INSTANTIATE_NETWORK(double)

}  // namespace spiro
