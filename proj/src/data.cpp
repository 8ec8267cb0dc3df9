#include "spiro/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <limits>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace spiro {

void Sample::check() const {
    const std::size_t n = height * width;
    if (image.size() != n || mask.size() != n) {
        throw DataError("sample '" + id + "': image/mask size does not match " + std::to_string(height) + "x" +
                        std::to_string(width));
    }
    for (auto m : mask) {
        if (m > 1) throw DataError("sample '" + id + "': mask is not binary");
    }
}

void SynthConfig::validate() const {
    if (size < 32) throw DataError("synth size must be >= 32, got " + std::to_string(size));
    if ((size & (size - 1)) != 0) throw DataError("synth size must be a power of two");
    if (width_min < 1 || width_max < width_min) throw DataError("synth widths must satisfy 1 <= min <= max");
    if (n_branches < 1) throw DataError("synth n_branches must be >= 1");
    if (noise_sigma < 0) throw DataError("synth noise_sigma must be >= 0");
}

Point BezierSegment::at(double t) const {
    const double u = 1 - t;
    return {u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x, u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y};
}

namespace {

constexpr int kPolylinePieces = 32;

double point_segment_distance(double px, double py, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point step(Point p, double angle, double len) { return {p.x + len * std::cos(angle), p.y + len * std::sin(angle)}; }

/// Bent segment from `start` along `angle`; the control point is pushed sideways by `bend` * length.
BezierSegment bent_segment(Point start, double angle, double len, double bend, double width) {
    const Point end = step(start, angle, len);
    const Point mid{(start.x + end.x) / 2, (start.y + end.y) / 2};
    const Point ctrl = step(mid, angle + std::numbers::pi / 2, bend * len);
    return {start, ctrl, end, width};
}

}  // namespace

Raster rasterize(std::size_t size, const std::vector<BezierSegment>& segments) {
    Raster r{std::vector<double>(size * size, 0.0), std::vector<std::uint8_t>(size * size, 0)};
    const long n = static_cast<long>(size);
    for (const auto& seg : segments) {
        std::vector<Point> pts(kPolylinePieces + 1);
        for (int i = 0; i <= kPolylinePieces; ++i) pts[i] = seg.at(static_cast<double>(i) / kPolylinePieces);
        const double half = seg.width / 2;
        const double margin = half + 1;
        const double x0 = std::min({seg.p0.x, seg.p1.x, seg.p2.x}) - margin;
        const double x1 = std::max({seg.p0.x, seg.p1.x, seg.p2.x}) + margin;
        const double y0 = std::min({seg.p0.y, seg.p1.y, seg.p2.y}) - margin;
        const double y1 = std::max({seg.p0.y, seg.p1.y, seg.p2.y}) + margin;
        const long xa = std::max(0L, static_cast<long>(std::floor(x0)));
        const long xb = std::min(n - 1, static_cast<long>(std::ceil(x1)));
        const long ya = std::max(0L, static_cast<long>(std::floor(y0)));
        const long yb = std::min(n - 1, static_cast<long>(std::ceil(y1)));
        for (long y = ya; y <= yb; ++y) {
            for (long x = xa; x <= xb; ++x) {
                double d = std::numeric_limits<double>::infinity();
                for (int i = 0; i < kPolylinePieces; ++i) {
                    d = std::min(d, point_segment_distance(static_cast<double>(x), static_cast<double>(y), pts[i],
                                                           pts[i + 1]));
                }
                const double cov = std::clamp(half + 0.5 - d, 0.0, 1.0);
                const std::size_t idx = static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x);
                r.coverage[idx] = std::max(r.coverage[idx], cov);
                if (d <= half) r.mask[idx] = 1;
            }
        }
    }
    return r;
}

std::vector<BezierSegment> draw_vessel_tree(const SynthConfig& cfg, std::mt19937_64& rng) {
    const double S = static_cast<double>(cfg.size);
    constexpr double pi = std::numbers::pi;

    // Root enters from a random border, heading roughly inward.
    const int side = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
    const double along = uniform(rng, 0.2, 0.8) * (S - 1);
    Point start;
    double angle = 0;
    switch (side) {
        case 0: start = {along, 0}; angle = pi / 2; break;
        case 1: start = {S - 1, along}; angle = pi; break;
        case 2: start = {along, S - 1}; angle = -pi / 2; break;
        default: start = {0, along}; angle = 0; break;
    }
    angle += uniform(rng, -pi / 6, pi / 6);

    struct Pending {
        Point start;
        double angle;
        double width;
        double scale;
    };
    std::vector<Pending> queue{{start, angle, cfg.width_max * uniform(rng, 0.85, 1.0), 1.0}};
    std::vector<BezierSegment> out;
    for (std::size_t head = 0; head < queue.size() && out.size() < cfg.n_branches; ++head) {
        const Pending p = queue[head];
        const double len = uniform(rng, 0.25, 0.42) * S * p.scale;
        BezierSegment seg = bent_segment(p.start, p.angle, len, uniform(rng, -0.25, 0.25), p.width);
        out.push_back(seg);
        const double end_angle = std::atan2(seg.p2.y - seg.p1.y, seg.p2.x - seg.p1.x);
        const double thin = std::max(cfg.width_min, p.width * uniform(rng, 0.8, 0.95));
        queue.push_back({seg.p2, end_angle + uniform(rng, -0.25, 0.25), thin, p.scale * 0.9});
        if (uniform(rng, 0, 1) < 0.75) {
            const double t = uniform(rng, 0.35, 0.75);
            const double sign = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
            const double branch = std::max(cfg.width_min, p.width * uniform(rng, 0.5, 0.75));
            queue.push_back({seg.at(t), p.angle + sign * uniform(rng, 0.45, 1.0), branch, p.scale * 0.8});
        }
    }
    return out;
}

std::vector<BezierSegment> draw_distractors(const SynthConfig& cfg, std::mt19937_64& rng) {
    const double S = static_cast<double>(cfg.size);
    std::vector<BezierSegment> out;
    for (std::size_t i = 0; i < cfg.distractors; ++i) {
        const Point start{uniform(rng, 0, S - 1), uniform(rng, 0, S - 1)};
        const double angle = uniform(rng, -std::numbers::pi, std::numbers::pi);
        out.push_back(bent_segment(start, angle, uniform(rng, 0.2, 0.4) * S, uniform(rng, -0.6, 0.6),
                                   uniform(rng, 1.0, 1.6)));
    }
    return out;
}

Sample compose_sample(const SynthConfig& cfg, const std::vector<BezierSegment>& vessels,
                      const std::vector<BezierSegment>& distractors, std::mt19937_64& rng) {
    const std::size_t S = cfg.size;
    const Raster v = rasterize(S, vessels);
    const Raster d = rasterize(S, distractors);
    const double phi = uniform(rng, -std::numbers::pi, std::numbers::pi);
    const double level = uniform(rng, 0.65, 0.8);
    const double contrast = cfg.vessel_contrast * uniform(rng, 0.8, 1.2);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);

    Sample s;
    s.height = s.width = S;
    s.image.resize(S * S);
    s.mask = v.mask;
    s.provenance = Provenance::synthetic;
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const std::size_t i = y * S + x;
            const double u = (std::cos(phi) * static_cast<double>(x) + std::sin(phi) * static_cast<double>(y)) /
                             static_cast<double>(S);
            double val = level + cfg.gradient_amplitude * (u - 0.5 * (std::cos(phi) + std::sin(phi)));
            val *= 1 - contrast * v.coverage[i];
            val -= cfg.distractor_contrast * d.coverage[i];
            if (cfg.noise_sigma > 0) val += noise(rng);
            s.image[i] = std::clamp(val, 0.0, 1.0);
        }
    }
    return s;
}

Sample generate_sample(const SynthConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    auto vessels = draw_vessel_tree(cfg, rng);
    auto distractors = draw_distractors(cfg, rng);
    return compose_sample(cfg, vessels, distractors, rng);
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

AugmentParams draw_augment(std::mt19937_64& rng, double max_angle_deg) {
    AugmentParams p;
    p.hflip = uniform(rng, 0, 1) < 0.5;
    p.vflip = uniform(rng, 0, 1) < 0.5;
    p.angle_deg = uniform(rng, -max_angle_deg, max_angle_deg);
    return p;
}

namespace {

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Sample apply_augment(const Sample& s, const AugmentParams& p) {
    const std::size_t H = s.height, W = s.width;
    Sample f = s;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t sy = p.vflip ? H - 1 - y : y;
            const std::size_t sx = p.hflip ? W - 1 - x : x;
            f.image[y * W + x] = s.image[sy * W + sx];
            f.mask[y * W + x] = s.mask[sy * W + sx];
        }
    }
    if (p.angle_deg == 0) return f;

    const double rad = p.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad), sn = std::sin(rad);
    const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    auto pixel = [&](long yy, long xx) {
        return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : f.image[static_cast<std::size_t>(yy * w + xx)];
    };
    Sample out = f;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = snap(c * dx + sn * dy + cx);
            const double sy = snap(-sn * dx + c * dy + cy);
            const long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
            const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
            double v = (1 - ay) * ((1 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1)) +
                       ay * ((1 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1));
            out.image[y * W + x] = std::clamp(v, 0.0, 1.0);
            const long nx = std::lround(sx), ny = std::lround(sy);
            out.mask[y * W + x] =
                (ny < 0 || ny >= h || nx < 0 || nx >= w) ? 0 : f.mask[static_cast<std::size_t>(ny * w + nx)];
        }
    }
    return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng) { return apply_augment(s, draw_augment(rng)); }

std::uint8_t quantize8(double v) { return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5)); }

void write_pgm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
               std::size_t width) {
    if (values.size() != height * width) throw DataError("write_pgm: value count does not match dimensions");
    std::string payload(values.size(), '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DataError("write_pgm: value " + std::to_string(v) + " at index " + std::to_string(i) +
                            " outside [0,1]");
        }
        payload[i] = static_cast<char>(quantize8(v));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_pgm: cannot open " + path.string());
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw DataError("write_pgm: write failed for " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_pgm: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::string where = "read_pgm(" + path.string() + "): ";
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError(where + "missing P5 magic");
    std::size_t pos = 2;
    auto next_token = [&]() -> std::size_t {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            throw DataError(where + "malformed header");
        }
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > (1u << 24)) throw DataError(where + "header value too large");
            ++pos;
        }
        return v;
    };
    GrayImage img;
    img.width = next_token();
    img.height = next_token();
    const std::size_t maxval = next_token();
    if (img.width == 0 || img.height == 0) throw DataError(where + "zero dimension");
    if (maxval == 0 || maxval > 255) throw DataError(where + "maxval must be in [1,255]");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw DataError(where + "malformed header");
    }
    ++pos;
    const std::size_t n = img.width * img.height;
    if (bytes.size() - pos < n) {
        throw DataError(where + "truncated payload: expected " + std::to_string(n) + " bytes, found " +
                        std::to_string(bytes.size() - pos));
    }
    img.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        img.values[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
    }
    return img;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(const std::vector<Sample>& samples,
                                                                  double train_frac, std::uint64_t seed) {
    if (samples.size() < 2) throw DataError("split_dataset: need at least 2 samples");
    if (!(train_frac > 0 && train_frac < 1)) throw DataError("split_dataset: train_frac must be in (0,1)");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = samples.size();
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n))), 1, n - 1);
    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
    return out;
}

Dataset generate_dataset(const SynthConfig& cfg, std::size_t n_train, std::size_t n_test) {
    cfg.validate();
    const std::size_t n = n_train + n_test;
    if (n_train == 0 || n_test == 0) throw DataError("generate_dataset: both splits need at least one sample");
    std::vector<Sample> all(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = sample_rng(cfg.seed, i);
        all[i] = generate_sample(cfg, rng);
        char id[32];
        std::snprintf(id, sizeof id, "synth_%04zu", i);
        all[i].id = id;
    }
    auto [train, test] = split_dataset(all, static_cast<double>(n_train) / static_cast<double>(n), cfg.seed);
    return {std::move(train), std::move(test)};
}

namespace {

std::vector<double> mask_values(const Sample& s) {
    std::vector<double> v(s.mask.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.mask[i] ? 1.0 : 0.0;
    return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
    if (!manifest) throw DataError("cannot write " + (dir / "manifest.csv").string());
    manifest << "id,split\n";
    auto emit = [&](const std::vector<Sample>& part, const char* split) {
        for (const auto& s : part) {
            s.check();
            write_pgm(dir / "images" / (s.id + ".pgm"), s.image, s.height, s.width);
            write_pgm(dir / "masks" / (s.id + ".pgm"), mask_values(s), s.height, s.width);
            manifest << s.id << "," << split << "\n";
        }
    };
    emit(ds.train, "train");
    emit(ds.test, "test");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw DataError("dataset manifest not found: " + (dir / "manifest.csv").string());
    std::string line;
    if (!std::getline(manifest, line) || line != "id,split") {
        throw DataError("manifest.csv must start with 'id,split'");
    }
    Dataset ds;
    std::size_t lineno = 1;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("manifest.csv line " + std::to_string(lineno) + ": no comma");
        Sample s;
        s.id = line.substr(0, comma);
        const std::string split = line.substr(comma + 1);
        s.provenance = s.id.rfind("synth_", 0) == 0 ? Provenance::synthetic : Provenance::file;
        GrayImage img = read_pgm(dir / "images" / (s.id + ".pgm"));
        GrayImage mask = read_pgm(dir / "masks" / (s.id + ".pgm"));
        if (img.height != mask.height || img.width != mask.width) {
            throw DataError("sample '" + s.id + "': image and mask dimensions differ");
        }
        s.height = img.height;
        s.width = img.width;
        s.image = std::move(img.values);
        s.mask.resize(mask.values.size());
        for (std::size_t i = 0; i < mask.values.size(); ++i) {
            const double m = mask.values[i];
            if (m != 0.0 && m != 1.0) throw DataError("sample '" + s.id + "': mask is not binary");
            s.mask[i] = m == 1.0 ? 1 : 0;
        }
        if (split == "train") ds.train.push_back(std::move(s));
        else if (split == "test") ds.test.push_back(std::move(s));
        else throw DataError("manifest.csv line " + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
    return ds;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Sample>& samples,
                                           const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty batch");
    const std::size_t H = samples.at(indices[0]).height, W = samples.at(indices[0]).width;
    std::vector<T> img, msk;
    img.reserve(indices.size() * H * W);
    msk.reserve(indices.size() * H * W);
    for (std::size_t i : indices) {
        const Sample& s = samples.at(i);
        if (s.height != H || s.width != W) throw DataError("make_batch: samples have different sizes");
        for (double v : s.image) img.push_back(static_cast<T>(v));
        for (auto m : s.mask) msk.push_back(static_cast<T>(m));
    }
    const Shape shape{indices.size(), 1, H, W};
    return {Tensor<T>(shape, std::move(img)), Tensor<T>(shape, std::move(msk))};
}

template std::pair<Tensor<float>, Tensor<float>> make_batch<float>(const std::vector<Sample>&,
                                                                   const std::vector<std::size_t>&);
template std::pair<Tensor<double>, Tensor<double>> make_batch<double>(const std::vector<Sample>&,
                                                                      const std::vector<std::size_t>&);

}  // namespace spiro
