#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spiro/tensor.hpp"

namespace spiro {

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

enum class Provenance { synthetic, file };

/// Image/mask pair. Image values in [0,1], mask values in {0,1}, both row-major H x W.
struct Sample {
    std::string id;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;
    std::vector<std::uint8_t> mask;
    Provenance provenance = Provenance::synthetic;

    std::size_t pixels() const { return height * width; }
    /// Throws DataError if sizes disagree or the mask is not binary.
    void check() const;
};

struct SynthConfig {
    std::size_t size = 64;
    std::size_t n_branches = 7;  // total Bezier segments in the vessel tree
    double width_min = 1.0;
    double width_max = 3.5;
    double noise_sigma = 0.06;
    double gradient_amplitude = 0.25;
    std::size_t distractors = 2;
    double vessel_contrast = 0.45;
    double distractor_contrast = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Point {
    double x = 0;
    double y = 0;
};

/// Quadratic Bezier with constant width in pixels.
struct BezierSegment {
    Point p0, p1, p2;
    double width = 1;

    Point at(double t) const;
};

/// Anti-aliased coverage in [0,1] and the binary mask coverage >= 0.5.
struct Raster {
    std::vector<double> coverage;
    std::vector<std::uint8_t> mask;
};

Raster rasterize(std::size_t size, const std::vector<BezierSegment>& segments);

std::vector<BezierSegment> draw_vessel_tree(const SynthConfig& cfg, std::mt19937_64& rng);
std::vector<BezierSegment> draw_distractors(const SynthConfig& cfg, std::mt19937_64& rng);

/// Composites dark vessels and distractors on a bright gradient background, adds noise, clamps to
/// [0,1]. Only `vessels` enter the mask.
Sample compose_sample(const SynthConfig& cfg, const std::vector<BezierSegment>& vessels,
                      const std::vector<BezierSegment>& distractors, std::mt19937_64& rng);

Sample generate_sample(const SynthConfig& cfg, std::mt19937_64& rng);

/// Per-sample stream derived from (seed, index) so generation order does not matter.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

struct AugmentParams {
    bool hflip = false;
    bool vflip = false;
    double angle_deg = 0;
};

inline constexpr double kMaxRotationDeg = 20.0;

AugmentParams draw_augment(std::mt19937_64& rng, double max_angle_deg = kMaxRotationDeg);
/// Flips, then rotation about the image center: bilinear image, nearest mask, zero fill.
Sample apply_augment(const Sample& s, const AugmentParams& p);
Sample augment(const Sample& s, std::mt19937_64& rng);

struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;  // k / 255
};

/// Binary P5, maxval 255, round-half-up quantization. Values must lie in [0,1].
void write_pgm(const std::filesystem::path& path, const std::vector<double>& values, std::size_t height,
               std::size_t width);
GrayImage read_pgm(const std::filesystem::path& path);
std::uint8_t quantize8(double v);

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(const std::vector<Sample>& samples,
                                                                  double train_frac, std::uint64_t seed);

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// n_train + n_test synthetic samples, split with split_dataset under the same seed.
Dataset generate_dataset(const SynthConfig& cfg, std::size_t n_train, std::size_t n_test);

/// images/<id>.pgm, masks/<id>.pgm, manifest.csv (id,split).
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

/// Stacks samples[indices] into image and mask tensors [B,1,H,W].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Sample>& samples,
                                           const std::vector<std::size_t>& indices);

}  // namespace spiro
