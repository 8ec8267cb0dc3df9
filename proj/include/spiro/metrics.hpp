#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "spiro/data.hpp"
#include "spiro/network.hpp"

namespace spiro {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Throws std::invalid_argument on size mismatch or a value outside {0,1}.
template <typename T>
ConfusionCounts confusion(std::span<const T> pred, std::span<const T> gt);

// Degenerate denominators give 0.
double sensitivity(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double mcc(const ConfusionCounts& c);

struct ImageMetrics {
    std::string id;
    double sen = 0;
    double f1 = 0;
    double iou = 0;
    double mcc = 0;
};

ImageMetrics image_metrics(const std::string& id, const ConfusionCounts& c);

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    ImageMetrics mean;  // id "mean"
    ImageMetrics std;   // id "std", population
};

/// Mean and population std over per-image rows. Throws on an empty list.
MetricReport summarize(std::vector<ImageMetrics> rows);

/// Eval-mode predictions on every sample, metrics per image.
template <typename T>
MetricReport evaluate_dataset(const SpiroNet<T>& net, const std::vector<Sample>& samples,
                              std::size_t batch_size = 8);

/// image_id,sen,f1,iou,mcc rows followed by the mean and std rows.
void write_metrics_csv(std::ostream& os, const MetricReport& report);
void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report);

}  // namespace spiro
