#include "spiro/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace spiro {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
}

template <typename T>
ConfusionCounts confusion(std::span<const T> pred, std::span<const T> gt) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("confusion: pred has " + std::to_string(pred.size()) + " values, gt has " +
                                    std::to_string(gt.size()));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T p = pred[i], g = gt[i];
        if ((p != T(0) && p != T(1)) || (g != T(0) && g != T(1))) {
            throw std::invalid_argument("confusion: non-binary value at index " + std::to_string(i));
        }
        if (p == T(1)) (g == T(1) ? c.tp : c.fp) += 1;
        else (g == T(1) ? c.fn : c.tn) += 1;
    }
    return c;
}

namespace {

double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

}  // namespace

double sensitivity(const ConfusionCounts& c) {
    return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
}

double precision(const ConfusionCounts& c) {
    return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
}

double f1(const ConfusionCounts& c) {
    return ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
}

double iou(const ConfusionCounts& c) {
    return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp + c.fn));
}

double mcc(const ConfusionCounts& c) {
    const long double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
    const long double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (den == 0) return 0.0;
    const double v = static_cast<double>((tp * tn - fp * fn) / std::sqrt(den));
    return std::clamp(v, -1.0, 1.0);
}

ImageMetrics image_metrics(const std::string& id, const ConfusionCounts& c) {
    return {id, sensitivity(c), f1(c), iou(c), mcc(c)};
}

MetricReport summarize(std::vector<ImageMetrics> rows) {
    if (rows.empty()) throw std::invalid_argument("summarize: empty dataset");
    MetricReport r;
    r.per_image = std::move(rows);
    const double n = static_cast<double>(r.per_image.size());
    r.mean.id = "mean";
    r.std.id = "std";
    for (const auto& m : r.per_image) {
        r.mean.sen += m.sen / n;
        r.mean.f1 += m.f1 / n;
        r.mean.iou += m.iou / n;
        r.mean.mcc += m.mcc / n;
    }
    for (const auto& m : r.per_image) {
        r.std.sen += (m.sen - r.mean.sen) * (m.sen - r.mean.sen) / n;
        r.std.f1 += (m.f1 - r.mean.f1) * (m.f1 - r.mean.f1) / n;
        r.std.iou += (m.iou - r.mean.iou) * (m.iou - r.mean.iou) / n;
        r.std.mcc += (m.mcc - r.mean.mcc) * (m.mcc - r.mean.mcc) / n;
    }
    r.std.sen = std::sqrt(r.std.sen);
    r.std.f1 = std::sqrt(r.std.f1);
    r.std.iou = std::sqrt(r.std.iou);
    r.std.mcc = std::sqrt(r.std.mcc);
    return r;
}

template <typename T>
MetricReport evaluate_dataset(const SpiroNet<T>& net, const std::vector<Sample>& samples, std::size_t batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
    if (batch_size == 0) batch_size = 1;
    std::vector<ImageMetrics> rows;
    rows.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
        auto [x, y] = make_batch<T>(samples, idx);
        const Tensor<T> pred = predict(net, x);
        const std::size_t px = x.shape().plane();
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto p = pred.data().subspan(b * px, px);
            const auto g = y.data().subspan(b * px, px);
            rows.push_back(image_metrics(samples[idx[b]].id, confusion<T>(p, g)));
        }
    }
    return summarize(std::move(rows));
}

void write_metrics_csv(std::ostream& os, const MetricReport& report) {
    os << "image_id,sen,f1,iou,mcc\n" << std::setprecision(17);
    auto row = [&](const ImageMetrics& m) {
        os << m.id << "," << m.sen << "," << m.f1 << "," << m.iou << "," << m.mcc << "\n";
    };
    for (const auto& m : report.per_image) row(m);
    row(report.mean);
    row(report.std);
}

void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_metrics_csv(os, report);
}

template ConfusionCounts confusion<float>(std::span<const float>, std::span<const float>);
template ConfusionCounts confusion<double>(std::span<const double>, std::span<const double>);
template MetricReport evaluate_dataset<float>(const SpiroNet<float>&, const std::vector<Sample>&, std::size_t);
template MetricReport evaluate_dataset<double>(const SpiroNet<double>&, const std::vector<Sample>&, std::size_t);

}  // namespace spiro
