#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <variant>

#include "spiro/data.hpp"
#include "spiro/fourier.hpp"
#include "spiro/metrics.hpp"
#include "spiro/network.hpp"

namespace py = pybind11;
using namespace spiro;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array& a) {
    if (a.ndim() < 2 || a.ndim() > 4) throw ShapeError("expected a 2-D to 4-D array");
    std::size_t dims[4] = {1, 1, 1, 1};
    for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[4 - a.ndim() + i] = std::size_t(a.shape(i));
    std::vector<T> v(a.data(), a.data() + a.size());
    return Tensor<T>(Shape{dims[0], dims[1], dims[2], dims[3]}, std::move(v));
}

template <typename T>
Array to_array(const Tensor<T>& t) {
    const Shape& s = t.shape();
    Array out({s.n, s.c, s.h, s.w});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array plane(const std::vector<double>& v, std::size_t h, std::size_t w) {
    Array out({h, w});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict sample_dict(const Sample& s) {
    py::dict d;
    d["id"] = s.id;
    d["image"] = plane(s.image, s.height, s.width);
    d["mask"] = plane(std::vector<double>(s.mask.begin(), s.mask.end()), s.height, s.width);
    return d;
}

ConfusionCounts counts_of(const Array& pred, const Array& gt) {
    return confusion<double>({pred.data(), std::size_t(pred.size())}, {gt.data(), std::size_t(gt.size())});
}

// A loaded or freshly built network in either precision.
class Net {
   public:
    explicit Net(SpiroNetConfig cfg) {
        if (cfg.precision == Precision::f64)
            net_ = SpiroNet<double>::build(cfg);
        else
            net_ = SpiroNet<float>::build(cfg);
    }

    static Net load(const std::filesystem::path& path) {
        const auto cfg = SpiroNetConfig::from_header(read_checkpoint_header(path));
        Net n;
        if (cfg.precision == Precision::f64)
            n.net_ = SpiroNet<double>::load(path);
        else
            n.net_ = SpiroNet<float>::load(path);
        return n;
    }

    Array forward(const Array& x) const {
        return std::visit(
            [&]<typename T>(const SpiroNet<T>& net) {
                NoGradGuard guard;
                return to_array(net.forward(to_tensor<T>(x), Mode::eval));
            },
            net_);
    }

    Array predict(const Array& x) const {
        return std::visit(
            [&]<typename T>(const SpiroNet<T>& net) {
                return to_array(spiro::predict(net, to_tensor<T>(x)));
            },
            net_);
    }

    void save(const std::filesystem::path& path) const {
        std::visit([&](const auto& net) { net.save(path); }, net_);
    }

    std::size_t count_params() const {
        return std::visit([](const auto& net) { return net.count_params(); }, net_);
    }

    std::string precision() const { return std::holds_alternative<SpiroNet<double>>(net_) ? "f64" : "f32"; }

    std::size_t input_size() const {
        return std::visit([](const auto& net) { return net.config().input_size; }, net_);
    }

   private:
    Net() = default;
    std::variant<SpiroNet<float>, SpiroNet<double>> net_;
};

SpiroNetConfig make_config(const std::string& variant, std::size_t input_size, std::size_t stages,
                           std::size_t base_channels, const std::string& precision, std::uint64_t seed) {
    SpiroNetConfig c = ablation_variant(variant);
    c.input_size = input_size;
    c.stages = stages;
    c.base_channels = base_channels;
    c.precision = parse_precision(precision);
    c.seed = seed;
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

    m.def(
        "rfft2",
        [](const Array& x) {
            const auto s = rfft2(to_tensor<double>(x));
            return py::make_tuple(to_array(s.re), to_array(s.im));
        },
        py::arg("x"), "Half-spectrum 2-D FFT over the last two axes; returns (re, im) as [N,C,H,W/2+1].");
    m.def(
        "irfft2",
        [](const Array& re, const Array& im, std::size_t width) {
            return to_array(irfft2(ComplexSpectrum<double>{to_tensor<double>(re), to_tensor<double>(im), width}));
        },
        py::arg("re"), py::arg("im"), py::arg("width"));

    py::class_<ConfusionCounts>(m, "Confusion")
        .def_readonly("tp", &ConfusionCounts::tp)
        .def_readonly("fp", &ConfusionCounts::fp)
        .def_readonly("tn", &ConfusionCounts::tn)
        .def_readonly("fn", &ConfusionCounts::fn);
    m.def("confusion", &counts_of, py::arg("pred"), py::arg("gt"));
    m.def(
        "metrics",
        [](const Array& pred, const Array& gt) {
            const auto c = counts_of(pred, gt);
            py::dict d;
            d["sen"] = sensitivity(c);
            d["f1"] = f1(c);
            d["iou"] = iou(c);
            d["mcc"] = mcc(c);
            return d;
        },
        py::arg("pred"), py::arg("gt"), "Sen, F1, IoU and MCC of two binary masks.");

    m.def(
        "generate_sample",
        [](std::uint64_t seed, std::uint64_t index, std::size_t size) {
            SynthConfig cfg;
            cfg.size = size;
            cfg.seed = seed;
            cfg.validate();
            auto rng = sample_rng(seed, index);
            return sample_dict(generate_sample(cfg, rng));
        },
        py::arg("seed") = 0, py::arg("index") = 0, py::arg("size") = 64);
    m.def(
        "read_pgm",
        [](const std::filesystem::path& p) {
            const GrayImage g = read_pgm(p);
            return plane(g.values, g.height, g.width);
        },
        py::arg("path"));
    m.def("variants", &ablation_variant_names);

    py::class_<Net>(m, "Net")
        .def(py::init([](const std::string& variant, std::size_t input_size, std::size_t stages,
                         std::size_t base_channels, const std::string& precision, std::uint64_t seed) {
                 return Net(make_config(variant, input_size, stages, base_channels, precision, seed));
             }),
             py::arg("variant") = "full", py::arg("input_size") = 64, py::arg("stages") = 4,
             py::arg("base_channels") = 16, py::arg("precision") = "f32", py::arg("seed") = 0)
        .def_static("load", &Net::load, py::arg("path"))
        .def("forward", &Net::forward, py::arg("x"), "Eval-mode logits as [N,1,S,S].")
        .def("predict", &Net::predict, py::arg("x"), "Binary mask as [N,1,S,S].")
        .def("save", &Net::save, py::arg("path"))
        .def_property_readonly("num_params", &Net::count_params)
        .def_property_readonly("precision", &Net::precision)
        .def_property_readonly("input_size", &Net::input_size);
}
