#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nighthaze/checkpoint.hpp"
#include "nighthaze/classical.hpp"
#include "nighthaze/cli.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/haze_synth.hpp"
#include "nighthaze/image_io.hpp"
#include "nighthaze/metrics.hpp"
#include "nighthaze/network.hpp"
#include "nighthaze/priors.hpp"

namespace py = pybind11;
using namespace nighthaze;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageRGB to_rgb_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an array of shape (H, W, 3)");
    const auto h = static_cast<int>(a.shape(0));
    const auto w = static_cast<int>(a.shape(1));
    return ImageRGB(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

template <int C>
Array to_array(const Image<C>& img) {
    std::vector<py::ssize_t> shape{img.height(), img.width()};
    if (C > 1) shape.push_back(C);
    Array out(shape);
    std::copy(img.values().begin(), img.values().end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_nighthaze, m) {
    m.doc() = "Night-time dehazing: priors, haze synthesis, classical dehazers and the prior-query transformer";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); }, py::arg("path"));
    m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_rgb_image(a), p); },
          py::arg("image"), py::arg("path"));

    m.def("dark_channel", [](const Array& a, int patch) { return to_array(dark_channel(to_rgb_image(a), patch)); },
          py::arg("image"), py::arg("patch") = 5);
    m.def("bright_channel", [](const Array& a, int patch) { return to_array(bright_channel(to_rgb_image(a), patch)); },
          py::arg("image"), py::arg("patch") = 5);

    m.def("dehaze_dcp", [](const Array& a) { return to_array(dehaze_dcp(to_rgb_image(a))); }, py::arg("image"));
    m.def(
        "dehaze_bccr",
        [](const Array& a, double lambda_reg, int iters) {
            BccrParams p;
            p.lambda_reg = lambda_reg;
            p.iters = iters;
            return to_array(dehaze_bccr(to_rgb_image(a), p));
        },
        py::arg("image"), py::arg("lambda_reg") = BccrParams{}.lambda_reg, py::arg("iters") = BccrParams{}.iters);

    m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_rgb_image(a), to_rgb_image(b)); },
          py::arg("pred"), py::arg("gt"));
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_rgb_image(a), to_rgb_image(b)); },
          py::arg("pred"), py::arg("gt"));

    m.def(
        "synth_pair",
        [](std::uint64_t seed, int index, int height, int width) {
            SynthRanges r;
            r.height = height;
            r.width = width;
            const auto [hazy, clean] = render_pair(sample_source(r, seed, index));
            return py::make_tuple(to_array(hazy), to_array(clean));
        },
        py::arg("seed") = 0, py::arg("index") = 0, py::arg("height") = 64, py::arg("width") = 64);

    py::class_<nn::PriorQueryTransformer>(m, "Model")
        .def(py::init([](int base_width, int num_scales, int bottleneck_blocks, std::uint64_t seed) {
                 nn::ModelConfig c;
                 c.base_width = base_width;
                 c.num_scales = num_scales;
                 c.blocks_per_scale.assign(static_cast<std::size_t>(num_scales - 1), 1);
                 c.decoder_blocks_per_scale.assign(static_cast<std::size_t>(num_scales - 1), 1);
                 c.bottleneck_blocks = bottleneck_blocks;
                 return nn::PriorQueryTransformer(c, seed);
             }),
             py::arg("base_width") = 16, py::arg("num_scales") = 3, py::arg("bottleneck_blocks") = 8, py::arg("seed") = 0)
        .def_static(
            "load", [](const std::filesystem::path& p) { return nn::load_checkpoint(p).model; }, py::arg("path"))
        .def(
            "save", [](const nn::PriorQueryTransformer& m, const std::filesystem::path& p, std::uint64_t step) {
                nn::save_checkpoint(m, step, p);
            },
            py::arg("path"), py::arg("step") = 0)
        .def("infer", [](const nn::PriorQueryTransformer& m, const Array& a) { return to_array(m.infer(to_rgb_image(a))); },
             py::arg("image"))
        .def("parameter_count", &nn::PriorQueryTransformer::parameter_count)
        .def("parameter_hash", &nn::PriorQueryTransformer::parameter_hash);

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int rc = cli_main(args, out, err);
            return py::make_tuple(rc, out.str(), err.str());
        },
        py::arg("args"));
}
