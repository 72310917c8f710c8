#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "idsis/commands.hpp"
#include "idsis/data.hpp"
#include "idsis/errors.hpp"
#include "idsis/evaluation.hpp"
#include "idsis/losses.hpp"

namespace py = pybind11;
using namespace idsis;

namespace {

py::tuple toy_record(std::uint32_t identity_id, std::uint64_t variation_seed, int resolution,
                     std::uint64_t dataset_seed) {
    data::DataConfig cfg;
    cfg.resolution = resolution;
    cfg.seed = dataset_seed;
    const auto rec = data::generate_record(data::ToyIdentitySpec::from_seed(identity_id, dataset_seed),
                                           variation_seed, cfg);
    py::array_t<float> image({rec.image.height, rec.image.width, 3});
    std::memcpy(image.mutable_data(), rec.image.pixels.data(), rec.image.pixels.size() * sizeof(float));
    py::array_t<std::uint8_t> mask({rec.mask.height, rec.mask.width});
    std::memcpy(mask.mutable_data(), rec.mask.labels.data(), rec.mask.labels.size());
    return py::make_tuple(image, mask);
}

py::array_t<std::uint8_t> one_hot(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> labels,
                                  int classes) {
    if (labels.ndim() != 2) throw ShapeError("labels must be a 2-d array");
    data::LabelMap map(static_cast<int>(labels.shape(0)), static_cast<int>(labels.shape(1)));
    std::memcpy(map.labels.data(), labels.data(), map.labels.size());
    const auto mask = data::one_hot(map, classes);
    py::array_t<std::uint8_t> out({mask.classes, mask.height, mask.width});
    std::memcpy(out.mutable_data(), mask.planes.data(), mask.planes.size());
    return out;
}

Eigen::MatrixXd to_eigen(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    if (a.ndim() == 1) a = a.reshape({a.shape(0), py::ssize_t{1}});
    if (a.ndim() != 2) throw ShapeError("features must be a 1-d or 2-d array");
    Eigen::MatrixXd m(a.shape(0), a.shape(1));
    const double* p = a.data();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p[r * m.cols() + c];
    }
    return m;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"idsis"};
    for (const auto& a : args) argv.push_back(a.c_str());
    py::gil_scoped_release release;
    return cli::cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

PYBIND11_MODULE(_idsis, m) {
    m.doc() = "Identity-conditioned semantic image synthesis on toy faces.";

    py::register_exception<Error>(m, "IdsisError", PyExc_RuntimeError);

    m.def("toy_record", &toy_record, py::arg("identity_id"), py::arg("variation_seed"), py::arg("resolution") = 64,
          py::arg("dataset_seed") = 0, "Render one toy face; returns (image HxWx3 in [-1,1], label map HxW).");
    m.def("one_hot", &one_hot, py::arg("labels"), py::arg("classes"));
    m.def("class_names", &data::toy_class_names);
    m.def("calibrate_threshold", &eval::calibrate_threshold, py::arg("impostor_scores"),
          py::arg("far_target") = 0.01);
    m.def(
        "frechet_distance",
        [](py::array_t<double> a, py::array_t<double> b) { return eval::frechet_distance(to_eigen(a), to_eigen(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "total_objective",
        [](double adv, double fm, double prc, double id, double lambda_fm, double lambda_prc, double lambda_id) {
            return loss::total_objective(loss::LossParts{adv, fm, prc, id}, loss::LossWeights{lambda_fm, lambda_prc, lambda_id});
        },
        py::arg("adv"), py::arg("fm"), py::arg("prc"), py::arg("id"), py::arg("lambda_fm") = 10.0,
        py::arg("lambda_prc") = 10.0, py::arg("lambda_id") = 10.0);
    m.def(
        "config_keys",
        [] {
            std::vector<std::string> out;
            for (const auto& k : cli::config_keys()) out.push_back(k.name);
            return out;
        });
    m.def("run", &run_cli, py::arg("args"), "Run the command-line tool in-process; returns its exit code.");
}
