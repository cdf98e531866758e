#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bdd/commands.hpp"
#include "bdd/errors.hpp"
#include "bdd/ops.hpp"

namespace py = pybind11;
using namespace bdd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, bool requires_grad = false) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

py::array_t<double> to_array(const Shape& shape, std::span<const double> values) {
  py::array_t<double> out(std::vector<py::ssize_t>(shape.begin(), shape.end()));
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_array(const Tensor& t) { return to_array(t.shape(), t.values()); }

// Loss value and its gradient with respect to the student logits.
template <class F>
py::tuple value_and_grad(const Array& student, const Array& teacher, F&& loss) {
  Tensor s = to_tensor(student, true);
  Tensor value = loss(LogitBatch(s, to_tensor(teacher)));
  backward(value);
  return py::make_tuple(value.item(), to_array(s.shape(), s.grad()));
}

py::object as_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

std::vector<int> label_vector(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::tuple run_command(const std::string& name, std::optional<std::filesystem::path> config,
                      std::filesystem::path out, std::optional<std::vector<std::uint64_t>> seeds,
                      std::optional<std::string> mode, std::size_t threads, bool timing) {
  CommandOptions o;
  o.config = std::move(config);
  o.out = std::move(out);
  o.seeds = std::move(seeds);
  o.mode = std::move(mode);
  o.threads = threads;
  o.timing = timing;
  std::ostringstream log;
  int code = 0;
  {
    py::gil_scoped_release release;
    if (name == "gen-data") code = cmd_gen_data(o, log);
    else if (name == "distill") code = cmd_distill(o, log);
    else if (name == "sweep") code = cmd_sweep(o, log);
    else if (name == "eval") code = cmd_eval(o, log);
    else throw ConfigError("unknown command '" + name + "'");
  }
  return py::make_tuple(code, log.str());
}

}  // namespace

PYBIND11_MODULE(_bdd, m) {
  m.doc() = "Balanced forward/reverse KL distillation on a small autodiff core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  py::class_<DistillConfig>(m, "DistillConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &DistillConfig::alpha)
      .def_readwrite("beta", &DistillConfig::beta)
      .def_readwrite("tau_f", &DistillConfig::tau_f)
      .def_readwrite("tau_r", &DistillConfig::tau_r)
      .def_readwrite("tau_set", &DistillConfig::tau_set)
      .def_readwrite("epsilon", &DistillConfig::epsilon)
      .def_readwrite("normalize_by_classes", &DistillConfig::normalize_by_classes)
      .def_readwrite("tau_square_rescale", &DistillConfig::tau_square_rescale)
      .def("validate", &DistillConfig::validate)
      .def_static("segmentation_defaults", &DistillConfig::segmentation_defaults)
      .def("__repr__", [](const DistillConfig& c) { return "DistillConfig(" + to_json(c).dump() + ")"; });

  m.def("softmax_tau", [](const Array& z, double tau) { return to_array(softmax_tau(to_tensor(z), tau)); },
        py::arg("logits"), py::arg("tau") = 1.0);

  m.def("forward_kl",
        [](const Array& s, const Array& t, double tau, double eps) {
          return value_and_grad(s, t, [&](const LogitBatch& p) { return forward_kl(p, tau, eps); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("tau") = 1.0, py::arg("epsilon") = 1e-12,
        "KL(p_T || p_S); returns (value, d value / d student).");
  m.def("reverse_kl",
        [](const Array& s, const Array& t, double tau, double eps) {
          return value_and_grad(s, t, [&](const LogitBatch& p) { return reverse_kl(p, tau, eps); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("tau") = 1.0, py::arg("epsilon") = 1e-12);
  m.def("bdd_loss",
        [](const Array& s, const Array& t, const DistillConfig& c) {
          return value_and_grad(s, t, [&](const LogitBatch& p) { return bdd_loss(p, c); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("config") = DistillConfig{});
  m.def("bdd_loss_accumulated",
        [](const Array& s, const Array& t, const DistillConfig& c) {
          return value_and_grad(s, t, [&](const LogitBatch& p) { return bdd_loss_accumulated(p, c); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("config") = DistillConfig{});
  m.def("bdd_seg_loss",
        [](const Array& s, const Array& t, const DistillConfig& c) {
          return value_and_grad(s, t, [&](const LogitBatch& p) { return bdd_seg_loss(p, c); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("config") = DistillConfig::segmentation_defaults());
  m.def("overall_loss",
        [](const Array& s, const Array& t, const py::array_t<int, py::array::c_style | py::array::forcecast>& labels,
           const DistillConfig& c, const std::string& term) {
          DistillTerm which = DistillTerm::bdd;
          if (term == "kd") which = DistillTerm::kd;
          else if (term == "bdd_accumulated") which = DistillTerm::bdd_accumulated;
          else if (term != "bdd") throw ParameterError("term must be kd, bdd or bdd_accumulated");
          const std::vector<int> y = label_vector(labels);
          return value_and_grad(s, t, [&](const LogitBatch& p) { return overall_loss(p, y, c, which); });
        },
        py::arg("student"), py::arg("teacher"), py::arg("labels"), py::arg("config") = DistillConfig{},
        py::arg("term") = "bdd");

  m.def("gen_gaussian_mixture",
        [](std::size_t classes, std::size_t dim, std::size_t per_class, double overlap, std::uint64_t seed,
           double separation, double noise) {
          const auto ds = gen_gaussian_mixture(classes, dim, per_class, overlap, seed, {separation, noise});
          return py::make_tuple(to_array(ds.features), py::array_t<int>(ds.labels.size(), ds.labels.data()));
        },
        py::arg("classes") = 10, py::arg("dim") = 16, py::arg("per_class") = 500, py::arg("overlap") = 0.6,
        py::arg("seed") = 7, py::arg("separation") = 10.0, py::arg("noise") = 1.0,
        "Returns (features [N,D], labels [N]).");
  m.def("gen_segmentation_grids",
        [](std::size_t classes, std::size_t height, std::size_t width, std::size_t n, std::uint64_t seed,
           std::size_t feature_dim) {
          GridOptions o;
          o.feature_dim = feature_dim;
          const auto ds = gen_segmentation_grids(classes, height, width, n, seed, o);
          py::array_t<int> labels({n, height, width});
          std::copy(ds.labels.begin(), ds.labels.end(), labels.mutable_data());
          return py::make_tuple(to_array(ds.features), labels);
        },
        py::arg("classes") = 4, py::arg("height") = 16, py::arg("width") = 16, py::arg("n") = 400,
        py::arg("seed") = 7, py::arg("feature_dim") = 8, "Returns (features [N,D,H,W], labels [N,H,W]).");

  m.def("gradcheck",
        [](std::size_t trials, std::uint64_t seed, double tolerance, bool inject_fault) {
          GradcheckOptions o;
          o.trials = trials;
          o.seed = seed;
          o.tolerance = tolerance;
          o.corrupt_gradient = inject_fault;
          return as_python(run_gradcheck_suite(o).to_json());
        },
        py::arg("trials") = 50, py::arg("seed") = 0, py::arg("tolerance") = 1e-6, py::arg("inject_fault") = false);
  m.def("properties",
        [](std::uint64_t seed, double epsilon) { return as_python(run_property_suite({seed, epsilon}).to_json()); },
        py::arg("seed") = 0, py::arg("epsilon") = 1e-12);

  m.def("run_command", &run_command, py::arg("name"), py::arg("config") = py::none(), py::arg("out") = "bdd_out",
        py::arg("seeds") = py::none(), py::arg("mode") = py::none(), py::arg("threads") = 1,
        py::arg("timing") = true,
        "Runs gen-data, distill, sweep or eval; returns (exit code, log text).");
}
