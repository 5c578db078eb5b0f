#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cno/bandlimit.hpp"
#include "cno/datagen.hpp"
#include "cno/eval.hpp"
#include "cno/io.hpp"
#include "cno/metrics.hpp"
#include "cno/model.hpp"
#include "cno/version.hpp"

namespace py = pybind11;
using namespace cno;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const F32& a) {
  require(a.ndim() == 4, ErrorKind::shape, "expected a 4-d array (n, c, s, s)");
  const Shape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)),
                static_cast<std::size_t>(a.shape(3))};
  return Tensor<float>(s, std::vector<float>(a.data(), a.data() + a.size()));
}

F32 to_array(const Tensor<float>& t) {
  const Shape& s = t.shape();
  F32 out({s.n, s.c, s.h, s.w});
  std::copy(t.vec().begin(), t.vec().end(), out.mutable_data());
  return out;
}

py::dict dataset_dict(const rpb::Dataset& ds) {
  py::dict d;
  d["spec"] = nlohmann::json(ds.spec).dump();
  d["inputs"] = to_array(ds.inputs);
  d["outputs"] = to_array(ds.outputs);
  d["normalization"] = ds.normalization ? py::object(py::str(nlohmann::json(*ds.normalization).dump())) : py::object(py::none());
  d["data_hash"] = io::hex64(rpb::dataset_hash(ds));
  return d;
}

}  // namespace

PYBIND11_MODULE(_cno, m) {
  m.doc() = "Convolutional neural operator core";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<Error>(m, "CnoError", PyExc_RuntimeError);

  m.def(
      "generate",
      [](const std::string& spec_json, int threads) {
        const auto spec = nlohmann::json::parse(spec_json).get<rpb::BenchmarkSpec>();
        py::gil_scoped_release release;
        rpb::Dataset ds = rpb::generate(spec, threads);
        py::gil_scoped_acquire acquire;
        return dataset_dict(ds);
      },
      py::arg("spec_json"), py::arg("threads") = 1);
  m.def(
      "generate_and_write",
      [](const std::string& spec_json, const std::string& path, int threads) {
        const auto spec = nlohmann::json::parse(spec_json).get<rpb::BenchmarkSpec>();
        py::gil_scoped_release release;
        const rpb::Dataset ds = rpb::generate(spec, threads);
        rpb::write_dataset(ds, path);
        return io::hex64(rpb::dataset_hash(ds));
      },
      py::arg("spec_json"), py::arg("path"), py::arg("threads") = 1);
  m.def("read_dataset", [](const std::string& path) { return dataset_dict(rpb::read_dataset(path)); });
  m.def("default_params", [](const std::string& benchmark, const std::string& distribution) {
    return rpb::default_params(rpb::parse_benchmark(benchmark), rpb::parse_distribution(distribution)).dump();
  });

  m.def("relative_l1", [](const F32& pred, const F32& truth) {
    require(pred.size() == truth.size(), ErrorKind::shape, "relative_l1: size mismatch");
    return relative_l1({pred.data(), static_cast<std::size_t>(pred.size())}, {truth.data(), static_cast<std::size_t>(truth.size())});
  });
  m.def("median", [](std::vector<double> v) { return median(std::move(v)); });
  m.def("fit_power_law", [](const std::vector<double>& n, const std::vector<double>& e) {
    const ScalingFit f = fit_power_law(n, e);
    return py::make_tuple(f.rate, f.n0, f.residual);
  });
  m.def("spectral_resample", [](const F64& field, int target) {
    require(field.ndim() == 2 && field.shape(0) == field.shape(1), ErrorKind::shape, "expected a square 2-d array");
    const int s = static_cast<int>(field.shape(0));
    GridFunction g(1, s);
    std::copy(field.data(), field.data() + field.size(), g.channel(0).begin());
    const GridFunction r = spectral_resample(g, target);
    F64 out({target, target});
    std::copy(r.channel(0).begin(), r.channel(0).end(), out.mutable_data());
    return out;
  });

  py::class_<CnoModel>(m, "CnoModel")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return CnoModel(nlohmann::json::parse(config_json).get<CnoConfig>(), seed);
           }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
      .def("save", [](const CnoModel& model, const std::string& path) { save_checkpoint(model, path); })
      .def("config_json", [](const CnoModel& model) { return nlohmann::json(model.config()).dump(); })
      .def("parameter_count", &CnoModel::parameter_count)
      .def("hash", [](const CnoModel& model) { return io::hex64(model_hash(model)); })
      .def("predict", [](const CnoModel& model, const F32& x) {
        const Tensor<float> in = to_tensor(x);
        Tensor<float> out;
        {
          py::gil_scoped_release release;
          out = model.predict(in);
        }
        return to_array(out);
      });
}
