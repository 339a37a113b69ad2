// Python extension: JSON-in/JSON-out wrappers over the C++ core.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "shf/collector.hpp"
#include "shf/eval.hpp"
#include "shf/features.hpp"
#include "shf/pipeline.hpp"
#include "shf/twin.hpp"
#include "shf/wire.hpp"

namespace py = pybind11;
using namespace shf;
using nlohmann::json;

namespace {

std::string simulate(const std::string& scenario_path, const std::string& out, std::optional<std::uint64_t> seed) {
  auto scenario = sensors::load_scenario(scenario_path);
  if (seed) scenario.seed = *seed;
  py::gil_scoped_release release;
  return transport::to_json(collector::simulate_offline(scenario, collector::RunLayout{out})).dump();
}

std::string fuse(const std::string& log, const std::string& config, const std::string& out, const std::string& levels) {
  auto cfg = pipeline::load_fuse_config(config);
  auto [first, last] = pipeline::parse_level_range(levels);
  pipeline::FuseResult r;
  {
    py::gil_scoped_release release;
    r = pipeline::fuse(log, cfg, out, first, last);
  }
  json passes = json::array();
  for (const auto& p : r.passes) passes.push_back(pipeline::to_json(p));
  return json{{"run_id", r.run_id}, {"config_hash", pipeline::hex64(r.config_hash)}, {"level1", passes}}.dump();
}

std::string evaluate(const std::string& fused, const std::string& truth, std::optional<std::string> golden) {
  eval::EvalOptions opts;
  if (golden) opts.golden = *golden;
  py::gil_scoped_release release;
  return eval::to_json(eval::evaluate(fused, truth, opts)).dump();
}

std::string twin_diff(const std::string& a, const std::string& b) {
  return twin::to_json(twin::diff(twin::parse(a), twin::parse(b))).dump();
}

std::string twin_apply(const std::string& a, const std::string& d) {
  return twin::serialize(twin::apply(twin::parse(a), twin::diff_from_json(json::parse(d))));
}

py::tuple triangulate(const Eigen::MatrixX3d& origins, const Eigen::MatrixX3d& directions) {
  if (origins.rows() != directions.rows()) throw Error(Errc::dimension_mismatch, "origins and directions differ in length");
  std::vector<Ray> rays;
  for (Eigen::Index i = 0; i < origins.rows(); ++i) {
    rays.push_back({origins.row(i).transpose(), directions.row(i).transpose().normalized()});
  }
  auto t = features::triangulate(rays);
  return py::make_tuple(Eigen::Vector3d(t.point), t.residual);
}

bool frame_ok(py::bytes data) {
  std::string s = data;
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  return wire::try_decode_frame(bytes).ok();
}

}  // namespace

PYBIND11_MODULE(_native, m) {
  m.doc() = "Smart-home sensing and fusion core";
  m.attr("ShfError") = py::handle(PyErr_NewException("shf._native.ShfError", PyExc_RuntimeError, nullptr));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object cls = py::module_::import("shf._native").attr("ShfError");
      py::object exc = cls(e.what());
      exc.attr("code") = std::string(errc_name(e.code()));
      PyErr_SetObject(cls.ptr(), exc.ptr());
    }
  });

  m.def("simulate", &simulate, py::arg("scenario"), py::arg("out"), py::arg("seed") = std::nullopt);
  m.def("fuse", &fuse, py::arg("log"), py::arg("config"), py::arg("out"), py::arg("levels") = "0..3");
  m.def("evaluate", &evaluate, py::arg("fused"), py::arg("truth"), py::arg("golden") = std::nullopt);
  m.def("twin_roundtrip", [](const std::string& line) { return twin::serialize(twin::parse(line)); });
  m.def("twin_diff", &twin_diff);
  m.def("twin_apply", &twin_apply);
  m.def("triangulate", &triangulate, py::arg("origins"), py::arg("directions"));
  m.def("frame_ok", &frame_ok);
}
