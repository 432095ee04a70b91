#include <algorithm>
#include <cmath>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "nicreg/coding_models.hpp"
#include "nicreg/errors.hpp"
#include "nicreg/eval_harness.hpp"
#include "nicreg/info_core.hpp"
#include "nicreg/neural_codec.hpp"
#include "nicreg/sources.hpp"
#include "nicreg/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

std::string verify_identities(std::size_t count, std::uint64_t seed, std::size_t max_alphabet) {
  nicreg::BatchOptions options;
  options.count = count;
  options.seed = seed;
  options.max_alphabet = max_alphabet;
  json entries = json::array();
  for (const auto& e : nicreg::verify_random_batch(options)) {
    double max_gap = 0.0;
    for (const auto& c : e.report.identities) max_gap = std::max(max_gap, c.gap);
    entries.push_back({{"kind", e.kind()},
                       {"spec_seed", e.spec_seed},
                       {"pass", e.report.all_pass()},
                       {"max_gap", max_gap},
                       {"residual_u_given_xhat", e.report.residual_u_given_xhat}});
  }
  return entries.dump();
}

double bd_rate(const std::vector<double>& anchor_rate, const std::vector<double>& anchor_quality,
               const std::vector<double>& test_rate, const std::vector<double>& test_quality) {
  auto curve = [](const std::vector<double>& r, const std::vector<double>& q) {
    if (r.size() != q.size()) {
      throw nicreg::Error(nicreg::ErrorKind::kInvalidArgument, "rate and quality lengths differ");
    }
    std::vector<nicreg::RdPoint> points;
    for (std::size_t i = 0; i < r.size(); ++i) points.push_back({r[i], q[i], ""});
    return nicreg::RdCurve(std::move(points));
  };
  return nicreg::bd_rate(curve(anchor_rate, anchor_quality), curve(test_rate, test_quality))
      .bd_rate_percent;
}

std::string train(const std::string& config_json, const std::string& output_root) {
  const nicreg::TrainConfig config =
      nicreg::train_config_from_json(nicreg::resolve_config_json(json::parse(config_json)));
  nicreg::TrainOptions options;
  options.output_root = output_root;
  options.command_line = "nicreg (python)";
  json runs = json::array();
  for (const auto& r : nicreg::train_grid(config, options)) {
    json rows = json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"step", row.step},
                      {"rate_bpd", row.rate_bpd},
                      {"mse", row.mse},
                      {"quality_db", row.quality_db},
                      {"reg_bits", std::isnan(row.reg_bits) ? json() : json(row.reg_bits)}});
    }
    runs.push_back({{"hash", r.hash},
                    {"lambda", r.lambda},
                    {"alpha", r.alpha},
                    {"seed", r.seed},
                    {"status", nicreg::to_string(r.status)},
                    {"message", r.message},
                    {"checkpoint", r.checkpoint.empty() ? "" : (r.checkpoint / "codec").string()},
                    {"rows", rows}});
  }
  return runs.dump();
}

std::string identity_probe(const std::string& checkpoint, const std::string& source_json,
                           std::size_t axes, std::size_t points, std::size_t bins,
                           std::uint64_t seed) {
  const auto source = nicreg::make_source(nicreg::source_config_from_json(json::parse(source_json)));
  const nicreg::ProbeSource probe = nicreg::principal_probe(*source, axes, points, seed);
  nicreg::CodecModel model = nicreg::CodecModel::load(checkpoint);
  return nicreg::to_json(nicreg::identity_probe(model, probe, bins)).dump();
}

}  // namespace

PYBIND11_MODULE(_nicreg, m) {
  m.doc() = "nicreg core bindings";

  py::register_exception<nicreg::Error>(m, "NicregError", PyExc_RuntimeError);

  m.def("entropy", &nicreg::entropy_of, py::arg("pmf"), "Entropy in bits of a pmf");
  m.def("gaussian_interval_mass", &nicreg::gaussian_interval_mass, py::arg("v"),
        py::arg("mean"), py::arg("scale"));
  m.def("interval_rate_bits", &nicreg::interval_rate_bits, py::arg("v"), py::arg("mean"),
        py::arg("scale"));
  m.def("bd_rate", &bd_rate, py::arg("anchor_rate"), py::arg("anchor_quality"),
        py::arg("test_rate"), py::arg("test_quality"));
  m.def("verify_identities", &verify_identities, py::arg("count") = 100, py::arg("seed") = 1,
        py::arg("max_alphabet") = 64, py::call_guard<py::gil_scoped_release>());
  m.def("train", &train, py::arg("config_json"), py::arg("output_root") = "",
        py::call_guard<py::gil_scoped_release>());
  m.def("identity_probe", &identity_probe, py::arg("checkpoint"), py::arg("source_json"),
        py::arg("axes") = 2, py::arg("points") = 32, py::arg("bins") = 32, py::arg("seed") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("default_config", [] { return nicreg::default_train_config_json().dump(); });
}
