/*
 * Copyright 2026 The glasu Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Python bindings: datasets, experiments, communication counts and the
// convergence formulas. Experiment configs and reports cross the boundary
// as JSON text; the Python package turns them into dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>

#include "glasu/error.hpp"
#include "glasu/federation.hpp"
#include "glasu/harness.hpp"
#include "glasu/sampling.hpp"
#include "glasu/theory.hpp"
#include "glasu/transport.hpp"

namespace py = pybind11;

namespace {

using glasu::Dataset;
using glasu::Matrix;

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) view(i, j) = m(i, j);
  }
  return out;
}

glasu::LabelMode parse_mode(const std::string& mode) {
  if (mode == "all") return glasu::LabelMode::AllClients;
  if (mode == "single") return glasu::LabelMode::SingleHolder;
  throw glasu::ConfigError("label_mode must be all or single, got '" + mode + "'");
}

glasu::SmoothnessConstants constants(double g_ell, double l_ell, double g_f, double l_f) {
  glasu::SmoothnessConstants k{g_ell, l_ell, g_f, l_f};
  k.validate();
  return k;
}

glasu::BoundInputs bound_inputs(std::size_t M, std::size_t Q, std::size_t T, double gap, double eta) {
  glasu::BoundInputs in;
  in.num_clients = M;
  in.local_steps = Q;
  in.rounds = T;
  in.gap = gap;
  in.eta = eta;
  return in;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "GLASU: vertical federated GNN training with lazy aggregation and stale updates";

  auto base = py::register_exception<glasu::Error>(m, "GlasuError", PyExc_RuntimeError);
  py::register_exception<glasu::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<glasu::ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<glasu::DataError>(m, "DataError", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("num_nodes", &Dataset::num_nodes)
      .def_property_readonly("feature_dim", &Dataset::feature_dim)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_property_readonly("features", [](const Dataset& d) { return to_numpy(d.features); })
      .def_readonly("labels", &Dataset::labels)
      .def_property_readonly("edges", [](const Dataset& d) { return d.graph.edges(); })
      .def_property_readonly("train", [](const Dataset& d) { return d.masks.train; })
      .def_property_readonly("val", [](const Dataset& d) { return d.masks.val; })
      .def_property_readonly("test", [](const Dataset& d) { return d.masks.test; })
      .def("save", [](const Dataset& d, const std::filesystem::path& dir) { glasu::save_dataset(d, dir); },
           py::arg("directory"));

  m.def("load_dataset", &glasu::load_dataset, py::arg("directory"),
        "Read edges.txt, features.csv, labels.csv and masks.txt from a directory.");
  m.def("make_sbm_fixture", &glasu::make_sbm_fixture, py::arg("blocks"), py::arg("nodes_per_block"),
        py::arg("p_in"), py::arg("p_out"), py::arg("dim"), py::arg("seed"),
        "Stochastic block model dataset with block-indicator features.");

  m.def(
      "_run_experiment",
      [](const std::string& config_json, const Dataset* dataset) {
        const glasu::ExperimentConfig cfg = glasu::config_from_json(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        const glasu::ExperimentReport report =
            dataset != nullptr ? glasu::run_experiment(cfg, *dataset) : glasu::run_experiment(cfg);
        return glasu::report_json(report).dump();
      },
      py::arg("config_json"), py::arg("dataset") = nullptr);

  m.def(
      "_expected_counts",
      [](std::size_t layers, std::vector<std::size_t> agg_layers, std::size_t M, std::size_t T, std::size_t Q,
         const std::string& mode) {
        const glasu::LayerPlan plan{layers, std::move(agg_layers)};
        return glasu::counts_json(glasu::expected_counts(plan, M, T, Q, parse_mode(mode))).dump();
      },
      py::arg("layers"), py::arg("agg_layers"), py::arg("M"), py::arg("T"), py::arg("Q"),
      py::arg("label_mode") = "all");

  m.def(
      "count_sync_messages",
      [](std::size_t layers, std::vector<std::size_t> agg_layers, std::size_t M) {
        return glasu::count_sync_messages(glasu::LayerPlan{layers, std::move(agg_layers)}, M);
      },
      py::arg("layers"), py::arg("agg_layers"), py::arg("M"),
      "Sampling messages per round: the batch broadcast plus M uploads and one broadcast per union.");

  m.def(
      "c0", [](double g_ell, double l_ell, double g_f, double l_f) { return glasu::c0(constants(g_ell, l_ell, g_f, l_f)); },
      py::arg("G_ell"), py::arg("L_ell"), py::arg("G_f"), py::arg("L_f"));
  m.def(
      "sigma_var",
      [](double g_ell, double l_ell, double g_f, double l_f, std::size_t S, std::size_t d, double delta) {
        return glasu::sigma_var(constants(g_ell, l_ell, g_f, l_f), S, d, delta);
      },
      py::arg("G_ell"), py::arg("L_ell"), py::arg("G_f"), py::arg("L_f"), py::arg("S"), py::arg("d"),
      py::arg("delta"));
  m.def("max_step_size", &glasu::max_step_size, py::arg("c0"), py::arg("Q"), py::arg("M"));
  m.def(
      "grad_norm_bound",
      [](std::size_t M, std::size_t Q, std::size_t T, double gap, double eta, double c0, double sigma) {
        return glasu::grad_norm_bound(bound_inputs(M, Q, T, gap, eta), c0, sigma);
      },
      py::arg("M"), py::arg("Q"), py::arg("T"), py::arg("gap"), py::arg("eta"), py::arg("c0"), py::arg("sigma"));
  m.def(
      "suggested_step",
      [](std::size_t M, std::size_t Q, std::size_t T, double gap, double c0, double sigma) {
        return glasu::suggested_step(bound_inputs(M, Q, T, gap, 0.0), c0, sigma);
      },
      py::arg("M"), py::arg("Q"), py::arg("T"), py::arg("gap"), py::arg("c0"), py::arg("sigma"));
  m.def(
      "suggested_rate",
      [](std::size_t M, std::size_t Q, std::size_t T, double gap, double c0, double sigma) {
        return glasu::suggested_rate(bound_inputs(M, Q, T, gap, 0.0), c0, sigma);
      },
      py::arg("M"), py::arg("Q"), py::arg("T"), py::arg("gap"), py::arg("c0"), py::arg("sigma"));
  m.def(
      "min_rounds_for_suggested_step",
      [](std::size_t M, std::size_t Q, double gap, double c0, double sigma) {
        return glasu::min_rounds_for_suggested_step(bound_inputs(M, Q, 1, gap, 0.0), c0, sigma);
      },
      py::arg("M"), py::arg("Q"), py::arg("gap"), py::arg("c0"), py::arg("sigma"));
}
