#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "icon/commands.hpp"
#include "icon/eval.hpp"
#include "icon/flow.hpp"
#include "icon/synthdata.hpp"
#include "icon/theory.hpp"

namespace py = pybind11;
using namespace icon;

namespace {

py::dict dataset_dict(const TaskDataset& d) {
  py::dict out;
  out["task"] = d.task_id;
  out["split"] = d.split;
  out["X"] = d.X;
  if (d.z_true) out["z_true"] = *d.z_true;
  if (d.labels) out["labels"] = *d.labels;
  return out;
}

}  // namespace

PYBIND11_MODULE(_icon, m) {
  m.doc() = "Continual identification of shared latents: flows, objectives and the command runner.";

  // Translators run newest first, so the base class is registered first.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<IngestionError>(m, "IngestionError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  py::class_<FlowParams>(m, "Flow")
      .def_static("load", [](const std::filesystem::path& p) { return load_flow(p); }, py::arg("path"))
      .def_static(
          "init",
          [](int K, int N, int n_blocks, int width, std::uint64_t seed) {
            FlowOptions o;
            o.n_blocks = n_blocks;
            o.width = width;
            RngStream rng(seed, Stream::kFlowInit);
            return init_flow(K, N, o, rng);
          },
          py::arg("K"), py::arg("N"), py::arg("n_blocks") = 8, py::arg("width") = 64, py::arg("seed") = 0)
      .def_readonly("K", &FlowParams::K)
      .def_readonly("N", &FlowParams::N)
      .def_readonly("n_blocks", &FlowParams::n_blocks)
      .def_property_readonly("n_params", [](const FlowParams& f) { return f.params.values.size(); })
      .def("save", [](const FlowParams& f, const std::filesystem::path& p) { save_flow(f, p); }, py::arg("path"))
      .def("forward", [](const FlowParams& f, const Matrix& z) { return forward(f, z); }, py::arg("z"))
      .def("inverse", [](const FlowParams& f, const Matrix& x) { return inverse(f, x); }, py::arg("x"))
      .def("log_likelihood", [](const FlowParams& f, const Matrix& x) { return log_likelihood(f, x); }, py::arg("x"))
      .def("posterior_mean", [](const FlowParams& f, const Matrix& x) { return posterior(f, x).mu; }, py::arg("x"))
      .def("log_sigma", [](const FlowParams& f) { return Vector(f.log_sigma()); });

  m.def(
      "generate",
      [](std::uint64_t seed, int n_tasks, int n_per_task) {
        SynthSpec s;
        s.seed = seed;
        s.n_tasks = n_tasks;
        s.n_per_task = n_per_task;
        const GeneratedData g = generate(s);
        py::list train, test;
        for (const auto& d : g.train) train.append(dataset_dict(d));
        for (const auto& d : g.test) test.append(dataset_dict(d));
        py::dict out;
        out["train"] = train;
        out["test"] = test;
        out["manifest"] = g.manifest.dump();
        return out;
      },
      py::arg("seed"), py::arg("n_tasks") = 4, py::arg("n_per_task") = 10000,
      "Synthetic benchmark as lists of per-task dicts with X and z_true arrays.");

  m.def("kl_gauss", &kl_gauss, py::arg("mu_p"), py::arg("sigma_p"), py::arg("mu_q"), py::arg("sigma_q"));
  m.def("spectral_norm", [](const Matrix& a) { return spectral_norm(a); }, py::arg("a"));
  m.def(
      "manifold_distance",
      [](const Matrix& a, const Matrix& b) {
        return manifold_distance(LatentCloud{a, CloudSource::kOther, 1}, LatentCloud{b, CloudSource::kOther, 2});
      },
      py::arg("a"), py::arg("b"));
  m.def("alignment", [](const Matrix& a, const Matrix& b) { return alignment_report(a, b).mean; }, py::arg("a"),
        py::arg("b"), "Mean optimally matched |Pearson| between the columns of a and b.");

  m.def(
      "run",
      [](const std::string& name, const std::string& out, std::optional<std::string> config,
         std::optional<std::uint64_t> seed, std::optional<std::string> data, std::vector<std::string> checkpoints,
         bool no_kl) {
        CommandOptions o;
        o.out = out;
        o.config_path = std::move(config);
        o.seed = seed;
        o.data = std::move(data);
        o.checkpoints = std::move(checkpoints);
        o.no_kl = no_kl;
        std::ostringstream err;
        const int rc = run_command(name, o, err);
        return py::make_tuple(rc, err.str());
      },
      py::arg("command"), py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("data") = py::none(), py::arg("checkpoints") = std::vector<std::string>{}, py::arg("no_kl") = false,
      "Runs one subcommand; returns (exit_code, stderr_text).");
}
