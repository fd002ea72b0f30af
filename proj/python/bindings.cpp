// Copyright 2026 The pivotkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pivotkit/cli.hpp"
#include "pivotkit/config.hpp"
#include "pivotkit/eval.hpp"
#include "pivotkit/objectives.hpp"
#include "pivotkit/world.hpp"

namespace py = pybind11;
using namespace pivotkit;

namespace {

py::dict world_summary(const World& w) {
  py::dict d;
  d["num_classes"] = w.config.num_classes;
  d["class_names"] = [&] {
    std::vector<std::string> n;
    for (const auto& c : w.classes) n.push_back(c.name);
    return n;
  }();
  d["vt"] = w.vt.size();
  d["va"] = w.va.size();
  d["at_gold"] = w.at_gold_size();
  d["eval"] = w.eval.size();
  d["vocab_size"] = w.vocab.size();
  d["centroid_oracle_accuracy"] = w.centroid_oracle_accuracy;
  return d;
}

WorldConfig world_config(const std::map<std::string, std::string>& values, std::uint64_t seed) {
  KeyValueConfig kv;
  for (const auto& [k, v] : values) kv.set(k, v);
  kv.require_known(world_config_keys());
  return world_config_from(kv, seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "pivotkit core bindings";
  py::register_exception<Error>(m, "PivotkitError", PyExc_ValueError);

  m.def(
      "patch_grid",
      [](int h, int w, std::pair<int, int> kernel, std::pair<int, int> stride) {
        PatchConfig p;
        p.kernel_h = kernel.first;
        p.kernel_w = kernel.second;
        p.stride_h = stride.first;
        p.stride_w = stride.second;
        const GridShape g = patch_grid(h, w, p);
        return std::tuple{g.rows, g.cols, g.tokens()};
      },
      py::arg("height"), py::arg("width"), py::arg("kernel"), py::arg("stride"),
      "(rows, cols, tokens) of a patch embedding over an H x W input.");

  m.def(
      "info_nce",
      [](const MatD& a, const MatD& b, double tau) {
        const LossValue<double> l = info_nce(a, b, Temperature::fixed(tau));
        return std::tuple{l.value, l.grad_a, l.grad_b};
      },
      py::arg("a"), py::arg("b"), py::arg("tau"), "Symmetric InfoNCE loss and its gradients.");

  m.def(
      "recall_at_k",
      [](const MatF& q, const MatF& c, const std::vector<std::vector<int>>& gold, const std::vector<int>& ks) {
        return recall_at_k(q, c, gold, ks).recall;
      },
      py::arg("queries"), py::arg("candidates"), py::arg("gold"), py::arg("ks") = std::vector<int>{1, 10});

  m.def("average_precision", &average_precision, py::arg("scores"), py::arg("relevant"));
  m.def(
      "mean_average_precision",
      [](const MatD& scores, const std::vector<std::vector<int>>& gold) {
        const MapResult r = mean_average_precision(scores, gold);
        return std::tuple{r.value, r.per_class, r.excluded};
      },
      py::arg("scores"), py::arg("gold"));

  m.def(
      "fit_scaling",
      [](const std::vector<double>& counts, const std::vector<double>& metrics, double target) {
        if (counts.size() != metrics.size()) throw Error("fit_scaling: counts and metrics differ in length");
        std::vector<ScalingPoint> pts;
        for (std::size_t i = 0; i < counts.size(); ++i) pts.push_back({counts[i], metrics[i]});
        const ScalingFit f = fit_scaling(pts, target);
        py::dict d;
        d["slope"] = f.slope;
        d["intercept"] = f.intercept;
        d["r2"] = f.r2;
        d["residuals"] = f.residuals;
        d["extrapolated_count"] = f.extrapolated_count;
        d["extrapolated_log2"] = f.extrapolated_log2;
        d["extrapolated"] = f.extrapolated;
        return d;
      },
      py::arg("counts"), py::arg("metrics"), py::arg("target"));

  m.def(
      "generate_world",
      [](const std::map<std::string, std::string>& config, std::uint64_t seed) {
        return world_summary(generate_world(world_config(config, seed)));
      },
      py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 0,
      "Generates a world from key-value config entries and returns its summary.");
  m.def(
      "load_world", [](const std::filesystem::path& dir) { return world_summary(load_world(dir)); }, py::arg("dir"));

  m.def("sha256", [](py::bytes b) { return sha256_hex(std::string(b)); }, py::arg("data"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return std::tuple{code, out.str(), err.str()};
      },
      py::arg("args"), "Runs a pivotkit subcommand in process; returns (exit code, stdout, stderr).");
}
