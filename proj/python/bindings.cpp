#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "headbench/cli.hpp"
#include "headbench/dataset.hpp"
#include "headbench/ensemble.hpp"
#include "headbench/error.hpp"
#include "headbench/metrics.hpp"
#include "headbench/model.hpp"
#include "headbench/objective.hpp"

namespace py = pybind11;
using namespace headbench;
using nlohmann::json;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const DoubleArray& a) {
  if (a.ndim() != 2) throw ValidationError("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

PairSet to_pairs(const std::vector<std::pair<ClassId, ClassId>>& pairs) {
  PairSet out;
  for (auto [from, to] : pairs) out.pairs.push_back({from, to, 0.0, 0});
  out.validate();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Classification-head benchmark core";

  auto base = py::register_exception<Error>(m, "HeadbenchError", PyExc_RuntimeError);
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", validation.ptr());
  py::register_exception<RuleViolation>(m, "RuleViolation", validation.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("class_names", &wbc_class_names, "Default 13-class registry order");
  m.def("tail_names", &wbc_tail_names, "Default tail class set");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "headbench");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run a gateway subcommand in-process; returns the exit code");

  m.def(
      "focal_alpha", [](const std::vector<long>& counts) { return focal_alpha(CountVector{counts}); },
      py::arg("counts"));
  m.def(
      "effective_number_weights",
      [](const std::vector<long>& counts, double beta) { return effective_number_weights(CountVector{counts}, beta); },
      py::arg("counts"), py::arg("beta") = 0.999);
  m.def(
      "smooth_targets",
      [](const std::vector<ClassId>& labels, double epsilon, int num_classes) {
        return to_numpy(smooth_targets(labels, epsilon, num_classes));
      },
      py::arg("labels"), py::arg("epsilon"), py::arg("num_classes"));
  m.def(
      "focal_loss",
      [](const DoubleArray& logits, const DoubleArray& targets, const std::vector<double>& alpha, double gamma) {
        return focal_loss(to_matrix(logits), to_matrix(targets), alpha, gamma);
      },
      py::arg("logits"), py::arg("targets"), py::arg("alpha"), py::arg("gamma") = 2.0);
  m.def(
      "weighted_cross_entropy",
      [](const DoubleArray& logits, const DoubleArray& targets, const std::vector<double>& weights) {
        return weighted_cross_entropy(to_matrix(logits), to_matrix(targets), weights);
      },
      py::arg("logits"), py::arg("targets"), py::arg("weights"));

  m.def(
      "confusion",
      [](const std::vector<ClassId>& y_true, const std::vector<ClassId>& y_pred, int num_classes) {
        const auto cm = confusion(y_true, y_pred, num_classes);
        py::array_t<long> out({num_classes, num_classes});
        auto view = out.mutable_unchecked<2>();
        for (ClassId t = 0; t < num_classes; ++t)
          for (ClassId p = 0; p < num_classes; ++p) view(t, p) = cm.at(t, p);
        return out;
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("num_classes"));
  m.def(
      "evaluate_json",
      [](const std::vector<ClassId>& y_true, const std::vector<ClassId>& y_pred, std::vector<std::string> class_names,
         std::optional<std::vector<std::string>> tail) {
        const ClassRegistry registry(std::move(class_names));
        const auto cm = confusion(y_true, y_pred, registry.size());
        const auto report = tail ? evaluate(cm, registry, resolve_present(registry, *tail)) : evaluate(cm, registry);
        return to_json(report).dump();
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("class_names"), py::arg("tail") = py::none());

  m.def(
      "gated_override",
      [](const std::vector<ClassId>& primary, const std::vector<ClassId>& a1, const std::vector<ClassId>& a2,
         const std::vector<std::pair<ClassId, ClassId>>& pairs) {
        std::vector<std::string> ids(primary.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::to_string(i);
        return gated_override(primary, a1, a2, ids, to_pairs(pairs)).labels;
      },
      py::arg("primary"), py::arg("advisor1"), py::arg("advisor2"), py::arg("pairs"));
  m.def(
      "discover_pairs",
      [](const std::vector<ClassId>& primary, const std::vector<ClassId>& a1, const std::vector<ClassId>& a2,
         const std::vector<ClassId>& y_true, int num_classes, double min_delta, long min_support) {
        const auto found = discover_pairs(primary, a1, a2, y_true, num_classes, {min_delta, min_support});
        std::vector<std::tuple<ClassId, ClassId, double, long>> out;
        for (const auto& p : found.pairs) out.emplace_back(p.from, p.to, p.delta, p.support);
        return out;
      },
      py::arg("primary"), py::arg("advisor1"), py::arg("advisor2"), py::arg("y_true"), py::arg("num_classes"),
      py::arg("min_delta") = 0.0, py::arg("min_support") = 1);
  m.def(
      "average_logits",
      [](const std::vector<DoubleArray>& arrays, const std::vector<double>& weights) {
        std::vector<PredictionSet> sets;
        for (const auto& a : arrays) {
          PredictionSet s;
          s.logits = to_matrix(a);
          s.ids.resize(s.logits.rows);
          for (std::size_t i = 0; i < s.ids.size(); ++i) s.ids[i] = std::to_string(i);
          sets.push_back(std::move(s));
        }
        return to_numpy(average_logits(sets, weights).logits);
      },
      py::arg("logits"), py::arg("weights"));

  m.def(
      "predict_checkpoint",
      [](const std::string& path, const DoubleArray& features) {
        return to_numpy(predict_logits(load_checkpoint(path), to_matrix(features)));
      },
      py::arg("checkpoint"), py::arg("features"), "Eval-mode logits of a saved head");
  m.def(
      "load_features",
      [](const std::string& manifest) {
        const auto ds = load_dataset(manifest);
        py::array_t<float> x({ds.size(), ds.dim});
        std::copy(ds.features.begin(), ds.features.end(), x.mutable_data());
        std::vector<std::string> splits;
        for (Split s : ds.splits) splits.emplace_back(to_string(s));
        return py::make_tuple(x, ds.labels, splits, ds.ids, ds.registry.names());
      },
      py::arg("manifest"), "(features, labels, splits, ids, class_names) of a dataset manifest");
}
