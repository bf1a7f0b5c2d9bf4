#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "muserec/numerics.hpp"
#include "muserec/pipeline.hpp"

namespace py = pybind11;
using namespace muserec;

namespace {

Tensor to_vector(const std::vector<double>& values) {
  if (values.empty()) throw Error("bindings: empty vector");
  return Tensor({values.size()}, values);
}

Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows[0].empty()) throw Error("bindings: empty matrix");
  const std::size_t d = rows[0].size();
  Tensor t = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw Error("bindings: ragged matrix rows");
    std::copy(rows[i].begin(), rows[i].end(), t.row_ptr(i));
  }
  return t;
}

std::vector<std::vector<double>> from_matrix(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.shape[0]);
  for (std::size_t i = 0; i < t.shape[0]; ++i)
    rows[i].assign(t.row_ptr(i), t.row_ptr(i) + t.shape[1]);
  return rows;
}

py::dict report_to_dict(const HitRatioReport& r) {
  py::dict d;
  d["label"] = r.label;
  d["cohort"] = r.cohort.empty() ? "all" : r.cohort;
  d["ks"] = r.ks;
  d["hits"] = r.hits;
  d["total"] = r.total;
  d["ratios"] = r.ratios;
  d["macro"] = r.macro;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sequential multimodal music recommender (native core)";

  py::register_exception<Error>(m, "PipelineError");

  m.def(
      "softmax",
      [](const std::vector<double>& values) {
        return softmax(to_vector(values)).data;
      },
      py::arg("values"), "Numerically stable softmax of a vector.");

  m.def(
      "cross_entropy",
      [](const std::vector<double>& logits, std::size_t target) {
        const auto r = cross_entropy_loss(to_vector(logits), target);
        return py::make_tuple(r.loss, r.grad.data);
      },
      py::arg("logits"), py::arg("target"),
      "(-log softmax(logits)[target], gradient wrt logits).");

  m.def(
      "truncated_svd",
      [](const std::vector<std::vector<double>>& matrix, std::size_t rank) {
        const auto r = truncated_svd(to_matrix(matrix), rank);
        py::dict d;
        d["u"] = from_matrix(r.u);
        d["s"] = r.s.data;
        d["v"] = from_matrix(r.v);
        return d;
      },
      py::arg("matrix"), py::arg("rank"),
      "Best rank-r factorization {u, s, v} in the Frobenius sense.");

  m.def(
      "pca_reduce",
      [](const std::vector<std::vector<double>>& rows, std::size_t out_dim) {
        const auto r = pca_reduce(to_matrix(rows), out_dim);
        py::dict d;
        d["projected"] = from_matrix(r.projected);
        d["basis"] = from_matrix(r.basis);
        d["mean"] = r.mean.data;
        d["variances"] = r.variances.data;
        return d;
      },
      py::arg("rows"), py::arg("out_dim"),
      "Mean-centered projection onto the top principal directions.");

  py::class_<RunConfig>(m, "RunConfig", "Declarative description of one pipeline run.")
      .def(py::init<>())
      .def_readwrite("work_dir", &RunConfig::work_dir)
      .def_readwrite("variant", &RunConfig::variant)
      .def_readwrite("seed", &RunConfig::seed)
      .def(
          "set",
          [](RunConfig& config, const std::string& key, const std::string& value) {
            apply_config_entry(config, key, value);
          },
          py::arg("key"), py::arg("value"),
          "Apply one configuration entry; keys match the CLI flag names.");

  m.def("variant_names", [] { return variant_names(); },
        "Every trainable variant name.");

  m.def(
      "synth",
      [](const RunConfig& config) {
        const auto r = run_synth(config);
        py::dict d;
        d["events"] = r.dataset.events_path;
        d["acoustic"] = r.dataset.acoustic_path;
        d["lyrics"] = r.dataset.lyrics_path;
        d["tags"] = r.dataset.tags_path;
        d["metadata"] = r.dataset.metadata_path;
        d["users"] = r.stats.users;
        d["sessions"] = r.stats.sessions;
        d["events_count"] = r.stats.events;
        d["stats_table"] = r.stats_table;
        return d;
      },
      py::arg("config"), "Generate the synthetic dataset into the work dir.");

  m.def(
      "prepare",
      [](const RunConfig& config) {
        const auto r = run_prepare(config);
        py::dict artifacts;
        for (const auto& [name, status] : r.artifacts) artifacts[name.c_str()] = status;
        py::dict d;
        d["vocab_hash"] = r.vocab_hash;
        d["artifacts"] = artifacts;
        d["manifest"] = r.manifest_path;
        d["warnings"] = r.warnings;
        return d;
      },
      py::arg("config"), "Build sessions, the vocabulary, and the embedding tables.");

  m.def(
      "train",
      [](const RunConfig& config) {
        const auto r = run_train(config);
        py::dict d;
        d["label"] = r.label;
        d["checkpoint"] = r.checkpoint_path;
        d["loss_curve"] = r.loss_curve_path;
        d["epoch_losses"] = r.epoch_losses;
        return d;
      },
      py::arg("config"), "Train the configured variant and write its checkpoint.");

  m.def(
      "evaluate",
      [](const RunConfig& config, const std::vector<std::string>& checkpoints) {
        const auto r = run_eval(config, checkpoints);
        py::list reports;
        for (const auto& rep : r.reports) reports.append(report_to_dict(rep));
        py::dict d;
        d["reports"] = reports;
        d["table"] = r.table;
        d["table_path"] = r.table_path;
        d["records_path"] = r.jsonl_path;
        return d;
      },
      py::arg("config"), py::arg("checkpoints") = std::vector<std::string>{},
      "Score checkpoints on the held-out sessions.");

  m.def(
      "report",
      [](const RunConfig& config, const std::string& input) {
        return run_report(config, input);
      },
      py::arg("config"), py::arg("input") = std::string{},
      "Re-render saved evaluation records as the table.");
}
