#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "epitome/cli.hpp"
#include "epitome/error.hpp"
#include "epitome/ingest.hpp"
#include "epitome/label_relations.hpp"
#include "epitome/metrics.hpp"
#include "epitome/name_tokenizer.hpp"
#include "epitome/pipeline.hpp"
#include "epitome/trainer.hpp"

namespace py = pybind11;
using namespace epitome;

namespace {

std::vector<std::string> segments(std::string_view name, const tokenizer::Boundaries& cuts) {
  return tokenizer::apply_boundaries(name, cuts);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Function name prediction for stripped binaries";

  py::register_exception<Error>(m, "EpitomeError", PyExc_RuntimeError);

  py::class_<pipeline::LabelPreprocessor>(m, "LabelPreprocessor")
      .def_static("load", &pipeline::LabelPreprocessor::load, py::arg("corpus"), py::arg("lexicon"),
                  py::arg("canonical_map") = std::filesystem::path{})
      .def("__call__", [](const pipeline::LabelPreprocessor& p, const std::string& name) { return p(name); });

  m.def("default_data_dir", &cli::default_data_dir);
  m.def("split_by_convention", [](const std::string& s) { return tokenizer::split_by_convention(s); });
  m.def(
      "rule_tokenize",
      [](const std::vector<std::string>& words, const std::string& name) {
        tokenizer::RuleLexicon lex;
        for (const auto& w : words) lex.add_word(w);
        return segments(name, tokenizer::rule_tokenize(lex, name));
      },
      py::arg("words"), py::arg("name"));

  m.def("smith_waterman_score", [](const std::string& a, const std::string& b) {
    return relations::smith_waterman_score(a, b);
  });
  m.def("sw_relative_similarity", [](const std::string& a, const std::string& b) {
    return relations::sw_relative_similarity(a, b);
  });
  m.def("classify_relation", [](const std::string& a, const std::string& b) {
    return std::string(relations::to_string(relations::classify_relation(a, b)));
  });
  m.def("stem", [](const std::string& w) { return relations::stem(w); });

  m.def(
      "evaluate",
      [](const std::vector<std::string>& pred, const std::vector<std::string>& truth, bool literal) {
        const auto c = metrics::word_level_counts(pred, truth, literal);
        const auto p = metrics::prf(c);
        return py::dict(py::arg("tp") = c.tp, py::arg("fp") = c.fp, py::arg("fn") = c.fn,
                        py::arg("precision") = p.precision, py::arg("recall") = p.recall, py::arg("f1") = p.f1);
      },
      py::arg("pred"), py::arg("truth"), py::arg("literal") = false);
  m.def("kl_divergence",
        py::overload_cast<const std::vector<double>&, const std::vector<double>&, double>(&metrics::kl_divergence),
        py::arg("p"), py::arg("q"), py::arg("epsilon") = 1e-9);
  m.def("oov_ratio", &metrics::oov_ratio, py::arg("test_labels"), py::arg("train_vocab"));

  m.def(
      "khop_neighborhood",
      [](std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges, std::size_t v, std::size_t k) {
        ingest::FineGrainedCfg g(n);
        for (const auto& [a, b] : edges) g.add_edge(a, b, ingest::EdgeKind::jump);
        return ingest::khop_neighborhood(g, v, k);
      },
      py::arg("node_count"), py::arg("edges"), py::arg("v"), py::arg("k"));

  m.def("loss_paths", &trainer::loss_paths);
  m.def(
      "gradcheck",
      [](const std::string& path, std::size_t max_coords) {
        py::gil_scoped_release release;
        auto fixture = trainer::make_gradcheck_fixture();
        trainer::GradCheckOptions opt;
        opt.max_coords = max_coords;
        return trainer::grad_check(trainer::loss_path(fixture, path), fixture.params, opt).max_rel_error;
      },
      py::arg("path"), py::arg("max_coords") = 200);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        cli::CommandResult r;
        {
          py::gil_scoped_release release;
          r = cli::run(args, out, err);
        }
        return py::make_tuple(r.exit_code, out.str(), err.str());
      },
      py::arg("args"));
}
