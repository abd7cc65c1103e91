#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "sagekb/engine.hpp"
#include "sagekb/error.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace sagekb;

namespace {

py::object to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null: return py::none();
    case json::value_t::boolean: return py::bool_(j.get<bool>());
    case json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case json::value_t::number_float: return py::float_(j.get<double>());
    case json::value_t::string: return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& x : j) out.append(to_py(x));
      return std::move(out);
    }
    case json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return std::move(out);
    }
    default: return py::none();
  }
}

json from_py(const py::handle& o) {
  if (o.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(o)) return o.cast<bool>();
  if (py::isinstance<py::int_>(o)) return o.cast<std::int64_t>();
  if (py::isinstance<py::float_>(o)) return o.cast<double>();
  if (py::isinstance<py::str>(o)) return o.cast<std::string>();
  if (py::isinstance<py::dict>(o)) {
    json out = json::object();
    for (const auto& [k, v] : o.cast<py::dict>()) out[py::str(k).cast<std::string>()] = from_py(v);
    return out;
  }
  if (py::isinstance<py::list>(o) || py::isinstance<py::tuple>(o)) {
    json out = json::array();
    for (const auto& x : o) out.push_back(from_py(x));
    return out;
  }
  throw Error(ErrorCode::invalid_argument, "unsupported value type: " + py::str(o.get_type()).cast<std::string>());
}

json kb_json(const KnowledgeBase& kb) {
  return {{"kb_id", kb.kb_id},       {"name", kb.name},
          {"created_at", kb.created_at}, {"document_ids", kb.document_ids},
          {"embedding_dimension", kb.embedding_dimension}};
}

json ingest_json(const IngestResult& r) {
  return {{"doc_id", r.doc_id},
          {"chunk_count", r.chunk_count},
          {"triple_count", r.triple_count},
          {"deduplicated", r.deduplicated}};
}

std::vector<RetrievalMode> modes_arg(const py::object& modes) {
  if (py::isinstance<py::str>(modes)) return parse_modes(modes.cast<std::string>());
  std::vector<std::string> names;
  for (const auto& m : modes) names.push_back(py::str(m).cast<std::string>());
  return parse_modes(join(names, ","));
}

std::unique_ptr<Engine> make_engine(std::string root, std::optional<std::string> config, bool mock,
                                    std::string fixtures, std::optional<std::string> prompts_dir) {
  EngineConfig c;
  c.root = std::move(root);
  c.config_path = std::move(config);
  c.mock = mock;
  c.fixtures_dir = std::move(fixtures);
  if (c.config_path) apply_engine_settings(*c.config_path, c);
  if (prompts_dir) c.prompts_dir = std::move(prompts_dir);
  return std::make_unique<Engine>(std::move(c));
}

}  // namespace

PYBIND11_MODULE(_sagekb, m) {
  m.doc() = "Knowledge bases with vector, graph and custom retrieval; research reports; RAG evaluation.";

  static py::handle error_type = py::exception<Error>(m, "SageKbError").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = error_type(e.what());
      inst.attr("code") = std::string(api_code(e.code()));
      inst.attr("stage") = e.stage() ? py::object(py::str(*e.stage())) : py::object(py::none());
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    }
  });

  py::class_<Engine>(m, "Engine")
      .def(py::init(&make_engine), py::arg("root"), py::arg("config") = std::nullopt, py::arg("mock") = false,
           py::arg("fixtures") = "fixtures", py::arg("prompts_dir") = std::nullopt)
      .def("create_kb", [](Engine& e, const std::string& name) { return to_py(kb_json(e.create_kb(name))); })
      .def("list_kbs", [](Engine& e) { return to_py(json(e.list_kbs())); })
      .def("delete_kb", &Engine::delete_kb, py::arg("kb"))
      .def(
          "ingest",
          [](Engine& e, const std::string& kb, const std::string& path) {
            const auto r = [&] {
              py::gil_scoped_release release;
              return e.ingest_paths(kb, {path}).front();
            }();
            return to_py(ingest_json(r));
          },
          py::arg("kb"), py::arg("path"))
      .def(
          "ingest_bytes",
          [](Engine& e, const std::string& kb, py::bytes data, const std::string& filename) {
            std::string bytes = data;
            const auto r = [&] {
              py::gil_scoped_release release;
              return e.ingest_bytes(kb, std::move(bytes), filename);
            }();
            return to_py(ingest_json(r));
          },
          py::arg("kb"), py::arg("data"), py::arg("filename"))
      .def(
          "chat",
          [](Engine& e, const std::string& kb, const std::string& query, const std::string& mode,
             const py::object& history, std::optional<std::size_t> k, std::optional<int> depth) {
            const auto h = history_from_json(from_py(history));
            const auto a = [&] {
              py::gil_scoped_release release;
              return e.chat(kb, query, retrieval_mode_from_string(mode), h, k, depth);
            }();
            return to_py(json(a));
          },
          py::arg("kb"), py::arg("query"), py::arg("mode") = "custom", py::arg("history") = py::none(),
          py::arg("k") = std::nullopt, py::arg("depth") = std::nullopt)
      .def(
          "report",
          [](Engine& e, const std::string& kb, const std::string& question, int n_queries, int top_m, bool arxiv) {
            ReportJobSpec spec{question, n_queries, top_m, arxiv ? SourceMode::arxiv : SourceMode::web};
            const auto out = [&] {
              py::gil_scoped_release release;
              return e.run_report(kb, spec);
            }();
            return to_py({{"report_id", out.report_id},
                          {"doc_id", out.doc_id},
                          {"markdown", out.markdown},
                          {"report", out.report}});
          },
          py::arg("kb"), py::arg("question"), py::arg("n_queries") = 3, py::arg("top_m") = 5,
          py::arg("arxiv") = false)
      .def("read_report", &Engine::read_report, py::arg("kb"), py::arg("report_id"))
      .def(
          "graph_tsv", [](Engine& e, const std::string& kb) { return e.open_kb(kb)->snapshot()->graph.export_tsv(); },
          py::arg("kb"))
      .def(
          "evaluate",
          [](Engine& e, const std::string& kb, const std::string& dataset, const py::object& modes,
             const std::string& relevance, std::optional<std::string> out_dir) {
            const auto queries = load_dataset(dataset);
            const auto mode_list = modes_arg(modes);
            const auto result = [&] {
              py::gil_scoped_release release;
              return e.run_eval(kb, queries, mode_list, relevance_mode_from_string(relevance));
            }();
            if (out_dir) write_eval_outputs(result, *out_dir);
            return to_py(eval_bundle(result));
          },
          py::arg("kb"), py::arg("dataset"), py::arg("modes") = "vector,graph,custom",
          py::arg("relevance") = "concepts", py::arg("out_dir") = std::nullopt);

  m.def(
      "synthetic_dataset",
      [](std::size_t per_cell, std::uint64_t seed) { return to_py(json(synthetic_dataset(per_cell, seed))); },
      py::arg("per_cell") = 255, py::arg("seed") = 2024);
  m.def("parse_correctness", [](const std::string& s) { return parse_correctness(s); });
  m.def("parse_verdict", [](const std::string& s) { return parse_verdict(s); });
  m.def("faithfulness_ratio", [](const std::vector<bool>& verified) {
    std::vector<Statement> st;
    for (bool v : verified) st.push_back({"", v});
    return score_faithfulness(st);
  });
  m.def("concept_ratio", &concept_ratio);
  m.def("aggregate", [](const py::object& bundle_records, const std::string& group_by) {
    std::vector<EvalRecord> records = from_py(bundle_records).get<std::vector<EvalRecord>>();
    GroupBy g = GroupBy::all;
    if (group_by == "difficulty") g = GroupBy::difficulty;
    else if (group_by == "occurrence") g = GroupBy::occurrence;
    else if (group_by == "difficulty_occurrence") g = GroupBy::difficulty_occurrence;
    else if (group_by != "all") throw Error(ErrorCode::invalid_argument, "unknown grouping '" + group_by + "'");
    return to_py(json(aggregate(records, g)));
  });
}
