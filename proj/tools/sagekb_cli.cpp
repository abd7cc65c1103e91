// sagekb command line: knowledge bases, ingestion, chat, reports, evaluation
// and the HTTP service over one local data root.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/engine.hpp"
#include "sagekb/error.hpp"
#include "sagekb/service.hpp"

namespace fs = std::filesystem;
using namespace sagekb;

namespace {

struct Globals {
  std::string root;
  std::string config;
  std::string fixtures = "fixtures";
  bool mock = false;
  bool verbose = false;
};

std::unique_ptr<Engine> make_engine(const Globals& g) {
  EngineConfig c = EngineConfig::from_env();
  if (!g.root.empty()) c.root = g.root;
  if (!g.config.empty()) c.config_path = g.config;
  c.mock = g.mock;
  c.fixtures_dir = g.fixtures;
  if (c.config_path) apply_engine_settings(*c.config_path, c);
  return std::make_unique<Engine>(std::move(c));
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::storage, fmt::format("cannot write {}", path));
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, fmt::format("cannot read {}", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print_answer(const AnswerWithReferences& a) {
  std::cout << a.answer << "\n";
  for (std::size_t i = 0; i < a.references.size(); ++i) {
    const auto& r = a.references[i];
    std::cout << fmt::format("[{}] {} ({}, {})\n", i + 1, r.source_name, r.doc_id, r.chunk_id);
  }
}

void repl(Engine& engine, const std::string& kb, RetrievalMode mode, std::optional<std::size_t> k,
          std::optional<int> depth) {
  std::vector<ChatMessage> history;
  std::string line;
  std::cerr << "> " << std::flush;
  while (std::getline(std::cin, line)) {
    const std::string q = trim(line);
    if (q == "exit" || q == "quit" || q == ":q") break;
    if (!q.empty()) {
      try {
        const auto a = engine.chat(kb, q, mode, history, k, depth);
        print_answer(a);
        history.push_back({Role::user, q});
        history.push_back({Role::assistant, a.answer});
      } catch (const Error& e) {
        std::cerr << fmt::format("error: {}: {}\n", api_code(e.code()), e.what());
      }
    }
    std::cerr << "> " << std::flush;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sagekb: knowledge bases, grounded chat, research reports and RAG evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--root", g.root, "Data root (default $SAGEKB_ROOT or ./sagekb-data)");
  app.add_option("--config", g.config, "Provider config JSON (default $SAGEKB_CONFIG)");
  app.add_flag("--mock", g.mock, "Use fixture-backed mock providers");
  app.add_option("--fixtures", g.fixtures, "Fixture directory for --mock")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");

  // kb
  auto* kb_cmd = app.add_subcommand("kb", "Manage knowledge bases");
  kb_cmd->require_subcommand(1);
  std::string kb_name;
  auto* kb_create = kb_cmd->add_subcommand("create", "Create a knowledge base");
  kb_create->add_option("name", kb_name)->required();
  auto* kb_list = kb_cmd->add_subcommand("list", "List knowledge bases");
  bool list_json = false;
  kb_list->add_flag("--json", list_json, "Print JSON");
  std::string kb_target;
  auto* kb_delete = kb_cmd->add_subcommand("delete", "Delete a knowledge base");
  kb_delete->add_option("kb", kb_target, "Id or name")->required();

  // ingest
  std::string kb;
  std::vector<std::string> paths;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest documents, audio or video");
  ingest_cmd->add_option("--kb", kb)->required();
  ingest_cmd->add_option("paths", paths)->required()->check(CLI::ExistingFile);

  // chat
  std::string mode_name = "custom";
  std::string query;
  std::optional<std::size_t> k;
  std::optional<int> depth;
  auto* chat_cmd = app.add_subcommand("chat", "Ask a question, or start a REPL when none is given");
  chat_cmd->add_option("--kb", kb)->required();
  chat_cmd->add_option("--mode", mode_name, "vector, graph or custom")->capture_default_str();
  chat_cmd->add_option("--k", k, "Vector hits");
  chat_cmd->add_option("--depth", depth, "Graph traversal depth");
  chat_cmd->add_option("query", query);

  // report
  ReportJobSpec spec;
  bool arxiv = false;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Generate a research report into a knowledge base");
  report_cmd->add_option("--kb", kb)->required();
  report_cmd->add_option("--question", spec.question)->required();
  report_cmd->add_flag("--arxiv", arxiv, "Search arXiv instead of the web");
  report_cmd->add_option("--queries", spec.n_queries, "Sub-queries")->capture_default_str();
  report_cmd->add_option("--sources", spec.top_m, "Sources kept after merging")->capture_default_str();
  report_cmd->add_option("--out", report_out, "Also write the markdown here");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation suite");
  eval_cmd->require_subcommand(1);
  std::string dataset, manifest, modes = "vector,graph,custom", relevance = "concepts", out_dir;
  std::size_t parallelism = 4;
  auto* eval_run = eval_cmd->add_subcommand("run", "Run the suite and write CSV, JSON and SVG outputs");
  eval_run->add_option("--kb", kb)->required();
  eval_run->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  eval_run->add_option("--manifest", manifest, "Cell-count manifest (default <stem>.manifest.json)");
  eval_run->add_option("--modes", modes)->capture_default_str();
  eval_run->add_option("--relevance", relevance, "concepts or binary")->capture_default_str();
  eval_run->add_option("--parallelism", parallelism)->capture_default_str();
  eval_run->add_option("--out", out_dir)->required();
  std::size_t per_cell = 255;
  std::uint64_t seed = 2024;
  std::string synth_out;
  auto* eval_synth = eval_cmd->add_subcommand("synth", "Write the synthetic dataset and its manifest");
  eval_synth->add_option("--per-cell", per_cell)->capture_default_str();
  eval_synth->add_option("--seed", seed)->capture_default_str();
  eval_synth->add_option("--out", synth_out, "Dataset .jsonl path")->required();
  std::string bundle_path;
  auto* eval_plot = eval_cmd->add_subcommand("plot", "Render bar charts from bundle.json");
  eval_plot->add_option("--bundle", bundle_path)->required()->check(CLI::ExistingFile);
  eval_plot->add_option("--out", out_dir)->required();

  // serve
  std::string addr;
  std::size_t workers = 2;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--addr", addr, "host:port (default $SAGEKB_ADDR or 127.0.0.1:8080)");
  serve_cmd->add_option("--workers", workers, "Background job workers")->capture_default_str();

  // graph
  auto* graph_cmd = app.add_subcommand("graph", "Knowledge graph tools");
  graph_cmd->require_subcommand(1);
  std::string graph_out;
  auto* graph_export = graph_cmd->add_subcommand("export", "Write triples as TSV");
  graph_export->add_option("--kb", kb)->required();
  graph_export->add_option("--out", graph_out, "File (default stdout)");

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "Prompt templates");
  prompts_cmd->require_subcommand(1);
  std::string prompts_out;
  auto* prompts_dump = prompts_cmd->add_subcommand("dump", "Write the built-in templates");
  prompts_dump->add_option("--out", prompts_out)->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);
  spdlog::set_default_logger(spdlog::default_logger()->clone("sagekb"));

  try {
    if (*prompts_dump) {
      PromptLibrary::defaults().write_to(prompts_out);
      return 0;
    }
    if (*eval_synth) {
      const auto queries = synthetic_dataset(per_cell, seed);
      write_text(synth_out, dataset_to_jsonl(queries));
      const fs::path p(synth_out);
      const auto manifest_path = (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
      write_text(manifest_path, manifest_to_json(manifest_for(queries)).dump(2) + "\n");
      std::cout << fmt::format("{} queries -> {} (+ {})\n", queries.size(), synth_out, manifest_path);
      return 0;
    }
    if (*eval_plot) {
      write_plots_from_bundle(nlohmann::json::parse(read_text(bundle_path)), out_dir);
      return 0;
    }

    auto engine = make_engine(g);

    if (*kb_create) {
      const auto created = engine->create_kb(kb_name);
      std::cout << created.kb_id << "\n";
    } else if (*kb_list) {
      const auto all = engine->list_kbs();
      if (list_json) {
        std::cout << nlohmann::json(all).dump(2) << "\n";
      } else {
        for (const auto& s : all) std::cout << fmt::format("{}\t{}\t{} documents\n", s.kb_id, s.name, s.document_count);
      }
    } else if (*kb_delete) {
      engine->delete_kb(kb_target);
    } else if (*ingest_cmd) {
      for (const auto& p : paths) {
        const auto r = engine->ingest_paths(kb, {p}).front();
        std::cout << fmt::format("{}\t{}\t{} chunks\t{} triples{}\n", p, r.doc_id, r.chunk_count, r.triple_count,
                                 r.deduplicated ? "\t(duplicate)" : "");
      }
    } else if (*chat_cmd) {
      const auto mode = retrieval_mode_from_string(mode_name);
      engine->registry().resolve(kb);
      if (query.empty()) {
        repl(*engine, kb, mode, k, depth);
      } else {
        print_answer(engine->chat(kb, query, mode, {}, k, depth));
      }
    } else if (*report_cmd) {
      spec.source_mode = arxiv ? SourceMode::arxiv : SourceMode::web;
      spec.validate();
      const auto out = engine->run_report(kb, spec);
      if (!report_out.empty()) write_text(report_out, out.markdown);
      std::cout << fmt::format("{}\t{} references\tdoc {}\n", out.report_id, out.report.references.size(), out.doc_id);
    } else if (*eval_run) {
      const auto queries = load_dataset(dataset, manifest.empty() ? std::nullopt : std::optional(manifest));
      SuiteOptions options;
      options.parallelism = parallelism;
      const auto result = engine->run_eval(kb, queries, parse_modes(modes), relevance_mode_from_string(relevance),
                                           options, [](std::size_t done, std::size_t total) {
                                             if (done == total || done % 50 == 0) {
                                               std::cerr << fmt::format("\r{}/{}", done, total) << std::flush;
                                             }
                                           });
      std::cerr << "\n";
      write_eval_outputs(result, out_dir);
      std::cout << fmt::format("{} records, {} failed -> {}\n", result.records.size(), result.failed, out_dir);
      if (result.threshold_exceeded) {
        std::cerr << "error: provider_bad_response: failure rate exceeded the suite threshold\n";
        return 1;
      }
    } else if (*serve_cmd) {
      if (addr.empty()) {
        const char* env = std::getenv("SAGEKB_ADDR");
        addr = env && *env ? env : "127.0.0.1:8080";
      }
      spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);
      Service service(*engine, workers);
      service.serve(addr);
    } else if (*graph_export) {
      const auto tsv = engine->open_kb(kb)->snapshot()->graph.export_tsv();
      if (graph_out.empty()) std::cout << tsv;
      else write_text(graph_out, tsv);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << fmt::format("error: {}: {}", api_code(e.code()), e.what());
    if (e.stage()) std::cerr << fmt::format(" (stage: {})", *e.stage());
    std::cerr << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << fmt::format("error: internal: {}\n", e.what());
    return 1;
  }
}
