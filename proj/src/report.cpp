#include "sagekb/report.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"

namespace sagekb {

std::string_view to_string(SourceMode mode) { return mode == SourceMode::web ? "web" : "arxiv"; }

SourceMode source_mode_from_string(std::string_view s) {
  const std::string m = to_lower(trim_view(s));
  if (m == "web" || m.empty()) return SourceMode::web;
  if (m == "arxiv") return SourceMode::arxiv;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown source mode '{}'", s));
}

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::searching: return "searching";
    case JobStatus::scraping: return "scraping";
    case JobStatus::summarizing: return "summarizing";
    case JobStatus::composing: return "composing";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "failed";
}

void ReportJobSpec::validate() const {
  if (trim_view(question).empty()) throw Error(ErrorCode::invalid_argument, "question is empty");
  if (n_queries < 1) throw Error(ErrorCode::invalid_argument, "n_queries must be >= 1");
  if (top_m < 1) throw Error(ErrorCode::invalid_argument, "top_m must be >= 1");
}

ReportJob::ReportJob(std::string job_id, std::string kb_id, ReportJobSpec spec, Clock clock)
    : clock_(std::move(clock)) {
  state_.job_id = std::move(job_id);
  state_.kb_id = std::move(kb_id);
  state_.spec = std::move(spec);
  state_.events.push_back({JobStatus::pending, "queued", to_rfc3339(clock_())});
}

void ReportJob::advance(JobStatus next, std::string detail) {
  std::lock_guard lock(mu_);
  if (state_.status == JobStatus::failed || next <= state_.status || next == JobStatus::failed) {
    throw Error(ErrorCode::internal, fmt::format("illegal job transition {} -> {}",
                                                 to_string(state_.status), to_string(next)));
  }
  state_.status = next;
  state_.events.push_back({next, std::move(detail), to_rfc3339(clock_())});
}

void ReportJob::log(std::string detail) {
  std::lock_guard lock(mu_);
  state_.events.push_back({state_.status, std::move(detail), to_rfc3339(clock_())});
}

void ReportJob::finish(std::string report_id) {
  std::lock_guard lock(mu_);
  state_.report_id = std::move(report_id);
  state_.status = JobStatus::done;
  state_.events.push_back({JobStatus::done, "report saved", to_rfc3339(clock_())});
}

void ReportJob::fail(const Error& e) {
  std::lock_guard lock(mu_);
  if (state_.status == JobStatus::failed) return;
  state_.failed_stage = state_.status == JobStatus::pending ? JobStatus::searching : state_.status;
  state_.status = JobStatus::failed;
  state_.error_code = std::string(api_code(e.code()));
  state_.error_message = e.what();
  state_.events.push_back({JobStatus::failed, e.what(), to_rfc3339(clock_())});
}

ReportJobState ReportJob::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

JobStatus ReportJob::status() const {
  std::lock_guard lock(mu_);
  return state_.status;
}

ReportGenerator::ReportGenerator(ProviderSet providers, PromptLibrary prompts, ReportOptions options,
                                 IngestOptions ingest, Clock clock)
    : providers_(providers),
      prompts_(prompts),
      options_(options),
      ingestor_(std::move(providers), std::move(prompts), ingest, clock),
      clock_(std::move(clock)) {}

std::vector<std::string> ReportGenerator::decompose_question(const std::string& question,
                                                             int n_queries) const {
  if (trim_view(question).empty()) throw Error(ErrorCode::invalid_argument, "question is empty");
  if (n_queries < 1) throw Error(ErrorCode::invalid_argument, "n_queries must be >= 1");
  if (!providers_.chat) throw Error(ErrorCode::invalid_argument, "decomposition needs a chat provider");
  const auto resp = providers_.chat->complete(ChatRequest::single_turn(prompts_.render(
      prompt::kDecompose, {{"n_queries", std::to_string(n_queries)}, {"question", question}})));

  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& q) {
    const std::string clean = collapse_whitespace(q);
    if (clean.empty() || static_cast<int>(out.size()) >= n_queries) return;
    if (seen.insert(to_lower(clean)).second) out.push_back(clean);
  };
  for (const auto& line : split_lines(resp.text)) add(strip_list_marker(line));
  add(question);
  for (int i = 2; static_cast<int>(out.size()) < n_queries; ++i) {
    add(fmt::format("{} (part {})", collapse_whitespace(question), i));
  }
  return out;
}

std::vector<SourceRef> ReportGenerator::gather_sources(const std::vector<std::string>& sub_queries,
                                                       int top_m, SourceMode mode, ReportJob* job) const {
  if (top_m < 1) throw Error(ErrorCode::invalid_argument, "top_m must be >= 1");
  if (sub_queries.empty()) throw Error(ErrorCode::invalid_argument, "no sub-queries to search");
  if (mode == SourceMode::web && !providers_.web_search) {
    throw Error(ErrorCode::unsupported, "no web search provider configured", "searching");
  }
  if (mode == SourceMode::arxiv && !providers_.arxiv) {
    throw Error(ErrorCode::unsupported, "no arXiv provider configured", "searching");
  }

  struct Outcome {
    std::vector<SourceRef> hits;
    std::optional<std::string> error;
  };
  std::vector<Outcome> outcomes(sub_queries.size());
  parallel_for(sub_queries.size(), options_.parallelism, [&](std::size_t i) {
    try {
      if (mode == SourceMode::web) {
        for (auto& h : providers_.web_search->search(sub_queries[i], top_m)) {
          outcomes[i].hits.push_back({h.url, h.title, h.rank, {}});
        }
      } else {
        int rank = 0;
        for (auto& a : providers_.arxiv->search(sub_queries[i], top_m)) {
          outcomes[i].hits.push_back({a.url, a.title, ++rank, a.abstract});
        }
      }
    } catch (const Error& e) {
      outcomes[i].error = e.what();
    }
  });

  std::size_t failures = 0;
  struct Merged {
    SourceRef ref;
    std::size_t first_seen;
  };
  std::vector<Merged> merged;
  std::unordered_map<std::string, std::size_t> by_url;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].error) {
      ++failures;
      if (job) job->log(fmt::format("search failed for \"{}\": {}", sub_queries[i], *outcomes[i].error));
      continue;
    }
    if (job) job->log(fmt::format("\"{}\": {} results", sub_queries[i], outcomes[i].hits.size()));
    for (auto& h : outcomes[i].hits) {
      auto it = by_url.find(h.url_or_id);
      if (it == by_url.end()) {
        by_url.emplace(h.url_or_id, merged.size());
        merged.push_back({std::move(h), merged.size()});
      } else if (h.rank < merged[it->second].ref.rank) {
        merged[it->second].ref.rank = h.rank;
      }
    }
  }
  if (failures == sub_queries.size()) {
    throw Error(ErrorCode::sources_unavailable, "every search request failed", "searching");
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Merged& a, const Merged& b) {
    if (a.ref.rank != b.ref.rank) return a.ref.rank < b.ref.rank;
    return a.first_seen < b.first_seen;
  });
  std::vector<SourceRef> out;
  for (auto& m : merged) {
    if (static_cast<int>(out.size()) >= top_m) break;
    out.push_back(std::move(m.ref));
  }
  return out;
}

std::vector<SourceRef> ReportGenerator::scrape(std::vector<SourceRef> sources, SourceMode mode,
                                               ReportJob& job) const {
  if (mode == SourceMode::web) {
    if (!providers_.fetcher) throw Error(ErrorCode::unsupported, "no fetcher configured", "scraping");
    std::vector<std::optional<std::string>> errors(sources.size());
    parallel_for(sources.size(), options_.parallelism, [&](std::size_t i) {
      try {
        sources[i].text = providers_.fetcher->fetch(sources[i].url_or_id).text;
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (errors[i]) job.log(fmt::format("dropped {}: {}", sources[i].url_or_id, *errors[i]));
    }
  }
  std::vector<SourceRef> kept;
  for (auto& s : sources) {
    if (trim_view(s.text).empty()) {
      if (mode == SourceMode::arxiv) job.log(fmt::format("dropped {}: empty abstract", s.url_or_id));
      continue;
    }
    job.log(fmt::format("fetched {} ({} chars)", s.url_or_id, s.text.size()));
    kept.push_back(std::move(s));
  }
  if (kept.empty()) throw Error(ErrorCode::sources_unavailable, "no source could be fetched", "scraping");
  return kept;
}

SourceSummary ReportGenerator::summarize_source(const SourceRef& source, const std::string& question) const {
  if (trim_view(source.text).empty()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("source {} has no text", source.url_or_id));
  }
  if (!providers_.chat) throw Error(ErrorCode::invalid_argument, "summarization needs a chat provider");
  const auto resp = providers_.chat->complete(ChatRequest::single_turn(
      prompts_.render(prompt::kSummarize, {{"max_words", std::to_string(options_.summary_max_words)},
                                           {"question", question},
                                           {"title", source.title},
                                           {"text", source.text}})));
  std::string summary = trim(resp.text);
  if (summary.size() > options_.summary_max_chars) {
    summary.resize(utf8_floor(summary, options_.summary_max_chars));
  }
  if (summary.empty()) {
    throw Error(ErrorCode::provider_bad_response, fmt::format("empty summary for {}", source.url_or_id));
  }
  return {source.url_or_id, source.title, std::move(summary), source.text.size()};
}

namespace {

std::string numbered_summaries(const std::vector<SourceSummary>& summaries) {
  std::string out;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    out += fmt::format("[{}] {} ({})\n{}\n\n", i + 1, summaries[i].title, summaries[i].url_or_id,
                       summaries[i].summary);
  }
  return out;
}

bool is_heading(std::string_view line, std::string_view name) {
  return to_lower(collapse_whitespace(line)) == name;
}

}  // namespace

ResearchReport ReportGenerator::compose_report(const std::string& question,
                                               const std::vector<SourceSummary>& summaries) const {
  if (summaries.empty()) throw Error(ErrorCode::invalid_argument, "cannot compose a report from zero summaries");
  if (!providers_.chat) throw Error(ErrorCode::invalid_argument, "composition needs a chat provider");
  const std::string listing = numbered_summaries(summaries);

  const auto outline_resp = providers_.chat->complete(ChatRequest::single_turn(
      prompts_.render(prompt::kComposeOutline, {{"question", question}, {"summaries", listing}})));
  std::string title;
  std::vector<std::string> outline;
  for (const auto& raw : split_lines(outline_resp.text)) {
    const std::string line = trim(raw);
    if (line.starts_with("TITLE:")) {
      if (title.empty()) title = collapse_whitespace(line.substr(6));
    } else if (line.starts_with("SECTION:")) {
      std::string h = collapse_whitespace(line.substr(8));
      if (!h.empty()) outline.push_back(std::move(h));
    }
  }
  if (title.empty()) title = collapse_whitespace(question);
  if (outline.empty()) outline.push_back("Findings");

  std::string outline_text;
  for (const auto& h : outline) outline_text += "- " + h + "\n";
  const auto final_resp = providers_.chat->complete(ChatRequest::single_turn(
      prompts_.render(prompt::kComposeFinal, {{"question", question},
                                              {"title", title},
                                              {"outline", outline_text},
                                              {"summaries", listing}})));

  ResearchReport report;
  report.question = question;
  report.title = title;
  std::optional<ReportSection> current;
  bool in_conclusion = false;
  bool in_references = false;
  std::vector<std::string> preamble;
  std::vector<std::string> conclusion;
  auto close_section = [&] {
    if (current) {
      current->body = trim(current->body);
      report.sections.push_back(std::move(*current));
      current.reset();
    }
  };
  for (const auto& line : split_lines(final_resp.text)) {
    const std::string_view t = trim_view(line);
    if (t.starts_with("## ")) {
      close_section();
      const std::string heading = collapse_whitespace(t.substr(3));
      in_conclusion = is_heading(heading, "conclusion");
      in_references = is_heading(heading, "references");
      if (!in_conclusion && !in_references) current = ReportSection{heading, {}};
      continue;
    }
    if (t.starts_with("# ")) continue;  // stray title line
    if (in_references) continue;
    if (in_conclusion) conclusion.push_back(line);
    else if (current) current->body += line + "\n";
    else preamble.push_back(line);
  }
  close_section();
  report.conclusion = trim(join(conclusion, "\n"));
  if (report.sections.empty()) {
    const std::string body = trim(join(preamble, "\n"));
    if (body.empty()) throw Error(ErrorCode::provider_bad_response, "report draft has no sections");
    report.sections.push_back({outline.front(), body});
  }
  for (const auto& s : summaries) report.references.push_back(s.url_or_id);
  return report;
}

std::string make_report_id(const std::string& kb_id, const ReportJobSpec& spec) {
  const std::string key = fmt::format("{}\x1f{}\x1f{}\x1f{}\x1f{}", kb_id, collapse_whitespace(spec.question),
                                      spec.n_queries, spec.top_m, to_string(spec.source_mode));
  return "rpt-" + sha256_hex(key).substr(0, 16);
}

std::string render_markdown(const ResearchReport& report, const std::vector<SourceSummary>& sources) {
  std::string md = fmt::format("# {}\n\n", report.title);
  for (const auto& s : report.sections) md += fmt::format("## {}\n\n{}\n\n", s.heading, s.body);
  md += fmt::format("## Conclusion\n\n{}\n\n", report.conclusion);
  md += "## References\n\n";
  for (std::size_t i = 0; i < report.references.size(); ++i) {
    const std::string& ref = report.references[i];
    std::string title;
    for (const auto& s : sources) {
      if (s.url_or_id == ref) title = s.title;
    }
    if (title.empty()) md += fmt::format("{}. <{}>\n", i + 1, ref);
    else md += fmt::format("{}. [{}]({})\n", i + 1, title, ref);
  }
  return md;
}

ReportOutcome ReportGenerator::run(KbStore& kb, const ReportJobSpec& spec, ReportJob* job_ptr) const {
  spec.validate();
  const auto snap = kb.snapshot();
  const std::string kb_id = snap->kb.kb_id;
  ReportJob local(make_report_id(kb_id, spec), kb_id, spec, clock_);
  ReportJob& job = job_ptr ? *job_ptr : local;

  try {
    job.advance(JobStatus::searching, "decomposing question");
    const auto sub_queries = decompose_question(spec.question, spec.n_queries);
    for (const auto& q : sub_queries) job.log("sub-query: " + q);
    auto sources = gather_sources(sub_queries, spec.top_m, spec.source_mode, &job);
    if (sources.empty()) throw Error(ErrorCode::sources_unavailable, "searches returned no sources", "searching");

    job.advance(JobStatus::scraping, fmt::format("{} sources", sources.size()));
    sources = scrape(std::move(sources), spec.source_mode, job);

    job.advance(JobStatus::summarizing, fmt::format("{} sources", sources.size()));
    std::vector<std::optional<SourceSummary>> partial(sources.size());
    std::vector<std::optional<std::string>> errors(sources.size());
    parallel_for(sources.size(), options_.parallelism, [&](std::size_t i) {
      try {
        partial[i] = summarize_source(sources[i], spec.question);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    std::vector<SourceSummary> summaries;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (partial[i]) summaries.push_back(std::move(*partial[i]));
      else job.log(fmt::format("dropped {}: {}", sources[i].url_or_id, *errors[i]));
    }
    if (summaries.empty()) throw Error(ErrorCode::sources_unavailable, "every summary failed", "summarizing");

    job.advance(JobStatus::composing, fmt::format("{} summaries", summaries.size()));
    ResearchReport report = compose_report(spec.question, summaries);
    report.report_id = make_report_id(kb_id, spec);
    report.created_at = to_rfc3339(clock_());
    const std::string markdown = render_markdown(report, summaries);

    PreparedDocument doc = ingestor_.prepare(
        kb_id, markdown, report.report_id + ".md", MediaKind::report,
        {{"report_id", report.report_id}, {"question", collapse_whitespace(spec.question)}});
    WriteBatch batch;
    batch.report = WriteBatch::Report{
        ReportEntry{report.report_id, doc.document.doc_id, report.title, report.question, report.created_at},
        markdown};
    batch.documents.push_back(std::move(doc));
    const auto outcome = kb.commit(batch);

    job.finish(report.report_id);
    spdlog::info("report {} saved to {}", report.report_id, kb_id);
    return {report.report_id, markdown, outcome.front().doc_id, std::move(report), std::move(summaries)};
  } catch (const Error& e) {
    const std::string stage(to_string(job.status()));
    job.fail(e);
    throw Error(e.code(), e.what(), stage);
  }
}

void to_json(nlohmann::json& j, const ProgressEvent& e) {
  j = {{"stage", to_string(e.stage)}, {"detail", e.detail}, {"timestamp", e.timestamp}};
}

void to_json(nlohmann::json& j, const ReportJobSpec& s) {
  j = {{"question", s.question},
       {"n_queries", s.n_queries},
       {"top_m", s.top_m},
       {"source_mode", to_string(s.source_mode)}};
}

void to_json(nlohmann::json& j, const ReportJobState& s) {
  j = {{"job_id", s.job_id},
       {"kb_id", s.kb_id},
       {"spec", s.spec},
       {"status", to_string(s.status)},
       {"events", s.events}};
  j["failed_stage"] = s.failed_stage ? nlohmann::json(to_string(*s.failed_stage)) : nlohmann::json(nullptr);
  j["report_id"] = s.report_id ? nlohmann::json(*s.report_id) : nlohmann::json(nullptr);
  if (s.error_code) {
    j["error"] = {{"code", *s.error_code}, {"message", s.error_message.value_or("")}};
  } else {
    j["error"] = nullptr;
  }
}

}  // namespace sagekb
