#include "sagekb/rag.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "sagekb/error.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

std::string_view to_string(RetrievalMode mode) {
  switch (mode) {
    case RetrievalMode::vector: return "vector";
    case RetrievalMode::graph: return "graph";
    case RetrievalMode::custom: return "custom";
  }
  return "custom";
}

RetrievalMode retrieval_mode_from_string(std::string_view s) {
  const std::string m = to_lower(trim_view(s));
  if (m == "vector") return RetrievalMode::vector;
  if (m == "graph" || m == "kg") return RetrievalMode::graph;
  if (m == "custom" || m == "hybrid") return RetrievalMode::custom;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown retrieval mode '{}'", s));
}

std::vector<RetrievalMode> parse_modes(std::string_view csv) {
  std::vector<RetrievalMode> modes;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto part = trim_view(csv.substr(start, comma == std::string_view::npos ? csv.npos : comma - start));
    if (!part.empty()) {
      const auto m = retrieval_mode_from_string(part);
      if (std::find(modes.begin(), modes.end(), m) == modes.end()) modes.push_back(m);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (modes.empty()) throw Error(ErrorCode::invalid_argument, "no retrieval modes given");
  return modes;
}

std::string_view to_string(ContextOrigin origin) {
  return origin == ContextOrigin::vector ? "vector" : "graph";
}

std::string ContextBundle::digest() const {
  std::string buf;
  for (const auto& e : entries) {
    buf += e.chunk_id;
    buf += '\x1f';
    buf += e.text;
    buf += '\x1e';
  }
  buf += '\x1d';
  for (const auto& t : triples) {
    buf += fmt::format("{}\x1f{}\x1f{}\x1f{}\x1e", t.subject, t.predicate, t.object, t.source_chunk_id);
  }
  return sha256_hex(buf);
}

void apply_context_budget(ContextBundle& bundle, std::size_t budget) {
  std::size_t total = 0;
  for (const auto& e : bundle.entries) total += e.text.size();
  auto drop_from_back = [&](ContextOrigin origin) {
    for (std::size_t i = bundle.entries.size(); i-- > 0 && total > budget && bundle.entries.size() > 1;) {
      if (bundle.entries[i].origin != origin) continue;
      total -= bundle.entries[i].text.size();
      bundle.entries.erase(bundle.entries.begin() + static_cast<std::ptrdiff_t>(i));
    }
  };
  if (total <= budget) return;
  drop_from_back(ContextOrigin::graph);
  drop_from_back(ContextOrigin::vector);
  std::unordered_set<std::string> kept;
  for (const auto& e : bundle.entries) kept.insert(e.chunk_id);
  std::erase_if(bundle.triples, [&](const Triple& t) { return !kept.count(t.source_chunk_id); });
}

RagEngine::RagEngine(ProviderSet providers, PromptLibrary prompts, RagOptions options)
    : providers_(std::move(providers)), prompts_(std::move(prompts)), options_(options) {
  if (options_.k == 0) throw Error(ErrorCode::invalid_argument, "k must be >= 1");
}

namespace {

ContextEntry entry_for(const KbSnapshot& kb, const std::string& chunk_id, ContextOrigin origin,
                       std::optional<double> score) {
  const Chunk* c = kb.find_chunk(chunk_id);
  if (!c) throw Error(ErrorCode::corrupted_store, fmt::format("index references unknown chunk {}", chunk_id));
  const Document* d = kb.find_document(c->doc_id);
  return {c->chunk_id, c->doc_id, d ? d->source_name : std::string{}, c->text, origin, score};
}

}  // namespace

ContextBundle RagEngine::retrieve_vector(const KbSnapshot& kb, std::string_view query,
                                         std::size_t k) const {
  ContextBundle bundle;
  if (kb.vectors.size() == 0) return bundle;
  if (!providers_.embedder) throw Error(ErrorCode::invalid_argument, "vector retrieval needs an embedding provider");
  Embedding q;
  try {
    q = providers_.embedder->embed_one(std::string(query));
  } catch (const Error& e) {
    throw e.with_stage("embed");
  }
  for (const ScoredChunk& s : kb.vectors.search(q, k)) {
    bundle.entries.push_back(entry_for(kb, s.chunk_id, ContextOrigin::vector, s.score));
  }
  return bundle;
}

ContextBundle RagEngine::retrieve_graph(const KbSnapshot& kb, std::string_view query, int depth) const {
  ContextBundle bundle;
  if (depth < 1 || depth > options_.graph.max_depth) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("depth must be between 1 and {}", options_.graph.max_depth));
  }
  if (kb.graph.size() == 0) return bundle;
  const auto entities = extract_query_entities(providers_.chat.get(), prompts_, query);
  GraphRetrieval g = kb.graph.retrieve(entities, depth, options_.graph.max_triples_per_query);
  for (const auto& chunk_id : g.source_chunks) {
    bundle.entries.push_back(entry_for(kb, chunk_id, ContextOrigin::graph, std::nullopt));
  }
  bundle.triples = std::move(g.triples);
  return bundle;
}

ContextBundle RagEngine::retrieve(const KbSnapshot& kb, std::string_view query, RetrievalMode mode,
                                  std::optional<std::size_t> k, std::optional<int> depth) const {
  if (trim_view(query).empty()) throw Error(ErrorCode::invalid_argument, "query is empty");
  const std::size_t kk = k.value_or(options_.k);
  const int dd = depth.value_or(options_.depth);
  if (kk == 0) throw Error(ErrorCode::invalid_argument, "k must be >= 1");

  ContextBundle bundle;
  switch (mode) {
    case RetrievalMode::vector:
      bundle = retrieve_vector(kb, query, kk);
      break;
    case RetrievalMode::graph:
      bundle = retrieve_graph(kb, query, dd);
      break;
    case RetrievalMode::custom: {
      bundle = retrieve_vector(kb, query, kk);
      ContextBundle g = retrieve_graph(kb, query, dd);
      std::unordered_set<std::string> seen;
      for (const auto& e : bundle.entries) seen.insert(e.chunk_id);
      for (auto& e : g.entries) {
        if (seen.insert(e.chunk_id).second) bundle.entries.push_back(std::move(e));
      }
      bundle.triples = std::move(g.triples);
      break;
    }
  }
  apply_context_budget(bundle, options_.context_char_budget);
  return bundle;
}

std::string RagEngine::synthesis_prompt(std::string_view query, const ContextBundle& bundle) const {
  std::unordered_map<std::string, std::size_t> number;
  std::string contexts;
  for (std::size_t i = 0; i < bundle.entries.size(); ++i) {
    number[bundle.entries[i].chunk_id] = i + 1;
    contexts += fmt::format("[{}] {}\n", i + 1, bundle.entries[i].text);
  }
  std::string facts;
  if (!bundle.triples.empty()) {
    facts = "\nFacts:\n";
    for (const auto& t : bundle.triples) {
      auto it = number.find(t.source_chunk_id);
      if (it != number.end()) {
        facts += fmt::format("{} | {} | {} (from [{}])\n", t.subject, t.predicate, t.object, it->second);
      } else {
        facts += fmt::format("{} | {} | {}\n", t.subject, t.predicate, t.object);
      }
    }
  }
  return prompts_.render(prompt::kSynthesize,
                         {{"contexts", contexts}, {"facts", facts}, {"query", std::string(query)}});
}

AnswerWithReferences RagEngine::synthesize(std::string_view query, ContextBundle bundle,
                                           RetrievalMode mode) const {
  AnswerWithReferences out;
  out.mode = mode;
  out.standalone_query = std::string(query);
  if (bundle.empty()) {
    out.answer = std::string(kNoContextAnswer);
    out.no_context = true;
    out.context = std::move(bundle);
    return out;
  }
  if (!providers_.chat) throw Error(ErrorCode::invalid_argument, "answer synthesis needs a chat provider");
  try {
    out.answer = providers_.chat->complete(ChatRequest::single_turn(synthesis_prompt(query, bundle))).text;
  } catch (const Error& e) {
    throw e.with_stage("synthesize");
  }
  std::unordered_set<std::string> seen;
  for (const auto& e : bundle.entries) {
    if (seen.insert(e.doc_id + '\x1f' + e.chunk_id).second) {
      out.references.push_back({e.doc_id, e.source_name, e.chunk_id});
    }
  }
  out.context = std::move(bundle);
  return out;
}

std::string RagEngine::condense(std::string_view query, const std::vector<ChatMessage>& history) const {
  if (history.empty()) return std::string(query);
  if (!providers_.chat) {
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
      if (it->role == Role::user) return collapse_whitespace(it->content + " " + std::string(query));
    }
    return std::string(query);
  }
  std::string transcript;
  for (const auto& m : history) {
    if (m.role == Role::system) continue;
    transcript += fmt::format("{}: {}\n", m.role == Role::user ? "User" : "Assistant", m.content);
  }
  std::string rewritten;
  try {
    rewritten = providers_.chat
                    ->complete(ChatRequest::single_turn(prompts_.render(
                        prompt::kCondense, {{"history", transcript}, {"query", std::string(query)}})))
                    .text;
  } catch (const Error& e) {
    throw e.with_stage("condense");
  }
  const auto lines = split_lines(trim(rewritten));
  const std::string first = lines.empty() ? std::string{} : collapse_whitespace(lines.front());
  return first.empty() ? std::string(query) : first;
}

AnswerWithReferences RagEngine::chat(const KbSnapshot& kb, RetrievalMode mode, std::string_view query,
                                     const std::vector<ChatMessage>& history,
                                     std::optional<std::size_t> k, std::optional<int> depth) const {
  if (trim_view(query).empty()) throw Error(ErrorCode::invalid_argument, "query is empty");
  const std::string standalone = condense(query, history);
  ContextBundle bundle = retrieve(kb, standalone, mode, k, depth);
  return synthesize(standalone, std::move(bundle), mode);
}

void to_json(nlohmann::json& j, const ContextEntry& e) {
  j = {{"chunk_id", e.chunk_id},
       {"doc_id", e.doc_id},
       {"source_name", e.source_name},
       {"text", e.text},
       {"origin", to_string(e.origin)}};
  j["score"] = e.score ? nlohmann::json(*e.score) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const ContextBundle& b) {
  j = {{"entries", b.entries}, {"triples", b.triples}};
}

void to_json(nlohmann::json& j, const Reference& r) {
  j = {{"doc_id", r.doc_id}, {"source_name", r.source_name}, {"chunk_id", r.chunk_id}};
}

void to_json(nlohmann::json& j, const AnswerWithReferences& a) {
  j = {{"answer", a.answer},
       {"references", a.references},
       {"mode", to_string(a.mode)},
       {"context", a.context},
       {"no_context", a.no_context},
       {"standalone_query", a.standalone_query}};
}

std::vector<ChatMessage> history_from_json(const nlohmann::json& j) {
  std::vector<ChatMessage> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw Error(ErrorCode::invalid_argument, "history must be an array");
  for (const auto& m : j) {
    if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["content"].is_string() ||
        !m["role"].is_string()) {
      throw Error(ErrorCode::invalid_argument, "history items need string 'role' and 'content'");
    }
    out.push_back({role_from_string(m["role"].get<std::string>()), m["content"].get<std::string>()});
  }
  return out;
}

}  // namespace sagekb
