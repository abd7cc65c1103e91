#include "sagekb/graph_index.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

std::string normalize_entity(std::string_view s) { return to_lower(collapse_whitespace(s)); }

EntityMention make_mention(std::string_view surface) {
  return {collapse_whitespace(surface), normalize_entity(surface)};
}

namespace {

std::string triple_key(const Triple& t) {
  return fmt::format("{}\x1f{}\x1f{}\x1f{}", t.subject, t.predicate, t.object, t.source_chunk_id);
}

Triple trimmed(const Triple& t) {
  return {trim(t.subject), trim(t.predicate), trim(t.object), t.source_chunk_id};
}

}  // namespace

std::size_t GraphIndex::add_triples(std::span<const Triple> triples,
                                    const std::function<bool(const std::string&)>& chunk_exists) {
  for (const Triple& t : triples) {
    validate_triple(t);
    if (!chunk_exists(t.source_chunk_id)) {
      throw Error(ErrorCode::dangling_provenance,
                  fmt::format("triple references unknown chunk '{}'", t.source_chunk_id));
    }
  }
  std::size_t added = 0;
  for (const Triple& raw : triples) {
    Triple t = trimmed(raw);
    if (!keys_.insert(triple_key(t)).second) continue;
    const std::size_t idx = triples_.size();
    const std::string subj = normalize_entity(t.subject);
    const std::string obj = normalize_entity(t.object);
    by_entity_[subj].push_back(idx);
    if (obj != subj) by_entity_[obj].push_back(idx);
    triples_.push_back(std::move(t));
    ++added;
  }
  return added;
}

GraphRetrieval GraphIndex::retrieve(std::span<const EntityMention> entities, int depth,
                                    std::size_t cap) const {
  if (depth < 1) throw Error(ErrorCode::invalid_argument, "depth must be >= 1");
  GraphRetrieval out;

  std::unordered_set<std::string> visited;
  std::vector<std::string> frontier;
  for (const auto& e : entities) {
    const std::string key = e.normalized.empty() ? normalize_entity(e.surface) : e.normalized;
    if (key.empty() || !visited.insert(key).second) continue;
    if (by_entity_.count(key)) {
      out.matched_entities.push_back({e.surface, key});
      frontier.push_back(key);
    }
  }

  std::vector<bool> included(triples_.size(), false);
  std::unordered_set<std::string> seen_chunks;
  for (int hop = 1; hop <= depth && !frontier.empty() && out.triples.size() < cap; ++hop) {
    std::vector<std::size_t> layer;
    for (const auto& ent : frontier) {
      for (std::size_t idx : by_entity_.at(ent)) {
        if (!included[idx]) {
          included[idx] = true;
          layer.push_back(idx);
        }
      }
    }
    std::sort(layer.begin(), layer.end());
    std::vector<std::string> next;
    for (std::size_t idx : layer) {
      if (out.triples.size() >= cap) break;
      const Triple& t = triples_[idx];
      out.triples.push_back(t);
      if (seen_chunks.insert(t.source_chunk_id).second) out.source_chunks.push_back(t.source_chunk_id);
      for (const std::string& ent : {normalize_entity(t.subject), normalize_entity(t.object)}) {
        if (visited.insert(ent).second) next.push_back(ent);
      }
    }
    frontier = std::move(next);
  }
  return out;
}

std::string GraphIndex::export_tsv() const {
  std::string out;
  auto clean = [](const std::string& s) {
    std::string c = s;
    std::replace(c.begin(), c.end(), '\t', ' ');
    std::replace(c.begin(), c.end(), '\n', ' ');
    return c;
  };
  for (const Triple& t : triples_) {
    out += fmt::format("{}\t{}\t{}\t{}\n", clean(t.subject), clean(t.predicate), clean(t.object),
                       t.source_chunk_id);
  }
  return out;
}

ExtractionResult parse_triple_lines(std::string_view text, const std::string& source_chunk_id,
                                    std::size_t max_triples) {
  ExtractionResult result;
  for (const std::string& raw : split_lines(text)) {
    std::string line = strip_list_marker(raw);
    if (line.empty() || to_lower(line) == "none") continue;
    const auto open = line.find('(');
    const auto close = line.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close <= open) {
      ++result.skipped_lines;
      continue;
    }
    const std::string inner = line.substr(open + 1, close - open - 1);
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
      const auto bar = inner.find('|', start);
      parts.push_back(trim(inner.substr(start, bar == std::string::npos ? std::string::npos : bar - start)));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    if (parts.size() != 3 ||
        std::any_of(parts.begin(), parts.end(), [](const std::string& p) { return p.empty(); })) {
      ++result.skipped_lines;
      continue;
    }
    if (result.triples.size() < max_triples) {
      result.triples.push_back({parts[0], parts[1], parts[2], source_chunk_id});
    }
  }
  return result;
}

ExtractionResult extract_triples(ChatProvider& chat, const PromptLibrary& prompts,
                                 const Chunk& chunk, std::size_t max_triples) {
  const std::string prompt = prompts.render(
      prompt::kExtractTriples, {{"max_triples", std::to_string(max_triples)}, {"text", chunk.text}});
  auto req = ChatRequest::single_turn(prompt);
  const auto resp = chat.complete(req);
  ExtractionResult result = parse_triple_lines(resp.text, chunk.chunk_id, max_triples);
  if (result.skipped_lines > 0) {
    spdlog::debug("chunk {}: skipped {} unparseable triple lines", chunk.chunk_id,
                  result.skipped_lines);
  }
  return result;
}

namespace {

constexpr std::array<std::string_view, 9> kConnectors = {"of", "the", "and", "de", "von",
                                                         "van", "for", "la", "du"};

constexpr auto kLeadingStopwords = std::to_array<std::string_view>({
    "what", "which", "who", "whom", "whose", "when", "where", "why", "how", "the",
    "a", "an", "in", "on", "at", "is", "are", "was", "were", "do",
    "does", "did", "can", "could", "should", "would", "will", "analyze", "analyse", "evaluate",
    "describe", "explain", "compare", "list", "tell", "give", "summarize", "discuss", "name", "i",
    "he", "she", "it", "they", "we", "you", "his", "her", "its", "their", "this", "that", "these", "those"});

bool is_connector(std::string_view w) {
  return std::find(kConnectors.begin(), kConnectors.end(), to_lower(w)) != kConnectors.end();
}

bool is_leading_stopword(std::string_view w) {
  return std::find(kLeadingStopwords.begin(), kLeadingStopwords.end(), to_lower(w)) !=
         kLeadingStopwords.end();
}

bool is_capitalized(std::string_view w) {
  return !w.empty() && std::isupper(static_cast<unsigned char>(w[0]));
}

struct Word {
  std::string text;
  bool breaks_after = false;  // punctuation ended the word
};

std::vector<Word> words_of(std::string_view query) {
  std::vector<Word> out;
  for (std::string tok : split_whitespace(query)) {
    bool brk = false;
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back())) && tok.back() != '.') {
      brk = true;
      tok.pop_back();
    }
    while (!tok.empty() && tok.back() == '.') {
      brk = true;
      tok.pop_back();
    }
    while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.front()))) tok.erase(0, 1);
    if (tok.size() > 2 && (tok.ends_with("'s") || tok.ends_with("’s"))) {
      tok.resize(tok.size() - (tok.ends_with("'s") ? 2 : 4));
    }
    if (!tok.empty()) out.push_back({tok, brk});
    else if (brk && !out.empty()) out.back().breaks_after = true;
  }
  return out;
}

void push_unique(std::vector<EntityMention>& out, std::string_view surface) {
  EntityMention m = make_mention(surface);
  if (m.normalized.empty()) return;
  for (const auto& e : out) {
    if (e.normalized == m.normalized) return;
  }
  out.push_back(std::move(m));
}

}  // namespace

std::vector<EntityMention> rule_based_entities(std::string_view query) {
  std::vector<EntityMention> out;

  // Quoted spans first.
  for (std::size_t i = 0; i < query.size(); ++i) {
    if (query[i] != '"') continue;
    const auto close = query.find('"', i + 1);
    if (close == std::string_view::npos) break;
    push_unique(out, trim_view(query.substr(i + 1, close - i - 1)));
    i = close;
  }

  const std::vector<Word> words = words_of(query);
  std::size_t i = 0;
  while (i < words.size()) {
    if (!is_capitalized(words[i].text)) {
      ++i;
      continue;
    }
    std::vector<std::string> span{words[i].text};
    bool brk = words[i].breaks_after;
    std::size_t j = i + 1;
    while (!brk && j < words.size()) {
      if (is_capitalized(words[j].text)) {
        span.push_back(words[j].text);
        brk = words[j].breaks_after;
        ++j;
        continue;
      }
      // Connector words join two capitalized runs: "Siege of Vicksburg".
      std::size_t k = j;
      while (k < words.size() && is_connector(words[k].text) && !words[k].breaks_after) ++k;
      if (k > j && k < words.size() && is_capitalized(words[k].text)) {
        for (std::size_t m = j; m <= k; ++m) span.push_back(words[m].text);
        brk = words[k].breaks_after;
        j = k + 1;
        continue;
      }
      break;
    }
    while (!span.empty() && is_leading_stopword(span.front())) span.erase(span.begin());
    while (!span.empty() && is_connector(span.front())) span.erase(span.begin());
    if (!span.empty()) push_unique(out, join(span, " "));
    i = j;
  }
  return out;
}

std::vector<EntityMention> extract_query_entities(ChatProvider* chat, const PromptLibrary& prompts,
                                                  std::string_view query) {
  if (trim_view(query).empty()) return {};
  if (chat == nullptr) return rule_based_entities(query);
  try {
    const auto resp = chat->complete(
        ChatRequest::single_turn(prompts.render(prompt::kQueryEntities, {{"query", std::string(query)}})));
    std::vector<EntityMention> out;
    for (const auto& line : split_lines(resp.text)) {
      std::string s = strip_list_marker(line);
      if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
      push_unique(out, s);
    }
    return out;
  } catch (const Error& e) {
    spdlog::debug("entity extraction fell back to rules: {}", e.what());
    return rule_based_entities(query);
  }
}

}  // namespace sagekb
