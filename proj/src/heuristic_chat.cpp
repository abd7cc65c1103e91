#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "sagekb/graph_index.hpp"
#include "sagekb/mock_providers.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

namespace {

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> kWords = {
      "about", "after", "also", "among", "been", "before", "being", "between", "both", "could",
      "does", "doing", "during", "each", "from", "have", "having", "into", "just", "more",
      "most", "much", "only", "other", "over", "same", "some", "such", "than", "that",
      "their", "them", "then", "there", "these", "they", "this", "those", "through", "under",
      "very", "what", "when", "where", "which", "while", "whom", "whose", "will", "with",
      "would", "your", "were", "was", "who", "how", "why", "did", "the", "and",
  };
  return kWords;
}

std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 3 && !stopwords().contains(cur)) out.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::set<std::string> word_set(std::string_view text) {
  const auto words = content_words(text);
  return {words.begin(), words.end()};
}

std::size_t overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& w : a) n += b.count(w);
  return n;
}

// Text after `start` up to `end` (or the end of the prompt). Empty when
// `start` is absent.
std::string between(std::string_view prompt, std::string_view start, std::string_view end = {}) {
  const auto a = prompt.find(start);
  if (a == std::string_view::npos) return {};
  const auto from = a + start.size();
  auto b = end.empty() ? std::string_view::npos : prompt.find(end, from);
  return trim(prompt.substr(from, b == std::string_view::npos ? std::string_view::npos : b - from));
}

std::string line_after(std::string_view prompt, std::string_view label) {
  return between(prompt, label, "\n");
}

int int_between(std::string_view prompt, std::string_view start, std::string_view end, int fallback) {
  const std::string s = between(prompt, start, end);
  try {
    return s.empty() ? fallback : std::stoi(s);
  } catch (const std::exception&) {
    return fallback;
  }
}

std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::string s = collapse_whitespace(cur);
    if (!s.empty()) out.push_back(std::move(s));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur.push_back(c);
    const bool terminal = c == '.' || c == '!' || c == '?';
    if (terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) flush();
  }
  flush();
  return out;
}

std::string strip_citations(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '[') {
      const auto close = s.find(']', i);
      if (close != std::string_view::npos &&
          std::all_of(s.begin() + i + 1, s.begin() + close, [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        while (!out.empty() && out.back() == ' ') out.pop_back();
        i = close;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return collapse_whitespace(out);
}

std::string strip_punct(std::string s) {
  while (!s.empty() && std::string_view(",;:.!?()\"").find(s.back()) != std::string_view::npos) s.pop_back();
  while (!s.empty() && std::string_view("(\"").find(s.front()) != std::string_view::npos) s.erase(s.begin());
  return s;
}

bool starts_lower(std::string_view w) {
  return !w.empty() && std::islower(static_cast<unsigned char>(w.front()));
}

std::string triples_response(std::string_view prompt) {
  const int max_triples = int_between(prompt, "Extract up to ", " ", 10);
  const std::string text = between(prompt, "Text:\n");
  std::string out;
  int emitted = 0;
  for (const auto& sentence : sentences(text)) {
    if (emitted >= max_triples) break;
    const auto entities = rule_based_entities(sentence);
    if (entities.empty()) continue;
    const std::string& subject = entities.front().surface;
    const auto at = sentence.find(subject);
    if (at == std::string::npos || subject.find('|') != std::string::npos) continue;
    const auto words = split_whitespace(std::string_view(sentence).substr(at + subject.size()));

    std::vector<std::string> predicate;
    std::size_t i = 0;
    for (; i < words.size() && predicate.size() < 4; ++i) {
      const std::string w = strip_punct(words[i]);
      if (!starts_lower(w) || w.find('|') != std::string::npos) break;
      predicate.push_back(w);
      if (w != words[i]) {
        ++i;
        break;
      }
    }
    std::vector<std::string> object;
    for (; i < words.size() && object.size() < 8; ++i) {
      const std::string w = strip_punct(words[i]);
      if (w.empty() || w.find('|') != std::string::npos) break;
      object.push_back(w);
      if (w.size() != words[i].size() && words[i].back() != ')' && words[i].back() != '"') break;
    }
    if (object.empty() && predicate.size() >= 2) {
      object.push_back(predicate.back());
      predicate.pop_back();
    }
    if (predicate.empty() || object.empty()) continue;
    out += fmt::format("({} | {} | {})\n", subject, join(predicate, " "), join(object, " "));
    ++emitted;
  }
  return out.empty() ? "NONE" : out;
}

std::string entities_response(std::string_view prompt) {
  const std::string question = line_after(prompt, "Question: ");
  std::vector<std::string> lines;
  for (const auto& e : rule_based_entities(question)) lines.push_back(e.surface);
  if (lines.empty()) {
    for (const auto& w : content_words(question)) {
      if (std::find(lines.begin(), lines.end(), w) == lines.end()) lines.push_back(w);
      if (lines.size() == 3) break;
    }
  }
  return join(lines, "\n");
}

struct Passage {
  int number = 0;
  std::string text;
};

std::vector<Passage> numbered_passages(std::string_view block) {
  std::vector<Passage> out;
  for (const auto& line : split_lines(block)) {
    if (line.size() < 3 || line.front() != '[') continue;
    const auto close = line.find(']');
    if (close == std::string::npos) continue;
    try {
      out.push_back({std::stoi(line.substr(1, close - 1)), trim(line.substr(close + 1))});
    } catch (const std::exception&) {
    }
  }
  return out;
}

std::string synthesize_response(std::string_view prompt) {
  const auto q_at = prompt.rfind("\nQuestion: ");
  const std::string query = q_at == std::string_view::npos ? std::string{}
                                                           : between(prompt.substr(q_at), "Question: ", "\n");
  std::string context = between(prompt, "Context:\n");
  const auto facts_at = context.find("\nFacts:\n");
  const auto cut = facts_at != std::string::npos ? facts_at : context.rfind("\nQuestion: ");
  if (cut != std::string::npos) context.resize(cut);
  const auto passages = numbered_passages(context);
  if (passages.empty()) return "I could not find the answer in the provided context.";

  const auto qwords = word_set(query);
  struct Candidate {
    std::size_t score;
    std::size_t order;
    int number;
    std::string sentence;
  };
  std::vector<Candidate> candidates;
  for (const auto& p : passages) {
    for (const auto& s : sentences(p.text)) {
      candidates.push_back({overlap(qwords, word_set(s)), candidates.size(), p.number, s});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  std::string answer = fmt::format("{} [{}]", candidates.front().sentence, candidates.front().number);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].score == 0) break;
    if (candidates[i].number != candidates.front().number) {
      answer += fmt::format(" {} [{}]", candidates[i].sentence, candidates[i].number);
      break;
    }
  }
  return answer;
}

std::string condense_response(std::string_view prompt) {
  const std::string history = between(prompt, "Conversation:\n", "\nFollow-up question: ");
  const std::string query = line_after(prompt, "Follow-up question: ");
  static const std::set<std::string, std::less<>> kSubject = {"he", "she", "it", "they", "him", "them", "this", "that"};
  static const std::set<std::string, std::less<>> kPossessive = {"his", "her", "its", "their"};

  std::string entity;
  const auto lines = split_lines(history);
  for (auto it = lines.rbegin(); it != lines.rend() && entity.empty(); ++it) {
    std::string_view line = *it;
    for (std::string_view role : {"User: ", "Assistant: ", "System: "}) {
      if (line.starts_with(role)) line.remove_prefix(role.size());
    }
    const auto found = rule_based_entities(line);
    if (!found.empty()) entity = found.front().surface;
  }
  if (entity.empty()) return query;

  auto words = split_whitespace(query);
  for (auto& w : words) {
    std::string core = to_lower(strip_punct(w));
    const std::string tail = w.substr(std::min(w.size(), strip_punct(w).size()));
    if (kSubject.contains(core)) {
      w = entity + tail;
      return join(words, " ");
    }
    if (kPossessive.contains(core)) {
      w = entity + "'s" + tail;
      return join(words, " ");
    }
  }
  return query;
}

std::string decompose_response(std::string_view prompt) {
  const int n = std::max(1, int_between(prompt, "into ", " distinct", 3));
  const std::string question = line_after(prompt, "Research question: ");
  std::string keywords = join(content_words(question), " ");
  if (keywords.empty()) keywords = question;
  static const char* kAngles[] = {"background", "recent developments", "evidence", "criticism", "overview"};
  std::vector<std::string> lines{question};
  for (const char* angle : kAngles) lines.push_back(keywords + " " + angle);
  for (int i = static_cast<int>(lines.size()); i < n; ++i) lines.push_back(fmt::format("{} aspect {}", keywords, i));
  lines.resize(static_cast<std::size_t>(n));
  return join(lines, "\n");
}

std::string summarize_response(std::string_view prompt) {
  const auto max_words = static_cast<std::size_t>(std::clamp(int_between(prompt, "in at most ", " words", 60), 1, 60));
  const auto qwords = word_set(line_after(prompt, "Research question: "));
  const auto all = sentences(between(prompt, "Source text:\n"));

  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> score(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) score[i] = overlap(qwords, word_set(all[i]));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  std::vector<std::size_t> picked;
  std::size_t words = 0;
  for (std::size_t i : order) {
    const std::size_t w = split_whitespace(all[i]).size();
    if (words + w > max_words && !picked.empty()) continue;
    picked.push_back(i);
    words += w;
    if (words >= max_words) break;
  }
  std::sort(picked.begin(), picked.end());
  std::vector<std::string> kept;
  for (std::size_t i : picked) kept.push_back(all[i]);
  auto tokens = split_whitespace(join(kept, " "));
  if (tokens.size() > max_words) tokens.resize(max_words);
  return join(tokens, " ");
}

std::string outline_response(std::string_view prompt) {
  std::string question = line_after(prompt, "Research question: ");
  while (!question.empty() && (question.back() == '?' || question.back() == '.')) question.pop_back();
  const auto sources = numbered_passages(between(prompt, "Source summaries:\n"));
  std::string out = fmt::format("TITLE: Report: {}\nSECTION: Background\nSECTION: Key Findings\n", question);
  if (sources.size() >= 2) out += "SECTION: Open Questions\n";
  return out;
}

std::string final_response(std::string_view prompt) {
  const std::string question = line_after(prompt, "Research question: ");
  std::vector<std::string> headings;
  for (const auto& line : split_lines(between(prompt, "Outline:\n", "\n\nSource summaries:"))) {
    std::string h = strip_list_marker(line);
    if (!h.empty()) headings.push_back(std::move(h));
  }
  if (headings.empty()) headings.push_back("Findings");

  // Summary blocks: "[i] title (url)" followed by the summary lines.
  std::vector<std::pair<int, std::string>> summaries;
  for (const auto& line : split_lines(between(prompt, "Source summaries:\n"))) {
    const auto header = numbered_passages(line);
    if (!header.empty()) {
      summaries.emplace_back(header.front().number, std::string{});
    } else if (!summaries.empty() && !trim_view(line).empty()) {
      auto& text = summaries.back().second;
      text += (text.empty() ? "" : " ") + trim(line);
    }
  }

  std::string out;
  for (std::size_t k = 0; k < headings.size(); ++k) {
    out += "## " + headings[k] + "\n";
    std::vector<std::string> body;
    for (std::size_t i = k; i < summaries.size(); i += headings.size()) {
      const auto s = sentences(summaries[i].second);
      if (!s.empty()) body.push_back(fmt::format("{} [{}]", s.front(), summaries[i].first));
    }
    if (body.empty() && !summaries.empty()) {
      const auto& pick = summaries[k % summaries.size()];
      const auto s = sentences(pick.second);
      if (!s.empty()) body.push_back(fmt::format("{} [{}]", s.back(), pick.first));
    }
    if (body.empty()) body.push_back("No source covers this section.");
    out += join(body, " ") + "\n\n";
  }
  out += "## Conclusion\n";
  out += fmt::format("The {} sources reviewed together address the question: {}\n", summaries.size(), question);
  return out;
}

std::string correctness_response(std::string_view prompt) {
  const auto reference = word_set(line_after(prompt, "Reference answer: "));
  const auto generated = word_set(between(prompt, "Generated answer: "));
  if (reference.empty()) return "3.0\nNo reference terms to compare.";
  const double recall = static_cast<double>(overlap(reference, generated)) / static_cast<double>(reference.size());
  const double score = std::round((1.0 + 4.0 * recall) * 10.0) / 10.0;
  return fmt::format("{:.1f}\nReference terms covered: {:.0f}%", score, recall * 100.0);
}

std::string statements_response(std::string_view prompt) {
  std::vector<std::string> out;
  for (const auto& s : sentences(between(prompt, "Answer:\n"))) {
    std::string clean = strip_citations(s);
    if (!clean.empty()) out.push_back(std::move(clean));
  }
  return join(out, "\n");
}

std::string verify_response(std::string_view prompt) {
  const auto context = word_set(between(prompt, "Context:\n", "\n\nStatement: "));
  const auto statement = word_set(line_after(prompt, "Statement: "));
  if (statement.empty()) return context.empty() ? "NO" : "YES";
  const double covered = static_cast<double>(overlap(statement, context)) / static_cast<double>(statement.size());
  return covered >= 0.6 ? "YES" : "NO";
}

std::string concepts_response(std::string_view prompt) {
  const std::string response = between(prompt, "Response:\n");
  std::vector<std::string> out;
  std::set<std::string> covered;
  for (const auto& e : rule_based_entities(response)) {
    out.push_back(e.surface);
    for (const auto& w : content_words(e.surface)) covered.insert(w);
  }
  std::size_t extra = 0;
  for (const auto& w : content_words(strip_citations(response))) {
    if (extra == 3) break;
    if (w.size() < 5 || covered.contains(w)) continue;
    covered.insert(w);
    out.push_back(w);
    ++extra;
  }
  return join(out, "\n");
}

std::string concept_response(std::string_view prompt) {
  const auto query = word_set(line_after(prompt, "Query: "));
  const auto concept_words = word_set(line_after(prompt, "Concept: "));
  for (const auto& c : concept_words) {
    for (const auto& q : query) {
      const std::size_t n = std::min<std::size_t>({5, c.size(), q.size()});
      if (c == q || (n >= 5 && c.compare(0, n, q, 0, n) == 0)) return "YES";
    }
  }
  return "NO";
}

std::string binary_relevance_response(std::string_view prompt) {
  const auto query = word_set(line_after(prompt, "Query: "));
  const std::string response = between(prompt, "Response: ");
  if (to_lower(response).find("could not find") != std::string::npos) return "NO";
  return overlap(query, word_set(response)) > 0 ? "YES" : "NO";
}

}  // namespace

std::string prompt_task(std::string_view prompt) {
  const auto at = prompt.find("### task:");
  if (at == std::string_view::npos) return {};
  auto rest = trim_view(prompt.substr(at + 9));
  const auto end = rest.find_first_of(" \n(");
  return std::string(rest.substr(0, end));
}

ChatResponse HeuristicChat::do_complete(const ChatRequest& req) {
  ++calls_;
  const std::string prompt = flatten_messages(req);
  const std::string task = prompt_task(prompt);
  std::string text;
  if (task == "extract_triples") {
    text = triples_response(prompt);
  } else if (task == "query_entities") {
    text = entities_response(prompt);
  } else if (task == "synthesize") {
    text = synthesize_response(prompt);
  } else if (task == "condense") {
    text = condense_response(prompt);
  } else if (task == "decompose") {
    text = decompose_response(prompt);
  } else if (task == "summarize") {
    text = summarize_response(prompt);
  } else if (task == "compose_outline") {
    text = outline_response(prompt);
  } else if (task == "compose_final") {
    text = final_response(prompt);
  } else if (task == "judge_correctness") {
    text = correctness_response(prompt);
  } else if (task == "decompose_statements") {
    text = statements_response(prompt);
  } else if (task == "verify_statement") {
    text = verify_response(prompt);
  } else if (task == "extract_concepts") {
    text = concepts_response(prompt);
  } else if (task == "judge_concept") {
    text = concept_response(prompt);
  } else if (task == "judge_relevance_binary") {
    text = binary_relevance_response(prompt);
  } else {
    throw Error(ErrorCode::provider_bad_response,
                fmt::format("heuristic chat has no rule for task '{}'", task.empty() ? "<none>" : task));
  }
  return {text, {static_cast<int>(prompt.size() / 4), static_cast<int>(text.size() / 4)}};
}

}  // namespace sagekb
