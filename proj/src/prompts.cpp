#include "sagekb/prompts.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sagekb/error.hpp"

namespace sagekb {

namespace fs = std::filesystem;

namespace {

// Every template opens with a "### task:" line naming it; scripted test
// providers key their responses on that line.
const std::map<std::string, std::string, std::less<>>& builtin_templates() {
  static const std::map<std::string, std::string, std::less<>> kTemplates = {
      {"extract_triples", R"(### task: extract_triples (v1)
Extract up to {max_triples} knowledge triples from the text below.
Write one triple per line in exactly this form:
(subject | predicate | object)
Use short noun phrases for subject and object and a short verb phrase for the predicate.
Do not number the lines and do not add any other text.
If the text states no relations, write NONE.

Text:
{text}
)"},
      {"query_entities", R"(### task: query_entities (v1)
List the named entities and key terms in the question below, one per line.
Write each entity exactly as it appears in the question. Do not add any other text.

Question: {query}
)"},
      {"synthesize", R"(### task: synthesize (v1)
Answer the question using only the numbered context passages and facts below.
Cite the passages you use by their bracket number, for example [1] or [2][3].
If the context does not contain the answer, say that you could not find it.

Context:
{contexts}
{facts}
Question: {query}
Answer:)"},
      {"condense", R"(### task: condense (v1)
Rewrite the follow-up question as a standalone question that can be understood
without the conversation. Reply with the rewritten question only.

Conversation:
{history}

Follow-up question: {query}
Standalone question:)"},
      {"decompose", R"(### task: decompose (v1)
Break the research question below into {n_queries} distinct web search queries
that together cover it. Write one query per line with no numbering or other text.

Research question: {question}
)"},
      {"summarize", R"(### task: summarize (v1)
Summarize the source below in at most {max_words} words, keeping only information
that helps answer the research question. Reply with the summary only.

Research question: {question}
Source title: {title}
Source text:
{text}
)"},
      {"compose_outline", R"(### task: compose_outline (v1)
Plan a structured research report answering the question from the source summaries.
Reply in exactly this form:
TITLE: <report title>
SECTION: <first section heading>
SECTION: <next section heading>
Use between 2 and 6 sections. Do not include a conclusion or references section.

Research question: {question}

Source summaries:
{summaries}
)"},
      {"compose_final", R"(### task: compose_final (v1)
Write the research report body following the outline. For every section write
"## <heading>" on its own line followed by the section text, and finish with
"## Conclusion" followed by the conclusion. Cite sources by their bracket number.
Do not write a title line or a references section.

Research question: {question}
Title: {title}
Outline:
{outline}

Source summaries:
{summaries}
)"},
      {"judge_correctness", R"(### task: judge_correctness (v1)
You are an expert evaluation system for a question answering chatbot.
You are given a user query, a reference answer and a generated answer.
Judge the relevance and correctness of the generated answer and output a single
score on the first line, with at most one decimal place, then optionally a short
reasoning on the following lines.
The score has to be between 1 and 5, where 1 is the worst and 5 is the best.
If the generated answer is not relevant to the user query, you should give a score of 1.
If the generated answer is relevant but contains mistakes, you should give a score between 2 and 3.
If the generated answer is relevant and fully correct, you should give a score between 4 and 5.

User query: {query}
Reference answer: {reference}
Generated answer: {answer}
)"},
      {"decompose_statements", R"(### task: decompose_statements (v1)
Break the answer below into individual, self-contained factual statements.
Write one statement per line with no numbering or other text.

Answer:
{answer}
)"},
      {"verify_statement", R"(### task: verify_statement (v1)
Decide whether the statement can be inferred from the context.
Reply with YES or NO as the first word, optionally followed by a short reason.

Context:
{context}

Statement: {statement}
)"},
      {"extract_concepts", R"(### task: extract_concepts (v1)
List the distinct concepts stated in the response below, one per line,
with no numbering or other text.

Response:
{answer}
)"},
      {"judge_concept", R"(### task: judge_concept (v1)
Is the concept relevant to answering the query?
Reply with YES or NO as the first word, optionally followed by a short reason.

Query: {query}
Concept: {concept}
)"},
      {"judge_relevance_binary", R"(### task: judge_relevance_binary (v1)
Does the response answer the query and stay relevant to it?
Reply with YES or NO as the first word, optionally followed by a short reason.

Query: {query}
Response: {answer}
)"},
  };
  return kTemplates;
}

}  // namespace

std::string render_template(std::string_view text,
                            const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(text.substr(i + 1, close - i - 1));
        if (auto it = vars.find(key); it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

PromptLibrary PromptLibrary::defaults() {
  PromptLibrary lib;
  lib.templates_ = builtin_templates();
  return lib;
}

PromptLibrary PromptLibrary::from_directory(const std::string& dir) {
  PromptLibrary lib = defaults();
  if (dir.empty() || !fs::is_directory(dir)) return lib;
  for (const auto& [name, _] : builtin_templates()) {
    const fs::path p = fs::path(dir) / (name + ".txt");
    if (!fs::exists(p)) continue;
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    lib.templates_[name] = ss.str();
  }
  return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) {
    throw Error(ErrorCode::not_found, fmt::format("no prompt template named '{}'", name));
  }
  return it->second;
}

std::string PromptLibrary::render(std::string_view name,
                                  const std::map<std::string, std::string>& vars) const {
  return render_template(get(name), vars);
}

void PromptLibrary::set(std::string name, std::string text) {
  templates_[std::move(name)] = std::move(text);
}

std::vector<std::string> PromptLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : templates_) out.push_back(name);
  return out;
}

void PromptLibrary::write_to(const std::string& dir) const {
  fs::create_directories(dir);
  for (const auto& [name, text] : templates_) {
    std::ofstream out(fs::path(dir) / (name + ".txt"), std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorCode::storage, fmt::format("cannot write prompt {}", name));
  }
}

}  // namespace sagekb
