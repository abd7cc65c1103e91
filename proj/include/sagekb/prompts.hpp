#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sagekb {

/// Named prompt templates with `{placeholder}` substitution. Built-in
/// defaults can be overridden per name by `<dir>/<name>.txt` files.
class PromptLibrary {
 public:
  /// Library holding the built-in templates.
  static PromptLibrary defaults();

  /// Built-ins overridden by any `<name>.txt` files found in `dir`.
  static PromptLibrary from_directory(const std::string& dir);

  const std::string& get(std::string_view name) const;
  std::string render(std::string_view name,
                     const std::map<std::string, std::string>& vars) const;

  void set(std::string name, std::string text);
  std::vector<std::string> names() const;
  void write_to(const std::string& dir) const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

/// Replaces each `{key}` with its value. Braces naming unknown keys stay.
std::string render_template(std::string_view text,
                            const std::map<std::string, std::string>& vars);

namespace prompt {
inline constexpr std::string_view kExtractTriples = "extract_triples";
inline constexpr std::string_view kQueryEntities = "query_entities";
inline constexpr std::string_view kSynthesize = "synthesize";
inline constexpr std::string_view kCondense = "condense";
inline constexpr std::string_view kDecompose = "decompose";
inline constexpr std::string_view kSummarize = "summarize";
inline constexpr std::string_view kComposeOutline = "compose_outline";
inline constexpr std::string_view kComposeFinal = "compose_final";
inline constexpr std::string_view kJudgeCorrectness = "judge_correctness";
inline constexpr std::string_view kDecomposeStatements = "decompose_statements";
inline constexpr std::string_view kVerifyStatement = "verify_statement";
inline constexpr std::string_view kExtractConcepts = "extract_concepts";
inline constexpr std::string_view kJudgeConcept = "judge_concept";
inline constexpr std::string_view kJudgeRelevanceBinary = "judge_relevance_binary";
}  // namespace prompt

}  // namespace sagekb
