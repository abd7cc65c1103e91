#include <gtest/gtest.h>

#include "sagekb/eval.hpp"
#include "sagekb/graph_index.hpp"
#include "sagekb/mock_providers.hpp"
#include "sagekb/prompts.hpp"

namespace sagekb {
namespace {

class HeuristicChatTest : public ::testing::Test {
 protected:
  std::string ask(std::string_view name, const std::map<std::string, std::string>& vars) {
    return chat_.complete(ChatRequest::single_turn(prompts_.render(name, vars))).text;
  }

  HeuristicChat chat_;
  PromptLibrary prompts_ = PromptLibrary::defaults();
};

TEST(PromptTask, ReadsHeader) {
  EXPECT_EQ(prompt_task("### task: synthesize (v1)\nrest"), "synthesize");
  EXPECT_EQ(prompt_task("no header"), "");
}

TEST_F(HeuristicChatTest, TriplesFromSentences) {
  const auto out = ask(prompt::kExtractTriples,
                       {{"max_triples", "10"},
                        {"text", "Abraham Lincoln was born in 1809 in Kentucky. the end. Grant commanded all Union armies."}});
  const auto parsed = parse_triple_lines(out, "c1", 10);
  EXPECT_EQ(parsed.skipped_lines, 0u);
  ASSERT_EQ(parsed.triples.size(), 2u);
  EXPECT_EQ(parsed.triples[0].subject, "Abraham Lincoln");
  EXPECT_EQ(parsed.triples[0].predicate, "was born in");
  EXPECT_EQ(parsed.triples[0].object, "1809 in Kentucky");
  EXPECT_EQ(parsed.triples[1].subject, "Grant");
}

TEST_F(HeuristicChatTest, TripleCapHonoured) {
  std::string text;
  for (int i = 0; i < 20; ++i) text += "Alpha" + std::to_string(i) + " likes beta. ";
  const auto out = ask(prompt::kExtractTriples, {{"max_triples", "3"}, {"text", text}});
  EXPECT_EQ(parse_triple_lines(out, "c", 100).triples.size(), 3u);
}

TEST_F(HeuristicChatTest, SynthesizeCitesBestPassage) {
  const auto out = ask(prompt::kSynthesize, {{"contexts", "[1] Cats sleep a lot.\n[2] Abraham Lincoln was born in 1809.\n"},
                                             {"facts", ""},
                                             {"query", "When was Lincoln born?"}});
  EXPECT_EQ(out, "Abraham Lincoln was born in 1809. [2]");
}

TEST_F(HeuristicChatTest, CondenseResolvesPronoun) {
  const auto out = ask(prompt::kCondense, {{"history", "User: Tell me about Abraham Lincoln.\nAssistant: He was president.\n"},
                                           {"query", "When was he born?"}});
  EXPECT_EQ(out, "When was Abraham Lincoln born?");
}

TEST_F(HeuristicChatTest, DecomposeGivesRequestedCount) {
  const auto out = ask(prompt::kDecompose, {{"n_queries", "4"}, {"question", "How does porosity work?"}});
  EXPECT_EQ(split_lines(out).size(), 4u);
}

TEST_F(HeuristicChatTest, JudgeOutputsParseUnderStrictRules) {
  const auto correctness = ask(prompt::kJudgeCorrectness, {{"query", "q"},
                                                           {"reference", "Lincoln was born in 1809"},
                                                           {"answer", "He was born in 1809."}});
  const double score = parse_correctness(correctness);
  EXPECT_GE(score, 1.0);
  EXPECT_LE(score, 5.0);
  EXPECT_TRUE(parse_verdict(ask(prompt::kVerifyStatement, {{"context", "Lincoln was born in 1809."},
                                                           {"statement", "Lincoln was born in 1809"}})));
  EXPECT_FALSE(parse_verdict(ask(prompt::kVerifyStatement, {{"context", "Cats sleep."},
                                                            {"statement", "Lincoln was born in 1809"}})));
  EXPECT_EQ(ask(prompt::kDecomposeStatements, {{"answer", "One fact [1]. Two facts [2]."}}), "One fact.\nTwo facts.");
  EXPECT_TRUE(parse_verdict(ask(prompt::kJudgeConcept, {{"query", "porosity of hair"}, {"concept", "Hair Porosity"}})));
}

TEST_F(HeuristicChatTest, UnknownTaskIsBadResponse) {
  EXPECT_THROW(chat_.complete(ChatRequest::single_turn("free text")), Error);
}

}  // namespace
}  // namespace sagekb
