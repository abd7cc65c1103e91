#include <gtest/gtest.h>

#include <set>

#include "sagekb/ingestion.hpp"
#include "sagekb/rag.hpp"
#include "test_support.hpp"

namespace sagekb {
namespace {

std::vector<std::string> ids(const ContextBundle& b) {
  std::vector<std::string> out;
  for (const auto& e : b.entries) out.push_back(e.chunk_id);
  return out;
}

class RagTest : public ::testing::Test {
 protected:
  void SetUp() override {
    registry_ = std::make_unique<Registry>(dir_.path(), testing::test_clock());
    store_ = registry_->open_kb(registry_->create_kb("history").kb_id);
    chat_ = std::make_shared<HeuristicChat>();
    IngestOptions small;
    small.chunking = {24, 4};
    Ingestor ing(testing::basic_providers(chat_), PromptLibrary::defaults(), small, testing::test_clock());
    for (const char* name : {"lincoln.txt", "shampoo.txt", "rag_notes.txt"}) {
      ing.ingest_text(*store_, testing::read_file(testing::fixtures_dir() / "corpus" / name), name);
    }
    snap_ = store_->snapshot();
  }

  RagEngine engine(std::shared_ptr<ChatProvider> chat, RagOptions opts = {}) const {
    return RagEngine(testing::basic_providers(std::move(chat)), PromptLibrary::defaults(), opts);
  }

  testing::TempDir dir_;
  std::unique_ptr<Registry> registry_;
  std::shared_ptr<KbStore> store_;
  std::shared_ptr<HeuristicChat> chat_;
  std::shared_ptr<const KbSnapshot> snap_;
};

TEST_F(RagTest, VectorModeMatchesIndexSearch) {
  const auto rag = engine(chat_);
  const std::string q = "When did Lincoln win at Vicksburg?";
  const auto b = rag.retrieve(*snap_, q, RetrievalMode::vector, 4);
  const auto hits = snap_->vectors.search(HashEmbedder(64, HashEmbedder::Mode::bag_of_words).embed_one(q), 4);
  ASSERT_EQ(b.entries.size(), hits.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    EXPECT_EQ(b.entries[i].chunk_id, hits[i].chunk_id);
    EXPECT_EQ(b.entries[i].origin, ContextOrigin::vector);
    ASSERT_TRUE(b.entries[i].score.has_value());
    EXPECT_DOUBLE_EQ(*b.entries[i].score, hits[i].score);
  }
  EXPECT_TRUE(b.triples.empty());
}

TEST_F(RagTest, GraphModeFollowsTriples) {
  const auto rag = engine(chat_);
  const auto b = rag.retrieve(*snap_, "Tell me about Abraham Lincoln", RetrievalMode::graph, std::nullopt, 1);
  ASSERT_FALSE(b.entries.empty());
  ASSERT_FALSE(b.triples.empty());
  std::set<std::string> chunk_ids;
  for (const auto& e : b.entries) {
    EXPECT_EQ(e.origin, ContextOrigin::graph);
    EXPECT_FALSE(e.score.has_value());
    chunk_ids.insert(e.chunk_id);
  }
  for (const auto& t : b.triples) EXPECT_TRUE(chunk_ids.count(t.source_chunk_id));
  EXPECT_THROW(rag.retrieve(*snap_, "Lincoln", RetrievalMode::graph, std::nullopt, 0), Error);
  EXPECT_THROW(rag.retrieve(*snap_, "Lincoln", RetrievalMode::graph, std::nullopt, 99), Error);
}

TEST_F(RagTest, CustomIsVectorThenGraphWithoutDuplicates) {
  RagOptions opts;
  opts.context_char_budget = 1u << 30;
  const auto rag = engine(chat_, opts);
  for (const char* q : {"Abraham Lincoln and Ulysses Grant", "Vicksburg", "What does shampoo do?",
                        "retrieval augmented generation"}) {
    const auto v = rag.retrieve(*snap_, q, RetrievalMode::vector, 3, 2);
    const auto g = rag.retrieve(*snap_, q, RetrievalMode::graph, 3, 2);
    const auto c = rag.retrieve(*snap_, q, RetrievalMode::custom, 3, 2);
    const auto cid = ids(c);
    const auto vid = ids(v);
    ASSERT_GE(cid.size(), vid.size());
    EXPECT_TRUE(std::equal(vid.begin(), vid.end(), cid.begin())) << q;
    std::set<std::string> uni(vid.begin(), vid.end());
    for (const auto& id : ids(g)) uni.insert(id);
    EXPECT_EQ(std::set<std::string>(cid.begin(), cid.end()), uni) << q;
    EXPECT_EQ(uni.size(), cid.size()) << q;
    for (std::size_t i = 0; i < vid.size(); ++i) EXPECT_EQ(c.entries[i].origin, ContextOrigin::vector);
    EXPECT_EQ(c.triples, g.triples);
  }
}

TEST_F(RagTest, CustomOnEmptyGraphEqualsVector) {
  auto scripted = std::make_shared<ScriptedChat>();
  scripted->on({"### task: extract_triples"}, "nothing to extract");
  auto other = registry_->open_kb(registry_->create_kb("flat").kb_id);
  Ingestor ing(testing::basic_providers(scripted), PromptLibrary::defaults(), IngestOptions{}, testing::test_clock());
  ing.ingest_text(*other, testing::read_file(testing::fixtures_dir() / "corpus" / "lincoln.txt"), "lincoln.txt");
  const auto snap = other->snapshot();
  ASSERT_EQ(snap->graph.size(), 0u);
  const auto rag = engine(chat_);
  const auto v = rag.retrieve(*snap, "Lincoln", RetrievalMode::vector);
  const auto c = rag.retrieve(*snap, "Lincoln", RetrievalMode::custom);
  EXPECT_EQ(ids(c), ids(v));
  EXPECT_TRUE(rag.retrieve(*snap, "Lincoln", RetrievalMode::graph).empty());
}

TEST_F(RagTest, SynthesizeListsReferencesInContextOrder) {
  auto scripted = std::make_shared<ScriptedChat>();
  scripted->on({"### task: synthesize"}, "ANSWER");
  const auto rag = engine(scripted);
  auto bundle = rag.retrieve(*snap_, "Lincoln", RetrievalMode::vector, 3);
  ASSERT_EQ(bundle.entries.size(), 3u);
  const auto expected_ids = ids(bundle);
  const auto a = rag.synthesize("Lincoln", bundle, RetrievalMode::vector);
  EXPECT_EQ(a.answer, "ANSWER");
  EXPECT_FALSE(a.no_context);
  ASSERT_EQ(a.references.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.references[i].chunk_id, expected_ids[i]);
    EXPECT_EQ(a.references[i].doc_id, bundle.entries[i].doc_id);
  }
  const auto prompt = rag.synthesis_prompt("Lincoln", bundle);
  EXPECT_NE(prompt.find("[1] " + bundle.entries[0].text), std::string::npos);
  EXPECT_NE(prompt.find("[3] "), std::string::npos);
}

TEST_F(RagTest, EmptyBundleGivesNoContextAnswerWithoutProviderCall) {
  auto scripted = std::make_shared<ScriptedChat>();
  const auto rag = engine(scripted);
  const auto a = rag.synthesize("anything", ContextBundle{}, RetrievalMode::custom);
  EXPECT_TRUE(a.no_context);
  EXPECT_EQ(a.answer, kNoContextAnswer);
  EXPECT_TRUE(a.references.empty());
  EXPECT_EQ(scripted->call_count(), 0u);

  auto empty = registry_->open_kb(registry_->create_kb("empty").kb_id);
  const auto r = rag.chat(*empty->snapshot(), RetrievalMode::custom, "Who was Lincoln?");
  EXPECT_TRUE(r.no_context);
}

TEST_F(RagTest, ChatUsesHistoryForFollowUps) {
  const auto rag = engine(chat_);
  const std::vector<ChatMessage> history = {{Role::user, "Tell me about Abraham Lincoln."},
                                            {Role::assistant, "He was the 16th president."}};
  const auto a = rag.chat(*snap_, RetrievalMode::custom, "When was he born?", history);
  EXPECT_EQ(a.standalone_query, "When was Abraham Lincoln born?");
  EXPECT_FALSE(a.references.empty());
  EXPECT_NE(a.answer.find('['), std::string::npos);
  EXPECT_EQ(rag.condense("plain question", {}), "plain question");

  RagEngine no_chat(testing::basic_providers(nullptr), PromptLibrary::defaults());
  EXPECT_EQ(no_chat.condense("born when?", history), "Tell me about Abraham Lincoln. born when?");
}

TEST_F(RagTest, EmptyQueryIsRejected) {
  const auto rag = engine(chat_);
  try {
    rag.chat(*snap_, RetrievalMode::vector, "   ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(api_code(e.code()), "invalid_request");
  }
  EXPECT_THROW(rag.retrieve(*snap_, "", RetrievalMode::custom), Error);
  EXPECT_THROW(rag.retrieve(*snap_, "q", RetrievalMode::vector, 0), Error);
}

TEST(ContextBudget, DropsGraphThenVectorKeepingOne) {
  ContextBundle b;
  b.entries = {{"v1", "d", "s", std::string(40, 'a'), ContextOrigin::vector, 0.9},
               {"v2", "d", "s", std::string(40, 'b'), ContextOrigin::vector, 0.8},
               {"g1", "d", "s", std::string(40, 'c'), ContextOrigin::graph, std::nullopt},
               {"g2", "d", "s", std::string(40, 'd'), ContextOrigin::graph, std::nullopt}};
  b.triples = {{"A", "p", "B", "g1"}, {"C", "q", "D", "v1"}, {"E", "r", "F", "g2"}};

  auto fit = b;
  apply_context_budget(fit, 1000);
  EXPECT_EQ(ids(fit), ids(b));

  auto one_graph = b;
  apply_context_budget(one_graph, 120);
  EXPECT_EQ(ids(one_graph), (std::vector<std::string>{"v1", "v2", "g1"}));
  EXPECT_EQ(one_graph.triples.size(), 2u);

  auto vector_only = b;
  apply_context_budget(vector_only, 50);
  EXPECT_EQ(ids(vector_only), (std::vector<std::string>{"v1"}));
  EXPECT_EQ(vector_only.triples, (std::vector<Triple>{{"C", "q", "D", "v1"}}));

  auto tiny = b;
  apply_context_budget(tiny, 1);
  EXPECT_EQ(tiny.entries.size(), 1u);
}

TEST_F(RagTest, ModesDoNotInfluenceEachOther) {
  const auto rag = engine(chat_);
  const auto v1 = rag.retrieve(*snap_, "Grant", RetrievalMode::vector);
  rag.retrieve(*snap_, "Grant", RetrievalMode::graph);
  rag.retrieve(*snap_, "Grant", RetrievalMode::custom);
  const auto v2 = rag.retrieve(*snap_, "Grant", RetrievalMode::vector);
  EXPECT_EQ(v1.digest(), v2.digest());
  EXPECT_EQ(retrieval_mode_from_string("KG"), RetrievalMode::graph);
  EXPECT_EQ(parse_modes("vector, graph,vector,custom").size(), 3u);
  EXPECT_THROW(parse_modes(" , "), Error);
}

}  // namespace
}  // namespace sagekb
