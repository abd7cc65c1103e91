#include <gtest/gtest.h>

#include <set>

#include "sagekb/rag.hpp"
#include "sagekb/report.hpp"
#include "test_support.hpp"

namespace sagekb {
namespace {

constexpr const char* kQuestion = "How does hair porosity affect moisture retention?";

// Rank-merged order for the three fixture sub-queries: rank 1 hits first, then rank 2.
const std::vector<std::string> kFixtureUrls = {
    "https://example.org/porosity-basics", "https://example.org/low-porosity-care",
    "https://example.org/high-porosity-repair", "https://example.org/cuticle-structure",
    "https://example.org/humectants"};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

ReportGenerator generator(ProviderSet providers) {
  return ReportGenerator(std::move(providers), PromptLibrary::defaults(), ReportOptions{}, IngestOptions{},
                         testing::test_clock());
}

SearchHit hit(std::string url, int rank) { return {std::move(url), "title", "", rank}; }

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    registry_ = std::make_unique<Registry>(dir_.path(), testing::test_clock());
    store_ = registry_->open_kb(registry_->create_kb("haircare-science").kb_id);
    providers_ = load_mock_providers(testing::fixtures_dir().string());
  }

  testing::TempDir dir_;
  std::unique_ptr<Registry> registry_;
  std::shared_ptr<KbStore> store_;
  ProviderSet providers_;
};

TEST(Decompose, ScriptedLinesBackfillAndSingle) {
  auto chat = std::make_shared<ScriptedChat>();
  chat->on({"### task: decompose", "three"}, "alpha\nbeta\ngamma\n")
      .on({"### task: decompose", "dupes"}, "1. alpha\n- Alpha\nbeta\n")
      .on({"### task: decompose"}, "only one\nsecond\n");
  auto gen = generator(testing::basic_providers(chat));
  EXPECT_EQ(gen.decompose_question("three things", 3), (std::vector<std::string>{"alpha", "beta", "gamma"}));
  EXPECT_EQ(gen.decompose_question("dupes please", 3),
            (std::vector<std::string>{"alpha", "beta", "dupes please"}));
  EXPECT_EQ(gen.decompose_question("anything", 1), (std::vector<std::string>{"only one"}));
  const auto four = gen.decompose_question("x", 4);
  EXPECT_EQ(four.size(), 4u);
  EXPECT_EQ(std::set<std::string>(four.begin(), four.end()).size(), 4u);
  EXPECT_THROW(gen.decompose_question(" ", 3), Error);
  EXPECT_THROW(gen.decompose_question("q", 0), Error);
}

TEST(GatherSources, DedupRankAndFailures) {
  auto search = std::make_shared<FixtureSearch>();
  search->add("a", {hit("u1", 1), hit("shared", 2)}).add("b", {hit("shared", 1), hit("u2", 2)});
  ProviderSet p;
  p.web_search = search;
  auto gen = generator(p);
  const auto three = gen.gather_sources({"a", "b"}, 3, SourceMode::web);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_EQ(three[0].url_or_id, "u1");
  EXPECT_EQ(three[1].url_or_id, "shared");
  EXPECT_EQ(three[1].rank, 1);
  EXPECT_EQ(three[2].url_or_id, "u2");

  const auto one = gen.gather_sources({"a", "b"}, 1, SourceMode::web);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].url_or_id, "u1");

  search->fail("a");
  ReportJob job("j", "kb", {});
  EXPECT_EQ(gen.gather_sources({"a", "b"}, 5, SourceMode::web, &job).size(), 2u);
  bool logged = false;
  for (const auto& e : job.state().events) logged |= e.detail.find("search failed") != std::string::npos;
  EXPECT_TRUE(logged);

  search->fail_all();
  EXPECT_EQ(code_of([&] { gen.gather_sources({"a", "b"}, 3, SourceMode::web); }), ErrorCode::sources_unavailable);
}

TEST(Summarize, FixedTextAndEmptySource) {
  auto chat = std::make_shared<ScriptedChat>();
  chat->on({"### task: summarize"}, "  Porosity controls water uptake.  ");
  auto gen = generator(testing::basic_providers(chat));
  const auto s = gen.summarize_source({"https://x", "X", 1, "some page text"}, "q");
  EXPECT_EQ(s.summary, "Porosity controls water uptake.");
  EXPECT_EQ(s.fetched_chars, 14u);
  EXPECT_EQ(code_of([&] { gen.summarize_source({"https://x", "X", 1, "   "}, "q"); }), ErrorCode::invalid_argument);
}

TEST(Compose, ReferencesFollowSummaries) {
  auto chat = std::make_shared<HeuristicChat>();
  auto gen = generator(testing::basic_providers(chat));
  std::vector<SourceSummary> five;
  for (int i = 0; i < 5; ++i) {
    five.push_back({kFixtureUrls[static_cast<std::size_t>(i)], "T" + std::to_string(i),
                    "Summary sentence number " + std::to_string(i) + ".", 100});
  }
  const auto r = gen.compose_report(kQuestion, five);
  EXPECT_EQ(r.references, kFixtureUrls);
  EXPECT_FALSE(r.title.empty());
  EXPECT_FALSE(r.sections.empty());
  EXPECT_FALSE(r.conclusion.empty());

  const auto single = gen.compose_report(kQuestion, {five[0]});
  EXPECT_EQ(single.references, (std::vector<std::string>{kFixtureUrls[0]}));
  EXPECT_GE(single.sections.size(), 1u);
  EXPECT_EQ(code_of([&] { gen.compose_report(kQuestion, {}); }), ErrorCode::invalid_argument);

  const auto md = render_markdown(r, five);
  EXPECT_TRUE(md.starts_with("# " + r.title + "\n"));
  EXPECT_NE(md.find("\n## Conclusion\n"), std::string::npos);
  EXPECT_NE(md.find("\n## References\n\n1. [T0](" + kFixtureUrls[0] + ")\n"), std::string::npos);
  EXPECT_NE(md.find("5. [T4](" + kFixtureUrls[4] + ")\n"), std::string::npos);
}

TEST(ReportJobTest, TransitionsOnlyMoveForward) {
  ReportJob job("j", "kb", {}, testing::test_clock());
  job.advance(JobStatus::searching);
  job.advance(JobStatus::scraping);
  EXPECT_THROW(job.advance(JobStatus::searching), Error);
  job.fail(Error(ErrorCode::sources_unavailable, "none"));
  const auto st = job.state();
  EXPECT_EQ(st.status, JobStatus::failed);
  EXPECT_EQ(st.failed_stage, JobStatus::scraping);
  EXPECT_EQ(st.error_code, "sources_unavailable");
  EXPECT_THROW(job.advance(JobStatus::done), Error);
}

TEST_F(ReportTest, FullPipelineSavesIntoKb) {
  auto gen = generator(providers_);
  const auto before = store_->snapshot();
  ReportJobSpec spec{kQuestion, 3, 5, SourceMode::web};
  ReportJob job(make_report_id(before->kb.kb_id, spec), before->kb.kb_id, spec, testing::test_clock());
  const auto out = gen.run(*store_, spec, &job);

  EXPECT_EQ(out.report.references, kFixtureUrls);
  EXPECT_GE(out.report.sections.size(), 3u);
  EXPECT_EQ(out.report.title, "Hair Porosity and Moisture Retention");
  EXPECT_EQ(job.status(), JobStatus::done);
  EXPECT_EQ(job.state().report_id, out.report_id);

  const auto after = store_->snapshot();
  ASSERT_EQ(after->documents.size(), before->documents.size() + 1);
  const auto* doc = after->find_document(out.doc_id);
  ASSERT_NE(doc, nullptr);
  EXPECT_EQ(doc->media_kind, MediaKind::report);
  EXPECT_EQ(doc->metadata.at(std::string(kReportOriginKey)), kReportOriginValue);
  EXPECT_GT(after->chunks.size(), before->chunks.size());
  EXPECT_GT(after->graph.size(), before->graph.size());
  EXPECT_EQ(store_->read_report(out.report_id), out.markdown);
  ASSERT_EQ(after->reports.size(), 1u);
  EXPECT_EQ(after->reports[0].doc_id, out.doc_id);

  // reference closure
  std::set<std::string> summarized;
  for (const auto& s : out.summaries) summarized.insert(s.url_or_id);
  for (const auto& r : out.report.references) EXPECT_TRUE(summarized.count(r));

  // stage monotonicity
  const auto events = job.state().events;
  for (std::size_t i = 1; i < events.size(); ++i) {
    EXPECT_LE(events[i - 1].stage, events[i].stage);
    EXPECT_LE(events[i - 1].timestamp, events[i].timestamp);
  }
  EXPECT_EQ(events.back().stage, JobStatus::done);
}

TEST_F(ReportTest, ReportIsRetrievableAfterwards) {
  auto gen = generator(providers_);
  const auto out = gen.run(*store_, {kQuestion, 3, 5, SourceMode::web});
  RagEngine rag(providers_, PromptLibrary::defaults());
  const auto snap = store_->snapshot();
  const auto a = rag.chat(*snap, RetrievalMode::custom, "What does low porosity hair do with moisture?");
  bool from_report = false;
  for (const auto& ref : a.references) {
    const auto* d = snap->find_document(ref.doc_id);
    ASSERT_NE(d, nullptr);
    from_report |= d->metadata.count(std::string(kReportOriginKey)) &&
                   d->metadata.at(std::string(kReportOriginKey)) == kReportOriginValue;
  }
  EXPECT_TRUE(from_report);
  EXPECT_EQ(out.doc_id, snap->documents.back().doc_id);
}

TEST_F(ReportTest, RerunIsReproducible) {
  auto gen = generator(providers_);
  const auto first = gen.run(*store_, {kQuestion, 3, 5, SourceMode::web});
  auto other = registry_->open_kb(registry_->create_kb("second").kb_id);
  const auto second = gen.run(*other, {kQuestion, 3, 5, SourceMode::web});
  EXPECT_EQ(first.markdown, second.markdown);
}

TEST_F(ReportTest, ScrapingFailureLeavesKbUnchanged) {
  auto fetcher = std::make_shared<FixtureFetcher>();
  for (const auto& u : kFixtureUrls) fetcher->fail(u);
  auto p = providers_;
  p.fetcher = fetcher;
  auto gen = generator(p);
  const auto before = testing::kb_fingerprint(*store_->snapshot());
  const auto disk = testing::directory_digest(store_->dir());
  ReportJob job("job", store_->snapshot()->kb.kb_id, {kQuestion, 3, 5, SourceMode::web});
  try {
    gen.run(*store_, {kQuestion, 3, 5, SourceMode::web}, &job);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::sources_unavailable);
    EXPECT_EQ(e.stage(), "scraping");
  }
  EXPECT_EQ(job.status(), JobStatus::failed);
  EXPECT_EQ(job.state().failed_stage, JobStatus::scraping);
  EXPECT_EQ(testing::kb_fingerprint(*store_->snapshot()), before);
  EXPECT_EQ(testing::directory_digest(store_->dir()), disk);
}

TEST_F(ReportTest, OneSummaryFailureIsTolerated) {
  auto chat = std::make_shared<ScriptedChat>();
  chat->fail_on({"### task: summarize", "Humectants and Hair Moisture"}, ErrorCode::provider_bad_response)
      .fallback(std::make_shared<HeuristicChat>());
  auto p = providers_;
  p.chat = chat;
  auto gen = generator(p);
  ReportJob job("job", "kb", {});
  const auto out = gen.run(*store_, {kQuestion, 3, 5, SourceMode::web}, &job);
  EXPECT_EQ(out.report.references.size(), 4u);
  EXPECT_EQ(std::count(out.report.references.begin(), out.report.references.end(), kFixtureUrls[4]), 0);
  int drops = 0;
  for (const auto& e : job.state().events) drops += e.detail.starts_with("dropped ") ? 1 : 0;
  EXPECT_EQ(drops, 1);
}

TEST_F(ReportTest, ArxivModeCitesPaperUrls) {
  auto gen = generator(providers_);
  const auto out = gen.run(*store_, {"hair porosity and keratin", 2, 2, SourceMode::arxiv});
  ASSERT_EQ(out.report.references.size(), 2u);
  for (const auto& r : out.report.references) EXPECT_TRUE(r.starts_with("https://arxiv.org/abs/")) << r;
}

TEST_F(ReportTest, SpecValidation) {
  auto gen = generator(providers_);
  EXPECT_EQ(code_of([&] { gen.run(*store_, {"", 3, 5, SourceMode::web}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { gen.run(*store_, {"q", 3, 0, SourceMode::web}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(source_mode_from_string("ArXiv"), SourceMode::arxiv);
  EXPECT_NE(make_report_id("kb", {"q", 3, 5, SourceMode::web}), make_report_id("kb", {"q", 3, 5, SourceMode::arxiv}));
}

}  // namespace
}  // namespace sagekb
