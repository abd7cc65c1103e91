#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sagekb/eval.hpp"
#include "sagekb/ingestion.hpp"
#include "test_support.hpp"

namespace sagekb {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

std::vector<Statement> verdicts(std::initializer_list<bool> v) {
  std::vector<Statement> out;
  for (bool b : v) out.push_back({"s", b});
  return out;
}

TEST(ParseCorrectness, StrictRules) {
  EXPECT_EQ(parse_correctness("5"), 5.0);
  EXPECT_EQ(parse_correctness("4.5"), 4.5);
  EXPECT_EQ(parse_correctness("\n  3.0\nbecause it is close"), 3.0);
  EXPECT_EQ(code_of([] { parse_correctness("0"); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_correctness("5.5"); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([] { parse_correctness("great answer"); }), ErrorCode::parse_failure);
  EXPECT_EQ(code_of([] { parse_correctness(""); }), ErrorCode::parse_failure);
  EXPECT_EQ(code_of([] { parse_correctness("4/5"); }), ErrorCode::parse_failure);
}

TEST(ParseVerdict, LeadingToken) {
  EXPECT_TRUE(parse_verdict("YES"));
  EXPECT_TRUE(parse_verdict("yes, it follows"));
  EXPECT_FALSE(parse_verdict("No."));
  EXPECT_EQ(code_of([] { parse_verdict("maybe"); }), ErrorCode::parse_failure);
  EXPECT_EQ(code_of([] { parse_verdict("yesterday"); }), ErrorCode::parse_failure);
}

TEST(Faithfulness, RatioExamples) {
  EXPECT_EQ(score_faithfulness(verdicts({true, true, false, true})), 0.75);
  EXPECT_EQ(score_faithfulness(verdicts({true, true})), 1.0);
  EXPECT_EQ(score_faithfulness(verdicts({false, false, false})), 0.0);
  EXPECT_EQ(code_of([] { score_faithfulness({}); }), ErrorCode::zero_statements);
  std::vector<Statement> unset = verdicts({true});
  unset.push_back({"pending", std::nullopt});
  EXPECT_EQ(code_of([&] { score_faithfulness(unset); }), ErrorCode::unset_verdict);
}

TEST(Faithfulness, MatchesReducedFraction) {
  std::mt19937 gen(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + gen() % 50;
    std::vector<bool> v(n);
    std::vector<Statement> s;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = gen() % 2 == 0;
      s.push_back({"s", static_cast<bool>(v[i])});
    }
    EXPECT_EQ(score_faithfulness(s), oracle::exact_ratio(v));
  }
}

TEST(Relevance, ConceptRatio) {
  EXPECT_EQ(concept_ratio({true, true, false, true, true}), 0.8);
  EXPECT_EQ(concept_ratio({true, true}), 1.0);
  EXPECT_EQ(code_of([] { concept_ratio({}); }), ErrorCode::zero_concepts);
}

TEST(JudgeTest, ScriptedJudgements) {
  ScriptedChat chat;
  chat.on({"### task: judge_correctness", "five"}, "5")
      .on({"### task: judge_correctness", "zero"}, "0")
      .on({"### task: decompose_statements", "four"}, "a\n\nb\nc\nd\n")
      .on({"### task: decompose_statements", "blank"}, "-\n  - \n")
      .on({"### task: verify_statement", "s:a"}, "YES")
      .on({"### task: verify_statement", "s:b"}, "NO")
      .on({"### task: verify_statement", "s:c"}, "maybe")
      .on({"### task: extract_concepts", "none"}, "- \n")
      .on({"### task: extract_concepts"}, "- c1\n- c2\n- c3\n- c4\n- c5\n")
      .on({"### task: judge_concept", "c5"}, "NO")
      .on({"### task: judge_concept"}, "YES")
      .on({"### task: judge_relevance_binary"}, "YES");
  Judge judge(chat, PromptLibrary::defaults());
  EXPECT_EQ(judge.score_correctness("q", "five", "ref"), 5.0);
  EXPECT_EQ(code_of([&] { judge.score_correctness("q", "zero", "ref"); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([&] { judge.score_correctness("q", "five", " "); }), ErrorCode::invalid_argument);
  EXPECT_EQ(judge.decompose_statements("four").size(), 4u);
  EXPECT_EQ(code_of([&] { judge.decompose_statements(""); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { judge.decompose_statements("blank"); }), ErrorCode::zero_statements);
  EXPECT_TRUE(judge.verify_statement("a", "s:a"));
  EXPECT_FALSE(judge.verify_statement("b", "s:b"));
  EXPECT_EQ(code_of([&] { judge.verify_statement("c", "s:c"); }), ErrorCode::parse_failure);
  EXPECT_EQ(code_of([&] { judge.verify_statement("c", ""); }), ErrorCode::invalid_argument);

  const auto rel = judge.relevance("answer", "query");
  EXPECT_EQ(rel.concepts.size(), 5u);
  EXPECT_EQ(rel.score, 0.8);
  EXPECT_EQ(code_of([&] { judge.relevance("none", "q"); }), ErrorCode::zero_concepts);
  EXPECT_EQ(Judge(chat, PromptLibrary::defaults(), RelevanceMode::binary).relevance("x", "q").score, 1.0);

  const auto before = chat.call_count();
  const auto f = judge.faithfulness("four", "");
  EXPECT_EQ(f.score, 0.0);
  EXPECT_EQ(chat.call_count(), before + 1);
}

TEST(Dataset, SchemaAndCounts) {
  const auto qs = parse_dataset(
      "{\"text\":\"a\",\"difficulty\":\"easy\",\"occurrence\":\"low\"}\n\n"
      "{\"id\":\"x\",\"text\":\"b\",\"difficulty\":\"hard\",\"occurrence\":\"high\",\"reference_answer\":\"r\"}\n");
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_FALSE(qs[0].id.empty());
  EXPECT_EQ(qs[1].id, "x");
  EXPECT_EQ(qs[1].reference_answer, "r");
  EXPECT_EQ(code_of([] { parse_dataset("{\"text\":\"a\",\"occurrence\":\"low\"}"); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { parse_dataset("{\"text\":\"\",\"difficulty\":\"easy\",\"occurrence\":\"low\"}"); }),
            ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { parse_dataset("{\"text\":\"a\",\"difficulty\":\"extreme\",\"occurrence\":\"low\"}"); }),
            ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { parse_dataset("not json"); }), ErrorCode::invalid_argument);
}

TEST(Dataset, SyntheticHasNineCellsOf255) {
  const auto qs = synthetic_dataset();
  EXPECT_EQ(qs.size(), 2295u);
  const auto m = manifest_for(qs);
  EXPECT_EQ(m.cells.size(), 9u);
  for (const auto& [cell, n] : m.cells) EXPECT_EQ(n, 255u);
  EXPECT_EQ(m.total, 2295u);
  for (Difficulty d : kDifficulties) {
    EXPECT_EQ(std::count_if(qs.begin(), qs.end(), [&](const EvalQuery& q) { return q.difficulty == d; }), 765);
  }
  EXPECT_NO_THROW(validate_counts(qs, m));
  auto short_by_one = qs;
  short_by_one.pop_back();
  EXPECT_EQ(code_of([&] { validate_counts(short_by_one, m); }), ErrorCode::invalid_argument);
  EXPECT_EQ(dataset_to_jsonl(synthetic_dataset(255, 2024)), dataset_to_jsonl(qs));
  std::set<std::string> ids;
  for (const auto& q : qs) ids.insert(q.id);
  EXPECT_EQ(ids.size(), qs.size());
}

TEST(Dataset, ManifestRoundTripAndFiles) {
  const auto qs = synthetic_dataset(2, 1);
  const auto m = parse_manifest(manifest_to_json(manifest_for(qs)));
  EXPECT_NO_THROW(validate_counts(qs, m));
  const auto toy = load_dataset((testing::fixtures_dir() / "eval" / "toy_queries.jsonl").string());
  EXPECT_EQ(toy.size(), 9u);

  testing::TempDir dir;
  const auto path = dir.path() / "q.jsonl";
  testing::write_file(path, dataset_to_jsonl(qs));
  auto wrong = manifest_to_json(manifest_for(qs));
  testing::write_file(dir.path() / "q.manifest.json", wrong.dump());
  EXPECT_EQ(load_dataset(path.string()).size(), qs.size());
  wrong["total"] = qs.size() + 1;
  testing::write_file(dir.path() / "q.manifest.json", wrong.dump());
  EXPECT_EQ(code_of([&] { load_dataset(path.string()); }), ErrorCode::invalid_argument);
}

EvalRecord record(Difficulty d, Occurrence o, RetrievalMode m, double correctness) {
  EvalRecord r;
  r.query.text = "q";
  r.query.difficulty = d;
  r.query.occurrence = o;
  r.mode = m;
  r.correctness = correctness;
  return r;
}

TEST(Aggregate, HandComputedCell) {
  std::vector<EvalRecord> rs = {record(Difficulty::easy, Occurrence::low, RetrievalMode::vector, 4),
                                record(Difficulty::easy, Occurrence::high, RetrievalMode::vector, 4),
                                record(Difficulty::easy, Occurrence::low, RetrievalMode::vector, 5)};
  const auto cells = aggregate(rs, GroupBy::difficulty);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].difficulty, "easy");
  EXPECT_EQ(cells[0].occurrence, "all");
  EXPECT_EQ(cells[0].metric, "correctness");
  EXPECT_EQ(cells[0].n, 3u);
  EXPECT_NEAR(cells[0].mean, 13.0 / 3.0, 1e-12);
  EXPECT_NEAR(cells[0].stddev, std::sqrt(2.0 / 9.0), 1e-12);

  const auto single = aggregate({rs[0]}, GroupBy::all);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].stddev, 0.0);

  auto failed = rs;
  failed[2].error = "provider_bad_response: x";
  failed[2].correctness.reset();
  EXPECT_EQ(aggregate(failed, GroupBy::all)[0].n, 2u);
  EXPECT_EQ(aggregate(rs, GroupBy::difficulty_occurrence).size(), 2u);
  EXPECT_THROW(aggregate({}, GroupBy::all), Error);
}

TEST(Aggregate, PermutationInvariantAndMatchesOracle) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> score(1.0, 5.0);
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 300; ++i) {
    rs.push_back(record(kDifficulties[i % 3], kOccurrences[(i / 3) % 3],
                        static_cast<RetrievalMode>(i % 2), score(gen)));
    rs.back().faithfulness = static_cast<double>(i % 7) / 7.0;
  }
  const auto base = aggregate(rs, GroupBy::difficulty_occurrence);
  for (int shuffle = 0; shuffle < 10; ++shuffle) {
    std::shuffle(rs.begin(), rs.end(), gen);
    const auto again = aggregate(rs, GroupBy::difficulty_occurrence);
    ASSERT_EQ(again.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(again[i].mean, base[i].mean);
      EXPECT_EQ(again[i].stddev, base[i].stddev);
    }
  }
  for (const auto& c : base) {
    std::vector<double> vals;
    for (const auto& r : rs) {
      if (std::string(to_string(r.query.difficulty)) != c.difficulty ||
          std::string(to_string(r.query.occurrence)) != c.occurrence || r.mode != c.mode) {
        continue;
      }
      vals.push_back(c.metric == "correctness" ? *r.correctness : *r.faithfulness);
    }
    const auto [mean, sd] = oracle::mean_pstdev(vals);
    EXPECT_EQ(c.n, vals.size());
    EXPECT_NEAR(c.mean, mean, 1e-12);
    EXPECT_NEAR(c.stddev, sd, 1e-12);
  }
}

class SuiteTest : public ::testing::Test {
 protected:
  void SetUp() override {
    registry_ = std::make_unique<Registry>(dir_.path(), testing::test_clock());
    store_ = registry_->open_kb(registry_->create_kb("toy").kb_id);
    chat_ = std::make_shared<HeuristicChat>();
    Ingestor ing(testing::basic_providers(chat_), PromptLibrary::defaults(), IngestOptions{}, testing::test_clock());
    for (const auto& e : std::filesystem::directory_iterator(testing::fixtures_dir() / "corpus")) {
      ing.ingest(*store_, {testing::read_file(e.path()), format_from_path(e.path().string()),
                           e.path().filename().string(), MediaKind::text, {}});
    }
    dataset_ = load_dataset((testing::fixtures_dir() / "eval" / "toy_queries.jsonl").string());
  }

  SuiteResult run(ChatProvider& judge_chat, const std::vector<RetrievalMode>& modes) {
    RagEngine rag(testing::basic_providers(chat_), PromptLibrary::defaults());
    Judge judge(judge_chat, PromptLibrary::defaults());
    return run_suite(rag, *store_->snapshot(), judge, dataset_, modes);
  }

  testing::TempDir dir_;
  std::unique_ptr<Registry> registry_;
  std::shared_ptr<KbStore> store_;
  std::shared_ptr<HeuristicChat> chat_;
  std::vector<EvalQuery> dataset_;
};

const std::vector<RetrievalMode> kAllModes = {RetrievalMode::vector, RetrievalMode::graph, RetrievalMode::custom};

TEST_F(SuiteTest, CardinalityAndScores) {
  HeuristicChat judge;
  const auto r = run(judge, kAllModes);
  ASSERT_EQ(r.records.size(), 27u);
  EXPECT_EQ(r.failed, 0u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    EXPECT_EQ(rec.query.id, dataset_[i / 3].id);
    EXPECT_EQ(rec.mode, kAllModes[i % 3]);
    ASSERT_TRUE(rec.correctness.has_value()) << rec.error.value_or("");
    EXPECT_GE(*rec.correctness, 1.0);
    EXPECT_LE(*rec.correctness, 5.0);
    ASSERT_TRUE(rec.faithfulness.has_value());
    EXPECT_EQ(*rec.faithfulness, static_cast<double>(rec.statement_verified) / static_cast<double>(rec.statement_total));
    ASSERT_TRUE(rec.relevance.has_value());
    EXPECT_GE(*rec.relevance, 0.0);
    EXPECT_LE(*rec.relevance, 1.0);
  }
  EXPECT_EQ(run(judge, {RetrievalMode::vector}).records.size(), 9u);
}

TEST_F(SuiteTest, OneJudgeFailureIsMarked) {
  HeuristicChat inner;
  std::atomic<int> correctness_calls{0};
  FunctionChat judge([&](const std::string& prompt) -> std::string {
    if (prompt_task(prompt) == "judge_correctness" && correctness_calls++ == 0) {
      throw Error(ErrorCode::provider_bad_response, "garbled judge output");
    }
    return inner.complete(ChatRequest::single_turn(prompt)).text;
  });
  const auto r = run(judge, kAllModes);
  EXPECT_EQ(r.records.size(), 27u);
  EXPECT_EQ(r.failed, 1u);
  EXPECT_FALSE(r.threshold_exceeded);
  const auto bad = std::find_if(r.records.begin(), r.records.end(), [](const EvalRecord& x) { return x.failed(); });
  ASSERT_NE(bad, r.records.end());
  EXPECT_EQ(bad->error_stage, "correctness");
  EXPECT_TRUE(bad->error->starts_with("provider_bad_response"));
  std::size_t n = 0;
  for (const auto& c : aggregate(r.records, GroupBy::all)) {
    if (c.metric == "correctness") n += c.n;
  }
  EXPECT_EQ(n, 26u);
}

TEST_F(SuiteTest, OutputsAreByteIdenticalAcrossRuns) {
  HeuristicChat judge_a, judge_b;
  const auto a = run(judge_a, kAllModes);
  const auto b = run(judge_b, kAllModes);
  EXPECT_EQ(records_csv(a.records), records_csv(b.records));
  const auto cells = aggregate(a.records, GroupBy::difficulty);
  EXPECT_EQ(aggregates_csv(cells, GroupBy::difficulty), aggregates_csv(aggregate(b.records, GroupBy::difficulty), GroupBy::difficulty));
  EXPECT_EQ(eval_bundle(a).dump(), eval_bundle(b).dump());

  testing::TempDir out;
  write_eval_outputs(a, out.str());
  for (const char* f : {"records.csv", "aggregates.csv", "bundle.json"}) {
    EXPECT_TRUE(std::filesystem::exists(out.path() / f)) << f;
  }
  EXPECT_EQ(testing::read_file(out.path() / "records.csv"), records_csv(a.records));
  const auto svg = bar_chart_svg(cells, "correctness", "Correctness");
  EXPECT_TRUE(svg.starts_with("<svg") || svg.starts_with("<?xml"));
  EXPECT_NE(svg.find("vector"), std::string::npos);

  testing::TempDir plots;
  write_plots_from_bundle(nlohmann::json::parse(testing::read_file(out.path() / "bundle.json")), plots.str());
  EXPECT_FALSE(std::filesystem::is_empty(plots.path()));
}

}  // namespace
}  // namespace sagekb
