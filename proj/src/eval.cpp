#include "sagekb/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sagekb/error.hpp"
#include "sagekb/util.hpp"

namespace sagekb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  return "easy";
}

std::string_view to_string(Occurrence o) {
  switch (o) {
    case Occurrence::low: return "low";
    case Occurrence::medium: return "medium";
    case Occurrence::high: return "high";
  }
  return "low";
}

Difficulty difficulty_from_string(std::string_view s) {
  const std::string v = to_lower(trim_view(s));
  if (v == "easy") return Difficulty::easy;
  if (v == "medium") return Difficulty::medium;
  if (v == "hard") return Difficulty::hard;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown difficulty '{}'", s));
}

Occurrence occurrence_from_string(std::string_view s) {
  const std::string v = to_lower(trim_view(s));
  if (v == "low") return Occurrence::low;
  if (v == "medium") return Occurrence::medium;
  if (v == "high") return Occurrence::high;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown occurrence '{}'", s));
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

namespace {

std::string required_string(const json& row, const char* key, std::size_t line_no) {
  if (!row.contains(key) || !row[key].is_string()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("dataset line {}: missing string field '{}'", line_no, key));
  }
  return row[key].get<std::string>();
}

}  // namespace

std::vector<EvalQuery> parse_dataset(std::string_view jsonl) {
  std::vector<EvalQuery> out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(jsonl)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::invalid_argument, fmt::format("dataset line {}: {}", line_no, e.what()));
    }
    if (!row.is_object()) {
      throw Error(ErrorCode::invalid_argument, fmt::format("dataset line {}: not an object", line_no));
    }
    EvalQuery q;
    q.text = required_string(row, "text", line_no);
    if (trim_view(q.text).empty()) {
      throw Error(ErrorCode::invalid_argument, fmt::format("dataset line {}: empty text", line_no));
    }
    try {
      q.difficulty = difficulty_from_string(required_string(row, "difficulty", line_no));
      q.occurrence = occurrence_from_string(required_string(row, "occurrence", line_no));
    } catch (const Error& e) {
      throw Error(ErrorCode::invalid_argument,
                  std::string(e.what()).starts_with("dataset line")
                      ? std::string(e.what())
                      : fmt::format("dataset line {}: {}", line_no, e.what()));
    }
    if (row.contains("reference_answer") && row["reference_answer"].is_string()) {
      q.reference_answer = row["reference_answer"].get<std::string>();
    }
    q.id = row.contains("id") && row["id"].is_string() ? row["id"].get<std::string>()
                                                       : fmt::format("q{:04d}", out.size() + 1);
    out.push_back(std::move(q));
  }
  return out;
}

DatasetManifest parse_manifest(const json& j) {
  DatasetManifest m;
  try {
    for (const auto& cell : j.at("cells")) {
      const auto key = std::make_pair(occurrence_from_string(cell.at("occurrence").get<std::string>()),
                                      difficulty_from_string(cell.at("difficulty").get<std::string>()));
      m.cells[key] = cell.at("count").get<std::size_t>();
    }
    if (j.contains("total")) m.total = j["total"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, fmt::format("bad dataset manifest: {}", e.what()));
  }
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json cells = json::array();
  for (const auto& [key, count] : m.cells) {
    cells.push_back({{"occurrence", to_string(key.first)}, {"difficulty", to_string(key.second)}, {"count", count}});
  }
  json j = {{"cells", cells}};
  if (m.total) j["total"] = *m.total;
  return j;
}

DatasetManifest manifest_for(const std::vector<EvalQuery>& queries) {
  DatasetManifest m;
  for (const auto& q : queries) ++m.cells[{q.occurrence, q.difficulty}];
  m.total = queries.size();
  return m;
}

void validate_counts(const std::vector<EvalQuery>& queries, const DatasetManifest& manifest) {
  const DatasetManifest actual = manifest_for(queries);
  for (const auto& [key, declared] : manifest.cells) {
    const auto it = actual.cells.find(key);
    const std::size_t found = it == actual.cells.end() ? 0 : it->second;
    if (found != declared) {
      throw Error(ErrorCode::invalid_argument,
                  fmt::format("cell occurrence={} difficulty={} declares {} queries, found {}",
                              to_string(key.first), to_string(key.second), declared, found));
    }
  }
  if (manifest.total && *manifest.total != queries.size()) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("manifest declares {} queries, found {}", *manifest.total, queries.size()));
  }
}

std::vector<EvalQuery> load_dataset(const std::string& path, const std::optional<std::string>& manifest_path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, fmt::format("cannot read dataset {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  auto queries = parse_dataset(ss.str());

  std::optional<fs::path> mpath;
  if (manifest_path) {
    mpath = *manifest_path;
  } else {
    fs::path guess = fs::path(path);
    guess.replace_extension(".manifest.json");
    if (fs::exists(guess)) mpath = guess;
  }
  if (mpath) {
    std::ifstream min(*mpath);
    if (!min) throw Error(ErrorCode::not_found, fmt::format("cannot read manifest {}", mpath->string()));
    json j;
    try {
      j = json::parse(min);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::invalid_argument, fmt::format("bad dataset manifest: {}", e.what()));
    }
    validate_counts(queries, parse_manifest(j));
  }
  return queries;
}

std::string dataset_to_jsonl(const std::vector<EvalQuery>& queries) {
  std::string out;
  for (const auto& q : queries) {
    out += json(q).dump();
    out += '\n';
  }
  return out;
}

namespace {

constexpr std::string_view kPeople[] = {
    "Abraham Lincoln", "Marie Curie", "Isaac Newton", "Ada Lovelace", "Charles Darwin",
    "Rosalind Franklin", "Nikola Tesla", "Albert Einstein", "Gregor Mendel", "Louis Pasteur",
    "Dmitri Mendeleev", "Alan Turing", "Lise Meitner", "Michael Faraday", "Barbara McClintock"};
constexpr std::string_view kTopics[] = {
    "surfactant chemistry", "hair fibre structure", "emulsion stability", "polymer conditioning agents",
    "keratin protein", "skin barrier function", "silicone deposition", "scalp microbiome",
    "colour oxidation", "rheology modifiers", "foam formation", "micelle formation",
    "antioxidant stability", "UV filters", "protein hydrolysates"};
constexpr std::string_view kEvents[] = {
    "the Siege of Vicksburg", "the Industrial Revolution", "the Manhattan Project", "the Green Revolution",
    "the Human Genome Project", "the Apollo Program", "the Royal Society founding", "the Meiji Restoration"};

// Per-difficulty templates; {a}, {b}, {c} are entity slots. The number of
// named slots sets the keyword occurrence of the query.
struct Template {
  std::string_view text;
  int slots;
};

constexpr Template kEasy[] = {
    {"What year was {a} born?", 1},
    {"What is {a} best known for?", 1},
    {"Which field did {a} work in?", 1},
    {"Who worked alongside {a} on {b}?", 2},
    {"What did {a} discover about {b}?", 2},
    {"Did {a} study {b} or {c}?", 3},
    {"Which came first: {a}, {b} or {c}?", 3},
};
constexpr Template kMedium[] = {
    {"How did {a} influence later research?", 1},
    {"Why is {a} considered important in its field?", 1},
    {"How did {a} contribute to {b}?", 2},
    {"What connects {a} and {b}?", 2},
    {"Compare the roles of {a}, {b} and {c}.", 3},
    {"How are {a}, {b} and {c} related historically?", 3},
};
constexpr Template kHard[] = {
    {"Analyze the long-term consequences of {a} for modern science.", 1},
    {"Evaluate the evidence behind the claims made about {a}.", 1},
    {"Analyze the relationship between {a} and {b} and its wider impact.", 2},
    {"Critically assess how {a} shaped the development of {b}.", 2},
    {"Synthesize the contributions of {a}, {b} and {c} into a single account.", 3},
    {"Evaluate competing interpretations of {a}, {b} and {c} and their interplay.", 3},
};

// low: one named keyword; medium: two; high: three.
bool slots_match(int slots, Occurrence o) {
  switch (o) {
    case Occurrence::low: return slots == 1;
    case Occurrence::medium: return slots == 2;
    case Occurrence::high: return slots == 3;
  }
  return false;
}

std::string pick(std::mt19937_64& rng) {
  const std::size_t np = std::size(kPeople), nt = std::size(kTopics), ne = std::size(kEvents);
  const std::size_t r = rng() % (np + nt + ne);
  if (r < np) return std::string(kPeople[r]);
  if (r < np + nt) return std::string(kTopics[r - np]);
  return std::string(kEvents[r - np - nt]);
}

}  // namespace

std::vector<EvalQuery> synthetic_dataset(std::size_t per_cell, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EvalQuery> out;
  std::set<std::string> seen;
  for (Occurrence occ : kOccurrences) {
    for (Difficulty diff : kDifficulties) {
      std::span<const Template> templates;
      switch (diff) {
        case Difficulty::easy: templates = kEasy; break;
        case Difficulty::medium: templates = kMedium; break;
        case Difficulty::hard: templates = kHard; break;
      }
      std::vector<Template> usable;
      for (const auto& t : templates) {
        if (slots_match(t.slots, occ)) usable.push_back(t);
      }
      std::size_t made = 0;
      std::size_t attempts = 0;
      while (made < per_cell) {
        const Template& t = usable[rng() % usable.size()];
        std::vector<std::string> ents;
        while (static_cast<int>(ents.size()) < t.slots) {
          std::string e = pick(rng);
          if (std::find(ents.begin(), ents.end(), e) == ents.end()) ents.push_back(std::move(e));
        }
        std::map<std::string, std::string> vars;
        const char* names[] = {"a", "b", "c"};
        for (std::size_t i = 0; i < ents.size(); ++i) vars[names[i]] = ents[i];
        std::string text = render_template(t.text, vars);
        if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        // The entity pool cannot supply enough distinct queries for every
        // cell, so later duplicates get a numbered qualifier.
        if (!seen.insert(text).second) {
          if (++attempts < 50) continue;
          text = fmt::format("{} (variant {})", text, made + 1);
          if (!seen.insert(text).second) continue;
        }
        attempts = 0;
        EvalQuery q;
        q.text = text;
        q.difficulty = diff;
        q.occurrence = occ;
        q.reference_answer = fmt::format("A reference answer would discuss {}.", join(ents, ", "));
        out.push_back(std::move(q));
        ++made;
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = fmt::format("q{:04d}", i + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Metric parsing
// ---------------------------------------------------------------------------

namespace {

bool is_decimal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
  }
  return digits > 0 && i == s.size();
}

std::string first_nonblank_line(std::string_view text) {
  for (const auto& line : split_lines(text)) {
    std::string t = trim(line);
    if (!t.empty()) return t;
  }
  return {};
}

}  // namespace

double parse_correctness(std::string_view judge_output) {
  const std::string line = first_nonblank_line(judge_output);
  if (!is_decimal(line)) {
    throw Error(ErrorCode::parse_failure,
                fmt::format("correctness judge did not start with a number: '{}'", line.substr(0, 80)));
  }
  double v = 0.0;
  const char* begin = line.data() + (line[0] == '+' ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(begin, line.data() + line.size(), v);
  if (ec != std::errc{} || ptr != line.data() + line.size()) {
    throw Error(ErrorCode::parse_failure, fmt::format("unreadable correctness score '{}'", line));
  }
  if (!(v >= 1.0 && v <= 5.0)) {
    throw Error(ErrorCode::out_of_range, fmt::format("correctness score {} is outside [1, 5]", line));
  }
  return v;
}

bool parse_verdict(std::string_view judge_output) {
  const std::string line = first_nonblank_line(judge_output);
  std::size_t end = 0;
  while (end < line.size() && std::isalpha(static_cast<unsigned char>(line[end]))) ++end;
  const std::string token = to_lower(std::string_view(line).substr(0, end));
  const bool boundary = end == line.size() || !std::isalnum(static_cast<unsigned char>(line[end]));
  if (boundary && token == "yes") return true;
  if (boundary && token == "no") return false;
  throw Error(ErrorCode::parse_failure, fmt::format("expected YES or NO, got '{}'", line.substr(0, 80)));
}

double score_faithfulness(std::span<const Statement> statements) {
  if (statements.empty()) throw Error(ErrorCode::zero_statements, "faithfulness is undefined for zero statements");
  std::size_t verified = 0;
  for (const auto& s : statements) {
    if (!s.verified) throw Error(ErrorCode::unset_verdict, fmt::format("statement '{}' has no verdict", s.text));
    if (*s.verified) ++verified;
  }
  return static_cast<double>(verified) / static_cast<double>(statements.size());
}

double concept_ratio(const std::vector<bool>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::zero_concepts, "relevance is undefined for zero concepts");
  const auto n = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
  return static_cast<double>(n) / static_cast<double>(relevant.size());
}

std::string_view to_string(RelevanceMode m) { return m == RelevanceMode::concepts ? "concepts" : "binary"; }

RelevanceMode relevance_mode_from_string(std::string_view s) {
  const std::string v = to_lower(trim_view(s));
  if (v == "concepts" || v == "concept") return RelevanceMode::concepts;
  if (v == "binary") return RelevanceMode::binary;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown relevance mode '{}'", s));
}

// ---------------------------------------------------------------------------
// Judge
// ---------------------------------------------------------------------------

Judge::Judge(ChatProvider& judge, PromptLibrary prompts, RelevanceMode relevance)
    : judge_(judge), prompts_(std::move(prompts)), relevance_(relevance) {}

std::string Judge::ask(std::string_view prompt_name, const std::map<std::string, std::string>& vars) const {
  return judge_.complete(ChatRequest::single_turn(prompts_.render(prompt_name, vars))).text;
}

double Judge::score_correctness(const std::string& query, const std::string& generated,
                                const std::string& reference) const {
  if (trim_view(reference).empty()) throw Error(ErrorCode::invalid_argument, "correctness needs a reference answer");
  return parse_correctness(
      ask(prompt::kJudgeCorrectness, {{"query", query}, {"reference", reference}, {"answer", generated}}));
}

std::vector<Statement> Judge::decompose_statements(const std::string& answer) const {
  if (trim_view(answer).empty()) throw Error(ErrorCode::invalid_argument, "answer is empty");
  std::vector<Statement> out;
  for (const auto& line : split_lines(ask(prompt::kDecomposeStatements, {{"answer", answer}}))) {
    std::string s = strip_list_marker(line);
    if (!s.empty()) out.push_back({std::move(s), std::nullopt});
  }
  if (out.empty()) throw Error(ErrorCode::zero_statements, "decomposition produced no statements");
  return out;
}

bool Judge::verify_statement(const std::string& statement, const std::string& context) const {
  if (trim_view(context).empty()) throw Error(ErrorCode::invalid_argument, "verification needs a context");
  return parse_verdict(ask(prompt::kVerifyStatement, {{"context", context}, {"statement", statement}}));
}

FaithfulnessResult Judge::faithfulness(const std::string& answer, const std::string& context) const {
  FaithfulnessResult r;
  r.statements = decompose_statements(answer);
  const bool no_context = trim_view(context).empty();
  for (auto& s : r.statements) s.verified = no_context ? false : verify_statement(s.text, context);
  r.score = score_faithfulness(r.statements);
  return r;
}

RelevanceResult Judge::relevance(const std::string& answer, const std::string& query) const {
  if (trim_view(answer).empty()) throw Error(ErrorCode::invalid_argument, "answer is empty");
  RelevanceResult r;
  if (relevance_ == RelevanceMode::binary) {
    const bool yes = parse_verdict(ask(prompt::kJudgeRelevanceBinary, {{"query", query}, {"answer", answer}}));
    r.score = yes ? 1.0 : 0.0;
    return r;
  }
  for (const auto& line : split_lines(ask(prompt::kExtractConcepts, {{"answer", answer}}))) {
    std::string c = strip_list_marker(line);
    if (!c.empty()) r.concepts.push_back(std::move(c));
  }
  if (r.concepts.empty()) throw Error(ErrorCode::zero_concepts, "concept extraction produced nothing");
  for (const auto& c : r.concepts) {
    r.relevant.push_back(parse_verdict(ask(prompt::kJudgeConcept, {{"query", query}, {"concept", c}})));
  }
  r.score = concept_ratio(r.relevant);
  return r;
}

std::string context_text(const ContextBundle& bundle) {
  std::string out;
  for (std::size_t i = 0; i < bundle.entries.size(); ++i) {
    out += fmt::format("[{}] {}\n", i + 1, bundle.entries[i].text);
  }
  for (const auto& t : bundle.triples) out += fmt::format("{} | {} | {}\n", t.subject, t.predicate, t.object);
  return out;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

SuiteResult run_suite(const RagEngine& rag, const KbSnapshot& kb, const Judge& judge,
                      const std::vector<EvalQuery>& dataset, const std::vector<RetrievalMode>& modes,
                      const SuiteOptions& options,
                      const std::function<void(std::size_t, std::size_t)>& progress) {
  if (modes.empty()) throw Error(ErrorCode::invalid_argument, "no retrieval modes given");
  SuiteResult result;
  const std::size_t total = dataset.size() * modes.size();
  result.records.resize(total);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;

  parallel_for(total, options.parallelism, [&](std::size_t i) {
    EvalRecord r;
    r.query = dataset[i / modes.size()];
    r.mode = modes[i % modes.size()];
    std::string stage = "answer";
    try {
      const auto ans = rag.chat(kb, r.mode, r.query.text, {}, options.k, options.depth);
      r.answer = ans.answer;
      r.context_digest = ans.context.digest();
      if (r.query.reference_answer) {
        stage = "correctness";
        r.correctness = judge.score_correctness(r.query.text, ans.answer, *r.query.reference_answer);
      }
      stage = "faithfulness";
      const auto f = judge.faithfulness(ans.answer, context_text(ans.context));
      r.faithfulness = f.score;
      r.statement_total = f.statements.size();
      r.statement_verified = static_cast<std::size_t>(
          std::count_if(f.statements.begin(), f.statements.end(), [](const Statement& s) { return *s.verified; }));
      stage = "relevance";
      const auto rel = judge.relevance(ans.answer, r.query.text);
      r.relevance = rel.score;
      r.concept_total = rel.concepts.size();
      r.concept_relevant = static_cast<std::size_t>(std::count(rel.relevant.begin(), rel.relevant.end(), true));
    } catch (const Error& e) {
      r.error = fmt::format("{}: {}", api_code(e.code()), e.what());
      r.error_stage = stage;
      r.correctness.reset();
      r.relevance.reset();
      r.faithfulness.reset();
    }
    result.records[i] = std::move(r);
    const std::size_t n = ++done;
    if (progress) {
      std::lock_guard lock(progress_mu);
      progress(n, total);
    }
  });

  result.failed = static_cast<std::size_t>(
      std::count_if(result.records.begin(), result.records.end(), [](const EvalRecord& r) { return r.failed(); }));
  result.threshold_exceeded =
      total > 0 && static_cast<double>(result.failed) / static_cast<double>(total) > options.max_failure_rate;
  if (result.failed > 0) {
    spdlog::warn("{} of {} evaluations failed and are excluded from aggregation", result.failed, total);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

std::string_view to_string(GroupBy g) {
  switch (g) {
    case GroupBy::difficulty: return "difficulty";
    case GroupBy::occurrence: return "occurrence";
    case GroupBy::difficulty_occurrence: return "difficulty_occurrence";
    case GroupBy::all: return "all";
  }
  return "all";
}

std::pair<double, double> mean_and_stddev(std::vector<double> values) {
  if (values.empty()) return {0.0, 0.0};
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double v : sq) ss += v;
  return {mean, std::sqrt(ss / n)};
}

namespace {

std::optional<double> metric_of(const EvalRecord& r, std::string_view metric) {
  if (metric == "correctness") return r.correctness;
  if (metric == "relevance") return r.relevance;
  return r.faithfulness;
}

}  // namespace

std::vector<AggregateCell> aggregate(const std::vector<EvalRecord>& records, GroupBy group_by) {
  if (records.empty()) throw Error(ErrorCode::invalid_argument, "cannot aggregate zero records");
  // Group keys in a fixed order: difficulty, occurrence, mode, metric.
  using Key = std::tuple<int, int, int, int>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : records) {
    if (r.failed()) continue;
    const bool by_diff = group_by == GroupBy::difficulty || group_by == GroupBy::difficulty_occurrence;
    const bool by_occ = group_by == GroupBy::occurrence || group_by == GroupBy::difficulty_occurrence;
    const int d = by_diff ? static_cast<int>(r.query.difficulty) : -1;
    const int o = by_occ ? static_cast<int>(r.query.occurrence) : -1;
    for (int m = 0; m < static_cast<int>(std::size(kMetrics)); ++m) {
      if (auto v = metric_of(r, kMetrics[m])) groups[{d, o, static_cast<int>(r.mode), m}].push_back(*v);
    }
  }
  std::vector<AggregateCell> cells;
  for (auto& [key, values] : groups) {
    const auto [d, o, mode, m] = key;
    AggregateCell c;
    c.difficulty = d < 0 ? "all" : std::string(to_string(static_cast<Difficulty>(d)));
    c.occurrence = o < 0 ? "all" : std::string(to_string(static_cast<Occurrence>(o)));
    c.mode = static_cast<RetrievalMode>(mode);
    c.metric = std::string(kMetrics[m]);
    c.n = values.size();
    std::tie(c.mean, c.stddev) = mean_and_stddev(std::move(values));
    cells.push_back(std::move(c));
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

std::string num(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string{}; }

void write_text(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::storage, fmt::format("cannot write {}", p.string()));
}

}  // namespace

std::string records_csv(const std::vector<EvalRecord>& records) {
  std::string out =
      "query_id,difficulty,occurrence,mode,correctness,relevance,faithfulness,statement_total,"
      "statement_verified,concept_total,concept_relevant,context_digest,error_stage,error,query\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(r.query.id),
                       to_string(r.query.difficulty), to_string(r.query.occurrence), to_string(r.mode),
                       num(r.correctness), num(r.relevance), num(r.faithfulness), r.statement_total,
                       r.statement_verified, r.concept_total, r.concept_relevant, r.context_digest,
                       csv_field(r.error_stage.value_or("")), csv_field(r.error.value_or("")),
                       csv_field(r.query.text));
  }
  return out;
}

std::string aggregates_csv(const std::vector<AggregateCell>& cells, GroupBy group_by) {
  std::string out = "group_by,difficulty,occurrence,mode,metric,n,mean,stddev\n";
  for (const auto& c : cells) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(group_by), c.difficulty, c.occurrence,
                       to_string(c.mode), c.metric, c.n, c.mean, c.stddev);
  }
  return out;
}

json eval_bundle(const SuiteResult& result) {
  json aggregates = json::object();
  if (std::any_of(result.records.begin(), result.records.end(), [](const EvalRecord& r) { return !r.failed(); })) {
    for (GroupBy g : {GroupBy::difficulty, GroupBy::occurrence, GroupBy::difficulty_occurrence, GroupBy::all}) {
      aggregates[std::string(to_string(g))] = aggregate(result.records, g);
    }
  }
  return {{"records", result.records},
          {"aggregates", aggregates},
          {"record_count", result.records.size()},
          {"failed", result.failed},
          {"threshold_exceeded", result.threshold_exceeded}};
}

std::string bar_chart_svg(const std::vector<AggregateCell>& cells, std::string_view metric,
                          std::string_view title) {
  std::vector<std::string> groups;
  std::vector<RetrievalMode> modes;
  for (const auto& c : cells) {
    if (c.metric != metric) continue;
    const std::string g = c.occurrence == "all" ? c.difficulty
                          : c.difficulty == "all" ? c.occurrence
                                                  : c.difficulty + "/" + c.occurrence;
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
    if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
  }
  std::sort(modes.begin(), modes.end());
  const double y_max = metric == "correctness" ? 5.0 : 1.0;
  const int width = std::max(480, 120 + static_cast<int>(groups.size()) * 110);
  const int height = 360;
  const int left = 60, right = 20, top = 40, bottom = 70;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto y_of = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, y_max) / y_max); };
  static constexpr std::string_view kColors[] = {"#4e79a7", "#f28e2b", "#59a14f"};

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      width, height, width, height);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", width, height);
  svg += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", width / 2, title);
  for (int t = 0; t <= 5; ++t) {
    const double v = y_max * t / 5.0;
    const double y = y_of(v);
    svg += fmt::format("<line x1=\"{}\" y1=\"{:.1f}\" x2=\"{}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", left, y,
                       width - right, y);
    svg += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n", left - 6, y + 4, v);
  }
  svg += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", left, top, left,
                     top + static_cast<int>(plot_h));

  const double group_w = groups.empty() ? plot_w : plot_w / static_cast<double>(groups.size());
  const double bar_w = modes.empty() ? 0.0 : group_w * 0.8 / static_cast<double>(modes.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double gx = left + group_w * static_cast<double>(gi) + group_w * 0.1;
    for (const auto& c : cells) {
      if (c.metric != metric) continue;
      const std::string g = c.occurrence == "all" ? c.difficulty
                            : c.difficulty == "all" ? c.occurrence
                                                    : c.difficulty + "/" + c.occurrence;
      if (g != groups[gi]) continue;
      const auto mi = static_cast<std::size_t>(std::find(modes.begin(), modes.end(), c.mode) - modes.begin());
      const double x = gx + bar_w * static_cast<double>(mi);
      const double y = y_of(c.mean);
      svg += fmt::format(
          "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"><title>{} {} "
          "mean={:.4f} sd={:.4f} n={}</title></rect>\n",
          x, y, bar_w * 0.92, top + plot_h - y, kColors[static_cast<int>(c.mode) % 3], g, to_string(c.mode),
          c.mean, c.stddev, c.n);
      const double cx = x + bar_w * 0.46;
      const double y_lo = y_of(c.mean - c.stddev);
      const double y_hi = y_of(c.mean + c.stddev);
      svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n", cx,
                         y_lo, cx, y_hi);
      svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n",
                         cx - 4, y_hi, cx + 4, y_hi);
      svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n",
                         cx - 4, y_lo, cx + 4, y_lo);
    }
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", gx + group_w * 0.4,
                       top + static_cast<int>(plot_h) + 18, groups[gi]);
  }
  for (std::size_t mi = 0; mi < modes.size(); ++mi) {
    const int lx = left + static_cast<int>(mi) * 110;
    const int ly = height - 22;
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", lx, ly - 10,
                       kColors[static_cast<int>(modes[mi]) % 3]);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", lx + 16, ly, to_string(modes[mi]));
  }
  svg += "</svg>\n";
  return svg;
}

void write_plots_from_bundle(const json& bundle, const std::string& dir) {
  fs::create_directories(dir);
  const json& aggs = bundle.at("aggregates");
  for (const auto& [group, suffix] : {std::pair{"difficulty", "by_difficulty"},
                                      std::pair{"difficulty_occurrence", "by_cell"}}) {
    if (!aggs.contains(group)) continue;
    const auto cells = aggs.at(group).get<std::vector<AggregateCell>>();
    for (std::string_view metric : kMetrics) {
      write_text(fs::path(dir) / fmt::format("plot_{}_{}.svg", metric, suffix),
                 bar_chart_svg(cells, metric, fmt::format("{} by {}", metric, group)));
    }
  }
}

void write_eval_outputs(const SuiteResult& result, const std::string& dir) {
  fs::create_directories(dir);
  write_text(fs::path(dir) / "records.csv", records_csv(result.records));
  std::string agg_csv;
  bool any = false;
  for (GroupBy g : {GroupBy::difficulty, GroupBy::occurrence, GroupBy::difficulty_occurrence, GroupBy::all}) {
    if (std::all_of(result.records.begin(), result.records.end(), [](const EvalRecord& r) { return r.failed(); })) {
      break;
    }
    const std::string part = aggregates_csv(aggregate(result.records, g), g);
    agg_csv += any ? part.substr(part.find('\n') + 1) : part;
    any = true;
  }
  if (!any) agg_csv = "group_by,difficulty,occurrence,mode,metric,n,mean,stddev\n";
  write_text(fs::path(dir) / "aggregates.csv", agg_csv);
  const json bundle = eval_bundle(result);
  write_text(fs::path(dir) / "bundle.json", bundle.dump(2) + "\n");
  write_plots_from_bundle(bundle, dir);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void to_json(json& j, const EvalQuery& q) {
  j = {{"id", q.id},
       {"text", q.text},
       {"difficulty", to_string(q.difficulty)},
       {"occurrence", to_string(q.occurrence)}};
  if (q.reference_answer) j["reference_answer"] = *q.reference_answer;
}

void to_json(json& j, const EvalRecord& r) {
  j = {{"query", r.query},
       {"mode", to_string(r.mode)},
       {"answer", r.answer},
       {"context_digest", r.context_digest},
       {"correctness", opt(r.correctness)},
       {"relevance", opt(r.relevance)},
       {"faithfulness", opt(r.faithfulness)},
       {"statement_total", r.statement_total},
       {"statement_verified", r.statement_verified},
       {"concept_total", r.concept_total},
       {"concept_relevant", r.concept_relevant},
       {"error", opt(r.error)},
       {"error_stage", opt(r.error_stage)}};
}

void from_json(const json& j, EvalRecord& r) {
  const json& q = j.at("query");
  r.query.id = q.value("id", "");
  r.query.text = q.at("text").get<std::string>();
  r.query.difficulty = difficulty_from_string(q.at("difficulty").get<std::string>());
  r.query.occurrence = occurrence_from_string(q.at("occurrence").get<std::string>());
  if (q.contains("reference_answer")) r.query.reference_answer = q["reference_answer"].get<std::string>();
  r.mode = retrieval_mode_from_string(j.at("mode").get<std::string>());
  r.answer = j.value("answer", "");
  r.context_digest = j.value("context_digest", "");
  auto get_opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<double>();
  };
  r.correctness = get_opt("correctness");
  r.relevance = get_opt("relevance");
  r.faithfulness = get_opt("faithfulness");
  r.statement_total = j.value("statement_total", std::size_t{0});
  r.statement_verified = j.value("statement_verified", std::size_t{0});
  r.concept_total = j.value("concept_total", std::size_t{0});
  r.concept_relevant = j.value("concept_relevant", std::size_t{0});
  if (j.contains("error") && j["error"].is_string()) r.error = j["error"].get<std::string>();
  if (j.contains("error_stage") && j["error_stage"].is_string()) r.error_stage = j["error_stage"].get<std::string>();
}

void to_json(json& j, const AggregateCell& c) {
  j = {{"difficulty", c.difficulty}, {"occurrence", c.occurrence}, {"mode", to_string(c.mode)},
       {"metric", c.metric},         {"mean", c.mean},             {"stddev", c.stddev},
       {"n", c.n}};
}

void from_json(const json& j, AggregateCell& c) {
  c.difficulty = j.at("difficulty").get<std::string>();
  c.occurrence = j.at("occurrence").get<std::string>();
  c.mode = retrieval_mode_from_string(j.at("mode").get<std::string>());
  c.metric = j.at("metric").get<std::string>();
  c.mean = j.at("mean").get<double>();
  c.stddev = j.at("stddev").get<double>();
  c.n = j.at("n").get<std::size_t>();
}

}  // namespace sagekb
