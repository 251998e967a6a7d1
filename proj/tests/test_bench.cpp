// Benchmark harness tests: dataset loaders with their schema errors, the
// three protocols end to end against the fixture judge, and the candidate
// perturbation generator.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimson/bench.hpp"
#include "support.hpp"

using namespace crimson;
using nlohmann::json;
using testsupport::AnnotationBuilder;
using testsupport::TempDir;

namespace {

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

RubricText test_rubric() {
    RubricText r;
    r.significance_rubric = "SIGNIFICANCE BLOCK";
    r.attribute_rules = "ATTRIBUTE BLOCK";
    r.output_schema_instructions = "SCHEMA BLOCK";
    r.version = "test-1";
    return r;
}

// Parks a canned annotation where the mock judge will find it for the exact
// prompt the evaluator is going to build.
struct FixturePlanter {
    TempDir& dir;
    RubricText rubric = test_rubric();

    void put(const std::string& reference, const std::string& candidate,
             const std::optional<PatientContext>& context,
             const EvaluationAnnotation& annotation) const {
        auto prompt = build_prompt(reference, candidate, context, rubric);
        dir.write(MockJudge::request_hash(prompt) + ".txt",
                  serialize_annotation(annotation));
    }
};

// Counts completions so tests can prove there is one judging pass per pair.
struct CountingJudge : Judge {
    Judge& inner;
    std::atomic<int> calls{0};

    explicit CountingJudge(Judge& judge) : inner(judge) {}
    std::string complete(const ChatRequest& request) override {
        ++calls;
        return inner.complete(request);
    }
    std::string model_name() const override { return inner.model_name(); }
};

JudgeConfig one_run_config() {
    JudgeConfig config;
    config.run_count = 1;
    config.max_retries = 0;
    return config;
}

void write_jsonl(TempDir& dir, const std::string& name, const std::vector<json>& records) {
    std::string text;
    for (const auto& rec : records) text += rec.dump() + "\n";
    dir.write(name, text);
}

template <typename Fn>
void expect_dataset_error(Fn&& fn, DatasetError::Kind kind, int line = -1,
                          const std::string& needle = "") {
    try {
        fn();
        FAIL_CHECK("expected a dataset error");
    } catch (const DatasetError& e) {
        CHECK(e.kind() == kind);
        if (line >= 0) CHECK(e.line() == line);
        if (!needle.empty()) CHECK(contains(e.what(), needle));
    }
}

const auto kUrgent = SignificanceLevel::Urgent;
const auto kNonActionable = SignificanceLevel::NonActionable;

// Single urgent reference finding, matched cleanly: final score 1.0.
EvaluationAnnotation perfect_annotation() {
    return AnnotationBuilder().ref("r1", kUrgent).matched("r1").build();
}

// Single urgent reference finding, matched, plus k urgent hallucinations.
EvaluationAnnotation k_false_annotation(int k) {
    AnnotationBuilder b;
    b.ref("r1", kUrgent).matched("r1");
    for (int i = 0; i < k; ++i)
        b.false_finding("f" + std::to_string(i + 1), kUrgent);
    return b.build();
}

}  // namespace

// ---------------------------------------------------------------------------
// Pairs loader

TEST_CASE("pairs loader reads records and normalizes newlines") {
    TempDir dir("bench");
    write_jsonl(dir, "pairs.jsonl",
                {json{{"case_id", "c1"},
                      {"reference", "LINE1\r\nLINE2"},
                      {"candidate", "cand one"},
                      {"context", {{"age", 63}, {"indication", "dyspnea"}}},
                      {"annotated_significant_errors", 2}},
                 json{{"case_id", "c2"},
                      {"reference", "ref two"},
                      {"candidate", "cand two"}}});

    auto cases = load_pairs_dataset(dir.path() / "pairs.jsonl");
    REQUIRE(cases.size() == 2);
    CHECK(cases[0].case_id == "c1");
    CHECK(cases[0].reference == "LINE1\nLINE2");
    REQUIRE(cases[0].context.has_value());
    CHECK(cases[0].context->age == 63);
    CHECK(cases[0].context->indication == "dyspnea");
    CHECK(cases[0].annotated_significant_errors == 2);
    CHECK_FALSE(cases[1].context.has_value());
    CHECK_FALSE(cases[1].annotated_significant_errors.has_value());
}

TEST_CASE("pairs loader rejects structural problems with line numbers") {
    TempDir dir("bench");
    auto path = dir.path() / "pairs.jsonl";
    auto load = [&] { load_pairs_dataset(path); };

    expect_dataset_error([&] { load_pairs_dataset(dir.path() / "nope.jsonl"); },
                         DatasetError::Kind::FileNotFound);

    json good{{"case_id", "c1"}, {"reference", "r"}, {"candidate", "c"}};

    dir.write("pairs.jsonl", good.dump() + "\n\nnot json\n");
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 3, "not valid JSON");

    dir.write("pairs.jsonl", "[1, 2]\n");
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "JSON object");

    write_jsonl(dir, "pairs.jsonl", {good, json{{"case_id", "c2"}, {"reference", "r"},
                                                {"candidate", "c"}, {"extra", 1}}});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 2, "unknown field");

    write_jsonl(dir, "pairs.jsonl", {json{{"case_id", "c1"}, {"reference", "r"}}});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "candidate");

    write_jsonl(dir, "pairs.jsonl",
                {json{{"case_id", "c1"}, {"reference", "   "}, {"candidate", "c"}}});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "must not be empty");

    write_jsonl(dir, "pairs.jsonl", {good, good});
    expect_dataset_error(load, DatasetError::Kind::DuplicateCaseId, 2, "c1");

    write_jsonl(dir, "pairs.jsonl",
                {json{{"case_id", "c1"}, {"reference", "r"}, {"candidate", "c"},
                      {"context", {{"age", 200}}}}});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "age out of range");

    write_jsonl(dir, "pairs.jsonl",
                {json{{"case_id", "c1"}, {"reference", "r"}, {"candidate", "c"},
                      {"annotated_significant_errors", -1}}});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, ">= 0");
}

// ---------------------------------------------------------------------------
// Ranking loader

namespace {

json ranking_record(const std::string& id, json expected) {
    return json{{"case_id", id},
                {"category", "demo"},
                {"reference", "ref"},
                {"candidates", json::array({json{{"label", "a"}, {"report", "cand a"}},
                                            json{{"label", "b"}, {"report", "cand b"}}})},
                {"expected", std::move(expected)}};
}

}  // namespace

TEST_CASE("ranking loader accepts order and equivalence expectations") {
    TempDir dir("bench");
    write_jsonl(dir, "rank.jsonl",
                {ranking_record("r1", json{{"order", json::array({"a", "b"})}}),
                 ranking_record("r2", json{{"equivalent", json::array({"a", "b"})}})});
    auto cases = load_ranking_dataset(dir.path() / "rank.jsonl");
    REQUIRE(cases.size() == 2);
    CHECK(cases[0].expected.is_order());
    CHECK(cases[0].expected.order == std::vector<std::string>{"a", "b"});
    CHECK_FALSE(cases[1].expected.is_order());
    CHECK(cases[1].expected.equivalent == std::vector<std::string>{"a", "b"});
    CHECK(cases[0].candidates[1].label == "b");
}

TEST_CASE("ranking loader rejects malformed expectations") {
    TempDir dir("bench");
    auto path = dir.path() / "rank.jsonl";
    auto load = [&] { load_ranking_dataset(path); };

    auto rec = ranking_record("r1", json{{"order", json::array({"a", "b"})}});
    rec["candidates"] = json::array({json{{"label", "a"}, {"report", "cand a"}}});
    write_jsonl(dir, "rank.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "at least two");

    rec = ranking_record("r1", json{{"order", json::array({"a", "b"})}});
    rec["candidates"][1]["label"] = "a";
    write_jsonl(dir, "rank.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "label");

    write_jsonl(dir, "rank.jsonl",
                {ranking_record("r1", json{{"order", json::array({"a", "b"})},
                                           {"equivalent", json::array({"a", "b"})}})});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "exactly one");

    write_jsonl(dir, "rank.jsonl", {ranking_record("r1", json::object())});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "exactly one");

    write_jsonl(dir, "rank.jsonl",
                {ranking_record("r1", json{{"order", json::array({"a"})}})});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1,
                         "every candidate label");

    write_jsonl(dir, "rank.jsonl",
                {ranking_record("r1", json{{"order", json::array({"a", "zz"})}})});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "zz");

    write_jsonl(dir, "rank.jsonl",
                {ranking_record("r1", json{{"equivalent", json::array({"a"})}})});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "at least two");
}

// ---------------------------------------------------------------------------
// Preference loader

namespace {

json preference_record(const std::string& id, bool with_rater_errors) {
    json rec{{"case_id", id},
             {"reference", "ref " + id},
             {"candidate_a", "cand a " + id},
             {"candidate_b", "cand b " + id},
             {"ratings_a", json::array({5, 4})},
             {"ratings_b", json::array({2, 2})}};
    if (with_rater_errors) {
        rec["rater_errors"] = json::array(
            {json{{"rater", "alice"}, {"a", json::array()}, {"b", json::array()}},
             json{{"rater", "bob"}, {"a", json::array()}, {"b", json::array()}}});
    }
    return rec;
}

}  // namespace

TEST_CASE("preference loader reads ratings and optional rater errors") {
    TempDir dir("bench");
    auto rec = preference_record("p1", true);
    rec["rater_errors"][0]["a"] = json::array(
        {json{{"class", "false"}, {"finding_id", "f1"}, {"significance", "urgent"}}});
    write_jsonl(dir, "pref.jsonl", {rec, preference_record("p2", true)});

    auto cases = load_preference_dataset(dir.path() / "pref.jsonl");
    REQUIRE(cases.size() == 2);
    CHECK(cases[0].ratings_a == std::vector<int>{5, 4});
    CHECK(cases[0].ratings_b == std::vector<int>{2, 2});
    REQUIRE(cases[0].rater_errors.size() == 2);
    CHECK(cases[0].rater_errors[0].rater == "alice");
    REQUIRE(cases[0].rater_errors[0].candidate_a.size() == 1);
    CHECK(cases[0].rater_errors[0].candidate_a[0].error_class == "false");
    CHECK(cases[0].rater_errors[0].candidate_a[0].significance == kUrgent);
}

TEST_CASE("preference loader rejects rating and annotation problems") {
    TempDir dir("bench");
    auto path = dir.path() / "pref.jsonl";
    auto load = [&] { load_preference_dataset(path); };

    auto rec = preference_record("p1", false);
    rec["ratings_b"] = json::array({2});
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1);

    rec = preference_record("p1", false);
    rec["ratings_a"][0] = 6;
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1);

    rec = preference_record("p1", false);
    rec["ratings_a"][0] = 0;
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1);

    // rater_errors must cover every record or none.
    write_jsonl(dir, "pref.jsonl",
                {preference_record("p1", true), preference_record("p2", false)});
    expect_dataset_error(load, DatasetError::Kind::AnnotationMismatch);

    rec = preference_record("p1", true);
    rec["rater_errors"][1]["rater"] = "alice";
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "alice");

    rec = preference_record("p1", true);
    rec["rater_errors"][0]["a"] = json::array(
        {json{{"class", "typo"}, {"finding_id", "f1"}, {"significance", "urgent"}}});
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "typo");

    rec = preference_record("p1", true);
    rec["rater_errors"][0]["a"] = json::array(
        {json{{"class", "false"}, {"finding_id", "f1"}, {"significance", "fatal"}}});
    write_jsonl(dir, "pref.jsonl", {rec});
    expect_dataset_error(load, DatasetError::Kind::SchemaViolation, 1, "fatal");
}

// ---------------------------------------------------------------------------
// Correlation protocol

namespace {

// Four pair cases whose judged quality degrades with the annotated error
// count: k urgent hallucinations on top of one clean match.
std::vector<ScoredPairCase> correlation_cases(const FixturePlanter& planter) {
    std::vector<ScoredPairCase> cases;
    for (int k = 0; k < 4; ++k) {
        ScoredPairCase c;
        c.case_id = "c" + std::to_string(k + 1);
        c.reference = "reference report " + std::to_string(k);
        c.candidate = "candidate report " + std::to_string(k);
        c.annotated_significant_errors = k;
        planter.put(c.reference, c.candidate, std::nullopt, k_false_annotation(k));
        cases.push_back(std::move(c));
    }
    return cases;
}

CorrelationOptions fast_ci_options() {
    CorrelationOptions options;
    options.ci_resamples = 200;
    return options;
}

}  // namespace

TEST_CASE("correlation flips the score sign and recovers tau = 1") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    auto cases = correlation_cases(planter);

    MockJudge mock(dir.path());
    CountingJudge counting(mock);
    PairEvaluator evaluator(counting, one_run_config(), planter.rubric);

    auto report = run_correlation(cases, evaluator, fast_ci_options());

    // One judging pass per pair; the three series reuse those annotations.
    CHECK(counting.calls == 4);

    CHECK(report.case_ids == std::vector<std::string>{"c1", "c2", "c3", "c4"});
    CHECK(report.ground_truth == std::vector<double>{0.0, 1.0, 2.0, 3.0});
    // Finals for k = 0..3 urgent hallucinations: 1, 0, -1/2, -2/3.
    CHECK(report.mean_final[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report.mean_final[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(report.mean_final[2] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(report.mean_final[3] == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
    CHECK(report.mean_error_count == std::vector<double>{0.0, 1.0, 2.0, 3.0});

    REQUIRE(report.series.size() == 3);
    const auto& score = report.series[0];
    CHECK(score.series == "crimson_score");
    CHECK(score.sign_flipped);
    CHECK(*score.tau_a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*score.tau_b == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*score.pearson > 0.8);
    REQUIRE(score.tau_b_ci.has_value());
    CHECK(score.tau_b_ci->resamples == 200);

    const auto& counts = report.series[1];
    CHECK(counts.series == "error_count");
    CHECK_FALSE(counts.sign_flipped);
    CHECK(*counts.tau_b == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*counts.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report.series[2].series == "weighted_error_count");
}

TEST_CASE("correlation output does not depend on worker count") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    auto cases = correlation_cases(planter);
    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);

    auto serial = fast_ci_options();
    auto threaded = fast_ci_options();
    threaded.concurrency = 3;
    auto a = to_json(run_correlation(cases, evaluator, serial));
    auto b = to_json(run_correlation(cases, evaluator, threaded));
    CHECK(a.dump() == b.dump());
}

TEST_CASE("correlation demands ground truth on every case") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    auto cases = correlation_cases(planter);
    cases[2].annotated_significant_errors.reset();
    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);
    expect_dataset_error([&] { run_correlation(cases, evaluator, fast_ci_options()); },
                         DatasetError::Kind::MissingGroundTruth, -1, "c3");
}

TEST_CASE("correlation skips judge failures only when asked") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    auto cases = correlation_cases(planter);
    ScoredPairCase broken;
    broken.case_id = "c9";
    broken.reference = "fixture-less reference";
    broken.candidate = "fixture-less candidate";
    broken.annotated_significant_errors = 5;
    cases.push_back(broken);  // no fixture planted for this pair

    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);

    CHECK_THROWS_AS(run_correlation(cases, evaluator, fast_ci_options()), JudgeError);

    auto options = fast_ci_options();
    options.skip_failed = true;
    auto report = run_correlation(cases, evaluator, options);
    CHECK(report.skipped_case_ids == std::vector<std::string>{"c9"});
    CHECK(report.case_ids.size() == 4);

    // Fewer than two survivors is not a report worth emitting.
    std::vector<ScoredPairCase> tiny{cases[0], broken};
    expect_dataset_error([&] { run_correlation(tiny, evaluator, options); },
                         DatasetError::Kind::SchemaViolation, -1, "fewer than two");
}

TEST_CASE("correlation report document and table carry the series") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    auto cases = correlation_cases(planter);
    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);
    auto report = run_correlation(cases, evaluator, fast_ci_options());

    auto doc = to_json(report);
    CHECK(doc["protocol"] == "correlation");
    CHECK(doc["cases"].size() == 4);
    CHECK(doc["series"].size() == 3);
    CHECK(doc["ci"]["resamples"] == 200);
    CHECK(doc["cases"][0]["case_id"] == "c1");

    auto table = render_table(report);
    CHECK(contains(table, "crimson_score (sign flipped)"));
    CHECK(contains(table, "error_count"));
    CHECK(contains(table, "4 cases"));
}

// ---------------------------------------------------------------------------
// Ranking protocol

namespace {

// Reference pool worth 25.0: 24 urgent findings plus 4 non-actionable ones.
// Matching exactly one non-actionable finding scores 0.25 / 25 = 0.01, so a
// candidate pair (one such match vs nothing matched) sits exactly on the
// default tie threshold.
EvaluationAnnotation boundary_annotation(bool match_one) {
    AnnotationBuilder b;
    for (int i = 1; i <= 24; ++i) {
        b.ref("u" + std::to_string(i), kUrgent).missing("u" + std::to_string(i));
    }
    b.ref("n1", kNonActionable);
    if (match_one) b.matched("n1");
    else b.missing("n1");
    for (int i = 2; i <= 4; ++i) {
        b.ref("n" + std::to_string(i), kNonActionable).missing("n" + std::to_string(i));
    }
    return b.build();
}

RankingCase make_ranking_case(const std::string& id, const std::string& category,
                              const std::string& reference,
                              std::vector<RankingCandidate> candidates,
                              RankingExpectation expected) {
    RankingCase c;
    c.case_id = id;
    c.category = category;
    c.reference = reference;
    c.candidates = std::move(candidates);
    c.expected = std::move(expected);
    return c;
}

}  // namespace

TEST_CASE("ranking separates clear wins, boundary gaps and equivalence") {
    TempDir dir("bench");
    FixturePlanter planter{dir};

    // Clear case: perfect candidate vs missed finding.
    planter.put("rank ref", "good cand", std::nullopt, perfect_annotation());
    planter.put("rank ref", "bad cand", std::nullopt,
                AnnotationBuilder().ref("r1", kUrgent).missing("r1").build());

    // Boundary case: scores 0.01 and 0.0 exactly.
    planter.put("boundary ref", "cand A", std::nullopt, boundary_annotation(true));
    planter.put("boundary ref", "cand B", std::nullopt, boundary_annotation(false));

    std::vector<RankingCase> cases;
    cases.push_back(make_ranking_case(
        "k1", "clear", "rank ref",
        {{"good", "good cand"}, {"bad", "bad cand"}}, RankingExpectation{{"good", "bad"}, {}}));
    cases.push_back(make_ranking_case(
        "k2", "boundary", "boundary ref",
        {{"A", "cand A"}, {"B", "cand B"}}, RankingExpectation{{"A", "B"}, {}}));
    cases.push_back(make_ranking_case(
        "k3", "boundary", "boundary ref",
        {{"A", "cand A"}, {"B", "cand B"}}, RankingExpectation{{}, {"A", "B"}}));
    cases.push_back(make_ranking_case(
        "k4", "clear", "rank ref",
        {{"good", "good cand"}, {"bad", "bad cand"}}, RankingExpectation{{}, {"good", "bad"}}));

    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);
    auto report = run_ranking(cases, evaluator, RankingOptions{});

    REQUIRE(report.cases.size() == 4);
    CHECK(report.case_total == 4);
    CHECK(report.passed_total == 2);
    CHECK_FALSE(report.all_passed());

    // k1: 1.0 vs 0.0 is a clean strict win.
    CHECK(report.cases[0].passed);
    CHECK(report.cases[0].detail.empty());
    CHECK(report.cases[0].scores[0].second == doctest::Approx(1.0).epsilon(1e-12));

    // k2: the 0.01 gap equals the threshold, so strict ordering fails...
    CHECK_FALSE(report.cases[1].passed);
    CHECK(contains(report.cases[1].detail, "tie threshold"));
    CHECK(report.cases[1].scores[0].second == 0.01);  // exact by construction
    CHECK(report.cases[1].scores[1].second == 0.0);

    // k3: ...while the same pair passes as clinically equivalent.
    CHECK(report.cases[2].passed);

    // k4: a 1.0 spread is no equivalence.
    CHECK_FALSE(report.cases[3].passed);
    CHECK(contains(report.cases[3].detail, "exceeds the tie threshold"));

    // Category tallies, sorted by name.
    REQUIRE(report.categories.size() == 2);
    CHECK(report.categories[0].category == "boundary");
    CHECK(report.categories[0].passed == 1);
    CHECK(report.categories[0].total == 2);
    CHECK(report.categories[1].category == "clear");

    auto doc = to_json(report);
    CHECK(doc["protocol"] == "ranking");
    CHECK(doc["passed"] == 2);
    CHECK(doc["total"] == 4);
    auto table = render_table(report);
    CHECK(contains(table, "FAIL"));
    CHECK(contains(table, "2/4 passed"));
}

TEST_CASE("a larger tie threshold turns the boundary case strict-passable") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    planter.put("boundary ref", "cand A", std::nullopt, boundary_annotation(true));
    planter.put("boundary ref", "cand B", std::nullopt, boundary_annotation(false));

    std::vector<RankingCase> cases{make_ranking_case(
        "k1", "boundary", "boundary ref",
        {{"A", "cand A"}, {"B", "cand B"}}, RankingExpectation{{"A", "B"}, {}})};

    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);

    RankingOptions lenient;
    lenient.tie_threshold = 0.005;  // now 0.01 > threshold: strict order holds
    CHECK(run_ranking(cases, evaluator, lenient).all_passed());
}

TEST_CASE("ranking skips cases whose judging fails only when asked") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    planter.put("rank ref", "good cand", std::nullopt, perfect_annotation());
    // No fixture for "broken cand".
    std::vector<RankingCase> cases{make_ranking_case(
        "k1", "clear", "rank ref",
        {{"good", "good cand"}, {"broken", "broken cand"}},
        RankingExpectation{{"good", "broken"}, {}})};

    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);

    CHECK_THROWS_AS(run_ranking(cases, evaluator, RankingOptions{}), JudgeError);

    RankingOptions options;
    options.skip_failed = true;
    auto report = run_ranking(cases, evaluator, options);
    CHECK(report.case_total == 0);
    CHECK(report.skipped_case_ids == std::vector<std::string>{"k1"});
    CHECK(report.all_passed());  // vacuously: nothing judged
}

// ---------------------------------------------------------------------------
// Preference protocol

namespace {

struct PreferenceSetup {
    std::vector<PreferenceCase> cases;

    explicit PreferenceSetup(const FixturePlanter& planter) {
        // Judged annotations per side; finals: p1 1.0 / 0.0, p2 0.75 / 2/3,
        // p3 -0.5 / 1.0, so delta scores run 1.0, 1/12, -1.5.
        auto plant = [&](const PreferenceCase& c, const EvaluationAnnotation& a,
                         const EvaluationAnnotation& b) {
            planter.put(c.reference, c.candidate_a, std::nullopt, a);
            planter.put(c.reference, c.candidate_b, std::nullopt, b);
        };

        PreferenceCase p1;
        p1.case_id = "p1";
        p1.reference = "pref ref 1";
        p1.candidate_a = "pref cand a 1";
        p1.candidate_b = "pref cand b 1";
        p1.ratings_a = {5, 4};
        p1.ratings_b = {2, 2};
        plant(p1, perfect_annotation(),
              AnnotationBuilder().ref("r1", kUrgent).missing("r1").build());

        PreferenceCase p2 = p1;
        p2.case_id = "p2";
        p2.reference = "pref ref 2";
        p2.candidate_a = "pref cand a 2";
        p2.candidate_b = "pref cand b 2";
        p2.ratings_a = {4, 4};
        p2.ratings_b = {3, 2};
        plant(p2,
              AnnotationBuilder().ref("r1", kUrgent).matched("r1").false_finding(
                  "f1", kNonActionable).build(),
              AnnotationBuilder()
                  .ref("r1", kUrgent)
                  .matched("r1", {testsupport::attr(AttributeDimension::Location,
                                                    AttributeSignificance::Significant)})
                  .build());

        PreferenceCase p3 = p1;
        p3.case_id = "p3";
        p3.reference = "pref ref 3";
        p3.candidate_a = "pref cand a 3";
        p3.candidate_b = "pref cand b 3";
        p3.ratings_a = {1, 2};
        p3.ratings_b = {5, 4};
        plant(p3,
              AnnotationBuilder().ref("r1", kUrgent).missing("r1").false_finding(
                  "f1", kUrgent).build(),
              perfect_annotation());

        cases = {p1, p2, p3};
    }

    // Rater annotations: alice mirrors the judge exactly; bob disagrees on
    // counts in three places and on severity twice.
    void add_rater_errors() {
        auto entry = [](std::string cls, std::string id, SignificanceLevel level) {
            return RaterError{std::move(cls), std::move(id), level};
        };
        auto annotate = [&](PreferenceCase& c, std::vector<RaterError> alice_a,
                            std::vector<RaterError> alice_b, std::vector<RaterError> bob_a,
                            std::vector<RaterError> bob_b) {
            c.rater_errors = {{"alice", std::move(alice_a), std::move(alice_b)},
                              {"bob", std::move(bob_a), std::move(bob_b)}};
        };
        annotate(cases[0], {}, {entry("missing", "r1", kUrgent)},
                 {entry("false", "fX", kUrgent)}, {});
        annotate(cases[1], {entry("false", "f1", kNonActionable)},
                 {entry("attribute", "r1", kUrgent)}, {},
                 {entry("attribute", "r1", kNonActionable)});
        annotate(cases[2],
                 {entry("false", "f1", kUrgent), entry("missing", "r1", kUrgent)}, {},
                 {entry("missing", "r1", SignificanceLevel::ActionableNonUrgent)}, {});
    }
};

PreferenceOptions fast_pref_options() {
    PreferenceOptions options;
    options.ci_resamples = 200;
    return options;
}

}  // namespace

TEST_CASE("preference aligns score deltas with rating deltas") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    PreferenceSetup setup(planter);

    MockJudge mock(dir.path());
    CountingJudge counting(mock);
    PairEvaluator evaluator(counting, one_run_config(), planter.rubric);
    auto report = run_preference(setup.cases, evaluator, fast_pref_options());

    CHECK(counting.calls == 6);  // 3 cases x 2 sides x 1 run

    REQUIRE(report.cases.size() == 3);
    CHECK(report.cases[0].delta_score == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report.cases[1].delta_score == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
    CHECK(report.cases[2].delta_score == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(report.cases[0].delta_rating == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(report.cases[1].delta_rating == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(report.cases[2].delta_rating == doctest::Approx(-3.0).epsilon(1e-12));

    // Same ordering on both sides: tau_b = 1 exactly.
    REQUIRE(report.aggregate.tau_b.has_value());
    CHECK(*report.aggregate.tau_b == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*report.aggregate.pearson > 0.8);

    // No rater annotations: per-rater names are synthesized, analysis absent.
    REQUIRE(report.per_rater.size() == 2);
    CHECK(report.per_rater[0].first == "rater_1");
    CHECK(report.error_analysis.empty());

    auto doc = to_json(report);
    CHECK(doc["protocol"] == "preference");
    CHECK(doc["cases"].size() == 3);
}

TEST_CASE("preference error analysis compares raters against the judge") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    PreferenceSetup setup(planter);
    setup.add_rater_errors();

    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);
    auto report = run_preference(setup.cases, evaluator, fast_pref_options());

    // Rater names come from the annotations now.
    REQUIRE(report.per_rater.size() == 2);
    CHECK(report.per_rater[0].first == "alice");
    CHECK(report.per_rater[1].first == "bob");
    REQUIRE(report.per_rater[0].second.tau_b.has_value());
    CHECK(*report.per_rater[0].second.tau_b == doctest::Approx(1.0).epsilon(1e-12));
    // Bob ties p1 and p2, costing one concordant pair.
    CHECK(*report.per_rater[1].second.tau_b ==
          doctest::Approx(2.0 / std::sqrt(6.0)).epsilon(1e-12));

    REQUIRE(report.error_analysis.size() == 2);
    const auto& alice = report.error_analysis[0];
    CHECK(alice.rater == "alice");
    CHECK(alice.mae_false == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(alice.mae_missing == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(alice.mae_attribute == doctest::Approx(0.0).epsilon(1e-12));
    REQUIRE(alice.severity_confusion.has_value());
    CHECK(alice.severity_confusion->total == 5);
    CHECK(alice.severity_confusion->agreement == doctest::Approx(1.0).epsilon(1e-12));

    const auto& bob = report.error_analysis[1];
    CHECK(bob.rater == "bob");
    // Six observations (3 cases x 2 sides): false disagrees on three of them.
    CHECK(bob.mae_false == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(bob.mae_missing == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(bob.mae_attribute == doctest::Approx(0.0).epsilon(1e-12));
    REQUIRE(bob.severity_confusion.has_value());
    CHECK(bob.severity_confusion->total == 2);
    CHECK(bob.severity_confusion->agreement == doctest::Approx(0.0).epsilon(1e-12));
    // Rows are the rater's labels, columns the judge's.
    const auto& m = *bob.severity_confusion;
    REQUIRE(m.categories.size() == 4);
    CHECK(m.categories[0] == "urgent");
    CHECK(m.counts[2][0] == 1);  // bob said non_actionable, judge said urgent
    CHECK(m.counts[1][0] == 1);  // bob said actionable_non_urgent, judge urgent

    auto table = render_table(report);
    CHECK(contains(table, "alice"));
    CHECK(contains(table, "severity agreement"));
}

TEST_CASE("preference needs at least two cases") {
    TempDir dir("bench");
    FixturePlanter planter{dir};
    PreferenceSetup setup(planter);
    MockJudge mock(dir.path());
    PairEvaluator evaluator(mock, one_run_config(), planter.rubric);
    std::vector<PreferenceCase> one{setup.cases[0]};
    expect_dataset_error([&] { run_preference(one, evaluator, fast_pref_options()); },
                         DatasetError::Kind::SchemaViolation, -1, "two cases");
}

// ---------------------------------------------------------------------------
// Perturbation

TEST_CASE("regime labels round-trip") {
    for (auto regime :
         {PerturbationRegime::EditFindings, PerturbationRegime::AddFindings,
          PerturbationRegime::RemoveFindings, PerturbationRegime::RandomReportSwap}) {
        auto label = to_label(regime);
        auto back = regime_from_label(label);
        REQUIRE(back.has_value());
        CHECK(*back == regime);
    }
    CHECK_FALSE(regime_from_label("shuffle_everything").has_value());
}

TEST_CASE("report swap picks a different pool entry deterministically") {
    std::vector<std::string> pool{"report A", "report B", "report C", "report D"};
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto first = perturb(pool[i], PerturbationRegime::RandomReportSwap, nullptr, pool,
                             i, 99);
        auto again = perturb(pool[i], PerturbationRegime::RandomReportSwap, nullptr, pool,
                             i, 99);
        CHECK(first.text == again.text);
        CHECK(first.text != pool[i]);
        CHECK(std::find(pool.begin(), pool.end(), first.text) != pool.end());
        CHECK(first.regime == PerturbationRegime::RandomReportSwap);
        CHECK(first.seed == 99);
    }

    // Different seeds must be able to reach different targets.
    std::set<std::string> targets;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        targets.insert(
            perturb(pool[0], PerturbationRegime::RandomReportSwap, nullptr, pool, 0, seed)
                .text);
    }
    CHECK(targets.size() > 1);
}

TEST_CASE("report swap needs a usable pool") {
    std::vector<std::string> solo{"only report"};
    expect_dataset_error(
        [&] { perturb(solo[0], PerturbationRegime::RandomReportSwap, nullptr, solo, 0, 1); },
        DatasetError::Kind::EmptyPool);
    std::vector<std::string> pool{"a", "b"};
    expect_dataset_error(
        [&] { perturb(pool[0], PerturbationRegime::RandomReportSwap, nullptr, pool, 7, 1); },
        DatasetError::Kind::EmptyPool);
}

TEST_CASE("LLM regimes rewrite through the judge") {
    TempDir dir("bench");
    const std::string reference = "Clear lungs. No effusion.";
    auto prompt = build_perturb_prompt(PerturbationRegime::AddFindings, reference);
    REQUIRE(prompt.size() == 2);
    CHECK(contains(prompt[1].content, reference));
    dir.write(MockJudge::request_hash(prompt) + ".txt",
              "  Clear lungs. Small right effusion.\n");

    MockJudge judge(dir.path());
    auto result = perturb(reference, PerturbationRegime::AddFindings, &judge, {}, 0, 7);
    CHECK(result.text == "Clear lungs. Small right effusion.");  // trimmed
    CHECK(result.regime == PerturbationRegime::AddFindings);

    // Each regime builds a distinct instruction, so prompts never collide.
    CHECK(MockJudge::request_hash(build_perturb_prompt(PerturbationRegime::EditFindings,
                                                       reference)) !=
          MockJudge::request_hash(build_perturb_prompt(PerturbationRegime::RemoveFindings,
                                                       reference)));

    try {
        perturb(reference, PerturbationRegime::EditFindings, nullptr, {}, 0, 7);
        FAIL_CHECK("expected a config error");
    } catch (const JudgeError& e) {
        CHECK(e.kind() == JudgeError::Kind::Config);
    }

    dir.write(MockJudge::request_hash(
                  build_perturb_prompt(PerturbationRegime::RemoveFindings, reference)) +
                  ".txt",
              "   \n  ");
    try {
        perturb(reference, PerturbationRegime::RemoveFindings, &judge, {}, 0, 7);
        FAIL_CHECK("expected an unparseable-output error");
    } catch (const JudgeError& e) {
        CHECK(e.kind() == JudgeError::Kind::OutputUnparseable);
    }

    CHECK_THROWS_AS(build_perturb_prompt(PerturbationRegime::RandomReportSwap, reference),
                    JudgeError);
}
