/**
 * @file bench.hpp
 * @brief Benchmark protocols over line-delimited dataset files: error-count
 *        correlation, pass/fail ranking with an equivalence threshold, and
 *        pairwise preference alignment, plus the candidate perturbation
 *        generator. File formats are documented in docs/formats.md.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crimson/annotation.hpp"
#include "crimson/judge.hpp"
#include "crimson/scoring.hpp"
#include "crimson/stats.hpp"

namespace crimson {

class DatasetError : public std::runtime_error {
public:
    enum class Kind {
        FileNotFound,
        SchemaViolation,
        DuplicateCaseId,
        MissingGroundTruth,
        EmptyPool,
        AnnotationMismatch,
    };

    DatasetError(Kind kind, const std::string& message, int line = 0)
        : std::runtime_error(line > 0 ? message + " (line " + std::to_string(line) + ")"
                                      : message),
          kind_(kind),
          line_(line) {}

    Kind kind() const { return kind_; }
    int line() const { return line_; }

private:
    Kind kind_;
    int line_;
};

// ---------------------------------------------------------------------------
// Dataset case types

struct ScoredPairCase {
    std::string case_id;
    std::string reference;
    std::string candidate;
    std::optional<PatientContext> context;
    std::optional<long long> annotated_significant_errors;  ///< radiologist ground truth
};

struct RankingExpectation {
    /// Exactly one of the two is non-empty.
    std::vector<std::string> order;       ///< labels best-first; strict ordering expected
    std::vector<std::string> equivalent;  ///< labels expected clinically indistinguishable

    bool is_order() const { return !order.empty(); }
};

struct RankingCandidate {
    std::string label;
    std::string report;
};

struct RankingCase {
    std::string case_id;
    std::string category;
    std::string reference;
    std::optional<PatientContext> context;
    std::vector<RankingCandidate> candidates;
    RankingExpectation expected;
};

/// One per-finding error asserted by a rater (or derived from the judge).
struct RaterError {
    std::string error_class;  ///< "false" | "missing" | "attribute"
    std::string finding_id;
    SignificanceLevel significance = SignificanceLevel::ExpectedBenign;
};

struct RaterErrorAnnotation {
    std::string rater;
    std::vector<RaterError> candidate_a;
    std::vector<RaterError> candidate_b;
};

struct PreferenceCase {
    std::string case_id;
    std::string reference;
    std::optional<PatientContext> context;
    std::string candidate_a;
    std::string candidate_b;
    std::vector<int> ratings_a;  ///< per rater, 1..5
    std::vector<int> ratings_b;  ///< same rater count as ratings_a
    std::vector<RaterErrorAnnotation> rater_errors;  ///< optional, empty when absent
};

std::vector<ScoredPairCase> load_pairs_dataset(const std::filesystem::path& path);
std::vector<RankingCase> load_ranking_dataset(const std::filesystem::path& path);
std::vector<PreferenceCase> load_preference_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Case evaluation

/// Scores report pairs through a judge; one judging pass per pair, all
/// derived statistics reuse the same annotations.
class PairEvaluator {
public:
    PairEvaluator(Judge& judge, JudgeConfig config, RubricText rubric,
                  ScoringOptions scoring = {});

    struct Result {
        AggregatedScore score;
        std::vector<EvaluationAnnotation> annotations;  ///< one per run
    };

    Result evaluate(const std::string& reference, const std::string& candidate,
                    const std::optional<PatientContext>& context) const;

    const JudgeConfig& config() const { return config_; }
    const RubricText& rubric() const { return rubric_; }
    std::string model_name() const { return judge_.model_name(); }

private:
    Judge& judge_;
    JudgeConfig config_;
    RubricText rubric_;
    ScoringOptions scoring_;
};

// ---------------------------------------------------------------------------
// Correlation protocol

struct CorrelationOptions {
    double ci_level = stats::kDefaultBootstrapLevel;
    int ci_resamples = stats::kDefaultBootstrapResamples;
    std::uint64_t seed = stats::kDefaultBootstrapSeed;
    bool skip_failed = false;
    int concurrency = 1;
};

struct SeriesCorrelation {
    std::string series;  ///< "crimson_score" | "error_count" | "weighted_error_count"
    bool sign_flipped = false;
    std::optional<double> tau_a, tau_b, pearson;
    std::optional<stats::ConfidenceInterval> tau_a_ci, tau_b_ci, pearson_ci;
    std::string degenerate_note;  ///< non-empty when a statistic is undefined
};

struct CorrelationReport {
    std::vector<std::string> case_ids;  ///< sorted; order of every per-case vector
    std::vector<double> ground_truth;
    std::vector<double> mean_final;
    std::vector<double> mean_error_count;
    std::vector<double> mean_weighted_error_count;
    std::vector<SeriesCorrelation> series;
    std::vector<std::string> skipped_case_ids;
    CorrelationOptions options;
};

CorrelationReport run_correlation(const std::vector<ScoredPairCase>& cases,
                                  const PairEvaluator& evaluator,
                                  const CorrelationOptions& options = {});

// ---------------------------------------------------------------------------
// Ranking protocol

inline constexpr double kDefaultTieThreshold = 0.01;

struct RankingOptions {
    double tie_threshold = kDefaultTieThreshold;
    bool skip_failed = false;
    int concurrency = 1;
};

struct RankingCaseResult {
    std::string case_id;
    std::string category;
    bool passed = false;
    std::vector<std::pair<std::string, double>> scores;  ///< label -> mean final
    std::string detail;  ///< why the case failed (empty when passed)
};

struct CategoryTally {
    std::string category;
    int passed = 0;
    int total = 0;
};

struct RankingReport {
    std::vector<RankingCaseResult> cases;      ///< sorted by case_id
    std::vector<CategoryTally> categories;     ///< sorted by category
    int passed_total = 0;
    int case_total = 0;
    double tie_threshold = kDefaultTieThreshold;
    std::vector<std::string> skipped_case_ids;

    bool all_passed() const { return passed_total == case_total; }
};

RankingReport run_ranking(const std::vector<RankingCase>& cases,
                          const PairEvaluator& evaluator,
                          const RankingOptions& options = {});

// ---------------------------------------------------------------------------
// Preference protocol

struct PreferenceOptions {
    double ci_level = stats::kDefaultBootstrapLevel;
    int ci_resamples = stats::kDefaultBootstrapResamples;
    std::uint64_t seed = stats::kDefaultBootstrapSeed;
    bool skip_failed = false;
    int concurrency = 1;
};

struct PreferenceCaseResult {
    std::string case_id;
    double delta_score = 0.0;   ///< mean final(a) - mean final(b)
    double delta_rating = 0.0;  ///< mean rating(a) - mean rating(b)
    std::vector<double> per_rater_delta_rating;
};

struct DeltaCorrelation {
    std::optional<double> tau_b, pearson;
    std::optional<stats::ConfidenceInterval> tau_b_ci, pearson_ci;
    std::string degenerate_note;
};

struct RaterAgreement {
    std::string rater;
    double mae_false = 0.0;
    double mae_missing = 0.0;
    double mae_attribute = 0.0;
    std::optional<stats::ConfusionMatrix> severity_confusion;  ///< absent when no matched errors
};

struct PreferenceReport {
    std::vector<PreferenceCaseResult> cases;  ///< sorted by case_id
    DeltaCorrelation aggregate;               ///< mean-aggregated ratings
    std::vector<std::pair<std::string, DeltaCorrelation>> per_rater;
    std::vector<RaterAgreement> error_analysis;  ///< empty when annotations absent
    std::vector<std::string> skipped_case_ids;
    PreferenceOptions options;
};

PreferenceReport run_preference(const std::vector<PreferenceCase>& cases,
                                const PairEvaluator& evaluator,
                                const PreferenceOptions& options = {});

// ---------------------------------------------------------------------------
// Candidate perturbation

enum class PerturbationRegime {
    EditFindings,
    AddFindings,
    RemoveFindings,
    RandomReportSwap,
};

std::string_view to_label(PerturbationRegime regime);
std::optional<PerturbationRegime> regime_from_label(std::string_view label);

/// Regime-specific rewrite instruction for the LLM-backed regimes.
std::vector<ChatMessage> build_perturb_prompt(PerturbationRegime regime,
                                              const std::string& reference);

struct PerturbedCandidate {
    std::string text;
    PerturbationRegime regime = PerturbationRegime::RandomReportSwap;
    std::uint64_t seed = 0;
};

/// Produces one candidate for `reference`. LLM regimes call the judge once;
/// RandomReportSwap picks a different pool entry with the seeded generator
/// (pool_index identifies `reference` within the pool).
PerturbedCandidate perturb(const std::string& reference, PerturbationRegime regime,
                           Judge* judge, const std::vector<std::string>& pool,
                           std::size_t pool_index, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Report documents and tables

nlohmann::ordered_json to_json(const CorrelationReport& report);
nlohmann::ordered_json to_json(const RankingReport& report);
nlohmann::ordered_json to_json(const PreferenceReport& report);

std::string render_table(const CorrelationReport& report);
std::string render_table(const RankingReport& report);
std::string render_table(const PreferenceReport& report);

}  // namespace crimson
