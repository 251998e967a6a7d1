/**
 * @file scoring.hpp
 * @brief Deterministic severity-aware scoring of validated annotations.
 *
 * Pure functions, double precision throughout, no internal rounding. The
 * final score lives in (-1, 1]: 1 is a clinically perfect report, 0 is no
 * better than submitting a normal template, and negative values approach -1
 * asymptotically as weighted hallucinations accumulate. Scoring always
 * operates on the canonical list order so structurally equal annotations
 * produce bit-identical breakdowns.
 */
#pragma once

#include <string>
#include <vector>

#include "crimson/annotation.hpp"

namespace crimson {

/// Per-matched-finding intermediate quantities.
struct PerFindingTerm {
    std::string finding_id;
    double weight = 0.0;             ///< w_i, from the reference finding's significance
    double attribute_penalty = 0.0;  ///< sum of attribute error weights
    double credit = 0.0;             ///< w_i^2 / (w_i + penalty), 0 when w_i = 0
};

struct ScoreBreakdown {
    double credit_C = 0.0;        ///< total matched credit
    double weight_ref_W = 0.0;    ///< total reference significance weight
    double false_penalty_E = 0.0; ///< weighted sum over false findings
    double raw_score_S = 0.0;
    double excess_A = 0.0;        ///< false_penalty_E - credit_C
    double final_score = 0.0;     ///< in (-1, 1]
    long long error_count_E = 0;
    double weighted_error_count = 0.0;
    std::vector<PerFindingTerm> per_finding_terms;
};

struct AggregatedScore {
    double mean_final = 0.0;
    std::vector<ScoreBreakdown> per_run;
    int run_count = 0;
    double std_dev_final = 0.0;  ///< population standard deviation
};

struct ErrorCounts {
    long long total = 0;    ///< false + missing + attribute errors
    double weighted = 0.0;  ///< severity-weighted sum of the same errors
};

struct ScoringOptions {
    /// Whether negligible attribute errors contribute to the unweighted
    /// error count. They never carry weight either way.
    bool count_negligible = true;
};

/// Clinical significance weight: urgent 1.0, actionable non-urgent 0.5,
/// non-actionable 0.25, expected/benign 0.0.
double significance_weight(SignificanceLevel level);

/// Attribute error weight: significant 0.5, negligible 0.0.
double attribute_weight(const AttributeError& error);

/// Sum of attribute weights over a match's errors.
double attribute_penalty(const MatchedFinding& match);

/// Credit term for one matched finding: w^2 / (w + penalty), with the w = 0
/// limit convention (credit 0 regardless of penalty).
double matched_credit(double weight, double attribute_penalty);

ErrorCounts error_counts(const EvaluationAnnotation& annotation,
                         const ScoringOptions& options = {});

ScoreBreakdown score(const EvaluationAnnotation& annotation,
                     const ScoringOptions& options = {});

/// Arithmetic mean / population std dev of final scores across runs.
/// Throws std::invalid_argument on an empty run list.
AggregatedScore average_runs(std::vector<ScoreBreakdown> runs);

/// Breakdown document mirroring the struct fields (schema_version 1).
nlohmann::ordered_json breakdown_to_json(const ScoreBreakdown& b);
nlohmann::ordered_json aggregated_to_json(const AggregatedScore& a);

}  // namespace crimson
