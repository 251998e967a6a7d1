#include "crimson/scoring.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace crimson {

double significance_weight(SignificanceLevel level) {
    switch (level) {
        case SignificanceLevel::Urgent: return 1.0;
        case SignificanceLevel::ActionableNonUrgent: return 0.5;
        case SignificanceLevel::NonActionable: return 0.25;
        case SignificanceLevel::ExpectedBenign: return 0.0;
    }
    return 0.0;
}

double attribute_weight(const AttributeError& error) {
    return error.significance == AttributeSignificance::Significant ? 0.5 : 0.0;
}

double attribute_penalty(const MatchedFinding& match) {
    double sum = 0.0;
    for (const auto& e : match.attribute_errors) sum += attribute_weight(e);
    return sum;
}

double matched_credit(double weight, double attribute_penalty) {
    if (weight == 0.0) return 0.0;
    return weight * weight / (weight + attribute_penalty);
}

ErrorCounts error_counts(const EvaluationAnnotation& annotation,
                         const ScoringOptions& options) {
    EvaluationAnnotation a = canonicalize(annotation);

    std::map<std::string, SignificanceLevel> reference_significance;
    for (const auto& f : a.reference_findings)
        reference_significance.emplace(f.id, f.significance);

    ErrorCounts counts;
    for (const auto& f : a.false_findings) {
        counts.total += 1;
        counts.weighted += significance_weight(f.significance);
    }
    for (const auto& id : a.missing_finding_ids) {
        counts.total += 1;
        auto it = reference_significance.find(id);
        if (it != reference_significance.end())
            counts.weighted += significance_weight(it->second);
    }
    for (const auto& m : a.matched) {
        for (const auto& e : m.attribute_errors) {
            if (options.count_negligible ||
                e.significance == AttributeSignificance::Significant)
                counts.total += 1;
            counts.weighted += attribute_weight(e);
        }
    }
    return counts;
}

ScoreBreakdown score(const EvaluationAnnotation& annotation,
                     const ScoringOptions& options) {
    EvaluationAnnotation a = canonicalize(annotation);

    std::map<std::string, SignificanceLevel> reference_significance;
    for (const auto& f : a.reference_findings)
        reference_significance.emplace(f.id, f.significance);

    ScoreBreakdown b;
    for (const auto& f : a.reference_findings)
        b.weight_ref_W += significance_weight(f.significance);
    for (const auto& f : a.false_findings)
        b.false_penalty_E += significance_weight(f.significance);

    for (const auto& m : a.matched) {
        PerFindingTerm term;
        term.finding_id = m.reference_finding_id;
        auto it = reference_significance.find(m.reference_finding_id);
        term.weight = it == reference_significance.end()
                          ? 0.0
                          : significance_weight(it->second);
        term.attribute_penalty = attribute_penalty(m);
        term.credit = matched_credit(term.weight, term.attribute_penalty);
        b.credit_C += term.credit;
        b.per_finding_terms.push_back(std::move(term));
    }

    if (b.weight_ref_W > 0.0) {
        b.raw_score_S = (b.credit_C - b.false_penalty_E) / b.weight_ref_W;
    } else if (b.false_penalty_E > 0.0) {
        b.raw_score_S = -b.false_penalty_E;
    } else {
        b.raw_score_S = 1.0;
    }

    b.excess_A = b.false_penalty_E - b.credit_C;
    b.final_score = b.raw_score_S >= 0.0 ? b.raw_score_S
                                         : -b.excess_A / (1.0 + b.excess_A);

    ErrorCounts counts = error_counts(a, options);
    b.error_count_E = counts.total;
    b.weighted_error_count = counts.weighted;
    return b;
}

AggregatedScore average_runs(std::vector<ScoreBreakdown> runs) {
    if (runs.empty())
        throw std::invalid_argument("average_runs: empty run list");

    AggregatedScore agg;
    agg.run_count = static_cast<int>(runs.size());
    double sum = 0.0;
    for (const auto& r : runs) sum += r.final_score;
    agg.mean_final = sum / static_cast<double>(runs.size());

    double sq = 0.0;
    for (const auto& r : runs) {
        double d = r.final_score - agg.mean_final;
        sq += d * d;
    }
    agg.std_dev_final = std::sqrt(sq / static_cast<double>(runs.size()));
    agg.per_run = std::move(runs);
    return agg;
}

nlohmann::ordered_json breakdown_to_json(const ScoreBreakdown& b) {
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const auto& t : b.per_finding_terms)
        terms.push_back({{"finding_id", t.finding_id},
                         {"weight", t.weight},
                         {"attribute_penalty", t.attribute_penalty},
                         {"credit", t.credit}});
    return nlohmann::ordered_json{{"schema_version", 1},
                                  {"credit", b.credit_C},
                                  {"weight_ref", b.weight_ref_W},
                                  {"false_penalty", b.false_penalty_E},
                                  {"raw_score", b.raw_score_S},
                                  {"excess", b.excess_A},
                                  {"final_score", b.final_score},
                                  {"error_count", b.error_count_E},
                                  {"weighted_error_count", b.weighted_error_count},
                                  {"per_finding_terms", std::move(terms)}};
}

nlohmann::ordered_json aggregated_to_json(const AggregatedScore& a) {
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : a.per_run) runs.push_back(breakdown_to_json(r));
    return nlohmann::ordered_json{{"schema_version", 1},
                                  {"mean_final", a.mean_final},
                                  {"std_dev_final", a.std_dev_final},
                                  {"run_count", a.run_count},
                                  {"per_run", std::move(runs)}};
}

}  // namespace crimson
