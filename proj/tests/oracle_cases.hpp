// Hand-derived scoring oracles. Every expected value below was computed by
// hand from the weight table (urgent 1.0, actionable_non_urgent 0.5,
// non_actionable 0.25, expected_benign 0.0; significant attribute 0.5,
// negligible 0.0), the credit term w^2/(w+E_attr) with the w=0 -> 0
// convention, the three-branch raw score, and the negative-side squash
// -A/(1+A). Keep these independent of the implementation: if a value here
// and the scorer disagree, re-derive on paper before touching either side.
#pragma once

#include <string>
#include <vector>

#include "support.hpp"

namespace testsupport {

struct OracleCase {
    std::string name;
    crimson::EvaluationAnnotation annotation;
    double expected_final;
    double expected_raw;
    bool exact;  // expected value is exactly representable along the same path
    long long expected_errors;
    double expected_weighted;
};

inline std::vector<OracleCase> oracle_cases() {
    using L = crimson::SignificanceLevel;
    using D = crimson::AttributeDimension;
    using S = crimson::AttributeSignificance;
    std::vector<OracleCase> cases;

    // 1. both reports normal: W_ref = 0, E_false = 0 -> 1
    cases.push_back({"both_normal", AnnotationBuilder{}.build(), 1.0, 1.0, true, 0, 0.0});

    // 2. normal reference, one urgent hallucination:
    //    S = -1, A = 1, final = -1/2
    cases.push_back({"urgent_hallucination_on_normal",
                     AnnotationBuilder{}.false_finding("f1", L::Urgent).build(),
                     -0.5, -1.0, true, 1, 1.0});

    // 3. {urgent, actionable}: urgent matched cleanly, actionable missed:
    //    C = 1, W = 1.5 -> 2/3
    cases.push_back({"clean_match_plus_missing",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .ref("r2", L::ActionableNonUrgent)
                         .matched("r1")
                         .missing("r2")
                         .build(),
                     2.0 / 3.0, 2.0 / 3.0, false, 1, 0.5});

    // 4. one actionable matched with one significant attribute error:
    //    credit = 0.25/1.0, W = 0.5 -> 0.5
    cases.push_back({"actionable_with_significant_attr",
                     AnnotationBuilder{}
                         .ref("r1", L::ActionableNonUrgent)
                         .matched("r1", {attr(D::Location, S::Significant)})
                         .build(),
                     0.5, 0.5, true, 1, 0.5});

    // 5. benign-only reference, matched with a significant attribute error:
    //    w = 0 so credit 0, W = 0, E = 0 -> third branch, final 1;
    //    the error still counts (1 error, weighted 0.5)
    cases.push_back({"benign_reference_attr_error",
                     AnnotationBuilder{}
                         .ref("r1", L::ExpectedBenign)
                         .matched("r1", {attr(D::Severity, S::Significant)})
                         .build(),
                     1.0, 1.0, true, 1, 0.5});

    // 6. urgent matched with three significant and one negligible error:
    //    E_attr = 1.5, credit = 1/2.5 = 0.4
    cases.push_back({"urgent_heavy_attribute_damage",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .matched("r1",
                                  {attr(D::Location, S::Significant),
                                   attr(D::Measurement, S::Significant),
                                   attr(D::Temporal, S::Significant),
                                   attr(D::Morphology, S::Negligible)})
                         .build(),
                     0.4, 0.4, true, 4, 1.5});

    // 7. actionable matched with one significant error plus an urgent
    //    hallucination: C = 0.25, E = 1, W = 0.5,
    //    S = -1.5, A = 0.75, final = -0.75/1.75 = -3/7
    cases.push_back({"damaged_match_plus_urgent_false",
                     AnnotationBuilder{}
                         .ref("r1", L::ActionableNonUrgent)
                         .matched("r1", {attr(D::Certainty, S::Significant)})
                         .false_finding("f1", L::Urgent)
                         .build(),
                     -3.0 / 7.0, -1.5, false, 2, 1.5});

    // 8. all four significance levels in one annotation:
    //    matched urgent w/ 1 sig (2/3), missing actionable, matched
    //    non-actionable clean (0.25), matched benign clean (0), false benign
    //    and false non-actionable: C = 11/12, W = 1.75, E = 0.25,
    //    S = (11/12 - 1/4) / (7/4) = 8/21
    cases.push_back({"mixed_levels_with_false",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .ref("r2", L::ActionableNonUrgent)
                         .ref("r3", L::NonActionable)
                         .ref("r4", L::ExpectedBenign)
                         .matched("r1", {attr(D::Location, S::Significant)})
                         .missing("r2")
                         .matched("r3")
                         .matched("r4")
                         .false_finding("f1", L::ExpectedBenign)
                         .false_finding("f2", L::NonActionable)
                         .build(),
                     8.0 / 21.0, 2.0 / 3.0 / 1.75, false, 4, 1.25});

    // 9. benign noise around a clean urgent match changes nothing:
    //    negligible error on a benign match + benign false finding -> 1.0
    cases.push_back({"benign_noise_scores_perfect",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .ref("r2", L::ExpectedBenign)
                         .matched("r1")
                         .matched("r2", {attr(D::Severity, S::Negligible)})
                         .false_finding("f1", L::ExpectedBenign)
                         .build(),
                     1.0, 1.0, true, 2, 0.0});

    // 10. benign-only reference matched, plus a benign false finding:
    //     W = 0 and E = 0 -> 1
    cases.push_back({"benign_only_with_benign_false",
                     AnnotationBuilder{}
                         .ref("r1", L::ExpectedBenign)
                         .matched("r1")
                         .false_finding("f1", L::ExpectedBenign)
                         .build(),
                     1.0, 1.0, true, 1, 0.0});

    // 11. everything wrong: urgent missed, three urgent hallucinations:
    //     S = -3, A = 3, final = -0.75
    cases.push_back({"urgent_missed_three_false",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .missing("r1")
                         .false_finding("f1", L::Urgent)
                         .false_finding("f2", L::Urgent)
                         .false_finding("f3", L::Urgent)
                         .build(),
                     -0.75, -3.0, true, 4, 4.0});

    // 12. deep negative tail: clean actionable match, ten urgent
    //     hallucinations: A = 9.5, final = -9.5/10.5 = -19/21
    {
        AnnotationBuilder b;
        b.ref("r1", L::ActionableNonUrgent).matched("r1");
        for (int i = 1; i <= 10; ++i) b.false_finding("f" + std::to_string(i), L::Urgent);
        cases.push_back({"ten_urgent_hallucinations", b.build(),
                         -19.0 / 21.0, -19.0, false, 10, 10.0});
    }

    // 13. continuity at zero: C = E_false = 1 -> both branches give exactly 0
    cases.push_back({"zero_crossing",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .matched("r1")
                         .false_finding("f1", L::Urgent)
                         .build(),
                     0.0, 0.0, true, 1, 1.0});

    // 14. attribute mix across all weights: urgent w/ 1 sig (2/3),
    //     actionable w/ 1 negligible (0.5), non-actionable w/ 2 sig
    //     (0.0625/1.25 = 0.05), benign clean: C = 73/60, W = 1.75,
    //     S = 73/105
    cases.push_back({"attribute_mix_all_levels",
                     AnnotationBuilder{}
                         .ref("r1", L::Urgent)
                         .ref("r2", L::ActionableNonUrgent)
                         .ref("r3", L::NonActionable)
                         .ref("r4", L::ExpectedBenign)
                         .matched("r1", {attr(D::Overinterpretation, S::Significant)})
                         .matched("r2", {attr(D::Measurement, S::Negligible)})
                         .matched("r3",
                                  {attr(D::Location, S::Significant),
                                   attr(D::Underinterpretation, S::Significant)})
                         .matched("r4")
                         .build(),
                     73.0 / 105.0, 73.0 / 105.0, false, 4, 1.5});

    // 15. normal-equivalent reference (benign only, missed) with fractional
    //     hallucination weight: E = 0.75, S = -0.75, final = -3/7
    cases.push_back({"fractional_negative_branch",
                     AnnotationBuilder{}
                         .ref("r1", L::ExpectedBenign)
                         .missing("r1")
                         .false_finding("f1", L::NonActionable)
                         .false_finding("f2", L::ActionableNonUrgent)
                         .build(),
                     -3.0 / 7.0, -0.75, false, 3, 0.75});

    return cases;
}

}  // namespace testsupport
