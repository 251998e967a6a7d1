/**
 * @file annotation.hpp
 * @brief Typed annotation model shared by the judge client and the scorer.
 *
 * An EvaluationAnnotation is the judge's full verdict on one
 * reference/candidate report pair: the abnormal findings extracted from the
 * reference, how the candidate covered them (matched vs. missing), the
 * candidate's hallucinated findings, and per-match attribute errors. The
 * document format is versioned (schema_version 1) and specified field by
 * field in docs/annotation_schema.md; validate_annotation() is the only
 * gate between raw judge output and scoring.
 */
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace crimson {

/// Clinical significance of a finding, ordered from most to least severe.
enum class SignificanceLevel {
    Urgent,
    ActionableNonUrgent,
    NonActionable,
    ExpectedBenign,
};

inline constexpr std::array<SignificanceLevel, 4> kAllSignificanceLevels = {
    SignificanceLevel::Urgent,
    SignificanceLevel::ActionableNonUrgent,
    SignificanceLevel::NonActionable,
    SignificanceLevel::ExpectedBenign,
};

/// The eight attribute dimensions checked on matched findings.
enum class AttributeDimension {
    Location,
    Severity,
    Morphology,
    Measurement,
    Certainty,
    Underinterpretation,
    Overinterpretation,
    Temporal,
};

inline constexpr std::size_t kAttributeDimensionCount = 8;

enum class AttributeSignificance {
    Significant,
    Negligible,
};

// Wire labels (exact strings of the document format).
std::string_view to_label(SignificanceLevel level);
std::string_view to_label(AttributeDimension dim);
std::string_view to_label(AttributeSignificance sig);
std::optional<SignificanceLevel> significance_from_label(std::string_view label);
std::optional<AttributeDimension> dimension_from_label(std::string_view label);
std::optional<AttributeSignificance> attribute_significance_from_label(std::string_view label);

struct AttributeError {
    AttributeDimension dimension = AttributeDimension::Location;
    AttributeSignificance significance = AttributeSignificance::Negligible;
    std::string note;
};

struct Finding {
    std::string id;           ///< judge-assigned short id, unique per annotation
    std::string description;  ///< non-empty free text
    SignificanceLevel significance = SignificanceLevel::ExpectedBenign;
};

struct MatchedFinding {
    std::string reference_finding_id;
    std::string candidate_description;
    std::vector<AttributeError> attribute_errors;  ///< at most one per dimension
};

struct PatientContext {
    std::optional<int> age;  ///< years, 0..130
    std::optional<std::string> indication;

    bool empty() const { return !age.has_value() && !indication.has_value(); }
};

struct EvaluationAnnotation {
    std::vector<Finding> reference_findings;
    std::vector<MatchedFinding> matched;
    std::vector<Finding> false_findings;
    std::vector<std::string> missing_finding_ids;
    std::optional<PatientContext> context;
};

inline constexpr int kAnnotationSchemaVersion = 1;

enum class ViolationCode {
    UnknownSignificanceLabel,
    UnknownDimension,
    DanglingFindingId,
    OverlappingPartition,
    UnpartitionedFinding,
    DuplicateId,
    DuplicateDimension,
    EmptyDescription,
    MissingField,
    WrongType,
    UnknownField,
    UnsupportedSchemaVersion,
    InvalidAge,
};

std::string_view to_string(ViolationCode code);

struct Violation {
    ViolationCode code;
    std::string path;     ///< location within the document, e.g. "matched[2].attribute_errors[0]"
    std::string message;  ///< human-readable detail

    std::string format() const;
};

/// Outcome of validate_annotation: either a typed annotation or the complete
/// list of violations. Never both.
struct ValidationResult {
    std::optional<EvaluationAnnotation> annotation;
    std::vector<Violation> violations;

    bool ok() const { return annotation.has_value(); }
};

/// Outcome of parse_annotation_document. Document-level failures
/// (no object found, bad syntax) are reported separately from validation
/// violations so callers can tell "not a document" from "bad annotation".
struct ParseResult {
    enum class DocError { None, NoDocumentFound, SyntaxError };

    std::optional<EvaluationAnnotation> annotation;
    std::vector<Violation> violations;
    DocError doc_error = DocError::None;
    std::size_t error_offset = 0;  ///< byte offset, meaningful for SyntaxError

    bool ok() const { return annotation.has_value(); }
    /// One-line summary of what went wrong; empty when ok().
    std::string error_summary() const;
};

/// Validates a parsed document tree against schema version 1. Collects every
/// violation instead of stopping at the first; on success the returned
/// annotation preserves the document's list order.
ValidationResult validate_annotation(const nlohmann::json& raw);

/// Extracts the first well-formed JSON object from judge output (prose and
/// code fences tolerated), then delegates to validate_annotation.
ParseResult parse_annotation_document(std::string_view text);

/// Canonical serialization: schema_version first, fixed key order, findings
/// sorted by id, matches by reference id, attribute errors by dimension.
/// Structurally equal annotations serialize to identical bytes.
std::string serialize_annotation(const EvaluationAnnotation& annotation);

/// Copy with all lists in canonical order (the order serialize_annotation
/// writes). Empty context is normalized to absent.
EvaluationAnnotation canonicalize(const EvaluationAnnotation& annotation);

/// Equality up to list order.
bool structurally_equal(const EvaluationAnnotation& a, const EvaluationAnnotation& b);

}  // namespace crimson
