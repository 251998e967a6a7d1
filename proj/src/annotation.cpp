#include "crimson/annotation.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace crimson {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 4> kSignificanceLabels = {
    "urgent", "actionable_non_urgent", "non_actionable", "expected_benign"};

constexpr std::array<std::string_view, 8> kDimensionLabels = {
    "location",  "severity",            "morphology",         "measurement",
    "certainty", "underinterpretation", "overinterpretation", "temporal"};

constexpr std::array<std::string_view, 2> kAttributeSignificanceLabels = {
    "significant", "negligible"};

}  // namespace

std::string_view to_label(SignificanceLevel level) {
    return kSignificanceLabels[static_cast<std::size_t>(level)];
}

std::string_view to_label(AttributeDimension dim) {
    return kDimensionLabels[static_cast<std::size_t>(dim)];
}

std::string_view to_label(AttributeSignificance sig) {
    return kAttributeSignificanceLabels[static_cast<std::size_t>(sig)];
}

std::optional<SignificanceLevel> significance_from_label(std::string_view label) {
    for (std::size_t i = 0; i < kSignificanceLabels.size(); ++i)
        if (label == kSignificanceLabels[i]) return static_cast<SignificanceLevel>(i);
    return std::nullopt;
}

std::optional<AttributeDimension> dimension_from_label(std::string_view label) {
    for (std::size_t i = 0; i < kDimensionLabels.size(); ++i)
        if (label == kDimensionLabels[i]) return static_cast<AttributeDimension>(i);
    return std::nullopt;
}

std::optional<AttributeSignificance> attribute_significance_from_label(std::string_view label) {
    for (std::size_t i = 0; i < kAttributeSignificanceLabels.size(); ++i)
        if (label == kAttributeSignificanceLabels[i])
            return static_cast<AttributeSignificance>(i);
    return std::nullopt;
}

std::string_view to_string(ViolationCode code) {
    switch (code) {
        case ViolationCode::UnknownSignificanceLabel: return "UnknownSignificanceLabel";
        case ViolationCode::UnknownDimension: return "UnknownDimension";
        case ViolationCode::DanglingFindingId: return "DanglingFindingId";
        case ViolationCode::OverlappingPartition: return "OverlappingPartition";
        case ViolationCode::UnpartitionedFinding: return "UnpartitionedFinding";
        case ViolationCode::DuplicateId: return "DuplicateId";
        case ViolationCode::DuplicateDimension: return "DuplicateDimension";
        case ViolationCode::EmptyDescription: return "EmptyDescription";
        case ViolationCode::MissingField: return "MissingField";
        case ViolationCode::WrongType: return "WrongType";
        case ViolationCode::UnknownField: return "UnknownField";
        case ViolationCode::UnsupportedSchemaVersion: return "UnsupportedSchemaVersion";
        case ViolationCode::InvalidAge: return "InvalidAge";
    }
    return "UnknownViolation";
}

std::string Violation::format() const {
    std::string out(to_string(code));
    out += " at ";
    out += path;
    out += ": ";
    out += message;
    return out;
}

namespace {

// Whitespace-only text carries no content; treat it like an empty string.
bool blank_text(const std::string& text) {
    return text.find_first_not_of(" \t\r\n") == std::string::npos;
}

// Collects violations while walking the document tree.
class Validator {
public:
    explicit Validator(const json& raw) : raw_(raw) {}

    ValidationResult run() {
        if (!raw_.is_object()) {
            add(ViolationCode::WrongType, "$", "document root must be an object");
            return finish();
        }
        check_known_keys(raw_, "$",
                         {"schema_version", "reference_findings", "matched", "false_findings",
                          "missing_finding_ids", "context"});
        check_schema_version();

        EvaluationAnnotation ann;
        ann.reference_findings = parse_finding_list("reference_findings");
        ann.matched = parse_matched_list();
        ann.false_findings = parse_finding_list("false_findings");
        ann.missing_finding_ids = parse_missing_ids();
        ann.context = parse_context();

        check_cross_references(ann);

        ValidationResult result = finish();
        if (result.violations.empty()) result.annotation = std::move(ann);
        return result;
    }

private:
    void add(ViolationCode code, std::string path, std::string message) {
        violations_.push_back({code, std::move(path), std::move(message)});
    }

    ValidationResult finish() {
        ValidationResult r;
        r.violations = std::move(violations_);
        return r;
    }

    void check_known_keys(const json& obj, const std::string& path,
                          std::initializer_list<std::string_view> known) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool found = false;
            for (auto k : known)
                if (it.key() == k) { found = true; break; }
            if (!found)
                add(ViolationCode::UnknownField, path + "." + it.key(),
                    "field is not part of annotation schema v1");
        }
    }

    void check_schema_version() {
        auto it = raw_.find("schema_version");
        if (it == raw_.end()) {
            add(ViolationCode::MissingField, "$.schema_version", "schema_version is required");
            return;
        }
        if (!it->is_number_integer()) {
            add(ViolationCode::WrongType, "$.schema_version", "schema_version must be an integer");
            return;
        }
        if (it->get<int>() != kAnnotationSchemaVersion)
            add(ViolationCode::UnsupportedSchemaVersion, "$.schema_version",
                "expected schema_version " + std::to_string(kAnnotationSchemaVersion) +
                    ", got " + it->dump());
    }

    const json* require_array(const char* key) {
        auto it = raw_.find(key);
        if (it == raw_.end()) {
            add(ViolationCode::MissingField, std::string("$.") + key, "field is required");
            return nullptr;
        }
        if (!it->is_array()) {
            add(ViolationCode::WrongType, std::string("$.") + key, "expected an array");
            return nullptr;
        }
        return &*it;
    }

    std::optional<std::string> get_string(const json& obj, const char* key,
                                          const std::string& path, bool required) {
        auto it = obj.find(key);
        if (it == obj.end()) {
            if (required)
                add(ViolationCode::MissingField, path + "." + key, "field is required");
            return std::nullopt;
        }
        if (!it->is_string()) {
            add(ViolationCode::WrongType, path + "." + key, "expected a string");
            return std::nullopt;
        }
        return it->get<std::string>();
    }

    std::vector<Finding> parse_finding_list(const char* key) {
        std::vector<Finding> findings;
        const json* arr = require_array(key);
        if (!arr) return findings;
        for (std::size_t i = 0; i < arr->size(); ++i) {
            const json& item = (*arr)[i];
            std::string path = std::string("$.") + key + "[" + std::to_string(i) + "]";
            if (!item.is_object()) {
                add(ViolationCode::WrongType, path, "expected an object");
                continue;
            }
            check_known_keys(item, path, {"id", "description", "significance"});
            Finding f;
            if (auto id = get_string(item, "id", path, true)) f.id = *id;
            if (auto desc = get_string(item, "description", path, true)) {
                if (blank_text(*desc))
                    add(ViolationCode::EmptyDescription, path + ".description",
                        "finding description must be non-empty");
                f.description = *desc;
            }
            if (auto sig = get_string(item, "significance", path, true)) {
                if (auto level = significance_from_label(*sig)) {
                    f.significance = *level;
                } else {
                    add(ViolationCode::UnknownSignificanceLabel, path + ".significance",
                        "unknown significance label \"" + *sig + "\"");
                }
            }
            findings.push_back(std::move(f));
        }
        return findings;
    }

    std::vector<MatchedFinding> parse_matched_list() {
        std::vector<MatchedFinding> matched;
        const json* arr = require_array("matched");
        if (!arr) return matched;
        for (std::size_t i = 0; i < arr->size(); ++i) {
            const json& item = (*arr)[i];
            std::string path = "$.matched[" + std::to_string(i) + "]";
            if (!item.is_object()) {
                add(ViolationCode::WrongType, path, "expected an object");
                continue;
            }
            check_known_keys(item, path,
                             {"reference_finding_id", "candidate_description", "attribute_errors"});
            MatchedFinding m;
            if (auto id = get_string(item, "reference_finding_id", path, true))
                m.reference_finding_id = *id;
            if (auto desc = get_string(item, "candidate_description", path, true)) {
                if (blank_text(*desc))
                    add(ViolationCode::EmptyDescription, path + ".candidate_description",
                        "candidate description must be non-empty");
                m.candidate_description = *desc;
            }
            m.attribute_errors = parse_attribute_errors(item, path);
            matched.push_back(std::move(m));
        }
        return matched;
    }

    std::vector<AttributeError> parse_attribute_errors(const json& match,
                                                       const std::string& match_path) {
        std::vector<AttributeError> errors;
        auto it = match.find("attribute_errors");
        if (it == match.end()) {
            add(ViolationCode::MissingField, match_path + ".attribute_errors",
                "field is required (use [] when there are no attribute errors)");
            return errors;
        }
        if (!it->is_array()) {
            add(ViolationCode::WrongType, match_path + ".attribute_errors", "expected an array");
            return errors;
        }
        std::set<AttributeDimension> seen;
        for (std::size_t j = 0; j < it->size(); ++j) {
            const json& item = (*it)[j];
            std::string path = match_path + ".attribute_errors[" + std::to_string(j) + "]";
            if (!item.is_object()) {
                add(ViolationCode::WrongType, path, "expected an object");
                continue;
            }
            check_known_keys(item, path, {"dimension", "significance", "note"});
            AttributeError err;
            if (auto dim = get_string(item, "dimension", path, true)) {
                if (auto d = dimension_from_label(*dim)) {
                    err.dimension = *d;
                    if (!seen.insert(*d).second)
                        add(ViolationCode::DuplicateDimension, path + ".dimension",
                            "dimension \"" + *dim + "\" appears more than once in this match");
                } else {
                    add(ViolationCode::UnknownDimension, path + ".dimension",
                        "unknown dimension \"" + *dim + "\"");
                }
            }
            if (auto sig = get_string(item, "significance", path, true)) {
                if (auto s = attribute_significance_from_label(*sig)) {
                    err.significance = *s;
                } else {
                    add(ViolationCode::UnknownSignificanceLabel, path + ".significance",
                        "attribute significance must be \"significant\" or \"negligible\", got \"" +
                            *sig + "\"");
                }
            }
            if (auto note = get_string(item, "note", path, false)) err.note = *note;
            errors.push_back(std::move(err));
        }
        return errors;
    }

    std::vector<std::string> parse_missing_ids() {
        std::vector<std::string> ids;
        const json* arr = require_array("missing_finding_ids");
        if (!arr) return ids;
        for (std::size_t i = 0; i < arr->size(); ++i) {
            std::string path = "$.missing_finding_ids[" + std::to_string(i) + "]";
            if (!(*arr)[i].is_string()) {
                add(ViolationCode::WrongType, path, "expected a string finding id");
                continue;
            }
            ids.push_back((*arr)[i].get<std::string>());
        }
        return ids;
    }

    std::optional<PatientContext> parse_context() {
        auto it = raw_.find("context");
        if (it == raw_.end() || it->is_null()) return std::nullopt;
        if (!it->is_object()) {
            add(ViolationCode::WrongType, "$.context", "expected an object");
            return std::nullopt;
        }
        check_known_keys(*it, "$.context", {"age", "indication"});
        PatientContext ctx;
        if (auto age_it = it->find("age"); age_it != it->end() && !age_it->is_null()) {
            if (!age_it->is_number_integer()) {
                add(ViolationCode::WrongType, "$.context.age", "expected an integer");
            } else {
                int age = age_it->get<int>();
                if (age < 0 || age > 130)
                    add(ViolationCode::InvalidAge, "$.context.age",
                        "age must be within 0..130, got " + std::to_string(age));
                else
                    ctx.age = age;
            }
        }
        if (auto ind_it = it->find("indication"); ind_it != it->end() && !ind_it->is_null()) {
            if (!ind_it->is_string()) {
                add(ViolationCode::WrongType, "$.context.indication", "expected a string");
            } else if (!ind_it->get<std::string>().empty()) {
                ctx.indication = ind_it->get<std::string>();
            }
        }
        if (ctx.empty()) return std::nullopt;
        return ctx;
    }

    // Id uniqueness, dangling references and the matched/missing partition.
    void check_cross_references(const EvaluationAnnotation& ann) {
        std::set<std::string> reference_ids;
        for (std::size_t i = 0; i < ann.reference_findings.size(); ++i) {
            const auto& id = ann.reference_findings[i].id;
            if (id.empty()) continue;  // already reported as MissingField
            if (!reference_ids.insert(id).second)
                add(ViolationCode::DuplicateId,
                    "$.reference_findings[" + std::to_string(i) + "].id",
                    "duplicate reference finding id \"" + id + "\"");
        }

        std::set<std::string> false_ids;
        for (std::size_t i = 0; i < ann.false_findings.size(); ++i) {
            const auto& id = ann.false_findings[i].id;
            if (id.empty()) continue;
            std::string path = "$.false_findings[" + std::to_string(i) + "].id";
            if (!false_ids.insert(id).second)
                add(ViolationCode::DuplicateId, path,
                    "duplicate false finding id \"" + id + "\"");
            if (reference_ids.count(id))
                add(ViolationCode::DuplicateId, path,
                    "false finding id \"" + id + "\" collides with a reference finding id");
        }

        std::set<std::string> matched_ids;
        for (std::size_t i = 0; i < ann.matched.size(); ++i) {
            const auto& id = ann.matched[i].reference_finding_id;
            if (id.empty()) continue;
            std::string path = "$.matched[" + std::to_string(i) + "].reference_finding_id";
            if (!reference_ids.count(id))
                add(ViolationCode::DanglingFindingId, path,
                    "matched entry references unknown finding id \"" + id + "\"");
            if (!matched_ids.insert(id).second)
                add(ViolationCode::DuplicateId, path,
                    "reference finding \"" + id + "\" is matched more than once");
        }

        std::set<std::string> missing_ids;
        for (std::size_t i = 0; i < ann.missing_finding_ids.size(); ++i) {
            const auto& id = ann.missing_finding_ids[i];
            std::string path = "$.missing_finding_ids[" + std::to_string(i) + "]";
            if (!reference_ids.count(id))
                add(ViolationCode::DanglingFindingId, path,
                    "missing entry references unknown finding id \"" + id + "\"");
            if (!missing_ids.insert(id).second)
                add(ViolationCode::DuplicateId, path,
                    "finding \"" + id + "\" listed as missing more than once");
            if (matched_ids.count(id))
                add(ViolationCode::OverlappingPartition, path,
                    "finding \"" + id + "\" appears in both matched and missing");
        }

        for (const auto& id : reference_ids) {
            if (!matched_ids.count(id) && !missing_ids.count(id))
                add(ViolationCode::UnpartitionedFinding, "$.reference_findings",
                    "reference finding \"" + id + "\" is in neither matched nor missing");
        }
    }

    const json& raw_;
    std::vector<Violation> violations_;
};

}  // namespace

ValidationResult validate_annotation(const json& raw) {
    return Validator(raw).run();
}

namespace {

// Finds the end (one past the closing brace) of the JSON object starting at
// `start` (which must point at '{'), honouring strings and escapes. Returns
// npos when unbalanced.
std::size_t find_object_end(std::string_view text, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}') {
            --depth;
            if (depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

// Drops markdown code fences so that fenced documents parse like bare ones.
std::string strip_fences(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::size_t line_end = (nl == std::string_view::npos) ? text.size() : nl;
        std::string_view line = text.substr(pos, line_end - pos);
        std::size_t first = line.find_first_not_of(" \t\r");
        bool fence = first != std::string_view::npos && line.substr(first).rfind("```", 0) == 0;
        if (fence) {
            // keep the line's byte count so offsets stay meaningful
            out.append(line.size(), ' ');
        } else {
            out.append(line);
        }
        if (nl != std::string_view::npos) out.push_back('\n');
        pos = line_end + 1;
    }
    return out;
}

}  // namespace

ParseResult parse_annotation_document(std::string_view text) {
    ParseResult result;
    std::string cleaned = strip_fences(text);

    bool saw_candidate = false;
    std::size_t first_syntax_error_offset = 0;
    bool have_syntax_error = false;

    std::size_t pos = cleaned.find('{');
    while (pos != std::string::npos) {
        saw_candidate = true;
        std::size_t end = find_object_end(cleaned, pos);
        if (end == std::string::npos) {
            if (!have_syntax_error) {
                have_syntax_error = true;
                first_syntax_error_offset = pos;
            }
            pos = cleaned.find('{', pos + 1);
            continue;
        }
        json doc = json::parse(cleaned.substr(pos, end - pos), nullptr,
                               /*allow_exceptions=*/false);
        if (!doc.is_discarded()) {
            ValidationResult vr = validate_annotation(doc);
            result.annotation = std::move(vr.annotation);
            result.violations = std::move(vr.violations);
            return result;
        }
        if (!have_syntax_error) {
            have_syntax_error = true;
            first_syntax_error_offset = pos;
        }
        pos = cleaned.find('{', pos + 1);
    }

    if (!saw_candidate) {
        result.doc_error = ParseResult::DocError::NoDocumentFound;
    } else {
        result.doc_error = ParseResult::DocError::SyntaxError;
        result.error_offset = first_syntax_error_offset;
    }
    return result;
}

std::string ParseResult::error_summary() const {
    if (ok()) return {};
    if (doc_error == DocError::NoDocumentFound)
        return "NoDocumentFound: the response contains no JSON object";
    if (doc_error == DocError::SyntaxError)
        return "SyntaxError: malformed JSON object at byte offset " +
               std::to_string(error_offset);
    std::ostringstream os;
    os << violations.size() << " validation violation(s)";
    for (const auto& v : violations) os << "; " << v.format();
    return os.str();
}

EvaluationAnnotation canonicalize(const EvaluationAnnotation& annotation) {
    EvaluationAnnotation out = annotation;
    auto by_id = [](const Finding& a, const Finding& b) { return a.id < b.id; };
    std::sort(out.reference_findings.begin(), out.reference_findings.end(), by_id);
    std::sort(out.false_findings.begin(), out.false_findings.end(), by_id);
    std::sort(out.matched.begin(), out.matched.end(),
              [](const MatchedFinding& a, const MatchedFinding& b) {
                  return a.reference_finding_id < b.reference_finding_id;
              });
    for (auto& m : out.matched)
        std::sort(m.attribute_errors.begin(), m.attribute_errors.end(),
                  [](const AttributeError& a, const AttributeError& b) {
                      return a.dimension < b.dimension;
                  });
    std::sort(out.missing_finding_ids.begin(), out.missing_finding_ids.end());
    if (out.context && out.context->empty()) out.context.reset();
    return out;
}

namespace {

ordered_json finding_to_json(const Finding& f) {
    return ordered_json{{"id", f.id},
                        {"description", f.description},
                        {"significance", to_label(f.significance)}};
}

}  // namespace

std::string serialize_annotation(const EvaluationAnnotation& annotation) {
    EvaluationAnnotation a = canonicalize(annotation);

    ordered_json doc;
    doc["schema_version"] = kAnnotationSchemaVersion;
    doc["reference_findings"] = ordered_json::array();
    for (const auto& f : a.reference_findings)
        doc["reference_findings"].push_back(finding_to_json(f));
    doc["matched"] = ordered_json::array();
    for (const auto& m : a.matched) {
        ordered_json errors = ordered_json::array();
        for (const auto& e : m.attribute_errors)
            errors.push_back(ordered_json{{"dimension", to_label(e.dimension)},
                                          {"significance", to_label(e.significance)},
                                          {"note", e.note}});
        doc["matched"].push_back(ordered_json{{"reference_finding_id", m.reference_finding_id},
                                              {"candidate_description", m.candidate_description},
                                              {"attribute_errors", std::move(errors)}});
    }
    doc["false_findings"] = ordered_json::array();
    for (const auto& f : a.false_findings)
        doc["false_findings"].push_back(finding_to_json(f));
    doc["missing_finding_ids"] = a.missing_finding_ids;
    if (a.context) {
        ordered_json ctx = ordered_json::object();
        if (a.context->age) ctx["age"] = *a.context->age;
        if (a.context->indication) ctx["indication"] = *a.context->indication;
        doc["context"] = std::move(ctx);
    }
    return doc.dump(2);
}

bool structurally_equal(const EvaluationAnnotation& a, const EvaluationAnnotation& b) {
    return serialize_annotation(a) == serialize_annotation(b);
}

}  // namespace crimson
