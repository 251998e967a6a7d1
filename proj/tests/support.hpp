// Shared helpers for the unit tests: small annotation builders, a random
// valid-annotation generator for the property suites, and temp file plumbing.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crimson/annotation.hpp"
#include "crimson/rng.hpp"

namespace testsupport {

inline crimson::Finding finding(std::string id, crimson::SignificanceLevel level,
                                std::string description = "finding") {
    return {std::move(id), std::move(description), level};
}

inline crimson::MatchedFinding match(std::string ref_id,
                                     std::vector<crimson::AttributeError> errors = {},
                                     std::string description = "matched finding") {
    return {std::move(ref_id), std::move(description), std::move(errors)};
}

inline crimson::AttributeError attr(crimson::AttributeDimension dimension,
                                    crimson::AttributeSignificance significance) {
    return {dimension, significance, "note"};
}

// Builds an annotation from parallel pieces; matched/missing must partition
// the reference ids, same as the validator demands.
struct AnnotationBuilder {
    crimson::EvaluationAnnotation ann;

    AnnotationBuilder& ref(std::string id, crimson::SignificanceLevel level) {
        ann.reference_findings.push_back(finding(std::move(id), level));
        return *this;
    }
    AnnotationBuilder& matched(std::string ref_id,
                               std::vector<crimson::AttributeError> errors = {}) {
        ann.matched.push_back(match(std::move(ref_id), std::move(errors)));
        return *this;
    }
    AnnotationBuilder& missing(std::string ref_id) {
        ann.missing_finding_ids.push_back(std::move(ref_id));
        return *this;
    }
    AnnotationBuilder& false_finding(std::string id, crimson::SignificanceLevel level) {
        ann.false_findings.push_back(finding(std::move(id), level));
        return *this;
    }
    AnnotationBuilder& age(int years) {
        if (!ann.context) ann.context.emplace();
        ann.context->age = years;
        return *this;
    }
    crimson::EvaluationAnnotation build() const { return ann; }
};

// ---------------------------------------------------------------------------
// Random valid annotations

inline const char* kDescriptions[] = {
    "right pleural effusion",      "left lower lobe consolidation",
    "apical pneumothorax",         "pulmonary nodule",
    "mild cardiomegaly",           "degenerative spine change",
    "hilar adenopathy",            "calcified granuloma",
    "interstitial prominence",     "rib fracture",
};

inline crimson::SignificanceLevel random_level(crimson::CounterRng& rng) {
    return crimson::kAllSignificanceLevels[rng.pick(4)];
}

/// Generates a structurally valid annotation: ids unique, matched/missing
/// partition the reference set, attribute dimensions unique per match.
inline crimson::EvaluationAnnotation random_annotation(crimson::CounterRng& rng) {
    crimson::EvaluationAnnotation ann;
    auto pick_description = [&] { return kDescriptions[rng.pick(10)]; };

    std::size_t n_ref = rng.pick(6);  // 0..5
    for (std::size_t i = 0; i < n_ref; ++i) {
        ann.reference_findings.push_back(
            finding("r" + std::to_string(i + 1), random_level(rng), pick_description()));
    }
    for (const auto& f : ann.reference_findings) {
        if (rng.pick(10) < 6) {
            std::vector<crimson::AttributeError> errors;
            std::size_t n_err = rng.pick(4);  // 0..3
            // distinct dimensions via a partial shuffle of the full set
            int dims[crimson::kAttributeDimensionCount];
            for (std::size_t d = 0; d < crimson::kAttributeDimensionCount; ++d) {
                dims[d] = static_cast<int>(d);
            }
            for (std::size_t e = 0; e < n_err; ++e) {
                std::size_t swap_with = e + rng.pick(crimson::kAttributeDimensionCount - e);
                std::swap(dims[e], dims[swap_with]);
                errors.push_back(attr(static_cast<crimson::AttributeDimension>(dims[e]),
                                      rng.pick(2) == 0
                                          ? crimson::AttributeSignificance::Significant
                                          : crimson::AttributeSignificance::Negligible));
            }
            ann.matched.push_back(match(f.id, std::move(errors), pick_description()));
        } else {
            ann.missing_finding_ids.push_back(f.id);
        }
    }
    std::size_t n_false = rng.pick(4);  // 0..3
    for (std::size_t i = 0; i < n_false; ++i) {
        ann.false_findings.push_back(
            finding("f" + std::to_string(i + 1), random_level(rng), pick_description()));
    }
    if (rng.pick(2) == 0) {
        ann.context.emplace();
        if (rng.pick(2) == 0) ann.context->age = static_cast<int>(rng.pick(100)) + 1;
        if (rng.pick(2) == 0) ann.context->indication = "dyspnea";
        if (ann.context->empty()) ann.context.reset();
    }
    return ann;
}

// ---------------------------------------------------------------------------
// Scratch files

/// Self-cleaning temp directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        std::fprintf(stderr, "cannot create temp dir for tag %s\n", tag.c_str());
        std::abort();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

    std::filesystem::path write(const std::string& name, const std::string& content) const {
        auto file = path_ / name;
        std::filesystem::create_directories(file.parent_path());
        std::ofstream out(file, std::ios::binary);
        out << content;
        return file;
    }

private:
    std::filesystem::path path_;
};

}  // namespace testsupport
