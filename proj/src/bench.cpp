/**
 * @file bench.cpp
 * @brief Dataset loaders, the three benchmark protocols, and the perturbation
 *        generator.
 */
#include "crimson/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "crimson/rng.hpp"

namespace crimson {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// --- line-delimited JSON scaffolding ---------------------------------------

[[noreturn]] void schema_fail(const std::string& message, int line) {
    throw DatasetError(DatasetError::Kind::SchemaViolation, message, line);
}

std::string normalize_newlines(std::string text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
        out.push_back(text[i] == '\r' ? '\n' : text[i]);
    }
    return out;
}

bool is_blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

/// Calls `handle(object, line_number)` for every non-blank line.
void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const json&, int)>& handle) {
    std::ifstream in(path);
    if (!in) {
        throw DatasetError(DatasetError::Kind::FileNotFound,
                           "cannot open dataset file: " + path.string());
    }
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded()) schema_fail("record is not valid JSON", line_no);
        if (!record.is_object()) schema_fail("record must be a JSON object", line_no);
        handle(record, line_no);
    }
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where, int line) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            schema_fail(where + ": unknown field \"" + it.key() + "\"", line);
        }
    }
}

std::string require_string(const json& obj, const char* key, const std::string& where,
                           int line) {
    auto it = obj.find(key);
    if (it == obj.end()) schema_fail(where + ": missing field \"" + key + "\"", line);
    if (!it->is_string()) schema_fail(where + ": field \"" + key + "\" must be a string", line);
    return it->get<std::string>();
}

std::string require_report(const json& obj, const char* key, const std::string& where,
                           int line) {
    std::string text = normalize_newlines(require_string(obj, key, where, line));
    if (text.find_first_not_of(" \t\n") == std::string::npos) {
        schema_fail(where + ": field \"" + key + "\" must not be empty", line);
    }
    return text;
}

std::optional<PatientContext> parse_case_context(const json& obj, const std::string& where,
                                                 int line) {
    auto it = obj.find("context");
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_object()) schema_fail(where + ": \"context\" must be an object", line);
    check_keys(*it, {"age", "indication"}, where + ".context", line);
    PatientContext ctx;
    if (auto age = it->find("age"); age != it->end() && !age->is_null()) {
        if (!age->is_number_integer()) schema_fail(where + ": context age must be an integer", line);
        long long v = age->get<long long>();
        if (v < 0 || v > 130) schema_fail(where + ": context age out of range", line);
        ctx.age = static_cast<int>(v);
    }
    if (auto ind = it->find("indication"); ind != it->end() && !ind->is_null()) {
        if (!ind->is_string()) schema_fail(where + ": context indication must be a string", line);
        std::string text = ind->get<std::string>();
        if (!text.empty()) ctx.indication = text;
    }
    if (ctx.empty()) return std::nullopt;
    return ctx;
}

void check_unique_case_id(std::set<std::string>& seen, const std::string& id, int line) {
    if (!seen.insert(id).second) {
        throw DatasetError(DatasetError::Kind::DuplicateCaseId,
                           "duplicate case_id \"" + id + "\"", line);
    }
}

// --- shared run helpers -----------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// captured per index and the lowest-index failure is rethrown so reruns
/// fail identically regardless of scheduling.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    for (auto& failure : failures) {
        if (failure) std::rethrow_exception(failure);
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

/// Fills one SeriesCorrelation / DeltaCorrelation statistic, downgrading
/// undefined statistics to a note instead of aborting the whole report.
template <typename Stat>
void compute_stat(const stats::PairedSamples& samples, Stat statistic,
                  stats::CorrelationStatistic which, double level, int resamples,
                  std::uint64_t seed, std::optional<double>& value,
                  std::optional<stats::ConfidenceInterval>& ci, std::string& note) {
    auto append_note = [&](const std::string& text) {
        if (!note.empty()) note += "; ";
        note += text;
    };
    try {
        value = statistic(samples);
    } catch (const stats::StatsError& e) {
        append_note(std::string(stats::to_string(which)) + " undefined: " + e.what());
        return;
    }
    try {
        ci = stats::bootstrap_ci(samples, which, level, resamples, seed);
    } catch (const stats::StatsError& e) {
        append_note(std::string(stats::to_string(which)) + " CI unavailable: " + e.what());
    }
}

ordered_json ci_to_json(const stats::ConfidenceInterval& ci) {
    return ordered_json{{"point", ci.point}, {"lower", ci.lower}, {"upper", ci.upper},
                        {"level", ci.level}, {"resamples", ci.resamples}, {"seed", ci.seed}};
}

void put_stat(ordered_json& out, const char* name, const std::optional<double>& value,
              const std::optional<stats::ConfidenceInterval>& ci) {
    out[name] = value ? ordered_json(*value) : ordered_json(nullptr);
    out[std::string(name) + "_ci"] = ci ? ci_to_json(*ci) : ordered_json(nullptr);
}

std::string ci_cell(const std::optional<double>& value,
                    const std::optional<stats::ConfidenceInterval>& ci) {
    if (!value) return "n/a";
    std::string cell = format_double(*value);
    if (ci) cell += " [" + format_double(ci->lower) + ", " + format_double(ci->upper) + "]";
    return cell;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loaders

std::vector<ScoredPairCase> load_pairs_dataset(const std::filesystem::path& path) {
    std::vector<ScoredPairCase> cases;
    std::set<std::string> ids;
    for_each_record(path, [&](const json& rec, int line) {
        check_keys(rec, {"case_id", "reference", "candidate", "context",
                         "annotated_significant_errors"},
                   "pairs", line);
        ScoredPairCase c;
        c.case_id = require_string(rec, "case_id", "pairs", line);
        check_unique_case_id(ids, c.case_id, line);
        c.reference = require_report(rec, "reference", "pairs", line);
        c.candidate = require_report(rec, "candidate", "pairs", line);
        c.context = parse_case_context(rec, "pairs", line);
        if (auto it = rec.find("annotated_significant_errors"); it != rec.end() && !it->is_null()) {
            if (!it->is_number_integer()) {
                schema_fail("pairs: annotated_significant_errors must be an integer", line);
            }
            long long v = it->get<long long>();
            if (v < 0) schema_fail("pairs: annotated_significant_errors must be >= 0", line);
            c.annotated_significant_errors = v;
        }
        cases.push_back(std::move(c));
    });
    return cases;
}

std::vector<RankingCase> load_ranking_dataset(const std::filesystem::path& path) {
    std::vector<RankingCase> cases;
    std::set<std::string> ids;
    for_each_record(path, [&](const json& rec, int line) {
        check_keys(rec, {"case_id", "category", "reference", "context", "candidates",
                         "expected"},
                   "ranking", line);
        RankingCase c;
        c.case_id = require_string(rec, "case_id", "ranking", line);
        check_unique_case_id(ids, c.case_id, line);
        c.category = require_string(rec, "category", "ranking", line);
        if (c.category.empty()) schema_fail("ranking: category must not be empty", line);
        c.reference = require_report(rec, "reference", "ranking", line);
        c.context = parse_case_context(rec, "ranking", line);

        auto cand_it = rec.find("candidates");
        if (cand_it == rec.end() || !cand_it->is_array() || cand_it->size() < 2) {
            schema_fail("ranking: \"candidates\" must be an array of at least two entries", line);
        }
        std::set<std::string> labels;
        for (const auto& entry : *cand_it) {
            if (!entry.is_object()) schema_fail("ranking: candidate entries must be objects", line);
            check_keys(entry, {"label", "report"}, "ranking.candidates", line);
            RankingCandidate cand;
            cand.label = require_string(entry, "label", "ranking.candidates", line);
            cand.report = require_report(entry, "report", "ranking.candidates", line);
            if (!labels.insert(cand.label).second) {
                schema_fail("ranking: duplicate candidate label \"" + cand.label + "\"", line);
            }
            c.candidates.push_back(std::move(cand));
        }

        auto exp_it = rec.find("expected");
        if (exp_it == rec.end() || !exp_it->is_object()) {
            schema_fail("ranking: \"expected\" must be an object", line);
        }
        check_keys(*exp_it, {"order", "equivalent"}, "ranking.expected", line);
        bool has_order = exp_it->contains("order");
        bool has_equiv = exp_it->contains("equivalent");
        if (has_order == has_equiv) {
            schema_fail("ranking: expected must contain exactly one of \"order\" or \"equivalent\"",
                        line);
        }
        auto read_labels = [&](const json& arr, const char* what) {
            if (!arr.is_array()) schema_fail(std::string("ranking: expected ") + what +
                                                 " must be an array of labels", line);
            std::vector<std::string> out;
            std::set<std::string> seen;
            for (const auto& v : arr) {
                if (!v.is_string()) schema_fail("ranking: expected labels must be strings", line);
                std::string label = v.get<std::string>();
                if (!labels.count(label)) {
                    schema_fail("ranking: expected label \"" + label +
                                    "\" does not name a candidate", line);
                }
                if (!seen.insert(label).second) {
                    schema_fail("ranking: expected label \"" + label + "\" repeats", line);
                }
                out.push_back(std::move(label));
            }
            return out;
        };
        if (has_order) {
            c.expected.order = read_labels((*exp_it)["order"], "order");
            if (c.expected.order.size() != c.candidates.size()) {
                schema_fail("ranking: expected order must list every candidate label", line);
            }
        } else {
            c.expected.equivalent = read_labels((*exp_it)["equivalent"], "equivalent");
            if (c.expected.equivalent.size() < 2) {
                schema_fail("ranking: expected equivalence set needs at least two labels", line);
            }
        }
        cases.push_back(std::move(c));
    });
    return cases;
}

std::vector<PreferenceCase> load_preference_dataset(const std::filesystem::path& path) {
    std::vector<PreferenceCase> cases;
    std::set<std::string> ids;
    std::vector<int> annotated_lines;  // lines that carried rater_errors
    std::vector<int> record_lines;
    for_each_record(path, [&](const json& rec, int line) {
        check_keys(rec, {"case_id", "reference", "context", "candidate_a", "candidate_b",
                         "ratings_a", "ratings_b", "rater_errors"},
                   "preference", line);
        PreferenceCase c;
        c.case_id = require_string(rec, "case_id", "preference", line);
        check_unique_case_id(ids, c.case_id, line);
        c.reference = require_report(rec, "reference", "preference", line);
        c.context = parse_case_context(rec, "preference", line);
        c.candidate_a = require_report(rec, "candidate_a", "preference", line);
        c.candidate_b = require_report(rec, "candidate_b", "preference", line);

        auto read_ratings = [&](const char* key) {
            auto it = rec.find(key);
            if (it == rec.end() || !it->is_array() || it->empty()) {
                schema_fail(std::string("preference: \"") + key +
                                "\" must be a non-empty array", line);
            }
            std::vector<int> out;
            for (const auto& v : *it) {
                if (!v.is_number_integer()) {
                    schema_fail(std::string("preference: ") + key + " entries must be integers",
                                line);
                }
                long long r = v.get<long long>();
                if (r < 1 || r > 5) {
                    schema_fail(std::string("preference: ") + key + " entries must be in 1..5",
                                line);
                }
                out.push_back(static_cast<int>(r));
            }
            return out;
        };
        c.ratings_a = read_ratings("ratings_a");
        c.ratings_b = read_ratings("ratings_b");
        if (c.ratings_a.size() != c.ratings_b.size()) {
            schema_fail("preference: ratings_a and ratings_b must have the same rater count",
                        line);
        }

        if (auto it = rec.find("rater_errors"); it != rec.end() && !it->is_null()) {
            if (!it->is_array() || it->empty()) {
                schema_fail("preference: \"rater_errors\" must be a non-empty array", line);
            }
            std::set<std::string> rater_names;
            for (const auto& entry : *it) {
                if (!entry.is_object()) {
                    schema_fail("preference: rater_errors entries must be objects", line);
                }
                check_keys(entry, {"rater", "a", "b"}, "preference.rater_errors", line);
                RaterErrorAnnotation ann;
                ann.rater = require_string(entry, "rater", "preference.rater_errors", line);
                if (!rater_names.insert(ann.rater).second) {
                    schema_fail("preference: rater \"" + ann.rater + "\" repeats", line);
                }
                auto read_errors = [&](const char* key) {
                    auto side = entry.find(key);
                    if (side == entry.end() || !side->is_array()) {
                        schema_fail(std::string("preference: rater_errors entries need an \"") +
                                        key + "\" array", line);
                    }
                    std::vector<RaterError> out;
                    for (const auto& e : *side) {
                        if (!e.is_object()) {
                            schema_fail("preference: rater error entries must be objects", line);
                        }
                        check_keys(e, {"class", "finding_id", "significance"},
                                   "preference.rater_errors", line);
                        RaterError err;
                        err.error_class =
                            require_string(e, "class", "preference.rater_errors", line);
                        if (err.error_class != "false" && err.error_class != "missing" &&
                            err.error_class != "attribute") {
                            schema_fail("preference: unknown error class \"" + err.error_class +
                                        "\" (expected false, missing, or attribute)", line);
                        }
                        err.finding_id =
                            require_string(e, "finding_id", "preference.rater_errors", line);
                        if (err.finding_id.empty()) {
                            schema_fail("preference: error finding_id must not be empty", line);
                        }
                        std::string sig =
                            require_string(e, "significance", "preference.rater_errors", line);
                        auto parsed = significance_from_label(sig);
                        if (!parsed) {
                            schema_fail("preference: unknown significance label \"" + sig + "\"",
                                        line);
                        }
                        err.significance = *parsed;
                        out.push_back(std::move(err));
                    }
                    return out;
                };
                ann.candidate_a = read_errors("a");
                ann.candidate_b = read_errors("b");
                c.rater_errors.push_back(std::move(ann));
            }
            annotated_lines.push_back(line);
        }
        record_lines.push_back(line);
        cases.push_back(std::move(c));
    });
    // Error analysis compares per-case counts, so a partially annotated file
    // is a dataset mistake rather than something to silently average over.
    if (!annotated_lines.empty() && annotated_lines.size() != record_lines.size()) {
        throw DatasetError(DatasetError::Kind::AnnotationMismatch,
                           "rater_errors present on " + std::to_string(annotated_lines.size()) +
                               " of " + std::to_string(record_lines.size()) +
                               " cases; annotate all cases or none");
    }
    return cases;
}

// ---------------------------------------------------------------------------
// PairEvaluator

PairEvaluator::PairEvaluator(Judge& judge, JudgeConfig config, RubricText rubric,
                             ScoringOptions scoring)
    : judge_(judge),
      config_(std::move(config)),
      rubric_(std::move(rubric)),
      scoring_(scoring) {
    config_.validate();
}

PairEvaluator::Result PairEvaluator::evaluate(const std::string& reference,
                                              const std::string& candidate,
                                              const std::optional<PatientContext>& context) const {
    // Runs stay sequential here; the harnesses parallelize across cases and
    // the judge itself enforces the request concurrency limit.
    Result result;
    result.annotations = annotate_pair(judge_, config_, reference, candidate, context,
                                       rubric_, /*parallel=*/false);
    std::vector<ScoreBreakdown> breakdowns;
    breakdowns.reserve(result.annotations.size());
    for (const auto& annotation : result.annotations) {
        breakdowns.push_back(score(annotation, scoring_));
    }
    result.score = average_runs(breakdowns);
    return result;
}

// ---------------------------------------------------------------------------
// Correlation protocol

CorrelationReport run_correlation(const std::vector<ScoredPairCase>& cases,
                                  const PairEvaluator& evaluator,
                                  const CorrelationOptions& options) {
    if (cases.size() < 2) {
        throw DatasetError(DatasetError::Kind::SchemaViolation,
                           "correlation needs at least two cases");
    }
    std::vector<const ScoredPairCase*> ordered;
    for (const auto& c : cases) {
        if (!c.annotated_significant_errors) {
            throw DatasetError(DatasetError::Kind::MissingGroundTruth,
                               "case \"" + c.case_id +
                                   "\" has no annotated_significant_errors value");
        }
        ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const ScoredPairCase* a, const ScoredPairCase* b) {
                  return a->case_id < b->case_id;
              });

    struct Slot {
        bool ok = false;
        double mean_final = 0.0;
        double mean_errors = 0.0;
        double mean_weighted = 0.0;
        std::string failure;
    };
    std::vector<Slot> slots(ordered.size());
    parallel_for(ordered.size(), options.concurrency, [&](std::size_t i) {
        const auto& c = *ordered[i];
        try {
            auto result = evaluator.evaluate(c.reference, c.candidate, c.context);
            double errors = 0.0, weighted = 0.0;
            for (const auto& ann : result.annotations) {
                auto counts = error_counts(ann);
                errors += static_cast<double>(counts.total);
                weighted += counts.weighted;
            }
            auto n = static_cast<double>(result.annotations.size());
            slots[i] = {true, result.score.mean_final, errors / n, weighted / n, {}};
        } catch (const JudgeError&) {
            if (!options.skip_failed) throw;
            slots[i].failure = "judge failure";
        }
    });

    CorrelationReport report;
    report.options = options;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (!slots[i].ok) {
            report.skipped_case_ids.push_back(ordered[i]->case_id);
            continue;
        }
        report.case_ids.push_back(ordered[i]->case_id);
        report.ground_truth.push_back(
            static_cast<double>(*ordered[i]->annotated_significant_errors));
        report.mean_final.push_back(slots[i].mean_final);
        report.mean_error_count.push_back(slots[i].mean_errors);
        report.mean_weighted_error_count.push_back(slots[i].mean_weighted);
    }
    if (report.case_ids.size() < 2) {
        throw DatasetError(DatasetError::Kind::SchemaViolation,
                           "fewer than two cases left to correlate after skipping failures");
    }

    auto add_series = [&](const std::string& name, std::vector<double> values,
                          bool sign_flipped) {
        SeriesCorrelation series;
        series.series = name;
        series.sign_flipped = sign_flipped;
        stats::PairedSamples samples(report.ground_truth, std::move(values));
        compute_stat(samples, [](const stats::PairedSamples& s) { return kendall_tau_a(s); },
                     stats::CorrelationStatistic::TauA, options.ci_level, options.ci_resamples,
                     options.seed, series.tau_a, series.tau_a_ci, series.degenerate_note);
        compute_stat(samples, [](const stats::PairedSamples& s) { return kendall_tau_b(s); },
                     stats::CorrelationStatistic::TauB, options.ci_level, options.ci_resamples,
                     options.seed, series.tau_b, series.tau_b_ci, series.degenerate_note);
        compute_stat(samples, [](const stats::PairedSamples& s) { return pearson_r(s); },
                     stats::CorrelationStatistic::Pearson, options.ci_level,
                     options.ci_resamples, options.seed, series.pearson, series.pearson_ci,
                     series.degenerate_note);
        report.series.push_back(std::move(series));
    };

    // Higher scores should mean fewer errors, so the score series is negated
    // before correlating; a perfect metric then yields tau = +1.
    std::vector<double> flipped;
    flipped.reserve(report.mean_final.size());
    for (double v : report.mean_final) flipped.push_back(-v);
    add_series("crimson_score", std::move(flipped), true);
    add_series("error_count", report.mean_error_count, false);
    add_series("weighted_error_count", report.mean_weighted_error_count, false);
    return report;
}

// ---------------------------------------------------------------------------
// Ranking protocol

RankingReport run_ranking(const std::vector<RankingCase>& cases,
                          const PairEvaluator& evaluator, const RankingOptions& options) {
    if (cases.empty()) {
        throw DatasetError(DatasetError::Kind::SchemaViolation, "ranking needs at least one case");
    }
    std::vector<const RankingCase*> ordered;
    for (const auto& c : cases) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const RankingCase* a, const RankingCase* b) { return a->case_id < b->case_id; });

    struct Slot {
        bool ok = false;
        RankingCaseResult result;
    };
    std::vector<Slot> slots(ordered.size());
    parallel_for(ordered.size(), options.concurrency, [&](std::size_t i) {
        const auto& c = *ordered[i];
        RankingCaseResult result;
        result.case_id = c.case_id;
        result.category = c.category;
        std::map<std::string, double> by_label;
        try {
            for (const auto& cand : c.candidates) {
                auto eval = evaluator.evaluate(c.reference, cand.report, c.context);
                result.scores.emplace_back(cand.label, eval.score.mean_final);
                by_label[cand.label] = eval.score.mean_final;
            }
        } catch (const JudgeError&) {
            if (!options.skip_failed) throw;
            return;  // leave slot marked failed
        }

        if (c.expected.is_order()) {
            result.passed = true;
            for (std::size_t k = 0; k + 1 < c.expected.order.size(); ++k) {
                const auto& better = c.expected.order[k];
                const auto& worse = c.expected.order[k + 1];
                double gap = by_label[better] - by_label[worse];
                // A gap exactly at the threshold counts as clinically
                // equivalent, which a strict ordering expectation rejects.
                if (!(gap > options.tie_threshold)) {
                    result.passed = false;
                    result.detail = "gap " + better + ">" + worse + " = " + format_double(gap) +
                                    " is not above the tie threshold " +
                                    format_double(options.tie_threshold);
                    break;
                }
            }
        } else {
            result.passed = true;
            const auto& group = c.expected.equivalent;
            for (std::size_t a = 0; a < group.size() && result.passed; ++a) {
                for (std::size_t b = a + 1; b < group.size(); ++b) {
                    double diff = std::fabs(by_label[group[a]] - by_label[group[b]]);
                    if (diff > options.tie_threshold) {
                        result.passed = false;
                        result.detail = "spread |" + group[a] + "-" + group[b] + "| = " +
                                        format_double(diff) + " exceeds the tie threshold " +
                                        format_double(options.tie_threshold);
                        break;
                    }
                }
            }
        }
        slots[i] = {true, std::move(result)};
    });

    RankingReport report;
    report.tie_threshold = options.tie_threshold;
    std::map<std::string, CategoryTally> tallies;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i].ok) {
            report.skipped_case_ids.push_back(ordered[i]->case_id);
            continue;
        }
        auto& result = slots[i].result;
        auto& tally = tallies[result.category];
        tally.category = result.category;
        tally.total += 1;
        if (result.passed) {
            tally.passed += 1;
            report.passed_total += 1;
        }
        report.case_total += 1;
        report.cases.push_back(std::move(result));
    }
    for (auto& [name, tally] : tallies) report.categories.push_back(tally);
    return report;
}

// ---------------------------------------------------------------------------
// Preference protocol

namespace {

/// Judge-side error list mirroring the rater annotation shape, derived from
/// the first run's annotation (runs are deterministic per judge seed, so the
/// first run is a stable representative).
std::vector<RaterError> judge_errors(const EvaluationAnnotation& ann) {
    std::vector<RaterError> out;
    std::map<std::string, SignificanceLevel> ref;
    for (const auto& f : ann.reference_findings) ref[f.id] = f.significance;
    for (const auto& f : ann.false_findings) {
        out.push_back({"false", f.id, f.significance});
    }
    for (const auto& id : ann.missing_finding_ids) {
        out.push_back({"missing", id, ref[id]});
    }
    for (const auto& m : ann.matched) {
        for (std::size_t k = 0; k < m.attribute_errors.size(); ++k) {
            out.push_back({"attribute", m.reference_finding_id, ref[m.reference_finding_id]});
        }
    }
    return out;
}

long long count_class(const std::vector<RaterError>& errors, const std::string& cls) {
    return std::count_if(errors.begin(), errors.end(),
                         [&](const RaterError& e) { return e.error_class == cls; });
}

}  // namespace

PreferenceReport run_preference(const std::vector<PreferenceCase>& cases,
                                const PairEvaluator& evaluator,
                                const PreferenceOptions& options) {
    if (cases.size() < 2) {
        throw DatasetError(DatasetError::Kind::SchemaViolation,
                           "preference needs at least two cases");
    }
    std::vector<const PreferenceCase*> ordered;
    for (const auto& c : cases) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const PreferenceCase* a, const PreferenceCase* b) {
                  return a->case_id < b->case_id;
              });

    struct Slot {
        bool ok = false;
        double score_a = 0.0, score_b = 0.0;
        EvaluationAnnotation first_run_a, first_run_b;
    };
    std::vector<Slot> slots(ordered.size());
    parallel_for(ordered.size(), options.concurrency, [&](std::size_t i) {
        const auto& c = *ordered[i];
        try {
            auto a = evaluator.evaluate(c.reference, c.candidate_a, c.context);
            auto b = evaluator.evaluate(c.reference, c.candidate_b, c.context);
            slots[i] = {true, a.score.mean_final, b.score.mean_final,
                        a.annotations.front(), b.annotations.front()};
        } catch (const JudgeError&) {
            if (!options.skip_failed) throw;
        }
    });

    PreferenceReport report;
    report.options = options;
    std::vector<const PreferenceCase*> kept;
    std::vector<const Slot*> kept_slots;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i].ok) {
            report.skipped_case_ids.push_back(ordered[i]->case_id);
            continue;
        }
        kept.push_back(ordered[i]);
        kept_slots.push_back(&slots[i]);
        const auto& c = *ordered[i];
        PreferenceCaseResult result;
        result.case_id = c.case_id;
        result.delta_score = slots[i].score_a - slots[i].score_b;
        double sum_a = 0.0, sum_b = 0.0;
        for (std::size_t r = 0; r < c.ratings_a.size(); ++r) {
            sum_a += c.ratings_a[r];
            sum_b += c.ratings_b[r];
            result.per_rater_delta_rating.push_back(
                static_cast<double>(c.ratings_a[r] - c.ratings_b[r]));
        }
        auto n = static_cast<double>(c.ratings_a.size());
        result.delta_rating = (sum_a - sum_b) / n;
        report.cases.push_back(std::move(result));
    }
    if (report.cases.size() < 2) {
        throw DatasetError(DatasetError::Kind::SchemaViolation,
                           "fewer than two cases left after skipping failures");
    }

    auto correlate = [&](std::vector<double> x, std::vector<double> y) {
        DeltaCorrelation corr;
        stats::PairedSamples samples(std::move(x), std::move(y));
        compute_stat(samples, [](const stats::PairedSamples& s) { return kendall_tau_b(s); },
                     stats::CorrelationStatistic::TauB, options.ci_level, options.ci_resamples,
                     options.seed, corr.tau_b, corr.tau_b_ci, corr.degenerate_note);
        compute_stat(samples, [](const stats::PairedSamples& s) { return pearson_r(s); },
                     stats::CorrelationStatistic::Pearson, options.ci_level,
                     options.ci_resamples, options.seed, corr.pearson, corr.pearson_ci,
                     corr.degenerate_note);
        return corr;
    };

    std::vector<double> deltas, mean_ratings;
    for (const auto& c : report.cases) {
        deltas.push_back(c.delta_score);
        mean_ratings.push_back(c.delta_rating);
    }
    report.aggregate = correlate(deltas, mean_ratings);

    // Per-rater series only make sense when the same panel rated every case.
    std::size_t rater_count = kept.front()->ratings_a.size();
    bool uniform = std::all_of(kept.begin(), kept.end(), [&](const PreferenceCase* c) {
        return c->ratings_a.size() == rater_count;
    });
    if (uniform) {
        for (std::size_t r = 0; r < rater_count; ++r) {
            std::string name = "rater_" + std::to_string(r + 1);
            if (!kept.front()->rater_errors.empty() &&
                kept.front()->rater_errors.size() == rater_count) {
                name = kept.front()->rater_errors[r].rater;
            }
            std::vector<double> series;
            for (const auto& c : report.cases) series.push_back(c.per_rater_delta_rating[r]);
            report.per_rater.emplace_back(name, correlate(deltas, series));
        }
    }

    // Agreement analysis against the judge's own error lists.
    if (!kept.front()->rater_errors.empty()) {
        std::map<std::string, std::size_t> rater_index;
        for (const auto& ann : kept.front()->rater_errors) {
            rater_index.emplace(ann.rater, rater_index.size());
        }
        std::vector<std::string> categories;
        for (auto level : kAllSignificanceLevels) {
            categories.emplace_back(to_label(level));
        }
        struct Accum {
            std::vector<double> rater_counts[3], judge_counts[3];
            std::vector<std::string> rater_labels, judge_labels;
        };
        std::vector<Accum> accums(rater_index.size());
        const char* classes[3] = {"false", "missing", "attribute"};

        for (std::size_t i = 0; i < kept.size(); ++i) {
            const auto& c = *kept[i];
            auto judge_a = judge_errors(kept_slots[i]->first_run_a);
            auto judge_b = judge_errors(kept_slots[i]->first_run_b);
            for (const auto& ann : c.rater_errors) {
                auto it = rater_index.find(ann.rater);
                if (it == rater_index.end()) {
                    throw DatasetError(DatasetError::Kind::AnnotationMismatch,
                                       "rater \"" + ann.rater +
                                           "\" appears in case \"" + c.case_id +
                                           "\" but not in the first case");
                }
                auto& accum = accums[it->second];
                auto take_side = [&](const std::vector<RaterError>& rater,
                                     const std::vector<RaterError>& judge) {
                    for (int k = 0; k < 3; ++k) {
                        accum.rater_counts[k].push_back(
                            static_cast<double>(count_class(rater, classes[k])));
                        accum.judge_counts[k].push_back(
                            static_cast<double>(count_class(judge, classes[k])));
                    }
                    // Severity agreement over errors both sides located, keyed
                    // by (class, finding id); repeated attribute hits collapse.
                    std::map<std::pair<std::string, std::string>, SignificanceLevel> judged;
                    for (const auto& e : judge) judged[{e.error_class, e.finding_id}] = e.significance;
                    std::set<std::pair<std::string, std::string>> taken;
                    for (const auto& e : rater) {
                        auto key = std::make_pair(e.error_class, e.finding_id);
                        auto match = judged.find(key);
                        if (match == judged.end() || !taken.insert(key).second) continue;
                        accum.rater_labels.emplace_back(to_label(e.significance));
                        accum.judge_labels.emplace_back(to_label(match->second));
                    }
                };
                take_side(ann.candidate_a, judge_a);
                take_side(ann.candidate_b, judge_b);
            }
        }

        for (const auto& [name, idx] : rater_index) {
            const auto& accum = accums[idx];
            RaterAgreement agreement;
            agreement.rater = name;
            agreement.mae_false =
                stats::mean_absolute_error(accum.rater_counts[0], accum.judge_counts[0]);
            agreement.mae_missing =
                stats::mean_absolute_error(accum.rater_counts[1], accum.judge_counts[1]);
            agreement.mae_attribute =
                stats::mean_absolute_error(accum.rater_counts[2], accum.judge_counts[2]);
            if (!accum.rater_labels.empty()) {
                agreement.severity_confusion =
                    stats::confusion_matrix(accum.rater_labels, accum.judge_labels, categories);
            }
            report.error_analysis.push_back(std::move(agreement));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Perturbation

std::string_view to_label(PerturbationRegime regime) {
    switch (regime) {
        case PerturbationRegime::EditFindings: return "edit_findings";
        case PerturbationRegime::AddFindings: return "add_findings";
        case PerturbationRegime::RemoveFindings: return "remove_findings";
        case PerturbationRegime::RandomReportSwap: return "random_report_swap";
    }
    return "unknown";
}

std::optional<PerturbationRegime> regime_from_label(std::string_view label) {
    if (label == "edit_findings") return PerturbationRegime::EditFindings;
    if (label == "add_findings") return PerturbationRegime::AddFindings;
    if (label == "remove_findings") return PerturbationRegime::RemoveFindings;
    if (label == "random_report_swap") return PerturbationRegime::RandomReportSwap;
    return std::nullopt;
}

std::vector<ChatMessage> build_perturb_prompt(PerturbationRegime regime,
                                              const std::string& reference) {
    std::string instruction;
    switch (regime) {
        case PerturbationRegime::EditFindings:
            instruction =
                "Rewrite the radiology report below, altering the details of one or two "
                "findings (for example laterality, size, or severity) while keeping the "
                "overall structure. Do not add or remove findings.";
            break;
        case PerturbationRegime::AddFindings:
            instruction =
                "Rewrite the radiology report below, inventing one or two additional "
                "plausible findings that are not present in the original. Keep every "
                "original finding unchanged.";
            break;
        case PerturbationRegime::RemoveFindings:
            instruction =
                "Rewrite the radiology report below, silently omitting one or two of its "
                "findings. Keep the remaining findings unchanged.";
            break;
        case PerturbationRegime::RandomReportSwap:
            throw JudgeError(JudgeError::Kind::Config,
                             "random_report_swap does not use a prompt");
    }
    return {
        {"system",
         "You generate degraded variants of radiology reports for evaluation purposes. "
         "Respond with the rewritten report text only, no commentary."},
        {"user", instruction + "\n\nREPORT:\n" + reference},
    };
}

PerturbedCandidate perturb(const std::string& reference, PerturbationRegime regime,
                           Judge* judge, const std::vector<std::string>& pool,
                           std::size_t pool_index, std::uint64_t seed) {
    PerturbedCandidate out;
    out.regime = regime;
    out.seed = seed;
    if (regime == PerturbationRegime::RandomReportSwap) {
        if (pool.size() < 2 || pool_index >= pool.size()) {
            throw DatasetError(DatasetError::Kind::EmptyPool,
                               "report swap needs a pool with at least two entries");
        }
        // Draw from [0, n-1) and shift past the reference's own slot so the
        // swap target is uniform over the other n-1 reports.
        std::uint64_t j = rng_pick(seed, pool_index, pool.size() - 1);
        if (j >= pool_index) ++j;
        out.text = pool[j];
        return out;
    }
    if (judge == nullptr) {
        throw JudgeError(JudgeError::Kind::Config,
                         std::string("regime ") + std::string(to_label(regime)) +
                             " needs a judge to rewrite the report");
    }
    ChatRequest request;
    request.messages = build_perturb_prompt(regime, reference);
    request.run_index = 0;
    std::string text = judge->complete(request);
    // Trim whitespace; the model is told to answer with the report alone.
    auto begin = text.find_first_not_of(" \t\r\n");
    auto end = text.find_last_not_of(" \t\r\n");
    out.text = begin == std::string::npos ? std::string() : text.substr(begin, end - begin + 1);
    if (out.text.empty()) {
        throw JudgeError(JudgeError::Kind::OutputUnparseable,
                         "perturbation model returned an empty report");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report documents

namespace {

ordered_json series_to_json(const SeriesCorrelation& s) {
    ordered_json out;
    out["series"] = s.series;
    out["sign_flipped"] = s.sign_flipped;
    put_stat(out, "tau_a", s.tau_a, s.tau_a_ci);
    put_stat(out, "tau_b", s.tau_b, s.tau_b_ci);
    put_stat(out, "pearson", s.pearson, s.pearson_ci);
    if (!s.degenerate_note.empty()) out["note"] = s.degenerate_note;
    return out;
}

ordered_json delta_to_json(const DeltaCorrelation& c) {
    ordered_json out;
    put_stat(out, "tau_b", c.tau_b, c.tau_b_ci);
    put_stat(out, "pearson", c.pearson, c.pearson_ci);
    if (!c.degenerate_note.empty()) out["note"] = c.degenerate_note;
    return out;
}

}  // namespace

ordered_json to_json(const CorrelationReport& report) {
    ordered_json doc;
    doc["protocol"] = "correlation";
    ordered_json cases = ordered_json::array();
    for (std::size_t i = 0; i < report.case_ids.size(); ++i) {
        cases.push_back(ordered_json{{"case_id", report.case_ids[i]},
                                     {"annotated_significant_errors", report.ground_truth[i]},
                                     {"mean_final_score", report.mean_final[i]},
                                     {"mean_error_count", report.mean_error_count[i]},
                                     {"mean_weighted_error_count",
                                      report.mean_weighted_error_count[i]}});
    }
    doc["cases"] = std::move(cases);
    ordered_json series = ordered_json::array();
    for (const auto& s : report.series) series.push_back(series_to_json(s));
    doc["series"] = std::move(series);
    doc["skipped_case_ids"] = report.skipped_case_ids;
    doc["ci"] = ordered_json{{"level", report.options.ci_level},
                             {"resamples", report.options.ci_resamples},
                             {"seed", report.options.seed}};
    return doc;
}

ordered_json to_json(const RankingReport& report) {
    ordered_json doc;
    doc["protocol"] = "ranking";
    doc["tie_threshold"] = report.tie_threshold;
    doc["passed"] = report.passed_total;
    doc["total"] = report.case_total;
    ordered_json cases = ordered_json::array();
    for (const auto& c : report.cases) {
        ordered_json scores = ordered_json::array();
        for (const auto& [label, value] : c.scores) {
            scores.push_back(ordered_json{{"label", label}, {"mean_final_score", value}});
        }
        ordered_json entry{{"case_id", c.case_id},
                           {"category", c.category},
                           {"passed", c.passed},
                           {"scores", std::move(scores)}};
        if (!c.detail.empty()) entry["detail"] = c.detail;
        cases.push_back(std::move(entry));
    }
    doc["cases"] = std::move(cases);
    ordered_json cats = ordered_json::array();
    for (const auto& t : report.categories) {
        cats.push_back(ordered_json{{"category", t.category},
                                    {"passed", t.passed},
                                    {"total", t.total}});
    }
    doc["categories"] = std::move(cats);
    doc["skipped_case_ids"] = report.skipped_case_ids;
    return doc;
}

ordered_json to_json(const PreferenceReport& report) {
    ordered_json doc;
    doc["protocol"] = "preference";
    ordered_json cases = ordered_json::array();
    for (const auto& c : report.cases) {
        cases.push_back(ordered_json{{"case_id", c.case_id},
                                     {"delta_score", c.delta_score},
                                     {"delta_rating", c.delta_rating},
                                     {"per_rater_delta_rating", c.per_rater_delta_rating}});
    }
    doc["cases"] = std::move(cases);
    doc["aggregate"] = delta_to_json(report.aggregate);
    ordered_json raters = ordered_json::array();
    for (const auto& [name, corr] : report.per_rater) {
        ordered_json entry = delta_to_json(corr);
        ordered_json named;
        named["rater"] = name;
        for (auto it = entry.begin(); it != entry.end(); ++it) named[it.key()] = it.value();
        raters.push_back(std::move(named));
    }
    doc["per_rater"] = std::move(raters);
    ordered_json analysis = ordered_json::array();
    for (const auto& a : report.error_analysis) {
        ordered_json entry;
        entry["rater"] = a.rater;
        entry["mae"] = ordered_json{{"false", a.mae_false},
                                    {"missing", a.mae_missing},
                                    {"attribute", a.mae_attribute}};
        if (a.severity_confusion) {
            const auto& m = *a.severity_confusion;
            entry["severity_confusion"] =
                ordered_json{{"categories", m.categories},
                             {"counts", m.counts},
                             {"row_percent", m.row_percent},
                             {"agreement", m.agreement},
                             {"total", m.total}};
        } else {
            entry["severity_confusion"] = nullptr;
        }
        analysis.push_back(std::move(entry));
    }
    doc["error_analysis"] = std::move(analysis);
    doc["skipped_case_ids"] = report.skipped_case_ids;
    doc["ci"] = ordered_json{{"level", report.options.ci_level},
                             {"resamples", report.options.ci_resamples},
                             {"seed", report.options.seed}};
    return doc;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

void append_row(std::string& out, const std::vector<std::string>& cells,
                const std::vector<std::size_t>& widths) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out += cells[i];
        if (i + 1 < cells.size()) {
            out.append(widths[i] > cells[i].size() ? widths[i] - cells[i].size() : 0, ' ');
            out += "  ";
        }
    }
    out += '\n';
}

std::string layout(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t i = 0; i < row.size(); ++i) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::string out;
    for (const auto& row : rows) append_row(out, row, widths);
    return out;
}

}  // namespace

std::string render_table(const CorrelationReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"series", "tau_a", "tau_b", "pearson"});
    for (const auto& s : report.series) {
        rows.push_back({s.series + (s.sign_flipped ? " (sign flipped)" : ""),
                        ci_cell(s.tau_a, s.tau_a_ci), ci_cell(s.tau_b, s.tau_b_ci),
                        ci_cell(s.pearson, s.pearson_ci)});
    }
    std::string out = "Correlation with radiologist error counts, " +
                      std::to_string(report.case_ids.size()) + " cases\n\n" + layout(rows);
    for (const auto& s : report.series) {
        if (!s.degenerate_note.empty()) out += "\nnote (" + s.series + "): " + s.degenerate_note;
    }
    if (!report.skipped_case_ids.empty()) {
        out += "\nskipped cases: " + std::to_string(report.skipped_case_ids.size());
    }
    out += '\n';
    return out;
}

std::string render_table(const RankingReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"case", "category", "result", "scores"});
    for (const auto& c : report.cases) {
        std::string scores;
        for (const auto& [label, value] : c.scores) {
            if (!scores.empty()) scores += "  ";
            scores += label + "=" + format_double(value);
        }
        rows.push_back({c.case_id, c.category, c.passed ? "pass" : "FAIL", scores});
    }
    std::string out = layout(rows);
    out += '\n';
    std::vector<std::vector<std::string>> tally_rows;
    tally_rows.push_back({"category", "passed"});
    for (const auto& t : report.categories) {
        tally_rows.push_back({t.category,
                              std::to_string(t.passed) + "/" + std::to_string(t.total)});
    }
    out += layout(tally_rows);
    out += "\ntotal: " + std::to_string(report.passed_total) + "/" +
           std::to_string(report.case_total) + " passed, tie threshold " +
           format_double(report.tie_threshold) + "\n";
    for (const auto& c : report.cases) {
        if (!c.passed) out += "  " + c.case_id + ": " + c.detail + "\n";
    }
    if (!report.skipped_case_ids.empty()) {
        out += "skipped cases: " + std::to_string(report.skipped_case_ids.size()) + "\n";
    }
    return out;
}

std::string render_table(const PreferenceReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"series", "tau_b", "pearson"});
    rows.push_back({"mean rating delta", ci_cell(report.aggregate.tau_b, report.aggregate.tau_b_ci),
                    ci_cell(report.aggregate.pearson, report.aggregate.pearson_ci)});
    for (const auto& [name, corr] : report.per_rater) {
        rows.push_back({name, ci_cell(corr.tau_b, corr.tau_b_ci),
                        ci_cell(corr.pearson, corr.pearson_ci)});
    }
    std::string out = "Preference alignment over " + std::to_string(report.cases.size()) +
                      " cases\n\n" + layout(rows);
    if (!report.aggregate.degenerate_note.empty()) {
        out += "\nnote: " + report.aggregate.degenerate_note + "\n";
    }
    if (!report.error_analysis.empty()) {
        out += "\nError agreement vs judge (MAE per class)\n";
        std::vector<std::vector<std::string>> mae_rows;
        mae_rows.push_back({"rater", "false", "missing", "attribute", "severity agreement"});
        for (const auto& a : report.error_analysis) {
            std::string agreement = "n/a";
            if (a.severity_confusion) {
                agreement = format_double(a.severity_confusion->agreement * 100.0) + "% of " +
                            std::to_string(a.severity_confusion->total);
            }
            mae_rows.push_back({a.rater, format_double(a.mae_false),
                                format_double(a.mae_missing), format_double(a.mae_attribute),
                                agreement});
        }
        out += layout(mae_rows);
    }
    if (!report.skipped_case_ids.empty()) {
        out += "skipped cases: " + std::to_string(report.skipped_case_ids.size()) + "\n";
    }
    return out;
}

}  // namespace crimson
