/**
 * @file crimson_main.cpp
 * @brief Command line front end. Subcommands:
 *          score          judge and score one reference/candidate pair
 *          score-offline  score an existing annotation document
 *          bench          correlate | rank | prefer over a JSONL dataset
 *          perturb        generate degraded candidates from clean reports
 *
 *        Exit codes: 0 success, 1 ranking suite failure, 2 config or usage,
 *        3 judge failure, 4 invalid annotation, 5 dataset or statistics
 *        failure, 70 internal error. Failures print one stable line on
 *        stderr of the form "error[<category>]: <message>".
 */
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "crimson/bench.hpp"
#include "crimson/cli_config.hpp"
#include "crimson/judge.hpp"
#include "crimson/scoring.hpp"
#include "crimson/version.hpp"

namespace {

using crimson::CliConfig;
using crimson::CliOverrides;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitRankingFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitJudge = 3;
constexpr int kExitAnnotation = 4;
constexpr int kExitDataset = 5;
constexpr int kExitInternal = 70;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw crimson::ConfigError("cannot read file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
        out.push_back(text[i] == '\r' ? '\n' : text[i]);
    }
    return out;
}

void write_document(const std::string& path, const ordered_json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw crimson::ConfigError("cannot write file: " + path);
    out << doc.dump(2) << '\n';
}

/// Every machine-readable document carries the same provenance envelope so a
/// report is reproducible without the invoking shell history.
ordered_json wrap_report(const CliConfig* config, const std::string& rubric_version,
                         const std::string& judge_model, std::uint64_t seed,
                         ordered_json body) {
    ordered_json doc;
    doc["tool"] = "crimson";
    doc["tool_version"] = crimson::kToolVersion;
    doc["rubric_version"] = rubric_version.empty() ? ordered_json(nullptr)
                                                   : ordered_json(rubric_version);
    doc["judge_model"] = judge_model.empty() ? ordered_json(nullptr)
                                             : ordered_json(judge_model);
    doc["seed"] = seed;
    doc["config"] = config ? crimson::to_json(*config) : ordered_json(nullptr);
    doc["report"] = std::move(body);
    return doc;
}

// --- flag wiring -------------------------------------------------------------

void add_judge_options(CLI::App* cmd, CliOverrides& ov) {
    cmd->add_option("--config", ov.config_file, "JSON config file (or CRIMSON_CONFIG)");
    cmd->add_option("--judge", ov.judge, "judge backend: http or mock");
    cmd->add_option("--endpoint", ov.endpoint,
                    "chat completions base URL (or CRIMSON_ENDPOINT)");
    cmd->add_option("--model", ov.model, "judge model name");
    cmd->add_option("--api-key-env", ov.api_key_env,
                    "environment variable holding the API key");
    cmd->add_option("--fixtures", ov.fixtures_dir, "fixture directory for the mock judge");
    cmd->add_option("--rubric", ov.rubric_dir, "rubric resource directory");
    cmd->add_option("--runs", ov.runs, "judge runs per pair");
    cmd->add_option("--temperature", ov.temperature, "sampling temperature");
    cmd->add_option("--max-retries", ov.max_retries, "corrective retries per run");
    cmd->add_option("--timeout", ov.timeout_seconds, "per-request timeout in seconds");
    cmd->add_option("--concurrency", ov.concurrency, "in-flight judge request limit");
}

void add_scoring_options(CLI::App* cmd, CliOverrides& ov) {
    cmd->add_flag_callback("--count-negligible",
                           [&ov] { ov.count_negligible = true; },
                           "include negligible attribute errors in error counts (default)");
    cmd->add_flag_callback("--no-count-negligible",
                           [&ov] { ov.count_negligible = false; },
                           "exclude negligible attribute errors from error counts");
}

void add_stats_options(CLI::App* cmd, CliOverrides& ov) {
    cmd->add_option("--seed", ov.seed, "bootstrap seed");
    cmd->add_option("--resamples", ov.resamples, "bootstrap resamples");
    cmd->add_option("--ci-level", ov.ci_level, "confidence level, e.g. 0.95");
}

// --- shared construction ------------------------------------------------------

struct JudgeBundle {
    CliConfig config;
    std::unique_ptr<crimson::Judge> judge;
    crimson::JudgeConfig judge_config;
    crimson::RubricText rubric;
};

JudgeBundle make_judge(const CliOverrides& overrides) {
    JudgeBundle bundle;
    bundle.config = crimson::resolve_config(overrides, crimson::system_env());

    bundle.judge_config.endpoint_url = bundle.config.endpoint;
    bundle.judge_config.model_name = bundle.config.model;
    bundle.judge_config.api_key_env = bundle.config.api_key_env;
    bundle.judge_config.temperature = bundle.config.temperature;
    bundle.judge_config.max_retries = bundle.config.max_retries;
    bundle.judge_config.run_count = bundle.config.runs;
    bundle.judge_config.timeout_seconds = bundle.config.timeout_seconds;
    bundle.judge_config.request_concurrency_limit = bundle.config.concurrency;

    if (bundle.config.judge == "mock") {
        bundle.judge = std::make_unique<crimson::MockJudge>(bundle.config.fixtures_dir,
                                                            bundle.config.model);
    } else {
        bundle.judge = std::make_unique<crimson::HttpJudge>(bundle.judge_config);
    }
    bundle.rubric = crimson::load_rubric(bundle.config.rubric_dir);
    return bundle;
}

crimson::ScoringOptions scoring_options(const CliConfig& config) {
    crimson::ScoringOptions opts;
    opts.count_negligible = config.count_negligible;
    return opts;
}

std::optional<crimson::PatientContext> make_context(const std::optional<int>& age,
                                                    const std::optional<std::string>& indication) {
    crimson::PatientContext ctx;
    ctx.age = age;
    if (indication && !indication->empty()) ctx.indication = indication;
    if (ctx.empty()) return std::nullopt;
    return ctx;
}

// --- subcommand bodies ---------------------------------------------------------

int cmd_score(const CliOverrides& overrides, const std::string& reference_path,
              const std::string& candidate_path, const std::optional<int>& age,
              const std::optional<std::string>& indication, const std::string& out_path) {
    auto bundle = make_judge(overrides);
    std::string reference = read_text_file(reference_path);
    std::string candidate = read_text_file(candidate_path);
    auto context = make_context(age, indication);

    crimson::PairEvaluator evaluator(*bundle.judge, bundle.judge_config, bundle.rubric,
                                     scoring_options(bundle.config));
    auto result = evaluator.evaluate(reference, candidate, context);

    std::cout << "mean final score  " << format_double(result.score.mean_final) << "  ("
              << result.score.run_count << (result.score.run_count == 1 ? " run" : " runs")
              << ", std dev " << format_double(result.score.std_dev_final) << ")\n";
    ordered_json runs = ordered_json::array();
    auto opts = scoring_options(bundle.config);
    for (std::size_t i = 0; i < result.annotations.size(); ++i) {
        auto breakdown = crimson::score(result.annotations[i], opts);
        std::cout << "run " << (i + 1) << ": final " << format_double(breakdown.final_score)
                  << "  credit " << format_double(breakdown.credit_C) << "  reference weight "
                  << format_double(breakdown.weight_ref_W) << "  false penalty "
                  << format_double(breakdown.false_penalty_E) << "  errors "
                  << breakdown.error_count_E << " (weighted "
                  << format_double(breakdown.weighted_error_count) << ")\n";
        if (!out_path.empty()) {
            std::string serialized = crimson::serialize_annotation(result.annotations[i]);
            runs.push_back(ordered_json{
                {"run", i + 1},
                {"breakdown", crimson::breakdown_to_json(breakdown)},
                {"annotation", ordered_json::parse(serialized)}});
        }
    }
    if (!out_path.empty()) {
        ordered_json body;
        body["protocol"] = "score";
        body["aggregate"] = crimson::aggregated_to_json(result.score);
        body["runs"] = std::move(runs);
        write_document(out_path, wrap_report(&bundle.config, bundle.rubric.version,
                                             bundle.config.model, bundle.config.seed,
                                             std::move(body)));
    }
    return kExitOk;
}

int cmd_score_offline(const std::string& annotation_path, bool count_negligible,
                      const std::string& out_path) {
    std::string text = read_text_file(annotation_path);
    auto parsed = crimson::parse_annotation_document(text);
    if (!parsed.ok()) {
        for (const auto& violation : parsed.violations) {
            std::cerr << "  " << violation.format() << "\n";
        }
        std::cerr << "error[annotation]: " << parsed.error_summary() << "\n";
        return kExitAnnotation;
    }
    crimson::ScoringOptions opts;
    opts.count_negligible = count_negligible;
    auto breakdown = crimson::score(*parsed.annotation, opts);

    std::cout << "final score       " << format_double(breakdown.final_score) << "\n"
              << "raw score         " << format_double(breakdown.raw_score_S) << "\n"
              << "credit            " << format_double(breakdown.credit_C) << "\n"
              << "reference weight  " << format_double(breakdown.weight_ref_W) << "\n"
              << "false penalty     " << format_double(breakdown.false_penalty_E) << "\n"
              << "errors            " << breakdown.error_count_E << " (weighted "
              << format_double(breakdown.weighted_error_count) << ")\n";
    if (!out_path.empty()) {
        ordered_json body;
        body["protocol"] = "score_offline";
        body["breakdown"] = crimson::breakdown_to_json(breakdown);
        body["annotation"] =
            ordered_json::parse(crimson::serialize_annotation(*parsed.annotation));
        write_document(out_path, wrap_report(nullptr, "", "", 0, std::move(body)));
    }
    return kExitOk;
}

int cmd_bench_correlate(const CliOverrides& overrides, const std::string& dataset_path,
                        const std::string& out_path) {
    auto bundle = make_judge(overrides);
    auto cases = crimson::load_pairs_dataset(dataset_path);
    crimson::PairEvaluator evaluator(*bundle.judge, bundle.judge_config, bundle.rubric,
                                     scoring_options(bundle.config));
    crimson::CorrelationOptions options;
    options.ci_level = bundle.config.ci_level;
    options.ci_resamples = bundle.config.resamples;
    options.seed = bundle.config.seed;
    options.skip_failed = bundle.config.skip_failed;
    options.concurrency = bundle.config.concurrency;
    auto report = crimson::run_correlation(cases, evaluator, options);

    std::cout << crimson::render_table(report);
    if (!out_path.empty()) {
        write_document(out_path, wrap_report(&bundle.config, bundle.rubric.version,
                                             bundle.config.model, bundle.config.seed,
                                             crimson::to_json(report)));
    }
    return kExitOk;
}

int cmd_bench_rank(const CliOverrides& overrides, const std::string& dataset_path,
                   const std::string& out_path) {
    auto bundle = make_judge(overrides);
    auto cases = crimson::load_ranking_dataset(dataset_path);
    crimson::PairEvaluator evaluator(*bundle.judge, bundle.judge_config, bundle.rubric,
                                     scoring_options(bundle.config));
    crimson::RankingOptions options;
    options.tie_threshold = bundle.config.tie_threshold;
    options.skip_failed = bundle.config.skip_failed;
    options.concurrency = bundle.config.concurrency;
    auto report = crimson::run_ranking(cases, evaluator, options);

    std::cout << crimson::render_table(report);
    if (!out_path.empty()) {
        write_document(out_path, wrap_report(&bundle.config, bundle.rubric.version,
                                             bundle.config.model, bundle.config.seed,
                                             crimson::to_json(report)));
    }
    return report.all_passed() ? kExitOk : kExitRankingFailed;
}

int cmd_bench_prefer(const CliOverrides& overrides, const std::string& dataset_path,
                     const std::string& out_path) {
    auto bundle = make_judge(overrides);
    auto cases = crimson::load_preference_dataset(dataset_path);
    crimson::PairEvaluator evaluator(*bundle.judge, bundle.judge_config, bundle.rubric,
                                     scoring_options(bundle.config));
    crimson::PreferenceOptions options;
    options.ci_level = bundle.config.ci_level;
    options.ci_resamples = bundle.config.resamples;
    options.seed = bundle.config.seed;
    options.skip_failed = bundle.config.skip_failed;
    options.concurrency = bundle.config.concurrency;
    auto report = crimson::run_preference(cases, evaluator, options);

    std::cout << crimson::render_table(report);
    if (!out_path.empty()) {
        write_document(out_path, wrap_report(&bundle.config, bundle.rubric.version,
                                             bundle.config.model, bundle.config.seed,
                                             crimson::to_json(report)));
    }
    return kExitOk;
}

int cmd_perturb(const CliOverrides& overrides, const std::string& regime_label,
                const std::string& input_path, const std::string& out_path,
                std::uint64_t seed) {
    auto regime = crimson::regime_from_label(regime_label);
    if (!regime) {
        throw crimson::ConfigError("unknown perturbation regime \"" + regime_label +
                                   "\"; expected edit_findings, add_findings, "
                                   "remove_findings, or random_report_swap");
    }

    // Input: one {"case_id", "report"} object per line.
    std::ifstream in(input_path);
    if (!in) {
        throw crimson::DatasetError(crimson::DatasetError::Kind::FileNotFound,
                                    "cannot open report pool: " + input_path);
    }
    std::vector<std::pair<std::string, std::string>> reports;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("case_id") ||
            !rec.contains("report") || !rec["case_id"].is_string() ||
            !rec["report"].is_string()) {
            throw crimson::DatasetError(
                crimson::DatasetError::Kind::SchemaViolation,
                "report pool lines must be {\"case_id\", \"report\"} objects", line_no);
        }
        reports.emplace_back(rec["case_id"].get<std::string>(),
                             rec["report"].get<std::string>());
    }

    std::unique_ptr<JudgeBundle> bundle;
    if (*regime != crimson::PerturbationRegime::RandomReportSwap) {
        bundle = std::make_unique<JudgeBundle>(make_judge(overrides));
    }
    std::vector<std::string> pool;
    pool.reserve(reports.size());
    for (const auto& [id, text] : reports) pool.push_back(text);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw crimson::ConfigError("cannot write file: " + out_path);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        auto candidate = crimson::perturb(reports[i].second, *regime,
                                          bundle ? bundle->judge.get() : nullptr, pool, i, seed);
        ordered_json record{{"case_id", reports[i].first},
                            {"reference", reports[i].second},
                            {"candidate", candidate.text}};
        out << record.dump() << '\n';
    }
    std::cout << "wrote " << reports.size() << " perturbed pairs (regime "
              << crimson::to_label(*regime) << ", seed " << seed << ") to " << out_path
              << "\n";
    return kExitOk;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const crimson::ConfigError& e) {
        std::cerr << "error[config]: " << e.what() << "\n";
        return kExitConfig;
    } catch (const crimson::JudgeError& e) {
        // Misconfiguration and empty inputs are usage mistakes, not transport
        // failures, and map to the config exit code.
        bool usage = e.kind() == crimson::JudgeError::Kind::Config ||
                     e.kind() == crimson::JudgeError::Kind::EmptyReport;
        std::cerr << "error[" << (usage ? "config" : "judge") << "]: " << e.what() << "\n";
        return usage ? kExitConfig : kExitJudge;
    } catch (const crimson::DatasetError& e) {
        std::cerr << "error[dataset]: " << e.what() << "\n";
        return kExitDataset;
    } catch (const crimson::stats::StatsError& e) {
        std::cerr << "error[stats]: " << e.what() << "\n";
        return kExitDataset;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clinically weighted evaluation of generated radiology reports"};
    app.set_version_flag("--version", crimson::kToolVersion);
    app.require_subcommand(1);

    CliOverrides ov;

    // score
    auto* score = app.add_subcommand("score", "judge and score one report pair");
    std::string reference_path, candidate_path, out_path;
    std::optional<int> age;
    std::optional<std::string> indication;
    score->add_option("--reference", reference_path, "reference report file")->required();
    score->add_option("--candidate", candidate_path, "candidate report file")->required();
    score->add_option("--age", age, "patient age in years");
    score->add_option("--indication", indication, "study indication text");
    score->add_option("--out", out_path, "write the machine-readable document here");
    add_judge_options(score, ov);
    add_scoring_options(score, ov);
    score->add_option("--seed", ov.seed, "seed echoed into the output document");

    // score-offline
    auto* offline = app.add_subcommand("score-offline",
                                       "score an annotation document without a judge");
    std::string annotation_path, offline_out;
    bool offline_negligible = true;
    offline->add_option("annotation", annotation_path, "annotation document file")->required();
    offline->add_option("--out", offline_out, "write the machine-readable document here");
    offline->add_flag_callback("--count-negligible",
                               [&] { offline_negligible = true; },
                               "include negligible attribute errors in error counts (default)");
    offline->add_flag_callback("--no-count-negligible",
                               [&] { offline_negligible = false; },
                               "exclude negligible attribute errors from error counts");

    // bench
    auto* bench = app.add_subcommand("bench", "run a benchmark protocol over a dataset");
    bench->require_subcommand(1);
    std::string dataset_path, bench_out;

    auto* correlate = bench->add_subcommand(
        "correlate", "correlate scores with radiologist error counts");
    correlate->add_option("--dataset", dataset_path, "pairs dataset (JSONL)")->required();
    correlate->add_option("--out", bench_out, "write the machine-readable document here");
    add_judge_options(correlate, ov);
    add_scoring_options(correlate, ov);
    add_stats_options(correlate, ov);
    correlate->add_flag_callback("--skip-failed", [&ov] { ov.skip_failed = true; },
                                 "skip cases whose judging fails instead of aborting");

    auto* rank = bench->add_subcommand("rank", "check expected orderings and equivalences");
    rank->add_option("--dataset", dataset_path, "ranking dataset (JSONL)")->required();
    rank->add_option("--out", bench_out, "write the machine-readable document here");
    add_judge_options(rank, ov);
    add_scoring_options(rank, ov);
    rank->add_option("--tie-threshold", ov.tie_threshold,
                     "score gap treated as clinically equivalent");
    rank->add_option("--seed", ov.seed, "seed echoed into the output document");
    rank->add_flag_callback("--skip-failed", [&ov] { ov.skip_failed = true; },
                            "skip cases whose judging fails instead of aborting");

    auto* prefer = bench->add_subcommand(
        "prefer", "align score deltas with radiologist preference ratings");
    prefer->add_option("--dataset", dataset_path, "preference dataset (JSONL)")->required();
    prefer->add_option("--out", bench_out, "write the machine-readable document here");
    add_judge_options(prefer, ov);
    add_scoring_options(prefer, ov);
    add_stats_options(prefer, ov);
    prefer->add_flag_callback("--skip-failed", [&ov] { ov.skip_failed = true; },
                              "skip cases whose judging fails instead of aborting");

    // perturb
    auto* perturb = app.add_subcommand("perturb",
                                       "derive degraded candidates from clean reports");
    std::string regime_label, pool_path, perturb_out;
    std::uint64_t perturb_seed = 20240601;
    perturb->add_option("--regime", regime_label,
                        "edit_findings | add_findings | remove_findings | random_report_swap")
        ->required();
    perturb->add_option("--input", pool_path, "report pool (JSONL of case_id/report)")
        ->required();
    perturb->add_option("--out", perturb_out, "output pairs dataset (JSONL)")->required();
    perturb->add_option("--seed", perturb_seed, "generator seed for random_report_swap");
    add_judge_options(perturb, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    if (*score) {
        return guarded([&] {
            return cmd_score(ov, reference_path, candidate_path, age, indication, out_path);
        });
    }
    if (*offline) {
        return guarded([&] {
            return cmd_score_offline(annotation_path, offline_negligible, offline_out);
        });
    }
    if (*bench) {
        if (*correlate) {
            return guarded([&] { return cmd_bench_correlate(ov, dataset_path, bench_out); });
        }
        if (*rank) {
            return guarded([&] { return cmd_bench_rank(ov, dataset_path, bench_out); });
        }
        return guarded([&] { return cmd_bench_prefer(ov, dataset_path, bench_out); });
    }
    return guarded([&] {
        return cmd_perturb(ov, regime_label, pool_path, perturb_out, perturb_seed);
    });
}
