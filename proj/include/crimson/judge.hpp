/**
 * @file judge.hpp
 * @brief LLM judge client: prompt construction, an OpenAI-compatible HTTP
 *        backend, a fixture-backed mock backend, and the multi-run
 *        annotate/score pipeline.
 *
 * The judge produces the structured annotation in a single completion; on a
 * malformed or invalid response the client re-asks with the validator's full
 * violation list appended as a corrective user turn, up to max_retries
 * additional attempts per run.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crimson/annotation.hpp"
#include "crimson/scoring.hpp"

namespace crimson {

class JudgeError : public std::runtime_error {
public:
    enum class Kind {
        Transport,
        Auth,
        RateLimited,
        Timeout,
        OutputUnparseable,
        EmptyReport,
        FixtureMissing,
        Config,
    };

    JudgeError(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::string_view to_string(JudgeError::Kind kind);

struct JudgeConfig {
    std::string endpoint_url;                      ///< e.g. https://api.example.com/v1
    std::string model_name = "gpt-5.2";
    std::string api_key_env = "CRIMSON_API_KEY";   ///< env var holding the bearer token
    double temperature = 0.0;
    int max_retries = 3;                           ///< additional attempts, <= 10
    int run_count = 5;
    double timeout_seconds = 120.0;
    int request_concurrency_limit = 4;
    double retry_backoff_seconds = 0.5;            ///< initial backoff, doubles per retry

    /// Throws JudgeError{Config} when an invariant is violated.
    void validate() const;
};

/// Versioned rubric blocks, loaded from plain-text resource files.
struct RubricText {
    std::string significance_rubric;
    std::string attribute_rules;
    std::string output_schema_instructions;
    std::string version;
};

/// Loads significance_rubric.txt, attribute_rules.txt, output_schema.txt and
/// version.txt from `dir`. Throws JudgeError{Config} on missing/empty files.
RubricText load_rubric(const std::filesystem::path& dir);

struct ChatMessage {
    std::string role;  ///< "system" | "user" | "assistant"
    std::string content;
};

/// A request to the judge. run_index lets fixture-backed backends map the
/// same prompt to per-run responses without mutable state.
struct ChatRequest {
    std::vector<ChatMessage> messages;
    int run_index = 0;
};

inline constexpr std::string_view kContextUnavailableSentinel =
    "Patient context: unavailable.";

/// Deterministic two-message prompt (system rubric + user payload).
/// Throws JudgeError{EmptyReport} when either report is empty.
std::vector<ChatMessage> build_prompt(const std::string& reference,
                                      const std::string& candidate,
                                      const std::optional<PatientContext>& context,
                                      const RubricText& rubric);

class Judge {
public:
    virtual ~Judge() = default;

    /// One completion round trip; returns the raw assistant text.
    virtual std::string complete(const ChatRequest& request) = 0;

    virtual std::string model_name() const = 0;
};

/// OpenAI-compatible chat-completions backend. Transport failures and HTTP
/// 429/5xx retry with exponential backoff; 401/403 never retry. At most
/// request_concurrency_limit requests are in flight at a time.
class HttpJudge : public Judge {
public:
    explicit HttpJudge(JudgeConfig config);
    ~HttpJudge() override;

    std::string complete(const ChatRequest& request) override;
    std::string model_name() const override { return config_.model_name; }

private:
    JudgeConfig config_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Fixture-backed judge for offline runs. Responses are looked up by a
/// 64-bit FNV-1a hash of the message list:
///   <hash>.r<run>.txt, then <hash>.txt, then default.r<run>.txt, then
///   default.txt. Stateless, so results never depend on scheduling.
class MockJudge : public Judge {
public:
    explicit MockJudge(std::filesystem::path fixture_dir,
                       std::string model = "mock-judge");

    std::string complete(const ChatRequest& request) override;
    std::string model_name() const override { return model_; }

    /// The fixture key for a message list (16 hex digits).
    static std::string request_hash(const std::vector<ChatMessage>& messages);

private:
    std::filesystem::path dir_;
    std::string model_;
};

/// Corrective user turn sent after an unparseable/invalid response.
std::string corrective_turn_text(const ParseResult& failure);

/// One judging attempt chain for a single run: request, parse, corrective
/// retries. Returns the validated annotation plus how many corrective turns
/// were needed.
struct RunAnnotation {
    EvaluationAnnotation annotation;
    int corrective_turns = 0;
};

RunAnnotation annotate_once(Judge& judge, const std::vector<ChatMessage>& prompt,
                            int run_index, int max_retries);

/// run_count annotations for one reference/candidate pair, in run order.
/// `parallel` bounds worker threads by config.request_concurrency_limit;
/// results are identical either way.
std::vector<EvaluationAnnotation> annotate_pair(
    Judge& judge, const JudgeConfig& config, const std::string& reference,
    const std::string& candidate, const std::optional<PatientContext>& context,
    const RubricText& rubric, bool parallel = true);

/// annotate_pair + score per run + average_runs.
AggregatedScore evaluate_pair(Judge& judge, const JudgeConfig& config,
                              const std::string& reference, const std::string& candidate,
                              const std::optional<PatientContext>& context,
                              const RubricText& rubric, const ScoringOptions& scoring = {},
                              bool parallel = true);

}  // namespace crimson
