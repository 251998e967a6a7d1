#include "crimson/judge.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace crimson {

using nlohmann::json;

std::string_view to_string(JudgeError::Kind kind) {
    switch (kind) {
        case JudgeError::Kind::Transport: return "TransportError";
        case JudgeError::Kind::Auth: return "AuthError";
        case JudgeError::Kind::RateLimited: return "RateLimited";
        case JudgeError::Kind::Timeout: return "Timeout";
        case JudgeError::Kind::OutputUnparseable: return "JudgeOutputUnparseable";
        case JudgeError::Kind::EmptyReport: return "EmptyReport";
        case JudgeError::Kind::FixtureMissing: return "FixtureMissing";
        case JudgeError::Kind::Config: return "ConfigError";
    }
    return "JudgeError";
}

void JudgeConfig::validate() const {
    if (run_count < 1)
        throw JudgeError(JudgeError::Kind::Config, "run_count must be >= 1");
    if (max_retries < 0 || max_retries > 10)
        throw JudgeError(JudgeError::Kind::Config, "max_retries must be within 0..10");
    if (!(timeout_seconds > 0.0))
        throw JudgeError(JudgeError::Kind::Config, "timeout must be positive");
    if (request_concurrency_limit < 1)
        throw JudgeError(JudgeError::Kind::Config, "request_concurrency_limit must be >= 1");
    if (temperature < 0.0)
        throw JudgeError(JudgeError::Kind::Config, "temperature must be >= 0");
}

namespace {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw JudgeError(JudgeError::Kind::Config,
                         "cannot read rubric file " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string trimmed(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    return s;
}

}  // namespace

RubricText load_rubric(const std::filesystem::path& dir) {
    RubricText rubric;
    rubric.significance_rubric = read_text_file(dir / "significance_rubric.txt");
    rubric.attribute_rules = read_text_file(dir / "attribute_rules.txt");
    rubric.output_schema_instructions = read_text_file(dir / "output_schema.txt");
    rubric.version = trimmed(read_text_file(dir / "version.txt"));
    if (rubric.significance_rubric.empty() || rubric.attribute_rules.empty() ||
        rubric.output_schema_instructions.empty() || rubric.version.empty())
        throw JudgeError(JudgeError::Kind::Config,
                         "rubric files in " + dir.string() + " must be non-empty");
    return rubric;
}

std::vector<ChatMessage> build_prompt(const std::string& reference,
                                      const std::string& candidate,
                                      const std::optional<PatientContext>& context,
                                      const RubricText& rubric) {
    if (reference.empty())
        throw JudgeError(JudgeError::Kind::EmptyReport, "reference report is empty");
    if (candidate.empty())
        throw JudgeError(JudgeError::Kind::EmptyReport, "candidate report is empty");

    std::string system;
    system += "You evaluate a candidate chest X-ray report against a reference report.\n";
    system += "Follow the rubric below exactly and answer with one annotation document.\n";
    system += "\n## Clinical significance rubric (version " + rubric.version + ")\n\n";
    system += rubric.significance_rubric;
    system += "\n## Attribute error rules\n\n";
    system += rubric.attribute_rules;
    system += "\n## Output format\n\n";
    system += rubric.output_schema_instructions;

    std::string user;
    if (context && !context->empty()) {
        user += "Patient context:\n";
        if (context->age) user += "- age: " + std::to_string(*context->age) + "\n";
        if (context->indication) user += "- indication: " + *context->indication + "\n";
    } else {
        user += std::string(kContextUnavailableSentinel) + "\n";
    }
    user += "\nREFERENCE:\n" + reference + "\n";
    user += "\nCANDIDATE:\n" + candidate + "\n";
    user += "\nReturn only the annotation JSON document.\n";

    return {{"system", std::move(system)}, {"user", std::move(user)}};
}

// ---------------------------------------------------------------------------
// HttpJudge

namespace {

struct ParsedUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // possibly empty prefix, no trailing slash
};

ParsedUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw JudgeError(JudgeError::Kind::Config,
                         "endpoint URL must start with http:// or https://: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    if (path_start == std::string::npos) {
        out.base = url;
    } else {
        out.base = url.substr(0, path_start);
        out.path = url.substr(path_start);
        while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    }
    return out;
}

}  // namespace

struct HttpJudge::Impl {
    ParsedUrl url;
    std::string api_key;

    // Simple counting gate; keeps at most request_concurrency_limit requests
    // in flight across all threads using this judge.
    std::mutex mutex;
    std::condition_variable cv;
    int in_flight = 0;
    int limit = 1;

    struct Gate {
        Impl& impl;
        explicit Gate(Impl& i) : impl(i) {
            std::unique_lock lock(impl.mutex);
            impl.cv.wait(lock, [&] { return impl.in_flight < impl.limit; });
            ++impl.in_flight;
        }
        ~Gate() {
            {
                std::lock_guard lock(impl.mutex);
                --impl.in_flight;
            }
            impl.cv.notify_one();
        }
    };
};

HttpJudge::HttpJudge(JudgeConfig config) : config_(std::move(config)), impl_(new Impl) {
    config_.validate();
    if (config_.endpoint_url.empty())
        throw JudgeError(JudgeError::Kind::Config, "endpoint URL is not configured");
    impl_->url = split_url(config_.endpoint_url);
    impl_->limit = config_.request_concurrency_limit;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) impl_->api_key = key;
    }
}

HttpJudge::~HttpJudge() = default;

std::string HttpJudge::complete(const ChatRequest& request) {
    json body;
    body["model"] = config_.model_name;
    body["temperature"] = config_.temperature;
    body["messages"] = json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!impl_->api_key.empty())
        headers.emplace("Authorization", "Bearer " + impl_->api_key);

    const std::string path = impl_->url.path + "/chat/completions";
    std::string last_error = "no attempt made";
    JudgeError::Kind last_kind = JudgeError::Kind::Transport;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            double backoff = config_.retry_backoff_seconds * std::pow(2.0, attempt - 1);
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        }

        Impl::Gate gate(*impl_);
        httplib::Client client(impl_->url.base);
        auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                             res.error() == httplib::Error::Read ||
                             res.error() == httplib::Error::Write;
            last_kind = timed_out ? JudgeError::Kind::Timeout : JudgeError::Kind::Transport;
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw JudgeError(JudgeError::Kind::Auth,
                             "authentication rejected (HTTP " + std::to_string(res->status) +
                                 ") by " + config_.endpoint_url);
        if (res->status == 429) {
            last_kind = JudgeError::Kind::RateLimited;
            last_error = "rate limited (HTTP 429)";
            continue;
        }
        if (res->status >= 500) {
            last_kind = JudgeError::Kind::Transport;
            last_error = "server error (HTTP " + std::to_string(res->status) + ")";
            continue;
        }
        if (res->status != 200)
            throw JudgeError(JudgeError::Kind::Transport,
                             "unexpected HTTP status " + std::to_string(res->status));

        json doc = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty() ||
            !doc["choices"][0].contains("message"))
            throw JudgeError(JudgeError::Kind::Transport,
                             "malformed chat-completions response body");
        return doc["choices"][0]["message"].value("content", std::string{});
    }

    throw JudgeError(last_kind, last_error + " after " +
                                    std::to_string(config_.max_retries + 1) + " attempt(s)");
}

// ---------------------------------------------------------------------------
// MockJudge

MockJudge::MockJudge(std::filesystem::path fixture_dir, std::string model)
    : dir_(std::move(fixture_dir)), model_(std::move(model)) {}

std::string MockJudge::request_hash(const std::vector<ChatMessage>& messages) {
    // FNV-1a, 64 bit; fields separated so role/content boundaries matter.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& m : messages) {
        feed(m.role);
        feed("\x1f");
        feed(m.content);
        feed("\x1e");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string MockJudge::complete(const ChatRequest& request) {
    const std::string hash = request_hash(request.messages);
    const std::string run = ".r" + std::to_string(request.run_index);
    const std::filesystem::path candidates[] = {
        dir_ / (hash + run + ".txt"),
        dir_ / (hash + ".txt"),
        dir_ / ("default" + run + ".txt"),
        dir_ / "default.txt",
    };
    for (const auto& path : candidates) {
        std::ifstream in(path, std::ios::binary);
        if (!in) continue;
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }
    throw JudgeError(JudgeError::Kind::FixtureMissing,
                     "no fixture for request hash " + hash + " (run " +
                         std::to_string(request.run_index) + ") in " + dir_.string());
}

// ---------------------------------------------------------------------------
// Pipeline

std::string corrective_turn_text(const ParseResult& failure) {
    std::string text =
        "The previous response was not a valid annotation document. Problems:\n";
    if (failure.doc_error != ParseResult::DocError::None) {
        text += "- " + failure.error_summary() + "\n";
    } else {
        for (const auto& v : failure.violations) text += "- " + v.format() + "\n";
    }
    text += "Return a corrected annotation JSON document and nothing else.";
    return text;
}

RunAnnotation annotate_once(Judge& judge, const std::vector<ChatMessage>& prompt,
                            int run_index, int max_retries) {
    ChatRequest request{prompt, run_index};
    ParseResult last;
    std::string last_raw;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        last_raw = judge.complete(request);
        last = parse_annotation_document(last_raw);
        if (last.ok()) return {std::move(*last.annotation), attempt};
        request.messages.push_back({"assistant", last_raw});
        request.messages.push_back({"user", corrective_turn_text(last)});
    }
    throw JudgeError(JudgeError::Kind::OutputUnparseable,
                     "judge output stayed invalid after " + std::to_string(max_retries + 1) +
                         " attempt(s); last failure: " + last.error_summary() +
                         "; last raw output: " + last_raw);
}

std::vector<EvaluationAnnotation> annotate_pair(
    Judge& judge, const JudgeConfig& config, const std::string& reference,
    const std::string& candidate, const std::optional<PatientContext>& context,
    const RubricText& rubric, bool parallel) {
    config.validate();
    const auto prompt = build_prompt(reference, candidate, context, rubric);

    std::vector<std::optional<EvaluationAnnotation>> slots(
        static_cast<std::size_t>(config.run_count));
    std::vector<std::exception_ptr> failures(slots.size());

    auto run_one = [&](int run) {
        try {
            slots[static_cast<std::size_t>(run)] =
                annotate_once(judge, prompt, run, config.max_retries).annotation;
        } catch (...) {
            failures[static_cast<std::size_t>(run)] = std::current_exception();
        }
    };

    if (parallel && config.run_count > 1) {
        int workers = std::min(config.run_count, config.request_concurrency_limit);
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int run = next.fetch_add(1); run < config.run_count;
                     run = next.fetch_add(1))
                    run_one(run);
            });
        for (auto& t : pool) t.join();
    } else {
        for (int run = 0; run < config.run_count; ++run) run_one(run);
    }

    // Surface the lowest-run failure so outcomes never depend on scheduling.
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    std::vector<EvaluationAnnotation> annotations;
    annotations.reserve(slots.size());
    for (auto& s : slots) annotations.push_back(std::move(*s));
    return annotations;
}

AggregatedScore evaluate_pair(Judge& judge, const JudgeConfig& config,
                              const std::string& reference, const std::string& candidate,
                              const std::optional<PatientContext>& context,
                              const RubricText& rubric, const ScoringOptions& scoring,
                              bool parallel) {
    auto annotations = annotate_pair(judge, config, reference, candidate, context,
                                     rubric, parallel);
    std::vector<ScoreBreakdown> runs;
    runs.reserve(annotations.size());
    for (const auto& a : annotations) runs.push_back(score(a, scoring));
    return average_runs(std::move(runs));
}

}  // namespace crimson
