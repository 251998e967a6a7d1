/**
 * @file cli_config.cpp
 */
#include "crimson/cli_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace crimson {

using nlohmann::json;
using nlohmann::ordered_json;

EnvReader system_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        const char* value = std::getenv(name.c_str());
        if (value == nullptr) return std::nullopt;
        return std::string(value);
    };
}

namespace {

void apply_config_file(CliConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc = json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ConfigError("config file is not a JSON object: " + path);
    }

    static const std::set<std::string> known = {
        "judge", "endpoint", "model", "api_key_env", "fixtures", "rubric_dir",
        "runs", "temperature", "max_retries", "timeout_seconds", "concurrency",
        "seed", "tie_threshold", "count_negligible", "skip_failed", "resamples",
        "ci_level"};
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("config file: unknown key \"" + it.key() + "\"");
        }
    }

    auto read_string = [&](const char* key, std::string& into) {
        if (auto it = doc.find(key); it != doc.end()) {
            if (!it->is_string()) throw ConfigError(std::string("config file: \"") + key +
                                                    "\" must be a string");
            into = it->get<std::string>();
        }
    };
    auto read_int = [&](const char* key, int& into) {
        if (auto it = doc.find(key); it != doc.end()) {
            if (!it->is_number_integer()) throw ConfigError(std::string("config file: \"") + key +
                                                            "\" must be an integer");
            into = it->get<int>();
        }
    };
    auto read_double = [&](const char* key, double& into) {
        if (auto it = doc.find(key); it != doc.end()) {
            if (!it->is_number()) throw ConfigError(std::string("config file: \"") + key +
                                                    "\" must be a number");
            into = it->get<double>();
        }
    };
    auto read_bool = [&](const char* key, bool& into) {
        if (auto it = doc.find(key); it != doc.end()) {
            if (!it->is_boolean()) throw ConfigError(std::string("config file: \"") + key +
                                                     "\" must be a boolean");
            into = it->get<bool>();
        }
    };

    read_string("judge", config.judge);
    read_string("endpoint", config.endpoint);
    read_string("model", config.model);
    read_string("api_key_env", config.api_key_env);
    read_string("fixtures", config.fixtures_dir);
    read_string("rubric_dir", config.rubric_dir);
    read_int("runs", config.runs);
    read_double("temperature", config.temperature);
    read_int("max_retries", config.max_retries);
    read_double("timeout_seconds", config.timeout_seconds);
    read_int("concurrency", config.concurrency);
    if (auto it = doc.find("seed"); it != doc.end()) {
        if (!it->is_number_unsigned() && !it->is_number_integer()) {
            throw ConfigError("config file: \"seed\" must be a non-negative integer");
        }
        long long v = it->get<long long>();
        if (v < 0) throw ConfigError("config file: \"seed\" must be a non-negative integer");
        config.seed = static_cast<std::uint64_t>(v);
    }
    read_double("tie_threshold", config.tie_threshold);
    read_bool("count_negligible", config.count_negligible);
    read_bool("skip_failed", config.skip_failed);
    read_int("resamples", config.resamples);
    read_double("ci_level", config.ci_level);
}

void validate(const CliConfig& config) {
    if (config.judge != "http" && config.judge != "mock") {
        throw ConfigError("judge must be \"http\" or \"mock\", got \"" + config.judge + "\"");
    }
    if (config.judge == "http" && config.endpoint.empty()) {
        throw ConfigError("the http judge needs an endpoint "
                          "(--endpoint, CRIMSON_ENDPOINT, or config file)");
    }
    if (config.judge == "mock" && config.fixtures_dir.empty()) {
        throw ConfigError("the mock judge needs a fixture directory (--fixtures)");
    }
    if (config.runs < 1) throw ConfigError("runs must be >= 1");
    if (config.max_retries < 0 || config.max_retries > 10) {
        throw ConfigError("max_retries must be in 0..10");
    }
    if (config.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (config.timeout_seconds <= 0.0) throw ConfigError("timeout_seconds must be positive");
    if (config.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    if (config.tie_threshold < 0.0) throw ConfigError("tie_threshold must be >= 0");
    if (config.resamples < 100) throw ConfigError("resamples must be >= 100");
    if (config.ci_level <= 0.0 || config.ci_level >= 1.0) {
        throw ConfigError("ci_level must lie strictly between 0 and 1");
    }
}

}  // namespace

CliConfig resolve_config(const CliOverrides& overrides, const EnvReader& env) {
    CliConfig config;

    std::optional<std::string> file = overrides.config_file;
    if (!file) file = env("CRIMSON_CONFIG");
    if (file && !file->empty()) apply_config_file(config, *file);

    // Environment sits between the config file and explicit flags.
    if (auto endpoint = env("CRIMSON_ENDPOINT"); endpoint && !endpoint->empty()) {
        config.endpoint = *endpoint;
    }

    auto take = [](auto& into, const auto& maybe) {
        if (maybe) into = *maybe;
    };
    take(config.judge, overrides.judge);
    take(config.endpoint, overrides.endpoint);
    take(config.model, overrides.model);
    take(config.api_key_env, overrides.api_key_env);
    take(config.fixtures_dir, overrides.fixtures_dir);
    take(config.rubric_dir, overrides.rubric_dir);
    take(config.runs, overrides.runs);
    take(config.temperature, overrides.temperature);
    take(config.max_retries, overrides.max_retries);
    take(config.timeout_seconds, overrides.timeout_seconds);
    take(config.concurrency, overrides.concurrency);
    take(config.seed, overrides.seed);
    take(config.tie_threshold, overrides.tie_threshold);
    take(config.count_negligible, overrides.count_negligible);
    take(config.skip_failed, overrides.skip_failed);
    take(config.resamples, overrides.resamples);
    take(config.ci_level, overrides.ci_level);

    validate(config);
    return config;
}

// The echo carries exactly the settings a rerun needs to reproduce the
// document bit for bit. Concurrency is omitted on purpose: results are
// schedule-independent, so it must not distinguish otherwise equal runs.
ordered_json to_json(const CliConfig& config) {
    ordered_json out;
    out["judge"] = config.judge;
    out["endpoint"] = config.endpoint;
    out["model"] = config.model;
    out["api_key_env"] = config.api_key_env;
    if (!config.fixtures_dir.empty()) out["fixtures"] = config.fixtures_dir;
    out["rubric_dir"] = config.rubric_dir;
    out["runs"] = config.runs;
    out["temperature"] = config.temperature;
    out["max_retries"] = config.max_retries;
    out["timeout_seconds"] = config.timeout_seconds;
    out["seed"] = config.seed;
    out["tie_threshold"] = config.tie_threshold;
    out["count_negligible"] = config.count_negligible;
    out["skip_failed"] = config.skip_failed;
    out["resamples"] = config.resamples;
    out["ci_level"] = config.ci_level;
    return out;
}

}  // namespace crimson
