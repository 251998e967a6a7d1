/**
 * @file cli_config.hpp
 * @brief Resolved tool configuration. Values come from, in falling priority:
 *        command line flags, CRIMSON_* environment variables, a JSON config
 *        file, and built-in defaults. The resolved block is echoed into every
 *        output document so runs can be reproduced from the report alone.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace crimson {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

struct CliConfig {
    std::string judge = "http";  ///< "http" | "mock"
    std::string endpoint;        ///< required for the http judge
    std::string model = "gpt-5.2";
    std::string api_key_env = "CRIMSON_API_KEY";
    std::string fixtures_dir;    ///< required for the mock judge
    std::string rubric_dir = "resources/rubric/v1";
    int runs = 5;
    double temperature = 0.0;
    int max_retries = 3;
    double timeout_seconds = 120.0;
    int concurrency = 4;
    std::uint64_t seed = 20240601;
    double tie_threshold = 0.01;
    bool count_negligible = true;
    bool skip_failed = false;
    int resamples = 10000;
    double ci_level = 0.95;
};

/// Optional values captured from the command line; unset fields fall through
/// to the next configuration source.
struct CliOverrides {
    std::optional<std::string> config_file;
    std::optional<std::string> judge;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<std::string> api_key_env;
    std::optional<std::string> fixtures_dir;
    std::optional<std::string> rubric_dir;
    std::optional<int> runs;
    std::optional<double> temperature;
    std::optional<int> max_retries;
    std::optional<double> timeout_seconds;
    std::optional<int> concurrency;
    std::optional<std::uint64_t> seed;
    std::optional<double> tie_threshold;
    std::optional<bool> count_negligible;
    std::optional<bool> skip_failed;
    std::optional<int> resamples;
    std::optional<double> ci_level;
};

/// Environment lookup, injectable for tests. Returns the value or nullopt.
using EnvReader = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
EnvReader system_env();

/// Applies the precedence chain and validates the result. Throws ConfigError
/// on unreadable files, unknown keys, bad types, or out-of-range values.
CliConfig resolve_config(const CliOverrides& overrides, const EnvReader& env);

/// Echo block for output documents. Never includes secret values, only the
/// name of the key variable.
nlohmann::ordered_json to_json(const CliConfig& config);

}  // namespace crimson
