#pragma once

// Service configuration with precedence: CLI flags > environment variables
// (REPLISP_*) > config file > built-in defaults. The config file is
// line-oriented `key = value`; validation failures name the file and line.

#include <replisp/orchestrator.hpp>
#include <replisp/session.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace replisp {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BridgeSettings {
    std::vector<std::string> command; // executable + args
    std::int64_t eval_timeout_ms = 5000;
    int restart_limit = 10; // automatic restarts per hour
};

struct ServiceConfig {
    std::string listen = "127.0.0.1:8072";
    std::string backend_url;            // e.g. http://127.0.0.1:11434/v1
    std::string backend_token_env;      // env var holding the bearer token
    bool backend_prefill = true;        // declared capability, not detected
    std::string evaluator = "embedded"; // embedded | bridge
    BridgeSettings bridge;
    TurnLimits limits;
    SplicePolicy policy;
    lisp::EvalBudget budget;
    lisp::CapabilityPolicy capabilities;
    std::string data_dir = "replisp-data";
    std::size_t max_sessions = 1024;
    std::int64_t session_ttl_ms = 24LL * 3600 * 1000;
    std::string log_level = "info";

    std::string listen_host() const { return listen.substr(0, listen.rfind(':')); }
    int listen_port() const {
        auto colon = listen.rfind(':');
        if (colon == std::string::npos) return -1;
        try {
            return std::stoi(listen.substr(colon + 1));
        } catch (...) {
            return -1;
        }
    }

    std::string backend_token() const {
        if (backend_token_env.empty()) return "";
        const char* v = std::getenv(backend_token_env.c_str());
        return v ? v : "";
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") { out = true; return true; }
    if (v == "false" || v == "0" || v == "no" || v == "off") { out = false; return true; }
    return false;
}

inline bool parse_int(const std::string& v, std::int64_t& out) {
    try {
        std::size_t pos = 0;
        out = std::stoll(v, &pos);
        return pos == v.size();
    } catch (...) {
        return false;
    }
}

inline bool parse_view(const std::string& v, SpliceView& out) {
    if (v == "replace") { out = SpliceView::Replace; return true; }
    if (v == "annotated") { out = SpliceView::Annotated; return true; }
    return false;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

} // namespace detail

// The documented key set. Each setter applies one `key = value` pair; an
// unknown key or malformed value returns an error message (empty on success).
inline std::string apply_config_key(ServiceConfig& cfg, const std::string& key,
                                    const std::string& value) {
    using namespace detail;
    std::int64_t n = 0;
    bool b = false;

    auto int_into = [&](std::int64_t& dst, std::int64_t min) -> std::string {
        if (!parse_int(value, n)) return "expected an integer, got '" + value + "'";
        if (n < min) return "value must be >= " + std::to_string(min);
        dst = n;
        return "";
    };

    if (key == "listen") { cfg.listen = value; return ""; }
    if (key == "backend_url") { cfg.backend_url = value; return ""; }
    if (key == "backend_token_env") { cfg.backend_token_env = value; return ""; }
    if (key == "backend_prefill") {
        if (!parse_bool(value, b)) return "expected a boolean, got '" + value + "'";
        cfg.backend_prefill = b;
        return "";
    }
    if (key == "evaluator") {
        if (value != "embedded" && value != "bridge")
            return "evaluator must be 'embedded' or 'bridge', got '" + value + "'";
        cfg.evaluator = value;
        return "";
    }
    if (key == "bridge_command") {
        cfg.bridge.command.clear();
        std::istringstream words(value);
        std::string w;
        while (words >> w) cfg.bridge.command.push_back(w);
        return cfg.bridge.command.empty() ? "bridge_command must not be empty" : "";
    }
    if (key == "bridge_timeout_ms") return int_into(cfg.bridge.eval_timeout_ms, 1);
    if (key == "bridge_restart_limit") {
        auto err = int_into(n, 0);
        if (err.empty()) cfg.bridge.restart_limit = static_cast<int>(n);
        return err;
    }
    if (key == "max_rounds") {
        auto err = int_into(n, 1);
        if (err.empty()) cfg.limits.max_rounds = static_cast<int>(n);
        return err;
    }
    if (key == "max_evals") {
        auto err = int_into(n, 1);
        if (err.empty()) cfg.limits.max_evals = static_cast<int>(n);
        return err;
    }
    if (key == "client_view") {
        if (!parse_view(value, cfg.policy.client_view))
            return "expected 'replace' or 'annotated', got '" + value + "'";
        return "";
    }
    if (key == "context_view") {
        if (!parse_view(value, cfg.policy.context_view))
            return "expected 'replace' or 'annotated', got '" + value + "'";
        return "";
    }
    if (key == "result_open") { cfg.policy.result_open = value; return ""; }
    if (key == "result_close") { cfg.policy.result_close = value; return ""; }
    if (key == "budget_steps") return int_into(cfg.budget.max_steps, 1);
    if (key == "budget_depth") return int_into(cfg.budget.max_depth, 1);
    if (key == "budget_cells") return int_into(cfg.budget.max_cells, 1);
    if (key == "budget_output_bytes") return int_into(cfg.budget.max_output_bytes, 1);
    if (key == "budget_wall_ms") return int_into(cfg.budget.max_wall_ms, 1);
    if (key == "capability_time") {
        if (!parse_bool(value, b)) return "expected a boolean, got '" + value + "'";
        cfg.capabilities.time = b;
        return "";
    }
    if (key == "data_dir") { cfg.data_dir = value; return ""; }
    if (key == "max_sessions") {
        auto err = int_into(n, 1);
        if (err.empty()) cfg.max_sessions = static_cast<std::size_t>(n);
        return err;
    }
    if (key == "session_ttl_ms") return int_into(cfg.session_ttl_ms, 0);
    if (key == "log_level") {
        if (value != "debug" && value != "info" && value != "warn" && value != "error")
            return "log_level must be debug|info|warn|error, got '" + value + "'";
        cfg.log_level = value;
        return "";
    }
    return "unknown key '" + key + "'";
}

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "listen",           "backend_url",       "backend_token_env", "backend_prefill",
        "evaluator",        "bridge_command",    "bridge_timeout_ms", "bridge_restart_limit",
        "max_rounds",       "max_evals",         "client_view",       "context_view",
        "result_open",      "result_close",      "budget_steps",      "budget_depth",
        "budget_cells",     "budget_output_bytes", "budget_wall_ms",  "capability_time",
        "data_dir",         "max_sessions",      "session_ttl_ms",    "log_level"};
    return keys;
}

inline void load_config_file(ServiceConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        std::string err = apply_config_key(cfg, key, value);
        if (!err.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + err);
    }
}

// Environment overlay: REPLISP_<KEY-IN-UPPERCASE> overrides file values.
inline void load_config_env(ServiceConfig& cfg) {
    for (const auto& key : config_keys()) {
        std::string env_name = "REPLISP_";
        for (char c : key) env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (const char* v = std::getenv(env_name.c_str())) {
            std::string err = apply_config_key(cfg, key, v);
            if (!err.empty()) throw ConfigError(env_name + ": " + err);
        }
    }
}

// Cross-field validation, run after all sources are applied.
inline void validate_config(const ServiceConfig& cfg) {
    // port 0 requests an ephemeral port from the OS
    if (cfg.listen_port() < 0 || cfg.listen_port() > 65535)
        throw ConfigError("listen: expected host:port, got '" + cfg.listen + "'");
    cfg.limits.validate();
    cfg.policy.validate();
    cfg.budget.validate();
    if (cfg.evaluator == "bridge" && cfg.bridge.command.empty())
        throw ConfigError("evaluator is 'bridge' but bridge_command is not set");
}

// Full precedence chain. cli_overrides are (key, value) pairs applied last.
inline ServiceConfig resolve_config(
    const std::optional<std::string>& file_path,
    const std::vector<std::pair<std::string, std::string>>& cli_overrides = {}) {
    ServiceConfig cfg;
    if (file_path) load_config_file(cfg, *file_path);
    load_config_env(cfg);
    for (const auto& [key, value] : cli_overrides) {
        std::string err = apply_config_key(cfg, key, value);
        if (!err.empty()) throw ConfigError("--" + key + ": " + err);
    }
    validate_config(cfg);
    return cfg;
}

} // namespace replisp
