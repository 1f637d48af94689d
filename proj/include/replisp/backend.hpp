#pragma once

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace replisp {

// --- domain types -----------------------------------------------------------

struct Message {
    std::string role; // system | user | assistant
    std::string content;

    bool operator==(const Message&) const = default;
};

struct GenerationRequest {
    std::string model;
    std::vector<Message> messages;
    nlohmann::json sampling = nlohmann::json::object(); // forwarded verbatim
    bool stream = true;
    bool prefill = false; // set on continuation rounds: resume after the
                          // trailing assistant message

    bool valid() const {
        if (messages.empty()) return false;
        for (const auto& m : messages)
            if (m.role != "system" && m.role != "user" && m.role != "assistant") return false;
        return true;
    }
};

enum class FinishReason { None, Stop, Length, Aborted };

inline const char* finish_reason_name(FinishReason r) {
    switch (r) {
    case FinishReason::None: return "none";
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Aborted: return "aborted";
    }
    return "none";
}

struct TokenEvent {
    std::string delta;
    bool done = false;
    FinishReason finish_reason = FinishReason::None;
    bool error = false; // in-stream failure (ProtocolError / StreamTimeout)
    std::string error_message;
};

// --- errors ---------------------------------------------------------------

enum class BackendErrorKind {
    ConnectFailure,
    HttpStatusError,
    ProtocolError,
    StreamTimeout,
    PrefillUnsupported,
    ScriptError,
    Mismatch, // mock expectation failed
};

inline const char* backend_error_name(BackendErrorKind k) {
    switch (k) {
    case BackendErrorKind::ConnectFailure: return "ConnectFailure";
    case BackendErrorKind::HttpStatusError: return "HttpStatusError";
    case BackendErrorKind::ProtocolError: return "ProtocolError";
    case BackendErrorKind::StreamTimeout: return "StreamTimeout";
    case BackendErrorKind::PrefillUnsupported: return "PrefillUnsupported";
    case BackendErrorKind::ScriptError: return "ScriptError";
    case BackendErrorKind::Mismatch: return "Mismatch";
    }
    return "UnknownError";
}

struct BackendError : std::runtime_error {
    BackendErrorKind kind;
    int http_status;
    BackendError(BackendErrorKind k, std::string msg, int status = 0)
        : std::runtime_error(std::move(msg)), kind(k), http_status(status) {}
};

// --- interfaces -------------------------------------------------------------

class TokenStream {
public:
    virtual ~TokenStream() = default;
    // Pulls the next event; returns false once the stream is finished (after
    // a done or error event has been delivered).
    virtual bool next(TokenEvent& ev) = 0;
    // Closes the upstream promptly; idempotent, safe from any thread.
    virtual void cancel() = 0;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::unique_ptr<TokenStream> startStream(const GenerationRequest& req) = 0;
    virtual bool supportsPrefill() const { return true; }
};

// --- continuation builder ------------------------------------------------------

// Returns the original request with one assistant message carrying
// assembled_prefix appended (round 1) or replaced (later rounds), flagged for
// assistant-prefill continuation. max_tokens, when present, is reduced by a
// chars/4 estimate of what was already emitted, floored at 16.
inline GenerationRequest buildContinuation(const GenerationRequest& original,
                                           const std::string& assembled_prefix,
                                           bool backend_supports_prefill = true) {
    if (!backend_supports_prefill)
        throw BackendError(BackendErrorKind::PrefillUnsupported,
                           "backend cannot continue from an assistant prefill");
    GenerationRequest next = original;
    if (next.prefill && !next.messages.empty() && next.messages.back().role == "assistant")
        next.messages.back().content = assembled_prefix; // replace, never stack
    else
        next.messages.push_back({"assistant", assembled_prefix});
    next.prefill = true;
    if (next.sampling.contains("max_tokens") && next.sampling["max_tokens"].is_number_integer()) {
        std::int64_t budget = next.sampling["max_tokens"].get<std::int64_t>();
        std::int64_t spent = static_cast<std::int64_t>(assembled_prefix.size()) / 4;
        next.sampling["max_tokens"] = std::max<std::int64_t>(16, budget - spent);
    }
    return next;
}

inline nlohmann::json request_to_json(const GenerationRequest& req) {
    nlohmann::json body = req.sampling; // passthrough keys first
    body["model"] = req.model;
    body["stream"] = req.stream;
    auto& msgs = body["messages"] = nlohmann::json::array();
    for (const auto& m : req.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return body;
}

// --- SSE HTTP backend ----------------------------------------------------------

struct HttpBackendConfig {
    std::string base_url;          // e.g. http://127.0.0.1:8080/v1
    std::string auth_token;        // optional; sent as Authorization: Bearer
    bool prefill_supported = true; // declared per backend, not auto-detected
    std::int64_t idle_timeout_ms = 60000;
    std::vector<std::pair<std::string, std::string>> extra_headers;
};

namespace detail {

// Incremental SSE frame parser: feeds raw body bytes, yields `data:` payloads.
class SseParser {
public:
    template <typename Fn>
    void feed(const char* data, std::size_t len, Fn&& on_payload) {
        buf_.append(data, len);
        std::size_t nl;
        while ((nl = buf_.find('\n')) != std::string::npos) {
            std::string line = buf_.substr(0, nl);
            buf_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.rfind("data:", 0) == 0) {
                std::size_t at = 5;
                if (at < line.size() && line[at] == ' ') ++at;
                on_payload(line.substr(at));
            }
        }
    }

private:
    std::string buf_;
};

// Thread-safe event queue bridging the push-based HTTP receiver to the
// pull-based TokenStream.
class EventQueue {
public:
    void push(TokenEvent ev) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            q_.push_back(std::move(ev));
        }
        cv_.notify_all();
    }

    bool pop(TokenEvent& ev, std::int64_t timeout_ms) {
        std::unique_lock<std::mutex> lk(mu_);
        if (!cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                          [&] { return !q_.empty(); }))
            return false;
        ev = std::move(q_.front());
        q_.pop_front();
        return true;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TokenEvent> q_;
};

} // namespace detail

class HttpTokenStream : public TokenStream {
public:
    HttpTokenStream(const HttpBackendConfig& cfg, const GenerationRequest& req) : cfg_(cfg) {
        split_base(cfg_.base_url);
        auto body = request_to_json(req).dump();
        std::promise<std::pair<bool, int>> started; // (connected, status)
        auto started_f = started.get_future();
        worker_ = std::thread([this, body, p = std::move(started)]() mutable {
            run(body, std::move(p));
        });
        auto [connected, status] = started_f.get();
        if (!connected) {
            worker_.join();
            throw BackendError(BackendErrorKind::ConnectFailure,
                               "cannot reach backend at " + cfg_.base_url);
        }
        if (status != 200) {
            cancel();
            worker_.join();
            joined_ = true;
            throw BackendError(BackendErrorKind::HttpStatusError,
                               "backend returned HTTP " + std::to_string(status), status);
        }
    }

    ~HttpTokenStream() override {
        cancel();
        if (!joined_ && worker_.joinable()) worker_.join();
    }

    bool next(TokenEvent& ev) override {
        if (finished_) return false;
        if (!queue_.pop(ev, cfg_.idle_timeout_ms)) {
            ev = {"", true, FinishReason::Aborted, true, "no event within idle timeout"};
            finished_ = true;
            cancelled_ = true;
            return true;
        }
        if (ev.done || ev.error) finished_ = true;
        return true;
    }

    void cancel() override { cancelled_ = true; }

private:
    void split_base(const std::string& base) {
        // base_url = scheme://host[:port][/path-prefix]
        auto scheme_end = base.find("://");
        std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
        auto path_start = base.find('/', host_start);
        if (path_start == std::string::npos) {
            origin_ = base;
            path_prefix_.clear();
        } else {
            origin_ = base.substr(0, path_start);
            path_prefix_ = base.substr(path_start);
        }
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }

    void run(const std::string& body, std::promise<std::pair<bool, int>> started) {
        httplib::Client cli(origin_);
        cli.set_read_timeout(cfg_.idle_timeout_ms / 1000 + 1, 0);

        httplib::Request rq;
        rq.method = "POST";
        rq.path = path_prefix_ + "/chat/completions";
        rq.set_header("Content-Type", "application/json");
        if (!cfg_.auth_token.empty())
            rq.set_header("Authorization", "Bearer " + cfg_.auth_token);
        for (const auto& [k, v] : cfg_.extra_headers) rq.set_header(k, v);
        rq.body = body;

        detail::SseParser parser;
        bool signalled = false;
        bool saw_done = false;
        bool bad_status = false;
        rq.response_handler = [&](const httplib::Response& r) {
            started.set_value({true, r.status});
            signalled = true;
            bad_status = r.status != 200;
            return !bad_status; // constructor surfaces HttpStatusError
        };
        rq.content_receiver = [&](const char* data, std::size_t len, std::uint64_t,
                                  std::uint64_t) {
            if (cancelled_) return false;
            bool keep = true;
            parser.feed(data, len, [&](const std::string& payload) {
                if (!keep || saw_done) return;
                if (payload == "[DONE]") {
                    saw_done = true;
                    queue_.push({"", true, FinishReason::Stop, false, ""});
                    keep = false;
                    return;
                }
                auto j = nlohmann::json::parse(payload, nullptr, false);
                if (j.is_discarded()) {
                    queue_.push({"", true, FinishReason::Aborted, true,
                                 "malformed SSE frame: " + payload});
                    saw_done = true;
                    keep = false;
                    return;
                }
                TokenEvent ev;
                if (j.contains("choices") && !j["choices"].empty()) {
                    const auto& c = j["choices"][0];
                    if (c.contains("delta") && c["delta"].contains("content") &&
                        c["delta"]["content"].is_string())
                        ev.delta = c["delta"]["content"].get<std::string>();
                    if (c.contains("finish_reason") && c["finish_reason"].is_string()) {
                        auto fr = c["finish_reason"].get<std::string>();
                        ev.finish_reason =
                            fr == "length" ? FinishReason::Length : FinishReason::Stop;
                    }
                }
                queue_.push(std::move(ev));
            });
            return keep && !cancelled_;
        };

        auto res = cli.send(rq);
        if (!signalled) started.set_value({false, 0});
        if (bad_status) return;
        if (signalled && !saw_done && !cancelled_)
            queue_.push(res ? TokenEvent{"", true, FinishReason::Stop, false, ""}
                            : TokenEvent{"", true, FinishReason::Aborted, true,
                                         "connection closed: " + httplib::to_string(res.error())});
    }

    HttpBackendConfig cfg_;
    std::string origin_;
    std::string path_prefix_;
    detail::EventQueue queue_;
    std::thread worker_;
    std::atomic<bool> cancelled_{false};
    bool finished_ = false;
    bool joined_ = false;
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}

    std::unique_ptr<TokenStream> startStream(const GenerationRequest& req) override {
        return std::make_unique<HttpTokenStream>(cfg_, req);
    }

    bool supportsPrefill() const override { return cfg_.prefill_supported; }

private:
    HttpBackendConfig cfg_;
};

// Drains a stream to completion, concatenating deltas. Test/tooling helper.
inline std::string drain_stream(TokenStream& stream) {
    std::string text;
    TokenEvent ev;
    while (stream.next(ev)) {
        text += ev.delta;
        if (ev.error) throw BackendError(BackendErrorKind::ProtocolError, ev.error_message);
    }
    return text;
}

} // namespace replisp
