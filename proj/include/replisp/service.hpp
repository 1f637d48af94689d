#pragma once

// HTTP surface: an OpenAI-compatible chat-completions endpoint with SSE
// streaming, session administration, health, and structured JSON-line logs.

#include <replisp/backend.hpp>
#include <replisp/bridge.hpp>
#include <replisp/config.hpp>
#include <replisp/orchestrator.hpp>
#include <replisp/session.hpp>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <thread>

namespace replisp {

using LogSink = std::function<void(const nlohmann::json&)>;

inline LogSink stderr_log_sink() {
    return [](const nlohmann::json& record) { std::cerr << record.dump() << "\n"; };
}

class Service {
public:
    // A null backend builds an HttpBackend from the config; tests inject mocks.
    explicit Service(ServiceConfig cfg, std::shared_ptr<Backend> backend = nullptr,
                     Clock clock = system_clock())
        : cfg_(std::move(cfg)), backend_(std::move(backend)), clock_(std::move(clock)),
          log_(stderr_log_sink()) {
        validate_config(cfg_);
        StoreConfig scfg;
        scfg.data_dir = cfg_.data_dir;
        scfg.max_sessions = cfg_.max_sessions;
        scfg.default_budget = cfg_.budget;
        scfg.clock = clock_;
        store_ = std::make_unique<SessionStore>(scfg);

        if (!backend_) {
            if (cfg_.backend_url.empty())
                throw ConfigError("backend_url is required when no backend is injected");
            HttpBackendConfig bcfg;
            bcfg.base_url = cfg_.backend_url;
            bcfg.auth_token = cfg_.backend_token();
            bcfg.prefill_supported = cfg_.backend_prefill;
            backend_ = std::make_shared<HttpBackend>(bcfg);
        }

        OrchestratorConfig ocfg;
        ocfg.limits = cfg_.limits;
        ocfg.policy = cfg_.policy;
        ocfg.clock = clock_;
        if (cfg_.evaluator == "bridge") {
            BridgeConfig brcfg;
            brcfg.command = cfg_.bridge.command;
            brcfg.eval_timeout_ms = cfg_.bridge.eval_timeout_ms;
            brcfg.restart_limit = cfg_.bridge.restart_limit;
            bridge_ = std::make_unique<Bridge>(brcfg, clock_);
            bridge_->start();
            ocfg.evaluator = [this](const std::string& sid, const std::string& src,
                                    std::int64_t turn) {
                auto out = bridge_->evalRemote(sid, src);
                store_->record(sid, src, turn, out);
                return out;
            };
        }
        orch_ = std::make_unique<Orchestrator>(*backend_, *store_, ocfg);
        register_routes();
    }

    ~Service() { stop(); }

    void set_log_sink(LogSink sink) { log_ = std::move(sink); }

    // Binds and serves on a background thread; returns the bound port.
    int start() {
        int port = cfg_.listen_port();
        if (port == 0)
            port = svr_.bind_to_any_port(cfg_.listen_host());
        else if (!svr_.bind_to_port(cfg_.listen_host(), port))
            throw ConfigError("cannot bind to " + cfg_.listen);
        th_ = std::thread([this] { svr_.listen_after_bind(); });
        svr_.wait_until_ready();
        log_({{"event", "listening"},
              {"listen", cfg_.listen_host() + ":" + std::to_string(port)},
              {"evaluator", cfg_.evaluator},
              {"data_dir", cfg_.data_dir}});
        port_ = port;
        return port;
    }

    // Graceful shutdown: stop accepting, then snapshot every live session.
    void stop() {
        if (th_.joinable()) {
            svr_.stop();
            th_.join();
            for (const auto& id : store_->live_ids()) {
                try {
                    store_->snapshot(id);
                } catch (const SessionError& e) {
                    log_({{"event", "snapshot_failed"}, {"session", id}, {"error", e.what()}});
                }
            }
        }
        if (bridge_) bridge_->shutdown();
    }

    int port() const { return port_; }
    SessionStore& store() { return *store_; }
    Orchestrator& orchestrator() { return *orch_; }
    const ServiceConfig& config() const { return cfg_; }

private:
    static void json_response(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void error_response(httplib::Response& res, int status, const std::string& message) {
        json_response(res, status, {{"error", {{"message", message}, {"code", status}}}});
    }

    static int status_for(const SessionError& e) {
        switch (e.kind) {
        case SessionErrorKind::SessionBusy: return 409;
        case SessionErrorKind::StoreFull: return 429;
        case SessionErrorKind::InvalidSessionId: return 400;
        case SessionErrorKind::SessionNotFound: return 404;
        default: return 500;
        }
    }

    struct ParsedRequest {
        GenerationRequest gen;
        bool stream = false;
    };

    static bool parse_chat_request(const std::string& body, ParsedRequest& out,
                                   std::string& error) {
        auto j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            error = "request body is not a JSON object";
            return false;
        }
        if (!j.contains("messages") || !j["messages"].is_array() || j["messages"].empty()) {
            error = "'messages' must be a non-empty array";
            return false;
        }
        out.gen.model = j.value("model", "");
        for (const auto& m : j["messages"]) {
            if (!m.is_object() || !m.contains("role") || !m.contains("content") ||
                !m["role"].is_string() || !m["content"].is_string()) {
                error = "each message needs string 'role' and 'content'";
                return false;
            }
            out.gen.messages.push_back(
                {m["role"].get<std::string>(), m["content"].get<std::string>()});
        }
        if (!out.gen.valid()) {
            error = "message roles must be system, user, or assistant";
            return false;
        }
        out.stream = j.value("stream", false);
        out.gen.stream = true; // upstream is always streamed; we re-frame
        auto sampling = j;
        sampling.erase("model");
        sampling.erase("messages");
        sampling.erase("stream");
        out.gen.sampling = std::move(sampling);
        return true;
    }

    std::string session_id_for(const httplib::Request& req, bool& ephemeral) {
        auto header = req.get_header_value("X-Replisp-Session");
        if (!header.empty()) {
            ephemeral = false;
            return header;
        }
        ephemeral = true;
        return "eph-" + std::to_string(eph_counter_++);
    }

    void log_turn(const TurnTrace& trace) {
        auto record = trace.to_json();
        record["event"] = "turn";
        log_(record);
    }

    static std::string sse_delta(const std::string& text) {
        nlohmann::json j = {
            {"object", "chat.completion.chunk"},
            {"choices", {{{"index", 0}, {"delta", {{"content", text}}}}}}};
        return "data: " + j.dump() + "\n\n";
    }

    static std::string sse_final(const TurnTrace& trace) {
        nlohmann::json j = {
            {"object", "chat.completion.chunk"},
            {"choices",
             {{{"index", 0}, {"delta", nlohmann::json::object()}, {"finish_reason", "stop"}}}},
            {"replisp_evals", trace.total_evals()},
            {"replisp_status", turn_status_name(trace.status)}};
        return "data: " + j.dump() + "\n\ndata: [DONE]\n\n";
    }

    void handle_completions(const httplib::Request& req, httplib::Response& res) {
        ParsedRequest parsed;
        std::string parse_error;
        if (!parse_chat_request(req.body, parsed, parse_error)) {
            error_response(res, 400, parse_error);
            return;
        }
        bool ephemeral = false;
        std::string sid = session_id_for(req, ephemeral);
        if (!valid_session_id(sid)) {
            error_response(res, 400, "invalid session id: " + sid);
            return;
        }

        if (!parsed.stream) {
            std::string text;
            TurnTrace trace;
            try {
                trace = orch_->runTurn(parsed.gen, sid,
                                       [&](const std::string& t) { text += t; });
            } catch (const SessionError& e) {
                error_response(res, status_for(e), e.what());
                if (ephemeral) store_->remove(sid);
                return;
            }
            log_turn(trace);
            if (ephemeral) store_->remove(sid);
            if (trace.status == TurnStatus::BackendError) {
                error_response(res, 502, "backend failure: " + trace.error_message);
                return;
            }
            nlohmann::json body = {
                {"object", "chat.completion"},
                {"model", parsed.gen.model},
                {"choices",
                 {{{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", text}}},
                   {"finish_reason", "stop"}}}},
                {"replisp_status", turn_status_name(trace.status)}};
            res.set_header("X-Replisp-Session", sid);
            res.set_header("X-Replisp-Evals", std::to_string(trace.total_evals()));
            json_response(res, 200, body);
            return;
        }

        // Streaming: the turn runs inside the chunked provider so deltas flow
        // out as they are produced. The eval count rides in the final frame.
        res.set_header("X-Replisp-Session", sid);
        res.set_header("Cache-Control", "no-cache");
        res.set_content_provider(
            "text/event-stream",
            [this, parsed, sid, ephemeral](std::size_t, httplib::DataSink& sink) {
                TurnTrace trace;
                try {
                    trace = orch_->runTurn(parsed.gen, sid, [&](const std::string& t) {
                        auto frame = sse_delta(t);
                        sink.write(frame.data(), frame.size());
                    });
                } catch (const SessionError& e) {
                    auto frame = sse_delta(std::string("[replisp:") +
                                           session_error_name(e.kind) + "]");
                    sink.write(frame.data(), frame.size());
                }
                log_turn(trace);
                auto fin = sse_final(trace);
                sink.write(fin.data(), fin.size());
                sink.done();
                if (ephemeral) store_->remove(sid);
                return true;
            });
    }

    nlohmann::json session_info(const SessionPtr& s) {
        return {{"id", s->id},
                {"eval_count", s->eval_count},
                {"journal_length", s->journal.size()},
                {"created_at", s->created_at},
                {"last_used_at", s->last_used_at}};
    }

    void register_routes() {
        svr_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
            handle_completions(req, res);
        });

        svr_.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json sessions = nlohmann::json::array();
            for (const auto& id : store_->live_ids())
                if (auto s = store_->find(id)) sessions.push_back(session_info(s));
            json_response(res, 200, {{"sessions", std::move(sessions)}});
        });

        const std::string id_pattern = R"(/v1/sessions/([A-Za-z0-9._\-]+))";

        svr_.Get(id_pattern, [this](const httplib::Request& req, httplib::Response& res) {
            auto s = store_->find(req.matches[1]);
            if (!s) return error_response(res, 404, "unknown session");
            json_response(res, 200, session_info(s));
        });

        svr_.Delete(id_pattern, [this](const httplib::Request& req, httplib::Response& res) {
            std::string id = req.matches[1];
            auto s = store_->find(id);
            if (!s) return error_response(res, 404, "unknown session");
            try {
                store_->snapshot(id); // snapshot, then unload; the journal stays
            } catch (const SessionError& e) {
                return error_response(res, status_for(e), e.what());
            }
            store_->unload(id);
            json_response(res, 200, {{"deleted", id}});
        });

        svr_.Get(id_pattern + "/journal",
                 [this](const httplib::Request& req, httplib::Response& res) {
                     auto s = store_->find(req.matches[1]);
                     if (!s) return error_response(res, 404, "unknown session");
                     nlohmann::json entries = nlohmann::json::array();
                     for (const auto& e : s->journal)
                         entries.push_back({{"seq", e.seq},
                                            {"turn", e.turn},
                                            {"source", e.source},
                                            {"value_repr", e.value_repr}});
                     json_response(res, 200, {{"entries", std::move(entries)}});
                 });

        svr_.Post(id_pattern + "/eval",
                  [this](const httplib::Request& req, httplib::Response& res) {
                      auto j = nlohmann::json::parse(req.body, nullptr, false);
                      if (j.is_discarded() || !j.contains("source") || !j["source"].is_string())
                          return error_response(res, 400, "body must be {\"source\": \"...\"}");
                      std::string sid = req.matches[1];
                      try {
                          auto out = orch_->directEval(sid, j["source"].get<std::string>());
                          log_({{"event", "direct_eval"},
                                {"session", sid},
                                {"ok", out.ok},
                                {"steps", out.steps_used}});
                          json_response(res, 200,
                                        {{"ok", out.ok},
                                         {"value", out.value},
                                         {"output", out.output},
                                         {"error", out.ok ? "" : out.error_text()}});
                      } catch (const SessionError& e) {
                          error_response(res, status_for(e), e.what());
                      } catch (const BridgeError& e) {
                          error_response(res, 502, e.what());
                      }
                  });

        svr_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json body = {{"status", "ok"},
                                   {"evaluator", cfg_.evaluator},
                                   {"sessions", store_->live_count()}};
            if (cfg_.evaluator == "bridge") {
                bool up = bridge_ && bridge_->alive();
                body["bridge"] = up ? "running" : "dead";
                if (!up) body["status"] = "degraded";
            }
            json_response(res, 200, body);
        });
    }

    ServiceConfig cfg_;
    std::shared_ptr<Backend> backend_;
    Clock clock_;
    LogSink log_;
    std::unique_ptr<SessionStore> store_;
    std::unique_ptr<Bridge> bridge_;
    std::unique_ptr<Orchestrator> orch_;
    httplib::Server svr_;
    std::thread th_;
    std::atomic<std::uint64_t> eph_counter_{0};
    int port_ = 0;
};

} // namespace replisp
