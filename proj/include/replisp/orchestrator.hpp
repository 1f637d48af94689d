#pragma once

#include <replisp/backend.hpp>
#include <replisp/clock.hpp>
#include <replisp/scanner.hpp>
#include <replisp/session.hpp>

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace replisp {

// --- policies and limits ------------------------------------------------------

enum class SpliceView { Replace, Annotated };

struct SplicePolicy {
    SpliceView client_view = SpliceView::Replace;
    SpliceView context_view = SpliceView::Replace;
    std::string result_open = "<lisp-result>";
    std::string result_close = "</lisp-result>";

    void validate() const {
        if (result_open.empty() || result_close.empty())
            throw std::invalid_argument("splice result literals must be non-empty");
        if (result_open == "<lisp>" || result_close == "</lisp>" ||
            result_open == "</lisp>" || result_close == "<lisp>")
            throw std::invalid_argument("splice literals must differ from the code tag literals");
    }
};

struct TurnLimits {
    int max_rounds = 8; // continuation restarts per user request
    int max_evals = 16; // code blocks per user request
    std::optional<lisp::EvalBudget> budget_override;

    void validate() const {
        if (max_rounds <= 0 || max_evals <= 0)
            throw std::invalid_argument("turn limits must be positive");
        if (max_evals < max_rounds)
            throw std::invalid_argument("max_evals must be at least max_rounds");
    }
};

// --- trace ---------------------------------------------------------------------

enum class TurnStatus { Completed, RoundLimit, EvalLimit, BackendError, ScannerError };

inline const char* turn_status_name(TurnStatus s) {
    switch (s) {
    case TurnStatus::Completed: return "completed";
    case TurnStatus::RoundLimit: return "round_limit";
    case TurnStatus::EvalLimit: return "eval_limit";
    case TurnStatus::BackendError: return "backend_error";
    case TurnStatus::ScannerError: return "scanner_error";
    }
    return "unknown";
}

struct EvalRecord {
    std::string code;
    lisp::EvalOutcome outcome;
    std::int64_t latency_ms = 0;
};

struct RoundRecord {
    int index = 0;
    std::size_t emitted_length = 0; // client-visible bytes emitted this round
    std::vector<EvalRecord> evals;
};

struct TurnTrace {
    std::string request_id;
    std::string session_id;
    std::vector<RoundRecord> rounds;
    TurnStatus status = TurnStatus::Completed;
    std::string error_message;

    int total_evals() const {
        int n = 0;
        for (const auto& r : rounds) n += static_cast<int>(r.evals.size());
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json rs = nlohmann::json::array();
        for (const auto& r : rounds) {
            nlohmann::json evals = nlohmann::json::array();
            for (const auto& e : r.evals) {
                evals.push_back({{"code", e.code},
                                 {"ok", e.outcome.ok},
                                 {"value", e.outcome.ok ? e.outcome.value : ""},
                                 {"error", e.outcome.ok ? "" : e.outcome.error_text()},
                                 {"output", e.outcome.output},
                                 {"latency_ms", e.latency_ms}});
            }
            rs.push_back({{"round", r.index},
                          {"emitted_length", r.emitted_length},
                          {"evals", std::move(evals)}});
        }
        return {{"request_id", request_id},
                {"session_id", session_id},
                {"rounds", std::move(rs)},
                {"status", turn_status_name(status)},
                {"error", error_message},
                {"total_evals", total_evals()}};
    }
};

// Terminal annotation emitted to the client when a turn ends abnormally.
inline std::string terminal_annotation(TurnStatus status) {
    return std::string("\n[replisp:") + turn_status_name(status) + "]";
}

// --- orchestrator ----------------------------------------------------------------

struct OrchestratorConfig {
    TurnLimits limits;
    SplicePolicy policy;
    Clock clock = system_clock();
    // Pluggable evaluation path (e.g. an external-Lisp bridge). Defaults to
    // the session store's embedded interpreter. Implementations must journal
    // successful forms exactly as evalInSession does.
    std::function<lisp::EvalOutcome(const std::string& session_id, const std::string& source,
                                    std::int64_t turn)>
        evaluator;
};

// Annotated splices carry the code alongside its result; replace mode emits
// only the result text, exactly in place of the original tag.
inline std::string render_splice(SpliceView view, const std::string& code,
                                 const std::string& result, const SplicePolicy& policy) {
    if (view == SpliceView::Replace) return result;
    return policy.result_open + code + policy.result_close + result;
}

class Orchestrator {
public:
    Orchestrator(Backend& backend, SessionStore& store, OrchestratorConfig cfg = {})
        : backend_(backend), store_(store), cfg_(std::move(cfg)) {
        cfg_.limits.validate();
        cfg_.policy.validate();
    }

    // Admin/debug path: evaluates in the session exactly as a tag would,
    // journaled identically, bypassing the model entirely.
    lisp::EvalOutcome directEval(const std::string& session_id, const std::string& source) {
        return evaluate(session_id, source, next_turn(session_id));
    }

    // Drives one full middleware turn. Client-visible text is pushed to
    // emit_client in stream order; the trace records every round and eval.
    TurnTrace runTurn(const GenerationRequest& request, const std::string& session_id,
                      const std::function<void(const std::string&)>& emit_client,
                      const std::string& request_id = "") {
        TurnTrace trace;
        trace.request_id = request_id;
        trace.session_id = session_id;
        std::int64_t turn = next_turn(session_id);

        std::string context_prefix; // model-facing continuation text
        GenerationRequest current = request;
        int restarts = 0;

        for (;;) {
            RoundRecord round;
            round.index = static_cast<int>(trace.rounds.size());
            auto emit = [&](const std::string& text) {
                if (text.empty()) return;
                round.emitted_length += text.size();
                emit_client(text);
            };

            std::unique_ptr<TokenStream> stream;
            try {
                stream = backend_.startStream(current);
            } catch (const BackendError& e) {
                trace.status = TurnStatus::BackendError;
                trace.error_message = e.what();
                emit(terminal_annotation(trace.status));
                trace.rounds.push_back(std::move(round));
                return trace;
            }

            TagScanner scanner;
            std::string code;                // buffered fragments of the open block
            bool restart = false;            // a block was evaluated; continue in a new round
            bool hit_limit = false;
            TurnStatus limit_status = TurnStatus::Completed;

            auto handle_events = [&](const std::vector<ScanEvent>& events) {
                for (const auto& ev : events) {
                    if (hit_limit) break; // annotation already pending
                    switch (ev.kind) {
                    case ScanEventKind::Text:
                    case ScanEventKind::Unterminated: // flush-as-text default
                        emit(ev.payload);
                        context_prefix += ev.payload;
                        break;
                    case ScanEventKind::CodeBegin:
                        code.clear();
                        break;
                    case ScanEventKind::CodeFragment:
                        code += ev.payload;
                        break;
                    case ScanEventKind::CodeEnd: {
                        if (trace.total_evals() + static_cast<int>(round.evals.size()) >=
                            cfg_.limits.max_evals) {
                            hit_limit = true;
                            limit_status = TurnStatus::EvalLimit;
                            break;
                        }
                        stream->cancel(); // pause semantics: no further upstream pulls
                        restart = true;
                        std::int64_t t0 = cfg_.clock();
                        lisp::EvalOutcome out = evaluate(session_id, code, turn);
                        std::int64_t latency = cfg_.clock() - t0;
                        std::string splice = out.splice_text();
                        emit(render_splice(cfg_.policy.client_view, code, splice, cfg_.policy));
                        context_prefix += render_splice(cfg_.policy.context_view, code, splice, cfg_.policy);
                        round.evals.push_back({code, std::move(out), latency});
                        break;
                    }
                    }
                }
            };

            TokenEvent tok;
            bool backend_failed = false;
            while (stream->next(tok)) {
                if (tok.error) {
                    backend_failed = true;
                    trace.error_message = tok.error_message;
                    break;
                }
                try {
                    handle_events(scanner.feed(tok.delta));
                } catch (const CodeTooLong& e) {
                    trace.status = TurnStatus::ScannerError;
                    trace.error_message = e.what();
                    emit(terminal_annotation(trace.status));
                    trace.rounds.push_back(std::move(round));
                    return trace;
                }
                if (tok.done) break;
            }
            handle_events(scanner.finish());

            if (backend_failed) {
                trace.status = TurnStatus::BackendError;
                emit(terminal_annotation(trace.status));
                trace.rounds.push_back(std::move(round));
                return trace;
            }
            if (hit_limit) {
                trace.status = limit_status;
                emit(terminal_annotation(trace.status));
                trace.rounds.push_back(std::move(round));
                return trace;
            }
            if (!restart) {
                // stream finished cleanly with no code block: turn complete
                trace.status = TurnStatus::Completed;
                trace.rounds.push_back(std::move(round));
                return trace;
            }
            if (restarts >= cfg_.limits.max_rounds) {
                trace.status = TurnStatus::RoundLimit;
                emit(terminal_annotation(trace.status));
                trace.rounds.push_back(std::move(round));
                return trace;
            }
            trace.rounds.push_back(std::move(round));
            ++restarts;
            current = buildContinuation(request, context_prefix, backend_.supportsPrefill());
        }
    }

    const OrchestratorConfig& config() const { return cfg_; }

private:
    std::int64_t next_turn(const std::string& session_id) {
        auto s = store_.find(session_id);
        if (!s || s->journal.empty()) return 1;
        return s->journal.back().turn + 1;
    }

    lisp::EvalOutcome evaluate(const std::string& session_id, const std::string& code,
                               std::int64_t turn) {
        try {
            if (cfg_.evaluator) return cfg_.evaluator(session_id, code, turn);
            return store_.evalInSession(session_id, code, turn);
        } catch (const SessionError& e) {
            // store-level failures (e.g. SessionBusy) surface as error splices
            lisp::EvalOutcome out;
            out.ok = false;
            out.error_kind = lisp::ErrorKind::BudgetExhausted;
            out.error_message = std::string(session_error_name(e.kind)) + ": " + e.what();
            return out;
        }
    }

    Backend& backend_;
    SessionStore& store_;
    OrchestratorConfig cfg_;
};

} // namespace replisp
