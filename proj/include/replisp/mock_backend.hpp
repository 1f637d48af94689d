#pragma once

// Deterministic scripted backend. The mock is an assertion engine, not a
// stub: every continuation round's trailing assistant message must equal the
// round's expected prefix, and a completed run proves all rounds matched.
//
// Script file format (see docs/mock-script.md):
//   mock-script 1
//   round
//   expect *                 (wildcard; the opening round)
//   emit <chunk>             (repeatable; \n newline, \s space, \\ backslash)
//   finish stop|length       (optional, default stop)
//   round
//   expect <text the round's continuation prefix must equal exactly>
//   emit <chunk>
//   end                      (optional explicit end-of-script marker)
// Blank lines and lines starting with '#' are ignored.

#include <replisp/backend.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace replisp {

struct MockRound {
    bool wildcard = false;          // expect * — no prefix assertion
    std::string expected_prefix;    // continuation prefix this round requires
    std::vector<std::string> emit;  // chunks streamed as deltas
    FinishReason finish = FinishReason::Stop;
};

struct MockScript {
    std::vector<MockRound> rounds;
    bool explicit_end = false;
};

inline std::string mock_unescape(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            char c = s[++i];
            if (c == 'n') out += '\n';
            else if (c == 's') out += ' ';
            else if (c == '\\') out += '\\';
            else throw BackendError(BackendErrorKind::ScriptError,
                                    std::string("bad escape \\") + c + " in mock script");
        } else {
            out += s[i];
        }
    }
    return out;
}

inline MockScript parse_mock_script(std::istream& in) {
    MockScript script;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw BackendError(BackendErrorKind::ScriptError,
                           "mock script line " + std::to_string(lineno) + ": " + msg);
    };
    if (!std::getline(in, line) || line != "mock-script 1") {
        lineno = 1;
        fail("expected header 'mock-script 1'");
    }
    lineno = 1;
    MockRound* cur = nullptr;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (line == "round") {
            script.rounds.emplace_back();
            cur = &script.rounds.back();
        } else if (line == "end") {
            script.explicit_end = true;
        } else if (line.rfind("expect ", 0) == 0) {
            if (!cur) fail("'expect' before any 'round'");
            std::string arg = line.substr(7);
            if (arg == "*") cur->wildcard = true;
            else cur->expected_prefix = mock_unescape(arg);
        } else if (line.rfind("emit ", 0) == 0) {
            if (!cur) fail("'emit' before any 'round'");
            cur->emit.push_back(mock_unescape(line.substr(5)));
        } else if (line.rfind("finish ", 0) == 0) {
            if (!cur) fail("'finish' before any 'round'");
            std::string arg = line.substr(7);
            if (arg == "stop") cur->finish = FinishReason::Stop;
            else if (arg == "length") cur->finish = FinishReason::Length;
            else fail("unknown finish reason '" + arg + "'");
        } else {
            fail("unrecognized directive: " + line);
        }
    }
    if (script.rounds.empty()) {
        lineno = 1;
        fail("script declares no rounds");
    }
    return script;
}

inline MockScript parse_mock_script(const std::string& text) {
    std::istringstream in(text);
    return parse_mock_script(in);
}

inline MockScript load_mock_script(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw BackendError(BackendErrorKind::ScriptError, "cannot open mock script: " + path);
    return parse_mock_script(in);
}

class MockTokenStream : public TokenStream {
public:
    MockTokenStream(std::vector<std::string> chunks, FinishReason finish)
        : chunks_(std::move(chunks)), finish_(finish) {}

    bool next(TokenEvent& ev) override {
        if (cancelled_ || finished_) return false;
        if (pos_ < chunks_.size()) {
            ev = {chunks_[pos_++], false, FinishReason::None, false, ""};
            return true;
        }
        ev = {"", true, finish_, false, ""};
        finished_ = true;
        return true;
    }

    void cancel() override { cancelled_ = true; }

private:
    std::vector<std::string> chunks_;
    FinishReason finish_;
    std::size_t pos_ = 0;
    std::atomic<bool> cancelled_{false};
    bool finished_ = false;
};

class MockBackend : public Backend {
public:
    explicit MockBackend(MockScript script, bool prefill_supported = true)
        : script_(std::move(script)), prefill_supported_(prefill_supported) {}

    std::unique_ptr<TokenStream> startStream(const GenerationRequest& req) override {
        if (next_round_ >= script_.rounds.size())
            return fail_round("script has no round " + std::to_string(next_round_));
        const MockRound& round = script_.rounds[next_round_];
        if (!round.wildcard) {
            if (req.messages.empty() || req.messages.back().role != "assistant")
                return fail_round("round " + std::to_string(next_round_) +
                                  " expected an assistant continuation prefix");
            const std::string& got = req.messages.back().content;
            if (got != round.expected_prefix)
                return fail_round("round " + std::to_string(next_round_) +
                                  " prefix mismatch\n  expected: " + round.expected_prefix +
                                  "\n  got:      " + got);
        }
        ++next_round_;
        return std::make_unique<MockTokenStream>(round.emit, round.finish);
    }

    bool supportsPrefill() const override { return prefill_supported_; }

    // A run is verified only when every round was consumed and matched.
    bool verified() const { return failure_.empty() && next_round_ == script_.rounds.size(); }
    const std::string& failure() const { return failure_; }
    std::size_t rounds_served() const { return next_round_; }
    std::size_t rounds_total() const { return script_.rounds.size(); }

private:
    std::unique_ptr<TokenStream> fail_round(std::string msg) {
        if (failure_.empty()) failure_ = msg;
        throw BackendError(BackendErrorKind::Mismatch, std::move(msg));
    }

    MockScript script_;
    bool prefill_supported_;
    std::size_t next_round_ = 0;
    std::string failure_;
};

} // namespace replisp
