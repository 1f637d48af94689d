#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace replisp {

// Incremental scanner for <lisp>...</lisp> blocks in a token stream.
//
// Tag literals are exact and case-sensitive. Blocks do not nest: the first
// </lisp> inside a block closes it. Bytes that form an ambiguous prefix of a
// tag literal at the end of a chunk are held until the next chunk decides
// them, so tags split across arbitrary chunk boundaries are recognized.
//
// A code block is emitted atomically when its closing tag is seen:
// CodeBegin, one CodeFragment with the full code (omitted when empty),
// CodeEnd. A block still open at end of stream is disposed of per the
// unterminated policy.

enum class ScanEventKind {
    Text,
    CodeBegin,
    CodeFragment,
    CodeEnd,
    Unterminated,
};

struct ScanEvent {
    ScanEventKind kind;
    std::string payload; // Text / CodeFragment / Unterminated only

    static ScanEvent text(std::string s) { return {ScanEventKind::Text, std::move(s)}; }
    static ScanEvent code_begin() { return {ScanEventKind::CodeBegin, {}}; }
    static ScanEvent code_fragment(std::string s) { return {ScanEventKind::CodeFragment, std::move(s)}; }
    static ScanEvent code_end() { return {ScanEventKind::CodeEnd, {}}; }
    static ScanEvent unterminated(std::string s) { return {ScanEventKind::Unterminated, std::move(s)}; }

    bool operator==(const ScanEvent& o) const { return kind == o.kind && payload == o.payload; }
};

// Current code block exceeded max_code_bytes; the scanner is poisoned and the
// round must be aborted.
struct CodeTooLong : std::runtime_error {
    explicit CodeTooLong(std::size_t limit)
        : std::runtime_error("lisp code block exceeds " + std::to_string(limit) + " bytes") {}
};

enum class UnterminatedPolicy {
    FlushAsText, // emit the raw "<lisp>" prefix and accumulated code back as Text
    Error,       // emit CodeBegin + Unterminated carrying the accumulated code
};

struct ScannerConfig {
    std::size_t max_code_bytes = 64 * 1024;
    UnterminatedPolicy on_unterminated = UnterminatedPolicy::FlushAsText;
};

class TagScanner {
public:
    explicit TagScanner(ScannerConfig config = {}) : config_(config) {}

    // Consume one chunk, appending events to `out`. Throws CodeTooLong when
    // the current block exceeds the configured maximum; the scanner must not
    // be fed afterwards.
    void feed(std::string_view chunk, std::vector<ScanEvent>& out) {
        if (poisoned_) throw std::logic_error("feed on poisoned scanner");
        for (char c : chunk) step(c, out);
        flush_text(out);
    }

    std::vector<ScanEvent> feed(std::string_view chunk) {
        std::vector<ScanEvent> out;
        feed(chunk, out);
        return out;
    }

    // End of stream. Flushes held bytes; an open code block is disposed of
    // per the configured policy.
    std::vector<ScanEvent> finish() {
        std::vector<ScanEvent> out;
        if (poisoned_) return out;
        if (!in_code_) {
            // held_ is a partial "<lisp>" prefix: plain text after all
            text_ += held_;
            held_.clear();
            flush_text(out);
        } else {
            std::string code = code_ + held_; // partial "</lisp>" belongs to the code
            held_.clear();
            code_.clear();
            in_code_ = false;
            if (config_.on_unterminated == UnterminatedPolicy::FlushAsText) {
                out.push_back(ScanEvent::text(std::string(kOpen) + code));
            } else {
                out.push_back(ScanEvent::code_begin());
                out.push_back(ScanEvent::unterminated(std::move(code)));
            }
        }
        return out;
    }

    bool in_code() const { return in_code_; }
    bool poisoned() const { return poisoned_; }

private:
    static constexpr std::string_view kOpen = "<lisp>";
    static constexpr std::string_view kClose = "</lisp>";

    void step(char c, std::vector<ScanEvent>& out) {
        std::string_view tag = in_code_ ? kClose : kOpen;
        if (c == tag[held_.size()]) {
            held_ += c;
            if (held_.size() == tag.size()) {
                held_.clear();
                if (in_code_) {
                    out.push_back(ScanEvent::code_begin());
                    if (!code_.empty()) {
                        out.push_back(ScanEvent::code_fragment(std::move(code_)));
                        code_.clear();
                    }
                    out.push_back(ScanEvent::code_end());
                    in_code_ = false;
                } else {
                    flush_text(out);
                    in_code_ = true;
                }
            }
            return;
        }
        // Mismatch: the held prefix is ordinary content. No proper prefix of
        // either tag literal contains '<' past position 0, so re-examining
        // only the current character is enough.
        if (!held_.empty()) {
            if (in_code_) append_code(held_); else text_ += held_;
            held_.clear();
        }
        if (c == tag[0]) {
            held_ += c;
        } else if (in_code_) {
            append_code(std::string_view(&c, 1));
        } else {
            text_ += c;
        }
    }

    void append_code(std::string_view s) {
        if (code_.size() + s.size() > config_.max_code_bytes) {
            poisoned_ = true;
            throw CodeTooLong(config_.max_code_bytes);
        }
        code_ += s;
    }

    void flush_text(std::vector<ScanEvent>& out) {
        if (!text_.empty()) {
            out.push_back(ScanEvent::text(std::move(text_)));
            text_.clear();
        }
    }

    ScannerConfig config_;
    bool in_code_ = false;
    bool poisoned_ = false;
    std::string held_; // ambiguous prefix of the active tag literal
    std::string text_; // pending Text payload
    std::string code_; // accumulated code of the open block
};

// Rebuild the exact input from an event sequence (losslessness check).
inline std::string reconstruct(const std::vector<ScanEvent>& events) {
    std::string s;
    for (const auto& e : events) {
        switch (e.kind) {
        case ScanEventKind::Text: s += e.payload; break;
        case ScanEventKind::CodeBegin: s += "<lisp>"; break;
        case ScanEventKind::CodeFragment: s += e.payload; break;
        case ScanEventKind::CodeEnd: s += "</lisp>"; break;
        case ScanEventKind::Unterminated: s += e.payload; break;
        }
    }
    return s;
}

// Coalesce adjacent Text and adjacent CodeFragment events; used by the
// chunk-partition invariance property.
inline std::vector<ScanEvent> coalesce(const std::vector<ScanEvent>& events) {
    std::vector<ScanEvent> out;
    for (const auto& e : events) {
        if (!out.empty() && out.back().kind == e.kind &&
            (e.kind == ScanEventKind::Text || e.kind == ScanEventKind::CodeFragment)) {
            out.back().payload += e.payload;
        } else {
            out.push_back(e);
        }
    }
    return out;
}

} // namespace replisp
