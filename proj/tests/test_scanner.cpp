#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <replisp/scanner.hpp>

#include <random>
#include <string>
#include <vector>

using namespace replisp;

namespace {

std::vector<ScanEvent> scan_all(const std::vector<std::string>& chunks,
                                ScannerConfig cfg = {}) {
    TagScanner sc(cfg);
    std::vector<ScanEvent> events;
    for (const auto& c : chunks) sc.feed(c, events);
    auto tail = sc.finish();
    events.insert(events.end(), tail.begin(), tail.end());
    return events;
}

// Independent oracle: non-incremental scan of the whole string by direct
// substring search. Deliberately shares no code with TagScanner.
std::vector<ScanEvent> oracle_scan(const std::string& s, UnterminatedPolicy pol) {
    std::vector<ScanEvent> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto open = s.find("<lisp>", pos);
        if (open == std::string::npos) {
            out.push_back(ScanEvent::text(s.substr(pos)));
            break;
        }
        if (open > pos) out.push_back(ScanEvent::text(s.substr(pos, open - pos)));
        auto close = s.find("</lisp>", open + 6);
        if (close == std::string::npos) {
            std::string code = s.substr(open + 6);
            if (pol == UnterminatedPolicy::FlushAsText) {
                out.push_back(ScanEvent::text("<lisp>" + code));
            } else {
                out.push_back(ScanEvent::code_begin());
                out.push_back(ScanEvent::unterminated(code));
            }
            return coalesce(out);
        }
        out.push_back(ScanEvent::code_begin());
        if (close > open + 6)
            out.push_back(ScanEvent::code_fragment(s.substr(open + 6, close - open - 6)));
        out.push_back(ScanEvent::code_end());
        pos = close + 7;
    }
    return coalesce(out);
}

} // namespace

TEST_CASE("tag split across chunks") {
    auto events = scan_all({"Hello <li", "sp>(+ 1 2)</l", "isp>!"});
    std::vector<ScanEvent> expected = {
        ScanEvent::text("Hello "),
        ScanEvent::code_begin(),
        ScanEvent::code_fragment("(+ 1 2)"),
        ScanEvent::code_end(),
        ScanEvent::text("!"),
    };
    CHECK(events == expected);
}

TEST_CASE("plain text passes through") {
    TagScanner sc;
    auto events = sc.feed("no tags here");
    REQUIRE(events.size() == 1);
    CHECK(events[0] == ScanEvent::text("no tags here"));
    CHECK(sc.finish().empty());
}

TEST_CASE("broken tag match is reverted to text") {
    TagScanner sc;
    std::vector<ScanEvent> events;
    sc.feed("a<lisp", events);
    REQUIRE(events.size() == 1);
    CHECK(events[0] == ScanEvent::text("a"));
    sc.feed("x", events); // '>' required after "<lisp"
    auto c = coalesce(events);
    REQUIRE(c.size() == 1);
    CHECK(c[0] == ScanEvent::text("a<lispx"));
}

TEST_CASE("finish flushes held open-tag prefix as text") {
    TagScanner sc;
    auto events = sc.feed("tail<l");
    REQUIRE(events.size() == 1);
    CHECK(events[0] == ScanEvent::text("tail"));
    auto tail = sc.finish();
    REQUIRE(tail.size() == 1);
    CHECK(tail[0] == ScanEvent::text("<l"));
}

TEST_CASE("unterminated block, flush-as-text default") {
    TagScanner sc;
    sc.feed("<lisp>(+ 1");
    auto tail = sc.finish();
    REQUIRE(tail.size() == 1);
    CHECK(tail[0] == ScanEvent::text("<lisp>(+ 1"));
}

TEST_CASE("unterminated block, error policy") {
    ScannerConfig cfg;
    cfg.on_unterminated = UnterminatedPolicy::Error;
    TagScanner sc(cfg);
    sc.feed("<lisp>(+ 1");
    auto tail = sc.finish();
    REQUIRE(tail.size() == 2);
    CHECK(tail[0] == ScanEvent::code_begin());
    CHECK(tail[1] == ScanEvent::unterminated("(+ 1"));
}

TEST_CASE("empty code block") {
    auto events = scan_all({"<lisp></lisp>"});
    std::vector<ScanEvent> expected = {ScanEvent::code_begin(), ScanEvent::code_end()};
    CHECK(events == expected);
}

TEST_CASE("closing tag inside code closes the block, no nesting") {
    auto events = scan_all({"<lisp>(princ \"</lisp>\")"});
    // first "</lisp>" closes; the rest is plain text
    REQUIRE(events.size() >= 3);
    CHECK(events[0] == ScanEvent::code_begin());
    CHECK(events[1] == ScanEvent::code_fragment("(princ \""));
    CHECK(events[2] == ScanEvent::code_end());
}

TEST_CASE("near-miss literals are plain text") {
    for (const std::string s : {"<lispy>x</lispy>", "< lisp >", "</lis", "<LISP>a</LISP>", "<<lisp"}) {
        CAPTURE(s);
        auto events = coalesce(scan_all({s}));
        CHECK(reconstruct(events) == s);
        for (const auto& e : events) CHECK(e.kind == ScanEventKind::Text);
    }
}

TEST_CASE("consecutive blocks alternate begin/end") {
    auto events = scan_all({"<lisp>1</lisp><lisp>2</lisp>mid<lisp>3</lisp>"});
    int begins = 0, ends = 0;
    for (const auto& e : events) {
        if (e.kind == ScanEventKind::CodeBegin) ++begins;
        if (e.kind == ScanEventKind::CodeEnd) ++ends;
    }
    CHECK(begins == 3);
    CHECK(ends == 3);
    CHECK(reconstruct(events) == "<lisp>1</lisp><lisp>2</lisp>mid<lisp>3</lisp>");
}

TEST_CASE("code block over max_code_bytes poisons the scanner") {
    ScannerConfig cfg;
    cfg.max_code_bytes = 16;
    TagScanner sc(cfg);
    std::vector<ScanEvent> events;
    sc.feed("<lisp>", events);
    CHECK_THROWS_AS(sc.feed(std::string(17, 'x'), events), CodeTooLong);
    CHECK(sc.poisoned());
    CHECK_THROWS_AS(sc.feed("more", events), std::logic_error);
}

TEST_CASE("chunk-partition invariance and losslessness, randomized") {
    std::mt19937 rng(20240817);
    const std::vector<std::string> pieces = {
        "hello", "<lisp>", "</lisp>", "<lispy>", "</lis", "<", "<li",
        "(+ 1 2)", " world ", "<<", "l>", "isp>", "\n", "<thinking>",
    };
    std::uniform_int_distribution<int> npieces(0, 8);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);

    for (int iter = 0; iter < 400; ++iter) {
        std::string s;
        int n = npieces(rng);
        for (int i = 0; i < n; ++i) s += pieces[pick(rng)];

        auto whole = coalesce(scan_all({s}));
        CHECK(reconstruct(whole) == s);

        for (int part = 0; part < 5; ++part) {
            std::vector<std::string> chunks;
            std::size_t pos = 0;
            while (pos < s.size()) {
                std::uniform_int_distribution<std::size_t> len(1, s.size() - pos);
                std::size_t l = len(rng);
                chunks.push_back(s.substr(pos, l));
                pos += l;
            }
            auto split = coalesce(scan_all(chunks));
            CHECK(split == whole);
        }
    }
}

TEST_CASE("incremental scan agrees with independent oracle") {
    std::mt19937 rng(7);
    const std::vector<std::string> pieces = {
        "a", "<lisp>", "</lisp>", "(f x)", "<lis", "p>", "</", "lisp>", "text",
    };
    std::uniform_int_distribution<int> npieces(0, 10);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    for (int iter = 0; iter < 300; ++iter) {
        std::string s;
        int n = npieces(rng);
        for (int i = 0; i < n; ++i) s += pieces[pick(rng)];
        for (auto pol : {UnterminatedPolicy::FlushAsText, UnterminatedPolicy::Error}) {
            CAPTURE(s);
            ScannerConfig cfg;
            cfg.on_unterminated = pol;
            auto got = coalesce(scan_all({s}, cfg));
            CHECK(got == oracle_scan(s, pol));
        }
    }
}
