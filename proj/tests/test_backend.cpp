#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <replisp/backend.hpp>
#include <replisp/mock_backend.hpp>

#include <thread>

using namespace replisp;
using nlohmann::json;

namespace {

GenerationRequest base_request() {
    GenerationRequest req;
    req.model = "m";
    req.messages = {{"system", "sys"}, {"user", "hello"}};
    req.sampling = {{"temperature", 0.5}, {"max_tokens", 100}};
    return req;
}

const char* kTwoRoundScript =
    "mock-script 1\n"
    "round\n"
    "expect *\n"
    "emit x = <lisp>(+ 1 2)</lisp>.\n"
    "round\n"
    "expect x = 3.\n"
    "emit \\sDone.\n"
    "end\n";

} // namespace

// --- buildContinuation ------------------------------------------------------

TEST_CASE("buildContinuation appends an assistant prefill message") {
    auto req = base_request();
    auto cont = buildContinuation(req, "The answer is 3 and ");
    REQUIRE(cont.messages.size() == 3);
    CHECK(cont.messages.back().role == "assistant");
    CHECK(cont.messages.back().content == "The answer is 3 and ");
    CHECK(cont.prefill);
    CHECK(cont.sampling["temperature"] == 0.5); // passthrough preserved
}

TEST_CASE("second continuation replaces, not stacks, the assistant message") {
    auto req = base_request();
    auto r1 = buildContinuation(req, "first");
    auto r2 = buildContinuation(r1, "first and second");
    CHECK(r2.messages.size() == r1.messages.size());
    CHECK(r2.messages.back().content == "first and second");
}

TEST_CASE("continuation max_tokens heuristic: chars/4, floor 16") {
    auto req = base_request();
    auto cont = buildContinuation(req, std::string(40, 'a'));
    CHECK(cont.sampling["max_tokens"] == 90);

    auto floored = buildContinuation(req, std::string(4000, 'a'));
    CHECK(floored.sampling["max_tokens"] == 16);

    GenerationRequest no_cap = base_request();
    no_cap.sampling.erase("max_tokens");
    CHECK(!buildContinuation(no_cap, "x").sampling.contains("max_tokens"));
}

TEST_CASE("continuation shape idempotence: only prefix and max_tokens change") {
    auto r1 = buildContinuation(base_request(), "aaaa");
    auto r2 = buildContinuation(r1, "aaaabbbb");
    CHECK(r2.model == r1.model);
    CHECK(r2.messages.size() == r1.messages.size());
    for (std::size_t i = 0; i + 1 < r2.messages.size(); ++i)
        CHECK(r2.messages[i] == r1.messages[i]);
    auto s1 = r1.sampling, s2 = r2.sampling;
    s1.erase("max_tokens");
    s2.erase("max_tokens");
    CHECK(s1 == s2);
}

TEST_CASE("PrefillUnsupported when the backend is declared incapable") {
    try {
        buildContinuation(base_request(), "x", false);
        FAIL("expected PrefillUnsupported");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendErrorKind::PrefillUnsupported);
    }
}

// --- mock script parsing -------------------------------------------------------

TEST_CASE("mock script parses rounds, expectations, and escapes") {
    auto script = parse_mock_script(std::string(kTwoRoundScript));
    REQUIRE(script.rounds.size() == 2);
    CHECK(script.rounds[0].wildcard);
    CHECK(script.rounds[0].emit == std::vector<std::string>{"x = <lisp>(+ 1 2)</lisp>."});
    CHECK(!script.rounds[1].wildcard);
    CHECK(script.rounds[1].expected_prefix == "x = 3.");
    CHECK(script.rounds[1].emit == std::vector<std::string>{" Done."});
    CHECK(script.explicit_end);

    auto esc = parse_mock_script(std::string("mock-script 1\nround\nexpect *\nemit a\\nb\\\\c\n"));
    CHECK(esc.rounds[0].emit[0] == "a\nb\\c");
}

TEST_CASE("mock script rejects bad input with line numbers") {
    auto expect_script_error = [](const std::string& text) {
        try {
            parse_mock_script(text);
            FAIL("expected ScriptError for: " << text);
        } catch (const BackendError& e) {
            CHECK(e.kind == BackendErrorKind::ScriptError);
        }
    };
    expect_script_error("not-a-script\n");
    expect_script_error("mock-script 1\nemit before-round\n");
    expect_script_error("mock-script 1\nround\nbogus directive\n");
    expect_script_error("mock-script 1\nround\nfinish never\n");
    expect_script_error("mock-script 1\n# only comments\n");
}

// --- mock backend ---------------------------------------------------------------

TEST_CASE("mock round emits its chunks then done") {
    MockScript script;
    script.rounds.push_back({true, "", {"a", "b"}, FinishReason::Stop});
    MockBackend backend(script);
    auto stream = backend.startStream(base_request());

    TokenEvent ev;
    REQUIRE(stream->next(ev));
    CHECK(ev.delta == "a");
    REQUIRE(stream->next(ev));
    CHECK(ev.delta == "b");
    REQUIRE(stream->next(ev));
    CHECK(ev.done);
    CHECK(ev.finish_reason == FinishReason::Stop);
    CHECK(!stream->next(ev));
    CHECK(backend.verified());
}

TEST_CASE("reassembly: concatenated deltas equal the round's emit strings") {
    MockScript script;
    script.rounds.push_back({true, "", {"x", " =", " 1", "", "."}, FinishReason::Stop});
    MockBackend backend(script);
    auto stream = backend.startStream(base_request());
    CHECK(drain_stream(*stream) == "x = 1.");
}

TEST_CASE("cancel suppresses further deltas and is idempotent") {
    MockScript script;
    script.rounds.push_back({true, "", {"a", "b", "c"}, FinishReason::Stop});
    MockBackend backend(script);
    auto stream = backend.startStream(base_request());
    TokenEvent ev;
    REQUIRE(stream->next(ev));
    CHECK(ev.delta == "a");
    stream->cancel();
    stream->cancel(); // idempotent
    CHECK(!stream->next(ev));
}

TEST_CASE("mock asserts the continuation prefix; mismatch names the round") {
    auto script = parse_mock_script(std::string(kTwoRoundScript));
    MockBackend backend(script);
    backend.startStream(base_request());

    auto wrong = buildContinuation(base_request(), "x = 4.");
    try {
        backend.startStream(wrong);
        FAIL("expected Mismatch");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendErrorKind::Mismatch);
        CHECK(std::string(e.what()).find("round 1") != std::string::npos);
    }
    CHECK(!backend.verified());
    CHECK(backend.failure().find("round 1") != std::string::npos);
}

TEST_CASE("a completed scripted run proves every expectation matched") {
    auto script = parse_mock_script(std::string(kTwoRoundScript));
    MockBackend backend(script);
    CHECK(!backend.verified()); // nothing consumed yet
    backend.startStream(base_request());
    backend.startStream(buildContinuation(base_request(), "x = 3."));
    CHECK(backend.verified());

    // exhausted script: one round too many is a mismatch
    CHECK_THROWS_AS(backend.startStream(base_request()), BackendError);
    CHECK(!backend.verified());
}

// --- SSE parsing ------------------------------------------------------------------

TEST_CASE("SSE parser extracts data payloads across arbitrary chunk splits") {
    std::string wire =
        "data: {\"choices\":[{\"delta\":{\"content\":\"hi\"}}]}\n\n"
        "data: [DONE]\n\n";
    for (std::size_t split = 1; split < wire.size(); ++split) {
        detail::SseParser parser;
        std::vector<std::string> payloads;
        auto sink = [&](const std::string& p) { payloads.push_back(p); };
        parser.feed(wire.data(), split, sink);
        parser.feed(wire.data() + split, wire.size() - split, sink);
        REQUIRE(payloads.size() == 2);
        CHECK(payloads[0] == "{\"choices\":[{\"delta\":{\"content\":\"hi\"}}]}");
        CHECK(payloads[1] == "[DONE]");
    }
}

// --- HTTP backend against a local server --------------------------------------------

namespace {

struct TestServer {
    httplib::Server svr;
    int port = 0;
    std::thread th;

    explicit TestServer(std::function<void(const httplib::Request&, httplib::Response&)> h) {
        svr.Post("/v1/chat/completions", std::move(h));
        port = svr.bind_to_any_port("127.0.0.1");
        th = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~TestServer() {
        svr.stop();
        th.join();
    }
    std::string base() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

} // namespace

TEST_CASE("HTTP backend streams SSE deltas and terminates on [DONE]") {
    TestServer server([](const httplib::Request& rq, httplib::Response& rs) {
        auto body = json::parse(rq.body);
        CHECK(body["model"] == "m");
        CHECK(body["stream"] == true);
        CHECK(body["messages"].size() == 2);
        CHECK(rq.get_header_value("Authorization") == "Bearer sekret");
        rs.set_content(
            "data: {\"choices\":[{\"delta\":{\"content\":\"hel\"}}]}\n\n"
            "data: {\"choices\":[{\"delta\":{\"content\":\"lo\"},\"finish_reason\":null}]}\n\n"
            "data: [DONE]\n\n",
            "text/event-stream");
    });
    HttpBackend backend({server.base(), "sekret"});
    auto stream = backend.startStream(base_request());
    CHECK(drain_stream(*stream) == "hello");
}

TEST_CASE("HTTP status errors carry the code and produce no events") {
    TestServer server([](const httplib::Request&, httplib::Response& rs) {
        rs.status = 500;
        rs.set_content("boom", "text/plain");
    });
    HttpBackend backend({server.base()});
    try {
        backend.startStream(base_request());
        FAIL("expected HttpStatusError");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendErrorKind::HttpStatusError);
        CHECK(e.http_status == 500);
    }
}

TEST_CASE("connection failure is reported as ConnectFailure") {
    HttpBackend backend({"http://127.0.0.1:1/v1"});
    try {
        backend.startStream(base_request());
        FAIL("expected ConnectFailure");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendErrorKind::ConnectFailure);
    }
}

TEST_CASE("malformed SSE frame yields a terminating error event") {
    TestServer server([](const httplib::Request&, httplib::Response& rs) {
        rs.set_content("data: {not json\n\ndata: [DONE]\n\n", "text/event-stream");
    });
    HttpBackend backend({server.base()});
    auto stream = backend.startStream(base_request());
    TokenEvent ev;
    REQUIRE(stream->next(ev));
    CHECK(ev.error);
    CHECK(ev.done);
    CHECK(!stream->next(ev));
}
