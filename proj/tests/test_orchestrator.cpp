#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <replisp/mock_backend.hpp>
#include <replisp/orchestrator.hpp>

#include <filesystem>
#include <random>

using namespace replisp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("replisp-orch-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

GenerationRequest user_request(const std::string& text = "hi") {
    GenerationRequest req;
    req.model = "m";
    req.messages = {{"user", text}};
    return req;
}

struct Run {
    std::string client_text;
    TurnTrace trace;
};

Run run_script(const std::string& script_text, SessionStore& store,
               const std::string& session_id, OrchestratorConfig cfg = {},
               bool expect_verified = true) {
    MockBackend backend(parse_mock_script(script_text));
    Orchestrator orch(backend, store, std::move(cfg));
    Run r;
    r.trace = orch.runTurn(user_request(), session_id,
                           [&](const std::string& t) { r.client_text += t; });
    if (expect_verified) {
        CAPTURE(backend.failure());
        CHECK(backend.verified());
    }
    return r;
}

} // namespace

TEST_CASE("single block: cancel, evaluate, splice, resume") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit x = <lisp>(+ 1 2)</lisp>.\n"
        "round\nexpect x = 3.\nemit \\sDone.\n",
        store, "s1");
    CHECK(r.client_text == "x = 3. Done.");
    CHECK(r.trace.status == TurnStatus::Completed);
    CHECK(r.trace.total_evals() == 1);
    CHECK(r.trace.rounds.size() == 2);
}

TEST_CASE("passthrough: no tags, byte-identical, one round, zero evals") {
    TempDir d;
    SessionStore store({d.path.string()});
    std::string text = "plain response with <brackets> and </lispish> near-misses.";
    auto r = run_script("mock-script 1\nround\nexpect *\nemit " + text + "\n", store, "s1");
    CHECK(r.client_text == text);
    CHECK(r.trace.status == TurnStatus::Completed);
    CHECK(r.trace.total_evals() == 0);
    CHECK(r.trace.rounds.size() == 1);
}

TEST_CASE("three blocks across rounds splice in order") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit a=<lisp>(+ 1 1)</lisp> \n"
        "round\nexpect a=2 \nemit b=<lisp>(* 2 3)</lisp> \n"
        "round\nexpect a=2 b=6 \nemit c=<lisp>(- 9 2)</lisp> \n"
        "round\nexpect a=2 b=6 c=7 \nemit done\n",
        store, "s1");
    CHECK(r.client_text == "a=2 b=6 c=7 done");
    CHECK(r.trace.total_evals() == 3);
    CHECK(r.trace.status == TurnStatus::Completed);
}

TEST_CASE("definitions persist across turns within one session") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto t1 = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit I define <lisp>(defun f (x) (* x x))</lisp> now.\n"
        "round\nexpect I define F now.\nemit ok\n",
        store, "s1");
    CHECK(t1.client_text == "I define F now.ok");

    auto t2 = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit f(7) = <lisp>(f 7)</lisp>\n"
        "round\nexpect f(7) = 49\nemit !\n",
        store, "s1");
    CHECK(t2.client_text == "f(7) = 49!");

    // fresh session: same call yields the unbound-function error splice
    auto fresh = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit f(7) = <lisp>(f 7)</lisp>\n"
        "round\nexpect f(7) = #<error: UnboundFunction F>\nemit .\n",
        store, "s2");
    CHECK(fresh.client_text.find("#<error: UnboundFunction") != std::string::npos);
    CHECK(fresh.trace.status == TurnStatus::Completed);
}

TEST_CASE("evaluation errors are spliced and generation continues") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit try <lisp>(car 1)</lisp> then\n"
        "round\nexpect try #<error: TypeError CAR: 1 is not a list> then\nemit \\srecover\n",
        store, "s1");
    CHECK(r.trace.status == TurnStatus::Completed);
    CHECK(r.client_text.find("#<error: TypeError") != std::string::npos);
    CHECK(r.client_text.find("recover") != std::string::npos);
    REQUIRE(r.trace.total_evals() == 1);
    CHECK(!r.trace.rounds[0].evals[0].outcome.ok);
}

TEST_CASE("captured output is prepended to the spliced value") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit <lisp>(progn (princ \"log\") 42)</lisp>\n"
        "round\nexpect log\\n42\nemit \\send\n",
        store, "s1");
    CHECK(r.client_text == "log\n42 end");
}

TEST_CASE("eval limit stops at exactly max_evals with a terminal annotation") {
    TempDir d;
    SessionStore store({d.path.string()});
    std::string blocks;
    for (int i = 0; i < 17; ++i) blocks += "<lisp>(+ 1 1)</lisp>";
    OrchestratorConfig cfg;
    cfg.limits.max_evals = 16;
    cfg.limits.max_rounds = 16;
    auto r = run_script("mock-script 1\nround\nexpect *\nemit " + blocks + "\n", store, "s1",
                        cfg, false);
    CHECK(r.trace.status == TurnStatus::EvalLimit);
    CHECK(r.trace.total_evals() == 16);
    CHECK(r.client_text.find(terminal_annotation(TurnStatus::EvalLimit)) != std::string::npos);
}

TEST_CASE("round limit bounds an adversarial backend that always emits code") {
    TempDir d;
    SessionStore store({d.path.string()});

    struct AdversarialBackend : Backend {
        std::unique_ptr<TokenStream> startStream(const GenerationRequest&) override {
            return std::make_unique<MockTokenStream>(
                std::vector<std::string>{"<lisp>(+ 1 1)</lisp>"}, FinishReason::Stop);
        }
    } backend;

    OrchestratorConfig cfg;
    cfg.limits.max_rounds = 3;
    cfg.limits.max_evals = 16;
    Orchestrator orch(backend, store, cfg);
    std::string text;
    auto trace = orch.runTurn(user_request(), "s1", [&](const std::string& t) { text += t; });
    CHECK(trace.status == TurnStatus::RoundLimit);
    CHECK(trace.total_evals() == 4); // initial round + 3 restarts, one eval each
    CHECK(text.find(terminal_annotation(TurnStatus::RoundLimit)) != std::string::npos);
}

TEST_CASE("unterminated block at end of stream is flushed as text, not evaluated") {
    TempDir d;
    SessionStore store({d.path.string()});
    auto r = run_script("mock-script 1\nround\nexpect *\nemit before <lisp>(+ 1 2\n", store,
                        "s1");
    CHECK(r.client_text == "before <lisp>(+ 1 2");
    CHECK(r.trace.total_evals() == 0);
    CHECK(r.trace.status == TurnStatus::Completed);
}

TEST_CASE("annotated client view keeps code and result") {
    TempDir d;
    SessionStore store({d.path.string()});
    OrchestratorConfig cfg;
    cfg.policy.client_view = SpliceView::Annotated;
    cfg.policy.context_view = SpliceView::Replace;
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit v=<lisp>(+ 2 2)</lisp>\n"
        "round\nexpect v=4\nemit .\n", // context stays replace-mode
        store, "s1", cfg);
    CHECK(r.client_text == "v=<lisp-result>(+ 2 2)</lisp-result>4.");
}

TEST_CASE("context/client agreement when views match") {
    TempDir d;
    SessionStore store({d.path.string()});
    // the mock asserts the continuation prefix equals the client text so far
    auto r = run_script(
        "mock-script 1\n"
        "round\nexpect *\nemit A<lisp>(+ 1 0)</lisp>B\n"
        "round\nexpect A1B\nemit C\n",
        store, "s1");
    CHECK(r.client_text == "A1BC");
}

TEST_CASE("backend mid-stream error surfaces as backend_error with annotation") {
    TempDir d;
    SessionStore store({d.path.string()});

    struct ErrorStream : TokenStream {
        int n = 0;
        bool next(TokenEvent& ev) override {
            if (n++ == 0) {
                ev = {"partial", false, FinishReason::None, false, ""};
                return true;
            }
            ev = {"", true, FinishReason::Aborted, true, "connection reset"};
            return true;
        }
        void cancel() override {}
    };
    struct ErrorBackend : Backend {
        std::unique_ptr<TokenStream> startStream(const GenerationRequest&) override {
            return std::make_unique<ErrorStream>();
        }
    } backend;

    Orchestrator orch(backend, store);
    std::string text;
    auto trace = orch.runTurn(user_request(), "s1", [&](const std::string& t) { text += t; });
    CHECK(trace.status == TurnStatus::BackendError);
    CHECK(trace.error_message == "connection reset");
    CHECK(text.rfind(terminal_annotation(TurnStatus::BackendError)) != std::string::npos);
}

TEST_CASE("directEval shares the session with model turns and is journaled") {
    TempDir d;
    SessionStore store({d.path.string()});
    MockBackend backend(parse_mock_script(std::string(
        "mock-script 1\n"
        "round\nexpect *\nemit g(2) = <lisp>(g 2)</lisp>\n"
        "round\nexpect g(2) = 20\nemit \\n\n")));
    Orchestrator orch(backend, store);

    CHECK(orch.directEval("s1", "(defun g (x) (* x 10))").ok);
    auto s = store.find("s1");
    REQUIRE(s);
    CHECK(s->journal.size() == 1);

    std::string text;
    auto trace = orch.runTurn(user_request(), "s1", [&](const std::string& t) { text += t; });
    CHECK(text == "g(2) = 20\n");
    CHECK(trace.status == TurnStatus::Completed);
}

TEST_CASE("directEval creates missing sessions; budget errors leave them usable") {
    TempDir d;
    StoreConfig scfg{d.path.string()};
    scfg.default_budget.max_steps = 10'000;
    SessionStore store(scfg);
    MockBackend backend(MockScript{{MockRound{true, "", {}, FinishReason::Stop}}, false});
    Orchestrator orch(backend, store);

    auto out = orch.directEval("fresh", "(defun loopy () (loopy)) (loopy)");
    CHECK(!out.ok);
    CHECK(out.error_kind == lisp::ErrorKind::BudgetExhausted);
    CHECK(orch.directEval("fresh", "(+ 1 1)").value == "2");
}

TEST_CASE("invalid limits and splice literals are rejected") {
    TempDir d;
    SessionStore store({d.path.string()});
    MockBackend backend(MockScript{{MockRound{true, "", {}, FinishReason::Stop}}, false});

    OrchestratorConfig bad_limits;
    bad_limits.limits.max_rounds = 8;
    bad_limits.limits.max_evals = 4; // violates max_evals >= max_rounds
    CHECK_THROWS_AS(Orchestrator(backend, store, bad_limits), std::invalid_argument);

    OrchestratorConfig bad_policy;
    bad_policy.policy.result_open = "<lisp>";
    CHECK_THROWS_AS(Orchestrator(backend, store, bad_policy), std::invalid_argument);
}

TEST_CASE("property: splice correctness over randomized block layouts") {
    TempDir d;
    SessionStore store({d.path.string()});
    std::mt19937 rng(991);
    const std::vector<std::pair<std::string, std::string>> forms = {
        {"(+ 1 2)", "3"}, {"(* 3 3)", "9"}, {"(list 1 2)", "(1 2)"}, {"(car 1)",
         "#<error: TypeError CAR: 1 is not a list>"}};
    std::uniform_int_distribution<int> nblocks(0, 3), textlen(0, 8), pick(0, 3);
    const std::string alphabet = "ab <>/l";

    for (int iter = 0; iter < 50; ++iter) {
        int n = nblocks(rng);
        std::string backend_text, expected;
        auto rand_text = [&] {
            std::string t;
            int len = textlen(rng);
            for (int i = 0; i < len; ++i)
                t += alphabet[std::uniform_int_distribution<int>(
                    0, static_cast<int>(alphabet.size()) - 1)(rng)];
            // avoid accidental tag formation around block boundaries
            std::string safe;
            for (char c : t)
                if (c != '<') safe += c;
            return safe;
        };
        std::string t0 = rand_text();
        backend_text += t0;
        expected += t0;
        std::vector<std::string> emits;
        for (int b = 0; b < n; ++b) {
            auto& [src, val] = forms[pick(rng)];
            backend_text += "<lisp>" + src + "</lisp>";
            expected += val;
            std::string t = rand_text();
            backend_text += t;
            expected += t;
        }
        // single wildcard round emitting everything at once: every block is
        // evaluated from the already-received backlog; blocks trigger one
        // continuation round, which asserts the spliced prefix and ends
        MockScript script;
        script.rounds.push_back({true, "", {backend_text}, FinishReason::Stop});
        if (n > 0) script.rounds.push_back({false, expected, {}, FinishReason::Stop});
        MockBackend backend(script);
        OrchestratorConfig cfg;
        cfg.limits.max_rounds = 8;
        cfg.limits.max_evals = 8;
        Orchestrator orch(backend, store, cfg);
        std::string got;
        auto trace = orch.runTurn(user_request(), "prop" + std::to_string(iter),
                                  [&](const std::string& t) { got += t; });
        CAPTURE(backend_text);
        CHECK(got == expected);
        CHECK(trace.total_evals() == n);
    }
}
