// replisp — streaming Lisp-splicing middleware for chat-completion backends.
//
// Subcommands:
//   serve           run the HTTP proxy service
//   repl            interactive sandboxed Lisp, optionally against a session
//   run-transcript  drive the full middleware loop from a scripted backend
//   session         administer persisted session journals

#include <CLI11.hpp>

#include <replisp/mock_backend.hpp>
#include <replisp/service.hpp>

#include <csignal>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace replisp;

namespace {

// Exit codes: 0 success, 1 usage/config, 2 scenario/assertion, 3 runtime.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitScenario = 2;
constexpr int kExitRuntime = 3;

// --- serve -----------------------------------------------------------------

std::sig_atomic_t g_stop_requested = 0;

int cmd_serve(const std::optional<std::string>& config_path,
              const std::vector<std::pair<std::string, std::string>>& overrides) {
    ServiceConfig cfg;
    try {
        cfg = resolve_config(config_path, overrides);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        Service svc(cfg);
        svc.start();
        std::signal(SIGINT, [](int) { g_stop_requested = 1; });
        std::signal(SIGTERM, [](int) { g_stop_requested = 1; });
        while (!g_stop_requested)
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        svc.stop();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// --- repl ------------------------------------------------------------------

// A line ending inside an unclosed list or string keeps the reader waiting
// for more input rather than erroring out.
bool reads_complete(const std::string& src) {
    try {
        lisp::read_forms(src);
        return true;
    } catch (const lisp::ReaderError& e) {
        std::string msg = e.what();
        if (msg.find("unterminated") != std::string::npos ||
            msg.find("unbalanced") != std::string::npos ||
            msg.find("unexpected end") != std::string::npos)
            return false;
        return true; // a hard syntax error: let evaluation report it
    }
}

void print_outcome(const lisp::EvalOutcome& out) {
    if (!out.output.empty()) std::cout << out.output;
    if (!out.output.empty() && out.output.back() != '\n') std::cout << "\n";
    if (out.ok)
        std::cout << out.value << "\n";
    else
        std::cout << out.error_text() << "\n";
}

int cmd_repl(const std::string& session_id, std::int64_t budget_steps,
             const std::string& data_dir) {
    lisp::EvalBudget budget;
    if (budget_steps > 0) budget.max_steps = budget_steps;

    std::unique_ptr<SessionStore> store;
    SessionPtr session;
    lisp::Env local_env;
    lisp::Env* env = nullptr;
    std::int64_t turn = 1;

    try {
        if (!session_id.empty()) {
            StoreConfig scfg;
            scfg.data_dir = data_dir;
            scfg.default_budget = budget;
            store = std::make_unique<SessionStore>(scfg);
            session = store->getOrCreate(session_id);
            env = &session->env;
            turn = session->journal.empty() ? 1 : session->journal.back().turn + 1;
        } else {
            local_env = lisp::make_env();
            env = &local_env;
        }
    } catch (const SessionError& e) {
        std::cerr << "session error: " << e.what() << "\n";
        return kExitUsage;
    }

    std::string pending;
    bool tty = isatty(0);
    while (true) {
        if (tty) std::cout << (pending.empty() ? "replisp> " : "    ...> ") << std::flush;
        std::string line;
        if (!std::getline(std::cin, line)) break;

        if (pending.empty() && !line.empty() && line[0] == ':') {
            std::istringstream words(line);
            std::string cmd;
            words >> cmd;
            if (cmd == ":quit") break;
            if (cmd == ":defs") {
                for (auto id : env->user_defs) {
                    std::cout << lisp::symbol_name(id);
                    auto src = env->sources.find(id);
                    if (src != env->sources.end()) std::cout << "  " << src->second;
                    std::cout << "\n";
                }
                continue;
            }
            if (cmd == ":expand") {
                std::string rest;
                std::getline(words, rest);
                try {
                    auto form = lisp::read_one(rest);
                    std::cout << lisp::print_value(lisp::macroexpand(form, *env, budget))
                              << "\n";
                } catch (const std::exception& e) {
                    std::cout << "error: " << e.what() << "\n";
                }
                continue;
            }
            std::cout << "meta-commands: :quit  :expand <form>  :defs\n";
            continue;
        }

        pending += (pending.empty() ? "" : "\n") + line;
        if (pending.empty() || !reads_complete(pending)) continue;
        std::string source;
        std::swap(source, pending);
        if (source.find_first_not_of(" \t\n") == std::string::npos) continue;

        try {
            lisp::EvalOutcome out;
            if (store)
                out = store->evalInSession(session_id, source, turn++);
            else
                out = lisp::Interp(*env, budget).eval_top_level(source);
            print_outcome(out);
        } catch (const SessionError& e) {
            std::cout << "session error: " << e.what() << "\n";
        }
    }
    if (store && session) {
        try {
            store->snapshot(session_id);
        } catch (const SessionError& e) {
            std::cerr << "snapshot failed: " << e.what() << "\n";
        }
    }
    return kExitOk;
}

// --- run-transcript ---------------------------------------------------------

int cmd_run_transcript(const std::string& script_path, const std::string& trace_path,
                       const std::string& session_id, const std::string& data_dir,
                       bool fixed_clock_mode) {
    MockScript script;
    try {
        script = load_mock_script(script_path);
    } catch (const BackendError& e) {
        std::cerr << "script error: " << e.what() << "\n";
        return kExitUsage;
    }

    // Deterministic mode pins every timestamp so transcripts and traces are
    // byte-identical across runs.
    Clock clock = fixed_clock_mode ? fixed_clock(0) : system_clock();

    fs::path dir = data_dir.empty()
                       ? fs::temp_directory_path() /
                             ("replisp-transcript-" + std::to_string(std::random_device{}()))
                       : fs::path(data_dir);
    bool scratch = data_dir.empty();
    fs::create_directories(dir);

    int code = kExitOk;
    try {
        MockBackend backend(script);
        StoreConfig scfg;
        scfg.data_dir = dir.string();
        scfg.clock = clock;
        SessionStore store(scfg);
        OrchestratorConfig ocfg;
        ocfg.clock = clock;
        Orchestrator orch(backend, store, ocfg);

        nlohmann::json traces = nlohmann::json::array();
        std::string text;
        int turn_index = 0;

        // Each runTurn consumes script rounds until the turn completes; a
        // multi-turn script simply keeps going until every round is served.
        while (backend.rounds_served() < backend.rounds_total() && backend.failure().empty()) {
            GenerationRequest req;
            req.model = "transcript";
            req.messages = {{"user", "transcript turn " + std::to_string(turn_index)}};
            auto trace = orch.runTurn(req, session_id, [&](const std::string& t) { text += t; },
                                      "turn-" + std::to_string(turn_index));
            traces.push_back(trace.to_json());
            if (trace.status != TurnStatus::Completed) code = kExitScenario;
            ++turn_index;
        }

        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << "\n";

        if (!backend.verified()) {
            std::cerr << "scenario failure: "
                      << (backend.failure().empty() ? "script rounds left unserved"
                                                    : backend.failure())
                      << "\n";
            code = kExitScenario;
        }

        if (!trace_path.empty()) {
            std::ofstream out(trace_path);
            if (!out) {
                std::cerr << "cannot write trace: " << trace_path << "\n";
                code = kExitRuntime;
            } else {
                out << traces.dump(2) << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        code = kExitRuntime;
    }
    if (scratch) {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    return code;
}

// --- session administration -----------------------------------------------------

fs::path sessions_dir(const std::string& data_dir) {
    return fs::path(data_dir) / "sessions";
}

int cmd_session_ls(const std::string& data_dir) {
    auto dir = sessions_dir(data_dir);
    if (!fs::exists(dir)) return kExitOk;
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > 8 &&
            name.substr(name.size() - 8) == ".journal")
            ids.push_back(name.substr(0, name.size() - 8));
    }
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) std::cout << id << "\n";
    return kExitOk;
}

int cmd_session_rm(const std::string& data_dir, const std::string& id) {
    auto path = sessions_dir(data_dir) / (id + ".journal");
    if (!fs::exists(path)) {
        std::cerr << "no such session: " << id << "\n";
        return kExitScenario;
    }
    fs::remove(path);
    return kExitOk;
}

int cmd_session_export(const std::string& data_dir, const std::string& id,
                       const std::string& out_path) {
    auto path = sessions_dir(data_dir) / (id + ".journal");
    if (!fs::exists(path)) {
        std::cerr << "no such session: " << id << "\n";
        return kExitScenario;
    }
    fs::copy_file(path, out_path, fs::copy_options::overwrite_existing);
    return kExitOk;
}

int cmd_session_import(const std::string& data_dir, const std::string& id,
                       const std::string& in_path) {
    if (!valid_session_id(id)) {
        std::cerr << "invalid session id: " << id << "\n";
        return kExitUsage;
    }
    std::vector<JournalEntry> entries;
    try {
        entries = read_journal_file(in_path);
    } catch (const SessionError& e) {
        std::cerr << "import rejected: " << e.what() << "\n";
        return kExitScenario;
    }
    // every journaled source must still read as well-formed Lisp
    for (const auto& e : entries) {
        try {
            lisp::read_forms(e.source);
        } catch (const std::exception& ex) {
            std::cerr << "import rejected: record seq " << e.seq
                      << " does not read: " << ex.what() << "\n";
            return kExitScenario;
        }
    }
    auto dir = sessions_dir(data_dir);
    fs::create_directories(dir);
    write_journal_file(dir / (id + ".journal"), entries);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"replisp — Lisp-splicing middleware for streaming chat completions"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP proxy service");
    std::string config_path, listen, backend_url, serve_data_dir, evaluator;
    serve->add_option("--config", config_path, "Config file (key = value lines)");
    serve->add_option("--listen", listen, "host:port to bind (overrides config)");
    serve->add_option("--backend", backend_url, "Upstream base URL (overrides config)");
    serve->add_option("--data-dir", serve_data_dir, "Session data directory");
    serve->add_option("--evaluator", evaluator, "embedded | bridge");

    // repl
    auto* repl = app.add_subcommand("repl", "Interactive sandboxed Lisp");
    std::string repl_session, repl_data_dir = "replisp-data";
    std::int64_t budget_steps = 0;
    repl->add_option("--session", repl_session, "Evaluate inside a persistent session");
    repl->add_option("--budget-steps", budget_steps, "Step budget per evaluation");
    repl->add_option("--data-dir", repl_data_dir, "Session data directory");

    // run-transcript
    auto* rt = app.add_subcommand("run-transcript",
                                  "Drive the middleware loop from a scripted backend");
    std::string script_path, trace_path, rt_session = "transcript", rt_data_dir;
    bool fixed_clock_mode = false;
    rt->add_option("--script", script_path, "Mock backend script")->required();
    rt->add_option("--json-trace", trace_path, "Write turn traces as JSON");
    rt->add_option("--session", rt_session, "Session id for the transcript");
    rt->add_option("--data-dir", rt_data_dir, "Session data directory (default: scratch)");
    rt->add_flag("--fixed-clock", fixed_clock_mode, "Pin timestamps for reproducible output");

    // session
    auto* session = app.add_subcommand("session", "Administer persisted session journals");
    session->require_subcommand(1);
    std::string adm_data_dir = "replisp-data", adm_id, adm_file;
    session->add_option("--data-dir", adm_data_dir, "Session data directory");
    auto* ls = session->add_subcommand("ls", "List persisted sessions");
    auto* rm = session->add_subcommand("rm", "Delete a persisted journal");
    rm->add_option("id", adm_id, "Session id")->required();
    auto* exp = session->add_subcommand("export", "Copy a journal out");
    exp->add_option("id", adm_id, "Session id")->required();
    exp->add_option("file", adm_file, "Destination path")->required();
    auto* imp = session->add_subcommand("import", "Install a journal under an id");
    imp->add_option("id", adm_id, "Session id")->required();
    imp->add_option("file", adm_file, "Journal file to import")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (serve->parsed()) {
            std::vector<std::pair<std::string, std::string>> overrides;
            if (!listen.empty()) overrides.emplace_back("listen", listen);
            if (!backend_url.empty()) overrides.emplace_back("backend_url", backend_url);
            if (!serve_data_dir.empty()) overrides.emplace_back("data_dir", serve_data_dir);
            if (!evaluator.empty()) overrides.emplace_back("evaluator", evaluator);
            std::optional<std::string> cfg;
            if (!config_path.empty()) cfg = config_path;
            return cmd_serve(cfg, overrides);
        }
        if (repl->parsed()) return cmd_repl(repl_session, budget_steps, repl_data_dir);
        if (rt->parsed())
            return cmd_run_transcript(script_path, trace_path, rt_session, rt_data_dir,
                                      fixed_clock_mode);
        if (session->parsed()) {
            if (ls->parsed()) return cmd_session_ls(adm_data_dir);
            if (rm->parsed()) return cmd_session_rm(adm_data_dir, adm_id);
            if (exp->parsed()) return cmd_session_export(adm_data_dir, adm_id, adm_file);
            if (imp->parsed()) return cmd_session_import(adm_data_dir, adm_id, adm_file);
        }
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
