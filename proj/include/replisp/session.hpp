#pragma once

#include <replisp/clock.hpp>
#include <replisp/lisp/interp.hpp>

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace replisp {

// --- errors ---------------------------------------------------------------

enum class SessionErrorKind {
    InvalidSessionId,
    PolicyMismatch,
    StoreFull,
    SessionBusy,
    SessionNotFound,
    ReplayDivergence,
    CorruptJournal,
    IoError,
};

inline const char* session_error_name(SessionErrorKind k) {
    switch (k) {
    case SessionErrorKind::InvalidSessionId: return "InvalidSessionId";
    case SessionErrorKind::PolicyMismatch: return "PolicyMismatch";
    case SessionErrorKind::StoreFull: return "StoreFull";
    case SessionErrorKind::SessionBusy: return "SessionBusy";
    case SessionErrorKind::SessionNotFound: return "SessionNotFound";
    case SessionErrorKind::ReplayDivergence: return "ReplayDivergence";
    case SessionErrorKind::CorruptJournal: return "CorruptJournal";
    case SessionErrorKind::IoError: return "IoError";
    }
    return "UnknownError";
}

struct SessionError : std::runtime_error {
    SessionErrorKind kind;
    std::int64_t seq; // offending journal entry for ReplayDivergence/CorruptJournal, else -1
    SessionError(SessionErrorKind k, std::string msg, std::int64_t s = -1)
        : std::runtime_error(std::move(msg)), kind(k), seq(s) {}
};

// --- domain types -----------------------------------------------------------

struct JournalEntry {
    std::int64_t seq = 0;
    std::int64_t turn = 0;
    std::string source;     // exact top-level source text evaluated
    std::string value_repr; // printed result at original evaluation time

    bool operator==(const JournalEntry&) const = default;
};

struct Session {
    std::string id;
    lisp::Env env;
    std::vector<JournalEntry> journal;
    lisp::CapabilityPolicy policy;
    lisp::EvalBudget budget;
    std::int64_t created_at = 0;
    std::int64_t last_used_at = 0;
    std::int64_t eval_count = 0;
    std::int64_t next_seq = 0;

    // per-session serialization of evaluations: eval_mu guards the queue
    // counter and bookkeeping; run_mu serializes the evaluations themselves
    std::mutex eval_mu;
    std::mutex run_mu;
    int queued = 0; // evaluations in flight or waiting

    bool in_flight() {
        std::lock_guard<std::mutex> lk(eval_mu);
        return queued > 0;
    }
};

using SessionPtr = std::shared_ptr<Session>;

// --- journal file format ------------------------------------------------------
//
// One journal per session at <data_dir>/sessions/<id>.journal:
//   line 1 : "replisp-journal 1"
//   record : "R <seq> <turn> <source-bytes> <value-bytes>\n"
//            <source text>\n<value text>\n
// Source and value are length-prefixed, so they may contain newlines; the
// trailing newline after each section is a separator, not part of the text.

inline constexpr const char* kJournalHeader = "replisp-journal 1";

inline bool valid_session_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '.' || c == '_' || c == '-';
    });
}

inline void write_journal_file(const std::filesystem::path& path,
                               const std::vector<JournalEntry>& journal) {
    namespace fs = std::filesystem;
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw SessionError(SessionErrorKind::IoError, "cannot write " + tmp.string());
        out << kJournalHeader << '\n';
        for (const auto& e : journal) {
            out << "R " << e.seq << ' ' << e.turn << ' ' << e.source.size() << ' '
                << e.value_repr.size() << '\n'
                << e.source << '\n'
                << e.value_repr << '\n';
        }
        out.flush();
        if (!out) throw SessionError(SessionErrorKind::IoError, "write failed: " + tmp.string());
    }
    fs::rename(tmp, path); // atomic publish
}

inline std::vector<JournalEntry> read_journal_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SessionError(SessionErrorKind::IoError, "cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header) || header != kJournalHeader)
        throw SessionError(SessionErrorKind::CorruptJournal,
                           "bad journal header in " + path.string());
    std::vector<JournalEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream hdr(line);
        char tag = 0;
        JournalEntry e;
        std::size_t src_len = 0, val_len = 0;
        if (!(hdr >> tag >> e.seq >> e.turn >> src_len >> val_len) || tag != 'R')
            throw SessionError(SessionErrorKind::CorruptJournal,
                               "malformed record header: " + line,
                               entries.empty() ? 0 : entries.back().seq + 1);
        auto read_section = [&](std::size_t len) {
            std::string s(len, '\0');
            in.read(s.data(), static_cast<std::streamsize>(len));
            char sep = 0;
            in.get(sep);
            if (!in || sep != '\n')
                throw SessionError(SessionErrorKind::CorruptJournal,
                                   "truncated record in " + path.string(), e.seq);
            return s;
        };
        e.source = read_section(src_len);
        e.value_repr = read_section(val_len);
        std::int64_t expected = entries.empty() ? 0 : entries.back().seq + 1;
        if (e.seq != expected)
            throw SessionError(SessionErrorKind::CorruptJournal,
                               "non-contiguous seq " + std::to_string(e.seq), e.seq);
        entries.push_back(std::move(e));
    }
    return entries;
}

// --- store --------------------------------------------------------------------

struct StoreConfig {
    std::string data_dir = "replisp-data";
    std::size_t max_sessions = 1024;
    int queue_depth = 16; // per-session pending-evaluation cap
    std::int64_t replay_budget_factor = 10;
    lisp::EvalBudget default_budget{};
    Clock clock = system_clock();
};

class SessionStore {
public:
    explicit SessionStore(StoreConfig cfg = {}) : cfg_(std::move(cfg)) {}

    const StoreConfig& config() const { return cfg_; }

    std::filesystem::path journal_path(const std::string& id) const {
        return std::filesystem::path(cfg_.data_dir) / "sessions" / (id + ".journal");
    }

    SessionPtr getOrCreate(const std::string& id, lisp::CapabilityPolicy policy = {}) {
        if (!valid_session_id(id))
            throw SessionError(SessionErrorKind::InvalidSessionId, "invalid session id: " + id);
        std::lock_guard<std::mutex> lk(mu_);
        return get_or_create_locked(id, policy);
    }

    // Evaluates under the session's budget, serialized per session. Successful
    // top-level forms are journaled; failures only bump eval_count.
    lisp::EvalOutcome evalInSession(const std::string& id, const std::string& source,
                                    std::int64_t turn) {
        SessionPtr s = getOrCreate(id);
        {
            std::lock_guard<std::mutex> lk(s->eval_mu);
            if (s->queued >= cfg_.queue_depth)
                throw SessionError(SessionErrorKind::SessionBusy,
                                   "session queue full: " + id);
            ++s->queued;
        }
        std::lock_guard<std::mutex> run(s->run_mu);
        auto out = lisp::eval_top_level(source, s->env, s->budget);
        {
            std::lock_guard<std::mutex> lk(s->eval_mu);
            --s->queued;
            ++s->eval_count;
            s->last_used_at = cfg_.clock();
            if (out.ok) {
                s->journal.push_back({s->next_seq++, turn, source, out.value});
            }
        }
        return out;
    }

    // Journals an outcome produced by an out-of-process evaluator, with the
    // same bookkeeping evalInSession applies to embedded evaluations.
    void record(const std::string& id, const std::string& source, std::int64_t turn,
                const lisp::EvalOutcome& out) {
        SessionPtr s = getOrCreate(id);
        std::lock_guard<std::mutex> lk(s->eval_mu);
        ++s->eval_count;
        s->last_used_at = cfg_.clock();
        if (out.ok) s->journal.push_back({s->next_seq++, turn, source, out.value});
    }

    void snapshot(const std::string& id) {
        SessionPtr s;
        {
            std::lock_guard<std::mutex> lk(mu_);
            auto it = live_.find(id);
            if (it == live_.end())
                throw SessionError(SessionErrorKind::SessionNotFound, "no live session: " + id);
            s = it->second;
        }
        std::lock_guard<std::mutex> run(s->run_mu);
        write_journal_file(journal_path(id), s->journal);
    }

    // Replays the persisted journal into a fresh env. Any replay error aborts,
    // marks the session corrupt, and reports the offending seq.
    SessionPtr restore(const std::string& id, lisp::CapabilityPolicy policy = {}) {
        if (!valid_session_id(id))
            throw SessionError(SessionErrorKind::InvalidSessionId, "invalid session id: " + id);
        std::lock_guard<std::mutex> lk(mu_);
        auto path = journal_path(id);
        if (!std::filesystem::exists(path))
            throw SessionError(SessionErrorKind::SessionNotFound,
                               "no snapshot for session: " + id);
        return restore_locked(id, policy, path);
    }

    // Snapshots and unloads sessions idle longer than ttl_ms; ttl 0 disables.
    std::vector<std::string> sweep(std::int64_t now, std::int64_t ttl_ms) {
        std::vector<std::string> evicted;
        if (ttl_ms <= 0) return evicted;
        std::lock_guard<std::mutex> lk(mu_);
        for (auto it = live_.begin(); it != live_.end();) {
            SessionPtr s = it->second;
            if (now - s->last_used_at > ttl_ms && !s->in_flight()) {
                try {
                    write_journal_file(journal_path(s->id), s->journal);
                    evicted.push_back(s->id);
                    it = live_.erase(it);
                    continue;
                } catch (const SessionError&) {
                    // eviction failure is logged by callers; keep the session live
                }
            }
            ++it;
        }
        return evicted;
    }

    // Drops the in-memory session but keeps its persisted journal, so a later
    // getOrCreate can restore it.
    void unload(const std::string& id) {
        std::lock_guard<std::mutex> lk(mu_);
        live_.erase(id);
    }

    // Snapshots (best effort) and removes a session entirely, including its
    // persisted journal.
    void remove(const std::string& id) {
        std::lock_guard<std::mutex> lk(mu_);
        live_.erase(id);
        corrupt_.erase(id);
        std::error_code ec;
        std::filesystem::remove(journal_path(id), ec);
    }

    std::vector<std::string> live_ids() const {
        std::lock_guard<std::mutex> lk(mu_);
        std::vector<std::string> ids;
        for (const auto& [id, _] : live_) ids.push_back(id);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::vector<std::string> persisted_ids() const {
        namespace fs = std::filesystem;
        std::vector<std::string> ids;
        fs::path dir = fs::path(cfg_.data_dir) / "sessions";
        std::error_code ec;
        for (const auto& ent : fs::directory_iterator(dir, ec)) {
            auto name = ent.path().filename().string();
            if (name.size() > 8 && name.ends_with(".journal"))
                ids.push_back(name.substr(0, name.size() - 8));
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    SessionPtr find(const std::string& id) const {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = live_.find(id);
        return it == live_.end() ? nullptr : it->second;
    }

    std::size_t live_count() const {
        std::lock_guard<std::mutex> lk(mu_);
        return live_.size();
    }

private:
    SessionPtr get_or_create_locked(const std::string& id, lisp::CapabilityPolicy policy) {
        if (corrupt_.count(id))
            throw SessionError(SessionErrorKind::ReplayDivergence,
                               "session marked corrupt: " + id, corrupt_.at(id));
        if (auto it = live_.find(id); it != live_.end()) {
            if (!(it->second->policy == policy))
                throw SessionError(SessionErrorKind::PolicyMismatch,
                                   "policy differs from the live session: " + id);
            it->second->last_used_at = cfg_.clock();
            return it->second;
        }
        auto path = journal_path(id);
        if (std::filesystem::exists(path)) return restore_locked(id, policy, path);
        ensure_capacity_locked();
        auto s = std::make_shared<Session>();
        s->id = id;
        s->policy = policy;
        s->budget = cfg_.default_budget;
        s->env = lisp::make_env(policy, cfg_.clock);
        s->created_at = s->last_used_at = cfg_.clock();
        live_[id] = s;
        return s;
    }

    SessionPtr restore_locked(const std::string& id, lisp::CapabilityPolicy policy,
                              const std::filesystem::path& path) {
        auto entries = read_journal_file(path);
        ensure_capacity_locked();
        auto s = std::make_shared<Session>();
        s->id = id;
        s->policy = policy;
        s->budget = cfg_.default_budget;
        s->env = lisp::make_env(policy, cfg_.clock);
        s->created_at = s->last_used_at = cfg_.clock();
        auto replay_budget = cfg_.default_budget.scaled(cfg_.replay_budget_factor);
        for (const auto& e : entries) {
            auto out = lisp::eval_top_level(e.source, s->env, replay_budget);
            // replay output is discarded by construction: only .ok matters here
            if (!out.ok) {
                corrupt_[id] = e.seq;
                throw SessionError(SessionErrorKind::ReplayDivergence,
                                   "replay failed at seq " + std::to_string(e.seq) + ": " +
                                       out.error_text(),
                                   e.seq);
            }
        }
        s->journal = std::move(entries);
        s->next_seq = s->journal.empty() ? 0 : s->journal.back().seq + 1;
        live_[id] = s;
        return s;
    }

    void ensure_capacity_locked() {
        if (live_.size() < cfg_.max_sessions) return;
        // Evict the longest-idle session with no in-flight evaluation.
        SessionPtr victim;
        for (const auto& [_, s] : live_) {
            if (s->in_flight()) continue;
            if (!victim || s->last_used_at < victim->last_used_at) victim = s;
        }
        if (!victim)
            throw SessionError(SessionErrorKind::StoreFull, "session store is full");
        write_journal_file(journal_path(victim->id), victim->journal);
        live_.erase(victim->id);
    }

    StoreConfig cfg_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, SessionPtr> live_;
    std::unordered_map<std::string, std::int64_t> corrupt_; // id -> failing seq
};

} // namespace replisp
