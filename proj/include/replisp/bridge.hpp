#pragma once

// Alternative evaluator backend: delegates evaluation to an external, full
// Common Lisp process over stdin/stdout pipes. See docs/bridge-protocol.md
// for the wire protocol and the wrapper template shipped with the repo.

#include <replisp/clock.hpp>
#include <replisp/lisp/interp.hpp>
#include <replisp/session.hpp>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace replisp {

enum class BridgeErrorKind {
    SpawnFailure,
    HandshakeTimeout,
    BridgeTimeout,
    BridgeDead,
    ProtocolError,
    RestartLimitExceeded,
    InvalidSource,
};

inline const char* bridge_error_name(BridgeErrorKind k) {
    switch (k) {
    case BridgeErrorKind::SpawnFailure: return "SpawnFailure";
    case BridgeErrorKind::HandshakeTimeout: return "HandshakeTimeout";
    case BridgeErrorKind::BridgeTimeout: return "BridgeTimeout";
    case BridgeErrorKind::BridgeDead: return "BridgeDead";
    case BridgeErrorKind::ProtocolError: return "ProtocolError";
    case BridgeErrorKind::RestartLimitExceeded: return "RestartLimitExceeded";
    case BridgeErrorKind::InvalidSource: return "InvalidSource";
    }
    return "UnknownError";
}

struct BridgeError : std::runtime_error {
    BridgeErrorKind kind;
    BridgeError(BridgeErrorKind k, std::string msg)
        : std::runtime_error(std::move(msg)), kind(k) {}
};

struct BridgeConfig {
    std::vector<std::string> command;
    std::int64_t eval_timeout_ms = 5000;
    int restart_limit = 10;            // automatic restarts per hour
    std::string sentinel_secret;       // 128-bit hex; generated when empty

    void validate() const {
        if (command.empty()) throw std::invalid_argument("bridge command must be non-empty");
        if (eval_timeout_ms <= 0) throw std::invalid_argument("bridge timeout must be positive");
    }
};

inline std::string generate_sentinel_secret() {
    std::random_device rd;
    std::string hex;
    hex.reserve(32);
    static const char digits[] = "0123456789abcdef";
    for (int i = 0; i < 32; ++i) hex += digits[rd() & 0xF];
    return hex;
}

inline std::string lisp_string_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

// Bootstrap source installed right after spawn. It defines REPLISP-BRIDGE-EVAL,
// which evaluates a payload inside a per-session package, captures output and
// the final value (or any condition), and prints a sentinel-framed response:
//   \x1e<secret> <ok|error>\x1e
//   V <bytes>\n<value text>\n
//   O <bytes>\n<output text>\n
// The secret is assembled from two halves at runtime so that a non-Lisp child
// that merely echoes its input can never produce a valid frame.
inline std::string bridge_bootstrap_source(const std::string& secret_a,
                                           const std::string& secret_b) {
    return "(defun replisp-frame (secret status value output)"
           " (format t \"~a~a ~a~a~%\" (code-char 30) secret status (code-char 30))"
           " (format t \"V ~a~%~a~%\" (length value) value)"
           " (format t \"O ~a~%~a~%\" (length output) output)"
           " (finish-output))\n"
           "(defun replisp-session-package (name)"
           " (or (find-package name) (make-package name :use '(:common-lisp))))\n"
           "(defun replisp-bridge-eval (pkg-name source)"
           " (let ((secret (concatenate 'string \"" + secret_a + "\" \"" + secret_b + "\"))"
           "       (*package* (replisp-session-package pkg-name)))"
           "  (handler-case"
           "   (let* ((output (make-string-output-stream)) (value nil))"
           "    (with-input-from-string (in source)"
           "     (let ((*standard-output* output))"
           "      (loop for form = (read in nil 'replisp-eof)"
           "            until (eq form 'replisp-eof)"
           "            do (setf value (eval form)))))"
           "    (replisp-frame secret \"ok\" (prin1-to-string value)"
           "                   (get-output-stream-string output)))"
           "   (condition (c)"
           "    (replisp-frame (concatenate 'string \"" + secret_a + "\" \"" + secret_b + "\")"
           "                   \"error\" (format nil \"~a: ~a\" (type-of c) c) \"\")))))\n";
}

inline std::string bridge_handshake_source(const std::string& secret_a,
                                           const std::string& secret_b) {
    return "(progn (format t \"~a~%\" (concatenate 'string \"" + secret_a + "\" \"" +
           secret_b + "\")) (finish-output))\n";
}

class Bridge {
public:
    explicit Bridge(BridgeConfig cfg, Clock clock = system_clock())
        : cfg_(std::move(cfg)), clock_(std::move(clock)) {
        cfg_.validate();
        if (cfg_.sentinel_secret.empty()) cfg_.sentinel_secret = generate_sentinel_secret();
    }

    ~Bridge() { shutdown(); }

    Bridge(const Bridge&) = delete;
    Bridge& operator=(const Bridge&) = delete;

    // Launches the child and completes the banner-drain handshake: the remote
    // must print the runtime-assembled sentinel secret before work is accepted.
    void start() {
        std::lock_guard<std::mutex> lk(mu_);
        spawn_locked();
        handshake_locked();
        ready_ = true;
    }

    bool alive() {
        std::lock_guard<std::mutex> lk(mu_);
        return ready_ && pid_ > 0;
    }

    const std::string& sentinel_secret() const { return cfg_.sentinel_secret; }

    // Evaluates source in the remote process under the session's package.
    // Remote conditions come back as Error outcomes; timeouts kill the child.
    lisp::EvalOutcome evalRemote(const std::string& session_id, const std::string& source) {
        std::lock_guard<std::mutex> lk(mu_); // strict serialization per bridge
        if (!ready_ || pid_ <= 0)
            throw BridgeError(BridgeErrorKind::BridgeDead, "bridge process is not running");

        // Local read-validation: an unbalanced form would desynchronize the
        // remote reader permanently.
        try {
            lisp::read_forms(source);
        } catch (const lisp::ReaderError& e) {
            throw BridgeError(BridgeErrorKind::InvalidSource,
                              std::string("source failed local read validation: ") + e.what());
        }

        std::string request = "(replisp-bridge-eval \"" +
                              lisp_string_escape(package_for(session_id)) + "\" \"" +
                              lisp_string_escape(source) + "\")\n";
        write_all(request);
        return read_frame_locked();
    }

    // Restarts a dead bridge and replays the session journal through it.
    void restartAndRehydrate(const std::string& session_id,
                             const std::vector<JournalEntry>& journal) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            std::int64_t now = clock_();
            restart_times_.erase(
                std::remove_if(restart_times_.begin(), restart_times_.end(),
                               [&](std::int64_t t) { return now - t > 3'600'000; }),
                restart_times_.end());
            if (static_cast<int>(restart_times_.size()) >= cfg_.restart_limit)
                throw BridgeError(BridgeErrorKind::RestartLimitExceeded,
                                  "bridge restart limit reached for this hour");
            restart_times_.push_back(now);
            kill_locked();
            spawn_locked();
            handshake_locked();
            ready_ = true;
        }
        for (const auto& e : journal) {
            auto out = evalRemote(session_id, e.source);
            if (!out.ok)
                throw SessionError(SessionErrorKind::ReplayDivergence,
                                   "bridge replay failed at seq " + std::to_string(e.seq) +
                                       ": " + out.error_text(),
                                   e.seq);
        }
    }

    void shutdown() {
        std::lock_guard<std::mutex> lk(mu_);
        kill_locked();
    }

private:
    std::string package_for(const std::string& session_id) {
        auto it = packages_.find(session_id);
        if (it != packages_.end()) return it->second;
        std::string pkg = "REPLISP-S-" + std::to_string(packages_.size());
        packages_[session_id] = pkg;
        return pkg;
    }

    void spawn_locked() {
        int to_child[2], from_child[2], exec_err[2];
        if (pipe(to_child) || pipe(from_child) || pipe(exec_err))
            throw BridgeError(BridgeErrorKind::SpawnFailure, "pipe() failed");
        fcntl(exec_err[1], F_SETFD, FD_CLOEXEC);

        pid_t pid = fork();
        if (pid < 0) throw BridgeError(BridgeErrorKind::SpawnFailure, "fork() failed");
        if (pid == 0) {
            dup2(to_child[0], 0);
            dup2(from_child[1], 1);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            close(exec_err[0]);
            std::vector<char*> argv;
            for (const auto& a : cfg_.command) argv.push_back(const_cast<char*>(a.c_str()));
            argv.push_back(nullptr);
            execvp(argv[0], argv.data());
            int err = errno; // exec failed: report through the CLOEXEC pipe
            ssize_t ignored = write(exec_err[1], &err, sizeof err);
            (void)ignored;
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        close(exec_err[1]);

        int err = 0;
        if (read(exec_err[0], &err, sizeof err) == sizeof err) {
            close(exec_err[0]);
            close(to_child[1]);
            close(from_child[0]);
            waitpid(pid, nullptr, 0);
            throw BridgeError(BridgeErrorKind::SpawnFailure,
                              "cannot execute '" + cfg_.command[0] +
                                  "': " + std::strerror(err));
        }
        close(exec_err[0]);
        pid_ = pid;
        stdin_fd_ = to_child[1];
        stdout_fd_ = from_child[0];
        buf_.clear();
    }

    void handshake_locked() {
        std::string a = cfg_.sentinel_secret.substr(0, cfg_.sentinel_secret.size() / 2);
        std::string b = cfg_.sentinel_secret.substr(cfg_.sentinel_secret.size() / 2);
        write_all(bridge_bootstrap_source(a, b));
        write_all(bridge_handshake_source(a, b));
        // banner drain: discard everything until a line equal to the secret
        std::int64_t deadline = clock_() + cfg_.eval_timeout_ms;
        std::string line;
        while (read_line(line, deadline)) {
            if (line == cfg_.sentinel_secret) return;
        }
        kill_locked();
        throw BridgeError(BridgeErrorKind::HandshakeTimeout,
                          "remote did not echo the sentinel within " +
                              std::to_string(cfg_.eval_timeout_ms) + " ms");
    }

    lisp::EvalOutcome read_frame_locked() {
        std::int64_t deadline = clock_() + cfg_.eval_timeout_ms;
        std::string frame_line;
        std::string expected = "\x1e" + cfg_.sentinel_secret + " ";
        std::string status;
        for (;;) {
            std::string line;
            if (!read_line(line, deadline)) {
                kill_locked();
                ready_ = false;
                throw BridgeError(BridgeErrorKind::BridgeTimeout,
                                  "no sentinel frame within " +
                                      std::to_string(cfg_.eval_timeout_ms) + " ms");
            }
            // user code may print arbitrary text; only the unguessable frame counts
            auto at = line.find(expected);
            if (at == std::string::npos) continue;
            auto rest = line.substr(at + expected.size());
            auto ends = rest.find('\x1e');
            if (ends == std::string::npos) continue;
            status = rest.substr(0, ends);
            break;
        }
        std::string value = read_section('V', deadline);
        std::string output = read_section('O', deadline);

        lisp::EvalOutcome out;
        if (status == "ok") {
            out.ok = true;
            out.value = value;
            out.output = output;
        } else {
            out.ok = false;
            out.error_kind = lisp::ErrorKind::TypeError;
            out.error_message = value; // remote condition text
            out.output = output;
            // RemoteCondition is carried as an Error outcome, not a bridge failure
            auto colon = value.find(':');
            out.error_form = colon == std::string::npos ? "" : value.substr(0, colon);
        }
        return out;
    }

    std::string read_section(char tag, std::int64_t deadline) {
        std::string header;
        if (!read_line(header, deadline) || header.size() < 2 || header[0] != tag ||
            header[1] != ' ')
            throw protocol_error("expected section '" + std::string(1, tag) + "'");
        std::size_t len = 0;
        try {
            len = static_cast<std::size_t>(std::stoull(header.substr(2)));
        } catch (...) {
            throw protocol_error("bad section length: " + header);
        }
        std::string body = read_exact(len + 1, deadline); // trailing newline separator
        if (body.size() != len + 1 || body.back() != '\n')
            throw protocol_error("truncated section body");
        body.pop_back();
        return body;
    }

    BridgeError protocol_error(const std::string& msg) {
        kill_locked();
        ready_ = false;
        return BridgeError(BridgeErrorKind::ProtocolError, msg);
    }

    void write_all(const std::string& data) {
        std::size_t off = 0;
        while (off < data.size()) {
            ssize_t n = write(stdin_fd_, data.data() + off, data.size() - off);
            if (n <= 0) {
                kill_locked();
                ready_ = false;
                throw BridgeError(BridgeErrorKind::BridgeDead, "write to bridge failed");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    bool fill_buffer(std::int64_t deadline) {
        std::int64_t remaining = deadline - clock_();
        if (remaining <= 0) return false;
        struct pollfd pfd{stdout_fd_, POLLIN, 0};
        int r = poll(&pfd, 1, static_cast<int>(remaining));
        if (r <= 0) return false;
        char chunk[4096];
        ssize_t n = read(stdout_fd_, chunk, sizeof chunk);
        if (n <= 0) return false;
        buf_.append(chunk, static_cast<std::size_t>(n));
        return true;
    }

    bool read_line(std::string& line, std::int64_t deadline) {
        for (;;) {
            auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return true;
            }
            if (!fill_buffer(deadline)) return false;
        }
    }

    std::string read_exact(std::size_t len, std::int64_t deadline) {
        while (buf_.size() < len) {
            if (!fill_buffer(deadline)) break;
        }
        std::string out = buf_.substr(0, std::min(len, buf_.size()));
        buf_.erase(0, out.size());
        return out;
    }

    void kill_locked() {
        if (pid_ > 0) {
            kill(pid_, SIGKILL);
            waitpid(pid_, nullptr, 0);
            pid_ = -1;
        }
        if (stdin_fd_ >= 0) close(stdin_fd_);
        if (stdout_fd_ >= 0) close(stdout_fd_);
        stdin_fd_ = stdout_fd_ = -1;
        ready_ = false;
    }

    BridgeConfig cfg_;
    Clock clock_;
    std::mutex mu_;
    pid_t pid_ = -1;
    int stdin_fd_ = -1;
    int stdout_fd_ = -1;
    std::string buf_;
    bool ready_ = false;
    std::vector<std::int64_t> restart_times_;
    std::unordered_map<std::string, std::string> packages_;
};

} // namespace replisp
