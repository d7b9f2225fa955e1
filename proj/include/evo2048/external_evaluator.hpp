#pragma once

// Out-of-process value functions.
//
// Protocol (line-delimited, over the child's stdin/stdout):
//   child  -> "EVAL2048 <version>\n"             once, at startup
//   parent -> "<e0> <e1> ... <e15>\n"            16 cell exponents, row-major
//   child  -> "<finite decimal real>\n"          the board's value
// The child is started with /bin/sh -c <command>. A child that misses a
// deadline, answers garbage, or answers a non-finite value is killed and the
// session is marked broken; callers quarantine the value function.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>
#include <system_error>

#include "board.hpp"
#include "errors.hpp"
#include "heuristics.hpp"

extern char** environ;

namespace evo2048 {

inline constexpr std::string_view kEvaluatorBanner = "EVAL2048";

class EvaluatorError : public Error {
public:
    enum class Kind { Spawn, Handshake, Timeout, Malformed, NonFinite, Exited };

    EvaluatorError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class EvaluatorTimeout : public EvaluatorError {
public:
    explicit EvaluatorTimeout(const std::string& what) : EvaluatorError(Kind::Timeout, what) {}
};

class EvaluatorMalformed : public EvaluatorError {
public:
    explicit EvaluatorMalformed(const std::string& what) : EvaluatorError(Kind::Malformed, what) {}
};

class EvaluatorNonFinite : public EvaluatorError {
public:
    explicit EvaluatorNonFinite(const std::string& what) : EvaluatorError(Kind::NonFinite, what) {}
};

inline std::string encode_board_request(Board b) {
    std::string line;
    for (int i = 0; i < kCells; ++i) {
        if (i) line += ' ';
        line += std::to_string(b.at(i));
    }
    line += '\n';
    return line;
}

// Inverse of encode_board_request; throws ParseError.
inline Board decode_board_request(std::string_view line) {
    std::array<int, kCells> cells{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int i = 0; i < kCells; ++i) {
        while (p < end && *p == ' ') ++p;
        auto [next, ec] = std::from_chars(p, end, cells[i]);
        if (ec != std::errc{} || cells[i] < 0 || cells[i] > kMaxExponent) {
            throw ParseError("bad cell " + std::to_string(i) + " in evaluator request");
        }
        p = next;
    }
    while (p < end && (*p == ' ' || *p == '\r' || *p == '\n')) ++p;
    if (p != end) throw ParseError("trailing data in evaluator request");
    return Board::from_cells(cells);
}

/// One evaluator child process. Requests are serialized; share across games
/// only under external locking, or give each game its own session.
class ExternalEvaluator {
public:
    explicit ExternalEvaluator(ExternalEvaluatorHandle handle) : handle_(std::move(handle)) {
        if (handle_.timeout_ms <= 0) {
            throw EvaluatorError(EvaluatorError::Kind::Spawn, "evaluator timeout must be positive");
        }
        start();
        const std::string banner = read_line(deadline_from_now());
        const std::string expected = std::string(kEvaluatorBanner) + " " + std::to_string(handle_.protocol_version);
        if (banner != expected) {
            shutdown();
            throw EvaluatorError(EvaluatorError::Kind::Handshake,
                                 "evaluator handshake: expected '" + expected + "', got '" + banner + "'");
        }
    }

    ExternalEvaluator(const ExternalEvaluator&) = delete;
    ExternalEvaluator& operator=(const ExternalEvaluator&) = delete;

    ~ExternalEvaluator() { shutdown(); }

    const ExternalEvaluatorHandle& handle() const { return handle_; }
    bool broken() const { return broken_; }

    double evaluate(Board board) {
        if (broken_) {
            throw EvaluatorError(EvaluatorError::Kind::Exited, "evaluator session is broken: " + handle_.command);
        }
        const auto deadline = deadline_from_now();
        write_all(encode_board_request(board), deadline);
        const std::string line = read_line(deadline);
        double value = 0.0;
        const char* b = line.data();
        const char* e = line.data() + line.size();
        while (b < e && *b == ' ') ++b;
        while (e > b && (e[-1] == ' ' || e[-1] == '\r')) --e;
        auto [ptr, ec] = std::from_chars(b, e, value);
        if (b == e || ec != std::errc{} || ptr != e) {
            fail();
            throw EvaluatorMalformed("evaluator answered '" + line + "'");
        }
        if (!std::isfinite(value)) {
            fail();
            throw EvaluatorNonFinite("evaluator answered a non-finite value '" + line + "'");
        }
        return value;
    }

    double operator()(Board board) { return evaluate(board); }

private:
    using Clock = std::chrono::steady_clock;

    Clock::time_point deadline_from_now() const { return Clock::now() + std::chrono::milliseconds(handle_.timeout_ms); }

    void start() {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
            throw EvaluatorError(EvaluatorError::Kind::Spawn, std::string("socketpair: ") + std::strerror(errno));
        }
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
        // Own process group, so a kill reaches the shell's children too.
        posix_spawnattr_t attr;
        posix_spawnattr_init(&attr);
        posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
        posix_spawnattr_setpgroup(&attr, 0);
        std::string sh = "/bin/sh", flag = "-c", cmd = handle_.command;
        char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
        const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, &attr, argv, environ);
        posix_spawn_file_actions_destroy(&actions);
        posix_spawnattr_destroy(&attr);
        ::close(sv[1]);
        if (rc != 0) {
            ::close(sv[0]);
            pid_ = -1;
            throw EvaluatorError(EvaluatorError::Kind::Spawn, std::string("posix_spawn: ") + std::strerror(rc));
        }
        fd_ = sv[0];
    }

    int remaining_ms(Clock::time_point deadline) const {
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
        return ms < 0 ? 0 : static_cast<int>(ms);
    }

    void write_all(const std::string& data, Clock::time_point deadline) {
        std::size_t off = 0;
        while (off < data.size()) {
            pollfd p{fd_, POLLOUT, 0};
            const int n = ::poll(&p, 1, remaining_ms(deadline));
            if (n == 0) {
                fail();
                throw EvaluatorTimeout("evaluator did not accept a request within " + std::to_string(handle_.timeout_ms) + " ms");
            }
            if (n < 0) {
                if (errno == EINTR) continue;
                fail();
                throw EvaluatorError(EvaluatorError::Kind::Exited, std::string("poll: ") + std::strerror(errno));
            }
            const ssize_t w = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
            if (w < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                fail();
                throw EvaluatorError(EvaluatorError::Kind::Exited, "evaluator closed its input");
            }
            off += static_cast<std::size_t>(w);
        }
    }

    std::string read_line(Clock::time_point deadline) {
        while (true) {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            if (buffer_.size() > 4096) {
                fail();
                throw EvaluatorMalformed("evaluator response line exceeds 4096 bytes");
            }
            pollfd p{fd_, POLLIN, 0};
            const int n = ::poll(&p, 1, remaining_ms(deadline));
            if (n == 0) {
                fail();
                throw EvaluatorTimeout("evaluator did not answer within " + std::to_string(handle_.timeout_ms) + " ms");
            }
            if (n < 0) {
                if (errno == EINTR) continue;
                fail();
                throw EvaluatorError(EvaluatorError::Kind::Exited, std::string("poll: ") + std::strerror(errno));
            }
            char chunk[512];
            const ssize_t r = ::recv(fd_, chunk, sizeof chunk, 0);
            if (r == 0) {
                fail();
                throw EvaluatorError(EvaluatorError::Kind::Exited, "evaluator exited: " + handle_.command);
            }
            if (r < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                fail();
                throw EvaluatorError(EvaluatorError::Kind::Exited, std::string("recv: ") + std::strerror(errno));
            }
            buffer_.append(chunk, static_cast<std::size_t>(r));
        }
    }

    void fail() {
        broken_ = true;
        shutdown();
    }

    void shutdown() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
        if (pid_ > 0) {
            // A well-behaved child exits on EOF; anything left in the group is killed.
            int status = 0;
            bool exited = false;
            for (int i = 0; i < 20 && !exited; ++i) {
                exited = ::waitpid(pid_, &status, WNOHANG) == pid_;
                if (!exited) ::usleep(1000);
            }
            ::kill(-pid_, SIGKILL);
            if (exited) {
                pid_ = -1;
                return;
            }
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }

    ExternalEvaluatorHandle handle_;
    pid_t pid_ = -1;
    int fd_ = -1;
    std::string buffer_;
    bool broken_ = false;
};

/// One-shot evaluation: starts the evaluator, scores one board, stops it.
inline double eval_external(const ExternalEvaluatorHandle& handle, Board board) {
    ExternalEvaluator session(handle);
    return session.evaluate(board);
}

}  // namespace evo2048
