#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>

#include "errors.hpp"
#include "json.hpp"

namespace evo2048 {

namespace fs = std::filesystem;

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw PersistenceError("cannot create " + path.parent_path().string() + ": " + ec.message());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PersistenceError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw PersistenceError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw PersistenceError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PersistenceError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw PersistenceError("corrupt JSON in " + path.string() + ": " + e.what());
    }
}

/// Exclusive advisory lock on <dir>/run.lock for the life of the object. The
/// kernel drops it if the process dies, so a crashed run never leaves a stale lock.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw PersistenceError("cannot create run directory " + dir.string() + ": " + ec.message());
        const fs::path p = dir / "run.lock";
        fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw PersistenceError("cannot open " + p.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw PersistenceError("run directory " + dir.string() + " is in use by another process");
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() {
        if (fd_ >= 0) ::close(fd_);
    }

private:
    int fd_ = -1;
};

inline std::string zero_pad(long long n, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*lld", width, n);
    return buf;
}

// Layout helpers, relative to the run directory.
namespace layout {
inline fs::path config() { return "config.json"; }
inline fs::path checkpoint() { return "checkpoint.json"; }
inline fs::path lineage() { return "lineage.json"; }
inline fs::path spec(const std::string& id) { return fs::path("specs") / (id + ".json"); }
inline fs::path cycle(int n) { return fs::path("cycles") / (zero_pad(n, 3) + ".json"); }
inline fs::path game(int cycle, int game) { return fs::path("games") / zero_pad(cycle, 3) / (zero_pad(game, 3) + ".jsonl"); }
inline fs::path strategy(int round) { return fs::path("strategies") / (zero_pad(round, 3) + ".json"); }
inline fs::path reasoning(int round, int game) {
    return fs::path("reasoning") / zero_pad(round, 3) / (zero_pad(game, 3) + ".json");
}
}  // namespace layout

}  // namespace evo2048
