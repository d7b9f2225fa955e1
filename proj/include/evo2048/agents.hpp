#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "board.hpp"
#include "errors.hpp"
#include "game.hpp"
#include "heuristics.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace evo2048 {

// ---- Types ----

struct AgentEndpoint {
    std::string provider = "openai";  // "openai" (chat completions) or "anthropic" (messages)
    std::string model;
    std::string base_url;
    std::string credential_env;  // name of the environment variable holding the key; the key itself is never stored
    int timeout_ms = 60000;
    int max_retries = 3;
    int token_budget = 4000;

    void validate() const {
        if (timeout_ms <= 0) throw ConfigError("agent endpoint timeout must be positive");
        if (max_retries < 0) throw ConfigError("agent endpoint max_retries must be >= 0");
        if (token_budget <= 0) throw ConfigError("agent endpoint token_budget must be positive");
    }
};

inline nlohmann::json to_json(const AgentEndpoint& e) {
    return {{"provider", e.provider},     {"model", e.model},           {"base_url", e.base_url},
            {"credential_env", e.credential_env}, {"timeout_ms", e.timeout_ms}, {"max_retries", e.max_retries},
            {"token_budget", e.token_budget}};
}

inline AgentEndpoint endpoint_from_json(const nlohmann::json& j) {
    AgentEndpoint e;
    e.provider = j.value("provider", e.provider);
    e.model = j.value("model", e.model);
    e.base_url = j.value("base_url", e.base_url);
    e.credential_env = j.value("credential_env", e.credential_env);
    e.timeout_ms = j.value("timeout_ms", e.timeout_ms);
    e.max_retries = j.value("max_retries", e.max_retries);
    e.token_budget = j.value("token_budget", e.token_budget);
    e.validate();
    return e;
}

enum class PromptRole { ExecutorMove, ThinkerRefine, ValueFunctionRefine, BaselineMove };

constexpr std::string_view to_string(PromptRole r) {
    switch (r) {
        case PromptRole::ExecutorMove: return "executor_move";
        case PromptRole::ThinkerRefine: return "thinker_refine";
        case PromptRole::ValueFunctionRefine: return "value_function_refine";
        case PromptRole::BaselineMove: return "baseline_move";
    }
    return "?";
}

struct PromptBundle {
    PromptRole role = PromptRole::ExecutorMove;
    std::string text;
    nlohmann::json attachments = nlohmann::json::object();
};

struct StrategyText {
    enum class Author { Seed, Thinker };

    int round_index = 0;
    std::string text;
    Author author = Author::Seed;

    friend bool operator==(const StrategyText&, const StrategyText&) = default;
};

inline constexpr std::size_t kDefaultStrategyCap = 4000;

inline nlohmann::json to_json(const StrategyText& s) {
    return {{"round_index", s.round_index},
            {"text", s.text},
            {"author", s.author == StrategyText::Author::Seed ? "seed" : "thinker"}};
}

inline StrategyText strategy_from_json(const nlohmann::json& j) {
    StrategyText s;
    s.round_index = j.at("round_index").get<int>();
    s.text = j.at("text").get<std::string>();
    s.author = j.value("author", std::string("seed")) == "thinker" ? StrategyText::Author::Thinker
                                                                 : StrategyText::Author::Seed;
    return s;
}

class BudgetError : public Error {
public:
    using Error::Error;
};

// Transport failures. All three are retried by request().
class TransportError : public Error {
public:
    using Error::Error;
};
class NetworkError : public TransportError {
public:
    using TransportError::TransportError;
};
class RateLimitError : public TransportError {
public:
    explicit RateLimitError(const std::string& what, int retry_after_ms = 0)
        : TransportError(what), retry_after_ms_(retry_after_ms) {}
    int retry_after_ms() const noexcept { return retry_after_ms_; }

private:
    int retry_after_ms_;
};
class RequestTimeout : public TransportError {
public:
    using TransportError::TransportError;
};

class AgentError : public Error {
public:
    using Error::Error;
};

// Rough token estimate used for budgeting: four characters per token.
inline std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

// 64-bit FNV-1a over role and text; keys recorded reply fixtures.
inline std::string bundle_hash(const PromptBundle& b) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    feed(to_string(b.role));
    feed("\n");
    feed(b.text);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- Prompt rendering ----

/// 4x4 grid of tile values, six characters per cell, 0 for empty.
inline std::string render_board(Board b) {
    std::string out;
    char cell[16];
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            const int e = b.at(r, c);
            std::snprintf(cell, sizeof cell, "%6llu", e ? static_cast<unsigned long long>(tile_value(e)) : 0ULL);
            out += cell;
        }
        out += '\n';
    }
    return out;
}

/// Inverse of render_board: reads the first four lines of four integers that
/// follow a line starting with "Board".
inline Board parse_board_render(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    bool found = false;
    while (std::getline(in, line)) {
        if (line.rfind("Board", 0) == 0) {
            found = true;
            break;
        }
    }
    if (!found) throw ParseError("no board section in prompt");
    std::array<int, kCells> cells{};
    for (int r = 0; r < kSide; ++r) {
        if (!std::getline(in, line)) throw ParseError("board section is truncated");
        std::istringstream row(line);
        for (int c = 0; c < kSide; ++c) {
            unsigned long long v = 0;
            if (!(row >> v)) throw ParseError("board row " + std::to_string(r) + " is malformed");
            int e = 0;
            if (v != 0) {
                while ((1ULL << e) < v) ++e;
                if ((1ULL << e) != v || e < 1 || e > kMaxExponent) throw ParseError("bad tile value " + std::to_string(v));
            }
            cells[r * kSide + c] = e;
        }
    }
    return Board::from_cells(cells);
}

inline std::string upper(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

/// Move prompt for the executor (with a strategy) or the baseline player (without).
inline PromptBundle build_move_prompt(Board board, const std::optional<StrategyText>& strategy,
                                      std::size_t strategy_cap = kDefaultStrategyCap) {
    if (strategy && strategy->text.size() > strategy_cap) {
        throw BudgetError("strategy is " + std::to_string(strategy->text.size()) + " characters, cap is " +
                          std::to_string(strategy_cap));
    }
    PromptBundle b;
    b.role = strategy ? PromptRole::ExecutorMove : PromptRole::BaselineMove;
    std::string t = "You are playing the sliding-tile game 2048.\n";
    t += "Board (tile values, 0 = empty):\n";
    t += render_board(board);
    t += "Legal moves:";
    for (MoveDir d : legal_moves(board).to_vector()) t += " " + upper(to_string(d));
    t += "\n";
    if (strategy) {
        t += "Strategy to follow:\n";
        t += strategy->text;
        if (!strategy->text.empty() && strategy->text.back() != '\n') t += '\n';
    }
    t += "Explain briefly, then end with one line of the form FINAL: <UP|DOWN|LEFT|RIGHT>.\n";
    b.text = std::move(t);
    b.attachments = {{"board", board_to_json(board)}};
    if (strategy) b.attachments["strategy"] = to_json(*strategy);
    return b;
}

inline std::string move_trace(const GameRecord& rec) {
    std::string s;
    s.reserve(rec.steps.size());
    for (const auto& st : rec.steps) s += upper(to_string(st.dir)).front();
    return s;
}

/// Spec as the fenced "term weight" listing parse_reply reads back.
inline std::string render_spec_listing(const ValueFunctionSpec& spec) {
    if (spec.external) return "```\n" + spec.external->program + (spec.external->program.ends_with('\n') ? "" : "\n") + "```\n";
    std::string out = "```\n";
    char w[64];
    for (const auto& t : spec.terms) {
        std::snprintf(w, sizeof w, "%.17g", t.weight);
        out += std::string(term_name(t.term.kind)) + " " + w + "\n";
    }
    return out + "```\n";
}

using RefineArtifact = std::variant<ValueFunctionSpec, StrategyText>;

/// Refinement prompt: one summary line per game, move traces newest first
/// while they fit the budget (oldest traces dropped first), then the current
/// artifact verbatim. `reasoning` (optional, one entry per game) is appended to
/// each trace for the thinker.
inline PromptBundle build_refine_prompt(const std::vector<GameRecord>& games, const RefineArtifact& current,
                                        std::size_t token_budget, const std::vector<std::string>& reasoning = {}) {
    if (games.empty()) throw PreconditionError("refine prompt needs at least one completed game");
    const bool is_spec = std::holds_alternative<ValueFunctionSpec>(current);
    PromptBundle b;
    b.role = is_spec ? PromptRole::ValueFunctionRefine : PromptRole::ThinkerRefine;

    std::string head = is_spec ? "You are improving a value function for 2048 Monte Carlo search.\n"
                               : "You are improving a written strategy that another player follows in 2048.\n";
    head += "Games played (" + std::to_string(games.size()) + "):\n";
    for (std::size_t i = 0; i < games.size(); ++i) {
        const auto& g = games[i];
        head += "game " + std::to_string(i + 1) + ": score " + std::to_string(g.final_score) + ", highest tile " +
                std::to_string(g.highest_tile) + ", moves " + std::to_string(g.steps.size()) + "\n";
    }

    std::string tail;
    if (is_spec) {
        const auto& spec = std::get<ValueFunctionSpec>(current);
        tail = "Current value function (" + spec.id + "):\n" + render_spec_listing(spec);
        tail += "Reply with a revised function as a fenced block with one \"term weight\" line per term. Terms:";
        for (TermKind k : kAllTerms) tail += " " + std::string(term_name(k));
        tail += "\n";
    } else {
        const auto& s = std::get<StrategyText>(current);
        tail = "Current strategy:\n```\n" + s.text + (s.text.ends_with('\n') ? "" : "\n") + "```\n";
        tail += "Reply with a revised strategy as a single fenced block.\n";
    }

    const std::size_t budget_chars = token_budget * 4;
    const std::string traces_header = "Move traces (U/D/L/R), newest first:\n";
    auto omitted_note = [](std::size_t n) { return "(" + std::to_string(n) + " older traces omitted)\n"; };
    std::vector<std::string> traces(games.size());
    std::size_t used = head.size() + tail.size() + traces_header.size() + omitted_note(games.size()).size();
    std::size_t kept = 0;
    for (std::size_t k = games.size(); k-- > 0;) {
        std::string t = "trace " + std::to_string(k + 1) + ": " + move_trace(games[k]) + "\n";
        if (k < reasoning.size() && !reasoning[k].empty()) t += "reasoning " + std::to_string(k + 1) + ": " + reasoning[k] + "\n";
        if (used + t.size() > budget_chars) break;
        used += t.size();
        traces[k] = std::move(t);
        ++kept;
    }
    std::string body;
    if (kept) {
        body = traces_header;
        for (std::size_t k = games.size(); k-- > 0;) body += traces[k];
    }
    if (kept < games.size()) body += omitted_note(games.size() - kept);

    b.text = head + body + tail;
    b.attachments = {{"games", games.size()}, {"traces_kept", kept}};
    if (is_spec)
        b.attachments["spec"] = to_json(std::get<ValueFunctionSpec>(current));
    else
        b.attachments["strategy"] = to_json(std::get<StrategyText>(current));
    return b;
}

// ---- Reply parsing ----

enum class PayloadKind { Move, Strategy, Spec, Program };

constexpr std::string_view to_string(PayloadKind k) {
    switch (k) {
        case PayloadKind::Move: return "move";
        case PayloadKind::Strategy: return "strategy";
        case PayloadKind::Spec: return "spec";
        case PayloadKind::Program: return "program";
    }
    return "?";
}

struct ProgramListing {
    std::string language;  // fence info string, may be empty
    std::string code;

    friend bool operator==(const ProgramListing&, const ProgramListing&) = default;
};

using Payload = std::variant<std::monostate, MoveDir, StrategyText, ValueFunctionSpec, ProgramListing>;

struct AgentReply {
    std::string raw;
    Payload payload;
    bool parse_ok = false;
    std::string error;  // set when parse_ok is false
};

namespace detail {

struct Fence {
    std::string info;
    std::string body;
};

inline std::vector<Fence> fenced_blocks(std::string_view text) {
    std::vector<Fence> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t open = text.find("```", pos);
        if (open == std::string_view::npos) break;
        const std::size_t eol = text.find('\n', open);
        if (eol == std::string_view::npos) break;
        const std::size_t close = text.find("```", eol + 1);
        if (close == std::string_view::npos) break;
        std::string info(text.substr(open + 3, eol - open - 3));
        while (!info.empty() && std::isspace(static_cast<unsigned char>(info.back()))) info.pop_back();
        out.push_back({info, std::string(text.substr(eol + 1, close - eol - 1))});
        pos = close + 3;
    }
    return out;
}

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// First whole-word, case-insensitive move keyword in `text`.
inline std::optional<MoveDir> first_move_keyword(std::string_view text) {
    const std::string u = upper(text);
    std::optional<MoveDir> best;
    std::size_t best_pos = std::string::npos;
    for (MoveDir d : kAllDirs) {
        const std::string word = upper(to_string(d));
        for (std::size_t p = u.find(word); p != std::string::npos; p = u.find(word, p + 1)) {
            const bool left_ok = p == 0 || !is_word_char(u[p - 1]);
            const bool right_ok = p + word.size() >= u.size() || !is_word_char(u[p + word.size()]);
            if (left_ok && right_ok) {
                if (p < best_pos) {
                    best_pos = p;
                    best = d;
                }
                break;
            }
        }
    }
    return best;
}

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

// "term weight", "term: weight", "term = weight", or "weight * term".
inline std::optional<std::pair<TermKind, double>> parse_weight_line(std::string_view raw) {
    std::string line = trim(raw);
    while (!line.empty() && (line.front() == '-' || line.front() == '*')) line = trim(std::string_view(line).substr(1));
    for (char& c : line)
        if (c == ':' || c == '=' || c == ',' || c == '*') c = ' ';
    std::istringstream in(line);
    std::string a, b, extra;
    if (!(in >> a >> b) || (in >> extra)) return std::nullopt;
    auto number = [](const std::string& s) -> std::optional<double> {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) return std::nullopt;
            return v;
        } catch (...) {
            return std::nullopt;
        }
    };
    if (auto k = parse_term_name(a); k)
        if (auto w = number(b)) return std::pair{*k, *w};
    if (auto k = parse_term_name(b); k)
        if (auto w = number(a)) return std::pair{*k, *w};
    return std::nullopt;
}

inline std::optional<ValueFunctionSpec> spec_from_listing(std::string_view body, std::string& why) {
    ValueFunctionSpec spec;
    spec.id = "parsed";
    bool any = false;
    std::istringstream in{std::string(body)};
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty() || trim(line).front() == '#') continue;
        auto wl = parse_weight_line(line);
        if (!wl) {
            why = "not a term/weight line: '" + trim(line) + "'";
            return std::nullopt;
        }
        if (spec.has_term(wl->first)) {
            why = "duplicate term " + std::string(term_name(wl->first));
            return std::nullopt;
        }
        spec.terms.push_back({HeuristicTerm{wl->first, {}}, wl->second});
        any = true;
    }
    if (!any) {
        why = "empty listing";
        return std::nullopt;
    }
    const double sum = spec.weight_sum();
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        why = "weights do not have a positive finite sum";
        return std::nullopt;
    }
    for (auto& t : spec.terms) t.weight /= sum;
    try {
        validate(spec);
    } catch (const SpecError& e) {
        why = e.what();
        return std::nullopt;
    }
    return spec;
}

}  // namespace detail

/// Extracts a payload of the expected kind. Never throws: failures come back
/// with parse_ok = false and the raw text preserved.
///   move:     the first keyword after the last "FINAL:" marker, else the first keyword anywhere
///   spec:     the first fenced block made only of "term weight" lines, then
///             the whole reply; weights normalized to sum 1
///   program:  the first fenced block, verbatim
///   strategy: the first fenced block, else the whole reply, trimmed
inline AgentReply parse_reply(std::string raw, PayloadKind expected, std::size_t strategy_cap = kDefaultStrategyCap) {
    AgentReply r;
    r.raw = std::move(raw);
    try {
        const std::string_view text = r.raw;
        switch (expected) {
            case PayloadKind::Move: {
                const std::string u = upper(text);
                std::optional<MoveDir> d;
                if (const auto m = u.rfind("FINAL:"); m != std::string::npos) d = detail::first_move_keyword(text.substr(m + 6));
                if (!d) d = detail::first_move_keyword(text);
                if (d) r.payload = *d;
                else r.error = "no move keyword in reply";
                break;
            }
            case PayloadKind::Spec: {
                std::string why = "no term/weight listing in reply";
                for (const auto& f : detail::fenced_blocks(text)) {
                    std::string w;
                    if (auto s = detail::spec_from_listing(f.body, w)) {
                        r.payload = std::move(*s);
                        break;
                    }
                    why = w;
                }
                if (std::holds_alternative<std::monostate>(r.payload)) {
                    std::string w;
                    if (auto s = detail::spec_from_listing(text, w)) r.payload = std::move(*s);
                    else r.error = why;
                }
                break;
            }
            case PayloadKind::Program: {
                auto blocks = detail::fenced_blocks(text);
                if (blocks.empty() || detail::trim(blocks.front().body).empty()) r.error = "no fenced code block in reply";
                else r.payload = ProgramListing{blocks.front().info, blocks.front().body};
                break;
            }
            case PayloadKind::Strategy: {
                auto blocks = detail::fenced_blocks(text);
                std::string body = detail::trim(blocks.empty() ? text : std::string_view(blocks.front().body));
                if (body.empty()) r.error = "empty strategy";
                else if (body.size() > strategy_cap) r.error = "strategy exceeds " + std::to_string(strategy_cap) + " characters";
                else r.payload = StrategyText{0, std::move(body), StrategyText::Author::Thinker};
                break;
            }
        }
    } catch (const std::exception& e) {
        r.payload = std::monostate{};
        r.error = std::string("parser failure: ") + e.what();
    }
    r.parse_ok = !std::holds_alternative<std::monostate>(r.payload);
    return r;
}

// ---- Transports ----

/// Sends one rendered prompt and returns the raw completion text. Throws
/// TransportError subclasses.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string complete(const AgentEndpoint& endpoint, const PromptBundle& bundle) = 0;
};

/// Reply computed by a function of the bundle.
class MockTransport : public Transport {
public:
    explicit MockTransport(std::function<std::string(const PromptBundle&)> fn) : fn_(std::move(fn)) {}
    std::string complete(const AgentEndpoint&, const PromptBundle& bundle) override { return fn_(bundle); }

private:
    std::function<std::string(const PromptBundle&)> fn_;
};

/// Replays a fixed queue of replies or failures, in order. Thread-safe.
class ScriptedTransport : public Transport {
public:
    using Step = std::variant<std::string, std::exception_ptr>;

    explicit ScriptedTransport(std::vector<Step> steps) : steps_(steps.begin(), steps.end()) {}

    std::string complete(const AgentEndpoint&, const PromptBundle& bundle) override {
        std::lock_guard lock(mu_);
        seen_.push_back(bundle);
        if (steps_.empty()) throw NetworkError("scripted transport exhausted");
        Step s = std::move(steps_.front());
        steps_.pop_front();
        if (auto* e = std::get_if<std::exception_ptr>(&s)) std::rethrow_exception(*e);
        return std::get<std::string>(s);
    }

    std::vector<PromptBundle> seen() const {
        std::lock_guard lock(mu_);
        return seen_;
    }

private:
    mutable std::mutex mu_;
    std::deque<Step> steps_;
    std::vector<PromptBundle> seen_;
};

/// Recorded replies keyed by bundle_hash. File: a JSON array of
/// {"bundle_hash": ..., "raw_reply": ...} objects, or one such object.
class FixtureTransport : public Transport {
public:
    explicit FixtureTransport(const nlohmann::json& fixtures) { load(fixtures); }

    static FixtureTransport from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw PersistenceError("cannot open fixture file " + path);
        try {
            return FixtureTransport(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("fixture file ") + path + ": " + e.what());
        }
    }

    std::string complete(const AgentEndpoint&, const PromptBundle& bundle) override {
        const std::string h = bundle_hash(bundle);
        auto it = replies_.find(h);
        if (it == replies_.end()) throw NetworkError("no recorded reply for bundle " + h);
        return it->second;
    }

private:
    void load(const nlohmann::json& j) {
        if (j.is_array()) {
            for (const auto& e : j) load(e);
            return;
        }
        replies_[j.at("bundle_hash").get<std::string>()] = j.at("raw_reply").get<std::string>();
    }

    std::map<std::string, std::string> replies_;
};

struct RetryPolicy {
    int base_backoff_ms = 500;
    std::function<void(int ms)> sleep = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };
};

/// Sends the bundle, retrying transport failures up to endpoint.max_retries
/// times with exponential backoff (rate limits honour retry-after). A reply
/// that does not parse comes back with parse_ok = false; it is not retried here.
inline AgentReply request(const AgentEndpoint& endpoint, Transport& transport, const PromptBundle& bundle,
                          PayloadKind expected, const RetryPolicy& retry = {}) {
    if (estimate_tokens(bundle.text) > static_cast<std::size_t>(endpoint.token_budget)) {
        throw BudgetError("prompt of ~" + std::to_string(estimate_tokens(bundle.text)) + " tokens exceeds budget " +
                          std::to_string(endpoint.token_budget));
    }
    for (int attempt = 0;; ++attempt) {
        try {
            return parse_reply(transport.complete(endpoint, bundle), expected);
        } catch (const RateLimitError& e) {
            if (attempt >= endpoint.max_retries) throw;
            retry.sleep(std::max(e.retry_after_ms(), retry.base_backoff_ms << attempt));
        } catch (const TransportError&) {
            if (attempt >= endpoint.max_retries) throw;
            retry.sleep(retry.base_backoff_ms << attempt);
        }
    }
}

// ---- Agents ----

struct ExecutorDecision {
    MoveDir move = MoveDir::Up;
    std::string reasoning;
};

/// Chooses moves during play. Implementations must be safe to call from
/// several game threads at once.
class Executor {
public:
    virtual ~Executor() = default;
    virtual ExecutorDecision choose(Board board, const std::optional<StrategyText>& strategy, std::uint64_t game_seed) = 0;
};

/// Writes the next strategy from the finished games and the executor's reasoning.
class Thinker {
public:
    virtual ~Thinker() = default;
    virtual StrategyText refine(const StrategyText& current, const std::vector<GameRecord>& games,
                                const std::vector<std::string>& reasoning) = 0;
};

class FirstLegalExecutor : public Executor {
public:
    ExecutorDecision choose(Board b, const std::optional<StrategyText>&, std::uint64_t) override {
        return {legal_moves(b).first(), "first legal move"};
    }
};

/// Seeded uniform choice among legal moves; the board and game seed fix the draw.
class RandomExecutor : public Executor {
public:
    ExecutorDecision choose(Board b, const std::optional<StrategyText>&, std::uint64_t game_seed) override {
        Rng rng(derive_seed(game_seed, b.bits));
        const MoveSet legal = legal_moves(b);
        return {legal.nth(static_cast<int>(rng.below(static_cast<std::uint64_t>(legal.size())))), "random"};
    }
};

/// Follows a "prefer X then Y ..." sentence in the strategy: the first legal
/// move in that order, otherwise a seeded random legal move.
class PreferenceExecutor : public Executor {
public:
    static std::vector<MoveDir> preference_order(std::string_view text) {
        const std::string u = upper(text);
        const auto p = u.find("PREFER");
        std::vector<MoveDir> order;
        if (p == std::string::npos) return order;
        std::string_view rest(text.substr(p + 6));
        const auto stop = rest.find_first_of(".\n");
        if (stop != std::string_view::npos) rest = rest.substr(0, stop);
        while (auto d = detail::first_move_keyword(rest)) {
            order.push_back(*d);
            const std::string ur = upper(rest);
            rest = rest.substr(ur.find(upper(to_string(*d))) + to_string(*d).size());
        }
        return order;
    }

    ExecutorDecision choose(Board b, const std::optional<StrategyText>& strategy, std::uint64_t game_seed) override {
        const MoveSet legal = legal_moves(b);
        if (strategy)
            for (MoveDir d : preference_order(strategy->text))
                if (legal.contains(d)) return {d, "preferred " + std::string(to_string(d))};
        return random_.choose(b, strategy, game_seed);
    }

private:
    RandomExecutor random_;
};

/// Executor backed by a language model. Unparseable or illegal answers are
/// re-asked up to max_retries times, then the first legal move is played and
/// the fallback is noted in the reasoning.
class LlmExecutor : public Executor {
public:
    LlmExecutor(AgentEndpoint endpoint, Transport& transport, RetryPolicy retry = {})
        : endpoint_(std::move(endpoint)), transport_(transport), retry_(std::move(retry)) {}

    ExecutorDecision choose(Board b, const std::optional<StrategyText>& strategy, std::uint64_t) override {
        const PromptBundle bundle = build_move_prompt(b, strategy);
        const MoveSet legal = legal_moves(b);
        std::string last;
        for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
            AgentReply r = request(endpoint_, transport_, bundle, PayloadKind::Move, retry_);
            last = r.raw;
            if (r.parse_ok && legal.contains(std::get<MoveDir>(r.payload))) return {std::get<MoveDir>(r.payload), r.raw};
        }
        return {legal.first(), "[fallback: no legal move in reply] " + last};
    }

private:
    AgentEndpoint endpoint_;
    Transport& transport_;
    RetryPolicy retry_;
};

class EchoThinker : public Thinker {
public:
    StrategyText refine(const StrategyText& current, const std::vector<GameRecord>&, const std::vector<std::string>&) override {
        StrategyText next = current;
        next.round_index = current.round_index + 1;
        return next;
    }
};

/// Returns scripted strategy texts in order, then echoes.
class ScriptedThinker : public Thinker {
public:
    explicit ScriptedThinker(std::vector<std::string> texts) : texts_(texts.begin(), texts.end()) {}

    StrategyText refine(const StrategyText& current, const std::vector<GameRecord>&, const std::vector<std::string>&) override {
        StrategyText next = current;
        next.round_index = current.round_index + 1;
        std::lock_guard lock(mu_);
        if (!texts_.empty()) {
            next.text = texts_.front();
            next.author = StrategyText::Author::Thinker;
            texts_.pop_front();
        }
        return next;
    }

private:
    std::mutex mu_;
    std::deque<std::string> texts_;
};

/// Thinker backed by a language model. Keeps the current strategy when no
/// usable reply arrives within max_retries re-asks.
class LlmThinker : public Thinker {
public:
    LlmThinker(AgentEndpoint endpoint, Transport& transport, RetryPolicy retry = {})
        : endpoint_(std::move(endpoint)), transport_(transport), retry_(std::move(retry)) {}

    StrategyText refine(const StrategyText& current, const std::vector<GameRecord>& games,
                        const std::vector<std::string>& reasoning) override {
        const PromptBundle bundle =
            build_refine_prompt(games, current, static_cast<std::size_t>(endpoint_.token_budget), reasoning);
        for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
            AgentReply r = request(endpoint_, transport_, bundle, PayloadKind::Strategy, retry_);
            if (r.parse_ok) {
                StrategyText next = std::get<StrategyText>(r.payload);
                next.round_index = current.round_index + 1;
                return next;
            }
        }
        StrategyText next = current;
        next.round_index = current.round_index + 1;
        return next;
    }

private:
    AgentEndpoint endpoint_;
    Transport& transport_;
    RetryPolicy retry_;
};

}  // namespace evo2048
