#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "agents.hpp"
#include "errors.hpp"
#include "external_evaluator.hpp"
#include "game.hpp"
#include "heuristics.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "rng.hpp"
#include "run_dir.hpp"
#include "search.hpp"

namespace evo2048 {

enum class MutatorMode { Deterministic, ExternalLlm };

constexpr std::string_view to_string(MutatorMode m) {
    return m == MutatorMode::Deterministic ? "deterministic" : "external_llm";
}

inline std::optional<MutatorMode> parse_mutator(std::string_view s) {
    if (s == "deterministic") return MutatorMode::Deterministic;
    if (s == "external_llm") return MutatorMode::ExternalLlm;
    return std::nullopt;
}

struct MutationParams {
    double sigma = 0.05;        // Gaussian noise, as a fraction of the weight mass
    double toggle_prob = 0.2;   // chance of adding or removing one vocabulary term
    double added_weight = 0.05; // starting weight of an added term, fraction of the mass

    friend bool operator==(const MutationParams&, const MutationParams&) = default;
};

struct EvolutionConfig {
    int cycles = 30;
    int games_per_cycle = 10;
    int segment_length = 5;
    MutatorMode mutator = MutatorMode::Deterministic;
    double selection_floor = 0.01;
    std::uint64_t master_seed = 0;
    MutationParams mutation;
    SearchConfig search;
    std::optional<ValueFunctionSpec> seed_spec;  // defaults to the canonical pre10

    void validate() const {
        if (cycles < 1) throw ConfigError("cycles must be >= 1");
        if (games_per_cycle < 1) throw ConfigError("games_per_cycle must be >= 1");
        if (segment_length < 1) throw ConfigError("segment_length must be >= 1");
        if (!(selection_floor >= 0.0) || !std::isfinite(selection_floor)) throw ConfigError("selection_floor must be >= 0");
        if (!(mutation.sigma >= 0.0)) throw ConfigError("mutation sigma must be >= 0");
        if (!(mutation.toggle_prob >= 0.0 && mutation.toggle_prob <= 1.0)) throw ConfigError("toggle_prob must lie in [0, 1]");
        if (!(mutation.added_weight > 0.0)) throw ConfigError("added_weight must be positive");
        search.validate();
        if (seed_spec) {
            try {
                evo2048::validate(*seed_spec);
            } catch (const SpecError& e) {
                throw ConfigError(std::string("seed spec: ") + e.what());
            }
        }
    }
};

inline nlohmann::json to_json(const SearchConfig& s) {
    return {{"playouts_per_move", s.playouts_per_move},
            {"playout_depth", s.playout_depth},
            {"rollout_policy", std::string(to_string(s.rollout_policy))},
            {"leaf_mix", s.leaf_mix},
            {"rng_seed", s.rng_seed}};
}

inline SearchConfig search_config_from_json(const nlohmann::json& j) {
    SearchConfig s;
    s.playouts_per_move = j.value("playouts_per_move", s.playouts_per_move);
    s.playout_depth = j.value("playout_depth", s.playout_depth);
    if (j.contains("rollout_policy")) {
        auto p = parse_rollout_policy(j["rollout_policy"].get<std::string>());
        if (!p) throw ConfigError("unknown rollout_policy " + j["rollout_policy"].dump());
        s.rollout_policy = *p;
    }
    s.leaf_mix = j.value("leaf_mix", s.leaf_mix);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    return s;
}

inline nlohmann::json to_json(const EvolutionConfig& c) {
    nlohmann::json j{{"cycles", c.cycles},
                     {"games_per_cycle", c.games_per_cycle},
                     {"segment_length", c.segment_length},
                     {"mutator", std::string(to_string(c.mutator))},
                     {"selection_floor", c.selection_floor},
                     {"master_seed", c.master_seed},
                     {"mutation",
                      {{"sigma", c.mutation.sigma},
                       {"toggle_prob", c.mutation.toggle_prob},
                       {"added_weight", c.mutation.added_weight}}},
                     {"search", to_json(c.search)}};
    j["seed_spec"] = c.seed_spec ? to_json(*c.seed_spec) : nlohmann::json(nullptr);
    return j;
}

/// Reads an evolution config; missing keys keep their defaults.
inline EvolutionConfig evolution_config_from_json(const nlohmann::json& j) {
    EvolutionConfig c;
    try {
        c.cycles = j.value("cycles", c.cycles);
        c.games_per_cycle = j.value("games_per_cycle", c.games_per_cycle);
        c.segment_length = j.value("segment_length", c.segment_length);
        if (j.contains("mutator")) {
            auto m = parse_mutator(j["mutator"].get<std::string>());
            if (!m) throw ConfigError("unknown mutator " + j["mutator"].dump());
            c.mutator = *m;
        }
        c.selection_floor = j.value("selection_floor", c.selection_floor);
        c.master_seed = j.value("master_seed", c.master_seed);
        if (j.contains("mutation")) {
            const auto& m = j["mutation"];
            c.mutation.sigma = m.value("sigma", c.mutation.sigma);
            c.mutation.toggle_prob = m.value("toggle_prob", c.mutation.toggle_prob);
            c.mutation.added_weight = m.value("added_weight", c.mutation.added_weight);
        }
        if (j.contains("search")) c.search = search_config_from_json(j["search"]);
        if (j.contains("seed_spec") && !j["seed_spec"].is_null()) c.seed_spec = spec_from_json(j["seed_spec"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed evolution config: ") + e.what());
    } catch (const SpecError& e) {
        throw ConfigError(std::string("seed spec: ") + e.what());
    }
    return c;
}

// ---- Cycles ----

struct CycleReport {
    int cycle_index = 0;
    std::string spec_id;
    std::vector<std::string> game_records;  // paths relative to the run directory
    std::vector<double> scores;
    double mean_score = 0.0;
    double ci95_half_width = 0.0;
    std::map<std::uint32_t, int> highest_tile_histogram;
    bool failed = false;
    std::string failure;

    friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

inline nlohmann::json to_json(const CycleReport& r) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [tile, n] : r.highest_tile_histogram) hist[std::to_string(tile)] = n;
    return {{"cycle_index", r.cycle_index},
            {"spec_id", r.spec_id},
            {"game_records", r.game_records},
            {"scores", r.scores},
            {"mean_score", r.mean_score},
            {"ci95_half_width", r.ci95_half_width},
            {"highest_tile_histogram", hist},
            {"failed", r.failed},
            {"failure", r.failure}};
}

inline CycleReport cycle_report_from_json(const nlohmann::json& j) {
    try {
        CycleReport r;
        r.cycle_index = j.at("cycle_index").get<int>();
        r.spec_id = j.at("spec_id").get<std::string>();
        r.game_records = j.at("game_records").get<std::vector<std::string>>();
        r.scores = j.at("scores").get<std::vector<double>>();
        r.mean_score = j.at("mean_score").get<double>();
        r.ci95_half_width = j.at("ci95_half_width").get<double>();
        for (const auto& [k, v] : j.at("highest_tile_histogram").items())
            r.highest_tile_histogram[static_cast<std::uint32_t>(std::stoul(k))] = v.get<int>();
        r.failed = j.value("failed", false);
        r.failure = j.value("failure", std::string());
        return r;
    } catch (const std::exception& e) {
        throw PersistenceError(std::string("malformed cycle report: ") + e.what());
    }
}

struct CycleOutcome {
    CycleReport report;
    std::vector<GameRecord> records;  // completed games, in game order
};

namespace detail {

inline int resolve_threads(int requested, int jobs) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    return std::clamp(n, 1, std::max(1, jobs));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
/// (lowest index) is rethrown after all workers finish.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    const int t = resolve_threads(threads, n);
    if (t == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < t; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline std::uint64_t game_seed(std::uint64_t master_seed, int cycle, int game) {
    return derive_seed(master_seed, static_cast<std::uint64_t>(cycle), static_cast<std::uint64_t>(game));
}

/// Aggregates finished games into a report; the order of `records` is game order.
inline CycleReport summarize_cycle(int cycle_index, const std::string& spec_id, const std::vector<GameRecord>& records,
                                   std::vector<std::string> paths = {}) {
    CycleReport r;
    r.cycle_index = cycle_index;
    r.spec_id = spec_id;
    r.game_records = std::move(paths);
    for (const auto& g : records) {
        r.scores.push_back(static_cast<double>(g.final_score));
        ++r.highest_tile_histogram[g.highest_tile];
    }
    const auto st = cycle_stats(r.scores);
    r.mean_score = st.mean;
    r.ci95_half_width = st.ci95_half_width;
    return r;
}

/// Plays games_per_cycle MCTS games with `spec`, in parallel. Game g of cycle
/// c uses seed game_seed(master_seed, c, g), so every spec in a run meets the
/// same deal sequence for a given cycle. Games are written to `run_dir` when it
/// is non-empty. An external evaluator failure marks the cycle failed: every
/// score is recorded as 0 and the failure message is kept.
inline CycleOutcome run_cycle(const ValueFunctionSpec& spec, const EvolutionConfig& cfg, int cycle_index,
                              const fs::path& run_dir = {}, int threads = 0) {
    validate(spec);
    const int n = cfg.games_per_cycle;
    std::vector<std::optional<GameRecord>> games(static_cast<std::size_t>(n));
    std::vector<std::string> errors(static_cast<std::size_t>(n));
    detail::parallel_for(n, threads, [&](int g) {
        try {
            GameRecord rec = play_mcts_game(spec, cfg.search, game_seed(cfg.master_seed, cycle_index, g));
            if (!run_dir.empty()) write_file_atomic(run_dir / layout::game(cycle_index, g), to_jsonl(rec));
            games[static_cast<std::size_t>(g)] = std::move(rec);
        } catch (const EvaluatorError& e) {
            errors[static_cast<std::size_t>(g)] = e.what();
        }
    });

    CycleOutcome out;
    std::vector<std::string> paths;
    for (int g = 0; g < n; ++g) {
        if (!games[static_cast<std::size_t>(g)]) continue;
        out.records.push_back(*games[static_cast<std::size_t>(g)]);
        paths.push_back(layout::game(cycle_index, g).generic_string());
    }
    const auto first_error = std::find_if(errors.begin(), errors.end(), [](const std::string& s) { return !s.empty(); });
    if (first_error == errors.end()) {
        out.report = summarize_cycle(cycle_index, spec.id, out.records, std::move(paths));
        return out;
    }
    CycleReport& r = out.report;
    r.cycle_index = cycle_index;
    r.spec_id = spec.id;
    r.game_records = std::move(paths);
    r.scores.assign(static_cast<std::size_t>(n), 0.0);
    for (const auto& g : out.records) ++r.highest_tile_histogram[g.highest_tile];
    r.failed = true;
    r.failure = "game " + std::to_string(first_error - errors.begin()) + ": " + *first_error;
    return out;
}

// ---- Mutation ----

/// Offline stand-in for the LLM refiner. Perturbs each weight by N(0, sigma *
/// mass), clamps at 0, then with probability toggle_prob flips one vocabulary
/// term in or out (an added term starts at added_weight * mass), and
/// renormalizes to sum 1. Term parameters are kept. External specs are copied
/// unchanged. The child has lineage = parent id, origin mutated, and no id.
template <class R>
ValueFunctionSpec mutate_deterministic(const ValueFunctionSpec& parent, const MutationParams& p, R& rng) {
    ValueFunctionSpec child = parent;
    child.id.clear();
    child.lineage = parent.id;
    child.origin = SpecOrigin::Mutated;
    if (parent.external) return child;

    const double mass = parent.weight_sum();
    for (auto& t : child.terms) {
        const double noise = rng.normal();
        t.weight = std::max(0.0, t.weight + p.sigma * mass * noise);
    }
    const double u = rng.unit();
    if (u < p.toggle_prob) {
        const TermKind k = kAllTerms[static_cast<std::size_t>(rng.below(kAllTerms.size()))];
        auto it = std::find_if(child.terms.begin(), child.terms.end(), [k](const WeightedTerm& t) { return t.term.kind == k; });
        if (it == child.terms.end()) {
            child.terms.push_back({HeuristicTerm{k, {}}, p.added_weight * mass});
        } else if (child.terms.size() > 1) {
            child.terms.erase(it);
        }
    }
    double sum = child.weight_sum();
    if (!(sum > 0.0)) {
        // Everything clamped to zero: keep the parent's proportions.
        for (auto& t : child.terms) t.weight = std::max(parent.weight_of(t.term.kind), 0.0);
        sum = child.weight_sum();
        if (!(sum > 0.0)) {
            for (auto& t : child.terms) t.weight = 1.0;
            sum = static_cast<double>(child.terms.size());
        }
    }
    for (auto& t : child.terms) t.weight /= sum;
    return child;
}

/// LLM-backed refinement. Each attempt sends the refinement prompt and accepts
/// either a term/weight listing or a program for the external evaluator.
struct LlmMutator {
    AgentEndpoint endpoint;
    Transport* transport = nullptr;
    RetryPolicy retry;
    int attempts = 3;
};

namespace detail {

inline std::optional<std::string> interpreter_for(const std::string& language) {
    if (language.empty() || language == "python" || language == "py" || language == "python3") return "python3";
    if (language == "sh" || language == "bash" || language == "shell") return "/bin/sh";
    return std::nullopt;
}

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

}  // namespace detail

/// Returns the revised spec, or nullopt after `attempts` unusable replies (the
/// caller falls back to deterministic mutation). Program listings are written
/// to program_dir/<child_id>.<ext> and run only through the external evaluator.
inline std::optional<ValueFunctionSpec> llm_mutate(const LlmMutator& m, const ValueFunctionSpec& parent,
                                                   const std::vector<GameRecord>& history, const std::string& child_id,
                                                   const fs::path& program_dir, const std::function<void(const std::string&)>& log) {
    if (!m.transport) throw ConfigError("external_llm mutator has no transport");
    if (history.empty()) return std::nullopt;
    const PromptBundle bundle = build_refine_prompt(history, parent, static_cast<std::size_t>(m.endpoint.token_budget));
    for (int attempt = 1; attempt <= m.attempts; ++attempt) {
        AgentReply reply;
        try {
            reply = request(m.endpoint, *m.transport, bundle, PayloadKind::Spec, m.retry);
        } catch (const TransportError& e) {
            if (log) log("refinement attempt " + std::to_string(attempt) + " failed: " + e.what());
            continue;
        }
        if (reply.parse_ok) {
            ValueFunctionSpec child = std::get<ValueFunctionSpec>(reply.payload);
            child.id.clear();
            child.lineage = parent.id;
            child.origin = SpecOrigin::Mutated;
            return child;
        }
        AgentReply prog = parse_reply(reply.raw, PayloadKind::Program);
        if (prog.parse_ok) {
            const auto& listing = std::get<ProgramListing>(prog.payload);
            if (auto interp = detail::interpreter_for(listing.language)) {
                const fs::path file = fs::absolute(program_dir / (child_id + (*interp == "python3" ? ".py" : ".sh")));
                write_file_atomic(file, listing.code);
                ValueFunctionSpec child;
                child.lineage = parent.id;
                child.origin = SpecOrigin::Mutated;
                child.external = ExternalProgram{{*interp + " " + detail::shell_quote(file.string()), 1, 2000}, listing.code};
                return child;
            }
        }
        if (log) log("refinement attempt " + std::to_string(attempt) + " unusable: " + reply.error);
    }
    return std::nullopt;
}

// ---- Rollback ----

struct SegmentCandidate {
    std::string spec_id;
    double mean_score = 0.0;
    bool failed = false;

    friend bool operator==(const SegmentCandidate&, const SegmentCandidate&) = default;
};

struct SegmentState {
    int segment_index = 0;
    std::vector<ValueFunctionSpec> candidates;
    std::vector<SegmentCandidate> scores;  // parallel to candidates
    ValueFunctionSpec base_spec;
};

struct RollbackChoice {
    int index = -1;  // -1 when the base was reused
    ValueFunctionSpec spec;
};

/// Picks candidate i with probability (m_i + eps * max_m) / sum_j (m_j + eps * max_m),
/// where failed candidates count as m = 0. If every candidate failed the base is
/// reused; if the weights are all zero otherwise the draw is uniform. The
/// returned spec is a copy with origin rolled_back, lineage set to the chosen
/// spec and id "rollback-<segment>".
template <class R>
RollbackChoice rollback_select(const SegmentState& seg, double eps, R& rng) {
    if (seg.candidates.empty() || seg.candidates.size() != seg.scores.size())
        throw PreconditionError("rollback_select needs at least one scored candidate");
    const std::size_t n = seg.candidates.size();
    std::vector<double> m(n);
    double max_m = 0.0;
    bool all_failed = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = seg.scores[i];
        m[i] = c.failed || !std::isfinite(c.mean_score) ? 0.0 : std::max(0.0, c.mean_score);
        max_m = std::max(max_m, m[i]);
        all_failed = all_failed && c.failed;
    }
    RollbackChoice choice;
    const ValueFunctionSpec* chosen = &seg.base_spec;
    if (!all_failed) {
        std::vector<double> w(n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += (w[i] = m[i] + eps * max_m);
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double u = rng.unit() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += w[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(rng.below(n));
        }
        choice.index = static_cast<int>(pick);
        chosen = &seg.candidates[pick];
    }
    choice.spec = *chosen;
    choice.spec.lineage = chosen->id;
    choice.spec.origin = SpecOrigin::RolledBack;
    choice.spec.id = "rollback-" + zero_pad(seg.segment_index + 1, 2);
    return choice;
}

// ---- Evolution loop ----

struct LineageNode {
    std::string id;
    std::optional<std::string> parent;
    SpecOrigin origin = SpecOrigin::Seed;
    int created_cycle = 0;

    friend bool operator==(const LineageNode&, const LineageNode&) = default;
};

struct RollbackEvent {
    int segment_index = 0;
    int after_cycle = 0;
    std::vector<SegmentCandidate> candidates;
    std::string chosen;  // a candidate id, or the base id when it was reused
    std::string rolled_back_spec;

    friend bool operator==(const RollbackEvent&, const RollbackEvent&) = default;
};

struct Lineage {
    std::vector<LineageNode> nodes;
    std::vector<RollbackEvent> rollbacks;

    friend bool operator==(const Lineage&, const Lineage&) = default;
};

inline nlohmann::json to_json(const Lineage& l) {
    nlohmann::json nodes = nlohmann::json::array(), rbs = nlohmann::json::array();
    for (const auto& n : l.nodes)
        nodes.push_back({{"id", n.id},
                         {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                         {"origin", std::string(to_string(n.origin))},
                         {"created_cycle", n.created_cycle}});
    for (const auto& r : l.rollbacks) {
        nlohmann::json c = nlohmann::json::array();
        for (const auto& x : r.candidates) c.push_back({{"id", x.spec_id}, {"mean_score", x.mean_score}, {"failed", x.failed}});
        rbs.push_back({{"segment_index", r.segment_index},
                       {"after_cycle", r.after_cycle},
                       {"candidates", c},
                       {"chosen", r.chosen},
                       {"rolled_back_spec", r.rolled_back_spec}});
    }
    return {{"nodes", nodes}, {"rollbacks", rbs}};
}

inline Lineage lineage_from_json(const nlohmann::json& j) {
    try {
        Lineage l;
        for (const auto& n : j.at("nodes")) {
            LineageNode node;
            node.id = n.at("id").get<std::string>();
            if (!n.at("parent").is_null()) node.parent = n["parent"].get<std::string>();
            node.origin = parse_origin(n.at("origin").get<std::string>()).value();
            node.created_cycle = n.at("created_cycle").get<int>();
            l.nodes.push_back(std::move(node));
        }
        for (const auto& r : j.at("rollbacks")) {
            RollbackEvent ev;
            ev.segment_index = r.at("segment_index").get<int>();
            ev.after_cycle = r.at("after_cycle").get<int>();
            for (const auto& c : r.at("candidates"))
                ev.candidates.push_back({c.at("id").get<std::string>(), c.at("mean_score").get<double>(), c.at("failed").get<bool>()});
            ev.chosen = r.at("chosen").get<std::string>();
            ev.rolled_back_spec = r.at("rolled_back_spec").get<std::string>();
            l.rollbacks.push_back(std::move(ev));
        }
        return l;
    } catch (const std::exception& e) {
        throw PersistenceError(std::string("malformed lineage: ") + e.what());
    }
}

/// Throws PersistenceError unless every node's parent is an earlier node and
/// ids are unique (which makes the graph a forest rooted at seed specs).
inline void check_lineage(const Lineage& l) {
    std::set<std::string> seen;
    for (const auto& n : l.nodes) {
        if (!seen.insert(n.id).second) throw PersistenceError("duplicate lineage node " + n.id);
        if (n.origin == SpecOrigin::Seed) {
            if (n.parent) throw PersistenceError("seed spec " + n.id + " has a parent");
        } else if (!n.parent || !seen.contains(*n.parent)) {
            throw PersistenceError("spec " + n.id + " has no persisted ancestor");
        }
    }
}

struct EvolutionResult {
    std::vector<CycleReport> reports;
    ValueFunctionSpec final_spec;
    Lineage lineage;
    bool complete = false;  // false when stopped early by the cycle hook
};

struct RunOptions {
    int threads = 0;
    // Called after each cycle is persisted; returning false stops the run (resumable).
    std::function<bool(const CycleReport&)> on_cycle;
    std::function<void(const std::string&)> log;
    const LlmMutator* llm = nullptr;  // required when mutator is external_llm
};

namespace detail {

inline constexpr std::uint64_t kMutateTag = 0x4D555441ULL;
inline constexpr std::uint64_t kRollbackTag = 0x524F4C4CULL;

struct Checkpoint {
    int completed_cycles = 0;
    std::string current_spec;
    int segment_index = 0;
    std::string segment_base;
    std::vector<SegmentCandidate> candidates;
    std::vector<std::string> quarantined;
    std::string final_spec;

    nlohmann::json json() const {
        nlohmann::json c = nlohmann::json::array();
        for (const auto& x : candidates) c.push_back({{"id", x.spec_id}, {"mean_score", x.mean_score}, {"failed", x.failed}});
        return {{"completed_cycles", completed_cycles},
                {"current_spec", current_spec},
                {"segment", {{"index", segment_index}, {"base", segment_base}, {"candidates", c}}},
                {"quarantined", quarantined},
                {"final_spec", final_spec}};
    }

    static Checkpoint from(const nlohmann::json& j) {
        try {
            Checkpoint c;
            c.completed_cycles = j.at("completed_cycles").get<int>();
            c.current_spec = j.at("current_spec").get<std::string>();
            c.segment_index = j.at("segment").at("index").get<int>();
            c.segment_base = j.at("segment").at("base").get<std::string>();
            for (const auto& x : j.at("segment").at("candidates"))
                c.candidates.push_back({x.at("id").get<std::string>(), x.at("mean_score").get<double>(), x.at("failed").get<bool>()});
            c.quarantined = j.at("quarantined").get<std::vector<std::string>>();
            c.final_spec = j.value("final_spec", std::string());
            return c;
        } catch (const std::exception& e) {
            throw PersistenceError(std::string("malformed checkpoint: ") + e.what());
        }
    }
};

}  // namespace detail

inline ValueFunctionSpec load_spec(const fs::path& run_dir, const std::string& id) {
    try {
        return spec_from_json(read_json(run_dir / layout::spec(id)));
    } catch (const SpecError& e) {
        throw PersistenceError("spec " + id + ": " + e.what());
    }
}

/// Cycle reports present in run_dir, in cycle order, stopping at the first gap.
inline std::vector<CycleReport> load_cycle_reports(const fs::path& run_dir) {
    std::vector<CycleReport> out;
    for (int k = 1; fs::exists(run_dir / layout::cycle(k)); ++k) out.push_back(cycle_report_from_json(read_json(run_dir / layout::cycle(k))));
    return out;
}

/// Refinement loop: play the current spec for one cycle, then either close the
/// segment with a rollback (every segment_length cycles) or continue the chain.
/// The next cycle's spec is a mutation of the rolled-back spec or of the spec
/// just played. State is persisted after every cycle; calling again on the
/// same directory with the same config resumes where it stopped.
inline EvolutionResult run_evolution(const EvolutionConfig& cfg, const fs::path& run_dir, const RunOptions& opt = {}) {
    cfg.validate();
    if (cfg.mutator == MutatorMode::ExternalLlm && !opt.llm) throw ConfigError("external_llm mutator needs an agent endpoint or --mock");
    RunLock lock(run_dir);
    auto log = [&](const std::string& s) {
        if (opt.log) opt.log(s);
    };

    const nlohmann::json cfg_json = to_json(cfg);
    Lineage lineage;
    detail::Checkpoint cp;
    std::map<std::string, ValueFunctionSpec> specs;

    auto persist_spec = [&](const ValueFunctionSpec& s) {
        write_json(run_dir / layout::spec(s.id), to_json(s));
        specs[s.id] = s;
        lineage.nodes.push_back({s.id, s.lineage, s.origin, s.created_cycle});
    };
    auto spec = [&](const std::string& id) -> const ValueFunctionSpec& {
        auto it = specs.find(id);
        if (it == specs.end()) it = specs.emplace(id, load_spec(run_dir, id)).first;
        return it->second;
    };

    if (fs::exists(run_dir / layout::checkpoint())) {
        if (read_json(run_dir / layout::config()) != cfg_json)
            throw ConfigError("run directory " + run_dir.string() + " was created with a different configuration");
        cp = detail::Checkpoint::from(read_json(run_dir / layout::checkpoint()));
        lineage = lineage_from_json(read_json(run_dir / layout::lineage()));
        log("resuming after cycle " + std::to_string(cp.completed_cycles));
    } else {
        if (fs::exists(run_dir / layout::config()) || fs::exists(run_dir / "cycles"))
            throw PersistenceError("run directory " + run_dir.string() + " holds a run without a checkpoint");
        write_json(run_dir / layout::config(), cfg_json);
        ValueFunctionSpec seed = cfg.seed_spec ? *cfg.seed_spec : canonical_specs().pre10;
        seed.origin = SpecOrigin::Seed;
        seed.lineage.reset();
        seed.created_cycle = 1;
        persist_spec(seed);
        cp.current_spec = seed.id;
        cp.segment_base = seed.id;
        write_json(run_dir / layout::lineage(), to_json(lineage));
        write_json(run_dir / layout::checkpoint(), cp.json());
    }

    auto quarantined = [&](const ValueFunctionSpec& s) {
        auto q = [&](const std::string& id) { return std::find(cp.quarantined.begin(), cp.quarantined.end(), id) != cp.quarantined.end(); };
        return q(s.id) || (s.origin == SpecOrigin::RolledBack && s.lineage && q(*s.lineage));
    };

    EvolutionResult result;
    result.reports = load_cycle_reports(run_dir);
    result.reports.resize(static_cast<std::size_t>(cp.completed_cycles));

    for (int k = cp.completed_cycles + 1; k <= cfg.cycles; ++k) {
        const ValueFunctionSpec current = spec(cp.current_spec);
        CycleOutcome outcome = run_cycle(current, cfg, k, run_dir, opt.threads);
        write_json(run_dir / layout::cycle(k), to_json(outcome.report));
        if (outcome.report.failed) {
            cp.quarantined.push_back(current.id);
            log("cycle " + std::to_string(k) + " failed, spec " + current.id + " quarantined: " + outcome.report.failure);
        }
        cp.candidates.push_back({current.id, outcome.report.mean_score, outcome.report.failed});
        result.reports.push_back(outcome.report);

        ValueFunctionSpec parent = current;
        const bool close_segment = static_cast<int>(cp.candidates.size()) == cfg.segment_length;
        if (close_segment) {
            SegmentState seg;
            seg.segment_index = cp.segment_index;
            seg.base_spec = spec(cp.segment_base);
            seg.scores = cp.candidates;
            for (const auto& c : cp.candidates) seg.candidates.push_back(spec(c.spec_id));
            Rng rng(derive_seed(cfg.master_seed, detail::kRollbackTag, static_cast<std::uint64_t>(cp.segment_index)));
            RollbackChoice choice = rollback_select(seg, cfg.selection_floor, rng);
            choice.spec.created_cycle = k;
            persist_spec(choice.spec);
            lineage.rollbacks.push_back({cp.segment_index, k, cp.candidates, *choice.spec.lineage, choice.spec.id});
            log("rollback after cycle " + std::to_string(k) + ": kept " + *choice.spec.lineage);
            parent = choice.spec;
            cp.segment_index += 1;
            cp.segment_base = choice.spec.id;
            cp.candidates.clear();
        }

        if (quarantined(parent)) {
            // Refine from the newest healthy spec of the segment, else its base, else the canonical seed.
            std::optional<ValueFunctionSpec> healthy;
            for (auto it = cp.candidates.rbegin(); it != cp.candidates.rend() && !healthy; ++it)
                if (!it->failed) healthy = spec(it->spec_id);
            if (!healthy && !quarantined(spec(cp.segment_base))) healthy = spec(cp.segment_base);
            if (!healthy) {
                ValueFunctionSpec fallback = canonical_specs().pre10;
                if (!specs.contains(fallback.id) && !fs::exists(run_dir / layout::spec(fallback.id))) {
                    fallback.created_cycle = k;
                    persist_spec(fallback);
                }
                healthy = spec(fallback.id);
            }
            parent = *healthy;
        }

        if (k < cfg.cycles) {
            const std::string child_id = "cycle-" + zero_pad(k + 1, 3);
            std::optional<ValueFunctionSpec> child;
            if (cfg.mutator == MutatorMode::ExternalLlm) {
                // The refiner sees the games of the spec it refines (for a rolled-back spec, the games of its source).
                const std::string source = parent.origin == SpecOrigin::RolledBack && parent.lineage ? *parent.lineage : parent.id;
                std::vector<GameRecord> history;
                if (source == current.id) {
                    history = outcome.records;
                } else {
                    for (const auto& r : result.reports)
                        if (r.spec_id == source)
                            for (const auto& path : r.game_records) {
                                auto recs = read_game_records((run_dir / path).string());
                                history.insert(history.end(), recs.begin(), recs.end());
                            }
                }
                child = llm_mutate(*opt.llm, parent, history, child_id, run_dir / "programs", log);
                if (!child) log("cycle " + std::to_string(k) + ": no usable refinement, falling back to deterministic mutation");
            }
            if (!child) {
                Rng rng(derive_seed(cfg.master_seed, detail::kMutateTag, static_cast<std::uint64_t>(k)));
                child = mutate_deterministic(parent, cfg.mutation, rng);
            }
            child->id = child_id;
            child->created_cycle = k + 1;
            persist_spec(*child);
            cp.current_spec = child->id;
        } else {
            cp.final_spec = parent.id;
            cp.current_spec = parent.id;
        }
        cp.completed_cycles = k;
        write_json(run_dir / layout::lineage(), to_json(lineage));
        write_json(run_dir / layout::checkpoint(), cp.json());
        if (opt.on_cycle && !opt.on_cycle(outcome.report)) {
            result.lineage = lineage;
            result.final_spec = spec(cp.current_spec);
            return result;
        }
    }
    result.lineage = lineage;
    result.final_spec = spec(cp.final_spec.empty() ? cp.current_spec : cp.final_spec);
    result.complete = true;
    return result;
}

}  // namespace evo2048
