#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agents.hpp"
#include "evolution.hpp"

namespace evo2048 {

inline constexpr const char* kSeedStrategy =
    "Keep the largest tile in a corner. Build a chain of decreasing tiles along the edge next to it. "
    "Avoid moves that pull the largest tile out of its corner.";

struct MetapromptConfig {
    int rounds = 25;
    int games_per_round = 20;
    std::uint64_t master_seed = 0;
    int max_moves_per_game = 0;  // 0 = play to the end
    std::size_t strategy_cap = kDefaultStrategyCap;
    std::string seed_strategy = kSeedStrategy;

    void validate() const {
        if (rounds < 1) throw ConfigError("rounds must be >= 1");
        if (games_per_round < 1) throw ConfigError("games_per_round must be >= 1");
        if (max_moves_per_game < 0) throw ConfigError("max_moves_per_game must be >= 0");
        if (strategy_cap == 0) throw ConfigError("strategy_cap must be positive");
        if (seed_strategy.empty() || seed_strategy.size() > strategy_cap)
            throw ConfigError("seed strategy must be non-empty and within the cap");
    }
};

inline nlohmann::json to_json(const MetapromptConfig& c) {
    return {{"mode", "metaprompt"},
            {"rounds", c.rounds},
            {"games_per_round", c.games_per_round},
            {"master_seed", c.master_seed},
            {"max_moves_per_game", c.max_moves_per_game},
            {"strategy_cap", c.strategy_cap},
            {"seed_strategy", c.seed_strategy}};
}

inline MetapromptConfig metaprompt_config_from_json(const nlohmann::json& j) {
    MetapromptConfig c;
    c.rounds = j.value("rounds", c.rounds);
    c.games_per_round = j.value("games_per_round", c.games_per_round);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.max_moves_per_game = j.value("max_moves_per_game", c.max_moves_per_game);
    c.strategy_cap = j.value("strategy_cap", c.strategy_cap);
    c.seed_strategy = j.value("seed_strategy", c.seed_strategy);
    return c;
}

struct RoundOutcome {
    CycleReport report;
    StrategyText next;
    std::vector<GameRecord> records;
    std::vector<std::vector<std::string>> reasoning;  // per game, per move
};

namespace detail {

// Compact per-game reasoning for the thinker: the last few decisions.
inline std::string reasoning_digest(const std::vector<std::string>& moves, std::size_t keep = 8, std::size_t cap = 600) {
    std::string out;
    const std::size_t from = moves.size() > keep ? moves.size() - keep : 0;
    for (std::size_t i = from; i < moves.size(); ++i) {
        if (!out.empty()) out += " | ";
        out += moves[i];
    }
    if (out.size() > cap) out = out.substr(out.size() - cap);
    std::replace(out.begin(), out.end(), '\n', ' ');
    return out;
}

}  // namespace detail

/// Plays one round of games with the executor following `strategy`, then asks
/// the thinker for the next strategy. On an agent failure the finished and
/// partial games are persisted before the error propagates.
inline RoundOutcome run_metaprompt_round(const StrategyText& strategy, const MetapromptConfig& cfg, Executor& executor,
                                         Thinker& thinker, const fs::path& run_dir = {}, int threads = 0) {
    if (strategy.text.empty() || strategy.text.size() > cfg.strategy_cap)
        throw PreconditionError("strategy text must be non-empty and within the cap");
    const int round = strategy.round_index;
    const int n = cfg.games_per_round;
    std::vector<GameRecord> records(static_cast<std::size_t>(n));
    std::vector<std::vector<std::string>> reasoning(static_cast<std::size_t>(n));
    std::vector<std::string> paths(static_cast<std::size_t>(n));
    const std::optional<StrategyText> s = strategy;

    auto persist = [&](int g) {
        if (run_dir.empty()) return;
        const auto gi = static_cast<std::size_t>(g);
        write_file_atomic(run_dir / layout::game(round, g), to_jsonl(records[gi]));
        write_json(run_dir / layout::reasoning(round, g), reasoning[gi]);
        paths[gi] = layout::game(round, g).generic_string();
    };

    detail::parallel_for(n, threads, [&](int g) {
        const auto gi = static_cast<std::size_t>(g);
        const std::uint64_t seed = game_seed(cfg.master_seed, round, g);
        Game game(seed);
        try {
            while (!game.over() && (cfg.max_moves_per_game == 0 ||
                                    static_cast<int>(game.record().steps.size()) < cfg.max_moves_per_game)) {
                ExecutorDecision d = executor.choose(game.board(), s, seed);
                if (!legal_moves(game.board()).contains(d.move))
                    throw AgentError("executor chose illegal move " + std::string(to_string(d.move)));
                game.step(d.move);
                reasoning[gi].push_back(std::move(d.reasoning));
            }
        } catch (...) {
            records[gi] = game.record();
            persist(g);
            throw;
        }
        records[gi] = game.record();
        persist(g);
    });

    RoundOutcome out;
    out.report = summarize_cycle(round, "strategy-" + zero_pad(round, 3), records, run_dir.empty() ? std::vector<std::string>{} : paths);
    std::vector<std::string> digests;
    digests.reserve(reasoning.size());
    for (const auto& r : reasoning) digests.push_back(detail::reasoning_digest(r));
    out.next = thinker.refine(strategy, records, digests);
    out.next.round_index = round + 1;
    if (out.next.text.empty()) out.next.text = strategy.text;
    if (out.next.text.size() > cfg.strategy_cap) out.next.text.resize(cfg.strategy_cap);
    out.records = std::move(records);
    out.reasoning = std::move(reasoning);
    return out;
}

struct MetapromptResult {
    std::vector<CycleReport> reports;
    std::vector<StrategyText> strategies;  // strategies[k] was played in round k + 1; the last is the final output
};

/// Runs cfg.rounds rounds, persisting config.json, strategies/, cycles/,
/// games/ and reasoning/ under run_dir. Rounds are numbered from 1.
inline MetapromptResult run_metaprompt(const MetapromptConfig& cfg, Executor& executor, Thinker& thinker,
                                       const fs::path& run_dir, int threads = 0,
                                       const std::function<void(const CycleReport&)>& on_round = {}) {
    cfg.validate();
    RunLock lock(run_dir);
    write_json(run_dir / layout::config(), to_json(cfg));
    MetapromptResult res;
    StrategyText current{1, cfg.seed_strategy, StrategyText::Author::Seed};
    write_json(run_dir / layout::strategy(1), to_json(current));
    res.strategies.push_back(current);
    for (int r = 1; r <= cfg.rounds; ++r) {
        RoundOutcome o = run_metaprompt_round(current, cfg, executor, thinker, run_dir, threads);
        write_json(run_dir / layout::cycle(r), to_json(o.report));
        write_json(run_dir / layout::strategy(r + 1), to_json(o.next));
        res.reports.push_back(o.report);
        res.strategies.push_back(o.next);
        if (on_round) on_round(o.report);
        current = std::move(o.next);
    }
    return res;
}

}  // namespace evo2048
