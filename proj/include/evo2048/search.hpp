#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "board.hpp"
#include "errors.hpp"
#include "external_evaluator.hpp"
#include "game.hpp"
#include "heuristics.hpp"
#include "rng.hpp"

namespace evo2048 {

enum class RolloutPolicy { UniformRandom, Greedy1Ply };

constexpr std::string_view to_string(RolloutPolicy p) {
    return p == RolloutPolicy::UniformRandom ? "uniform_random" : "greedy_1ply";
}

inline std::optional<RolloutPolicy> parse_rollout_policy(std::string_view s) {
    if (s == "uniform_random") return RolloutPolicy::UniformRandom;
    if (s == "greedy_1ply") return RolloutPolicy::Greedy1Ply;
    return std::nullopt;
}

// Score gained during a playout is squashed as g / (g + kScoreScale).
inline constexpr double kScoreScale = 1000.0;

struct SearchConfig {
    int playouts_per_move = 50;
    int playout_depth = 10;
    RolloutPolicy rollout_policy = RolloutPolicy::UniformRandom;
    double leaf_mix = 0.5;  // weight of the squashed score gain; 1 - leaf_mix goes to the evaluator
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (playouts_per_move < 1) throw ConfigError("playouts_per_move must be >= 1");
        if (playout_depth < 1) throw ConfigError("playout_depth must be >= 1");
        if (!(leaf_mix >= 0.0 && leaf_mix <= 1.0)) throw ConfigError("leaf_mix must lie in [0, 1]");
    }

    friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

struct MoveEvaluation {
    MoveDir dir = MoveDir::Up;
    double mean_value = 0.0;
    int playouts = 0;
    double mean_score_delta = 0.0;
};

struct SearchResult {
    MoveDir dir = MoveDir::Up;
    std::vector<MoveEvaluation> evaluations;  // one per legal move, MoveDir order
};

namespace detail {

template <class R>
MoveDir rollout_move(const std::array<SlideResult, 4>& slides, MoveSet legal, RolloutPolicy policy, R& rng) {
    if (policy == RolloutPolicy::UniformRandom) {
        return legal.nth(static_cast<int>(rng.below(static_cast<std::uint64_t>(legal.size()))));
    }
    // Greedy: highest immediate merge score, uniform among ties.
    std::uint32_t best = 0;
    MoveSet ties;
    for (MoveDir d : kAllDirs) {
        if (!legal.contains(d)) continue;
        const std::uint32_t s = slides[static_cast<int>(d)].score_delta;
        if (ties.empty() || s > best) {
            best = s;
            ties = MoveSet{};
        }
        if (s == best) ties.insert(d);
    }
    return ties.nth(static_cast<int>(rng.below(static_cast<std::uint64_t>(ties.size()))));
}

}  // namespace detail

/// Uniformly random legal move; the baseline every search result is compared against.
class UniformRandomPolicy {
public:
    explicit UniformRandomPolicy(std::uint64_t seed) : rng_(seed) {}

    MoveDir operator()(Board b) {
        const MoveSet legal = legal_moves(b);
        return legal.nth(static_cast<int>(rng_.below(static_cast<std::uint64_t>(legal.size()))));
    }

private:
    Rng rng_;
};

inline MoveDir first_legal_move(Board b) { return legal_moves(b).first(); }

/// Mean final score of `games` random-policy games; game i uses seed derive_seed(seed, i).
inline double random_policy_mean(int games, std::uint64_t seed) {
    double sum = 0.0;
    for (int i = 0; i < games; ++i) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
        sum += static_cast<double>(play_game(UniformRandomPolicy(derive_seed(s, 1)), s).final_score);
    }
    return sum / games;
}

/// Flat Monte Carlo move selection.
///
/// For each legal root move: apply it, then run `playouts_per_move` playouts,
/// each spawning a tile and rolling out up to `playout_depth` moves with the
/// rollout policy. A playout is worth
///     leaf_mix * g / (g + 1000) + (1 - leaf_mix) * evaluator(final board)
/// where g is the score gained from the root move onward. The move with the
/// highest mean wins; ties go to the earlier MoveDir.
///
/// Each (root move, playout) pair draws from its own substream derived from a
/// single draw of `rng`, so results do not depend on evaluation order.
template <class Evaluator, class R>
SearchResult select_move(Board board, Evaluator&& evaluator, const SearchConfig& cfg, R& rng) {
    const MoveSet legal = legal_moves(board);
    if (legal.empty()) {
        throw PreconditionError("select_move on a terminal board\n" + to_grid_string(board));
    }
    const std::uint64_t base = rng();
    SearchResult result;
    double best_value = 0.0;
    for (MoveDir root : kAllDirs) {
        if (!legal.contains(root)) continue;
        const SlideResult after = slide(board, root);
        double value_sum = 0.0;
        double gain_sum = 0.0;
        for (int p = 0; p < cfg.playouts_per_move; ++p) {
            PlayoutRng prng(derive_seed(base, static_cast<std::uint64_t>(root), static_cast<std::uint64_t>(p)));
            Board b = spawn(after.board, prng).first;
            double gained = after.score_delta;
            for (int depth = 0; depth < cfg.playout_depth; ++depth) {
                std::array<SlideResult, 4> slides;
                MoveSet moves;
                for (MoveDir d : kAllDirs) {
                    slides[static_cast<int>(d)] = slide(b, d);
                    if (slides[static_cast<int>(d)].moved) moves.insert(d);
                }
                if (moves.empty()) break;
                const MoveDir m = detail::rollout_move(slides, moves, cfg.rollout_policy, prng);
                const SlideResult& res = slides[static_cast<int>(m)];
                gained += res.score_delta;
                b = spawn(res.board, prng).first;
            }
            double v = 0.0;
            if (cfg.leaf_mix > 0.0) v += cfg.leaf_mix * (gained / (gained + kScoreScale));
            if (cfg.leaf_mix < 1.0) v += (1.0 - cfg.leaf_mix) * evaluator(b);
            value_sum += v;
            gain_sum += gained;
        }
        MoveEvaluation ev{root, value_sum / cfg.playouts_per_move, cfg.playouts_per_move,
                          gain_sum / cfg.playouts_per_move};
        if (result.evaluations.empty() || ev.mean_value > best_value) {
            best_value = ev.mean_value;
            result.dir = root;
        }
        result.evaluations.push_back(ev);
    }
    return result;
}

/// Plays one game with select_move as the policy. Spawns come from the game's
/// own stream (seed); playouts from a separate stream derived from seed and
/// cfg.rng_seed, so the record replays from the seed alone.
template <class Evaluator>
    requires std::invocable<Evaluator&, Board>
GameRecord play_mcts_game(Evaluator&& evaluator, const SearchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng search_rng(derive_seed(seed, cfg.rng_seed ^ 0x5EA5C4ULL));
    return play_game([&](Board b) { return select_move(b, evaluator, cfg, search_rng).dir; }, seed);
}

/// Spec overload: declarative specs evaluate in process, external specs get a
/// private evaluator session for the length of the game.
inline GameRecord play_mcts_game(const ValueFunctionSpec& spec, const SearchConfig& cfg, std::uint64_t seed) {
    if (spec.external) {
        ExternalEvaluator session(spec.external->handle);
        return play_mcts_game([&](Board b) { return session.evaluate(b); }, cfg, seed);
    }
    validate(spec);
    return play_mcts_game([&](Board b) { return eval_spec(spec, b); }, cfg, seed);
}

}  // namespace evo2048
