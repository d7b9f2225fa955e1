#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "board.hpp"
#include "errors.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace evo2048 {

struct SpawnEvent {
    int cell_index = 0;
    int exponent = 1;  // 1 -> tile 2, 2 -> tile 4

    friend bool operator==(const SpawnEvent&, const SpawnEvent&) = default;
};

/// Places a 2 (p = 0.9) or a 4 (p = 0.1) on a uniformly chosen empty cell.
/// Draw order: cell first, then tile.
template <class R>
std::pair<Board, SpawnEvent> spawn(Board board, R& rng) {
    const int empties = board.empty_count();
    if (empties == 0) {
        throw PreconditionError("spawn on a full board");
    }
    auto k = static_cast<int>(rng.below(static_cast<std::uint64_t>(empties)));
    int cell = 0;
    for (; cell < kCells; ++cell) {
        if (board.at(cell) == 0 && k-- == 0) {
            break;
        }
    }
    const int exponent = rng.below(10) == 0 ? 2 : 1;
    return {board.with(cell, exponent), SpawnEvent{cell, exponent}};
}

struct GameStep {
    MoveDir dir = MoveDir::Up;
    SpawnEvent spawn;
    std::uint32_t score_delta = 0;

    friend bool operator==(const GameStep&, const GameStep&) = default;
};

struct GameRecord {
    std::uint64_t seed = 0;
    Board initial_board;
    std::vector<GameStep> steps;
    std::uint64_t final_score = 0;
    std::uint32_t highest_tile = 0;
    bool terminal = false;
    Board final_board;

    friend bool operator==(const GameRecord&, const GameRecord&) = default;
};

/// One game in progress. Owns its spawn RNG; the record is valid (replayable)
/// after every step, so an aborted game can still be persisted.
class Game {
public:
    explicit Game(std::uint64_t seed) : rng_(seed) {
        record_.seed = seed;
        Board b;
        b = spawn(b, rng_).first;
        b = spawn(b, rng_).first;
        record_.initial_board = b;
        board_ = b;
        sync();
    }

    Board board() const { return board_; }
    bool over() const { return is_terminal(board_); }
    const GameRecord& record() const { return record_; }

    // Applies a move and the following spawn. Throws PreconditionError on an illegal move.
    const GameStep& step(MoveDir dir) {
        const SlideResult res = slide(board_, dir);
        if (!res.moved) {
            throw PreconditionError("illegal move " + std::string(to_string(dir)) + " on board\n" +
                                    to_grid_string(board_));
        }
        auto [next, ev] = spawn(res.board, rng_);
        board_ = next;
        record_.steps.push_back(GameStep{dir, ev, res.score_delta});
        record_.final_score += res.score_delta;
        sync();
        return record_.steps.back();
    }

private:
    void sync() {
        record_.final_board = board_;
        record_.highest_tile = board_.highest_tile();
        record_.terminal = is_terminal(board_);
    }

    Rng rng_;
    Board board_;
    GameRecord record_;
};

/// Plays from two initial spawns until no move is legal. `policy(board)` must
/// return a legal MoveDir for any non-terminal board.
template <class Policy>
GameRecord play_game(Policy&& policy, std::uint64_t seed) {
    Game game(seed);
    while (!game.over()) {
        game.step(policy(game.board()));
    }
    return game.record();
}

/// Re-simulates seed + moves. Throws PreconditionError if a move is illegal.
inline GameRecord replay_moves(std::uint64_t seed, const std::vector<MoveDir>& moves) {
    Game game(seed);
    for (MoveDir d : moves) {
        game.step(d);
    }
    return game.record();
}

/// Replays `rec` from its seed and moves and throws DivergenceError naming the
/// first field or step that differs.
inline void verify_record(const GameRecord& rec) {
    Game game(rec.seed);
    if (game.board() != rec.initial_board) {
        throw DivergenceError("initial board differs from seed " + std::to_string(rec.seed));
    }
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
        const GameStep& want = rec.steps[i];
        if (slide(game.board(), want.dir).moved == false) {
            throw DivergenceError("step " + std::to_string(i) + ": move " + std::string(to_string(want.dir)) +
                                  " is illegal on the replayed board");
        }
        const GameStep& got = game.step(want.dir);
        if (got.spawn != want.spawn) {
            throw DivergenceError("step " + std::to_string(i) + ": spawn differs (stored cell " +
                                  std::to_string(want.spawn.cell_index) + " exp " + std::to_string(want.spawn.exponent) +
                                  ", replayed cell " + std::to_string(got.spawn.cell_index) + " exp " +
                                  std::to_string(got.spawn.exponent) + ")");
        }
        if (got.score_delta != want.score_delta) {
            throw DivergenceError("step " + std::to_string(i) + ": score_delta stored " +
                                  std::to_string(want.score_delta) + ", replayed " + std::to_string(got.score_delta));
        }
    }
    const GameRecord& r = game.record();
    if (r.final_score != rec.final_score) {
        throw DivergenceError("final_score stored " + std::to_string(rec.final_score) + ", replayed " +
                              std::to_string(r.final_score));
    }
    if (r.highest_tile != rec.highest_tile) {
        throw DivergenceError("highest_tile stored " + std::to_string(rec.highest_tile) + ", replayed " +
                              std::to_string(r.highest_tile));
    }
    if (r.final_board != rec.final_board) {
        throw DivergenceError("final board differs");
    }
    if (r.terminal != rec.terminal) {
        throw DivergenceError("terminal flag differs");
    }
}

// ---- JSONL serialization ----

inline nlohmann::json board_to_json(Board b) {
    auto cells = b.cells();
    return nlohmann::json(std::vector<int>(cells.begin(), cells.end()));
}

inline Board board_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != kCells) {
        throw ParseError("board must be an array of 16 exponents");
    }
    std::array<int, kCells> cells{};
    for (int i = 0; i < kCells; ++i) {
        if (!j[i].is_number_integer()) {
            throw ParseError("board cell " + std::to_string(i) + " is not an integer");
        }
        cells[i] = j[i].get<int>();
        if (cells[i] < 0 || cells[i] > kMaxExponent) {
            throw ParseError("board cell " + std::to_string(i) + " out of range");
        }
    }
    return Board::from_cells(cells);
}

inline nlohmann::json to_json(const GameRecord& rec) {
    nlohmann::json steps = nlohmann::json::array();
    for (const GameStep& s : rec.steps) {
        steps.push_back({{"dir", std::string(to_string(s.dir))},
                         {"spawn_cell", s.spawn.cell_index},
                         {"spawn_exp", s.spawn.exponent},
                         {"score_delta", s.score_delta}});
    }
    return {{"seed", rec.seed},
            {"initial_board", board_to_json(rec.initial_board)},
            {"steps", std::move(steps)},
            {"final_score", rec.final_score},
            {"highest_tile", rec.highest_tile},
            {"terminal", rec.terminal},
            {"final_board", board_to_json(rec.final_board)}};
}

inline GameRecord game_record_from_json(const nlohmann::json& j) {
    try {
        GameRecord rec;
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.initial_board = board_from_json(j.at("initial_board"));
        for (const auto& s : j.at("steps")) {
            GameStep step;
            auto dir = parse_dir(s.at("dir").get<std::string>());
            if (!dir) {
                throw ParseError("unknown move direction " + s.at("dir").dump());
            }
            step.dir = *dir;
            step.spawn.cell_index = s.at("spawn_cell").get<int>();
            step.spawn.exponent = s.at("spawn_exp").get<int>();
            if (step.spawn.cell_index < 0 || step.spawn.cell_index >= kCells ||
                (step.spawn.exponent != 1 && step.spawn.exponent != 2)) {
                throw ParseError("spawn event out of range");
            }
            step.score_delta = s.at("score_delta").get<std::uint32_t>();
            rec.steps.push_back(step);
        }
        rec.final_score = j.at("final_score").get<std::uint64_t>();
        rec.highest_tile = j.at("highest_tile").get<std::uint32_t>();
        rec.terminal = j.value("terminal", false);
        rec.final_board = j.contains("final_board") ? board_from_json(j.at("final_board")) : Board{};
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed game record: ") + e.what());
    }
}

inline std::string to_jsonl(const GameRecord& rec) { return to_json(rec).dump() + "\n"; }

/// Parses every non-blank line of a JSONL stream; errors name the 1-based line.
inline std::vector<GameRecord> read_game_records(std::istream& in) {
    std::vector<GameRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(game_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return out;
}

inline std::vector<GameRecord> read_game_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw PersistenceError("cannot open " + path);
    }
    return read_game_records(in);
}

}  // namespace evo2048
