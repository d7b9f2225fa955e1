#pragma once

#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace evo2048 {

inline constexpr int kSide = 4;
inline constexpr int kCells = 16;
// A 4-bit cell tops out at 2^15; two of those never merge.
inline constexpr int kMaxExponent = 15;

enum class MoveDir : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };

inline constexpr std::array<MoveDir, 4> kAllDirs{MoveDir::Up, MoveDir::Down, MoveDir::Left, MoveDir::Right};

constexpr std::string_view to_string(MoveDir d) {
    switch (d) {
        case MoveDir::Up: return "Up";
        case MoveDir::Down: return "Down";
        case MoveDir::Left: return "Left";
        case MoveDir::Right: return "Right";
    }
    return "?";
}

// Accepts "Up"/"up"/"UP"/"U" and friends.
inline std::optional<MoveDir> parse_dir(std::string_view s) {
    std::string lower;
    for (char c : s) {
        lower.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    }
    if (lower == "up" || lower == "u") return MoveDir::Up;
    if (lower == "down" || lower == "d") return MoveDir::Down;
    if (lower == "left" || lower == "l") return MoveDir::Left;
    if (lower == "right" || lower == "r") return MoveDir::Right;
    return std::nullopt;
}

/// 4x4 board packed as 16 nibbles, cell (row, col) at bits [4*(4*row+col), +4).
/// Each nibble is a tile exponent: 0 empty, e >= 1 means tile 2^e.
/// Row 0 is the top, column 0 the left; (3,3) is the bottom-right corner.
struct Board {
    std::uint64_t bits = 0;

    static constexpr int index(int row, int col) { return row * kSide + col; }

    constexpr int at(int i) const { return static_cast<int>((bits >> (4 * i)) & 0xF); }
    constexpr int at(int row, int col) const { return at(index(row, col)); }

    constexpr Board with(int i, int exponent) const {
        const std::uint64_t mask = 0xFULL << (4 * i);
        return Board{(bits & ~mask) | (static_cast<std::uint64_t>(exponent & 0xF) << (4 * i))};
    }

    constexpr std::uint16_t row(int r) const { return static_cast<std::uint16_t>(bits >> (16 * r)); }

    static Board from_cells(const std::array<int, kCells>& cells) {
        Board b;
        for (int i = 0; i < kCells; ++i) {
            if (cells[i] < 0 || cells[i] > kMaxExponent) {
                throw PreconditionError("cell " + std::to_string(i) + " has exponent " + std::to_string(cells[i]) +
                                        " outside [0, " + std::to_string(kMaxExponent) + "]");
            }
            b = b.with(i, cells[i]);
        }
        return b;
    }

    constexpr std::array<int, kCells> cells() const {
        std::array<int, kCells> out{};
        for (int i = 0; i < kCells; ++i) {
            out[i] = at(i);
        }
        return out;
    }

    constexpr int empty_count() const {
        int n = 0;
        for (int i = 0; i < kCells; ++i) {
            n += at(i) == 0;
        }
        return n;
    }

    constexpr int max_exponent() const {
        int m = 0;
        for (int i = 0; i < kCells; ++i) {
            m = at(i) > m ? at(i) : m;
        }
        return m;
    }

    // Tile value of the largest tile, 0 on an empty board.
    constexpr std::uint32_t highest_tile() const {
        const int e = max_exponent();
        return e == 0 ? 0u : (1u << e);
    }

    constexpr std::uint64_t tile_sum() const {
        std::uint64_t s = 0;
        for (int i = 0; i < kCells; ++i) {
            s += at(i) == 0 ? 0 : (std::uint64_t{1} << at(i));
        }
        return s;
    }

    friend constexpr auto operator<=>(const Board&, const Board&) = default;
};

constexpr std::uint32_t tile_value(int exponent) { return exponent == 0 ? 0u : (1u << exponent); }

namespace detail {

constexpr std::uint16_t reverse_row(std::uint16_t r) {
    return static_cast<std::uint16_t>(((r & 0xF) << 12) | ((r & 0xF0) << 4) | ((r & 0xF00) >> 4) | ((r & 0xF000) >> 12));
}

constexpr std::uint64_t transpose(std::uint64_t x) {
    const std::uint64_t a1 = x & 0xF0F00F0FF0F00F0FULL;
    const std::uint64_t a2 = x & 0x0000F0F00000F0F0ULL;
    const std::uint64_t a3 = x & 0x0F0F00000F0F0000ULL;
    const std::uint64_t a = a1 | (a2 << 12) | (a3 >> 12);
    const std::uint64_t b1 = a & 0xFF00FF0000FF00FFULL;
    const std::uint64_t b2 = a & 0x00FF00FF00000000ULL;
    const std::uint64_t b3 = a & 0x00000000FF00FF00ULL;
    return b1 | (b2 >> 24) | (b3 << 24);
}

struct RowTables {
    std::array<std::uint16_t, 65536> left{};
    std::array<std::uint16_t, 65536> right{};
    std::array<std::uint32_t, 65536> score{};  // identical for both directions
};

inline RowTables build_row_tables() {
    RowTables t;
    for (std::uint32_t r = 0; r < 65536; ++r) {
        std::array<int, 4> line{};
        int n = 0;
        for (int c = 0; c < 4; ++c) {
            const int e = static_cast<int>((r >> (4 * c)) & 0xF);
            if (e != 0) {
                line[n++] = e;
            }
        }
        std::array<int, 4> out{};
        std::uint32_t score = 0;
        int w = 0;
        for (int i = 0; i < n; ++i) {
            if (i + 1 < n && line[i] == line[i + 1] && line[i] < kMaxExponent) {
                out[w++] = line[i] + 1;
                score += 1u << (line[i] + 1);
                ++i;
            } else {
                out[w++] = line[i];
            }
        }
        std::uint16_t packed = 0;
        for (int c = 0; c < 4; ++c) {
            packed = static_cast<std::uint16_t>(packed | (out[c] << (4 * c)));
        }
        t.left[r] = packed;
        t.score[r] = score;
    }
    for (std::uint32_t r = 0; r < 65536; ++r) {
        const std::uint16_t rev = reverse_row(static_cast<std::uint16_t>(r));
        t.right[r] = reverse_row(t.left[rev]);
    }
    return t;
}

inline const RowTables& row_tables() {
    static const RowTables tables = build_row_tables();
    return tables;
}

}  // namespace detail

struct SlideResult {
    Board board;
    std::uint32_t score_delta = 0;
    bool moved = false;

    friend bool operator==(const SlideResult&, const SlideResult&) = default;
};

/// Slides every tile toward `dir`, merging equal neighbours at most once per
/// move (pairs nearest the destination edge first). No tile is spawned.
inline SlideResult slide(Board board, MoveDir dir) {
    const auto& t = detail::row_tables();
    const bool vertical = dir == MoveDir::Up || dir == MoveDir::Down;
    const bool toward_low = dir == MoveDir::Up || dir == MoveDir::Left;
    const std::uint64_t src = vertical ? detail::transpose(board.bits) : board.bits;
    const auto& table = toward_low ? t.left : t.right;
    std::uint64_t dst = 0;
    std::uint32_t score = 0;
    for (int r = 0; r < 4; ++r) {
        const auto row = static_cast<std::uint16_t>(src >> (16 * r));
        dst |= static_cast<std::uint64_t>(table[row]) << (16 * r);
        score += t.score[row];
    }
    if (vertical) {
        dst = detail::transpose(dst);
    }
    return {Board{dst}, score, dst != board.bits};
}

/// Set of move directions stored as a 4-bit mask (bit i = MoveDir i).
class MoveSet {
public:
    constexpr MoveSet() = default;
    constexpr explicit MoveSet(std::uint8_t mask) : mask_(mask & 0xF) {}

    constexpr void insert(MoveDir d) { mask_ = static_cast<std::uint8_t>(mask_ | (1u << static_cast<int>(d))); }
    constexpr bool contains(MoveDir d) const { return (mask_ >> static_cast<int>(d)) & 1u; }
    constexpr bool empty() const { return mask_ == 0; }
    constexpr int size() const { return std::popcount(static_cast<unsigned>(mask_)); }
    constexpr std::uint8_t mask() const { return mask_; }

    // k-th member in MoveDir order, k < size().
    constexpr MoveDir nth(int k) const {
        for (MoveDir d : kAllDirs) {
            if (contains(d) && k-- == 0) {
                return d;
            }
        }
        return MoveDir::Up;
    }

    constexpr MoveDir first() const { return nth(0); }

    std::vector<MoveDir> to_vector() const {
        std::vector<MoveDir> out;
        for (MoveDir d : kAllDirs) {
            if (contains(d)) out.push_back(d);
        }
        return out;
    }

    friend constexpr bool operator==(const MoveSet&, const MoveSet&) = default;

private:
    std::uint8_t mask_ = 0;
};

inline MoveSet legal_moves(Board board) {
    MoveSet s;
    for (MoveDir d : kAllDirs) {
        if (slide(board, d).moved) {
            s.insert(d);
        }
    }
    return s;
}

inline bool is_terminal(Board board) { return legal_moves(board).empty(); }

/// The 8 symmetries of the square, k in [0, 8): k&3 quarter turns clockwise,
/// then a horizontal mirror when k >= 4.
inline Board apply_symmetry(Board b, int k) {
    Board out;
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            int rr = r, cc = c;
            for (int t = 0; t < (k & 3); ++t) {
                const int nr = cc, nc = kSide - 1 - rr;
                rr = nr;
                cc = nc;
            }
            if (k >= 4) {
                cc = kSide - 1 - cc;
            }
            out = out.with(Board::index(rr, cc), b.at(r, c));
        }
    }
    return out;
}

// Multi-line grid of tile values, "." for empty cells.
inline std::string to_grid_string(Board b) {
    std::string s;
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            std::string cell = b.at(r, c) == 0 ? "." : std::to_string(tile_value(b.at(r, c)));
            s += std::string(cell.size() < 6 ? 6 - cell.size() : 0, ' ') + cell;
        }
        s += '\n';
    }
    return s;
}

}  // namespace evo2048
