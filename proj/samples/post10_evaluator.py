#!/usr/bin/env python3
"""Post-cycle-10 value function served over the EVAL2048 line protocol.

Shows the shape an LLM-written evaluator program takes: read 16 cell exponents
per line from stdin, print one finite real per line.
"""
import math
import sys


def evaluate(board):
    empty_ratio = sum(1 for row in board for v in row if v == 0) / 16

    highest, highest_row, highest_col = 0, None, None
    for i in range(4):
        for j in range(4):
            if board[i][j] > highest:
                highest, highest_row, highest_col = board[i][j], i, j
    highest_ratio = 0.0 if highest == 0 else min(1.0, math.log2(highest) / 11)

    corner_proximity = 0.0
    if highest_row is not None:
        br_distance = (3 - highest_row) + (3 - highest_col)
        br_proximity = 1.0 - (br_distance / 6)
        other_corners_proximity = max(
            1.0 - (abs(highest_row - r) + abs(highest_col - c)) / 6
            for r, c in [(0, 0), (0, 3), (3, 0)])
        corner_proximity = 0.7 * br_proximity + 0.3 * other_corners_proximity

    merges = 0
    smoothness = 0
    for i in range(4):
        for j in range(4):
            if board[i][j] == 0:
                continue
            for ni, nj in ((i, j + 1), (i + 1, j)):
                if ni > 3 or nj > 3 or board[ni][nj] == 0:
                    continue
                if board[ni][nj] == board[i][j]:
                    merges += 1
                diff = abs(math.log2(board[i][j]) - math.log2(board[ni][nj]))
                smoothness += 1 / (1 + diff)
    merge_ratio = merges / 24
    smoothness_ratio = smoothness / 24

    path = [(3, 3), (3, 2), (3, 1), (3, 0), (2, 0), (2, 1), (2, 2), (2, 3),
            (1, 3), (1, 2), (1, 1), (1, 0), (0, 0), (0, 1), (0, 2), (0, 3)]
    snake_score = 0
    for (r1, c1), (r2, c2) in zip(path, path[1:]):
        a, b = board[r1][c1], board[r2][c2]
        if a > 0 and b > 0 and a >= b:
            snake_score += 1
    snake_ratio = snake_score / 15

    return (0.30 * empty_ratio + 0.20 * highest_ratio + 0.15 * corner_proximity +
            0.10 * merge_ratio + 0.10 * smoothness_ratio + 0.15 * snake_ratio)


def main():
    print("EVAL2048 1", flush=True)
    for line in sys.stdin:
        exps = [int(x) for x in line.split()]
        board = [[0 if e == 0 else 2 ** e for e in exps[r * 4:r * 4 + 4]] for r in range(4)]
        print(repr(evaluate(board)), flush=True)


if __name__ == "__main__":
    main()
