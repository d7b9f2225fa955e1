// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "evo2048/cli.hpp"
#include "evo2048/external_evaluator.hpp"
#include "support/curated_boards.hpp"
#include "support/reference_tables.hpp"
#include "support/reference.hpp"
#include "support/tempdir.hpp"

using namespace evo2048;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += "failed: " + what;
        }
    }
    void note(const std::string& s) {
        if (!detail.empty()) detail += "; ";
        detail += s;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double term(TermKind k, Board b) { return eval_term(HeuristicTerm{k, {}}, b); }

std::string num(double v, const char* f = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome engine_correctness() {
    Outcome o;
    std::mt19937_64 eng(20240601);
    long mismatches = 0;
    const auto t0 = Clock::now();
    for (int i = 0; i < 100000; ++i) {
        const Board b = (i % 2) ? reference::random_board(eng) : reference::random_mergey_board(eng);
        for (MoveDir d : kAllDirs) {
            const auto fast = slide(b, d);
            const auto slow = reference::naive_slide(reference::to_grid(b), d);
            mismatches += fast.board != reference::from_grid(slow.grid) || static_cast<long>(fast.score_delta) != slow.score ||
                          fast.moved != slow.moved;
        }
    }
    const double secs = seconds_since(t0);
    o.check(mismatches == 0, std::to_string(mismatches) + " mismatches");
    o.check(secs < 10.0, "runtime " + num(secs) + " s");
    o.note("400000 slides, " + std::to_string(mismatches) + " mismatches, " + num(secs, "%.2f") + " s (incl. naive reference)");
    return o;
}

Outcome spawn_law() {
    Outcome o;
    Rng rng(777);
    const int n = 50000;
    int fours = 0;
    for (int i = 0; i < n; ++i) {
        const Board b = Board{}.with(i % 16, 3);
        fours += spawn(b, rng).second.exponent == 2;
    }
    const double frac = static_cast<double>(fours) / n;
    const double sigma = std::sqrt(0.1 * 0.9 / n);
    o.check(std::abs(frac - 0.1) <= 3 * sigma, "4-tile fraction outside 3 sigma");
    o.note("4-tile fraction " + num(frac, "%.5f") + ", |dev| = " + num(std::abs(frac - 0.1) / sigma, "%.2f") + " sigma");
    return o;
}

Outcome heuristic_fidelity() {
    Outcome o;
    const auto specs = canonical_specs();
    int boards = 0;
    double worst = 0;
    for (const auto& fx : fixtures::kCuratedBoards) {
        const Board b = reference::from_grid(fx.grid);
        worst = std::max({worst, std::abs(eval_spec(specs.pre10, b) - fx.pre10), std::abs(eval_spec(specs.post10, b) - fx.post10)});
        ++boards;
    }
    o.check(boards >= 12, "fewer than 12 curated boards");
    o.check(worst <= 1e-9, "max deviation " + num(worst));
    auto g = [](reference::Grid grid) { return reference::from_grid(grid); };
    o.check(terms::br_proximity(g({{{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 2048}}})) == 1.0, "br_proximity at bottom-right");
    o.check(std::abs(term(TermKind::SnakeRatio, g({{{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {8, 16, 32, 64}}})) - 3.0 / 15.0) < 1e-15,
            "snake /15");
    o.check(std::abs(term(TermKind::SmoothnessRatio, g({{{2, 2, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}}})) - 1.0 / 24.0) < 1e-15,
            "smoothness /24");
    o.check(std::abs(specs.pre10.weight_sum() - 1.0) < 1e-12, "pre10 weights sum");
    o.note(std::to_string(boards) + " curated boards, max |err| " + num(worst, "%.2e") + ", anchors checked");
    return o;
}

Outcome search_efficacy() {
    Outcome o;
    const SearchConfig cfg;  // 50 playouts, depth 10
    const int n = 30;
    const auto specs = canonical_specs();
    std::vector<GameRecord> post(n), pre(n);
    const auto t0 = Clock::now();
    evo2048::detail::parallel_for(2 * n, 0, [&](int k) {
        const std::uint64_t seed = derive_seed(0xACCE55, static_cast<std::uint64_t>(k % n));
        if (k < n) post[static_cast<std::size_t>(k)] = play_mcts_game(specs.post10, cfg, seed);
        else pre[static_cast<std::size_t>(k - n)] = play_mcts_game(specs.pre10, cfg, seed);
    });
    const double secs = seconds_since(t0);
    auto mean = [](const std::vector<GameRecord>& v) {
        double s = 0;
        for (const auto& r : v) s += static_cast<double>(r.final_score);
        return s / static_cast<double>(v.size());
    };
    int reach512 = 0;
    for (const auto& r : post) reach512 += r.highest_tile >= 512;
    const double random_mean = random_policy_mean(100, 2048);
    const double mpost = mean(post), mpre = mean(pre);
    o.check(random_mean == 1070.92, "random baseline drifted from 1070.92");
    o.check(mpost >= 5 * random_mean, "post10 mean below 5x random");
    o.check(reach512 * 2 >= n, "fewer than half the games reach 512");
    o.check(secs <= 600, "runtime over 10 minutes");
    o.check(mpost > mpre, "post10 does not beat pre10");
    o.note("post10 mean " + num(mpost, "%.1f") + " (" + num(mpost / random_mean, "%.1f") + "x random " + num(random_mean, "%.2f") +
           "), " + std::to_string(reach512) + "/30 reach 512, pre10 mean " + num(mpre, "%.1f") + ", " + num(secs, "%.1f") + " s for 60 games");
    return o;
}

Outcome rollback_law() {
    Outcome o;
    SegmentState s;
    s.base_spec = canonical_specs().pre10;
    s.candidates = {make_spec("a", {{TermKind::EmptyRatio, 1.0}}), make_spec("b", {{TermKind::SnakeRatio, 1.0}})};
    s.scores = {{"a", 3000.0, false}, {"b", 1000.0, false}};
    Rng rng(derive_seed(42, 0x524F4C4C));
    const int n = 100000;
    int a = 0;
    for (int i = 0; i < n; ++i) a += rollback_select(s, 0.0, rng).index == 0;
    const double fa = static_cast<double>(a) / n;
    o.check(std::abs(fa - 0.75) <= 0.01 && std::abs((1 - fa) - 0.25) <= 0.01, "frequencies outside +/-1%");
    o.note("P(3000) = " + num(fa, "%.4f") + ", P(1000) = " + num(1 - fa, "%.4f") + " over 100000 draws");
    return o;
}

Outcome evolution_loop() {
    Outcome o;
    EvolutionConfig cfg;
    cfg.cycles = 10;
    cfg.games_per_cycle = 4;
    cfg.segment_length = 5;
    cfg.master_seed = 20240601;
    cfg.search.playouts_per_move = 10;
    cfg.search.playout_depth = 5;
    TempDir a, b, c;
    const auto ra = run_evolution(cfg, a.path());
    const auto rb = run_evolution(cfg, b.path());
    o.check(ra.reports == rb.reports && tree_contents(a.path()) == tree_contents(b.path()), "two runs differ");
    RunOptions stop;
    stop.on_cycle = [](const CycleReport& r) { return r.cycle_index < 7; };
    run_evolution(cfg, c.path(), stop);
    const auto rc = run_evolution(cfg, c.path());
    o.check(rc.reports == ra.reports && tree_contents(c.path()) == tree_contents(a.path()), "resumed run differs");
    try {
        check_lineage(ra.lineage);
    } catch (const std::exception& e) {
        o.check(false, std::string("lineage: ") + e.what());
    }
    o.check(ra.lineage.rollbacks.size() == 2, std::to_string(ra.lineage.rollbacks.size()) + " rollbacks");
    o.note("bit-identical reruns, resume after cycle 7 identical, lineage forest of " + std::to_string(ra.lineage.nodes.size()) +
           " specs, " + std::to_string(ra.lineage.rollbacks.size()) + " rollbacks");
    return o;
}

Outcome statistics() {
    Outcome o;
    const auto cs = cycle_stats({1200, 3400, 2210, 5030, 880, 4410, 2980, 3150, 1720, 6020});
    o.check(std::abs(cs.mean - 3100) < 1e-9 && std::abs(cs.ci95_half_width - 1199.6117978793022) < 1e-9, "cycle_stats fixture");
    const std::vector<double> fixture(reference_tables::kTrendFixture.begin(), reference_tables::kTrendFixture.end());
    const auto t = trend(fixture);
    o.check(std::abs(t.slope - 291.8741258741259) < 1e-9 && std::abs(t.intercept - 1908.6181818181813) < 1e-9 &&
                std::abs(t.pearson_r - 0.9481260928603837) < 1e-9 && std::abs(t.spearman_rho - 0.9580419580419581) < 1e-9,
            "trend fixture");
    const auto tiles = distribution(reference_tables::highest_tile_records(), DistributionKind::HighestTile);
    const auto ranges = distribution(reference_tables::score_range_records(), DistributionKind::ScoreRange);
    for (std::size_t i = 0; i < tiles.buckets.size(); ++i)
        o.check(display_percentage(tiles.buckets[i].percentage) == reference_tables::kHighestTilePercent[i], "tile bucket " + tiles.buckets[i].label);
    for (std::size_t i = 0; i < ranges.buckets.size(); ++i)
        o.check(display_percentage(ranges.buckets[i].percentage) == reference_tables::kScoreRangePercent[i], "range bucket " + ranges.buckets[i].label);
    std::string tp, rp;
    for (const auto& bkt : tiles.buckets) tp += (tp.empty() ? "" : "/") + num(display_percentage(bkt.percentage), "%.1f");
    for (const auto& bkt : ranges.buckets) rp += (rp.empty() ? "" : "/") + num(display_percentage(bkt.percentage), "%.1f");
    o.note("fixtures within 1e-9; highest tile " + tp + "; score range " + rp);
    return o;
}

Outcome offline_metaprompt() {
    Outcome o;
    TempDir d;
    AgentEndpoint e;
    e.model = "offline-mock";
    cli::detail::MockProvider provider;
    LlmExecutor executor(e, provider);
    LlmThinker thinker(e, provider);
    MetapromptConfig cfg;
    cfg.rounds = 2;
    cfg.games_per_round = 20;
    cfg.master_seed = 11;
    const auto res = run_metaprompt(cfg, executor, thinker, d.path());
    for (int r = 1; r <= 2; ++r) {
        const auto rep = cycle_report_from_json(read_json(d.path() / layout::cycle(r)));
        o.check(rep.scores.size() == 20 && rep.game_records.size() == 20, "round " + std::to_string(r) + " did not play 20 games");
        int hist = 0;
        for (const auto& [tile, count] : rep.highest_tile_histogram) hist += count;
        o.check(hist == 20, "histogram does not cover 20 games");
    }
    o.check(res.strategies.back().author == StrategyText::Author::Thinker, "thinker did not write a strategy");
    FirstLegalExecutor first;
    EchoThinker echo;
    const auto fixed = run_metaprompt_round({1, kSeedStrategy, StrategyText::Author::Seed}, cfg, first, echo);
    o.check(fixed.next.text == kSeedStrategy, "echo thinker is not a fixed point");
    o.note("2 rounds x 20 games through mock executor/thinker transports, no network or credentials; round means " +
           num(res.reports[0].mean_score, "%.1f") + " -> " + num(res.reports[1].mean_score, "%.1f"));
    return o;
}

Outcome external_evaluator() {
    Outcome o;
    const auto post10 = canonical_specs().post10;
    ExternalEvaluator ev({std::string(EVO2048_EVALUATOR_BIN) + " --canonical post10", 1, 2000});
    std::mt19937_64 eng(99);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const Board b = reference::random_board(eng, 12, (i % 5) / 5.0);
        worst = std::max(worst, std::abs(ev.evaluate(b) - eval_spec(post10, b)));
    }
    o.check(worst <= 1e-9, "max deviation " + num(worst));
    bool timed_out = false;
    const auto t0 = Clock::now();
    try {
        ExternalEvaluator hang({"echo 'EVAL2048 1'; sleep 30", 1, 300});
        hang.evaluate(Board{});
    } catch (const EvaluatorTimeout&) {
        timed_out = true;
    }
    const double secs = seconds_since(t0);
    o.check(timed_out, "hanging evaluator did not time out");
    o.note("100 boards max |err| " + num(worst, "%.2e") + "; hanging evaluator timed out after " + num(secs, "%.2f") + " s");
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"engine-correctness", engine_correctness}, {"spawn-law", spawn_law},
        {"heuristic-fidelity", heuristic_fidelity}, {"search-efficacy", search_efficacy},
        {"rollback-law", rollback_law},             {"evolution-loop", evolution_loop},
        {"statistics", statistics},                 {"offline-metaprompt", offline_metaprompt},
        {"external-evaluator", external_evaluator},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
