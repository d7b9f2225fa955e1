#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "evo2048/evolution.hpp"
#include "support/tempdir.hpp"

using namespace evo2048;

namespace {

EvolutionConfig small_config(int cycles, std::uint64_t seed = 7) {
    EvolutionConfig c;
    c.cycles = cycles;
    c.games_per_cycle = 3;
    c.segment_length = 5;
    c.master_seed = seed;
    c.search.playouts_per_move = 4;
    c.search.playout_depth = 4;
    return c;
}

SegmentState two_candidates(double a, double b, bool a_failed = false, bool b_failed = false) {
    SegmentState s;
    s.base_spec = canonical_specs().pre10;
    s.candidates = {make_spec("a", {{TermKind::EmptyRatio, 1.0}}), make_spec("b", {{TermKind::SnakeRatio, 1.0}})};
    s.scores = {{"a", a, a_failed}, {"b", b, b_failed}};
    return s;
}

std::map<std::string, int> draw_counts(const SegmentState& s, double eps, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::map<std::string, int> counts;
    for (int i = 0; i < n; ++i) ++counts[*rollback_select(s, eps, rng).spec.lineage];
    return counts;
}

}  // namespace

TEST(Mutate, ZeroNoiseIsIdentity) {
    MutationParams p;
    p.sigma = 0.0;
    p.toggle_prob = 0.0;
    Rng rng(1);
    for (const auto& parent : {canonical_specs().pre10, canonical_specs().post10}) {
        auto child = mutate_deterministic(parent, p, rng);
        ASSERT_EQ(child.terms.size(), parent.terms.size());
        for (std::size_t i = 0; i < child.terms.size(); ++i) {
            EXPECT_EQ(child.terms[i].term, parent.terms[i].term);
            EXPECT_NEAR(child.terms[i].weight, parent.terms[i].weight, 1e-15);
        }
        EXPECT_EQ(child.lineage, parent.id);
        EXPECT_EQ(child.origin, SpecOrigin::Mutated);
    }
}

TEST(Mutate, Deterministic) {
    Rng a(42), b(42);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(mutate_deterministic(canonical_specs().post10, {}, a),
                                           mutate_deterministic(canonical_specs().post10, {}, b));
}

TEST(Mutate, WeightsStayOnSimplex) {
    Rng rng(3);
    ValueFunctionSpec s = canonical_specs().pre10;
    s.id = "x";
    MutationParams p;
    p.sigma = 0.3;  // large noise exercises the clamp
    int toggled = 0;
    for (int i = 0; i < 1000; ++i) {
        auto child = mutate_deterministic(s, p, rng);
        EXPECT_NEAR(child.weight_sum(), 1.0, 1e-12);
        for (const auto& t : child.terms) EXPECT_GE(t.weight, 0.0);
        EXPECT_NO_THROW({
            child.id = "y";
            validate(child);
        });
        toggled += child.terms.size() != s.terms.size();
        s = child;
        s.id = "x";
    }
    EXPECT_GT(toggled, 50);
}

TEST(Mutate, ToggleAddsOrRemovesOneTerm) {
    MutationParams p;
    p.sigma = 0.0;
    p.toggle_prob = 1.0;
    Rng rng(5);
    bool added = false, removed = false;
    for (int i = 0; i < 100; ++i) {
        auto parent = canonical_specs().post10;
        auto child = mutate_deterministic(parent, p, rng);
        const int diff = static_cast<int>(child.terms.size()) - static_cast<int>(parent.terms.size());
        EXPECT_EQ(std::abs(diff), 1);
        if (diff == 1) {
            added = true;
            EXPECT_NEAR(child.terms.back().weight, 0.05 / 1.05, 1e-12);
        }
        removed = removed || diff == -1;
    }
    EXPECT_TRUE(added && removed);
}

TEST(Mutate, ExternalSpecCopied) {
    ValueFunctionSpec s;
    s.id = "ext";
    s.external = ExternalProgram{{"true", 1, 100}, "code"};
    Rng rng(1);
    auto child = mutate_deterministic(s, {}, rng);
    EXPECT_EQ(child.external, s.external);
    EXPECT_EQ(child.lineage, "ext");
}

TEST(Rollback, SingleCandidate) {
    SegmentState s;
    s.base_spec = canonical_specs().pre10;
    s.candidates = {canonical_specs().post10};
    s.scores = {{"seed-post10", 1234.0, false}};
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        auto c = rollback_select(s, 0.01, rng);
        EXPECT_EQ(c.index, 0);
        EXPECT_EQ(c.spec.lineage, "seed-post10");
        EXPECT_EQ(c.spec.origin, SpecOrigin::RolledBack);
        EXPECT_EQ(c.spec.terms, canonical_specs().post10.terms);
    }
}

TEST(Rollback, ProportionalFrequencies) {
    const int n = 100000;
    auto counts = draw_counts(two_candidates(3000, 1000), 0.0, n, 11);
    EXPECT_NEAR(counts["a"] / double(n), 0.75, 0.01);
    EXPECT_NEAR(counts["b"] / double(n), 0.25, 0.01);
}

TEST(Rollback, EqualMeansSymmetric) {
    const int n = 20000;
    auto counts = draw_counts(two_candidates(500, 500), 0.01, n, 12);
    EXPECT_NEAR(counts["a"], n / 2.0, 3 * std::sqrt(n * 0.25));
}

TEST(Rollback, FailedCandidateOnlyViaFloor) {
    const int n = 100000;
    // weights: a = 0 + 0.1 * 1000, b = 1000 + 0.1 * 1000 -> P(a) = 100 / 1200
    auto counts = draw_counts(two_candidates(0, 1000, true, false), 0.1, n, 13);
    EXPECT_NEAR(counts["a"] / double(n), 100.0 / 1200.0, 0.01);
    auto none = draw_counts(two_candidates(0, 1000, true, false), 0.0, 1000, 14);
    EXPECT_EQ(none["a"], 0);
}

TEST(Rollback, AllFailedReusesBase) {
    Rng rng(1);
    auto c = rollback_select(two_candidates(0, 0, true, true), 0.01, rng);
    EXPECT_EQ(c.index, -1);
    EXPECT_EQ(c.spec.lineage, "seed-pre10");
    EXPECT_EQ(c.spec.terms, canonical_specs().pre10.terms);
}

TEST(Rollback, AllZeroIsUniform) {
    const int n = 20000;
    auto counts = draw_counts(two_candidates(0, 0), 0.01, n, 15);
    EXPECT_NEAR(counts["a"], n / 2.0, 3 * std::sqrt(n * 0.25));
}

TEST(Rollback, EmptySegmentThrows) {
    SegmentState s;
    Rng rng(1);
    EXPECT_THROW(rollback_select(s, 0.01, rng), PreconditionError);
}

TEST(RunCycle, SingleGameMeanIsItsScore) {
    auto cfg = small_config(1);
    cfg.games_per_cycle = 1;
    auto out = run_cycle(canonical_specs().post10, cfg, 1);
    ASSERT_EQ(out.records.size(), 1u);
    EXPECT_EQ(out.report.mean_score, static_cast<double>(out.records[0].final_score));
    EXPECT_EQ(out.report.ci95_half_width, 0.0);
}

TEST(RunCycle, IdenticalGamesHaveZeroWidth) {
    SearchConfig sc;
    sc.playouts_per_move = 4;
    sc.playout_depth = 4;
    const auto rec = play_mcts_game(canonical_specs().post10, sc, 99);
    auto r = summarize_cycle(1, "x", std::vector<GameRecord>(10, rec));
    EXPECT_EQ(r.ci95_half_width, 0.0);
    EXPECT_EQ(r.mean_score, static_cast<double>(rec.final_score));
    EXPECT_EQ(r.highest_tile_histogram.at(rec.highest_tile), 10);
}

TEST(RunCycle, PersistedGamesRecomputeTheMean) {
    TempDir dir;
    auto cfg = small_config(1);
    cfg.games_per_cycle = 10;
    auto out = run_cycle(canonical_specs().post10, cfg, 4, dir.path(), 4);
    ASSERT_EQ(out.report.game_records.size(), 10u);
    double sum = 0;
    std::set<std::uint64_t> seeds;
    for (const auto& p : out.report.game_records) {
        auto recs = read_game_records((dir.path() / p).string());
        ASSERT_EQ(recs.size(), 1u);
        EXPECT_NO_THROW(verify_record(recs[0]));
        sum += static_cast<double>(recs[0].final_score);
        seeds.insert(recs[0].seed);
    }
    EXPECT_EQ(seeds.size(), 10u);
    EXPECT_NEAR(out.report.mean_score, sum / 10, 1e-9);
    auto serial = run_cycle(canonical_specs().post10, cfg, 4, {}, 1);
    EXPECT_EQ(serial.report.scores, out.report.scores);
}

TEST(RunCycle, EvaluatorFailureMarksCycleFailed) {
    ValueFunctionSpec bad;
    bad.id = "crashes";
    bad.external = ExternalProgram{{"echo 'EVAL2048 1'; exit 3", 1, 2000}, ""};
    auto cfg = small_config(1);
    auto out = run_cycle(bad, cfg, 1);
    EXPECT_TRUE(out.report.failed);
    EXPECT_EQ(out.report.mean_score, 0.0);
    EXPECT_EQ(out.report.scores, std::vector<double>(3, 0.0));
    EXPECT_FALSE(out.report.failure.empty());
}

TEST(Evolution, SingleCycleNoRollback) {
    TempDir dir;
    auto res = run_evolution(small_config(1), dir.path());
    ASSERT_EQ(res.reports.size(), 1u);
    EXPECT_TRUE(res.lineage.rollbacks.empty());
    EXPECT_TRUE(res.complete);
    EXPECT_EQ(res.reports[0].spec_id, "seed-pre10");
}

TEST(Evolution, TenCyclesBitReproducibleAndTwoRollbacks) {
    TempDir a, b;
    auto cfg = small_config(10);
    RunOptions serial;
    serial.threads = 1;
    auto ra = run_evolution(cfg, a.path(), serial);
    auto rb = run_evolution(cfg, b.path());
    EXPECT_EQ(ra.reports, rb.reports);
    EXPECT_EQ(ra.lineage, rb.lineage);
    EXPECT_EQ(tree_contents(a.path()), tree_contents(b.path()));
    EXPECT_EQ(ra.lineage.rollbacks.size(), 2u);
    EXPECT_EQ(ra.lineage.rollbacks[0].after_cycle, 5);
    EXPECT_EQ(ra.lineage.rollbacks[1].after_cycle, 10);
    EXPECT_EQ(ra.final_spec.origin, SpecOrigin::RolledBack);
    EXPECT_EQ(load_cycle_reports(a.path()), ra.reports);
}

TEST(Evolution, LineageIsAForestAndSegmentsDiscard) {
    TempDir dir;
    auto res = run_evolution(small_config(12), dir.path());
    EXPECT_NO_THROW(check_lineage(res.lineage));
    EXPECT_EQ(lineage_from_json(read_json(dir.path() / "lineage.json")), res.lineage);
    std::map<std::string, std::optional<std::string>> parent;
    for (const auto& n : res.lineage.nodes) parent[n.id] = n.parent;
    for (const auto& n : res.lineage.nodes) EXPECT_TRUE(fs::exists(dir.path() / layout::spec(n.id))) << n.id;

    for (const auto& rb : res.lineage.rollbacks) {
        ASSERT_EQ(rb.candidates.size(), 5u);
        EXPECT_EQ(parent.at(rb.rolled_back_spec), rb.chosen);
        // No spec created after the rollback descends directly from a discarded candidate.
        for (const auto& n : res.lineage.nodes) {
            if (n.created_cycle <= rb.after_cycle || !n.parent) continue;
            for (const auto& c : rb.candidates)
                if (c.spec_id != rb.chosen) {
                    EXPECT_NE(*n.parent, c.spec_id) << n.id;
                }
        }
        // The next segment's first spec refines the rolled-back spec.
        const std::string next = "cycle-" + zero_pad(rb.after_cycle + 1, 3);
        if (parent.contains(next)) {
            EXPECT_EQ(parent.at(next), rb.rolled_back_spec);
        }
    }
    // Within a segment, candidates form a chain.
    for (const auto& rb : res.lineage.rollbacks)
        for (std::size_t i = 1; i < rb.candidates.size(); ++i)
            EXPECT_EQ(parent.at(rb.candidates[i].spec_id), i == 1 && rb.segment_index == 0
                                                              ? std::optional<std::string>(rb.candidates[0].spec_id)
                                                              : std::optional<std::string>(rb.candidates[i - 1].spec_id));
}

TEST(Evolution, ResumeMatchesUninterrupted) {
    TempDir full, part;
    auto cfg = small_config(10);
    run_evolution(cfg, full.path());
    for (int stop_after : {3, 5}) {
        TempDir d;
        RunOptions stop;
        stop.on_cycle = [&](const CycleReport& r) { return r.cycle_index < stop_after; };
        auto first = run_evolution(cfg, d.path(), stop);
        EXPECT_FALSE(first.complete);
        EXPECT_EQ(first.reports.size(), static_cast<std::size_t>(stop_after));
        // A crash mid-cycle leaves stray game files; the resumed cycle overwrites them.
        write_file_atomic(d.path() / layout::game(stop_after + 1, 0), "garbage\n");
        auto rest = run_evolution(cfg, d.path());
        EXPECT_TRUE(rest.complete);
        EXPECT_EQ(rest.reports.size(), 10u);
        EXPECT_EQ(tree_contents(d.path()), tree_contents(full.path())) << "stopped after " << stop_after;
    }
}

TEST(Evolution, ResumeWithDifferentConfigRefused) {
    TempDir d;
    RunOptions stop;
    stop.on_cycle = [](const CycleReport&) { return false; };
    run_evolution(small_config(4), d.path(), stop);
    EXPECT_THROW(run_evolution(small_config(4, 8), d.path()), ConfigError);
}

TEST(Evolution, LockedDirectoryRefused) {
    TempDir d;
    RunLock held(d.path());
    EXPECT_THROW(run_evolution(small_config(1), d.path()), PersistenceError);
}

TEST(Evolution, InvalidConfig) {
    TempDir d;
    auto c = small_config(0);
    EXPECT_THROW(run_evolution(c, d.path()), ConfigError);
    c = small_config(2);
    c.mutator = MutatorMode::ExternalLlm;
    EXPECT_THROW(run_evolution(c, d.path()), ConfigError);
}

TEST(Evolution, IdentityMutatorRollbackKeepsAScoredCandidate) {
    TempDir d;
    auto cfg = small_config(10, 21);
    cfg.mutation.sigma = 0.0;
    cfg.mutation.toggle_prob = 0.0;
    auto res = run_evolution(cfg, d.path());
    for (const auto& rb : res.lineage.rollbacks) {
        double lo = 1e300, chosen = -1;
        for (const auto& c : rb.candidates) {
            lo = std::min(lo, c.mean_score);
            if (c.spec_id == rb.chosen) chosen = c.mean_score;
        }
        EXPECT_GE(chosen, lo);
    }
    // Identity mutation keeps the seed weights throughout.
    EXPECT_EQ(res.final_spec.terms.size(), canonical_specs().pre10.terms.size());
}

TEST(Evolution, FailedSeedIsQuarantined) {
    TempDir d;
    auto cfg = small_config(3);
    ValueFunctionSpec bad;
    bad.id = "seed-bad";
    bad.external = ExternalProgram{{"exit 1", 1, 2000}, ""};
    cfg.seed_spec = bad;
    std::vector<std::string> logs;
    RunOptions opt;
    opt.log = [&](const std::string& s) { logs.push_back(s); };
    auto res = run_evolution(cfg, d.path(), opt);
    ASSERT_EQ(res.reports.size(), 3u);
    EXPECT_TRUE(res.reports[0].failed);
    EXPECT_FALSE(res.reports[1].failed);
    EXPECT_FALSE(res.reports[2].failed);
    auto cp = read_json(d.path() / "checkpoint.json");
    EXPECT_EQ(cp["quarantined"], nlohmann::json::array({"seed-bad"}));
    EXPECT_EQ(load_spec(d.path(), "cycle-002").lineage, "seed-pre10");
    EXPECT_NO_THROW(check_lineage(res.lineage));
    EXPECT_FALSE(logs.empty());
}

TEST(LlmMutation, ParsedSpecBecomesChild) {
    ScriptedTransport t({std::string("```\nempty_ratio 2\nsnake_ratio 2\n```")});
    LlmMutator m{AgentEndpoint{}, &t, {}, 3};
    m.retry.sleep = [](int) {};
    TempDir d;
    auto games = run_cycle(canonical_specs().pre10, small_config(1), 1).records;
    auto child = llm_mutate(m, canonical_specs().pre10, games, "cycle-002", d.path(), {});
    ASSERT_TRUE(child);
    EXPECT_NEAR(child->weight_of(TermKind::EmptyRatio), 0.5, 1e-12);
    EXPECT_EQ(child->lineage, "seed-pre10");
    EXPECT_EQ(t.seen().at(0).role, PromptRole::ValueFunctionRefine);
}

TEST(LlmMutation, UnusableRepliesFallBackAfterThreeAttempts) {
    ScriptedTransport t({std::string("no idea"), std::make_exception_ptr(NetworkError("down")), std::string("```c\nint x;\n```"),
                         std::string("```\nempty_ratio 1\n```")});
    AgentEndpoint e;
    e.max_retries = 0;
    LlmMutator m{e, &t, {}, 3};
    m.retry.sleep = [](int) {};
    TempDir d;
    auto games = run_cycle(canonical_specs().pre10, small_config(1), 1).records;
    std::vector<std::string> log;
    auto child = llm_mutate(m, canonical_specs().pre10, games, "cycle-002", d.path(), [&](const std::string& s) { log.push_back(s); });
    EXPECT_FALSE(child);
    EXPECT_EQ(t.seen().size(), 3u);
    EXPECT_EQ(log.size(), 3u);
}

TEST(LlmMutation, ProgramReplyRunsOutOfProcess) {
    if (std::system("python3 -c 'pass' >/dev/null 2>&1") != 0) GTEST_SKIP() << "python3 not available";
    std::ifstream in(std::string(EVO2048_SAMPLES_DIR) + "/post10_evaluator.py");
    std::stringstream code;
    code << in.rdbuf();
    ScriptedTransport t({"Here is a better function:\n```python\n" + code.str() + "```\n"});
    LlmMutator m{AgentEndpoint{}, &t, {}, 3};
    m.retry.sleep = [](int) {};
    TempDir d;
    auto games = run_cycle(canonical_specs().pre10, small_config(1), 1).records;
    auto child = llm_mutate(m, canonical_specs().pre10, games, "cycle-002", d.path() / "programs", {});
    ASSERT_TRUE(child && child->external);
    child->id = "cycle-002";
    EXPECT_EQ(child->external->program, code.str());
    EXPECT_TRUE(fs::exists(d.path() / "programs" / "cycle-002.py"));
    auto cfg = small_config(1);
    cfg.games_per_cycle = 1;
    auto ext = run_cycle(*child, cfg, 1);
    auto in_proc = run_cycle(canonical_specs().post10, cfg, 1);
    EXPECT_FALSE(ext.report.failed) << ext.report.failure;
    EXPECT_EQ(ext.records, in_proc.records);
}

TEST(Evolution, ExternalLlmModeWithScriptedMock) {
    TempDir d;
    auto cfg = small_config(6);
    cfg.mutator = MutatorMode::ExternalLlm;
    MockTransport t([](const PromptBundle& b) {
        // Shift weight toward snake_ratio each time, keeping the listing shape.
        return b.text.find("snake_ratio") != std::string::npos ? std::string("```\nempty_ratio 0.5\nsnake_ratio 0.5\n```")
                                                              : std::string("garbage");
    });
    LlmMutator m{AgentEndpoint{}, &t, {}, 3};
    RunOptions opt;
    opt.llm = &m;
    auto res = run_evolution(cfg, d.path(), opt);
    EXPECT_EQ(res.reports.size(), 6u);
    auto c2 = load_spec(d.path(), "cycle-002");
    EXPECT_NEAR(c2.weight_of(TermKind::SnakeRatio), 0.5, 1e-12);
    EXPECT_EQ(c2.lineage, "seed-pre10");
    auto c7 = load_spec(d.path(), "cycle-006");
    EXPECT_EQ(c7.lineage, "rollback-01");
    EXPECT_NO_THROW(check_lineage(res.lineage));
}
