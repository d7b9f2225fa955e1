#pragma once

// Command-line front end. Lives in a header so tests can drive it in-process.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agents_http.hpp"
#include "evolution.hpp"
#include "metaprompt.hpp"
#include "report.hpp"

namespace evo2048::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2, kDivergence = 3 };

struct Flags {
    std::string mode;
    std::vector<std::string> args;
    std::string config_file;
    std::string run_dir;
    std::optional<int> cycles, games, segment, playouts, depth, threads;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mutator, provider, model;
    bool mock = false;
};

/// Resolved settings: defaults, then the config file, then flags.
struct RunConfig {
    std::string mode;
    EvolutionConfig evolution;
    MetapromptConfig metaprompt;
    std::optional<AgentEndpoint> agent;
    std::string run_dir;
    int threads = 0;
    bool mock = false;
};

inline const std::vector<std::string>& modes() {
    static const std::vector<std::string> m{"evolve", "metaprompt", "baseline", "replay", "report", "eval"};
    return m;
}

inline AgentEndpoint default_endpoint(const std::string& provider) {
    AgentEndpoint e;
    e.provider = provider;
    if (provider == "anthropic") {
        e.base_url = "https://api.anthropic.com/v1";
        e.credential_env = "ANTHROPIC_API_KEY";
    } else {
        e.base_url = "https://api.openai.com/v1";
        e.credential_env = "OPENAI_API_KEY";
    }
    return e;
}

inline RunConfig resolve(const Flags& f) {
    RunConfig rc;
    rc.mode = f.mode;
    if (rc.mode.empty() && !f.args.empty()) rc.mode = f.args.front();
    if (std::find(modes().begin(), modes().end(), rc.mode) == modes().end())
        throw ConfigError("unknown or missing mode '" + rc.mode + "' (evolve, metaprompt, baseline, replay, report, eval)");

    if (!f.config_file.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(f.config_file));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config file " + f.config_file + ": " + e.what());
        } catch (const PersistenceError& e) {
            throw ConfigError(e.what());
        }
        try {
            rc.evolution = evolution_config_from_json(j);
            if (j.contains("metaprompt")) rc.metaprompt = metaprompt_config_from_json(j["metaprompt"]);
            if (j.contains("agent")) {
                const std::string provider = j["agent"].value("provider", std::string("openai"));
                nlohmann::json merged = to_json(default_endpoint(provider));
                merged.update(j["agent"]);
                rc.agent = endpoint_from_json(merged);
            }
            rc.run_dir = j.value("run_dir", rc.run_dir);
            rc.threads = j.value("threads", rc.threads);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + f.config_file + ": " + e.what());
        }
    }

    auto& ev = rc.evolution;
    auto& mp = rc.metaprompt;
    if (f.cycles) ev.cycles = mp.rounds = *f.cycles;
    if (f.games) ev.games_per_cycle = mp.games_per_round = *f.games;
    if (f.segment) ev.segment_length = *f.segment;
    if (f.mutator) {
        const auto m = parse_mutator(*f.mutator);
        if (!m) throw ConfigError("unknown mutator '" + *f.mutator + "' (deterministic, external_llm)");
        ev.mutator = *m;
    }
    if (f.playouts) ev.search.playouts_per_move = *f.playouts;
    if (f.depth) ev.search.playout_depth = *f.depth;
    if (f.lambda) ev.search.leaf_mix = *f.lambda;
    if (f.seed) ev.master_seed = mp.master_seed = *f.seed;
    if (!f.run_dir.empty()) rc.run_dir = f.run_dir;
    if (f.threads) rc.threads = *f.threads;
    if (f.provider || f.model) {
        if (!rc.agent || (f.provider && *f.provider != rc.agent->provider)) rc.agent = default_endpoint(f.provider.value_or("openai"));
        if (f.model) rc.agent->model = *f.model;
    }
    rc.mock = f.mock;
    if (rc.threads < 0) throw ConfigError("threads must be >= 0");
    if (rc.agent) {
        rc.agent->validate();
        if (rc.agent->provider != "openai" && rc.agent->provider != "anthropic")
            throw ConfigError("unknown provider '" + rc.agent->provider + "'");
    }
    return rc;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::uint32_t best_tile(const CycleReport& r) {
    return r.highest_tile_histogram.empty() ? 0 : r.highest_tile_histogram.rbegin()->first;
}

inline std::string progress_line(const char* what, const CycleReport& r, int total) {
    std::string s = std::string(what) + " " + std::to_string(r.cycle_index) + "/" + std::to_string(total) + "  mean " +
                    fmt("%.1f", r.mean_score) + " +/- " + fmt("%.1f", r.ci95_half_width) + "  best tile " +
                    std::to_string(best_tile(r)) + "  " + r.spec_id;
    if (r.failed) s += "  FAILED: " + r.failure;
    return s;
}

inline void print_tables(std::ostream& out, const std::vector<GameRecord>& records) {
    for (auto kind : {DistributionKind::HighestTile, DistributionKind::ScoreRange}) {
        const DistributionTable t = distribution(records, kind);
        out << (kind == DistributionKind::HighestTile ? "highest tile" : "score range") << "\n";
        for (const auto& b : t.buckets) out << "  " << b.label << "\t" << b.count << "\t" << fmt("%.1f%%", display_percentage(b.percentage)) << "\n";
    }
}

inline void print_tables(std::ostream& out, const RunReport& r) {
    for (const DistributionTable* t : {&r.highest_tiles, &r.score_ranges}) {
        out << (t->kind == DistributionKind::HighestTile ? "highest tile" : "score range") << "\n";
        for (const auto& b : t->buckets) out << "  " << b.label << "\t" << b.count << "\t" << fmt("%.1f%%", display_percentage(b.percentage)) << "\n";
    }
}

inline std::string require_dir(const RunConfig& rc) {
    if (rc.run_dir.empty()) throw ConfigError(rc.mode + " needs --run-dir");
    return rc.run_dir;
}

inline std::string require_arg(const Flags& f, const RunConfig& rc, const char* what) {
    // the mode may itself be the first positional
    const std::size_t skip = (f.mode.empty() && !f.args.empty()) ? 1 : 0;
    if (f.args.size() <= skip) throw ConfigError(rc.mode + " needs " + what);
    return f.args[skip];
}

// Offline stand-in for a provider: moves follow the strategy's "prefer" order,
// strategies and value functions come back as fixed, well-formed replies.
class MockProvider : public Transport {
public:
    std::string complete(const AgentEndpoint&, const PromptBundle& b) override {
        switch (b.role) {
            case PromptRole::ExecutorMove:
            case PromptRole::BaselineMove: {
                const Board board = parse_board_render(b.text);
                const MoveSet legal = legal_moves(board);
                const auto at = b.text.find("Strategy to follow:");
                if (at != std::string::npos)
                    for (MoveDir d : PreferenceExecutor::preference_order(std::string_view(b.text).substr(at)))
                        if (legal.contains(d)) return "Following the strategy.\nFINAL: " + std::string(to_string(d));
                return "FINAL: " + std::string(to_string(legal.first()));
            }
            case PromptRole::ThinkerRefine:
                return "```\nKeep the largest tile in the bottom-left corner. Prefer Down then Left then Right. "
                       "Use Up only when nothing else is legal.\n```";
            case PromptRole::ValueFunctionRefine:
                return render_spec_listing(canonical_specs().post10);
        }
        return "";
    }
};

}  // namespace detail

inline int cmd_evolve(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    const fs::path dir = detail::require_dir(rc);
    rc.evolution.validate();
    std::unique_ptr<Transport> transport;
    std::optional<LlmMutator> llm;
    if (rc.evolution.mutator == MutatorMode::ExternalLlm) {
        if (rc.mock) transport = std::make_unique<detail::MockProvider>();
        else if (rc.agent && !rc.agent->model.empty()) transport = std::make_unique<HttpTransport>();
        else throw ConfigError("the external_llm mutator needs an agent endpoint (--provider/--model) or --mock");
        llm = LlmMutator{rc.agent.value_or(AgentEndpoint{}), transport.get(), {}, 3};
    }
    RunOptions opt;
    opt.threads = rc.threads;
    opt.llm = llm ? &*llm : nullptr;
    opt.log = [&](const std::string& s) { err << s << "\n"; };
    opt.on_cycle = [&](const CycleReport& r) {
        err << detail::progress_line("cycle", r, rc.evolution.cycles) << std::endl;
        return true;
    };
    const EvolutionResult res = run_evolution(rc.evolution, dir, opt);
    const RunReport rep = emit_report(dir);
    nlohmann::json j{{"run_dir", dir.string()},
                     {"cycles", res.reports.size()},
                     {"rollbacks", res.lineage.rollbacks.size()},
                     {"final_spec", res.final_spec.id},
                     {"final_mean", res.reports.empty() ? 0.0 : res.reports.back().mean_score}};
    if (rep.trend) j["trend"] = {{"slope", rep.trend->slope}, {"rho", rep.trend->pearson_r}, {"spearman_rho", rep.trend->spearman_rho}};
    out << j.dump() << "\n";
    return kOk;
}

inline int cmd_metaprompt(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    const fs::path dir = detail::require_dir(rc);
    rc.metaprompt.validate();
    std::unique_ptr<Transport> transport;
    if (rc.mock) transport = std::make_unique<detail::MockProvider>();
    else if (rc.agent && !rc.agent->model.empty()) transport = std::make_unique<HttpTransport>();
    else throw ConfigError("metaprompt needs an agent endpoint (--provider/--model) or --mock");
    const AgentEndpoint endpoint = rc.agent.value_or(AgentEndpoint{});
    LlmExecutor executor(endpoint, *transport);
    LlmThinker thinker(endpoint, *transport);
    const auto res = run_metaprompt(rc.metaprompt, executor, thinker, dir, rc.threads, [&](const CycleReport& r) {
        err << detail::progress_line("round", r, rc.metaprompt.rounds) << std::endl;
    });
    emit_report(dir);
    out << nlohmann::json{{"run_dir", dir.string()},
                          {"rounds", res.reports.size()},
                          {"final_mean", res.reports.back().mean_score},
                          {"final_strategy", res.strategies.back().text}}
               .dump()
        << "\n";
    return kOk;
}

/// Uniform random play: the reference the search is measured against.
inline int cmd_baseline(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    const auto& cfg = rc.evolution;
    if (cfg.games_per_cycle < 1) throw ConfigError("games must be >= 1");
    const fs::path dir = rc.run_dir;
    std::optional<RunLock> lock;
    if (!dir.empty()) {
        lock.emplace(dir);
        write_json(dir / layout::config(), {{"mode", "baseline"}, {"cycles", 1}, {"games_per_cycle", cfg.games_per_cycle}, {"master_seed", cfg.master_seed}});
    }
    const int n = cfg.games_per_cycle;
    std::vector<GameRecord> records(static_cast<std::size_t>(n));
    std::vector<std::string> paths;
    evo2048::detail::parallel_for(n, rc.threads, [&](int g) {
        const std::uint64_t s = game_seed(cfg.master_seed, 1, g);
        records[static_cast<std::size_t>(g)] = play_game(UniformRandomPolicy(derive_seed(s, 1)), s);
        if (!dir.empty()) write_file_atomic(dir / layout::game(1, g), to_jsonl(records[static_cast<std::size_t>(g)]));
    });
    if (!dir.empty())
        for (int g = 0; g < n; ++g) paths.push_back(layout::game(1, g).generic_string());
    const CycleReport r = summarize_cycle(1, "random", records, paths);
    err << detail::progress_line("baseline", r, 1) << std::endl;
    if (!dir.empty()) {
        write_json(dir / layout::cycle(1), to_json(r));
        emit_report(dir);
    }
    out << nlohmann::json{{"policy", "random"}, {"games", n}, {"mean", r.mean_score}, {"ci95_half_width", r.ci95_half_width}}.dump()
        << "\n";
    return kOk;
}

inline int cmd_replay(const std::string& file, std::ostream& out, std::ostream& err) {
    const auto records = read_game_records(file);
    if (records.empty()) throw ParseError("no game records in " + file, 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const GameRecord& rec = records[i];
        Game game(rec.seed);
        out << "game " << i << " seed " << rec.seed << "\n" << to_grid_string(game.board()) << "\n";
        for (std::size_t k = 0; k < rec.steps.size() && !game.over(); ++k) {
            if (!slide(game.board(), rec.steps[k].dir).moved) break;
            game.step(rec.steps[k].dir);
            out << "move " << k + 1 << " " << to_string(rec.steps[k].dir) << " score " << game.record().final_score << "\n"
                << to_grid_string(game.board()) << "\n";
        }
        try {
            verify_record(rec);
        } catch (const DivergenceError& e) {
            err << file << ": game " << i << " diverges: " << e.what() << "\n";
            return kDivergence;
        }
        err << "game " << i << " verified: " << rec.steps.size() << " moves, score " << rec.final_score << "\n";
    }
    return kOk;
}

inline int cmd_eval(const RunConfig& rc, const std::string& spec_file, std::ostream& out, std::ostream& err) {
    ValueFunctionSpec spec;
    try {
        spec = spec_from_json(nlohmann::json::parse(read_file(spec_file)));
        validate(spec);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(spec_file + ": " + e.what());
    } catch (const SpecError& e) {
        throw ConfigError(spec_file + ": " + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(spec_file + ": " + e.what());
    }
    EvolutionConfig cfg = rc.evolution;
    if (cfg.games_per_cycle < 1) throw ConfigError("games must be >= 1");
    cfg.search.validate();
    const CycleOutcome o = run_cycle(spec, cfg, 1, {}, rc.threads);
    err << detail::progress_line("eval", o.report, 1) << std::endl;
    if (o.report.failed) return kRuntimeError;
    out << "spec " << spec.id << "\ngames " << o.records.size() << "\nmean " << detail::fmt("%.2f", o.report.mean_score) << "\nci95 +/- "
        << detail::fmt("%.2f", o.report.ci95_half_width) << "\n";
    detail::print_tables(out, o.records);
    return kOk;
}

inline int cmd_report(const std::string& dir, std::ostream& out) {
    const RunReport r = emit_report(dir);
    out << "mode " << r.mode << (r.partial ? " (partial)" : "") << "\ncycles " << r.cycles.size() << "\n";
    if (r.trend) {
        out << "slope " << detail::fmt("%.6g", r.trend->slope) << "\nrho " << detail::fmt("%.6g", r.trend->pearson_r)
            << "\nspearman_rho " << detail::fmt("%.6g", r.trend->spearman_rho) << (r.trend->degenerate ? "\ndegenerate" : "") << "\n";
    } else {
        out << "trend needs at least two cycles\n";
    }
    detail::print_tables(out, r);
    return kOk;
}

inline void add_options(CLI::App& app, Flags& f) {
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);  // a repeated flag overrides
    app.add_option("mode_and_args", f.args, "MODE [FILE|DIR]: evolve, metaprompt, baseline, replay FILE, report DIR, eval SPEC");
    app.add_option("--mode", f.mode, "evolve | metaprompt | baseline | replay | report | eval")->check(CLI::IsMember(modes()));
    app.add_option("--config", f.config_file, "JSON config file; flags override it")->check(CLI::ExistingFile);
    app.add_option("--run-dir", f.run_dir, "run directory");
    app.add_option("--cycles", f.cycles, "training cycles (metaprompt: rounds)");
    app.add_option("--games", f.games, "games per cycle or round");
    app.add_option("--segment", f.segment, "cycles per rollback segment");
    app.add_option("--mutator", f.mutator, "deterministic | external_llm");
    app.add_option("--playouts", f.playouts, "playouts per root move");
    app.add_option("--depth", f.depth, "playout depth");
    app.add_option("--lambda", f.lambda, "leaf value mix of score gain vs evaluator, in [0, 1]");
    app.add_option("--seed", f.seed, "master seed");
    app.add_option("--threads", f.threads, "worker threads (0 = all cores)");
    app.add_option("--provider", f.provider, "openai | anthropic");
    app.add_option("--model", f.model, "provider model name");
    app.add_flag("--mock", f.mock, "use the offline mock agents");
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app("evo2048: Monte Carlo 2048 player with evolving value functions", "evo2048");
    Flags f;
    add_options(app, f);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }
    try {
        const RunConfig rc = resolve(f);
        if (rc.mode == "evolve") return cmd_evolve(rc, out, err);
        if (rc.mode == "metaprompt") return cmd_metaprompt(rc, out, err);
        if (rc.mode == "baseline") return cmd_baseline(rc, out, err);
        if (rc.mode == "replay") return cmd_replay(detail::require_arg(f, rc, "a game file"), out, err);
        if (rc.mode == "report") return cmd_report(rc.run_dir.empty() ? detail::require_arg(f, rc, "a run directory") : rc.run_dir, out);
        return cmd_eval(rc, detail::require_arg(f, rc, "a spec file"), out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DivergenceError& e) {
        err << "divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"evo2048"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace evo2048::cli
