#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <vector>

#include "evolution.hpp"
#include "metrics.hpp"

namespace evo2048 {

inline constexpr int kReportSchemaVersion = 1;

struct CycleSummary {
    int cycle_index = 0;
    std::string spec_id;
    int n_games = 0;
    double mean = 0.0;
    double ci95_half_width = 0.0;
    bool failed = false;
};

struct RunReport {
    std::string mode;
    bool partial = false;
    std::optional<int> expected_cycles;
    std::vector<CycleSummary> cycles;
    std::optional<TrendSummary> trend;  // needs two cycles
    DistributionTable highest_tiles;
    DistributionTable score_ranges;
    int rollbacks = 0;
};

namespace detail {

// Shortest round-trip form, locale independent.
inline std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

inline std::string csv_table(const DistributionTable& t) {
    std::string out = "label,count,percentage\n";
    for (const auto& b : t.buckets)
        out += b.label + "," + std::to_string(b.count) + "," + fmt_double(display_percentage(b.percentage)) + "\n";
    return out;
}

inline nlohmann::json table_json(const DistributionTable& t) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : t.buckets)
        buckets.push_back({{"label", b.label}, {"count", b.count}, {"percentage", display_percentage(b.percentage)}});
    return {{"kind", std::string(to_string(t.kind))}, {"total_games", t.total_games}, {"buckets", buckets}};
}

}  // namespace detail

/// Recomputes every statistic from the raw game records of a run directory.
/// Failed cycles carry no complete games; their recorded zero scores are used.
inline RunReport build_report(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw PersistenceError("run directory " + run_dir.string() + " is not readable");
    const std::vector<CycleReport> cycles = load_cycle_reports(run_dir);
    if (cycles.empty()) throw PersistenceError("no cycles found in " + run_dir.string());

    RunReport rep;
    rep.mode = "evolve";
    if (fs::exists(run_dir / layout::config())) {
        const auto cfg = read_json(run_dir / layout::config());
        rep.mode = cfg.value("mode", std::string("evolve"));
        if (cfg.contains("cycles")) rep.expected_cycles = cfg["cycles"].get<int>();
        else if (cfg.contains("rounds")) rep.expected_cycles = cfg["rounds"].get<int>();
    }
    rep.partial = rep.expected_cycles && static_cast<int>(cycles.size()) < *rep.expected_cycles;

    std::vector<GameRecord> all;
    std::vector<double> means;
    for (const auto& c : cycles) {
        std::vector<double> scores;
        if (c.failed) {
            scores = c.scores;
        } else {
            for (const auto& p : c.game_records) {
                for (auto& rec : read_game_records((run_dir / p).string())) {
                    scores.push_back(static_cast<double>(rec.final_score));
                    all.push_back(std::move(rec));
                }
            }
            if (scores.size() != c.scores.size())
                throw PersistenceError("cycle " + std::to_string(c.cycle_index) + " lists " + std::to_string(c.scores.size()) +
                                       " scores but " + std::to_string(scores.size()) + " game records were found");
        }
        const CycleStats st = cycle_stats(scores);
        rep.cycles.push_back({c.cycle_index, c.spec_id, static_cast<int>(scores.size()), st.mean, st.ci95_half_width, c.failed});
        means.push_back(st.mean);
    }
    if (means.size() >= 2) rep.trend = trend(means);
    if (all.empty()) throw PersistenceError("no game records found in " + run_dir.string());
    rep.highest_tiles = distribution(all, DistributionKind::HighestTile);
    rep.score_ranges = distribution(all, DistributionKind::ScoreRange);
    if (fs::exists(run_dir / layout::lineage()))
        rep.rollbacks = static_cast<int>(lineage_from_json(read_json(run_dir / layout::lineage())).rollbacks.size());
    return rep;
}

inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json cycles = nlohmann::json::array();
    for (const auto& c : r.cycles)
        cycles.push_back({{"cycle", c.cycle_index},
                          {"spec_id", c.spec_id},
                          {"n_games", c.n_games},
                          {"mean", c.mean},
                          {"ci95_half_width", c.ci95_half_width},
                          {"ci_low", c.mean - c.ci95_half_width},
                          {"ci_high", c.mean + c.ci95_half_width},
                          {"failed", c.failed}});
    nlohmann::json t = nullptr;
    if (r.trend)
        t = {{"slope", r.trend->slope},
             {"intercept", r.trend->intercept},
             {"rho", r.trend->pearson_r},
             {"pearson_r", r.trend->pearson_r},
             {"spearman_rho", r.trend->spearman_rho},
             {"n_cycles", r.trend->n_cycles},
             {"degenerate", r.trend->degenerate}};
    return {{"schema_version", kReportSchemaVersion},
            {"mode", r.mode},
            {"partial", r.partial},
            {"expected_cycles", r.expected_cycles ? nlohmann::json(*r.expected_cycles) : nlohmann::json(nullptr)},
            {"n_cycles", r.cycles.size()},
            {"cycles", cycles},
            {"trend", t},
            {"rollbacks", r.rollbacks},
            {"distributions", {{"highest_tile", detail::table_json(r.highest_tiles)}, {"score_range", detail::table_json(r.score_ranges)}}}};
}

/// Writes report.json, cycles.csv, highest_tiles.csv and score_ranges.csv.
/// Output depends only on the persisted records, so reruns are byte-identical.
inline RunReport emit_report(const fs::path& run_dir) {
    RunReport r = build_report(run_dir);
    write_json(run_dir / "report.json", to_json(r));
    std::string csv = "cycle,mean,ci_low,ci_high\n";
    for (const auto& c : r.cycles)
        csv += std::to_string(c.cycle_index) + "," + detail::fmt_double(c.mean) + "," +
               detail::fmt_double(c.mean - c.ci95_half_width) + "," + detail::fmt_double(c.mean + c.ci95_half_width) + "\n";
    write_file_atomic(run_dir / "cycles.csv", csv);
    write_file_atomic(run_dir / "highest_tiles.csv", detail::csv_table(r.highest_tiles));
    write_file_atomic(run_dir / "score_ranges.csv", detail::csv_table(r.score_ranges));
    return r;
}

}  // namespace evo2048
