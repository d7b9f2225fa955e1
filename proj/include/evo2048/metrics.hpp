#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "errors.hpp"
#include "game.hpp"

namespace evo2048 {

struct CycleStats {
    double mean = 0.0;
    double ci95_half_width = 0.0;
};

/// Mean and two-sided 95% t-interval half-width (n - 1 degrees of freedom).
inline CycleStats cycle_stats(const std::vector<double>& scores) {
    if (scores.empty()) throw PreconditionError("cycle_stats needs at least one score");
    const double n = static_cast<double>(scores.size());
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    if (scores.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : scores) ss += (x - mean) * (x - mean);
    if (ss == 0.0) return {mean, 0.0};
    const double sd = std::sqrt(ss / (n - 1.0));
    boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    return {mean, t * sd / std::sqrt(n)};
}

struct TrendSummary {
    double slope = 0.0;  // points per cycle
    double intercept = 0.0;
    double pearson_r = 0.0;
    double spearman_rho = 0.0;
    int n_cycles = 0;
    bool degenerate = false;  // zero variance in the means; r and rho reported as 0
};

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks, ties share the average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

/// OLS of mean against 1-based cycle index, plus Pearson r and Spearman rho.
inline TrendSummary trend(const std::vector<double>& cycle_means) {
    if (cycle_means.size() < 2) throw PreconditionError("trend needs at least two cycles");
    const std::size_t n = cycle_means.size();
    std::vector<double> x(n);
    std::iota(x.begin(), x.end(), 1.0);
    const double mx = (static_cast<double>(n) + 1.0) / 2.0;
    const double my = std::accumulate(cycle_means.begin(), cycle_means.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (cycle_means[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    TrendSummary t;
    t.n_cycles = static_cast<int>(n);
    t.slope = sxy / sxx;
    t.intercept = my - t.slope * mx;
    t.degenerate = std::all_of(cycle_means.begin(), cycle_means.end(), [&](double v) { return v == cycle_means[0]; });
    if (!t.degenerate) {
        t.pearson_r = detail::pearson(x, cycle_means);
        t.spearman_rho = detail::pearson(x, detail::average_ranks(cycle_means));
    }
    return t;
}

enum class DistributionKind { HighestTile, ScoreRange };

constexpr std::string_view to_string(DistributionKind k) {
    return k == DistributionKind::HighestTile ? "highest_tile" : "score_range";
}

struct DistributionBucket {
    std::string label;
    int count = 0;
    double percentage = 0.0;  // unrounded
};

struct DistributionTable {
    DistributionKind kind = DistributionKind::HighestTile;
    std::vector<DistributionBucket> buckets;  // fixed label set, largest first
    int total_games = 0;
};

// Labels in table order. Highest tiles outside 8..2048 are clamped into the end buckets.
inline const std::vector<std::string>& distribution_labels(DistributionKind kind) {
    static const std::vector<std::string> tiles{"2048", "1024", "512", "256", "128", "64", "32", "16", "8"};
    static const std::vector<std::string> ranges{"25K+", "20K-25K", "15K-20K", "10K-15K", "5K-10K", "0-5K"};
    return kind == DistributionKind::HighestTile ? tiles : ranges;
}

inline std::size_t bucket_index(DistributionKind kind, const GameRecord& rec) {
    if (kind == DistributionKind::HighestTile) {
        int e = 0;
        while ((std::uint32_t{1} << (e + 1)) <= rec.highest_tile && e < 31) ++e;
        e = std::clamp(e, 3, 11);
        return static_cast<std::size_t>(11 - e);
    }
    const std::uint64_t k = std::min<std::uint64_t>(rec.final_score / 5000, 5);
    return static_cast<std::size_t>(5 - k);
}

inline DistributionTable distribution(const std::vector<GameRecord>& records, DistributionKind kind) {
    if (records.empty()) throw PreconditionError("distribution needs at least one game record");
    DistributionTable t;
    t.kind = kind;
    t.total_games = static_cast<int>(records.size());
    for (const auto& label : distribution_labels(kind)) t.buckets.push_back({label, 0, 0.0});
    for (const auto& rec : records) ++t.buckets[bucket_index(kind, rec)].count;
    for (auto& b : t.buckets) b.percentage = 100.0 * b.count / t.total_games;
    return t;
}

/// Percentage rounded to one decimal for display.
inline double display_percentage(double p) { return std::round(p * 10.0) / 10.0; }

}  // namespace evo2048
