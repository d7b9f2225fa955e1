#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "board.hpp"
#include "errors.hpp"
#include "json.hpp"

namespace evo2048 {

// Closed vocabulary of heuristic terms. Every term maps a board into [0, 1].
enum class TermKind {
    EmptyRatio,
    HighestRatio,
    CornerBonus,
    CornerProximity,
    BottomRowRatio,
    MergeValueRatio,
    MergeRatio,
    MonotonicityScore,
    SnakeRatio,
    SmoothnessRatio,
};

inline constexpr std::array<TermKind, 10> kAllTerms{
    TermKind::EmptyRatio,     TermKind::HighestRatio,    TermKind::CornerBonus,      TermKind::CornerProximity,
    TermKind::BottomRowRatio, TermKind::MergeValueRatio, TermKind::MergeRatio,       TermKind::MonotonicityScore,
    TermKind::SnakeRatio,     TermKind::SmoothnessRatio,
};

constexpr std::string_view term_name(TermKind k) {
    switch (k) {
        case TermKind::EmptyRatio: return "empty_ratio";
        case TermKind::HighestRatio: return "highest_ratio";
        case TermKind::CornerBonus: return "corner_bonus";
        case TermKind::CornerProximity: return "corner_proximity";
        case TermKind::BottomRowRatio: return "bottom_row_ratio";
        case TermKind::MergeValueRatio: return "merge_value_ratio";
        case TermKind::MergeRatio: return "merge_ratio";
        case TermKind::MonotonicityScore: return "monotonicity_score";
        case TermKind::SnakeRatio: return "snake_ratio";
        case TermKind::SmoothnessRatio: return "smoothness_ratio";
    }
    return "?";
}

inline std::optional<TermKind> parse_term_name(std::string_view name) {
    for (TermKind k : kAllTerms) {
        if (term_name(k) == name) return k;
    }
    return std::nullopt;
}

// Tunable scalar parameters per term, with their defaults. Terms not listed take none.
inline const std::map<std::string, double>& default_params(TermKind k) {
    static const std::map<std::string, double> none;
    static const std::map<std::string, double> corner_proximity{{"br_weight", 0.7}};
    static const std::map<std::string, double> highest_ratio{{"target_exponent", 11.0}};
    switch (k) {
        case TermKind::CornerProximity: return corner_proximity;
        case TermKind::HighestRatio: return highest_ratio;
        default: return none;
    }
}

struct HeuristicTerm {
    TermKind kind = TermKind::EmptyRatio;
    std::map<std::string, double> params;  // overrides of default_params(kind)

    double param(const std::string& name) const {
        if (auto it = params.find(name); it != params.end()) return it->second;
        return default_params(kind).at(name);
    }

    friend bool operator==(const HeuristicTerm&, const HeuristicTerm&) = default;
};

namespace terms {

namespace detail {

// Position of the highest tile, first in row-major order on ties; nullopt on an empty board.
inline std::optional<std::pair<int, int>> highest_position(Board b) {
    int best = 0, pos = -1;
    for (int i = 0; i < kCells; ++i) {
        if (b.at(i) > best) {
            best = b.at(i);
            pos = i;
        }
    }
    if (pos < 0) return std::nullopt;
    return std::pair{pos / kSide, pos % kSide};
}

template <class F>
void for_each_adjacent_pair(Board b, F&& f) {
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            if (c + 1 < kSide) f(b.at(r, c), b.at(r, c + 1));
            if (r + 1 < kSide) f(b.at(r, c), b.at(r + 1, c));
        }
    }
}

// Literal monotone check over tile values (empty counts as 0); a line with no
// tiles scores nothing.
inline bool line_monotone(const std::array<int, 4>& e) {
    bool any = false, nonincreasing = true, nondecreasing = true;
    for (int i = 0; i < 4; ++i) {
        any = any || e[i] != 0;
        if (i < 3) {
            nonincreasing = nonincreasing && tile_value(e[i]) >= tile_value(e[i + 1]);
            nondecreasing = nondecreasing && tile_value(e[i]) <= tile_value(e[i + 1]);
        }
    }
    return any && (nonincreasing || nondecreasing);
}

}  // namespace detail

// 15-link zigzag from the bottom-right corner.
inline constexpr std::array<std::pair<int, int>, 16> kSnakePath{{
    {3, 3}, {3, 2}, {3, 1}, {3, 0},
    {2, 0}, {2, 1}, {2, 2}, {2, 3},
    {1, 3}, {1, 2}, {1, 1}, {1, 0},
    {0, 0}, {0, 1}, {0, 2}, {0, 3},
}};

inline double empty_ratio(Board b) { return b.empty_count() / 16.0; }

inline double highest_ratio(Board b, double target_exponent = 11.0) {
    const int e = b.max_exponent();
    if (e == 0) return 0.0;
    return std::clamp(e / target_exponent, 0.0, 1.0);
}

// Bottom corners 1.0, top corners 0.5, inner bottom-edge cells 0.25, else 0.
inline double corner_bonus(Board b) {
    const auto pos = detail::highest_position(b);
    if (!pos) return 0.0;
    const auto [r, c] = *pos;
    const bool corner_col = c == 0 || c == 3;
    if (r == 3 && corner_col) return 1.0;
    if (r == 0 && corner_col) return 0.5;
    if (r == 3) return 0.25;
    return 0.0;
}

inline double br_proximity(Board b) {
    const auto pos = detail::highest_position(b);
    if (!pos) return 0.0;
    const int dist = (3 - pos->first) + (3 - pos->second);
    return 1.0 - dist / 6.0;
}

inline double other_corners_proximity(Board b) {
    const auto pos = detail::highest_position(b);
    if (!pos) return 0.0;
    constexpr std::array<std::pair<int, int>, 3> corners{{{0, 0}, {0, 3}, {3, 0}}};
    double best = 0.0;
    for (auto [cr, cc] : corners) {
        const int dist = std::abs(pos->first - cr) + std::abs(pos->second - cc);
        best = std::max(best, 1.0 - dist / 6.0);
    }
    return best;
}

inline double corner_proximity(Board b, double br_weight = 0.7) {
    return br_weight * br_proximity(b) + (1.0 - br_weight) * other_corners_proximity(b);
}

inline double bottom_row_ratio(Board b) {
    const double total = static_cast<double>(b.tile_sum());
    if (total == 0.0) return 0.0;
    double bottom = 0.0;
    for (int c = 0; c < kSide; ++c) bottom += tile_value(b.at(3, c));
    return bottom / total;
}

inline double merge_ratio(Board b) {
    int pairs = 0;
    detail::for_each_adjacent_pair(b, [&](int x, int y) { pairs += (x != 0 && x == y); });
    return pairs / 24.0;
}

// Each equal pair contributes one tile's value; a tile sits in at most 4 pairs,
// so the sum never exceeds twice the board total.
inline double merge_value_ratio(Board b) {
    const double total = static_cast<double>(b.tile_sum());
    if (total == 0.0) return 0.0;
    double value = 0.0;
    detail::for_each_adjacent_pair(b, [&](int x, int y) {
        if (x != 0 && x == y) value += tile_value(x);
    });
    return value / (2.0 * total);
}

// 0.5 for a monotone bottom row, 0.5 for a right column nondecreasing toward the bottom.
inline double monotonicity_score(Board b) {
    double score = 0.0;
    std::array<int, 4> bottom{b.at(3, 0), b.at(3, 1), b.at(3, 2), b.at(3, 3)};
    if (detail::line_monotone(bottom)) score += 0.5;
    const std::array<int, 4> right{b.at(0, 3), b.at(1, 3), b.at(2, 3), b.at(3, 3)};
    bool any = false, toward_bottom = true;
    for (int i = 0; i < 4; ++i) {
        any = any || right[i] != 0;
        if (i < 3) toward_bottom = toward_bottom && tile_value(right[i]) <= tile_value(right[i + 1]);
    }
    if (any && toward_bottom) score += 0.5;
    return std::min(score, 1.0);
}

inline double snake_ratio(Board b) {
    int satisfied = 0;
    for (std::size_t i = 0; i + 1 < kSnakePath.size(); ++i) {
        const int a = b.at(kSnakePath[i].first, kSnakePath[i].second);
        const int n = b.at(kSnakePath[i + 1].first, kSnakePath[i + 1].second);
        satisfied += (a > 0 && n > 0 && a >= n);
    }
    return satisfied / 15.0;
}

// Exponents are log2 of the tile values.
inline double smoothness_ratio(Board b) {
    double s = 0.0;
    detail::for_each_adjacent_pair(b, [&](int x, int y) {
        if (x != 0 && y != 0) s += 1.0 / (1.0 + std::abs(x - y));
    });
    return s / 24.0;
}

}  // namespace terms

inline double eval_term(const HeuristicTerm& term, Board b) {
    switch (term.kind) {
        case TermKind::EmptyRatio: return terms::empty_ratio(b);
        case TermKind::HighestRatio: return terms::highest_ratio(b, term.param("target_exponent"));
        case TermKind::CornerBonus: return terms::corner_bonus(b);
        case TermKind::CornerProximity: return terms::corner_proximity(b, term.param("br_weight"));
        case TermKind::BottomRowRatio: return terms::bottom_row_ratio(b);
        case TermKind::MergeValueRatio: return terms::merge_value_ratio(b);
        case TermKind::MergeRatio: return terms::merge_ratio(b);
        case TermKind::MonotonicityScore: return terms::monotonicity_score(b);
        case TermKind::SnakeRatio: return terms::snake_ratio(b);
        case TermKind::SmoothnessRatio: return terms::smoothness_ratio(b);
    }
    throw SpecError("unknown term");
}

enum class SpecOrigin { Seed, Mutated, RolledBack };

constexpr std::string_view to_string(SpecOrigin o) {
    switch (o) {
        case SpecOrigin::Seed: return "seed";
        case SpecOrigin::Mutated: return "mutated";
        case SpecOrigin::RolledBack: return "rolled_back";
    }
    return "?";
}

inline std::optional<SpecOrigin> parse_origin(std::string_view s) {
    if (s == "seed") return SpecOrigin::Seed;
    if (s == "mutated") return SpecOrigin::Mutated;
    if (s == "rolled_back") return SpecOrigin::RolledBack;
    return std::nullopt;
}

// Transport for an out-of-process evaluator: a shell command speaking the
// line protocol in external_evaluator.hpp.
struct ExternalEvaluatorHandle {
    std::string command;
    int protocol_version = 1;
    int timeout_ms = 2000;

    friend bool operator==(const ExternalEvaluatorHandle&, const ExternalEvaluatorHandle&) = default;
};

// Generated evaluator program. `program` is the listing the command runs, kept
// verbatim for the run log.
struct ExternalProgram {
    ExternalEvaluatorHandle handle;
    std::string program;

    friend bool operator==(const ExternalProgram&, const ExternalProgram&) = default;
};

struct WeightedTerm {
    HeuristicTerm term;
    double weight = 0.0;

    friend bool operator==(const WeightedTerm&, const WeightedTerm&) = default;
};

/// Versioned composite value function: a weighted sum of vocabulary terms, or
/// an external evaluator program when `external` is set.
struct ValueFunctionSpec {
    std::string id;
    std::vector<WeightedTerm> terms;
    std::optional<std::string> lineage;
    SpecOrigin origin = SpecOrigin::Seed;
    int created_cycle = 0;
    std::optional<ExternalProgram> external;

    double weight_of(TermKind k) const {
        for (const auto& t : terms)
            if (t.term.kind == k) return t.weight;
        return 0.0;
    }
    bool has_term(TermKind k) const {
        return std::any_of(terms.begin(), terms.end(), [k](const WeightedTerm& t) { return t.term.kind == k; });
    }
    double weight_sum() const {
        double s = 0.0;
        for (const auto& t : terms) s += t.weight;
        return s;
    }

    friend bool operator==(const ValueFunctionSpec&, const ValueFunctionSpec&) = default;
};

inline void validate(const ValueFunctionSpec& spec) {
    if (spec.id.empty()) throw SpecError("spec id is empty");
    if (spec.external) {
        if (spec.external->handle.command.empty()) throw SpecError("external evaluator command is empty");
        if (spec.external->handle.timeout_ms <= 0) throw SpecError("external evaluator timeout must be positive");
        return;
    }
    if (spec.terms.empty()) throw SpecError("spec " + spec.id + " has no terms");
    std::set<TermKind> seen;
    bool any_positive = false;
    for (const auto& t : spec.terms) {
        const std::string name(term_name(t.term.kind));
        if (!seen.insert(t.term.kind).second) throw SpecError("duplicate term " + name);
        if (!std::isfinite(t.weight) || t.weight < 0.0) throw SpecError("term " + name + " has negative or non-finite weight");
        any_positive = any_positive || t.weight > 0.0;
        for (const auto& [k, v] : t.term.params) {
            if (!default_params(t.term.kind).contains(k)) throw SpecError("term " + name + " has unknown parameter " + k);
            if (!std::isfinite(v)) throw SpecError("term " + name + " parameter " + k + " is not finite");
        }
    }
    if (!any_positive) throw SpecError("spec " + spec.id + " has no positive weight");
}

/// Weighted sum of the spec's terms. Declarative specs only; external specs go
/// through ExternalEvaluator.
inline double eval_spec(const ValueFunctionSpec& spec, Board b) {
    if (spec.external) throw SpecError("spec " + spec.id + " is external; evaluate it out of process");
    double v = 0.0;
    for (const auto& t : spec.terms) v += t.weight * eval_term(t.term, b);
    return v;
}

inline ValueFunctionSpec make_spec(std::string id, std::initializer_list<std::pair<TermKind, double>> weights) {
    ValueFunctionSpec s;
    s.id = std::move(id);
    for (auto [k, w] : weights) s.terms.push_back({HeuristicTerm{k, {}}, w});
    return s;
}

struct CanonicalSpecs {
    ValueFunctionSpec pre10;
    ValueFunctionSpec post10;
};

/// The two reference value functions: before and after the structural rewrite.
inline CanonicalSpecs canonical_specs() {
    using enum TermKind;
    ValueFunctionSpec pre = make_spec("seed-pre10", {{EmptyRatio, 0.35},
                                                     {HighestRatio, 0.20},
                                                     {CornerBonus, 0.15},
                                                     {BottomRowRatio, 0.10},
                                                     {MergeValueRatio, 0.10},
                                                     {MergeRatio, 0.05},
                                                     {MonotonicityScore, 0.05}});
    ValueFunctionSpec post = make_spec("seed-post10", {{EmptyRatio, 0.30},
                                                       {HighestRatio, 0.20},
                                                       {CornerProximity, 0.15},
                                                       {MergeRatio, 0.10},
                                                       {SmoothnessRatio, 0.10},
                                                       {SnakeRatio, 0.15}});
    return {std::move(pre), std::move(post)};
}

// ---- JSON ----

inline nlohmann::json to_json(const ValueFunctionSpec& s) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : s.terms) {
        terms.push_back({{"name", std::string(term_name(t.term.kind))},
                         {"weight", t.weight},
                         {"params", nlohmann::json(t.term.params)}});
    }
    nlohmann::json j{{"id", s.id},
                     {"lineage", s.lineage ? nlohmann::json(*s.lineage) : nlohmann::json(nullptr)},
                     {"origin", std::string(to_string(s.origin))},
                     {"created_cycle", s.created_cycle},
                     {"terms", std::move(terms)}};
    if (s.external) {
        j["external"] = {{"command", s.external->handle.command},
                         {"protocol_version", s.external->handle.protocol_version},
                         {"timeout_ms", s.external->handle.timeout_ms},
                         {"program", s.external->program}};
    }
    return j;
}

/// Parses and validates. Unknown term names and malformed fields raise SpecError.
inline ValueFunctionSpec spec_from_json(const nlohmann::json& j) {
    ValueFunctionSpec s;
    try {
        s.id = j.at("id").get<std::string>();
        if (j.contains("lineage") && !j["lineage"].is_null()) s.lineage = j["lineage"].get<std::string>();
        const auto origin = parse_origin(j.value("origin", std::string("seed")));
        if (!origin) throw SpecError("unknown origin " + j.at("origin").dump());
        s.origin = *origin;
        s.created_cycle = j.value("created_cycle", 0);
        for (const auto& t : j.value("terms", nlohmann::json::array())) {
            const std::string name = t.at("name").get<std::string>();
            const auto kind = parse_term_name(name);
            if (!kind) throw SpecError("unknown term " + name);
            WeightedTerm wt{HeuristicTerm{*kind, {}}, t.at("weight").get<double>()};
            if (t.contains("params")) wt.term.params = t["params"].get<std::map<std::string, double>>();
            s.terms.push_back(std::move(wt));
        }
        if (j.contains("external") && !j["external"].is_null()) {
            const auto& e = j["external"];
            s.external = ExternalProgram{ExternalEvaluatorHandle{e.at("command").get<std::string>(),
                                                                 e.value("protocol_version", 1), e.value("timeout_ms", 2000)},
                                         e.value("program", std::string())};
        }
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("malformed spec: ") + e.what());
    }
    validate(s);
    return s;
}

}  // namespace evo2048
