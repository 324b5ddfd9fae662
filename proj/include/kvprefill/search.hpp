#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "kvprefill/errors.hpp"
#include "kvprefill/partition.hpp"

namespace kvprefill {

using TtftEvaluator = std::function<double(const ContextPartition&)>;

/// Grid geometry and the objective. initial_stride 0 picks the power of two
/// covering C/(4p), which yields the 8/4/2 ladder at C=96, p=4.
struct SearchConfig {
    int64_t grid_width = 5;
    int64_t initial_stride = 0;  // 0 = auto
    int64_t min_stride = 1;
    TtftEvaluator evaluator;

    void validate() const {
        if (grid_width < 3) throw SearchError("grid_width must be at least 3");
        if (min_stride < 1) throw SearchError("min_stride must be at least 1");
        if (initial_stride != 0 && initial_stride < min_stride)
            throw SearchError("initial_stride must be at least min_stride");
        if (!evaluator) throw SearchError("search requires an evaluator");
    }

    int64_t resolve_initial_stride(int64_t C, int64_t p) const {
        if (initial_stride > 0) return initial_stride;
        const double target = static_cast<double>(C) / (4.0 * static_cast<double>(p));
        int64_t stride = 1;
        while (static_cast<double>(stride) < target) stride *= 2;
        return std::max(stride, min_stride);
    }
};

struct SearchResult {
    ContextPartition partition;
    double ttft = 0.0;
    int64_t evaluations = 0;
    int64_t levels = 0;
};

namespace detail {

inline int64_t even_distance(const ContextPartition& part, const ContextPartition& even) {
    int64_t d = 0;
    for (size_t i = 0; i < part.boundaries.size(); ++i)
        d += std::abs(part.boundaries[i] - even.boundaries[i]);
    return d;
}

/// Lowest TTFT wins; ties go to the candidate closest to the even split,
/// then to the lexicographically smaller boundary vector.
struct BestTracker {
    const ContextPartition* even = nullptr;
    std::optional<ContextPartition> partition;
    double ttft = std::numeric_limits<double>::infinity();

    void offer(const ContextPartition& cand, double value) {
        if (!partition) {
            partition = cand;
            ttft = value;
            return;
        }
        if (value > ttft) return;
        if (value < ttft) {
            partition = cand;
            ttft = value;
            return;
        }
        const int64_t d_new = even_distance(cand, *even);
        const int64_t d_old = even_distance(*partition, *even);
        if (d_new < d_old || (d_new == d_old && cand.boundaries < partition->boundaries)) {
            partition = cand;
        }
    }
};

}  // namespace detail

/// p=2 special case: descends on the single boundary offset delta in
/// min_stride steps. Ternary bracketing assumes a unimodal objective; the
/// final bracket is scanned exhaustively, so the exact grid optimum is
/// returned whenever that assumption holds. Flat ties resolve to delta 0.
inline SearchResult binary_search_two(int64_t C, const SearchConfig& config) {
    config.validate();
    if (C < 2) throw SearchError("binary_search_two requires C >= 2");
    const ContextPartition even = even_partition(C, 2);
    const int64_t mid = even.boundaries[1];
    const int64_t step = config.min_stride;

    // delta in units of `step`; boundary = mid + delta*step, kept in [1, C-1].
    const int64_t lo_units = -((mid - 1) / step);
    const int64_t hi_units = (C - 1 - mid) / step;

    SearchResult result;
    std::unordered_map<int64_t, double> cache;
    auto eval_units = [&](int64_t u) {
        const auto it = cache.find(u);
        if (it != cache.end()) return it->second;
        ContextPartition part = even;
        part.boundaries[1] = mid + u * step;
        const double v = config.evaluator(part);
        result.evaluations += 1;
        cache.emplace(u, v);
        return v;
    };

    int64_t lo = lo_units, hi = hi_units;
    while (hi - lo > 8) {
        const int64_t m1 = lo + (hi - lo) / 3;
        const int64_t m2 = hi - (hi - lo) / 3;
        if (eval_units(m1) < eval_units(m2))
            hi = m2;
        else
            lo = m1;
    }

    int64_t best_units = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int64_t u = lo; u <= hi; ++u) {
        const double v = eval_units(u);
        const bool closer_to_zero =
            std::abs(u) < std::abs(best_units) || (std::abs(u) == std::abs(best_units) && u > best_units);
        if (v < best || (v == best && closer_to_zero)) {
            best = v;
            best_units = u;
        }
    }
    // Flat objectives should land on the even split even when the bracket
    // drifted away from it.
    if (lo_units <= 0 && 0 <= hi_units && eval_units(0) <= best) {
        best = eval_units(0);
        best_units = 0;
    }

    ContextPartition part = even;
    part.boundaries[1] = mid + best_units * step;
    result.partition = part;
    result.ttft = best;
    result.levels = 1;
    return result;
}

/// Multi-level grid descent for p >= 2: each level evaluates every feasible
/// combination of grid_width offsets per interior boundary around the
/// incumbent, then halves the stride. The even split seeds level one, so the
/// result is never worse than even under the same evaluator.
inline SearchResult hierarchical_grid_search(int64_t C, int64_t p, const SearchConfig& config) {
    config.validate();
    if (p < 2) throw SearchError("hierarchical_grid_search requires p >= 2");
    const ContextPartition even = even_partition(C, p);

    SearchResult result;
    detail::BestTracker incumbent;
    incumbent.even = &even;
    incumbent.offer(even, config.evaluator(even));
    result.evaluations += 1;

    const int64_t axes = p - 1;
    const int64_t half = config.grid_width / 2;
    int64_t stride = config.resolve_initial_stride(C, p);

    while (true) {
        result.levels += 1;
        const ContextPartition center = *incumbent.partition;
        detail::BestTracker level_best;
        level_best.even = &even;

        // Odometer over grid_width^(p-1) offset combinations, lexicographic.
        std::vector<int64_t> digit(static_cast<size_t>(axes), 0);
        bool level_found = false;
        while (true) {
            SearchOffsets offsets;
            offsets.deltas.resize(static_cast<size_t>(axes));
            for (int64_t a = 0; a < axes; ++a)
                offsets.deltas[static_cast<size_t>(a)] = (digit[static_cast<size_t>(a)] - half) * stride;
            if (const auto cand = offsets.apply(center)) {
                level_best.offer(*cand, config.evaluator(*cand));
                result.evaluations += 1;
                level_found = true;
            }
            int64_t a = axes - 1;
            while (a >= 0 && ++digit[static_cast<size_t>(a)] == config.grid_width) {
                digit[static_cast<size_t>(a)] = 0;
                --a;
            }
            if (a < 0) break;
        }
        if (!level_found) throw SearchError("all grid points infeasible");

        incumbent.offer(*level_best.partition, level_best.ttft);
        if (stride == config.min_stride) break;
        stride = std::max(config.min_stride, stride / 2);
    }

    result.partition = *incumbent.partition;
    result.ttft = incumbent.ttft;
    return result;
}

}  // namespace kvprefill
