#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "kvprefill/errors.hpp"

namespace kvprefill {

/// Boundary positions [b0=0, b1, ..., b_p=C] over a context of C tokens.
/// Worker i owns rows [b_i, b_{i+1}); every slice is non-empty.
struct ContextPartition {
    int64_t context_length = 0;
    std::vector<int64_t> boundaries;

    int64_t process_count() const { return static_cast<int64_t>(boundaries.size()) - 1; }

    std::vector<int64_t> sizes() const {
        std::vector<int64_t> out;
        out.reserve(boundaries.size() - 1);
        for (size_t i = 0; i + 1 < boundaries.size(); ++i)
            out.push_back(boundaries[i + 1] - boundaries[i]);
        return out;
    }

    void validate() const {
        if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != context_length)
            throw PartitionError("boundaries must run from 0 to the context length");
        for (size_t i = 0; i + 1 < boundaries.size(); ++i)
            if (boundaries[i] >= boundaries[i + 1])
                throw PartitionError("partition sizes must be at least 1");
    }

    static ContextPartition from_sizes(const std::vector<int64_t>& sizes) {
        ContextPartition part;
        part.boundaries.reserve(sizes.size() + 1);
        part.boundaries.push_back(0);
        int64_t pos = 0;
        for (int64_t c : sizes) {
            pos += c;
            part.boundaries.push_back(pos);
        }
        part.context_length = pos;
        part.validate();
        return part;
    }

    bool operator==(const ContextPartition& other) const {
        return context_length == other.context_length && boundaries == other.boundaries;
    }
};

/// Near-equal split; the first (C mod p) workers take the extra token.
inline ContextPartition even_partition(int64_t C, int64_t p) {
    if (p < 1) throw PartitionError("process count must be at least 1");
    if (C < p)
        throw PartitionError("cannot split " + std::to_string(C) + " tokens over " +
                             std::to_string(p) + " workers");
    const int64_t base = C / p;
    const int64_t extra = C % p;
    std::vector<int64_t> sizes(static_cast<size_t>(p), base);
    for (int64_t i = 0; i < extra; ++i) sizes[static_cast<size_t>(i)] += 1;
    return ContextPartition::from_sizes(sizes);
}

/// Rounds C*ratio_i down and hands the leftover tokens one each to the
/// largest fractional parts (ties toward lower index). Shares are formed in
/// long double: the ratio inputs are already rounded once, and a second
/// double rounding of the products can collapse distinct fractional parts.
/// Zero-size results borrow a token from the largest slice.
inline ContextPartition partition_from_ratios(int64_t C, const std::vector<double>& ratios) {
    const int64_t p = static_cast<int64_t>(ratios.size());
    if (p < 1) throw PartitionError("ratio vector must be non-empty");
    if (C < p) throw PartitionError("context shorter than the ratio vector");
    long double sum = 0;
    for (double r : ratios) {
        if (!(r > 0)) throw PartitionError("ratios must be positive");
        sum += static_cast<long double>(r);
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6)
        throw PartitionError("ratios must sum to 1");

    std::vector<int64_t> sizes(static_cast<size_t>(p));
    std::vector<long double> fracs(static_cast<size_t>(p));
    int64_t assigned = 0;
    for (int64_t i = 0; i < p; ++i) {
        const long double share =
            static_cast<long double>(C) * static_cast<long double>(ratios[static_cast<size_t>(i)]) / sum;
        const int64_t whole = static_cast<int64_t>(std::floor(share));
        sizes[static_cast<size_t>(i)] = whole;
        fracs[static_cast<size_t>(i)] = share - static_cast<long double>(whole);
        assigned += whole;
    }

    int64_t leftover = C - assigned;
    std::vector<int64_t> order(static_cast<size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return fracs[static_cast<size_t>(a)] > fracs[static_cast<size_t>(b)];
    });
    for (int64_t k = 0; k < leftover; ++k)
        sizes[static_cast<size_t>(order[static_cast<size_t>(k % p)])] += 1;

    // Minimum-size enforcement: move tokens from the currently largest slice
    // (lowest index on ties) into empty ones.
    for (size_t i = 0; i < sizes.size(); ++i) {
        while (sizes[i] < 1) {
            const auto largest = std::max_element(sizes.begin(), sizes.end());
            if (*largest <= 1) throw PartitionError("cannot enforce minimum slice size");
            (*largest) -= 1;
            sizes[i] += 1;
        }
    }
    return ContextPartition::from_sizes(sizes);
}

/// Signed token offsets for boundaries b_1..b_{p-1} relative to a base
/// partition. Application fails (nullopt) when a boundary would leave
/// (0, C) or slices would become empty.
struct SearchOffsets {
    std::vector<int64_t> deltas;

    std::optional<ContextPartition> apply(const ContextPartition& base) const {
        if (static_cast<int64_t>(deltas.size()) != base.process_count() - 1)
            throw PartitionError("offset arity must be p-1");
        ContextPartition out = base;
        for (size_t k = 0; k < deltas.size(); ++k) out.boundaries[k + 1] += deltas[k];
        for (size_t i = 0; i + 1 < out.boundaries.size(); ++i)
            if (out.boundaries[i] >= out.boundaries[i + 1]) return std::nullopt;
        return out;
    }
};

/// Per-entry lookup-table build cost, as the estimate is usually written:
/// T * (N-1)^grid_width * log_{grid_width-1}(C). The exponent placement is
/// kept as printed even though a grid of w values per axis would suggest
/// w^(N-1); the printed form is what the headline hour figures come from.
inline double table_build_cost(double T, int64_t N, int64_t C, int64_t grid_width = 5) {
    if (N < 2 || C < 2) throw InputError("table_build_cost requires N >= 2 and C >= 2");
    const double combos = std::pow(static_cast<double>(N - 1), static_cast<double>(grid_width));
    const double levels = std::log2(static_cast<double>(C)) / std::log2(static_cast<double>(grid_width - 1));
    return T * combos * levels;
}

}  // namespace kvprefill
