#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvprefill/errors.hpp"
#include "kvprefill/matrix.hpp"

namespace kvprefill {

/// Per-layer K and V row blocks covering token positions [start_pos, end_pos).
/// The unit handed between workers and returned from the serial forward pass.
template <typename T>
struct KVCacheSegment {
    int64_t layer = 0;
    int64_t start_pos = 0;  // inclusive
    int64_t end_pos = 0;    // exclusive
    Matrix<T> K;
    Matrix<T> V;

    int64_t token_rows() const { return end_pos - start_pos; }

    void validate() const {
        if (start_pos < 0 || start_pos >= end_pos)
            throw CacheError("segment positions must satisfy 0 <= start < end");
        if (K.rows != token_rows() || !K.same_shape(V))
            throw CacheError("segment K/V rows must match the covered token range");
    }
};

/// Query row i may attend to key columns 0..(offset + i) only, where offset
/// counts cached prefix tokens.
struct CausalMask {
    int64_t offset = 0;
    int64_t rows = 0;
};

/// Checks that segments for one layer are contiguous and gap-free from
/// position 0 and jointly cover [0, expected_tokens).
template <typename T>
void validate_cache_coverage(const std::vector<KVCacheSegment<T>>& segments,
                             int64_t expected_tokens) {
    int64_t next = 0;
    for (const auto& seg : segments) {
        seg.validate();
        if (seg.start_pos != next)
            throw CacheError("cache gap: expected segment at position " + std::to_string(next) +
                             ", got " + std::to_string(seg.start_pos));
        next = seg.end_pos;
    }
    if (next != expected_tokens)
        throw CacheError("cache covers " + std::to_string(next) + " tokens, expected " +
                         std::to_string(expected_tokens));
}

}  // namespace kvprefill
