#pragma once

#include <cstdint>
#include <string>

#include "kvprefill/errors.hpp"

namespace kvprefill {

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

/// Toy causal-transformer shape. n_kv_heads == n_heads gives multi-head
/// attention, 1 gives multi-query, and any other divisor grouped-query.
struct ModelConfig {
    int64_t d_model = 32;
    int64_t n_heads = 4;
    int64_t n_kv_heads = 4;
    int64_t n_layers = 2;
    uint64_t seed = 1;
    Precision precision = Precision::f64;
    bool rms_norm = false;  // optional pre-attention/pre-FFN RMS normalization

    int64_t head_dim() const { return d_model / n_heads; }
    int64_t q_dim() const { return n_heads * head_dim(); }
    int64_t kv_dim() const { return n_kv_heads * head_dim(); }
    int64_t ffn_dim() const { return 2 * d_model; }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || n_kv_heads <= 0 || n_layers <= 0)
            throw ConfigError("model dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("d_model (" + std::to_string(d_model) +
                              ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (n_heads % n_kv_heads != 0)
            throw ConfigError("n_heads (" + std::to_string(n_heads) +
                              ") must be divisible by n_kv_heads (" +
                              std::to_string(n_kv_heads) + ")");
    }
};

}  // namespace kvprefill
