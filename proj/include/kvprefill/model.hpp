#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "kvprefill/config.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/kv_cache.hpp"
#include "kvprefill/matrix.hpp"
#include "kvprefill/weights.hpp"

namespace kvprefill {

/// Additive stand-in for -inf in masked score entries. Large enough that
/// exp(masked - rowmax) underflows to exactly 0 after max subtraction.
template <typename T>
constexpr T mask_penalty() {
    if constexpr (sizeof(T) == 4)
        return T(-1e9);
    else
        return T(-1e18);
}

namespace detail {

/// RMS-style row normalization, no learned gain. Only active when
/// ModelConfig.rms_norm is set; default pipeline is norm-free.
template <typename T>
Matrix<T> rms_norm_rows(const Matrix<T>& x) {
    Matrix<T> out(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        T mean_sq = 0;
        for (int64_t j = 0; j < x.cols; ++j) mean_sq += x.at(i, j) * x.at(i, j);
        mean_sq /= static_cast<T>(x.cols);
        const T inv = T(1) / std::sqrt(mean_sq + T(1e-6));
        for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) * inv;
    }
    return out;
}

template <typename T>
Matrix<T> maybe_norm(const Matrix<T>& x, const ModelConfig& config) {
    return config.rms_norm ? rms_norm_rows(x) : x;
}

template <typename T>
Matrix<T> relu(Matrix<T> x) {
    for (auto& v : x.values)
        if (v < T(0)) v = T(0);
    return x;
}

}  // namespace detail

template <typename T>
struct LayerQKV {
    Matrix<T> Q;
    Matrix<T> K;
    Matrix<T> V;
};

/// Projects hidden rows to Q (n_heads*head_dim wide) and K, V
/// (n_kv_heads*head_dim wide). Row count is preserved; no bias terms.
template <typename T>
LayerQKV<T> qkv_project(const Matrix<T>& hidden, const WeightSet<T>& weights, int64_t layer) {
    const ModelConfig& config = weights.config;
    if (hidden.cols != config.d_model)
        throw DimensionError("qkv_project: hidden width " + std::to_string(hidden.cols) +
                             " != d_model " + std::to_string(config.d_model));
    const LayerWeights<T>& w = weights.layer(layer);
    return LayerQKV<T>{matmul(hidden, w.wq), matmul(hidden, w.wk), matmul(hidden, w.wv)};
}

/// Softmaxed score matrix of one query head against all key rows. Exposes the
/// raw attention weights so causality and normalization can be checked
/// directly; the fused path below never materializes this for all heads.
template <typename T>
Matrix<T> attention_weights(const Matrix<T>& Q, const Matrix<T>& K, const CausalMask& mask,
                            const ModelConfig& config, int64_t head) {
    const int64_t hd = config.head_dim();
    const int64_t kv_head = head / (config.n_heads / config.n_kv_heads);
    const int64_t q_off = head * hd;
    const int64_t k_off = kv_head * hd;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Matrix<T> w(Q.rows, K.rows);
    for (int64_t i = 0; i < Q.rows; ++i) {
        const int64_t visible = mask.offset + i;  // last visible key column
        T row_max = mask_penalty<T>();
        for (int64_t j = 0; j < K.rows; ++j) {
            T s = 0;
            for (int64_t d = 0; d < hd; ++d) s += Q.at(i, q_off + d) * K.at(j, k_off + d);
            s *= scale;
            if (j > visible) s += mask_penalty<T>();
            w.at(i, j) = s;
            if (s > row_max) row_max = s;
        }
        T sum = 0;
        for (int64_t j = 0; j < K.rows; ++j) {
            w.at(i, j) = std::exp(w.at(i, j) - row_max);
            sum += w.at(i, j);
        }
        for (int64_t j = 0; j < K.rows; ++j) w.at(i, j) /= sum;
    }
    return w;
}

/// Causal multi-head attention over an already-assembled key/value block.
/// K may extend past offset+Q.rows (extra columns are masked to zero weight),
/// which lets one code path serve serial, gathered, and chained execution.
template <typename T>
Matrix<T> causal_attention(const Matrix<T>& Q, const Matrix<T>& K, const Matrix<T>& V,
                           const CausalMask& mask, const ModelConfig& config) {
    if (K.rows != V.rows || !K.same_shape(V))
        throw DimensionError("causal_attention: K/V shape mismatch");
    if (Q.rows != mask.rows)
        throw DimensionError("causal_attention: Q rows != mask rows");
    if (K.rows < mask.offset + Q.rows)
        throw CacheError("causal_attention: cache holds " + std::to_string(K.rows) +
                         " rows, need at least " + std::to_string(mask.offset + Q.rows));

    const int64_t hd = config.head_dim();
    const int64_t group = config.n_heads / config.n_kv_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Matrix<T> A(Q.rows, Q.cols);
    std::vector<T> exps(static_cast<size_t>(K.rows));
    for (int64_t h = 0; h < config.n_heads; ++h) {
        const int64_t q_off = h * hd;
        const int64_t k_off = (h / group) * hd;
        for (int64_t i = 0; i < Q.rows; ++i) {
            const int64_t visible = mask.offset + i;
            T row_max = mask_penalty<T>();
            for (int64_t j = 0; j < K.rows; ++j) {
                T s = 0;
                for (int64_t d = 0; d < hd; ++d) s += Q.at(i, q_off + d) * K.at(j, k_off + d);
                s *= scale;
                if (j > visible) s += mask_penalty<T>();
                exps[static_cast<size_t>(j)] = s;
                if (s > row_max) row_max = s;
            }
            T sum = 0;
            for (int64_t j = 0; j < K.rows; ++j) {
                T& e = exps[static_cast<size_t>(j)];
                e = std::exp(e - row_max);
                sum += e;
            }
            for (int64_t d = 0; d < hd; ++d) {
                T acc = 0;
                for (int64_t j = 0; j < K.rows; ++j)
                    acc += exps[static_cast<size_t>(j)] * V.at(j, k_off + d);
                A.at(i, q_off + d) = acc / sum;
            }
        }
    }
    return A;
}

/// Second half of a layer: attention against the full per-layer cache, output
/// projection, feed-forward, residuals. Row-local except for the cache reads,
/// so every strategy that assembles the same (K, V) reproduces serial output
/// bit for bit.
template <typename T>
Matrix<T> layer_finish(const Matrix<T>& hidden, const Matrix<T>& Q, const Matrix<T>& K_full,
                       const Matrix<T>& V_full, int64_t offset, const WeightSet<T>& weights,
                       int64_t layer) {
    const ModelConfig& config = weights.config;
    const LayerWeights<T>& w = weights.layer(layer);
    const Matrix<T> A =
        causal_attention(Q, K_full, V_full, CausalMask{offset, hidden.rows}, config);
    const Matrix<T> h1 = add(hidden, matmul(A, w.wo));
    const Matrix<T> f = detail::maybe_norm(h1, config);
    return add(h1, matmul(detail::relu(matmul(f, w.w1)), w.w2));
}

/// One full layer on one worker: project the local rows, then finish against
/// the given assembled cache.
template <typename T>
Matrix<T> layer_step(const Matrix<T>& hidden, const Matrix<T>& K_full, const Matrix<T>& V_full,
                     int64_t offset, const WeightSet<T>& weights, int64_t layer) {
    const Matrix<T> x = detail::maybe_norm(hidden, weights.config);
    const LayerQKV<T> qkv = qkv_project(x, weights, layer);
    return layer_finish(hidden, qkv.Q, K_full, V_full, offset, weights, layer);
}

/// Local QKV for one layer including the optional pre-norm. Workers call this
/// on their context slice; the K/V halves are what travels on the wire.
template <typename T>
LayerQKV<T> layer_qkv(const Matrix<T>& hidden, const WeightSet<T>& weights, int64_t layer) {
    return qkv_project(detail::maybe_norm(hidden, weights.config), weights, layer);
}

/// Single-worker prompt phase: all layers over the whole context. Returns the
/// final hidden states (row C-1 is the first-token readout) and one cache
/// segment per layer covering positions [0, C).
template <typename T>
std::pair<Matrix<T>, std::vector<KVCacheSegment<T>>> forward_serial(const Matrix<T>& context,
                                                                    const WeightSet<T>& weights) {
    if (context.rows < 1) throw InputError("forward_serial: empty context");
    const ModelConfig& config = weights.config;
    Matrix<T> h = context;
    std::vector<KVCacheSegment<T>> cache;
    cache.reserve(static_cast<size_t>(config.n_layers));
    for (int64_t layer = 0; layer < config.n_layers; ++layer) {
        const LayerQKV<T> qkv = layer_qkv(h, weights, layer);
        cache.push_back(KVCacheSegment<T>{layer, 0, context.rows, qkv.K, qkv.V});
        h = layer_finish(h, qkv.Q, qkv.K, qkv.V, 0, weights, layer);
    }
    return {std::move(h), std::move(cache)};
}

}  // namespace kvprefill
