#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kvprefill/config.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/matrix.hpp"
#include "kvprefill/rng.hpp"

namespace kvprefill {

template <typename T>
struct LayerWeights {
    Matrix<T> wq;  // d_model x q_dim
    Matrix<T> wk;  // d_model x kv_dim
    Matrix<T> wv;  // d_model x kv_dim
    Matrix<T> wo;  // q_dim   x d_model
    Matrix<T> w1;  // d_model x ffn_dim
    Matrix<T> w2;  // ffn_dim x d_model
};

template <typename T>
struct WeightSet {
    ModelConfig config;
    std::vector<LayerWeights<T>> layers;

    const LayerWeights<T>& layer(int64_t index) const {
        if (index < 0 || index >= static_cast<int64_t>(layers.size()))
            throw DimensionError("layer index " + std::to_string(index) + " out of range");
        return layers[static_cast<size_t>(index)];
    }
};

namespace detail {

enum class WeightRole : uint64_t { Wq = 1, Wk, Wv, Wo, W1, W2 };

template <typename T>
Matrix<T> seeded_matrix(int64_t rows, int64_t cols, double scale, uint64_t stream_seed) {
    Matrix<T> m(rows, cols);
    SplitMix64 gen(stream_seed);
    for (auto& v : m.values) v = static_cast<T>(gen.next_symmetric() * scale);
    return m;
}

}  // namespace detail

/// Deterministic weights: per-matrix SplitMix64 streams keyed by
/// (config.seed, layer, role), values uniform in [-1,1) scaled by
/// 1/sqrt(d_model). Identical (config, seed) gives bit-identical weights.
template <typename T>
WeightSet<T> init_weights(const ModelConfig& config) {
    config.validate();
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    WeightSet<T> w;
    w.config = config;
    w.layers.reserve(static_cast<size_t>(config.n_layers));
    using detail::WeightRole;
    auto stream = [&](int64_t layer, WeightRole role) {
        return mix_seed(config.seed, static_cast<uint64_t>(layer),
                        static_cast<uint64_t>(role));
    };
    for (int64_t l = 0; l < config.n_layers; ++l) {
        LayerWeights<T> lw;
        lw.wq = detail::seeded_matrix<T>(config.d_model, config.q_dim(), scale,
                                         stream(l, WeightRole::Wq));
        lw.wk = detail::seeded_matrix<T>(config.d_model, config.kv_dim(), scale,
                                         stream(l, WeightRole::Wk));
        lw.wv = detail::seeded_matrix<T>(config.d_model, config.kv_dim(), scale,
                                         stream(l, WeightRole::Wv));
        lw.wo = detail::seeded_matrix<T>(config.q_dim(), config.d_model, scale,
                                         stream(l, WeightRole::Wo));
        lw.w1 = detail::seeded_matrix<T>(config.d_model, config.ffn_dim(), scale,
                                         stream(l, WeightRole::W1));
        lw.w2 = detail::seeded_matrix<T>(config.ffn_dim(), config.d_model, scale,
                                         stream(l, WeightRole::W2));
        w.layers.push_back(std::move(lw));
    }
    return w;
}

/// Synthetic seeded context: rows x d_model, uniform in [-1,1).
template <typename T>
Matrix<T> random_context(int64_t rows, int64_t d_model, uint64_t seed) {
    return detail::seeded_matrix<T>(rows, d_model, 1.0, mix_seed(seed, 0xc7u, 17));
}

}  // namespace kvprefill
