#include <catch2/catch_amalgamated.hpp>

#include "kvprefill/kvprefill.hpp"

using namespace kvprefill;

namespace {

ModelConfig small_config() {
    ModelConfig config;
    config.d_model = 16;
    config.n_heads = 4;
    config.n_kv_heads = 2;
    config.n_layers = 2;
    config.seed = 7;
    return config;
}

}  // namespace

TEST_CASE("mask penalty is large and negative per precision", "[model]") {
    REQUIRE(mask_penalty<float>() == -1e9f);
    REQUIRE(mask_penalty<double>() == -1e18);
}

TEST_CASE("attention weights are normalized and exactly zero where masked", "[model]") {
    const ModelConfig config = small_config();
    const Matrix<double> Q = random_context<double>(5, config.q_dim(), 3);
    const Matrix<double> K = random_context<double>(9, config.kv_dim(), 4);
    const CausalMask mask{4, 5};

    for (int64_t head = 0; head < config.n_heads; ++head) {
        const Matrix<double> W = attention_weights(Q, K, mask, config, head);
        REQUIRE(W.rows == 5);
        REQUIRE(W.cols == 9);
        for (int64_t i = 0; i < W.rows; ++i) {
            double sum = 0;
            for (int64_t j = 0; j < W.cols; ++j) {
                REQUIRE(W.at(i, j) >= 0.0);
                if (j > mask.offset + i) REQUIRE(W.at(i, j) == 0.0);
                sum += W.at(i, j);
            }
            REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("grouped-query attention equals duplicated-head attention bitwise", "[model]") {
    ModelConfig gqa = small_config();  // 4 heads over 2 kv heads
    ModelConfig mha = gqa;
    mha.n_kv_heads = mha.n_heads;

    const int64_t rows = 6;
    const int64_t hd = gqa.head_dim();
    const Matrix<double> Q = random_context<double>(rows, gqa.q_dim(), 11);
    const Matrix<double> K = random_context<double>(rows, gqa.kv_dim(), 12);
    const Matrix<double> V = random_context<double>(rows, gqa.kv_dim(), 13);

    // Duplicate each kv-head block once so head h reads the same columns
    // under both configs.
    const int64_t group = gqa.n_heads / gqa.n_kv_heads;
    Matrix<double> K2(rows, mha.kv_dim());
    Matrix<double> V2(rows, mha.kv_dim());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t h = 0; h < mha.n_heads; ++h)
            for (int64_t d = 0; d < hd; ++d) {
                K2.at(r, h * hd + d) = K.at(r, (h / group) * hd + d);
                V2.at(r, h * hd + d) = V.at(r, (h / group) * hd + d);
            }

    const CausalMask mask{0, rows};
    const Matrix<double> a = causal_attention(Q, K, V, mask, gqa);
    const Matrix<double> b = causal_attention(Q, K2, V2, mask, mha);
    REQUIRE(a == b);
}

TEST_CASE("causal attention validates shapes and cache coverage", "[model]") {
    const ModelConfig config = small_config();
    const Matrix<double> Q = random_context<double>(4, config.q_dim(), 1);
    const Matrix<double> K = random_context<double>(6, config.kv_dim(), 2);
    const Matrix<double> V = random_context<double>(6, config.kv_dim(), 3);

    const Matrix<double> v_short = random_context<double>(5, config.kv_dim(), 3);
    REQUIRE_THROWS_AS((causal_attention(Q, K, v_short, CausalMask{2, 4}, config)),
                      DimensionError);
    REQUIRE_THROWS_AS((causal_attention(Q, K, V, CausalMask{2, 3}, config)), DimensionError);
    // offset 4 + 4 query rows needs 8 cached rows, only 6 present.
    REQUIRE_THROWS_AS((causal_attention(Q, K, V, CausalMask{4, 4}, config)), CacheError);
    // Extra cached rows beyond offset+rows are legal; they get zero weight.
    REQUIRE_NOTHROW((causal_attention(Q, K, V, CausalMask{0, 4}, config)));
}

TEST_CASE("attention result is invariant to masked trailing cache rows", "[model]") {
    const ModelConfig config = small_config();
    const int64_t rows = 5;
    const Matrix<double> Q = random_context<double>(rows, config.q_dim(), 21);
    const Matrix<double> K = random_context<double>(rows + 3, config.kv_dim(), 22);
    const Matrix<double> V = random_context<double>(rows + 3, config.kv_dim(), 23);

    const CausalMask mask{0, rows};
    const Matrix<double> with_extra = causal_attention(Q, K, V, mask, config);
    const Matrix<double> trimmed = causal_attention(Q, K.slice_rows(0, rows),
                                                    V.slice_rows(0, rows), mask, config);
    REQUIRE(with_extra == trimmed);
}

TEST_CASE("serial forward pass returns full cache coverage per layer", "[model]") {
    const ModelConfig config = small_config();
    const WeightSet<double> weights = init_weights<double>(config);
    const int64_t C = 12;
    const Matrix<double> context = random_context<double>(C, config.d_model, 5);

    const auto [hidden, segments] = forward_serial(context, weights);
    REQUIRE(hidden.rows == C);
    REQUIRE(hidden.cols == config.d_model);
    REQUIRE(hidden.all_finite());
    REQUIRE(segments.size() == static_cast<size_t>(config.n_layers));
    for (int64_t l = 0; l < config.n_layers; ++l) {
        const auto& seg = segments[static_cast<size_t>(l)];
        REQUIRE(seg.layer == l);
        REQUIRE(seg.start_pos == 0);
        REQUIRE(seg.end_pos == C);
        REQUIRE(seg.token_rows() == C);
        REQUIRE_NOTHROW(seg.validate());
        REQUIRE_NOTHROW(validate_cache_coverage(std::vector<KVCacheSegment<double>>{seg}, C));
    }
}

TEST_CASE("serial forward pass is deterministic and rejects empty input", "[model]") {
    const ModelConfig config = small_config();
    const WeightSet<double> weights = init_weights<double>(config);
    const Matrix<double> context = random_context<double>(10, config.d_model, 9);

    const auto a = forward_serial(context, weights);
    const auto b = forward_serial(context, weights);
    REQUIRE(a.first == b.first);

    const Matrix<double> empty(0, config.d_model);
    REQUIRE_THROWS_AS(forward_serial(empty, weights), InputError);
}

TEST_CASE("optional normalization changes the forward output", "[model]") {
    ModelConfig plain = small_config();
    ModelConfig normed = plain;
    normed.rms_norm = true;

    const Matrix<double> context = random_context<double>(8, plain.d_model, 14);
    const auto a = forward_serial(context, init_weights<double>(plain));
    const auto b = forward_serial(context, init_weights<double>(normed));
    REQUIRE(a.first.same_shape(b.first));
    REQUIRE_FALSE(a.first == b.first);
    REQUIRE(b.first.all_finite());
}

TEST_CASE("cache segment validation catches inconsistent bounds", "[model]") {
    KVCacheSegment<double> seg;
    seg.layer = 0;
    seg.start_pos = 4;
    seg.end_pos = 2;
    seg.K = Matrix<double>(2, 4);
    seg.V = Matrix<double>(2, 4);
    REQUIRE_THROWS_AS(seg.validate(), CacheError);

    seg.start_pos = 0;
    seg.end_pos = 2;
    REQUIRE_NOTHROW(seg.validate());

    seg.V = Matrix<double>(3, 4);
    REQUIRE_THROWS_AS(seg.validate(), CacheError);
}

TEST_CASE("cache coverage check requires gap-free segments from zero", "[model]") {
    auto make = [](int64_t start, int64_t end) {
        KVCacheSegment<double> seg;
        seg.layer = 0;
        seg.start_pos = start;
        seg.end_pos = end;
        seg.K = Matrix<double>(end - start, 4);
        seg.V = Matrix<double>(end - start, 4);
        return seg;
    };
    REQUIRE_NOTHROW((validate_cache_coverage<double>({make(0, 3), make(3, 7)}, 7)));
    REQUIRE_THROWS_AS((validate_cache_coverage<double>({make(0, 3), make(4, 7)}, 7)), CacheError);
    REQUIRE_THROWS_AS((validate_cache_coverage<double>({make(1, 7)}, 7)), CacheError);
    REQUIRE_THROWS_AS((validate_cache_coverage<double>({make(0, 6)}, 7)), CacheError);
}

TEST_CASE("weight initialization is seed-stable and shape-correct", "[model]") {
    const ModelConfig config = small_config();
    const WeightSet<double> a = init_weights<double>(config);
    const WeightSet<double> b = init_weights<double>(config);
    REQUIRE(a.layers.size() == static_cast<size_t>(config.n_layers));
    for (int64_t l = 0; l < config.n_layers; ++l) {
        REQUIRE(a.layer(l).wq == b.layer(l).wq);
        REQUIRE(a.layer(l).wk.rows == config.d_model);
        REQUIRE(a.layer(l).wk.cols == config.kv_dim());
        REQUIRE(a.layer(l).wo.rows == config.q_dim());
        REQUIRE(a.layer(l).w2.cols == config.d_model);
    }
    REQUIRE_THROWS_AS(a.layer(config.n_layers), DimensionError);

    ModelConfig other = config;
    other.seed = config.seed + 1;
    const WeightSet<double> c = init_weights<double>(other);
    REQUIRE_FALSE(a.layer(0).wq == c.layer(0).wq);
}
