#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kvprefill/engine.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/matrix.hpp"
#include "kvprefill/partition.hpp"
#include "kvprefill/search.hpp"
#include "kvprefill/weights.hpp"

namespace kvprefill {

struct OracleReport {
    std::string case_name;
    int64_t cases = 0;
    int64_t mismatches = 0;
    double max_abs_dev = 0.0;
    double max_rel_dev = 0.0;
    std::vector<std::string> notes;

    bool passed() const { return mismatches == 0; }
};

/// Brute-force forward pass sharing nothing with the main path except weight
/// generation. Always f64. Masked entries are excluded from the softmax sums
/// outright instead of being additively masked, there is no max subtraction,
/// and accumulations run in reverse index order, so agreement with the engine
/// is a genuine cross-check rather than two copies of one rounding sequence.
inline Matrix<double> naive_causal_forward(const Matrix<double>& context,
                                           const WeightSet<double>& weights) {
    if (context.rows < 1) throw InputError("naive_causal_forward: empty context");
    const ModelConfig& config = weights.config;
    const int64_t C = context.rows;
    const int64_t d = config.d_model;
    const int64_t hd = config.head_dim();
    const int64_t group = config.n_heads / config.n_kv_heads;

    auto slow_matmul = [](const Matrix<double>& a, const Matrix<double>& b) {
        Matrix<double> out(a.rows, b.cols);
        for (int64_t i = 0; i < a.rows; ++i)
            for (int64_t j = 0; j < b.cols; ++j) {
                double acc = 0;
                for (int64_t k = a.cols - 1; k >= 0; --k) acc += a.at(i, k) * b.at(k, j);
                out.at(i, j) = acc;
            }
        return out;
    };
    auto slow_norm = [&](const Matrix<double>& x) {
        if (!config.rms_norm) return x;
        Matrix<double> out(x.rows, x.cols);
        for (int64_t i = 0; i < x.rows; ++i) {
            double ms = 0;
            for (int64_t j = x.cols - 1; j >= 0; --j) ms += x.at(i, j) * x.at(i, j);
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols) + 1e-6);
            for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) * inv;
        }
        return out;
    };

    Matrix<double> h = context;
    for (int64_t layer = 0; layer < config.n_layers; ++layer) {
        const LayerWeights<double>& w = weights.layers[static_cast<size_t>(layer)];
        const Matrix<double> x = slow_norm(h);
        const Matrix<double> Q = slow_matmul(x, w.wq);
        const Matrix<double> K = slow_matmul(x, w.wk);
        const Matrix<double> V = slow_matmul(x, w.wv);

        Matrix<double> A(C, config.q_dim());
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        for (int64_t head = 0; head < config.n_heads; ++head) {
            const int64_t qo = head * hd;
            const int64_t ko = (head / group) * hd;
            for (int64_t i = 0; i < C; ++i) {
                // Visible keys only: j in [0, i].
                std::vector<double> weights_row(static_cast<size_t>(i) + 1);
                double total = 0;
                for (int64_t j = i; j >= 0; --j) {
                    double s = 0;
                    for (int64_t dd = hd - 1; dd >= 0; --dd)
                        s += Q.at(i, qo + dd) * K.at(j, ko + dd);
                    weights_row[static_cast<size_t>(j)] = std::exp(s * scale);
                    total += weights_row[static_cast<size_t>(j)];
                }
                for (int64_t dd = 0; dd < hd; ++dd) {
                    double acc = 0;
                    for (int64_t j = i; j >= 0; --j)
                        acc += (weights_row[static_cast<size_t>(j)] / total) * V.at(j, ko + dd);
                    A.at(i, qo + dd) = acc;
                }
            }
        }

        Matrix<double> h1(C, d);
        const Matrix<double> attn_out = slow_matmul(A, w.wo);
        for (int64_t i = 0; i < C; ++i)
            for (int64_t j = 0; j < d; ++j) h1.at(i, j) = h.at(i, j) + attn_out.at(i, j);

        const Matrix<double> f = slow_norm(h1);
        Matrix<double> mid = slow_matmul(f, w.w1);
        for (auto& v : mid.values) v = v > 0 ? v : 0;
        const Matrix<double> ffn_out = slow_matmul(mid, w.w2);
        for (int64_t i = 0; i < C; ++i)
            for (int64_t j = 0; j < d; ++j) h.at(i, j) = h1.at(i, j) + ffn_out.at(i, j);
    }
    return h;
}

/// Enumerates every boundary placement of C tokens over p workers and returns
/// the global optimum under the evaluator. Ties resolve exactly as in the
/// grid search (closest to even, then lexicographic). Refuses combinatorial
/// explosions up front.
inline SearchResult exhaustive_partition_search(int64_t C, int64_t p, const TtftEvaluator& evaluator,
                                                int64_t budget = 1000000) {
    if (!evaluator) throw SearchError("exhaustive search requires an evaluator");
    if (p < 1 || C < p) throw PartitionError("infeasible (C, p)");

    double combos = 1;  // (C-1 choose p-1)
    for (int64_t k = 1; k < p; ++k) combos = combos * static_cast<double>(C - k) / static_cast<double>(k);
    if (combos > static_cast<double>(budget))
        throw BudgetError("exhaustive search would evaluate " + std::to_string(combos) +
                          " partitions, over the budget of " + std::to_string(budget));

    const ContextPartition even = even_partition(C, p);
    detail::BestTracker best;
    best.even = &even;
    SearchResult result;

    // Boundaries b_1 < ... < b_{p-1} walked as a rising odometer.
    std::vector<int64_t> bounds(static_cast<size_t>(p - 1));
    for (int64_t k = 0; k + 1 < p; ++k) bounds[static_cast<size_t>(k)] = k + 1;
    while (true) {
        ContextPartition part;
        part.context_length = C;
        part.boundaries.reserve(static_cast<size_t>(p) + 1);
        part.boundaries.push_back(0);
        for (int64_t b : bounds) part.boundaries.push_back(b);
        part.boundaries.push_back(C);
        best.offer(part, evaluator(part));
        result.evaluations += 1;

        int64_t k = p - 2;
        while (k >= 0 && bounds[static_cast<size_t>(k)] == C - (p - 1 - k)) --k;
        if (k < 0) break;
        bounds[static_cast<size_t>(k)] += 1;
        for (int64_t j = k + 1; j + 1 < p; ++j)
            bounds[static_cast<size_t>(j)] = bounds[static_cast<size_t>(j - 1)] + 1;
    }

    result.partition = *best.partition;
    result.ttft = best.ttft;
    result.levels = 1;
    return result;
}

/// Cross-checks instrumented engine traffic against the closed forms for
/// every evenly divisible (C, p) in range: (p-1)C pairs for the all-gather,
/// (p-1)C/2 for the chain, and the exact 2x ratio between them.
inline OracleReport formula_enumeration_check(int64_t C_max, int64_t p_max) {
    OracleReport report;
    report.case_name = "closed-form traffic vs instrumented engine";

    ModelConfig config;
    config.d_model = 8;
    config.n_heads = 2;
    config.n_kv_heads = 2;
    config.n_layers = 1;
    config.seed = 11;
    const WeightSet<double> weights = init_weights<double>(config);

    auto record = [&](bool ok, const std::string& what) {
        report.cases += 1;
        if (!ok) {
            report.mismatches += 1;
            report.notes.push_back(what);
        }
    };

    for (int64_t p = 1; p <= p_max; ++p) {
        for (int64_t C = p; C <= C_max; ++C) {
            if (C % p != 0) continue;
            const ContextPartition part = even_partition(C, p);
            const Matrix<double> context = random_context<double>(C, config.d_model, 500 + C);

            const auto tsp = run(Strategy::TSP, context, part, weights);
            const auto kvr = run(Strategy::KVR, context, part, weights);
            const int64_t tsp_pairs = tsp.metrics.per_layer_pairs_sent();
            const int64_t kvr_pairs = kvr.metrics.per_layer_pairs_sent();

            record(tsp_pairs == (p - 1) * C,
                   "TSP pairs C=" + std::to_string(C) + " p=" + std::to_string(p) + ": " +
                       std::to_string(tsp_pairs) + " != " + std::to_string((p - 1) * C));
            record(kvr_pairs == (p - 1) * C / 2,
                   "KVR pairs C=" + std::to_string(C) + " p=" + std::to_string(p) + ": " +
                       std::to_string(kvr_pairs) + " != " + std::to_string((p - 1) * C / 2));
            record(2 * kvr_pairs == tsp_pairs, "KVR != TSP/2 at C=" + std::to_string(C) +
                                                   " p=" + std::to_string(p));
            record(tsp_pairs == traffic_pairs(Strategy::TSP, part),
                   "TSP analytic mismatch at C=" + std::to_string(C) + " p=" + std::to_string(p));
            record(kvr_pairs == traffic_pairs(Strategy::KVR, part),
                   "KVR analytic mismatch at C=" + std::to_string(C) + " p=" + std::to_string(p));
        }
    }
    return report;
}

}  // namespace kvprefill
