#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "kvprefill/channel.hpp"
#include "kvprefill/config.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/kv_cache.hpp"
#include "kvprefill/matrix.hpp"
#include "kvprefill/model.hpp"
#include "kvprefill/partition.hpp"
#include "kvprefill/weights.hpp"

namespace kvprefill {

enum class Strategy { Serial, TSP, KVR };

inline std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::Serial: return "serial";
        case Strategy::TSP: return "tsp";
        case Strategy::KVR: return "kvr";
    }
    return "unknown";
}

inline Strategy strategy_from_string(const std::string& name) {
    if (name == "serial") return Strategy::Serial;
    if (name == "tsp") return Strategy::TSP;
    if (name == "kvr") return Strategy::KVR;
    throw ConfigError("unknown strategy: " + name);
}

template <typename T>
struct WorkerMessage {
    enum class Kind { KVHandoff, GatherShare };
    Kind kind = Kind::KVHandoff;
    int64_t layer = 0;
    int64_t source_rank = 0;
    KVCacheSegment<T> payload;
};

/// Optional single-message corruption for protocol-error testing: applied to
/// messages leaving `rank` at `layer`.
struct FaultInjection {
    enum class Kind { None, CorruptLayerTag, DropMessage, DuplicateMessage };
    Kind kind = Kind::None;
    int64_t rank = 0;
    int64_t layer = 0;
};

/// Exact compute/traffic instrumentation. Dot products count (Q row, K row)
/// score entries, so they are head-count independent and match the analytic
/// per-worker formulas exactly. A pair is one token position's (K, V) rows,
/// hence rows == 2 * pairs always.
struct ExecutionMetrics {
    int64_t n_layers = 1;
    int64_t barrier_count = 0;
    std::vector<int64_t> dot_products;       // per worker, summed over layers
    std::vector<int64_t> kv_pairs_sent;      // per worker, summed over layers
    std::vector<int64_t> kv_pairs_received;  // per worker, summed over layers
    std::vector<int64_t> wait_events;        // per worker: blocking recvs + barrier arrivals

    int64_t per_layer_dot_products(int64_t rank) const {
        return dot_products[static_cast<size_t>(rank)] / n_layers;
    }
    int64_t per_layer_pairs_received(int64_t rank) const {
        return kv_pairs_received[static_cast<size_t>(rank)] / n_layers;
    }
    int64_t total_pairs_sent() const {
        int64_t total = 0;
        for (int64_t v : kv_pairs_sent) total += v;
        return total;
    }
    int64_t per_layer_pairs_sent() const { return total_pairs_sent() / n_layers; }
    int64_t total_rows_sent() const { return 2 * total_pairs_sent(); }
    int64_t per_layer_rows_sent() const { return 2 * per_layer_pairs_sent(); }
};

template <typename T>
struct ExecutionResult {
    Matrix<T> hidden_out;          // all C rows, rank order
    Matrix<T> first_token_hidden;  // row C-1, the first-token readout
    ExecutionMetrics metrics;
};

/// Analytic per-worker score counts for one layer. KVR worker i runs its c_i
/// queries against the b_{i+1} rows it holds after concatenation; TSP workers
/// run against the full context.
inline std::vector<int64_t> dot_product_counts(Strategy strategy, const ContextPartition& partition) {
    partition.validate();
    const auto sizes = partition.sizes();
    const int64_t C = partition.context_length;
    std::vector<int64_t> counts(sizes.size());
    if (strategy == Strategy::Serial && partition.process_count() != 1)
        throw InputError("serial strategy requires a single-worker partition");
    for (size_t i = 0; i < sizes.size(); ++i) {
        const int64_t held = strategy == Strategy::TSP || strategy == Strategy::Serial
                                 ? C
                                 : partition.boundaries[i + 1];
        counts[i] = sizes[i] * held;
    }
    return counts;
}

/// Analytic total (K, V) pairs on the wire for one layer: (p-1)C for the
/// all-gather, sum of the forwarded prefix sizes b_1..b_{p-1} for the chain.
inline int64_t traffic_pairs(Strategy strategy, const ContextPartition& partition) {
    partition.validate();
    const int64_t p = partition.process_count();
    if (strategy == Strategy::Serial) return 0;
    if (strategy == Strategy::TSP) return (p - 1) * partition.context_length;
    int64_t total = 0;
    for (int64_t i = 0; i + 1 < p; ++i) total += partition.boundaries[i + 1];
    return total;
}

/// Row-concatenates per-worker hidden blocks in rank order.
template <typename T>
Matrix<T> assemble_output(const std::vector<Matrix<T>>& per_worker_hidden,
                          const ContextPartition& partition) {
    const auto sizes = partition.sizes();
    if (per_worker_hidden.size() != sizes.size())
        throw AssemblyError("worker output count does not match the partition");
    Matrix<T> out;
    for (size_t i = 0; i < per_worker_hidden.size(); ++i) {
        if (per_worker_hidden[i].rows != sizes[i])
            throw AssemblyError("worker " + std::to_string(i) + " produced " +
                                std::to_string(per_worker_hidden[i].rows) + " rows, expected " +
                                std::to_string(sizes[i]));
        out = i == 0 ? per_worker_hidden[i] : out.vcat(per_worker_hidden[i]);
    }
    return out;
}

namespace detail {

template <typename T>
void send_with_faults(Channel<WorkerMessage<T>>& channel, WorkerMessage<T> msg,
                      const FaultInjection& fault, int64_t rank, int64_t& pairs_counter) {
    const int64_t pairs = msg.payload.token_rows();
    if (fault.kind != FaultInjection::Kind::None && fault.rank == rank && fault.layer == msg.layer) {
        switch (fault.kind) {
            case FaultInjection::Kind::DropMessage:
                return;
            case FaultInjection::Kind::CorruptLayerTag:
                msg.layer += 1;
                break;
            case FaultInjection::Kind::DuplicateMessage:
                channel.send(msg);
                pairs_counter += pairs;
                break;
            case FaultInjection::Kind::None:
                break;
        }
    }
    channel.send(std::move(msg));
    pairs_counter += pairs;
}

template <typename T>
KVCacheSegment<T> recv_checked(Channel<WorkerMessage<T>>& channel,
                               typename WorkerMessage<T>::Kind expected_kind,
                               int64_t expected_layer, int64_t& wait_counter) {
    wait_counter += 1;
    WorkerMessage<T> msg = channel.recv();
    if (msg.kind != expected_kind) throw ProtocolError("unexpected message kind");
    if (msg.layer != expected_layer)
        throw ProtocolError("expected message for layer " + std::to_string(expected_layer) +
                            ", got layer " + std::to_string(msg.layer) +
                            " (duplicate, dropped, or corrupt handoff)");
    msg.payload.validate();
    return std::move(msg.payload);
}

}  // namespace detail

/// Executes the prompt phase over p workers. All cross-worker data moves
/// through typed channels, so the numerical result is independent of thread
/// scheduling; any worker error aborts the whole fabric and is rethrown.
template <typename T>
ExecutionResult<T> run(Strategy strategy, const Matrix<T>& context,
                       const ContextPartition& partition, const WeightSet<T>& weights,
                       const FaultInjection& fault = {}) {
    partition.validate();
    if (partition.context_length != context.rows)
        throw InputError("partition covers " + std::to_string(partition.context_length) +
                         " tokens but the context has " + std::to_string(context.rows) + " rows");
    const ModelConfig& config = weights.config;
    const int64_t p = partition.process_count();
    const int64_t C = context.rows;

    ExecutionMetrics metrics;
    metrics.n_layers = config.n_layers;
    metrics.dot_products.assign(static_cast<size_t>(p), 0);
    metrics.kv_pairs_sent.assign(static_cast<size_t>(p), 0);
    metrics.kv_pairs_received.assign(static_cast<size_t>(p), 0);
    metrics.wait_events.assign(static_cast<size_t>(p), 0);

    if (strategy == Strategy::Serial) {
        if (p != 1) throw InputError("serial strategy requires p == 1");
        Matrix<T> h = context;
        for (int64_t layer = 0; layer < config.n_layers; ++layer) {
            const LayerQKV<T> qkv = layer_qkv(h, weights, layer);
            metrics.dot_products[0] += h.rows * qkv.K.rows;
            h = layer_finish(h, qkv.Q, qkv.K, qkv.V, 0, weights, layer);
        }
        ExecutionResult<T> result;
        result.first_token_hidden = h.slice_rows(C - 1, C);
        result.hidden_out = std::move(h);
        result.metrics = std::move(metrics);
        return result;
    }

    Fabric<WorkerMessage<T>> fabric(p);
    std::vector<Matrix<T>> outputs(static_cast<size_t>(p));

    auto worker = [&](int64_t rank) {
        const size_t r = static_cast<size_t>(rank);
        const int64_t start = partition.boundaries[r];
        const int64_t stop = partition.boundaries[r + 1];
        Matrix<T> h = context.slice_rows(start, stop);

        for (int64_t layer = 0; layer < config.n_layers; ++layer) {
            const LayerQKV<T> qkv = layer_qkv(h, weights, layer);
            Matrix<T> k_full, v_full;

            if (strategy == Strategy::TSP) {
                for (int64_t peer = 0; peer < p; ++peer) {
                    if (peer == rank) continue;
                    WorkerMessage<T> msg{WorkerMessage<T>::Kind::GatherShare, layer, rank,
                                         KVCacheSegment<T>{layer, start, stop, qkv.K, qkv.V}};
                    detail::send_with_faults(fabric.channel(rank, peer), std::move(msg), fault,
                                             rank, metrics.kv_pairs_sent[r]);
                }
                std::vector<KVCacheSegment<T>> segments;
                segments.reserve(static_cast<size_t>(p));
                for (int64_t peer = 0; peer < p; ++peer) {
                    if (peer == rank) {
                        segments.push_back(KVCacheSegment<T>{layer, start, stop, qkv.K, qkv.V});
                        continue;
                    }
                    KVCacheSegment<T> share = detail::recv_checked(
                        fabric.channel(peer, rank), WorkerMessage<T>::Kind::GatherShare, layer,
                        metrics.wait_events[r]);
                    metrics.kv_pairs_received[r] += share.token_rows();
                    segments.push_back(std::move(share));
                }
                std::sort(segments.begin(), segments.end(),
                          [](const KVCacheSegment<T>& a, const KVCacheSegment<T>& b) {
                              return a.start_pos < b.start_pos;
                          });
                validate_cache_coverage(segments, C);
                k_full = segments[0].K;
                v_full = segments[0].V;
                for (size_t s = 1; s < segments.size(); ++s) {
                    k_full = k_full.vcat(segments[s].K);
                    v_full = v_full.vcat(segments[s].V);
                }
                fabric.barrier().arrive_and_wait();
                metrics.wait_events[r] += 1;
            } else {  // KVR chain
                if (rank > 0) {
                    KVCacheSegment<T> prefix = detail::recv_checked(
                        fabric.channel(rank - 1, rank), WorkerMessage<T>::Kind::KVHandoff, layer,
                        metrics.wait_events[r]);
                    if (prefix.start_pos != 0 || prefix.end_pos != start)
                        throw CacheError("handoff covers [" + std::to_string(prefix.start_pos) +
                                         ", " + std::to_string(prefix.end_pos) +
                                         "), expected prefix [0, " + std::to_string(start) + ")");
                    metrics.kv_pairs_received[r] += prefix.token_rows();
                    k_full = prefix.K.vcat(qkv.K);
                    v_full = prefix.V.vcat(qkv.V);
                } else {
                    k_full = qkv.K;
                    v_full = qkv.V;
                }
                if (rank + 1 < p) {
                    WorkerMessage<T> msg{WorkerMessage<T>::Kind::KVHandoff, layer, rank,
                                         KVCacheSegment<T>{layer, 0, stop, k_full, v_full}};
                    detail::send_with_faults(fabric.channel(rank, rank + 1), std::move(msg), fault,
                                             rank, metrics.kv_pairs_sent[r]);
                }
            }

            metrics.dot_products[r] += h.rows * k_full.rows;
            h = layer_finish(h, qkv.Q, k_full, v_full, start, weights, layer);
        }
        outputs[r] = std::move(h);
        fabric.close_outgoing(rank);
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(p));
    for (int64_t rank = 0; rank < p; ++rank) {
        threads.emplace_back([&, rank] {
            try {
                worker(rank);
            } catch (...) {
                fabric.abort_all(std::current_exception());
            }
        });
    }
    for (auto& t : threads) t.join();
    fabric.rethrow_if_failed();

    metrics.barrier_count = fabric.barrier().generations();
    ExecutionResult<T> result;
    result.hidden_out = assemble_output(outputs, partition);
    result.first_token_hidden = result.hidden_out.slice_rows(C - 1, C);
    result.metrics = std::move(metrics);
    return result;
}

}  // namespace kvprefill
