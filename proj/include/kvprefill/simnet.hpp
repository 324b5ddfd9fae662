#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvprefill/config.hpp"
#include "kvprefill/engine.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/partition.hpp"
#include "kvprefill/rng.hpp"
#include "kvprefill/search.hpp"

namespace kvprefill {

/// Abstract per-layer compute coefficients. alpha prices one (Q row, K row)
/// score; the linear terms price per-token projection work and per-row
/// softmax. Defaults keep attention dominant from roughly C=1024 upward,
/// which is the regime the scaling claims are about.
struct CostModel {
    double alpha = 1e-6;
    double proj_coeff = 4e-6;
    double softmax_coeff = 1e-7;
    double fixed_overhead = 1e-5;

    void validate() const {
        if (!(alpha > 0)) throw ConfigError("cost.alpha must be positive");
        if (proj_coeff < 0 || softmax_coeff < 0 || fixed_overhead < 0)
            throw ConfigError("cost coefficients must be non-negative");
    }

    double layer_time(int64_t local_rows, int64_t held_rows) const {
        return proj_coeff * static_cast<double>(local_rows) +
               alpha * static_cast<double>(local_rows) * static_cast<double>(held_rows) +
               softmax_coeff * static_cast<double>(local_rows) + fixed_overhead;
    }
};

/// Linear chain of p ranks; adjacent ranks share one bidirectional link.
/// Bandwidth is in (K, V) pairs per second.
struct NetworkModel {
    double bandwidth = 1e7;
    double latency = 1e-6;

    void validate() const {
        if (!(bandwidth > 0)) throw ConfigError("network.bandwidth must be positive");
        if (latency < 0) throw ConfigError("network.latency must be non-negative");
    }

    static NetworkModel zero_comm() {
        NetworkModel net;
        net.bandwidth = std::numeric_limits<double>::infinity();
        net.latency = 0.0;
        return net;
    }
};

/// Background traffic generator: every layer, one randomly drawn adjacent
/// link runs at bandwidth / slowdown_factor. The link draw depends only on
/// (seed, layer), never on the factor, so degradation is monotone in the
/// factor by construction.
struct NoiseSidecar {
    uint64_t seed = 1;
    double slowdown_factor = 1.0;

    int64_t degraded_link(int64_t layer, int64_t link_count) const {
        if (link_count < 1) return -1;
        SplitMix64 rng(mix_seed(seed, 0x6e6fu, static_cast<uint64_t>(layer)));
        return static_cast<int64_t>(rng.next() % static_cast<uint64_t>(link_count));
    }
};

struct LayerTiming {
    int64_t rank = 0;
    int64_t layer = 0;
    double compute_start = 0;
    double compute_end = 0;
    double send_start = 0;
    double send_end = 0;
    double recv_ready = 0;
    double transfer_time = 0;  // this rank's own outgoing volume on the wire
    bool has_send = false;
    bool has_recv = false;
};

struct Timeline {
    Strategy strategy = Strategy::Serial;
    int64_t process_count = 1;
    int64_t n_layers = 1;
    double ttft = 0;
    std::vector<LayerTiming> events;  // (layer, rank) order

    /// Sum of per-rank outgoing transfer durations; at zero latency this is
    /// exactly (total pairs sent) / bandwidth, the accounting-side view.
    double total_transfer_time() const {
        double total = 0;
        for (const auto& e : events) total += e.transfer_time;
        return total;
    }

    std::string to_jsonl() const {
        std::ostringstream out;
        for (const auto& e : events) {
            nlohmann::json line;
            line["event"] = "layer";
            line["rank"] = e.rank;
            line["layer"] = e.layer;
            line["compute_start"] = e.compute_start;
            line["compute_end"] = e.compute_end;
            if (e.has_send) {
                line["send_start"] = e.send_start;
                line["send_end"] = e.send_end;
                line["transfer_time"] = e.transfer_time;
            }
            if (e.has_recv) line["recv_ready"] = e.recv_ready;
            out << line.dump() << "\n";
        }
        nlohmann::json tail;
        tail["event"] = "ttft";
        tail["strategy"] = to_string(strategy);
        tail["value"] = ttft;
        out << tail.dump() << "\n";
        return out.str();
    }
};

namespace detail {

inline double link_bandwidth(const NetworkModel& net, const std::optional<NoiseSidecar>& noise,
                             int64_t layer, int64_t link, int64_t link_count) {
    if (noise && noise->slowdown_factor > 1.0 && noise->degraded_link(layer, link_count) == link)
        return net.bandwidth / noise->slowdown_factor;
    return net.bandwidth;
}

inline double transfer_seconds(double pairs, double bandwidth, double latency) {
    if (pairs <= 0) return 0.0;
    return latency + pairs / bandwidth;
}

}  // namespace detail

/// Deterministic timing of one prompt phase. The dependency graph is fixed
/// per strategy, so the timeline is evaluated as a layer-major recurrence:
///
/// chain (KVR): a rank may start attention once its own projection is done
/// and the upstream handoff arrived (receive overlaps projection; only the
/// residual serializes). The concatenated cache goes downstream immediately
/// after concatenation, overlapping the sender's softmax; a transfer longer
/// than the remaining layer work delays that rank's next layer (the link must
/// drain before it is reused).
///
/// all-gather (TSP): shares hit the wire when every rank finished projecting;
/// the collective costs ceil(log2 p) rounds times the slowest link's cost
/// (latency + heavier-direction aggregate share / link bandwidth). One
/// barrier per layer: nobody proceeds before the gather completes.
inline Timeline simulate_ttft(Strategy strategy, const ContextPartition& partition,
                              const ModelConfig& model, const CostModel& cost,
                              const NetworkModel& net,
                              const std::optional<NoiseSidecar>& noise = std::nullopt) {
    partition.validate();
    cost.validate();
    net.validate();
    const int64_t p = partition.process_count();
    const int64_t C = partition.context_length;
    const int64_t L = model.n_layers;
    const auto sizes = partition.sizes();
    if (strategy == Strategy::Serial && p != 1)
        throw InputError("serial strategy requires p == 1");

    Timeline timeline;
    timeline.strategy = strategy;
    timeline.process_count = p;
    timeline.n_layers = L;
    timeline.events.reserve(static_cast<size_t>(p * L));

    std::vector<double> done(static_cast<size_t>(p), 0.0);  // end of previous layer
    const int64_t links = p - 1;

    for (int64_t layer = 0; layer < L; ++layer) {
        if (strategy == Strategy::TSP) {
            std::vector<double> proj_end(static_cast<size_t>(p));
            for (int64_t i = 0; i < p; ++i)
                proj_end[static_cast<size_t>(i)] =
                    done[static_cast<size_t>(i)] +
                    cost.proj_coeff * static_cast<double>(sizes[static_cast<size_t>(i)]);
            const double gather_start = *std::max_element(proj_end.begin(), proj_end.end());

            // Collective cost: slowest link carrying its aggregate share
            // (heavier crossing direction), times ceil(log2 p) rounds. The
            // rounds multiplier is what makes one slow link sting the
            // all-gather repeatedly while the chain pays it once.
            double slowest_link = 0.0;
            const double rounds = std::ceil(std::log2(static_cast<double>(std::max<int64_t>(p, 1))));
            for (int64_t link = 0; link < links; ++link) {
                const int64_t left = partition.boundaries[static_cast<size_t>(link) + 1];
                const double share = static_cast<double>(std::max(left, C - left));
                const double bw = detail::link_bandwidth(net, noise, layer, link, links);
                slowest_link = std::max(slowest_link, net.latency + share / bw);
            }
            const double barrier_end = gather_start + rounds * slowest_link;

            for (int64_t i = 0; i < p; ++i) {
                const size_t r = static_cast<size_t>(i);
                const int64_t c_i = sizes[r];
                LayerTiming e;
                e.rank = i;
                e.layer = layer;
                e.compute_start = done[r];
                e.recv_ready = barrier_end;
                e.has_recv = p > 1;
                if (p > 1) {
                    e.has_send = true;
                    e.send_start = gather_start;
                    e.transfer_time = detail::transfer_seconds(
                        static_cast<double>((p - 1) * c_i), net.bandwidth, net.latency);
                    e.send_end = gather_start + e.transfer_time;
                }
                const double attn = cost.alpha * static_cast<double>(c_i) * static_cast<double>(C);
                e.compute_end = barrier_end + attn +
                                cost.softmax_coeff * static_cast<double>(c_i) + cost.fixed_overhead;
                done[r] = e.compute_end;
                timeline.events.push_back(e);
            }
        } else {  // Serial and the KVR chain
            double upstream_send_start = 0.0;
            double upstream_transfer = 0.0;
            for (int64_t i = 0; i < p; ++i) {
                const size_t r = static_cast<size_t>(i);
                const int64_t c_i = sizes[r];
                const int64_t held = partition.boundaries[r + 1];
                LayerTiming e;
                e.rank = i;
                e.layer = layer;
                e.compute_start = done[r];
                const double proj_end =
                    done[r] + cost.proj_coeff * static_cast<double>(c_i);

                double cache_ready = proj_end;
                if (i > 0) {
                    e.has_recv = true;
                    e.recv_ready = upstream_send_start + upstream_transfer;
                    cache_ready = std::max(proj_end, e.recv_ready);
                }

                if (i + 1 < p) {
                    e.has_send = true;
                    e.send_start = cache_ready;
                    const double bw = detail::link_bandwidth(net, noise, layer, i, links);
                    e.transfer_time = detail::transfer_seconds(static_cast<double>(held), bw,
                                                               net.latency);
                    e.send_end = e.send_start + e.transfer_time;
                    upstream_send_start = e.send_start;
                    upstream_transfer = e.transfer_time;
                }

                const double attn_end = cache_ready + cost.alpha * static_cast<double>(c_i) *
                                                          static_cast<double>(held);
                double layer_end = attn_end + cost.softmax_coeff * static_cast<double>(c_i) +
                                   cost.fixed_overhead;
                if (e.has_send) layer_end = std::max(layer_end, e.send_end);
                e.compute_end = layer_end;
                done[r] = layer_end;
                timeline.events.push_back(e);
            }
        }
    }

    timeline.ttft = *std::max_element(done.begin(), done.end());
    return timeline;
}

/// Analytic bound: (alpha C^2 / 2)(1/p + 1/p^2). At p=1 this is alpha C^2,
/// the single-process fit; p=2 gives 0.375 alpha C^2, a 2.67x speedup.
inline double ttft_star(int64_t C, int64_t p, double alpha) {
    if (p < 1) throw InputError("ttft_star requires p >= 1");
    const double pd = static_cast<double>(p);
    const double Cd = static_cast<double>(C);
    return alpha * Cd * Cd / 2.0 * (1.0 / pd + 1.0 / (pd * pd));
}

struct PracticalBound {
    double ttft = 0;
    ContextPartition partition;
};

/// Best chained execution the cost model allows: searched partition, no
/// communication. Sits between the simulated TTFT and the analytic star
/// bound.
inline PracticalBound practical_bound(int64_t C, int64_t p, const ModelConfig& model,
                                      const CostModel& cost) {
    if (p < 1) throw InputError("practical bound requires p >= 1");
    const NetworkModel quiet = NetworkModel::zero_comm();
    if (p == 1) {
        PracticalBound out;
        out.partition = even_partition(C, 1);
        out.ttft = simulate_ttft(Strategy::Serial, out.partition, model, cost, quiet).ttft;
        return out;
    }
    SearchConfig search;
    search.evaluator = [&](const ContextPartition& part) {
        return simulate_ttft(Strategy::KVR, part, model, cost, quiet).ttft;
    };
    const SearchResult found = hierarchical_grid_search(C, p, search);
    PracticalBound out;
    out.partition = found.partition;
    out.ttft = found.ttft;
    return out;
}

inline double ttft_practical_lower(int64_t C, int64_t p, const ModelConfig& model,
                                   const CostModel& cost) {
    return practical_bound(C, p, model, cost).ttft;
}

struct NoiseStudy {
    double quiet_ttft = 0;
    double mean_degradation = 0;  // fraction of quiet ttft
    double max_degradation = 0;
    std::vector<double> per_trial;
};

/// Seeded noisy trials against the quiet baseline. Degradation is
/// (noisy - quiet) / quiet per trial.
inline NoiseStudy noise_study(Strategy strategy, const ContextPartition& partition,
                              const ModelConfig& model, const CostModel& cost,
                              const NetworkModel& net, double slowdown_factor, int64_t trials,
                              uint64_t seed) {
    if (trials < 1) throw InputError("noise_study requires trials >= 1");
    if (!(slowdown_factor >= 1.0)) throw ConfigError("slowdown_factor must be >= 1");
    NoiseStudy study;
    study.quiet_ttft = simulate_ttft(strategy, partition, model, cost, net).ttft;
    study.per_trial.reserve(static_cast<size_t>(trials));
    for (int64_t t = 0; t < trials; ++t) {
        NoiseSidecar sidecar;
        sidecar.seed = mix_seed(seed, 0x7472u, static_cast<uint64_t>(t));
        sidecar.slowdown_factor = slowdown_factor;
        const double noisy = simulate_ttft(strategy, partition, model, cost, net, sidecar).ttft;
        const double degradation = (noisy - study.quiet_ttft) / study.quiet_ttft;
        study.per_trial.push_back(degradation);
        study.mean_degradation += degradation;
        study.max_degradation = std::max(study.max_degradation, degradation);
    }
    study.mean_degradation /= static_cast<double>(trials);
    return study;
}

/// Least-squares fit of alpha in t = alpha C^2 through the origin.
inline double calibrate_alpha(const std::vector<std::pair<int64_t, double>>& measurements) {
    if (measurements.empty()) throw CalibrationError("no measurements to fit");
    double num = 0, den = 0;
    for (const auto& [C, t] : measurements) {
        if (C <= 0) throw CalibrationError("context lengths must be positive");
        const double c2 = static_cast<double>(C) * static_cast<double>(C);
        num += t * c2;
        den += c2 * c2;
    }
    return num / den;
}

}  // namespace kvprefill
