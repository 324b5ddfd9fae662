#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvprefill/config.hpp"
#include "kvprefill/engine.hpp"
#include "kvprefill/errors.hpp"
#include "kvprefill/lookup_table.hpp"
#include "kvprefill/oracle.hpp"
#include "kvprefill/partition.hpp"
#include "kvprefill/search.hpp"
#include "kvprefill/simnet.hpp"
#include "kvprefill/weights.hpp"

namespace kvprefill {

enum class PartitionSource { Even, Ratios, Search, Table };

inline std::string to_string(PartitionSource source) {
    switch (source) {
        case PartitionSource::Even: return "even";
        case PartitionSource::Ratios: return "ratios";
        case PartitionSource::Search: return "search";
        case PartitionSource::Table: return "table";
    }
    return "unknown";
}

inline PartitionSource partition_source_from_string(const std::string& name) {
    if (name == "even") return PartitionSource::Even;
    if (name == "ratios") return PartitionSource::Ratios;
    if (name == "search") return PartitionSource::Search;
    if (name == "table") return PartitionSource::Table;
    throw ConfigError("unknown partition_source '" + name + "'");
}

/// One reproducible experiment: every command is a pure function of this
/// struct. Field defaults double as the documented config schema.
struct ExperimentConfig {
    ModelConfig model;
    std::vector<Strategy> strategies = {Strategy::Serial, Strategy::TSP, Strategy::KVR};
    std::vector<int64_t> context_lengths = {64, 128, 256};
    std::vector<int64_t> process_counts = {1, 2, 4};
    PartitionSource partition_source = PartitionSource::Even;
    std::vector<double> ratios;
    std::string table_path;
    CostModel cost;
    NetworkModel network;
    double noise_slowdown_factor = 64.0;
    int64_t noise_trials = 20;
    SearchConfig search;  // evaluator filled in per command
    FaultInjection fault;
    int64_t equivalence_max_c = 512;  // engine-vs-oracle runs above this are skipped
    uint64_t seed = 1;
    std::string out_path;
    std::string format = "csv";
};

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, const std::string& scope,
                               const std::vector<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw ConfigError("unknown config key '" + scope + item.key() + "'");
    }
}

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& scope, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field '" + scope + key + "': " + e.what());
    }
}

inline std::string fault_kind_name(FaultInjection::Kind kind) {
    switch (kind) {
        case FaultInjection::Kind::None: return "none";
        case FaultInjection::Kind::CorruptLayerTag: return "corrupt_layer_tag";
        case FaultInjection::Kind::DropMessage: return "drop_message";
        case FaultInjection::Kind::DuplicateMessage: return "duplicate_message";
    }
    return "none";
}

inline FaultInjection::Kind fault_kind_from_string(const std::string& name) {
    if (name == "none") return FaultInjection::Kind::None;
    if (name == "corrupt_layer_tag") return FaultInjection::Kind::CorruptLayerTag;
    if (name == "drop_message") return FaultInjection::Kind::DropMessage;
    if (name == "duplicate_message") return FaultInjection::Kind::DuplicateMessage;
    throw ConfigError("unknown fault kind '" + name + "'");
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string format_sizes(const ContextPartition& partition) {
    std::string out;
    for (int64_t c : partition.sizes()) {
        if (!out.empty()) out += "-";
        out += std::to_string(c);
    }
    return out;
}

/// Output sink: a file when out_path is set, stdout otherwise.
class OutputTarget {
  public:
    explicit OutputTarget(const std::string& path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw IoError("cannot open output file: " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
    bool is_file() const { return file_.is_open(); }

  private:
    std::ofstream file_;
};

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

    detail::require_known_keys(
        doc, "",
        {"model", "strategies", "context_lengths", "process_counts", "partition_source", "ratios",
         "table_path", "cost", "network", "noise", "search", "fault", "equivalence_max_c", "seed",
         "out_path", "format"});

    ExperimentConfig config;
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        detail::require_known_keys(m, "model.",
                                   {"d_model", "n_heads", "n_kv_heads", "n_layers", "seed",
                                    "precision", "rms_norm"});
        detail::read_field(m, "model.", "d_model", config.model.d_model);
        detail::read_field(m, "model.", "n_heads", config.model.n_heads);
        detail::read_field(m, "model.", "n_kv_heads", config.model.n_kv_heads);
        detail::read_field(m, "model.", "n_layers", config.model.n_layers);
        detail::read_field(m, "model.", "seed", config.model.seed);
        detail::read_field(m, "model.", "rms_norm", config.model.rms_norm);
        std::string precision = to_string(config.model.precision);
        detail::read_field(m, "model.", "precision", precision);
        config.model.precision = precision_from_string(precision);
    }
    if (doc.contains("strategies")) {
        std::vector<std::string> names;
        detail::read_field(doc, "", "strategies", names);
        config.strategies.clear();
        for (const auto& n : names) config.strategies.push_back(strategy_from_string(n));
        if (config.strategies.empty()) throw ConfigError("strategies must be non-empty");
    }
    detail::read_field(doc, "", "context_lengths", config.context_lengths);
    detail::read_field(doc, "", "process_counts", config.process_counts);
    if (doc.contains("partition_source")) {
        std::string name;
        detail::read_field(doc, "", "partition_source", name);
        config.partition_source = partition_source_from_string(name);
    }
    detail::read_field(doc, "", "ratios", config.ratios);
    detail::read_field(doc, "", "table_path", config.table_path);
    if (doc.contains("cost")) {
        const auto& c = doc.at("cost");
        detail::require_known_keys(c, "cost.",
                                   {"alpha", "proj_coeff", "softmax_coeff", "fixed_overhead"});
        detail::read_field(c, "cost.", "alpha", config.cost.alpha);
        detail::read_field(c, "cost.", "proj_coeff", config.cost.proj_coeff);
        detail::read_field(c, "cost.", "softmax_coeff", config.cost.softmax_coeff);
        detail::read_field(c, "cost.", "fixed_overhead", config.cost.fixed_overhead);
    }
    if (doc.contains("network")) {
        const auto& n = doc.at("network");
        detail::require_known_keys(n, "network.", {"bandwidth", "latency"});
        detail::read_field(n, "network.", "bandwidth", config.network.bandwidth);
        detail::read_field(n, "network.", "latency", config.network.latency);
    }
    if (doc.contains("noise")) {
        const auto& n = doc.at("noise");
        detail::require_known_keys(n, "noise.", {"slowdown_factor", "trials"});
        detail::read_field(n, "noise.", "slowdown_factor", config.noise_slowdown_factor);
        detail::read_field(n, "noise.", "trials", config.noise_trials);
    }
    if (doc.contains("search")) {
        const auto& s = doc.at("search");
        detail::require_known_keys(s, "search.", {"grid_width", "initial_stride", "min_stride"});
        detail::read_field(s, "search.", "grid_width", config.search.grid_width);
        detail::read_field(s, "search.", "initial_stride", config.search.initial_stride);
        detail::read_field(s, "search.", "min_stride", config.search.min_stride);
    }
    if (doc.contains("fault")) {
        const auto& f = doc.at("fault");
        detail::require_known_keys(f, "fault.", {"kind", "rank", "layer"});
        std::string kind = detail::fault_kind_name(config.fault.kind);
        detail::read_field(f, "fault.", "kind", kind);
        config.fault.kind = detail::fault_kind_from_string(kind);
        detail::read_field(f, "fault.", "rank", config.fault.rank);
        detail::read_field(f, "fault.", "layer", config.fault.layer);
    }
    detail::read_field(doc, "", "equivalence_max_c", config.equivalence_max_c);
    detail::read_field(doc, "", "seed", config.seed);
    detail::read_field(doc, "", "out_path", config.out_path);
    detail::read_field(doc, "", "format", config.format);
    if (config.format != "csv" && config.format != "json")
        throw ConfigError("format must be csv or json");

    config.model.validate();
    config.cost.validate();
    config.network.validate();
    if (config.context_lengths.empty()) throw ConfigError("context_lengths must be non-empty");
    if (config.process_counts.empty()) throw ConfigError("process_counts must be non-empty");
    return config;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str());
}

namespace detail {

/// Resolves the partition a chained run should use at (C, p).
inline ContextPartition kvr_partition(const ExperimentConfig& config, int64_t C, int64_t p,
                                      const TtftEvaluator& evaluator) {
    if (p == 1) return even_partition(C, 1);  // every source degenerates to [C]
    switch (config.partition_source) {
        case PartitionSource::Even:
            return even_partition(C, p);
        case PartitionSource::Ratios:
            if (static_cast<int64_t>(config.ratios.size()) != p)
                throw ConfigError("ratios arity " + std::to_string(config.ratios.size()) +
                                  " does not match p=" + std::to_string(p));
            return partition_from_ratios(C, config.ratios);
        case PartitionSource::Search: {
            SearchConfig search = config.search;
            search.evaluator = evaluator;
            return hierarchical_grid_search(C, p, search).partition;
        }
        case PartitionSource::Table: {
            if (config.table_path.empty()) throw ConfigError("partition_source=table needs table_path");
            const PartitionLookupTable table = load_table(config.table_path);
            if (table.process_count != p)
                throw ConfigError("table is for p=" + std::to_string(table.process_count) +
                                  ", requested p=" + std::to_string(p));
            return partition_from_table(table, C);
        }
    }
    throw ConfigError("unhandled partition source");
}

template <typename T>
double equivalence_deviation(const ExperimentConfig& config, Strategy strategy, int64_t C,
                             const ContextPartition& partition) {
    const WeightSet<T> weights = init_weights<T>(config.model);
    const Matrix<T> context = random_context<T>(C, config.model.d_model, config.seed + 17);
    const auto serial = forward_serial(context, weights);
    const auto result = run(strategy, context, partition, weights);
    return max_rel_dev(result.hidden_out, serial.first);
}

struct CheckRecord {
    std::string name;
    bool passed = false;
    std::string detail;
};

}  // namespace detail

/// Equivalence and accounting checks over the configured grid, plus the fixed
/// 9-token/3-worker fixture whose counts are known in closed form. Prints a
/// text report; writes a JSON summary to out_path when set. Exit 0 only if
/// everything passed. A configured fault injection is expected to surface a
/// protocol error and makes the exit code nonzero by design.
inline int cmd_verify(const ExperimentConfig& config, std::ostream& out = std::cout) {
    std::vector<detail::CheckRecord> checks;
    auto check = [&](const std::string& name, bool passed, const std::string& note) {
        checks.push_back({name, passed, note});
        out << (passed ? "[pass] " : "[FAIL] ") << name;
        if (!note.empty()) out << "  (" << note << ")";
        out << "\n";
    };

    // Fixture with closed-form counts: 9 tokens over 3 workers.
    {
        ModelConfig fixture_model = config.model;
        const WeightSet<double> weights = init_weights<double>(fixture_model);
        const Matrix<double> context = random_context<double>(9, fixture_model.d_model, config.seed);

        const auto kvr = run(Strategy::KVR, context, ContextPartition::from_sizes({4, 3, 2}), weights);
        const bool kvr_dots = kvr.metrics.per_layer_dot_products(0) == 16 &&
                              kvr.metrics.per_layer_dot_products(1) == 21 &&
                              kvr.metrics.per_layer_dot_products(2) == 18;
        check("fixture kvr [4-3-2] dot products 16/21/18", kvr_dots,
              std::to_string(kvr.metrics.per_layer_dot_products(0)) + "/" +
                  std::to_string(kvr.metrics.per_layer_dot_products(1)) + "/" +
                  std::to_string(kvr.metrics.per_layer_dot_products(2)));
        check("fixture kvr [4-3-2] traffic 11 pairs / 22 rows",
              kvr.metrics.per_layer_pairs_sent() == 11 && kvr.metrics.per_layer_rows_sent() == 22,
              std::to_string(kvr.metrics.per_layer_pairs_sent()) + " pairs / " +
                  std::to_string(kvr.metrics.per_layer_rows_sent()) + " rows per layer");

        const auto tsp = run(Strategy::TSP, context, even_partition(9, 3), weights);
        const bool tsp_dots = tsp.metrics.per_layer_dot_products(0) == 27 &&
                              tsp.metrics.per_layer_dot_products(1) == 27 &&
                              tsp.metrics.per_layer_dot_products(2) == 27;
        check("fixture tsp [3-3-3] dot products 27 per worker", tsp_dots,
              std::to_string(tsp.metrics.per_layer_dot_products(0)) + " each");
        check("fixture tsp [3-3-3] traffic 18 pairs / 36 rows",
              tsp.metrics.per_layer_pairs_sent() == 18 && tsp.metrics.per_layer_rows_sent() == 36,
              std::to_string(tsp.metrics.per_layer_pairs_sent()) + " pairs / " +
                  std::to_string(tsp.metrics.per_layer_rows_sent()) + " rows per layer");
        check("fixture barrier counts", tsp.metrics.barrier_count == fixture_model.n_layers &&
                                            kvr.metrics.barrier_count == 0,
              "tsp " + std::to_string(tsp.metrics.barrier_count) + ", kvr " +
                  std::to_string(kvr.metrics.barrier_count));
    }

    // Serial engine vs the independent brute-force path.
    {
        ModelConfig oracle_model = config.model;
        oracle_model.precision = Precision::f64;
        const WeightSet<double> weights = init_weights<double>(oracle_model);
        const int64_t C = std::min<int64_t>(
            *std::min_element(config.context_lengths.begin(), config.context_lengths.end()), 64);
        const Matrix<double> context = random_context<double>(C, oracle_model.d_model, config.seed + 5);
        const auto serial = forward_serial(context, weights);
        const double dev = max_rel_dev(serial.first, naive_causal_forward(context, weights));
        check("serial forward vs brute-force oracle (f64, C=" + std::to_string(C) + ")", dev <= 1e-10,
              "max rel dev " + detail::format_double(dev));
    }

    // Equivalence and exact accounting over the configured grid.
    const double tolerance = config.model.precision == Precision::f32 ? 1e-4 : 1e-10;
    for (int64_t C : config.context_lengths) {
        for (int64_t p : config.process_counts) {
            if (p > C) {
                out << "[skip] C=" << C << " p=" << p << " infeasible\n";
                continue;
            }
            if (C > config.equivalence_max_c) {
                out << "[skip] C=" << C << " equivalence check above equivalence_max_c\n";
                continue;
            }
            for (Strategy strategy : config.strategies) {
                if (strategy == Strategy::Serial) continue;
                // TSP always splits evenly; chained runs get a deliberately
                // uneven partition so the offset bookkeeping is exercised.
                std::vector<double> descending(static_cast<size_t>(p));
                const double denom = static_cast<double>(p) * static_cast<double>(p + 1) / 2.0;
                for (int64_t i = 0; i < p; ++i)
                    descending[static_cast<size_t>(i)] = static_cast<double>(p - i) / denom;
                const ContextPartition partition = strategy == Strategy::TSP || C < 2 * p
                                                       ? even_partition(C, p)
                                                       : partition_from_ratios(C, descending);
                const std::string label =
                    to_string(strategy) + " C=" + std::to_string(C) + " p=" + std::to_string(p);

                double dev = 0;
                if (config.model.precision == Precision::f32)
                    dev = detail::equivalence_deviation<float>(config, strategy, C, partition);
                else
                    dev = detail::equivalence_deviation<double>(config, strategy, C, partition);
                check("equivalence " + label, dev <= tolerance,
                      "max rel dev " + detail::format_double(dev) + " tol " +
                          detail::format_double(tolerance));

                const WeightSet<double> weights = init_weights<double>(config.model);
                const Matrix<double> context =
                    random_context<double>(C, config.model.d_model, config.seed + 17);
                const auto result = run(strategy, context, partition, weights);
                const auto analytic = dot_product_counts(strategy, partition);
                bool dots_ok = true;
                for (int64_t rank = 0; rank < p; ++rank)
                    dots_ok = dots_ok && result.metrics.per_layer_dot_products(rank) ==
                                             analytic[static_cast<size_t>(rank)];
                check("dot counts " + label, dots_ok, "");
                check("traffic counts " + label,
                      result.metrics.per_layer_pairs_sent() == traffic_pairs(strategy, partition) &&
                          result.metrics.total_rows_sent() == 2 * result.metrics.total_pairs_sent(),
                      std::to_string(result.metrics.per_layer_pairs_sent()) + " pairs per layer");
            }
        }
    }

    // A configured fault must surface as an error; the run then exits nonzero
    // by design (negative test), whether or not the error appeared.
    bool fault_forces_failure = false;
    if (config.fault.kind != FaultInjection::Kind::None) {
        fault_forces_failure = true;
        const WeightSet<double> weights = init_weights<double>(config.model);
        const int64_t p = std::max<int64_t>(2, config.fault.rank + 2);
        const int64_t C = 4 * p;
        const Matrix<double> context = random_context<double>(C, config.model.d_model, config.seed);
        bool surfaced = false;
        std::string what;
        try {
            run(Strategy::KVR, context, even_partition(C, p), weights, config.fault);
        } catch (const Error& e) {
            surfaced = true;
            what = e.what();
        }
        check("fault injection surfaced (" + detail::fault_kind_name(config.fault.kind) + ")",
              surfaced, surfaced ? what : "no error raised");
        out << "note: fault injection is a negative test; nonzero exit is the expected outcome\n";
    }

    bool all_passed = true;
    for (const auto& c : checks) all_passed = all_passed && c.passed;
    out << (all_passed ? "all checks passed" : "CHECKS FAILED") << " (" << checks.size()
        << " checks)\n";
    all_passed = all_passed && !fault_forces_failure;

    if (!config.out_path.empty()) {
        nlohmann::json summary;
        summary["all_passed"] = all_passed;
        summary["checks"] = nlohmann::json::array();
        for (const auto& c : checks)
            summary["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        std::ofstream file(config.out_path);
        if (!file) throw IoError("cannot open output file: " + config.out_path);
        file << summary.dump(2) << "\n";
    }
    return all_passed ? 0 : 1;
}

namespace detail {

struct ResultRow {
    std::string strategy;
    int64_t C = 0;
    int64_t p = 0;
    std::string partition;
    double ttft_sim = 0;
    double speedup = 0;
    double ttft_star_v = 0;
    double ttft_lower = 0;
    int64_t dot_max = 0;
    int64_t pairs = 0;
    int64_t rows = 0;
    int64_t barriers = 0;
    double max_dev = 0;
    bool skipped = false;
};

inline const char* result_header() {
    return "strategy,C,p,partition,ttft_sim,speedup,ttft_star,ttft_lower,dot_max,pairs,rows,"
           "barriers,max_dev";
}

inline void write_rows(std::ostream& out, const std::vector<ResultRow>& rows,
                       const std::string& format) {
    if (format == "json") {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row;
            row["strategy"] = r.strategy;
            row["C"] = r.C;
            row["p"] = r.p;
            row["partition"] = r.partition;
            if (r.skipped) {
                row["skipped"] = true;
            } else {
                row["ttft_sim"] = r.ttft_sim;
                row["speedup"] = r.speedup;
                row["ttft_star"] = r.ttft_star_v;
                row["ttft_lower"] = r.ttft_lower;
                row["dot_max"] = r.dot_max;
                row["pairs"] = r.pairs;
                row["rows"] = r.rows;
                row["barriers"] = r.barriers;
                row["max_dev"] = std::isnan(r.max_dev) ? nlohmann::json() : nlohmann::json(r.max_dev);
            }
            doc.push_back(std::move(row));
        }
        out << doc.dump(2) << "\n";
        return;
    }
    out << result_header() << "\n";
    for (const auto& r : rows) {
        if (r.skipped) {
            out << r.strategy << "," << r.C << "," << r.p << ",skipped,nan,nan,nan,nan,0,0,0,0,nan\n";
            continue;
        }
        out << r.strategy << "," << r.C << "," << r.p << "," << r.partition << ","
            << format_double(r.ttft_sim) << "," << format_double(r.speedup) << ","
            << format_double(r.ttft_star_v) << "," << format_double(r.ttft_lower) << ","
            << r.dot_max << "," << r.pairs << "," << r.rows << "," << r.barriers << ","
            << (std::isnan(r.max_dev) ? std::string("nan") : format_double(r.max_dev)) << "\n";
    }
}

}  // namespace detail

/// Scalability table: one row per (C, p, strategy), sorted, with simulated
/// TTFT, speedup vs the simulated serial baseline, both lower bounds, the
/// analytic per-layer accounting columns, and (for small C) the deviation of
/// an actual engine run from the serial forward pass.
inline int cmd_sweep(const ExperimentConfig& config) {
    std::vector<detail::ResultRow> rows;
    std::map<int64_t, double> serial_ttft;
    std::map<std::pair<int64_t, int64_t>, double> lower_cache;

    std::vector<int64_t> lengths = config.context_lengths;
    std::sort(lengths.begin(), lengths.end());
    std::vector<int64_t> procs = config.process_counts;
    std::sort(procs.begin(), procs.end());

    for (int64_t C : lengths)
        serial_ttft[C] =
            simulate_ttft(Strategy::Serial, even_partition(C, 1), config.model, config.cost,
                          config.network)
                .ttft;

    for (int64_t C : lengths) {
        for (int64_t p : procs) {
            for (Strategy strategy : config.strategies) {
                if (strategy == Strategy::Serial && p != 1) continue;
                detail::ResultRow row;
                row.strategy = to_string(strategy);
                row.C = C;
                row.p = p;
                if (p > C) {
                    row.skipped = true;
                    std::cerr << "warning: skipping infeasible C=" << C << " p=" << p << "\n";
                    rows.push_back(row);
                    continue;
                }

                const TtftEvaluator evaluator = [&](const ContextPartition& part) {
                    return simulate_ttft(Strategy::KVR, part, config.model, config.cost,
                                         config.network)
                        .ttft;
                };
                const ContextPartition partition =
                    strategy == Strategy::KVR ? detail::kvr_partition(config, C, p, evaluator)
                                              : even_partition(C, p);

                row.partition = detail::format_sizes(partition);
                row.ttft_sim = simulate_ttft(strategy, partition, config.model, config.cost,
                                             config.network)
                                   .ttft;
                row.speedup = serial_ttft[C] / row.ttft_sim;
                row.ttft_star_v =
                    ttft_star(C, p, config.cost.alpha * static_cast<double>(config.model.n_layers));
                auto lower = lower_cache.find({C, p});
                if (lower == lower_cache.end())
                    lower = lower_cache
                                .emplace(std::make_pair(C, p),
                                         ttft_practical_lower(C, p, config.model, config.cost))
                                .first;
                row.ttft_lower = lower->second;

                const auto dots = dot_product_counts(strategy, partition);
                row.dot_max = *std::max_element(dots.begin(), dots.end());
                row.pairs = traffic_pairs(strategy, partition);
                row.rows = 2 * row.pairs;
                row.barriers = strategy == Strategy::TSP ? config.model.n_layers : 0;

                if (C <= config.equivalence_max_c) {
                    row.max_dev =
                        config.model.precision == Precision::f32
                            ? detail::equivalence_deviation<float>(config, strategy, C, partition)
                            : detail::equivalence_deviation<double>(config, strategy, C, partition);
                } else {
                    row.max_dev = std::nan("");
                }
                rows.push_back(row);
            }
        }
    }

    detail::OutputTarget target(config.out_path);
    detail::write_rows(target.stream(), rows, config.format);
    if (target.is_file()) std::cout << "wrote " << rows.size() << " rows to " << config.out_path << "\n";
    return 0;
}

/// Builds or updates a partition lookup table: one hierarchical search per
/// configured context length at a single process count.
inline int cmd_search(const ExperimentConfig& config) {
    if (config.process_counts.size() != 1)
        throw ConfigError("search needs exactly one process count");
    const int64_t p = config.process_counts.front();
    if (p < 2) throw ConfigError("search needs at least two processes; p=1 has nothing to balance");
    if (config.table_path.empty()) throw ConfigError("search needs table_path for its output");

    PartitionLookupTable table;
    {
        std::ifstream probe(config.table_path);
        if (probe.good()) {
            table = load_table(config.table_path);
            if (table.process_count != p)
                throw ConfigError("existing table is for p=" + std::to_string(table.process_count) +
                                  ", requested p=" + std::to_string(p));
        } else {
            table.process_count = p;
        }
    }

    bool any_failed = false;
    for (int64_t C : config.context_lengths) {
        try {
            SearchConfig search = config.search;
            search.evaluator = [&](const ContextPartition& part) {
                return simulate_ttft(Strategy::KVR, part, config.model, config.cost, config.network)
                    .ttft;
            };
            const SearchResult result = hierarchical_grid_search(C, p, search);
            std::vector<double> ratios;
            ratios.reserve(static_cast<size_t>(p));
            for (int64_t c : result.partition.sizes())
                ratios.push_back(static_cast<double>(c) / static_cast<double>(C));
            table.insert(C, std::move(ratios));
            std::cout << "C=" << C << " partition=" << detail::format_sizes(result.partition)
                      << " ttft=" << detail::format_double(result.ttft)
                      << " evaluations=" << result.evaluations << "\n";
        } catch (const Error& e) {
            any_failed = true;
            std::cerr << "warning: search failed for C=" << C << ": " << e.what() << "\n";
        }
    }
    if (table.entries.empty()) throw ConfigError("no table entries were produced");
    save_table(table, config.table_path);
    std::cout << "table with " << table.entries.size() << " entries written to "
              << config.table_path << "\n";
    return any_failed ? 1 : 0;
}

/// Looks up (or interpolates) a partition for C from the table, simulates it,
/// and reports the gap against a fresh search at the same length.
inline int cmd_predict(const ExperimentConfig& config, int64_t C) {
    if (config.table_path.empty()) throw ConfigError("predict needs table_path");
    {
        std::ifstream probe(config.table_path);
        if (!probe.good()) throw ConfigError("table file does not exist: " + config.table_path);
    }
    const PartitionLookupTable table = load_table(config.table_path);
    const int64_t p = table.process_count;

    const bool clamped =
        !table.entries.empty() &&
        (C < table.entries.begin()->first || C > table.entries.rbegin()->first);
    const std::vector<double> ratios = interpolate_partition(table, C);
    const ContextPartition partition = partition_from_ratios(C, ratios);
    if (clamped)
        std::cerr << "warning: C=" << C << " outside table range ["
                  << table.entries.begin()->first << ", " << table.entries.rbegin()->first
                  << "], clamped to nearest entry\n";

    const auto evaluate = [&](const ContextPartition& part) {
        return simulate_ttft(Strategy::KVR, part, config.model, config.cost, config.network).ttft;
    };
    const double predicted_ttft = evaluate(partition);

    SearchConfig search = config.search;
    search.evaluator = evaluate;
    const SearchResult fresh = hierarchical_grid_search(C, p, search);
    const double gap = (predicted_ttft - fresh.ttft) / fresh.ttft;

    detail::OutputTarget target(config.out_path);
    if (config.format == "json") {
        nlohmann::json doc;
        doc["C"] = C;
        doc["p"] = p;
        doc["partition"] = partition.sizes();
        doc["ttft_pred"] = predicted_ttft;
        doc["ttft_search"] = fresh.ttft;
        doc["gap"] = gap;
        doc["clamped"] = clamped;
        target.stream() << doc.dump(2) << "\n";
    } else {
        target.stream() << "C,p,partition,ttft_pred,ttft_search,gap,clamped\n"
                        << C << "," << p << "," << detail::format_sizes(partition) << ","
                        << detail::format_double(predicted_ttft) << ","
                        << detail::format_double(fresh.ttft) << "," << detail::format_double(gap)
                        << "," << (clamped ? "true" : "false") << "\n";
    }
    if (target.is_file())
        std::cout << "predicted partition " << detail::format_sizes(partition) << " ttft "
                  << detail::format_double(predicted_ttft) << " (gap "
                  << detail::format_double(gap * 100.0) << "% vs fresh search)\n";
    return 0;
}

/// Seeded noisy-link study per (C, p, strategy) plus a robustness verdict
/// comparing the two parallel strategies' mean degradations.
inline int cmd_noise(const ExperimentConfig& config) {
    struct NoiseRow {
        std::string strategy;
        int64_t C, p;
        std::string partition;
        double quiet, mean, max;
    };
    std::vector<NoiseRow> rows;
    std::vector<std::string> verdicts;

    std::vector<int64_t> lengths = config.context_lengths;
    std::sort(lengths.begin(), lengths.end());
    std::vector<int64_t> procs = config.process_counts;
    std::sort(procs.begin(), procs.end());

    for (int64_t C : lengths) {
        for (int64_t p : procs) {
            if (p > C) {
                std::cerr << "warning: skipping infeasible C=" << C << " p=" << p << "\n";
                continue;
            }
            std::optional<double> tsp_mean, kvr_mean;
            for (Strategy strategy : config.strategies) {
                if (strategy == Strategy::Serial) continue;
                const TtftEvaluator evaluator = [&](const ContextPartition& part) {
                    return simulate_ttft(Strategy::KVR, part, config.model, config.cost,
                                         config.network)
                        .ttft;
                };
                const ContextPartition partition =
                    strategy == Strategy::KVR ? detail::kvr_partition(config, C, p, evaluator)
                                              : even_partition(C, p);
                const NoiseStudy study =
                    noise_study(strategy, partition, config.model, config.cost, config.network,
                                config.noise_slowdown_factor, config.noise_trials, config.seed);
                rows.push_back({to_string(strategy), C, p, detail::format_sizes(partition),
                                study.quiet_ttft, study.mean_degradation, study.max_degradation});
                if (strategy == Strategy::TSP) tsp_mean = study.mean_degradation;
                if (strategy == Strategy::KVR) kvr_mean = study.mean_degradation;
            }
            if (tsp_mean && kvr_mean) {
                const std::string verdict = *kvr_mean < *tsp_mean   ? "KVR more robust"
                                            : *kvr_mean > *tsp_mean ? "TSP more robust"
                                                                    : "tie";
                verdicts.push_back("C=" + std::to_string(C) + " p=" + std::to_string(p) + ": " +
                                   verdict);
            }
        }
    }

    detail::OutputTarget target(config.out_path);
    if (config.format == "json") {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& r : rows)
            doc.push_back({{"strategy", r.strategy},
                           {"C", r.C},
                           {"p", r.p},
                           {"partition", r.partition},
                           {"slowdown_factor", config.noise_slowdown_factor},
                           {"trials", config.noise_trials},
                           {"quiet_ttft", r.quiet},
                           {"mean_degradation", r.mean},
                           {"max_degradation", r.max}});
        target.stream() << doc.dump(2) << "\n";
    } else {
        target.stream() << "strategy,C,p,partition,slowdown_factor,trials,quiet_ttft,"
                           "mean_degradation,max_degradation\n";
        for (const auto& r : rows)
            target.stream() << r.strategy << "," << r.C << "," << r.p << "," << r.partition << ","
                            << detail::format_double(config.noise_slowdown_factor) << ","
                            << config.noise_trials << "," << detail::format_double(r.quiet) << ","
                            << detail::format_double(r.mean) << "," << detail::format_double(r.max)
                            << "\n";
    }
    // Verdicts are commentary: keep them off stdout when the data table is
    // already streaming there, so piped output stays parseable.
    std::ostream& commentary = config.out_path.empty() ? std::cerr : std::cout;
    for (const auto& v : verdicts) commentary << "verdict: " << v << "\n";
    return 0;
}

}  // namespace kvprefill
