#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvprefill/errors.hpp"
#include "kvprefill/partition.hpp"

namespace kvprefill {

/// Precomputed partition ratios keyed by context length, for one process
/// count. Queries between keys interpolate; queries outside the key range
/// clamp to the nearest entry rather than extrapolate, since extrapolated
/// ratios can leave [0, 1].
struct PartitionLookupTable {
    int64_t process_count = 0;
    std::map<int64_t, std::vector<double>> entries;

    void insert(int64_t context_length, std::vector<double> ratios) {
        if (process_count < 1) throw LookupError("table process count not set");
        if (static_cast<int64_t>(ratios.size()) != process_count)
            throw LookupError("ratio vector arity must equal the table process count");
        double sum = 0;
        for (double r : ratios) {
            if (r < 0) throw LookupError("table ratios must be non-negative");
            sum += r;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw LookupError("table ratios must sum to 1");
        if (context_length < 1) throw LookupError("context length must be positive");
        entries[context_length] = std::move(ratios);
    }
};

/// Component-wise linear interpolation between the two nearest bracketing
/// entries, renormalized to sum exactly 1. Exact keys return the stored
/// vector; out-of-range queries clamp to the boundary entry.
inline std::vector<double> interpolate_partition(const PartitionLookupTable& table, int64_t C) {
    if (table.entries.empty()) throw LookupError("lookup table is empty");
    const auto exact = table.entries.find(C);
    if (exact != table.entries.end()) return exact->second;

    const auto upper = table.entries.upper_bound(C);
    if (upper == table.entries.begin()) return upper->second;          // below range
    if (upper == table.entries.end()) return std::prev(upper)->second; // above range

    const auto lower = std::prev(upper);
    const double t = static_cast<double>(C - lower->first) /
                     static_cast<double>(upper->first - lower->first);
    std::vector<double> out(lower->second.size());
    double sum = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = (1.0 - t) * lower->second[i] + t * upper->second[i];
        sum += out[i];
    }
    for (double& r : out) r /= sum;
    return out;
}

/// Table row for a context length: interpolated ratios turned into token
/// counts.
inline ContextPartition partition_from_table(const PartitionLookupTable& table, int64_t C) {
    return partition_from_ratios(C, interpolate_partition(table, C));
}

inline nlohmann::json table_to_json(const PartitionLookupTable& table) {
    nlohmann::json doc;
    doc["p"] = table.process_count;
    doc["entries"] = nlohmann::json::array();
    for (const auto& [context_length, ratios] : table.entries) {
        nlohmann::json entry;
        entry["context_length"] = context_length;
        entry["ratios"] = ratios;
        doc["entries"].push_back(std::move(entry));
    }
    return doc;
}

inline PartitionLookupTable table_from_json(const nlohmann::json& doc) {
    PartitionLookupTable table;
    try {
        table.process_count = doc.at("p").get<int64_t>();
        for (const auto& entry : doc.at("entries")) {
            table.insert(entry.at("context_length").get<int64_t>(),
                         entry.at("ratios").get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw LookupError(std::string("malformed lookup table: ") + e.what());
    }
    return table;
}

inline void save_table(const PartitionLookupTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open table file for writing: " + path);
    out << table_to_json(table).dump(2) << "\n";
    if (!out) throw IoError("failed writing table file: " + path);
}

inline PartitionLookupTable load_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open table file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw LookupError(std::string("malformed lookup table JSON in ") + path + ": " + e.what());
    }
    return table_from_json(doc);
}

}  // namespace kvprefill
