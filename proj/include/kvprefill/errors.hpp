#pragma once

#include <stdexcept>
#include <string>

namespace kvprefill {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// invalid model shape (head/width divisibility, non-positive dims)
struct ConfigError : Error { using Error::Error; };

// matrix shape mismatch
struct DimensionError : Error { using Error::Error; };

// KV-cache misaligned with the mask offset, or malformed segments
struct CacheError : Error { using Error::Error; };

// empty/mismatched inputs to a forward pass
struct InputError : Error { using Error::Error; };

// infeasible context split or bad ratio vector
struct PartitionError : Error { using Error::Error; };

// missing/duplicate/mis-tagged cross-worker message
struct ProtocolError : Error { using Error::Error; };

// per-worker output rows do not match the partition
struct AssemblyError : Error { using Error::Error; };

// lookup table empty or unusable for a query
struct LookupError : Error { using Error::Error; };

// no feasible point found by a partition search
struct SearchError : Error { using Error::Error; };

// exhaustive enumeration would exceed its configured budget
struct BudgetError : Error { using Error::Error; };

// cost-model fitting on empty/degenerate data
struct CalibrationError : Error { using Error::Error; };

// config/table file problems
struct IoError : Error { using Error::Error; };

}  // namespace kvprefill
