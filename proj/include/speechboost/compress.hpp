#pragma once

#include "speechboost/obc.hpp"
#include "speechboost/sparse.hpp"
#include "speechboost/spdy.hpp"

#include <string>
#include <vector>

namespace sb {

struct PruneOptions {
    std::string method = "spdy-obc"; // or "magnitude"
    double target_ratio = 0.105;     // kept fraction of dense MACs
    bool one_shot = false;           // single search at the target budget
    bool per_layer_uniform = false;  // magnitude variant
    uint64_t seed = 1;
    ObcOptions obc;
    SpdyOptions spdy;
};

struct PruneHistoryEntry {
    int iteration = 0;
    double budget_macs = 0;
    double achieved_macs = 0;
    double calib_loss = 0;
};

struct PruneResult {
    SparseModel model;
    std::vector<PruneHistoryEntry> history;
    CostReport cost;
};

// Iterative schedule: iteration k prunes to budget dense * 0.9^k via a fresh
// OBC bank (built on the current model's activations) plus a SPDY search;
// stops once the budget reaches target_ratio * dense. one_shot jumps straight
// to the target budget with a single bank + search.
PruneResult iterative_prune(const DenseModel& model, const CalibAudio& calib,
                            const PruneOptions& opts);

// Baseline: global ranking of kernel/16x1 blocks by L2 norm per MAC, removed
// cheapest-first until the budget is met; no weight compensation.
SparseModel magnitude_prune(const DenseModel& model, double target_ratio,
                            bool per_layer_uniform = false);

// dispatcher used by the CLI; calib may be null for magnitude pruning
PruneResult prune(const DenseModel& model, const CalibAudio* calib, const PruneOptions& opts);

} // namespace sb
