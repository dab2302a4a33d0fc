#pragma once

#include "speechboost/nncore.hpp"
#include "speechboost/obc.hpp"
#include "speechboost/sparse.hpp"

#include <string>
#include <vector>

namespace sb {

struct SparsityProfile {
    std::vector<int> levels; // bank entry index per prunable layer
    double total_macs = 0;
    double loss = 0;
};

// Exact DP over a discretized budget axis. Layer costs are rounded UP to
// whole buckets (bucket = dense_total / buckets), so any DP-feasible profile
// is feasible in true MACs. Objective: minimize sum of scores; ties broken
// toward lower total true MACs, then the lexicographically smallest level
// vector. Throws Infeasible when even the cheapest profile misses the budget,
// reporting the minimum achievable MACs.
std::vector<int> dp_core(const std::vector<std::vector<double>>& macs,
                         const std::vector<std::vector<double>>& score, double budget_macs,
                         double dense_total_macs, int buckets);

SparsityProfile dp_select(const SparsityBank& bank, const std::vector<double>& coefficients,
                          double budget_macs, double dense_total_macs, int buckets = 1000);

double profile_macs(const SparsityBank& bank, const std::vector<int>& levels);

// MSE between the reference model's output and the assembled pruned model's
// output over held-out clips.
double evaluate_profile(const DenseModel& reference, const SparseModel& base,
                        const SparsityBank& bank, const std::vector<int>& levels,
                        const std::vector<std::vector<float>>& holdout);

struct SpdyOptions {
    uint64_t seed = 1;
    int population = 16;
    int generations = 30;
    double de_weight = 0.7;     // F, rand/1/bin
    double de_crossover = 0.9;  // CR
    double ls_radius = 0.5;     // start radius, fraction of the coefficient range
    int ls_patience = 8;        // halve after this many non-improving proposals
    double ls_min_radius = 1e-3;
    int buckets = 1000;
    int threads = 1; // parallel candidate evaluation within a generation
    std::string trace_path; // optional JSON-lines candidate log
};

struct SpdyResult {
    SparsityProfile profile;
    std::vector<double> coefficients; // best coefficients seen
    std::vector<int> uniform_levels;
    double uniform_loss = 0;
    size_t profiles_evaluated = 0; // distinct profiles scored by forward passes
};

// Differential evolution over per-layer sensitivity coefficients (each
// candidate mapped to a profile by dp_select and scored on held-out clips),
// followed by shrinking-neighborhood random search; the returned profile is
// never worse than the uniform-sparsity baseline at the same budget.
// Deterministic under a fixed seed.
SpdyResult spdy_search(const DenseModel& reference, const SparseModel& base,
                       const SparsityBank& bank, double budget_macs, double dense_total_macs,
                       const CalibAudio& calib, const SpdyOptions& opts);

} // namespace sb
