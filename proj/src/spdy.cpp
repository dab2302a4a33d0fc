#include "speechboost/spdy.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace sb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Cell {
    double score = kInf;
    double macs = 0;
};

bool better(const Cell& a, const Cell& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.macs < b.macs;
}

} // namespace

std::vector<int> dp_core(const std::vector<std::vector<double>>& macs,
                         const std::vector<std::vector<double>>& score, double budget_macs,
                         double dense_total_macs, int buckets) {
    const int L = (int)macs.size();
    if (L == 0 || (int)score.size() != L) fail(ErrCode::InvalidArg, "dp_core: empty problem");
    if (budget_macs <= 0 || dense_total_macs <= 0 || buckets <= 0)
        fail(ErrCode::InvalidArg, "dp_core: budget, dense total and buckets must be positive");

    const double unit = dense_total_macs / buckets;
    const int budget_b = (int)std::floor(budget_macs / unit + 1e-9);

    std::vector<std::vector<int>> cost_b(L);
    double min_total = 0;
    for (int l = 0; l < L; ++l) {
        if (macs[l].empty() || macs[l].size() != score[l].size())
            fail(ErrCode::InvalidArg, "dp_core: layer " + std::to_string(l) + " has no levels");
        double mn = kInf;
        cost_b[l].resize(macs[l].size());
        for (size_t v = 0; v < macs[l].size(); ++v) {
            cost_b[l][v] = std::max(0, (int)std::ceil(macs[l][v] / unit - 1e-9));
            mn = std::min(mn, macs[l][v]);
        }
        min_total += mn;
    }

    const int B = std::max(0, budget_b);
    // suffix table: g[l][b] = best over layers l..L-1 within b buckets
    std::vector<std::vector<Cell>> g((size_t)L + 1, std::vector<Cell>((size_t)B + 1));
    for (int b = 0; b <= B; ++b) g[L][b] = {0.0, 0.0};
    for (int l = L - 1; l >= 0; --l)
        for (int b = 0; b <= B; ++b) {
            Cell best;
            for (size_t v = 0; v < macs[l].size(); ++v) {
                const int cb = cost_b[l][v];
                if (cb > b) continue;
                const Cell& tail = g[l + 1][b - cb];
                if (tail.score == kInf) continue;
                Cell cand{score[l][v] + tail.score, macs[l][v] + tail.macs};
                if (better(cand, best)) best = cand;
            }
            g[l][b] = best;
        }

    if (g[0][B].score == kInf)
        fail(ErrCode::Infeasible,
             "budget of " + std::to_string(budget_macs) + " MAC/s is below the minimum achievable " +
                 std::to_string(min_total) + " MAC/s");

    // forward reconstruction, preferring the smallest level index at each layer
    std::vector<int> pick(L, 0);
    int b = B;
    for (int l = 0; l < L; ++l) {
        const Cell want = g[l][b];
        bool found = false;
        for (size_t v = 0; v < macs[l].size() && !found; ++v) {
            const int cb = cost_b[l][v];
            if (cb > b) continue;
            const Cell& tail = g[l + 1][b - cb];
            if (tail.score == kInf) continue;
            if (score[l][v] + tail.score == want.score && macs[l][v] + tail.macs == want.macs) {
                pick[l] = (int)v;
                b -= cb;
                found = true;
            }
        }
        if (!found) fail(ErrCode::Internal, "dp reconstruction failed");
    }
    return pick;
}

double profile_macs(const SparsityBank& bank, const std::vector<int>& levels) {
    double total = 0;
    for (size_t l = 0; l < bank.layers.size(); ++l)
        total += bank.layers[l].entries[levels[l]].kept.size() * bank.layers[l].macs_per_block;
    return total;
}

SparsityProfile dp_select(const SparsityBank& bank, const std::vector<double>& coefficients,
                          double budget_macs, double dense_total_macs, int buckets) {
    const size_t L = bank.layers.size();
    if (coefficients.size() != L)
        fail(ErrCode::InvalidArg, "dp_select: one coefficient per prunable layer required");
    for (double c : coefficients)
        if (!(c >= 0) || !std::isfinite(c))
            fail(ErrCode::InvalidArg, "dp_select: coefficients must be finite and nonnegative");
    std::vector<std::vector<double>> macs(L), score(L);
    for (size_t l = 0; l < L; ++l) {
        const LayerBank& lb = bank.layers[l];
        for (const auto& e : lb.entries) {
            macs[l].push_back((double)e.kept.size() * lb.macs_per_block);
            score[l].push_back(coefficients[l] * e.measured_err);
        }
    }
    SparsityProfile p;
    p.levels = dp_core(macs, score, budget_macs, dense_total_macs, buckets);
    p.total_macs = profile_macs(bank, p.levels);
    return p;
}

double evaluate_profile(const DenseModel& reference, const SparseModel& base,
                        const SparsityBank& bank, const std::vector<int>& levels,
                        const std::vector<std::vector<float>>& holdout) {
    if (holdout.empty()) fail(ErrCode::InvalidArg, "evaluate_profile: no held-out clips");
    SparseModel pruned = assemble_from_bank(base, bank, levels);
    double err = 0;
    size_t n = 0;
    for (const auto& clip : holdout) {
        auto ref = forward_offline(reference, clip);
        auto out = forward_offline(pruned, clip);
        for (size_t i = 0; i < ref.size(); ++i) {
            const double d = (double)ref[i] - out[i];
            err += d * d;
        }
        n += ref.size();
    }
    return err / (double)n;
}

namespace {

class ProfileScorer {
public:
    ProfileScorer(const SparseModel& base, const SparsityBank& bank,
                  const std::vector<std::vector<float>>& holdout,
                  std::vector<std::vector<float>> ref_outputs, std::ofstream* trace, int threads)
        : base_(base), bank_(bank), holdout_(holdout), ref_(std::move(ref_outputs)), trace_(trace),
          threads_(threads) {}

    // evaluates any not-yet-cached profiles of the batch, possibly in parallel
    void ensure_cached(const std::vector<std::vector<int>>& batch) {
        std::vector<const std::vector<int>*> todo;
        for (const auto& levels : batch)
            if (!cache_.count(levels)) {
                bool seen = false;
                for (const auto* t : todo) seen = seen || *t == levels;
                if (!seen) todo.push_back(&levels);
            }
        std::vector<double> losses(todo.size());
        parallel_for(todo.size(), threads_, [&](size_t i) { losses[i] = compute(*todo[i]); });
        for (size_t i = 0; i < todo.size(); ++i) cache_.emplace(*todo[i], losses[i]);
    }

    double score(const std::vector<int>& levels, const char* phase,
                 const std::vector<double>* coeffs) {
        auto it = cache_.find(levels);
        double loss;
        if (it != cache_.end()) {
            loss = it->second;
        } else {
            loss = compute(levels);
            cache_.emplace(levels, loss);
        }
        if (trace_ && trace_->is_open()) {
            nlohmann::json j;
            j["phase"] = phase;
            if (coeffs) j["coeffs"] = *coeffs;
            j["levels"] = levels;
            j["loss"] = loss;
            *trace_ << j.dump() << "\n";
        }
        return loss;
    }

    size_t distinct() const { return cache_.size(); }

private:
    double compute(const std::vector<int>& levels) const {
        SparseModel pruned = assemble_from_bank(base_, bank_, levels);
        double err = 0;
        size_t n = 0;
        for (size_t c = 0; c < holdout_.size(); ++c) {
            auto out = forward_offline(pruned, holdout_[c]);
            for (size_t i = 0; i < out.size(); ++i) {
                const double d = (double)ref_[c][i] - out[i];
                err += d * d;
            }
            n += out.size();
        }
        return err / (double)n;
    }

    const SparseModel& base_;
    const SparsityBank& bank_;
    const std::vector<std::vector<float>>& holdout_;
    std::vector<std::vector<float>> ref_;
    std::ofstream* trace_;
    int threads_;
    std::map<std::vector<int>, double> cache_;
};

} // namespace

SpdyResult spdy_search(const DenseModel& reference, const SparseModel& base,
                       const SparsityBank& bank, double budget_macs, double dense_total_macs,
                       const CalibAudio& calib, const SpdyOptions& opts) {
    const size_t L = bank.layers.size();
    if (calib.holdout.empty())
        fail(ErrCode::InvalidArg, "spdy_search: calibration has no held-out clips");

    std::vector<std::vector<float>> ref_outputs;
    ref_outputs.reserve(calib.holdout.size());
    for (const auto& clip : calib.holdout) ref_outputs.push_back(forward_offline(reference, clip));

    std::ofstream trace;
    if (!opts.trace_path.empty()) {
        trace.open(opts.trace_path, std::ios::app);
        if (!trace) fail(ErrCode::Io, "cannot open trace log '" + opts.trace_path + "'");
    }
    ProfileScorer scorer(base, bank, calib.holdout, std::move(ref_outputs),
                         opts.trace_path.empty() ? nullptr : &trace, opts.threads);

    auto select = [&](const std::vector<double>& coeffs) {
        return dp_select(bank, coeffs, budget_macs, dense_total_macs, opts.buckets);
    };

    // uniform-sparsity baseline at the same budget: the smallest common level
    // index that fits
    std::vector<int> uniform;
    {
        size_t max_levels = 0;
        for (const auto& lb : bank.layers) max_levels = std::max(max_levels, lb.entries.size());
        for (size_t k = 0; k < max_levels; ++k) {
            std::vector<int> lv(L);
            for (size_t l = 0; l < L; ++l)
                lv[l] = (int)std::min(k, bank.layers[l].entries.size() - 1);
            if (profile_macs(bank, lv) <= budget_macs) {
                uniform = lv;
                break;
            }
        }
        if (uniform.empty()) {
            std::vector<int> lv(L);
            for (size_t l = 0; l < L; ++l) lv[l] = (int)bank.layers[l].entries.size() - 1;
            if (profile_macs(bank, lv) > budget_macs)
                fail(ErrCode::Infeasible,
                     "budget of " + std::to_string(budget_macs) +
                         " MAC/s is below the sparsest profile in the bank (" +
                         std::to_string(profile_macs(bank, lv)) + " MAC/s)");
            uniform = lv;
        }
    }
    const double uniform_loss = scorer.score(uniform, "uniform", nullptr);

    Rng rng(opts.seed);
    const double lo = 1e-6, hi = 1.0;
    auto clamp_coeff = [&](double v) { return std::min(hi, std::max(lo, v)); };

    std::vector<std::vector<double>> pop((size_t)opts.population, std::vector<double>(L));
    std::vector<double> fitness((size_t)opts.population);
    std::vector<std::vector<int>> pop_levels((size_t)opts.population);

    std::vector<double> best_coeffs;
    std::vector<int> best_levels;
    double best_loss = kInf;

    auto consider = [&](const std::vector<double>& coeffs, const std::vector<int>& levels,
                        double loss) {
        if (loss < best_loss) {
            best_loss = loss;
            best_levels = levels;
            best_coeffs = coeffs;
        }
    };

    for (int i = 0; i < opts.population; ++i) {
        for (size_t l = 0; l < L; ++l) pop[i][l] = i == 0 ? 0.5 : rng.uniform(lo, hi);
        pop_levels[i] = select(pop[i]).levels;
    }
    scorer.ensure_cached(pop_levels);
    for (int i = 0; i < opts.population; ++i) {
        fitness[i] = scorer.score(pop_levels[i], "de-init", &pop[i]);
        consider(pop[i], pop_levels[i], fitness[i]);
    }

    // rand/1/bin, generation-synchronous so candidate evaluations within a
    // generation are independent
    for (int gen = 0; gen < opts.generations; ++gen) {
        std::vector<std::vector<double>> trials((size_t)opts.population);
        std::vector<std::vector<int>> trial_levels((size_t)opts.population);
        for (int i = 0; i < opts.population; ++i) {
            int r1, r2, r3;
            do r1 = (int)rng.below(opts.population); while (r1 == i);
            do r2 = (int)rng.below(opts.population); while (r2 == i || r2 == r1);
            do r3 = (int)rng.below(opts.population); while (r3 == i || r3 == r1 || r3 == r2);
            const size_t jrand = rng.below(L);
            std::vector<double> trial(L);
            for (size_t j = 0; j < L; ++j)
                trial[j] = (rng.uniform() < opts.de_crossover || j == jrand)
                               ? clamp_coeff(pop[r1][j] + opts.de_weight * (pop[r2][j] - pop[r3][j]))
                               : pop[i][j];
            trial_levels[i] = select(trial).levels;
            trials[i] = std::move(trial);
        }
        scorer.ensure_cached(trial_levels);
        for (int i = 0; i < opts.population; ++i) {
            const double loss = scorer.score(trial_levels[i], "de", &trials[i]);
            if (loss <= fitness[i]) {
                pop[i] = std::move(trials[i]);
                fitness[i] = loss;
                pop_levels[i] = trial_levels[i];
            }
            consider(pop[i], pop_levels[i], fitness[i]);
        }
    }

    // shrinking-neighborhood random search around the best coefficients
    {
        double radius = opts.ls_radius * (hi - lo);
        int stale = 0;
        while (radius >= opts.ls_min_radius) {
            std::vector<double> trial(L);
            for (size_t j = 0; j < L; ++j)
                trial[j] = clamp_coeff(best_coeffs[j] + rng.uniform(-radius, radius));
            auto levels = select(trial).levels;
            const double loss = scorer.score(levels, "ls", &trial);
            if (loss < best_loss) {
                consider(trial, levels, loss);
                stale = 0;
            } else if (++stale >= opts.ls_patience) {
                radius *= 0.5;
                stale = 0;
            }
        }
    }

    SpdyResult res;
    res.uniform_levels = uniform;
    res.uniform_loss = uniform_loss;
    // never worse than the uniform baseline
    if (uniform_loss < best_loss) {
        best_loss = uniform_loss;
        best_levels = uniform;
        best_coeffs.assign(L, 0.5);
    }
    res.profile.levels = best_levels;
    res.profile.loss = best_loss;
    res.profile.total_macs = profile_macs(bank, best_levels);
    res.coefficients = best_coeffs;
    res.profiles_evaluated = scorer.distinct();
    return res;
}

} // namespace sb
