#pragma once

#include <string>
#include <vector>

#include "copi/train.hpp"

namespace copi {

struct AblationRun {
    ModelVariant variant;
    uint64_t seed = 0;
    RunReport report;
};

struct AblationResult {
    std::vector<AblationRun> runs;
    /// Median test accuracy per variant, indexed like ModelVariant.
    std::array<double, 4> median_accuracy{};

    std::string to_csv() const;
    std::string summary_table() const;
};

/// Trains the four presets on a shared split, one run per seed each.
AblationResult ablation_suite(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                              const std::vector<ProblemInstance>& train_set,
                              const std::vector<ProblemInstance>& val_set,
                              const std::vector<ProblemInstance>& test_set);

struct SweepRow {
    int size = 0;
    uint64_t seed = 0;
    double accuracy = 0.0;
};

struct SweepResult {
    std::vector<int> sizes;
    std::vector<SweepRow> rows;
    std::vector<double> median_accuracy;  // per size

    std::string to_csv() const;
    std::string to_svg() const;  // accuracy vs log-scaled training size
};

/// The fixed shuffle behind size_sweep's nested subsets: a sweep subset of
/// size k is exactly the first k entries of this order.
std::vector<size_t> sweep_order(uint64_t seed, size_t pool_size);

/// Full-model training accuracy across nested training subsets: the pool
/// is shuffled once (by the base seed), sizes then take prefixes, so each
/// smaller set is contained in every larger one. Sizes must be positive
/// and strictly increasing.
SweepResult size_sweep(const TrainConfig& base, const std::vector<int>& sizes,
                       const std::vector<uint64_t>& seeds,
                       const std::vector<ProblemInstance>& train_pool,
                       const std::vector<ProblemInstance>& val_set,
                       const std::vector<ProblemInstance>& test_set);

struct AuditViolation {
    uint64_t instance_seed = 0;
    std::string transform;
    double deviation = 0.0;
};

struct AuditReport {
    int64_t instances_checked = 0;
    int64_t comparisons = 0;
    double max_deviation = 0.0;
    std::vector<AuditViolation> violations;  // capped at 32 entries

    bool passed() const { return violations.empty(); }
    std::string to_json() const;
};

/// For each sampled instance: row swap, column swap, and a random
/// candidate shuffle, each compared bitwise against the base potentials
/// (shuffles compared after unpermuting). Any nonzero deviation is a
/// violation.
AuditReport invariance_audit(const ParameterStore& params, const ModelConfig& config,
                             const std::vector<ProblemInstance>& dataset, int trials,
                             uint64_t seed, int jobs = 1);

/// Upper-tail binomial p-value P(X >= k) for X ~ Binomial(n, p).
double binomial_tail_pvalue(int64_t n, int64_t k, double p);

}  // namespace copi
