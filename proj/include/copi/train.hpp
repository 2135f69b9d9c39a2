#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "copi/model.hpp"
#include "copi/optim.hpp"
#include "copi/puzzle.hpp"

namespace copi {

struct TrainConfig {
    std::string train_path;
    std::string val_path;
    std::string test_path;
    int batch_size = 32;
    int max_epochs = 200;
    int patience = 10;  // epochs past the best validation loss
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int jobs = 1;
    bool deterministic = false;  // serial execution, timing-free reports
    uint64_t seed = 0;           // master seed for shuffling and sampling
    ModelConfig model;

    /// Combined key=value file: training keys here, everything else is
    /// handed to ModelConfig::parse.
    static TrainConfig parse(const std::string& text);
    static TrainConfig load(const std::string& path);
    std::string serialize() const;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    int64_t total = 0;
    int64_t correct = 0;
    /// correct/total per (attribute, rule id) of the generating spec.
    std::array<std::array<std::pair<int64_t, int64_t>, kNumRules>, kNumAttributes> by_rule{};
    /// Fraction of (instance, attribute) pairs where the posterior argmax
    /// matches the hidden rule. Diagnostic only; never a training signal.
    std::optional<double> rule_agreement;
};

struct RunReport {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    EvalResult test;
    double wall_clock_seconds = 0.0;  // 0 in deterministic mode
    uint64_t seed = 0;
    std::string config_text;
    int train_size = 0;

    std::string to_json() const;
};

struct TrainOutcome {
    RunReport report;
    ParameterStore params;
};

/// ADAM training with early stopping on validation loss; the best-
/// validation parameters are restored before the test evaluation.
/// Reproducible bit for bit given the same config and seed.
TrainOutcome train(const TrainConfig& config, const std::vector<ProblemInstance>& train_set,
                   const std::vector<ProblemInstance>& val_set,
                   const std::vector<ProblemInstance>& test_set);

/// Same, loading the three datasets from the configured paths.
TrainOutcome train_from_files(const TrainConfig& config);

/// Accuracy (and loss under `config`) of the model on a dataset.
EvalResult evaluate(const ParameterStore& params, const ModelConfig& config,
                    const std::vector<ProblemInstance>& dataset, int jobs = 1);

}  // namespace copi
