#include "copi/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "copi/dataset.hpp"
#include "copi/log.hpp"

namespace copi {

namespace {

using nlohmann::json;

Rng instance_stream(uint64_t seed, int epoch, size_t index) {
    return Rng(seed).split(0xabcdULL + epoch).split(index);
}

/// Run fn(i) for i in [0, n) over `jobs` threads with static assignment
/// (thread w takes i = w, w+jobs, ...). Exceptions rethrow after the join.
void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    auto run = [&](int w) {
        try {
            for (int64_t i = w; i < n; i += jobs) fn(i);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < jobs; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double forward_loss(const ProblemInstance& inst, const ParameterStore& params,
                    const ModelConfig& config, Rng rng) {
    Tape tape;
    tape.recording = false;
    auto fwd = forward_potentials(tape, inst, params, config, rng);
    Tape loss_tape;
    loss_tape.recording = false;
    return instance_loss(loss_tape, fwd.potentials, inst.answer_index, config)->values[0];
}

}  // namespace

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig c;
    std::string model_text;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? line : line.substr(0, eq);
        const std::string value = eq == std::string::npos ? "" : line.substr(eq + 1);
        if (key == "train_data") c.train_path = value;
        else if (key == "val_data") c.val_path = value;
        else if (key == "test_data") c.test_path = value;
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "max_epochs") c.max_epochs = std::stoi(value);
        else if (key == "patience") c.patience = std::stoi(value);
        else if (key == "lr") c.lr = std::stod(value);
        else if (key == "beta1") c.beta1 = std::stod(value);
        else if (key == "beta2") c.beta2 = std::stod(value);
        else if (key == "adam_eps") c.adam_eps = std::stod(value);
        else if (key == "jobs") c.jobs = std::stoi(value);
        else if (key == "deterministic") c.deterministic = value == "true";
        else model_text += line + "\n";
    }
    c.model = ModelConfig::parse(model_text);
    c.seed = c.model.seed;
    if (c.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (c.patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (c.max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open train config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string TrainConfig::serialize() const {
    std::ostringstream out;
    out << model.serialize();
    out << "train_data=" << train_path << "\n";
    out << "val_data=" << val_path << "\n";
    out << "test_data=" << test_path << "\n";
    out << "batch_size=" << batch_size << "\n";
    out << "max_epochs=" << max_epochs << "\n";
    out << "patience=" << patience << "\n";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", lr);
    out << "lr=" << buf << "\n";
    out << "jobs=" << jobs << "\n";
    out << "deterministic=" << (deterministic ? "true" : "false") << "\n";
    return out.str();
}

std::string RunReport::to_json() const {
    json j;
    j["seed"] = seed;
    j["train_size"] = train_size;
    j["best_epoch"] = best_epoch;
    j["wall_clock_seconds"] = wall_clock_seconds;
    j["config"] = config_text;
    j["epochs"] = json::array();
    for (const auto& e : epochs)
        j["epochs"].push_back({{"train_loss", e.train_loss},
                               {"val_loss", e.val_loss},
                               {"val_accuracy", e.val_accuracy}});
    j["test_accuracy"] = test.accuracy;
    j["test_loss"] = test.mean_loss;
    j["test_total"] = test.total;
    json by_rule = json::object();
    static const char* attr_names[kNumAttributes] = {"number", "shape", "size", "shade"};
    for (int a = 0; a < kNumAttributes; ++a) {
        json row = json::object();
        for (int r = 0; r < kNumRules; ++r) {
            const auto [correct, total] = test.by_rule[a][r];
            row[rule_name(static_cast<Rule>(r))] =
                total == 0 ? json() : json(static_cast<double>(correct) / total);
        }
        by_rule[attr_names[a]] = row;
    }
    j["test_accuracy_by_rule"] = by_rule;
    if (test.rule_agreement) j["rule_agreement"] = *test.rule_agreement;
    return j.dump(2) + "\n";
}

EvalResult evaluate(const ParameterStore& params, const ModelConfig& config,
                    const std::vector<ProblemInstance>& dataset, int jobs) {
    EvalResult result;
    result.total = static_cast<int64_t>(dataset.size());
    if (dataset.empty()) return result;

    std::vector<uint8_t> correct(dataset.size(), 0);
    std::vector<double> losses(dataset.size(), 0.0);
    std::vector<uint8_t> agree(dataset.size() * kNumAttributes, 0);
    parallel_for(static_cast<int64_t>(dataset.size()), jobs, [&](int64_t i) {
        const auto& inst = dataset[i];
        Tape tape;
        tape.recording = false;
        Rng rng = instance_stream(config.seed, -1, static_cast<size_t>(i));
        auto fwd = forward_potentials(tape, inst, params, config, rng);
        correct[i] = predict(fwd.potentials) == inst.answer_index;
        Tape lt;
        lt.recording = false;
        losses[i] = instance_loss(lt, fwd.potentials, inst.answer_index, config)->values[0];
        if (fwd.rule_distribution)
            for (int a = 0; a < kNumAttributes; ++a) {
                const auto& d = (*fwd.rule_distribution)[a]->values;
                const int am = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
                agree[i * kNumAttributes + a] =
                    am == static_cast<int>(inst.rule_spec.rules[a]);
            }
    });

    double loss_sum = 0.0;
    int64_t agree_sum = 0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        loss_sum += losses[i];
        result.correct += correct[i];
        for (int a = 0; a < kNumAttributes; ++a) {
            auto& [c, t] = result.by_rule[a][static_cast<int>(dataset[i].rule_spec.rules[a])];
            c += correct[i];
            t += 1;
            agree_sum += agree[i * kNumAttributes + a];
        }
    }
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    result.mean_loss = loss_sum / static_cast<double>(result.total);
    if (config.use_inference)
        result.rule_agreement =
            static_cast<double>(agree_sum) / static_cast<double>(result.total * kNumAttributes);
    return result;
}

TrainOutcome train(const TrainConfig& config, const std::vector<ProblemInstance>& train_set,
                   const std::vector<ProblemInstance>& val_set,
                   const std::vector<ProblemInstance>& test_set) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    const auto t_start = std::chrono::steady_clock::now();
    const int jobs = config.deterministic ? 1 : std::max(1, config.jobs);

    ModelConfig model_config = config.model;
    ParameterStore params = build_parameters(model_config);
    AdamState adam(params, config.lr, config.beta1, config.beta2, config.adam_eps);

    // Per-worker parameter shadows keep gradient accumulation private; the
    // merge happens in worker order so a fixed (seed, jobs) pair is exactly
    // reproducible.
    std::vector<ParameterStore> shadows;
    for (int w = 1; w < jobs; ++w) shadows.push_back(params.clone());

    RunReport report;
    report.seed = config.seed;
    report.train_size = static_cast<int>(train_set.size());
    report.config_text = config.serialize();

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snapshot = params.snapshot_values();
    int best_epoch = -1;

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<double> inst_losses(train_set.size(), 0.0);

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        Rng shuffle_rng = Rng(config.seed).split(0x5eedULL + epoch);
        shuffle_rng.shuffle(order);

        for (size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
            const size_t b1 = std::min(order.size(), b0 + config.batch_size);
            if (jobs > 1)
                for (auto& s : shadows)
                    for (size_t k = 0; k < params.count(); ++k)
                        s.entries()[k].second->values = params.entries()[k].second->values;

            parallel_for(static_cast<int64_t>(b1 - b0), jobs, [&](int64_t off) {
                const size_t idx = order[b0 + static_cast<size_t>(off)];
                const int w = jobs <= 1 ? 0 : static_cast<int>(off % jobs);
                const ParameterStore& target = w == 0 ? params : shadows[w - 1];
                const auto& inst = train_set[idx];
                Tape tape;
                Rng rng = instance_stream(config.seed, epoch, idx);
                auto fwd = forward_potentials(tape, inst, target, model_config, rng);
                auto loss = instance_loss(tape, fwd.potentials, inst.answer_index, model_config);
                if (!std::isfinite(loss->values[0]))
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", instance " +
                                             std::to_string(idx));
                inst_losses[idx] = loss->values[0];
                tape.backward(loss);
            });

            // worker-order merge, then one optimizer step for the batch
            for (auto& s : shadows) {
                for (size_t k = 0; k < params.count(); ++k) {
                    auto& dst = params.entries()[k].second->grad;
                    auto& src = s.entries()[k].second->grad;
                    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                    std::fill(src.begin(), src.end(), 0.0);
                }
            }
            adam.step(params);
        }

        EpochStats stats;
        double loss_sum = 0.0;
        for (size_t i = 0; i < train_set.size(); ++i) loss_sum += inst_losses[i];
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());

        const EvalResult val =
            val_set.empty() ? EvalResult{} : evaluate(params, model_config, val_set, jobs);
        stats.val_loss = val_set.empty() ? stats.train_loss : val.mean_loss;
        stats.val_accuracy = val.accuracy;
        report.epochs.push_back(stats);
        COPI_DEBUG("epoch %d: train %.4f val %.4f acc %.4f", epoch, stats.train_loss,
                   stats.val_loss, stats.val_accuracy);

        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_snapshot = params.snapshot_values();
            best_epoch = epoch;
        } else if (epoch - best_epoch >= config.patience) {
            break;  // never more than `patience` epochs past the best
        }
    }

    params.restore_values(best_snapshot);
    report.best_epoch = best_epoch;
    report.test = test_set.empty() ? EvalResult{} : evaluate(params, model_config, test_set, jobs);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report.wall_clock_seconds = config.deterministic ? 0.0 : wall;
    COPI_INFO("train: %zu epochs, best %d, test accuracy %.4f (%.1fs)", report.epochs.size(),
              best_epoch, report.test.accuracy, wall);
    return TrainOutcome{std::move(report), std::move(params)};
}

TrainOutcome train_from_files(const TrainConfig& config) {
    return train(config, read_dataset(config.train_path), read_dataset(config.val_path),
                 read_dataset(config.test_path));
}

}  // namespace copi
