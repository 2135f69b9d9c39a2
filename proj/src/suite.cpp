#include "copi/suite.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "copi/log.hpp"

namespace copi {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
    return buf;
}

constexpr ModelVariant kVariants[4] = {ModelVariant::backbone_xe, ModelVariant::contrast_xe,
                                       ModelVariant::contrast_cl, ModelVariant::full};

}  // namespace

std::string AblationResult::to_csv() const {
    std::ostringstream out;
    out << "variant,seed,test_accuracy,epochs,best_epoch\n";
    for (const auto& run : runs)
        out << variant_name(run.variant) << "," << run.seed << "," << run.report.test.accuracy
            << "," << run.report.epochs.size() << "," << run.report.best_epoch << "\n";
    for (int v = 0; v < 4; ++v)
        out << variant_name(kVariants[v]) << ",median," << median_accuracy[v] << ",,\n";
    return out.str();
}

std::string AblationResult::summary_table() const {
    std::ostringstream out;
    out << "variant        median accuracy\n";
    for (int v = 0; v < 4; ++v) {
        char line[64];
        std::snprintf(line, sizeof(line), "%-14s %s\n", variant_name(kVariants[v]),
                      pct(median_accuracy[v]).c_str());
        out << line;
    }
    return out.str();
}

AblationResult ablation_suite(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                              const std::vector<ProblemInstance>& train_set,
                              const std::vector<ProblemInstance>& val_set,
                              const std::vector<ProblemInstance>& test_set) {
    if (seeds.empty()) throw std::invalid_argument("ablation_suite: no seeds");
    AblationResult result;
    for (int v = 0; v < 4; ++v) {
        std::vector<double> accs;
        for (uint64_t seed : seeds) {
            TrainConfig config = base;
            config.model = ModelConfig::variant(kVariants[v], seed);
            config.model.feature_dim = base.model.feature_dim;
            config.model.repetitions = base.model.repetitions;
            config.model.sampling = base.model.sampling;
            config.model.tau = base.model.tau;
            config.model.baseline_b = base.model.baseline_b;
            config.seed = seed;
            COPI_INFO("ablation: training %s, seed %llu", variant_name(kVariants[v]),
                      static_cast<unsigned long long>(seed));
            TrainOutcome outcome = train(config, train_set, val_set, test_set);
            accs.push_back(outcome.report.test.accuracy);
            result.runs.push_back(AblationRun{kVariants[v], seed, std::move(outcome.report)});
        }
        result.median_accuracy[v] = median(accs);
    }
    return result;
}

std::string SweepResult::to_csv() const {
    std::ostringstream out;
    out << "train_size,seed,test_accuracy\n";
    for (const auto& row : rows) out << row.size << "," << row.seed << "," << row.accuracy << "\n";
    for (size_t i = 0; i < sizes.size(); ++i)
        out << sizes[i] << ",median," << median_accuracy[i] << "\n";
    return out.str();
}

std::string SweepResult::to_svg() const {
    const int width = 640, height = 420;
    const int ml = 70, mr = 30, mt = 40, mb = 60;
    const double x0 = std::log(static_cast<double>(sizes.front()));
    const double x1 = std::log(static_cast<double>(sizes.back()));
    auto px = [&](double size) {
        const double t = (std::log(size) - x0) / (x1 - x0);
        return ml + t * (width - ml - mr);
    };
    auto py = [&](double acc) { return mt + (1.0 - acc) * (height - mt - mb); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << "test accuracy vs training set size</text>\n";
    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 10; tick += 2) {
        const double acc = tick / 10.0;
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(acc) << "\" x2=\"" << ml << "\" y2=\""
            << py(acc) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << py(acc) + 4
            << "\" text-anchor=\"end\" font-size=\"12\">" << tick * 10 << "%</text>\n";
    }
    for (int size : sizes) {
        out << "<line x1=\"" << px(size) << "\" y1=\"" << height - mb << "\" x2=\"" << px(size)
            << "\" y2=\"" << height - mb + 4 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << px(size) << "\" y=\"" << height - mb + 18
            << "\" text-anchor=\"middle\" font-size=\"12\">" << size << "</text>\n";
    }
    out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 16
        << "\" text-anchor=\"middle\" font-size=\"13\">training instances (log scale)</text>\n";
    // per-seed points
    for (const auto& row : rows)
        out << "<circle cx=\"" << px(row.size) << "\" cy=\"" << py(row.accuracy)
            << "\" r=\"3\" fill=\"#9db8d9\"/>\n";
    // median polyline
    out << "<polyline fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < sizes.size(); ++i)
        out << px(sizes[i]) << "," << py(median_accuracy[i]) << " ";
    out << "\"/>\n";
    for (size_t i = 0; i < sizes.size(); ++i)
        out << "<circle cx=\"" << px(sizes[i]) << "\" cy=\"" << py(median_accuracy[i])
            << "\" r=\"4\" fill=\"#1f4e8c\"/>\n";
    out << "</svg>\n";
    return out.str();
}

std::vector<size_t> sweep_order(uint64_t seed, size_t pool_size) {
    std::vector<size_t> order(pool_size);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng(seed).split(0x51eeeULL);
    shuffle_rng.shuffle(order);
    return order;
}

SweepResult size_sweep(const TrainConfig& base, const std::vector<int>& sizes,
                       const std::vector<uint64_t>& seeds,
                       const std::vector<ProblemInstance>& train_pool,
                       const std::vector<ProblemInstance>& val_set,
                       const std::vector<ProblemInstance>& test_set) {
    if (sizes.empty()) throw std::invalid_argument("size_sweep: no sizes");
    for (size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] <= 0) throw std::invalid_argument("size_sweep: sizes must be positive");
        if (i > 0 && sizes[i] <= sizes[i - 1])
            throw std::invalid_argument("size_sweep: sizes must be strictly increasing");
        if (static_cast<size_t>(sizes[i]) > train_pool.size())
            throw std::invalid_argument("size_sweep: size " + std::to_string(sizes[i]) +
                                        " exceeds the training pool (" +
                                        std::to_string(train_pool.size()) + ")");
    }
    // One fixed shuffle; every subset is a prefix, hence nested.
    const std::vector<size_t> order = sweep_order(base.seed, train_pool.size());

    SweepResult result;
    result.sizes = sizes;
    for (int size : sizes) {
        std::vector<ProblemInstance> subset;
        subset.reserve(size);
        for (int i = 0; i < size; ++i) subset.push_back(train_pool[order[i]]);
        std::vector<double> accs;
        for (uint64_t seed : seeds) {
            TrainConfig config = base;
            config.model.seed = seed;
            config.seed = seed;
            COPI_INFO("sweep: size %d, seed %llu", size, static_cast<unsigned long long>(seed));
            TrainOutcome outcome = train(config, subset, val_set, test_set);
            accs.push_back(outcome.report.test.accuracy);
            result.rows.push_back(SweepRow{size, seed, outcome.report.test.accuracy});
        }
        result.median_accuracy.push_back(median(accs));
    }
    return result;
}

std::string AuditReport::to_json() const {
    nlohmann::json j;
    j["instances_checked"] = instances_checked;
    j["comparisons"] = comparisons;
    j["max_deviation"] = max_deviation;
    j["passed"] = passed();
    j["violations"] = nlohmann::json::array();
    for (const auto& v : violations)
        j["violations"].push_back(
            {{"instance_seed", v.instance_seed}, {"transform", v.transform}, {"deviation", v.deviation}});
    return j.dump(2) + "\n";
}

AuditReport invariance_audit(const ParameterStore& params, const ModelConfig& config,
                             const std::vector<ProblemInstance>& dataset, int trials,
                             uint64_t seed, int jobs) {
    AuditReport report;
    if (dataset.empty() || trials <= 0) return report;

    struct Trial {
        double deviation[3] = {0.0, 0.0, 0.0};
    };
    std::vector<Trial> results(static_cast<size_t>(trials));
    const char* names[3] = {"row_swap", "column_swap", "candidate_shuffle"};

    auto run_trial = [&](int64_t i) {
        const auto& inst = dataset[static_cast<size_t>(i) % dataset.size()];
        Rng rng = Rng(seed).split(static_cast<uint64_t>(i));
        Tape tape;
        tape.recording = false;
        Rng fwd_rng(0);
        const auto base =
            forward_potentials(tape, inst, params, config, fwd_rng).potentials->values;

        auto deviation = [&](const ProblemInstance& variant, const std::array<int, 8>* perm) {
            Tape t2;
            t2.recording = false;
            Rng r2(0);
            const auto got = forward_potentials(t2, variant, params, config, r2).potentials->values;
            double dev = 0.0;
            for (int k = 0; k < 8; ++k) {
                const double want = perm ? base[(*perm)[k]] : base[k];
                dev = std::max(dev, std::fabs(got[k] - want));
            }
            return dev;
        };

        results[i].deviation[0] = deviation(with_rows01_swapped(inst), nullptr);
        results[i].deviation[1] = deviation(with_cols01_swapped(inst), nullptr);
        std::array<int, 8> perm{0, 1, 2, 3, 4, 5, 6, 7};
        std::vector<int> p(perm.begin(), perm.end());
        rng.shuffle(p);
        std::copy(p.begin(), p.end(), perm.begin());
        results[i].deviation[2] = deviation(with_candidates_permuted(inst, perm), &perm);
    };

    // value-only forwards on shared parameters are read-only, safe to fan out
    std::vector<std::thread> pool;
    if (jobs > 1) {
        for (int w = 1; w < jobs; ++w)
            pool.emplace_back([&, w] {
                for (int64_t i = w; i < trials; i += jobs) run_trial(i);
            });
    }
    for (int64_t i = 0; i < trials; i += std::max(1, jobs)) run_trial(i);
    for (auto& th : pool) th.join();

    for (int64_t i = 0; i < trials; ++i) {
        const auto& inst = dataset[static_cast<size_t>(i) % dataset.size()];
        ++report.instances_checked;
        for (int k = 0; k < 3; ++k) {
            ++report.comparisons;
            const double dev = results[i].deviation[k];
            report.max_deviation = std::max(report.max_deviation, dev);
            if (dev != 0.0 && report.violations.size() < 32)
                report.violations.push_back(AuditViolation{inst.seed, names[k], dev});
            else if (dev != 0.0 && report.violations.size() == 32)
                report.violations.push_back(AuditViolation{0, "... further violations elided", dev});
        }
    }
    return report;
}

double binomial_tail_pvalue(int64_t n, int64_t k, double p) {
    if (k <= 0) return 1.0;
    if (k > n) return 0.0;
    // sum C(n,i) p^i (1-p)^(n-i) for i in [k, n], in log space
    double tail = 0.0;
    for (int64_t i = k; i <= n; ++i) {
        const double lg = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                          i * std::log(p) + (n - i) * std::log1p(-p);
        tail += std::exp(lg);
    }
    return std::min(1.0, tail);
}

}  // namespace copi
